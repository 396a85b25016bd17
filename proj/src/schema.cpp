#include "ccau/schema.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ccau::schema {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::ego_rgb: return "ego_rgb";
    case Modality::third_rgb: return "third_rgb";
    case Modality::audio: return "audio";
    case Modality::scene_graph: return "scene_graph";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  if (name == "ego_rgb") return Modality::ego_rgb;
  if (name == "third_rgb") return Modality::third_rgb;
  if (name == "audio") return Modality::audio;
  if (name == "scene_graph") return Modality::scene_graph;
  throw std::invalid_argument("unknown modality: " + name);
}

bool is_video(Modality m) { return m == Modality::ego_rgb || m == Modality::third_rgb; }

const ModalityClip* SyncedSequence::find_clip(Modality m) const {
  for (const auto& c : clips)
    if (c.modality == m) return &c;
  return nullptr;
}

namespace {

SyncedSequence sequence_from_json(const json& j, int line) {
  SyncedSequence seq;
  try {
    seq.sequence_id = j.at("sequence_id").get<std::string>();
    seq.activity_class = j.at("activity_class").get<int64_t>();
    for (const auto& c : j.at("clips")) {
      ModalityClip clip;
      clip.modality = modality_from_name(c.at("modality").get<std::string>());
      clip.path = c.value("path", "");
      clip.source_view_index = c.value("view", 0);
      if (c.contains("sample_rate")) clip.sample_rate = c.at("sample_rate").get<double>();
      seq.clips.push_back(std::move(clip));
    }
    if (j.contains("atomic")) {
      for (const auto& a : j.at("atomic")) {
        AtomicActionInterval iv;
        iv.class_id = a.at("class").get<int64_t>();
        iv.start_frame = a.at("start").get<int64_t>();
        iv.end_frame = a.at("end").get<int64_t>();
        seq.atomic_intervals.push_back(iv);
      }
    }
    if (j.contains("scene_graphs")) {
      for (const auto& g : j.at("scene_graphs")) {
        SceneGraphFrame f;
        f.frame_index = g.at("frame").get<int64_t>();
        for (const auto& o : g.at("objects")) {
          SceneGraphObject obj;
          obj.object_id = o.at("id").get<int64_t>();
          obj.category = o.at("category").get<int64_t>();
          obj.x = o.value("x", 0.0);
          obj.y = o.value("y", 0.0);
          obj.w = o.value("w", 0.0);
          obj.h = o.value("h", 0.0);
          f.objects.push_back(obj);
        }
        for (const auto& r : g.at("relationships")) {
          SceneGraphRelationship rel;
          rel.subject_object_id = r.at("subject").get<int64_t>();
          rel.object_object_id = r.at("object").get<int64_t>();
          rel.category = r.at("category").get<int64_t>();
          f.relationships.push_back(rel);
        }
        seq.scene_graphs.push_back(std::move(f));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad annotation record: ") + e.what(), line);
  }
  return seq;
}

void validate_sequence(const SyncedSequence& seq, const Vocab& vocab, int line,
                       std::vector<ValidationIssue>& issues) {
  auto issue = [&](const std::string& msg) { issues.push_back({seq.sequence_id, line, msg}); };

  if (seq.clips.empty()) issue("no modality clips present");
  if (vocab.n_activity > 0 &&
      (seq.activity_class < 0 || seq.activity_class >= vocab.n_activity))
    issue("activity_class " + std::to_string(seq.activity_class) + " outside [0, " +
          std::to_string(vocab.n_activity) + ")");

  for (size_t i = 0; i < seq.atomic_intervals.size(); ++i) {
    const auto& iv = seq.atomic_intervals[i];
    if (iv.start_frame < 0 || iv.end_frame <= iv.start_frame)
      issue("atomic interval " + std::to_string(i) + " (class " + std::to_string(iv.class_id) +
            ") has end_frame " + std::to_string(iv.end_frame) + " <= start_frame " +
            std::to_string(iv.start_frame));
    if (vocab.n_atomic > 0 && (iv.class_id < 0 || iv.class_id >= vocab.n_atomic))
      issue("atomic interval " + std::to_string(i) + " class " + std::to_string(iv.class_id) +
            " outside [0, " + std::to_string(vocab.n_atomic) + ")");
  }

  for (const auto& g : seq.scene_graphs) {
    std::set<int64_t> ids;
    for (const auto& o : g.objects) {
      ids.insert(o.object_id);
      if (vocab.n_obj > 0 && (o.category < 0 || o.category >= vocab.n_obj))
        issue("scene graph frame " + std::to_string(g.frame_index) + ": object category " +
              std::to_string(o.category) + " out of range");
    }
    for (const auto& r : g.relationships) {
      if (!ids.count(r.subject_object_id) || !ids.count(r.object_object_id))
        issue("scene graph frame " + std::to_string(g.frame_index) +
              ": relationship references undeclared object id");
      if (vocab.n_rel > 0 && (r.category < 0 || r.category >= vocab.n_rel))
        issue("scene graph frame " + std::to_string(g.frame_index) + ": relationship category " +
              std::to_string(r.category) + " out of range");
    }
  }
}

}  // namespace

ParsedDataset parse_annotations(const std::string& dataset_dir) {
  ParsedDataset out;

  fs::path root(dataset_dir);
  {
    std::ifstream vf(root / "vocab.json");
    if (!vf) throw std::runtime_error("missing vocab.json under " + dataset_dir);
    json v = json::parse(vf);
    out.split.vocab.n_activity = v.value("n_activity", 0);
    out.split.vocab.n_atomic = v.value("n_atomic", 0);
    out.split.vocab.n_obj = v.value("n_obj", 0);
    out.split.vocab.n_rel = v.value("n_rel", 0);
    out.split.vocab.fingerprint = v.value("fingerprint", "");
  }

  std::ifstream af(root / "annotations.jsonl");
  if (!af) throw std::runtime_error("missing annotations.jsonl under " + dataset_dir);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen_ids;
  while (std::getline(af, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    SyncedSequence seq = sequence_from_json(j, lineno);
    if (!seen_ids.insert(seq.sequence_id).second)
      out.issues.push_back({seq.sequence_id, lineno, "duplicate sequence_id"});
    validate_sequence(seq, out.split.vocab, lineno, out.issues);
    out.sequences.push_back(std::move(seq));
  }

  {
    std::ifstream sf(root / "splits.json");
    if (!sf) throw std::runtime_error("missing splits.json under " + dataset_dir);
    json s = json::parse(sf);
    out.split.train = s.value("train", std::vector<std::string>{});
    out.split.test1 = s.value("test1", std::vector<std::string>{});
    out.split.test2 = s.value("test2", std::vector<std::string>{});
  }

  // split invariants: disjoint, referenced ids exist
  std::map<std::string, int> membership;
  auto check_split = [&](const std::vector<std::string>& ids, const char* name) {
    for (const auto& id : ids) {
      if (!seen_ids.count(id))
        out.issues.push_back({id, 0, std::string("split ") + name + " references unknown id"});
      if (++membership[id] > 1)
        out.issues.push_back({id, 0, "sequence assigned to more than one split"});
    }
  };
  check_split(out.split.train, "train");
  check_split(out.split.test1, "test1");
  check_split(out.split.test2, "test2");

  return out;
}

void load_clip_payload(const std::string& dataset_dir, ModalityClip& clip) {
  if (clip.loaded) return;
  if (clip.modality == Modality::scene_graph) {
    clip.loaded = true;  // payload lives in the annotation's scene_graphs
    return;
  }
  fs::path p = fs::path(dataset_dir) / clip.path;
  clip.payload = npy::load(p.string());
  if (is_video(clip.modality)) {
    if (clip.payload.shape.size() != 4 || clip.payload.shape[3] != 3 || clip.payload.shape[0] < 1)
      throw std::runtime_error("video payload must be T x H x W x 3: " + p.string());
  } else {
    if (clip.payload.shape.size() != 1)
      throw std::runtime_error("audio payload must be a 1-D waveform: " + p.string());
    if (clip.sample_rate <= 0)
      throw std::runtime_error("audio clip missing positive sample_rate: " + p.string());
  }
  clip.loaded = true;
}

std::string sequence_to_jsonl(const SyncedSequence& seq) {
  json j;
  j["sequence_id"] = seq.sequence_id;
  j["activity_class"] = seq.activity_class;
  json clips = json::array();
  for (const auto& c : seq.clips) {
    json cj;
    cj["modality"] = modality_name(c.modality);
    cj["path"] = c.path;
    cj["view"] = c.source_view_index;
    if (c.modality == Modality::audio) cj["sample_rate"] = c.sample_rate;
    clips.push_back(cj);
  }
  j["clips"] = clips;
  json atomic = json::array();
  for (const auto& iv : seq.atomic_intervals)
    atomic.push_back({{"class", iv.class_id}, {"start", iv.start_frame}, {"end", iv.end_frame}});
  j["atomic"] = atomic;
  if (!seq.scene_graphs.empty()) {
    json graphs = json::array();
    for (const auto& g : seq.scene_graphs) {
      json gj;
      gj["frame"] = g.frame_index;
      json objs = json::array();
      for (const auto& o : g.objects)
        objs.push_back({{"id", o.object_id},
                        {"category", o.category},
                        {"x", o.x},
                        {"y", o.y},
                        {"w", o.w},
                        {"h", o.h}});
      gj["objects"] = objs;
      json rels = json::array();
      for (const auto& r : g.relationships)
        rels.push_back(
            {{"subject", r.subject_object_id}, {"object", r.object_object_id}, {"category", r.category}});
      gj["relationships"] = rels;
      graphs.push_back(gj);
    }
    j["scene_graphs"] = graphs;
  }
  return j.dump();
}

void write_annotations(const std::string& dataset_dir, const DatasetSplit& split,
                       const std::vector<SyncedSequence>& sequences) {
  fs::path root(dataset_dir);
  fs::create_directories(root);
  {
    json v;
    v["n_activity"] = split.vocab.n_activity;
    v["n_atomic"] = split.vocab.n_atomic;
    v["n_obj"] = split.vocab.n_obj;
    v["n_rel"] = split.vocab.n_rel;
    if (!split.vocab.fingerprint.empty()) v["fingerprint"] = split.vocab.fingerprint;
    std::ofstream out(root / "vocab.json");
    out << v.dump(2) << "\n";
  }
  {
    std::ofstream out(root / "annotations.jsonl");
    for (const auto& seq : sequences) out << sequence_to_jsonl(seq) << "\n";
  }
  {
    json s;
    s["train"] = split.train;
    s["test1"] = split.test1;
    s["test2"] = split.test2;
    std::ofstream out(root / "splits.json");
    out << s.dump(2) << "\n";
  }
}

// --- block partitioning ----------------------------------------------------

std::vector<std::vector<int64_t>> block_sample_indices(int64_t total_frames,
                                                       int64_t subsample_stride, int64_t n_blocks,
                                                       int64_t frames_per_block) {
  if (total_frames < 1 || subsample_stride < 1 || n_blocks < 1 || frames_per_block < 1)
    throw std::invalid_argument("block_sample_indices: all arguments must be positive");
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(n_blocks));
  for (int64_t b = 0; b < n_blocks; ++b) {
    out[static_cast<size_t>(b)].reserve(static_cast<size_t>(frames_per_block));
    for (int64_t k = 0; k < frames_per_block; ++k) {
      int64_t sampled = b * frames_per_block + k;       // index on the subsampled timeline
      int64_t src = (sampled * subsample_stride) % total_frames;  // loop-pad short clips
      out[static_cast<size_t>(b)].push_back(src);
    }
  }
  return out;
}

BlockPartition partition_blocks(const npy::Array& video, int64_t subsample_stride,
                                int64_t n_blocks, int64_t frames_per_block) {
  if (video.shape.size() != 4)
    throw std::invalid_argument("partition_blocks expects a T x H x W x C video array");
  const int64_t T = video.shape[0], H = video.shape[1], W = video.shape[2], C = video.shape[3];

  BlockPartition part;
  part.n_blocks = n_blocks;
  part.frames_per_block = frames_per_block;
  part.sample_indices = block_sample_indices(T, subsample_stride, n_blocks, frames_per_block);

  part.blocks.shape = {n_blocks, frames_per_block, H, W, C};
  part.blocks.data.resize(static_cast<size_t>(part.blocks.numel()));
  const int64_t frame_sz = H * W * C;
  float* dst = part.blocks.data.data();
  for (int64_t b = 0; b < n_blocks; ++b) {
    for (int64_t k = 0; k < frames_per_block; ++k) {
      int64_t src = part.sample_indices[static_cast<size_t>(b)][static_cast<size_t>(k)];
      std::copy_n(video.data.data() + src * frame_sz, frame_sz, dst);
      dst += frame_sz;
    }
  }
  return part;
}

MultiHot atomic_multihot(const std::vector<AtomicActionInterval>& intervals, int64_t n_atomic,
                         const std::vector<std::vector<int64_t>>& block_indices) {
  if (block_indices.empty()) throw std::invalid_argument("atomic_multihot: no blocks");
  for (const auto& blk : block_indices)
    if (blk.empty()) throw std::invalid_argument("atomic_multihot: empty block");

  const int64_t N = static_cast<int64_t>(block_indices.size());
  MultiHot mh;
  mh.n_blocks = N;
  mh.n_atomic = n_atomic;
  mh.per_block.assign(static_cast<size_t>(N * n_atomic), 0.0);
  mh.sequence.assign(static_cast<size_t>(n_atomic), 0.0);

  for (const auto& iv : intervals) {
    if (iv.class_id < 0 || iv.class_id >= n_atomic)
      throw std::out_of_range("atomic_multihot: class_id " + std::to_string(iv.class_id) +
                              " outside [0, " + std::to_string(n_atomic) + ")");
    for (int64_t b = 0; b < N; ++b) {
      for (int64_t src : block_indices[static_cast<size_t>(b)]) {
        if (src >= iv.start_frame && src < iv.end_frame) {
          mh.per_block[static_cast<size_t>(b * n_atomic + iv.class_id)] = 1.0;
          mh.sequence[static_cast<size_t>(iv.class_id)] = 1.0;
          break;
        }
      }
    }
  }
  return mh;
}

MultiHot atomic_multihot(const std::vector<AtomicActionInterval>& intervals, int64_t n_atomic,
                         const std::vector<std::pair<int64_t, int64_t>>& block_ranges,
                         int64_t stride) {
  std::vector<std::vector<int64_t>> idx;
  idx.reserve(block_ranges.size());
  for (const auto& [start, end] : block_ranges) {
    if (end <= start) throw std::invalid_argument("atomic_multihot: empty block range");
    std::vector<int64_t> blk;
    for (int64_t f = start; f < end; f += stride) blk.push_back(f);
    idx.push_back(std::move(blk));
  }
  return atomic_multihot(intervals, n_atomic, idx);
}

// --- scene graphs ------------------------------------------------------------

std::vector<double> encode_scene_graph_matrix(const std::vector<SceneGraphFrame>& frames,
                                              int64_t n_obj, int64_t n_rel) {
  std::vector<double> m(static_cast<size_t>(n_obj * n_rel), 0.0);
  for (const auto& f : frames) {
    std::map<int64_t, int64_t> categories;
    for (const auto& o : f.objects) {
      if (o.category < 0 || o.category >= n_obj)
        throw std::out_of_range("scene graph object category out of range: " +
                                std::to_string(o.category));
      categories[o.object_id] = o.category;
    }
    for (const auto& r : f.relationships) {
      if (r.category < 0 || r.category >= n_rel)
        throw std::out_of_range("scene graph relationship category out of range: " +
                                std::to_string(r.category));
      auto it = categories.find(r.object_object_id);
      if (it == categories.end())
        throw std::out_of_range("relationship references undeclared object id " +
                                std::to_string(r.object_object_id));
      m[static_cast<size_t>(it->second * n_rel + r.category)] = 1.0;
    }
  }
  return m;
}

}  // namespace ccau::schema
