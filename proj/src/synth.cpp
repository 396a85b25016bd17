#include "ccau/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace ccau::synth {

SynthConfig SynthConfig::from_config(const Config& cfg) {
  SynthConfig s;
  s.n_activity = cfg.get_int("synth", "n_activity", s.n_activity);
  s.n_atomic = cfg.get_int("synth", "n_atomic", s.n_atomic);
  s.atomic_per_activity = cfg.get_int("synth", "atomic_per_activity", s.atomic_per_activity);
  auto mods = cfg.get_list("synth", "modalities", {});
  if (!mods.empty()) {
    s.modalities.clear();
    for (const auto& m : mods) s.modalities.push_back(schema::modality_from_name(m));
  }
  s.cross_modal_correlation =
      cfg.get_double("synth", "cross_modal_correlation", s.cross_modal_correlation);
  s.label_noise = cfg.get_double("synth", "label_noise", s.label_noise);
  s.n_train = cfg.get_int("synth", "n_train", s.n_train);
  s.n_test1 = cfg.get_int("synth", "n_test1", s.n_test1);
  s.n_test2 = cfg.get_int("synth", "n_test2", s.n_test2);
  s.seed = static_cast<uint64_t>(cfg.get_int("synth", "seed", static_cast<int64_t>(s.seed)));
  s.clip_frames = cfg.get_int("synth", "clip_frames", s.clip_frames);
  s.video_size = cfg.get_int("synth", "video_size", s.video_size);
  s.fps = cfg.get_double("synth", "fps", s.fps);
  s.audio_sample_rate = cfg.get_double("synth", "audio_sample_rate", s.audio_sample_rate);
  s.render_noise = cfg.get_double("synth", "render_noise", s.render_noise);
  s.n_obj = cfg.get_int("synth", "n_obj", s.n_obj);
  s.n_rel = cfg.get_int("synth", "n_rel", s.n_rel);
  s.validate();
  return s;
}

void SynthConfig::validate() const {
  if (n_activity < 1 || n_atomic < 1) throw std::invalid_argument("synth: class counts must be positive");
  if (atomic_per_activity < 1 || atomic_per_activity > n_atomic)
    throw std::invalid_argument("synth: atomic_per_activity must be in [1, n_atomic]");
  if (cross_modal_correlation < 0 || cross_modal_correlation > 1)
    throw std::invalid_argument("synth: cross_modal_correlation must be in [0, 1]");
  if (label_noise < 0 || label_noise > 1)
    throw std::invalid_argument("synth: label_noise must be in [0, 1]");
  if (modalities.empty()) throw std::invalid_argument("synth: at least one modality");
  if (clip_frames < 4 * atomic_per_activity)
    throw std::invalid_argument("synth: clip_frames too small for the segment count");
  for (Modality m : modalities)
    if (m == Modality::scene_graph && n_obj * n_rel < n_atomic)
      throw std::invalid_argument("synth: n_obj * n_rel must cover n_atomic");
}

std::string SynthConfig::fingerprint() const {
  std::ostringstream os;
  os << n_activity << "|" << n_atomic << "|" << atomic_per_activity << "|";
  for (Modality m : modalities) os << schema::modality_name(m) << ",";
  os << "|" << cross_modal_correlation << "|" << label_noise << "|" << n_train << "|" << n_test1
     << "|" << n_test2 << "|" << seed << "|" << clip_frames << "|" << video_size << "|" << fps
     << "|" << audio_sample_rate << "|" << render_noise << "|" << n_obj << "|" << n_rel;
  const std::string s = os.str();
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream hex;
  hex << "synth-" << std::hex << h;
  return hex.str();
}

Generator::Generator(SynthConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  // activity signatures: atomic classes sampled without replacement; the
  // signature *sets* are kept distinct so activities stay separable by
  // composition
  Rng rng(cfg_.seed);
  std::set<std::vector<int64_t>> seen;
  for (int64_t a = 0; a < cfg_.n_activity; ++a) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000)
        throw std::invalid_argument("synth: cannot draw distinct activity signatures");
      std::vector<int64_t> pool(static_cast<size_t>(cfg_.n_atomic));
      for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int64_t>(i);
      rng.shuffle(pool);
      std::vector<int64_t> sig(pool.begin(), pool.begin() + cfg_.atomic_per_activity);
      std::vector<int64_t> key = sig;
      std::sort(key.begin(), key.end());
      if (seen.insert(key).second) {
        signatures_.push_back(std::move(sig));
        break;
      }
    }
  }
}

namespace {

struct HueRgb {
  float r, g, b;
};

HueRgb class_color(int64_t cls, int64_t n_classes) {
  double hue = std::fmod(0.15 + 0.618033988749895 * static_cast<double>(cls), 1.0);
  (void)n_classes;
  const double s = 0.85, v = 0.95;
  const double h6 = hue * 6.0;
  const int i = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  double r = v, g = t, b = p;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

}  // namespace

std::vector<float> Generator::render_video_segment(int64_t cls, int64_t start_frame,
                                                   int64_t n_frames) const {
  const int64_t hw = cfg_.video_size;
  const int64_t patch = std::max<int64_t>(2, hw / 4);
  std::vector<float> out(static_cast<size_t>(n_frames * hw * hw * 3), 0.1f);
  const HueRgb col = class_color(cls, cfg_.n_atomic);
  const double phase = 2.0 * M_PI * static_cast<double>(cls) / static_cast<double>(cfg_.n_atomic);
  const double speed = 0.8 + 0.25 * static_cast<double>(cls % 3);
  const double span = static_cast<double>(hw - patch);
  for (int64_t f = 0; f < n_frames; ++f) {
    const double t = static_cast<double>(f) / cfg_.fps;  // relative to segment start
    const double cx = 0.5 * span * (1.0 + std::sin(phase + 2.0 * M_PI * speed * t));
    const double cy = 0.5 * span * (1.0 + std::cos(1.7 * phase + 2.0 * M_PI * speed * t));
    const int64_t x0 = static_cast<int64_t>(cx);
    const int64_t y0 = static_cast<int64_t>(cy);
    float* frame = out.data() + f * hw * hw * 3;
    for (int64_t y = y0; y < std::min(hw, y0 + patch); ++y) {
      for (int64_t x = x0; x < std::min(hw, x0 + patch); ++x) {
        float* px = frame + (y * hw + x) * 3;
        px[0] = col.r;
        px[1] = col.g;
        px[2] = col.b;
      }
    }
  }
  (void)start_frame;
  return out;
}

std::vector<float> Generator::render_audio_segment(int64_t cls, int64_t start_sample,
                                                   int64_t n_samples) const {
  const double sr = cfg_.audio_sample_rate;
  const double mel_lo = schema::hz_to_mel(200.0);
  const double mel_hi = schema::hz_to_mel(0.4 * sr);
  const double f = schema::mel_to_hz(
      mel_lo + (mel_hi - mel_lo) * (static_cast<double>(cls) + 0.5) /
                   static_cast<double>(cfg_.n_atomic));
  std::vector<float> out(static_cast<size_t>(n_samples));
  for (int64_t i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(start_sample + i) / sr;
    out[static_cast<size_t>(i)] = static_cast<float>(0.5 * std::sin(2.0 * M_PI * f * t));
  }
  return out;
}

std::pair<int64_t, int64_t> Generator::scene_graph_pair(int64_t cls) const {
  return {cls / cfg_.n_rel, cls % cfg_.n_rel};
}

std::vector<LatentScript> Generator::build_scripts() const {
  Rng rng(cfg_.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<LatentScript> scripts;
  const int64_t total = cfg_.n_train + cfg_.n_test1 + cfg_.n_test2;
  const int64_t S = cfg_.atomic_per_activity;
  for (int64_t i = 0; i < total; ++i) {
    LatentScript sc;
    const char* split = i < cfg_.n_train ? "train" : (i < cfg_.n_train + cfg_.n_test1 ? "test1" : "test2");
    const int64_t local = i < cfg_.n_train
                              ? i
                              : (i < cfg_.n_train + cfg_.n_test1 ? i - cfg_.n_train
                                                                 : i - cfg_.n_train - cfg_.n_test1);
    {
      std::ostringstream id;
      id << "synth-" << split << "-" << local;
      sc.sequence_id = id.str();
    }
    sc.activity_class = rng.randint(cfg_.n_activity);
    sc.recorded_label = rng.uniform() < cfg_.label_noise ? rng.randint(cfg_.n_activity)
                                                         : sc.activity_class;
    // segment durations: near-equal split with seeded jitter, min 4 frames
    const auto& sig = signatures_[static_cast<size_t>(sc.activity_class)];
    std::vector<int64_t> dur(static_cast<size_t>(S), cfg_.clip_frames / S);
    for (int64_t r = 0; r < cfg_.clip_frames % S; ++r) ++dur[static_cast<size_t>(r)];
    const int64_t jitter = std::max<int64_t>(1, cfg_.clip_frames / (S * 6));
    for (int64_t s = 0; s + 1 < S; ++s) {
      const int64_t delta = rng.randint(2 * jitter + 1) - jitter;
      if (dur[static_cast<size_t>(s)] - delta >= 4 && dur[static_cast<size_t>(s + 1)] + delta >= 4) {
        dur[static_cast<size_t>(s)] -= delta;
        dur[static_cast<size_t>(s + 1)] += delta;
      }
    }
    for (int64_t s = 0; s < S; ++s)
      sc.segments.push_back({sig[static_cast<size_t>(s)], dur[static_cast<size_t>(s)]});
    // per-modality corruption: keep with prob rho, else uniform over classes
    for (Modality m : cfg_.modalities) {
      std::vector<int64_t> rendered;
      rendered.reserve(static_cast<size_t>(S));
      for (int64_t s = 0; s < S; ++s) {
        const int64_t truth = sig[static_cast<size_t>(s)];
        rendered.push_back(rng.uniform() < cfg_.cross_modal_correlation
                               ? truth
                               : rng.randint(cfg_.n_atomic));
      }
      sc.rendered[m] = std::move(rendered);
    }
    scripts.push_back(std::move(sc));
  }
  return scripts;
}

void Generator::generate_dataset(const std::string& out_dir) const {
  const auto scripts = build_scripts();
  fs::create_directories(fs::path(out_dir) / "arrays");

  schema::DatasetSplit split;
  split.vocab.n_activity = cfg_.n_activity;
  split.vocab.n_atomic = cfg_.n_atomic;
  split.vocab.n_obj = cfg_.n_obj;
  split.vocab.n_rel = cfg_.n_rel;
  split.vocab.fingerprint = cfg_.fingerprint();

  std::vector<schema::SyncedSequence> sequences;
  Rng noise_rng(cfg_.seed ^ 0x2545f4914f6cdd1dull);

  for (const auto& sc : scripts) {
    schema::SyncedSequence seq;
    seq.sequence_id = sc.sequence_id;
    seq.activity_class = sc.recorded_label;

    // atomic intervals: the true script segments
    int64_t f0 = 0;
    for (const auto& [cls, dur] : sc.segments) {
      seq.atomic_intervals.push_back({cls, f0, f0 + dur});
      f0 += dur;
    }

    for (Modality m : cfg_.modalities) {
      schema::ModalityClip clip;
      clip.modality = m;
      const auto& rendered = sc.rendered.at(m);
      if (schema::is_video(m)) {
        clip.path = "arrays/" + seq.sequence_id + "." + schema::modality_name(m) + ".npy";
        npy::Array video;
        video.shape = {cfg_.clip_frames, cfg_.video_size, cfg_.video_size, 3};
        video.data.resize(static_cast<size_t>(video.numel()));
        int64_t frame = 0;
        for (size_t s = 0; s < sc.segments.size(); ++s) {
          const int64_t dur = sc.segments[s].second;
          auto seg = render_video_segment(rendered[s], frame, dur);
          std::copy(seg.begin(), seg.end(),
                    video.data.begin() + frame * cfg_.video_size * cfg_.video_size * 3);
          frame += dur;
        }
        for (auto& v : video.data)
          v += static_cast<float>(cfg_.render_noise * noise_rng.normal());
        npy::save((fs::path(out_dir) / clip.path).string(), video);
      } else if (m == Modality::audio) {
        clip.path = "arrays/" + seq.sequence_id + ".audio.npy";
        clip.sample_rate = cfg_.audio_sample_rate;
        const int64_t total_samples = static_cast<int64_t>(
            std::llround(static_cast<double>(cfg_.clip_frames) / cfg_.fps * cfg_.audio_sample_rate));
        npy::Array wave;
        wave.shape = {total_samples};
        wave.data.assign(static_cast<size_t>(total_samples), 0.0f);
        int64_t frame = 0;
        for (size_t s = 0; s < sc.segments.size(); ++s) {
          const int64_t dur = sc.segments[s].second;
          const int64_t s0 = static_cast<int64_t>(
              std::llround(static_cast<double>(frame) / cfg_.fps * cfg_.audio_sample_rate));
          const int64_t s1 = s + 1 == sc.segments.size()
                                 ? total_samples
                                 : static_cast<int64_t>(std::llround(
                                       static_cast<double>(frame + dur) / cfg_.fps *
                                       cfg_.audio_sample_rate));
          auto seg = render_audio_segment(rendered[s], s0, s1 - s0);
          std::copy(seg.begin(), seg.end(), wave.data.begin() + s0);
          frame += dur;
        }
        for (auto& v : wave.data)
          v += static_cast<float>(0.2 * cfg_.render_noise * noise_rng.normal());
        npy::save((fs::path(out_dir) / clip.path).string(), wave);
      } else {
        // scene graph: 3 frames per segment under 3 s, else 5
        int64_t frame = 0;
        for (size_t s = 0; s < sc.segments.size(); ++s) {
          const int64_t dur = sc.segments[s].second;
          const int64_t n_sg = static_cast<double>(dur) / cfg_.fps < 3.0 ? 3 : 5;
          const auto [obj_cat, rel_cat] = scene_graph_pair(rendered[s]);
          for (int64_t g = 0; g < n_sg; ++g) {
            schema::SceneGraphFrame sgf;
            sgf.frame_index = frame + (dur * (2 * g + 1)) / (2 * n_sg);
            schema::SceneGraphObject subject;
            subject.object_id = 0;
            subject.category = (obj_cat + 1) % cfg_.n_obj;
            subject.x = 1;
            subject.y = 1;
            subject.w = 2;
            subject.h = 2;
            schema::SceneGraphObject object;
            object.object_id = 1;
            object.category = obj_cat;
            object.x = static_cast<double>(2 + (rendered[s] % 3));
            object.y = static_cast<double>(2 + (rendered[s] / 3) % 3);
            object.w = 2;
            object.h = 2;
            sgf.objects = {subject, object};
            sgf.relationships = {{0, 1, rel_cat}};
            seq.scene_graphs.push_back(std::move(sgf));
          }
          frame += dur;
        }
        clip.path = "";
      }
      seq.clips.push_back(std::move(clip));
    }

    const std::string id = seq.sequence_id;
    if (id.find("-train-") != std::string::npos)
      split.train.push_back(id);
    else if (id.find("-test1-") != std::string::npos)
      split.test1.push_back(id);
    else
      split.test2.push_back(id);
    sequences.push_back(std::move(seq));
  }

  schema::write_annotations(out_dir, split, sequences);
}

// --- Bayes oracle ----------------------------------------------------------

namespace {

double sq_dist(const float* a, const float* b, int64_t n) {
  double d = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    d += diff * diff;
  }
  return d;
}

}  // namespace

std::vector<double> bayes_posterior(const SynthConfig& cfg, const schema::SyncedSequence& seq) {
  Generator gen(cfg);
  const int64_t A = cfg.n_activity, M = cfg.n_atomic, S = cfg.atomic_per_activity;

  if (static_cast<int64_t>(seq.atomic_intervals.size()) != S)
    throw std::invalid_argument("bayes_posterior: sequence was not generated by this config "
                                "(segment count mismatch)");
  int64_t f_end = 0;
  for (const auto& iv : seq.atomic_intervals) {
    if (iv.start_frame != f_end)
      throw std::invalid_argument("bayes_posterior: non-contiguous segments; foreign sequence");
    f_end = iv.end_frame;
  }
  if (f_end != cfg.clip_frames)
    throw std::invalid_argument("bayes_posterior: clip length mismatch; foreign sequence");

  // decode each modality's rendered class per segment by nearest prototype
  std::vector<std::vector<int64_t>> decoded;  // [modality][segment]
  for (Modality m : cfg.modalities) {
    const auto* clip = seq.find_clip(m);
    if (!clip) continue;
    std::vector<int64_t> dec(static_cast<size_t>(S), -1);
    if (schema::is_video(m)) {
      if (!clip->loaded || clip->payload.shape.size() != 4 ||
          clip->payload.shape[0] != cfg.clip_frames || clip->payload.shape[1] != cfg.video_size)
        throw std::invalid_argument("bayes_posterior: video payload mismatch; foreign sequence");
      const int64_t frame_sz = cfg.video_size * cfg.video_size * 3;
      for (int64_t s = 0; s < S; ++s) {
        const auto& iv = seq.atomic_intervals[static_cast<size_t>(s)];
        const int64_t dur = iv.end_frame - iv.start_frame;
        double best = 0;
        for (int64_t r = 0; r < M; ++r) {
          auto proto = gen.render_video_segment(r, iv.start_frame, dur);
          const double d =
              sq_dist(clip->payload.data.data() + iv.start_frame * frame_sz, proto.data(),
                      dur * frame_sz);
          if (r == 0 || d < best) {
            best = d;
            dec[static_cast<size_t>(s)] = r;
          }
        }
      }
    } else if (m == Modality::audio) {
      if (!clip->loaded || clip->payload.shape.size() != 1)
        throw std::invalid_argument("bayes_posterior: audio payload mismatch; foreign sequence");
      const double spf = cfg.audio_sample_rate / cfg.fps;
      for (int64_t s = 0; s < S; ++s) {
        const auto& iv = seq.atomic_intervals[static_cast<size_t>(s)];
        const int64_t s0 = static_cast<int64_t>(std::llround(iv.start_frame * spf));
        const int64_t s1 = std::min<int64_t>(clip->payload.numel(),
                                             static_cast<int64_t>(std::llround(iv.end_frame * spf)));
        double best = 0;
        for (int64_t r = 0; r < M; ++r) {
          auto proto = gen.render_audio_segment(r, s0, s1 - s0);
          const double d = sq_dist(clip->payload.data.data() + s0, proto.data(), s1 - s0);
          if (r == 0 || d < best) {
            best = d;
            dec[static_cast<size_t>(s)] = r;
          }
        }
      }
    } else {
      // scene graph: invert the class -> (object, relationship) mapping
      for (int64_t s = 0; s < S; ++s) {
        const auto& iv = seq.atomic_intervals[static_cast<size_t>(s)];
        for (const auto& g : seq.scene_graphs) {
          if (g.frame_index < iv.start_frame || g.frame_index >= iv.end_frame) continue;
          if (g.relationships.empty()) continue;
          const auto& rel = g.relationships[0];
          int64_t obj_cat = -1;
          for (const auto& o : g.objects)
            if (o.object_id == rel.object_object_id) obj_cat = o.category;
          const int64_t r = obj_cat * cfg.n_rel + rel.category;
          if (r >= 0 && r < M) dec[static_cast<size_t>(s)] = r;
          break;
        }
        if (dec[static_cast<size_t>(s)] < 0)
          throw std::invalid_argument("bayes_posterior: missing scene-graph frames for a segment");
      }
    }
    decoded.push_back(std::move(dec));
  }
  if (decoded.empty())
    throw std::invalid_argument("bayes_posterior: sequence carries none of the config modalities");

  // P(a | decoded) with P(r | k) = rho * 1[r == k] + (1 - rho) / M
  const double rho = cfg.cross_modal_correlation;
  std::vector<double> logp(static_cast<size_t>(A), 0.0);
  for (int64_t a = 0; a < A; ++a) {
    const auto& sig = gen.signatures()[static_cast<size_t>(a)];
    for (const auto& dec : decoded) {
      for (int64_t s = 0; s < S; ++s) {
        const double p = (dec[static_cast<size_t>(s)] == sig[static_cast<size_t>(s)] ? rho : 0.0) +
                         (1.0 - rho) / static_cast<double>(M);
        logp[static_cast<size_t>(a)] += std::log(std::max(p, 1e-300));
      }
    }
  }
  double mx = logp[0];
  for (double v : logp) mx = std::max(mx, v);
  std::vector<double> post(static_cast<size_t>(A));
  double z = 0.0;
  for (int64_t a = 0; a < A; ++a) {
    post[static_cast<size_t>(a)] = std::exp(logp[static_cast<size_t>(a)] - mx);
    z += post[static_cast<size_t>(a)];
  }
  for (auto& v : post) v /= z;

  // marginalize through the label-noise channel:
  // P(label | x) = sum_a P(label | a) P(a | x)
  const double nu = cfg.label_noise;
  std::vector<double> label_post(static_cast<size_t>(A), 0.0);
  for (int64_t l = 0; l < A; ++l)
    for (int64_t a = 0; a < A; ++a)
      label_post[static_cast<size_t>(l)] +=
          ((l == a ? 1.0 - nu : 0.0) + nu / static_cast<double>(A)) * post[static_cast<size_t>(a)];
  return label_post;
}

double bayes_oracle_accuracy(const SynthConfig& cfg, const std::string& dataset_dir,
                             const std::vector<std::string>& sequence_ids) {
  auto parsed = schema::parse_annotations(dataset_dir);
  std::map<std::string, const schema::SyncedSequence*> by_id;
  for (const auto& s : parsed.sequences) by_id[s.sequence_id] = &s;
  int64_t hits = 0;
  for (const auto& id : sequence_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument("unknown sequence id " + id);
    schema::SyncedSequence seq = *it->second;
    for (auto& c : seq.clips) schema::load_clip_payload(dataset_dir, c);
    auto post = bayes_posterior(cfg, seq);
    int64_t argmax = 0;
    for (int64_t a = 1; a < cfg.n_activity; ++a)
      if (post[static_cast<size_t>(a)] > post[static_cast<size_t>(argmax)]) argmax = a;
    if (argmax == seq.activity_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sequence_ids.size());
}

}  // namespace ccau::synth
