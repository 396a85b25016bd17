#include "ccau/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ccau::data {

DatasetCache::DatasetCache(std::string dataset_dir, encoders::ModelConfig model_cfg)
    : dir_(std::move(dataset_dir)), cfg_(std::move(model_cfg)), parsed_(schema::parse_annotations(dir_)) {
  for (const auto& s : parsed_.sequences) by_id_[s.sequence_id] = &s;
}

const std::vector<std::string>& DatasetCache::split_ids(const std::string& split) const {
  if (split == "train") return parsed_.split.train;
  if (split == "test1") return parsed_.split.test1;
  if (split == "test2") return parsed_.split.test2;
  throw std::invalid_argument("unknown split: " + split);
}

void DatasetCache::prepare_labels(PreparedSequence& p, const schema::SyncedSequence& seq) {
  p.activity = seq.activity_class;
  // label timeline spans the annotated frames (synthetic clips are fully
  // annotated, so this matches the raw clip length)
  int64_t total = cfg_.n_blocks * cfg_.frames_per_block * cfg_.subsample_stride;
  for (const auto& iv : seq.atomic_intervals) total = std::max(total, iv.end_frame);
  auto idx = schema::block_sample_indices(total, cfg_.subsample_stride, cfg_.n_blocks,
                                          cfg_.frames_per_block);
  auto mh = schema::atomic_multihot(seq.atomic_intervals, parsed_.split.vocab.n_atomic, idx);
  p.seq_multihot = std::move(mh.sequence);
  p.block_multihot = std::move(mh.per_block);
}

namespace {

// nearest-neighbor spatial resize of one H x W x C frame
void resize_frame(const float* src, int64_t h, int64_t w, int64_t c, double* dst, int64_t oh,
                  int64_t ow) {
  for (int64_t y = 0; y < oh; ++y) {
    const int64_t sy = std::min(h - 1, y * h / oh);
    for (int64_t x = 0; x < ow; ++x) {
      const int64_t sx = std::min(w - 1, x * w / ow);
      for (int64_t k = 0; k < c; ++k)
        dst[(y * ow + x) * c + k] = static_cast<double>(src[(sy * w + sx) * c + k]);
    }
  }
}

}  // namespace

void DatasetCache::prepare_modality(PreparedSequence& p, const schema::SyncedSequence& seq,
                                    Modality m) {
  const int64_t N = cfg_.n_blocks, K = cfg_.frames_per_block;

  if (schema::is_video(m)) {
    const auto* clip0 = seq.find_clip(m);
    if (!clip0) throw std::runtime_error(seq.sequence_id + ": missing modality " +
                                         schema::modality_name(m));
    schema::ModalityClip clip = *clip0;
    schema::load_clip_payload(dir_, clip);
    auto part = schema::partition_blocks(clip.payload, cfg_.subsample_stride, N, K);
    const int64_t H = clip.payload.shape[1], W = clip.payload.shape[2];
    const int64_t side = cfg_.video_size;
    std::vector<double> out(static_cast<size_t>(N * 3 * K * side * side));
    std::vector<double> frame(static_cast<size_t>(side * side * 3));
    // [N,K,H,W,C] -> per block [C,K,side,side], with x*2-1 value scaling
    for (int64_t b = 0; b < N; ++b) {
      for (int64_t k = 0; k < K; ++k) {
        const float* src = part.blocks.data.data() + ((b * K + k) * H * W * 3);
        resize_frame(src, H, W, 3, frame.data(), side, side);
        for (int64_t c = 0; c < 3; ++c)
          for (int64_t ij = 0; ij < side * side; ++ij)
            out[static_cast<size_t>(((b * 3 + c) * K + k) * side * side + ij)] =
                frame[static_cast<size_t>(ij * 3 + c)] * 2.0 - 1.0;
      }
    }
    p.blocks[m] = std::move(out);
    p.block_shape[m] = {3, K, side, side};
    return;
  }

  if (m == Modality::audio) {
    const auto* clip0 = seq.find_clip(m);
    if (!clip0) throw std::runtime_error(seq.sequence_id + ": missing modality audio");
    schema::ModalityClip clip = *clip0;
    schema::load_clip_payload(dir_, clip);
    std::vector<double> wave(clip.payload.data.begin(), clip.payload.data.end());
    schema::LogMelParams lm;
    lm.n_mels = cfg_.audio_mels;
    auto spec = schema::log_mel_spectrogram(wave, clip.sample_rate, lm);
    // standardize per clip
    double mean = 0.0;
    for (double v : spec.values) mean += v;
    mean /= static_cast<double>(spec.values.size());
    double var = 0.0;
    for (double v : spec.values) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(spec.values.size())) + 1e-6;

    // fixed intervals: uniform N-way split of the spectrogram timeline,
    // center-cropped (or loop-padded) to audio_frames_per_block frames
    const int64_t Ta = cfg_.audio_frames_per_block;
    const int64_t mels = spec.mels;
    std::vector<double> out(static_cast<size_t>(N * Ta * mels));
    for (int64_t b = 0; b < N; ++b) {
      const int64_t f0 = b * spec.frames / N;
      const int64_t f1 = std::max(f0 + 1, (b + 1) * spec.frames / N);
      const int64_t len = f1 - f0;
      for (int64_t t = 0; t < Ta; ++t) {
        int64_t src;
        if (len >= Ta)
          src = f0 + (len - Ta) / 2 + t;
        else
          src = f0 + t % len;
        for (int64_t mel = 0; mel < mels; ++mel)
          out[static_cast<size_t>((b * Ta + t) * mels + mel)] =
              (spec.at(src, mel) - mean) / sd;
      }
    }
    p.blocks[m] = std::move(out);
    p.block_shape[m] = {1, 1, Ta, mels};
    return;
  }

  // scene graph: per-block incidence vectors over a uniform frame split
  const int64_t V = parsed_.split.vocab.n_obj * parsed_.split.vocab.n_rel;
  int64_t total = cfg_.n_blocks * cfg_.frames_per_block * cfg_.subsample_stride;
  for (const auto& iv : seq.atomic_intervals) total = std::max(total, iv.end_frame);
  for (const auto& g : seq.scene_graphs) total = std::max(total, g.frame_index + 1);
  std::vector<double> out(static_cast<size_t>(N * V), 0.0);
  for (int64_t b = 0; b < N; ++b) {
    const int64_t f0 = b * total / N;
    const int64_t f1 = (b + 1) * total / N;
    std::vector<schema::SceneGraphFrame> in_range;
    for (const auto& g : seq.scene_graphs)
      if (g.frame_index >= f0 && g.frame_index < f1) in_range.push_back(g);
    auto v = schema::encode_scene_graph_matrix(in_range, parsed_.split.vocab.n_obj,
                                               parsed_.split.vocab.n_rel);
    std::copy(v.begin(), v.end(), out.begin() + b * V);
  }
  p.blocks[m] = std::move(out);
  p.block_shape[m] = {V};
}

const PreparedSequence& DatasetCache::get(const std::string& id,
                                          const std::vector<Modality>& modalities) {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw std::invalid_argument("unknown sequence id: " + id);
  PreparedSequence& p = prepared_[id];
  if (p.id.empty()) {
    p.id = id;
    prepare_labels(p, *it->second);
  }
  for (Modality m : modalities)
    if (!p.blocks.count(m)) prepare_modality(p, *it->second, m);
  return p;
}

ag::Var DatasetCache::batch_inputs(const std::vector<const PreparedSequence*>& seqs,
                                   Modality m) const {
  if (seqs.empty()) throw std::invalid_argument("batch_inputs: empty batch");
  const int64_t B = static_cast<int64_t>(seqs.size());
  const int64_t N = cfg_.n_blocks;
  const auto& shape0 = seqs[0]->block_shape.at(m);
  const int64_t block_sz = ag::numel(shape0);
  std::vector<double> data(static_cast<size_t>(N * B * block_sz));
  for (int64_t b = 0; b < B; ++b) {
    const auto& blocks = seqs[static_cast<size_t>(b)]->blocks.at(m);
    if (static_cast<int64_t>(blocks.size()) != N * block_sz)
      throw std::runtime_error("batch_inputs: inconsistent block tensor size");
    for (int64_t j = 0; j < N; ++j)
      std::copy_n(blocks.begin() + j * block_sz, block_sz,
                  data.begin() + (j * B + b) * block_sz);
  }
  ag::Shape shape = {N * B};
  shape.insert(shape.end(), shape0.begin(), shape0.end());
  return ag::constant(std::move(shape), std::move(data));
}

std::vector<int64_t> DatasetCache::batch_labels(
    const std::vector<const PreparedSequence*>& seqs) const {
  std::vector<int64_t> out;
  out.reserve(seqs.size());
  for (const auto* s : seqs) out.push_back(s->activity);
  return out;
}

ag::Var DatasetCache::batch_seq_multihot(const std::vector<const PreparedSequence*>& seqs) const {
  const int64_t B = static_cast<int64_t>(seqs.size());
  const int64_t M = parsed_.split.vocab.n_atomic;
  std::vector<double> data(static_cast<size_t>(B * M));
  for (int64_t b = 0; b < B; ++b)
    std::copy(seqs[static_cast<size_t>(b)]->seq_multihot.begin(),
              seqs[static_cast<size_t>(b)]->seq_multihot.end(), data.begin() + b * M);
  return ag::constant({B, M}, std::move(data));
}

}  // namespace ccau::data
