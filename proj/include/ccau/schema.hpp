#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccau/npy.hpp"

namespace ccau::schema {

enum class Modality { ego_rgb, third_rgb, audio, scene_graph };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);
bool is_video(Modality m);

struct ModalityClip {
  Modality modality = Modality::ego_rgb;
  std::string path;          // array file relative to the dataset root
  int source_view_index = 0; // which third-person camera, when applicable
  // payload, when loaded. video: T x H x W x C. audio: 1-D waveform.
  npy::Array payload;
  double sample_rate = 0.0;  // audio only
  bool loaded = false;
};

struct AtomicActionInterval {
  int64_t class_id = 0;
  int64_t start_frame = 0;  // inclusive
  int64_t end_frame = 0;    // exclusive
};

struct SceneGraphObject {
  int64_t object_id = 0;
  int64_t category = 0;
  double x = 0, y = 0, w = 0, h = 0;
};

struct SceneGraphRelationship {
  int64_t subject_object_id = 0;
  int64_t object_object_id = 0;
  int64_t category = 0;
};

struct SceneGraphFrame {
  int64_t frame_index = 0;
  std::vector<SceneGraphObject> objects;
  std::vector<SceneGraphRelationship> relationships;
};

struct SyncedSequence {
  std::string sequence_id;
  int64_t activity_class = 0;
  std::vector<ModalityClip> clips;
  std::vector<AtomicActionInterval> atomic_intervals;
  std::vector<SceneGraphFrame> scene_graphs;

  const ModalityClip* find_clip(Modality m) const;
};

struct Vocab {
  int64_t n_activity = 0;
  int64_t n_atomic = 0;
  int64_t n_obj = 0;
  int64_t n_rel = 0;
  std::string fingerprint;  // generator identity for synthetic data, else empty
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> test1;
  std::vector<std::string> test2;
  Vocab vocab;
};

struct ValidationIssue {
  std::string sequence_id;
  int line = 0;  // 1-based jsonl line, 0 if not tied to one
  std::string message;
};

struct ParsedDataset {
  DatasetSplit split;
  std::vector<SyncedSequence> sequences;  // metadata only; payloads not loaded
  std::vector<ValidationIssue> issues;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Reads vocab.json, annotations.jsonl and splits.json from a dataset
// directory. Malformed JSON raises ParseError with the offending line;
// invariant violations are collected into `issues`, never dropped.
ParsedDataset parse_annotations(const std::string& dataset_dir);

// Loads the referenced array payload of one clip (relative to dataset root).
void load_clip_payload(const std::string& dataset_dir, ModalityClip& clip);

// Serializes sequences back to the annotation format (used by the synthetic
// generator and by round-trip tests).
void write_annotations(const std::string& dataset_dir, const DatasetSplit& split,
                       const std::vector<SyncedSequence>& sequences);

std::string sequence_to_jsonl(const SyncedSequence& seq);

// --- block partitioning -----------------------------------------------

struct BlockPartition {
  // n_blocks x frames_per_block x H x W x C, dense
  npy::Array blocks;
  // per block: the source-frame index of every sampled frame (may wrap for
  // loop-padded short clips)
  std::vector<std::vector<int64_t>> sample_indices;
  int64_t n_blocks = 0;
  int64_t frames_per_block = 0;
};

// Uniformly keeps one of every `subsample_stride` frames and groups them
// into `n_blocks` disjoint, ordered blocks of `frames_per_block`. Clips
// shorter than stride*n_blocks*frames_per_block are loop-padded.
BlockPartition partition_blocks(const npy::Array& video, int64_t subsample_stride = 3,
                                int64_t n_blocks = 8, int64_t frames_per_block = 5);

// Index arithmetic only (no pixel copies); used by partition_blocks and by
// label/crop bookkeeping.
std::vector<std::vector<int64_t>> block_sample_indices(int64_t total_frames,
                                                       int64_t subsample_stride, int64_t n_blocks,
                                                       int64_t frames_per_block);

struct MultiHot {
  std::vector<double> per_block;  // n_blocks x n_atomic, row-major
  std::vector<double> sequence;   // n_atomic (OR over blocks)
  int64_t n_blocks = 0;
  int64_t n_atomic = 0;
};

// Entry (b, a) is 1 iff some interval of class a covers at least one sampled
// frame of block b.
MultiHot atomic_multihot(const std::vector<AtomicActionInterval>& intervals, int64_t n_atomic,
                         const std::vector<std::vector<int64_t>>& block_indices);

// Convenience overload for contiguous blocks described as [start, end) source
// ranges sampled with `stride`.
MultiHot atomic_multihot(const std::vector<AtomicActionInterval>& intervals, int64_t n_atomic,
                         const std::vector<std::pair<int64_t, int64_t>>& block_ranges,
                         int64_t stride);

// --- audio --------------------------------------------------------------

struct LogMelParams {
  int64_t n_mels = 64;
  double window_sec = 0.025;
  double hop_sec = 0.010;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 => sample_rate / 2
  double floor_eps = 1e-10;
  int64_t target_frames = 0;  // >0 => fixed-length temporal crop/loop-pad
};

struct Spectrogram {
  int64_t frames = 0;
  int64_t mels = 0;
  std::vector<double> values;  // frames x mels, log power

  double at(int64_t t, int64_t m) const { return values[static_cast<size_t>(t * mels + m)]; }
};

Spectrogram log_mel_spectrogram(const std::vector<double>& waveform, double sample_rate,
                                const LogMelParams& params = {});

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// --- scene graphs --------------------------------------------------------

// Binary object x relationship incidence, OR-ed over frames, flattened
// row-major (object-major): index = category_obj * n_rel + category_rel.
std::vector<double> encode_scene_graph_matrix(const std::vector<SceneGraphFrame>& frames,
                                              int64_t n_obj, int64_t n_rel);

}  // namespace ccau::schema
