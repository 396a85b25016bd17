#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccau/config.hpp"
#include "ccau/rng.hpp"
#include "ccau/schema.hpp"

namespace ccau::synth {

using schema::Modality;

// Controllable multi-modal benchmark. Every activity class owns a fixed
// signature of atomic-action classes; a sequence renders that signature
// through each modality (video: moving colored patches; audio: mel-spaced
// tones; scene graph: one object/relationship pair per atomic class).
// cross_modal_correlation rho < 1 independently corrupts each modality's
// rendered class per segment, so modalities carry complementary evidence.
// label_noise resamples the recorded activity label uniformly.
struct SynthConfig {
  int64_t n_activity = 6;
  int64_t n_atomic = 12;
  int64_t atomic_per_activity = 3;
  std::vector<Modality> modalities{Modality::ego_rgb, Modality::audio};
  double cross_modal_correlation = 1.0;  // rho
  double label_noise = 0.0;
  int64_t n_train = 32;
  int64_t n_test1 = 8;
  int64_t n_test2 = 8;
  uint64_t seed = 0;

  // rendering scale (desk defaults; encoders are shape-agnostic)
  int64_t clip_frames = 120;
  int64_t video_size = 16;
  double fps = 30.0;
  double audio_sample_rate = 4000.0;
  double render_noise = 0.05;
  int64_t n_obj = 6;
  int64_t n_rel = 5;

  static SynthConfig from_config(const Config& cfg);
  void validate() const;
  std::string fingerprint() const;
};

struct LatentScript {
  std::string sequence_id;
  int64_t activity_class = 0;   // true generating class
  int64_t recorded_label = 0;   // after label noise
  std::vector<std::pair<int64_t, int64_t>> segments;  // (atomic class, duration in frames)
  std::map<Modality, std::vector<int64_t>> rendered;  // per-modality rendered class per segment
};

class Generator {
 public:
  explicit Generator(SynthConfig cfg);

  const SynthConfig& config() const { return cfg_; }
  const std::vector<std::vector<int64_t>>& signatures() const { return signatures_; }

  // deterministic function of (config, seed); ids are synth-<split>-<index>
  std::vector<LatentScript> build_scripts() const;

  // writes vocab.json / annotations.jsonl / splits.json / arrays/*.npy
  void generate_dataset(const std::string& out_dir) const;

  // prototype renderers (noise-free), used by the Bayes decoder
  std::vector<float> render_video_segment(int64_t rendered_class, int64_t start_frame,
                                          int64_t n_frames) const;
  std::vector<float> render_audio_segment(int64_t rendered_class, int64_t start_sample,
                                          int64_t n_samples) const;
  std::pair<int64_t, int64_t> scene_graph_pair(int64_t rendered_class) const;

 private:
  SynthConfig cfg_;
  std::vector<std::vector<int64_t>> signatures_;
};

// Exact activity posterior for a generated sequence (uniform class prior),
// marginalized through the label-noise channel so it is a posterior over the
// recorded label. Requires loaded payloads; raises if the sequence does not
// structurally match the generator config.
std::vector<double> bayes_posterior(const SynthConfig& cfg, const schema::SyncedSequence& seq);

// Mean argmax-posterior accuracy against recorded labels over a split.
double bayes_oracle_accuracy(const SynthConfig& cfg, const std::string& dataset_dir,
                             const std::vector<std::string>& sequence_ids);

}  // namespace ccau::synth
