#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ccau/config.hpp"
#include "ccau/nn.hpp"
#include "ccau/schema.hpp"

namespace ccau::encoders {

using ag::Var;
using schema::Modality;

struct ModelConfig {
  std::string preset = "desk";  // desk | paper
  int64_t embed_dim = 32;       // D
  int64_t n_blocks = 8;         // N
  int64_t frames_per_block = 5; // K
  int64_t subsample_stride = 3;
  int64_t video_size = 16;      // square input resolution fed to f
  int64_t video_channels = 8;   // first-stage width (desk preset)
  int64_t audio_mels = 64;
  int64_t audio_frames_per_block = 16;
  int64_t sg_hidden = 64;
  double gru_dropout = 0.1;
  double head_dropout = 0.5;
  int64_t n_activity = 0;
  int64_t n_atomic = 0;
  int64_t sg_input_dim = 0;  // n_obj * n_rel, scene-graph modality only
  int64_t observed_blocks = 5;   // predictive pre-training: observed prefix
  int64_t predicted_blocks = 3;  // predictive pre-training: rollout length

  static ModelConfig from_config(const Config& cfg, int64_t n_activity, int64_t n_atomic,
                                 int64_t sg_input_dim);
};

// one residual 3-D conv stage: out = relu(convB(relu(convA(x))) + skip(x))
struct ResStage {
  nn::Conv3d conv_a, conv_b;
  std::optional<nn::Conv3d> skip;  // 1x1x1 projection when shape changes
  Var forward(Var x) const;
};

// Per-modality feature pipeline: block encoder f, pointwise ConvGRU
// aggregator g, max-pool Pool, predictive head phi, classifier heads.
class EncoderStack {
 public:
  EncoderStack(Modality modality, const ModelConfig& cfg, nn::ParamStore& ps, Rng& rng);

  Modality modality() const { return modality_; }
  int64_t grid_h() const { return grid_h_; }
  int64_t grid_w() const { return grid_w_; }
  int64_t cells() const { return grid_h_ * grid_w_; }
  int64_t embed_dim() const { return dim_; }

  // f: raw block batch -> per-cell latents.
  // video: x [NB, 3, K, H, W]; audio: x [NB, 1, Ta, mels]; scene graph:
  // x [NB, n_obj*n_rel]. Returns [NB * cells, D] with rows grouped per
  // block sample.
  Var encode_blocks(Var x) const;

  // g over a block sequence stored block-major ([n_blocks * B * cells, D]).
  // Returns per-block hidden grids h_j as [B*cells, D], causal in j.
  std::vector<Var> aggregate(Var z_cells, int64_t n_blocks, int64_t batch, Rng& rng,
                             bool train) const;

  // Pool(.): stacked max over the spatial grid
  Var pool(Var cells_matrix, int64_t batch) const;

  // phi rollout: re-ingests each prediction through g before the next step.
  // Returns `steps` predicted latent grids, each [B*cells, D].
  std::vector<Var> rollout_predictions(Var h_last, int64_t batch, int64_t steps, Rng& rng,
                                       bool train) const;

  Var activity_logits(Var seq_repr, Rng& rng, bool train) const;
  Var atomic_logits(Var seq_repr, Rng& rng, bool train) const;

  const nn::ConvGru& gru() const { return gru_; }
  const nn::Mlp2& phi() const { return phi_; }

 private:
  Var encode_video_audio(Var x) const;

  Modality modality_;
  int64_t dim_ = 0;
  int64_t grid_h_ = 0, grid_w_ = 0;
  double gru_dropout_ = 0.1;
  double head_dropout_ = 0.5;

  nn::Conv3d stem_;
  nn::Conv3d mid_;
  std::vector<ResStage> stages_;
  bool has_conv_path_ = false;

  nn::Mlp2 sg_mlp_;  // scene-graph path
  bool has_sg_path_ = false;

  nn::ConvGru gru_;
  nn::Mlp2 phi_;
  nn::Linear head_activity_, head_atomic_;
};

struct AttentionHead {
  Var w;  // [D]
  Var b;  // [1]
  // per-cell logits for a grid stored as [G*S, D]
  Var logits(Var cells) const;
};

// Full multi-modal model: one stack per modality, pair-specific attention
// heads for the alignment branch, and the learned multi-task uncertainty
// parameters.
struct MultiModalModel {
  ModelConfig cfg;
  nn::ParamStore params;
  std::map<Modality, std::shared_ptr<EncoderStack>> stacks;
  // attn_heads[m][m']: head applied to modality m's grid when aligned with m'
  std::map<Modality, std::map<Modality, AttentionHead>> attn_heads;
  Var log_sigma_v2, log_sigma_a2;

  static MultiModalModel build(const ModelConfig& cfg, const std::vector<Modality>& modalities,
                               bool with_attention, uint64_t seed);

  std::vector<Var> modality_params(Modality m) const;  // by name prefix
  EncoderStack& stack(Modality m);
  const EncoderStack& stack(Modality m) const;
};

}  // namespace ccau::encoders
