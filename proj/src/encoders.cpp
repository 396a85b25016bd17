#include "ccau/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace ccau::encoders {

using namespace ag;

ModelConfig ModelConfig::from_config(const Config& cfg, int64_t n_activity, int64_t n_atomic,
                                     int64_t sg_input_dim) {
  ModelConfig mc;
  mc.preset = cfg.get_str("model", "preset", mc.preset);
  if (mc.preset == "paper") {
    mc.embed_dim = 256;
    mc.video_size = 128;
    mc.video_channels = 64;
  }
  mc.embed_dim = cfg.get_int("model", "embed_dim", mc.embed_dim);
  mc.n_blocks = cfg.get_int("model", "n_blocks", mc.n_blocks);
  mc.frames_per_block = cfg.get_int("model", "frames_per_block", mc.frames_per_block);
  mc.subsample_stride = cfg.get_int("model", "subsample_stride", mc.subsample_stride);
  mc.video_size = cfg.get_int("model", "video_size", mc.video_size);
  mc.video_channels = cfg.get_int("model", "video_channels", mc.video_channels);
  mc.audio_mels = cfg.get_int("model", "audio_mels", mc.audio_mels);
  mc.audio_frames_per_block = cfg.get_int("model", "audio_frames_per_block", mc.audio_frames_per_block);
  mc.sg_hidden = cfg.get_int("model", "sg_hidden", mc.sg_hidden);
  mc.gru_dropout = cfg.get_double("model", "gru_dropout", mc.gru_dropout);
  mc.head_dropout = cfg.get_double("model", "head_dropout", mc.head_dropout);
  mc.observed_blocks = cfg.get_int("model", "observed_blocks", mc.observed_blocks);
  mc.predicted_blocks = cfg.get_int("model", "predicted_blocks", mc.predicted_blocks);
  mc.n_activity = n_activity;
  mc.n_atomic = n_atomic;
  mc.sg_input_dim = sg_input_dim;
  return mc;
}

Var ResStage::forward(Var x) const {
  Var y = conv_b.forward(relu(conv_a.forward(x)));
  Var s = skip ? skip->forward(x) : x;
  return relu(add(y, s));
}

namespace {

int64_t conv_out(int64_t in, int64_t k, int64_t s, int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

}  // namespace

EncoderStack::EncoderStack(Modality modality, const ModelConfig& cfg, nn::ParamStore& ps,
                           Rng& rng)
    : modality_(modality),
      dim_(cfg.embed_dim),
      gru_dropout_(cfg.gru_dropout),
      head_dropout_(cfg.head_dropout) {
  const std::string pre = schema::modality_name(modality);

  if (schema::is_video(modality)) {
    has_conv_path_ = true;
    const int64_t c = cfg.video_channels;
    if (cfg.preset == "paper") {
      // 3D-ResNet18-style: stem /2, four residual stages each /2; only the
      // last two stages use temporally 3-D kernels
      stem_ = nn::make_conv3d(ps, pre + ".f.stem", 3, c, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, rng);
      mid_ = nn::make_conv3d(ps, pre + ".f.pool", c, c, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, rng);
      int64_t widths[4] = {c, 2 * c, 4 * c, cfg.embed_dim};
      int64_t in_ch = c;
      int64_t hw = conv_out(conv_out(cfg.video_size, 3, 2, 1), 3, 2, 1);
      for (int i = 0; i < 4; ++i) {
        const bool temporal = i >= 2;
        const std::array<int64_t, 3> k = temporal ? std::array<int64_t, 3>{3, 3, 3}
                                                  : std::array<int64_t, 3>{1, 3, 3};
        const std::array<int64_t, 3> kp = temporal ? std::array<int64_t, 3>{1, 1, 1}
                                                   : std::array<int64_t, 3>{0, 1, 1};
        const std::array<int64_t, 3> st = i == 0 ? std::array<int64_t, 3>{1, 1, 1}
                                                 : std::array<int64_t, 3>{1, 2, 2};
        ResStage stage;
        const std::string sp = pre + ".f.stage" + std::to_string(i);
        stage.conv_a = nn::make_conv3d(ps, sp + ".a", in_ch, widths[i], k, st, kp, rng);
        stage.conv_b = nn::make_conv3d(ps, sp + ".b", widths[i], widths[i], k, {1, 1, 1}, kp, rng);
        if (in_ch != widths[i] || st[1] != 1)
          stage.skip = nn::make_conv3d(ps, sp + ".skip", in_ch, widths[i], {1, 1, 1}, st,
                                       {0, 0, 0}, rng);
        stages_.push_back(std::move(stage));
        in_ch = widths[i];
        if (i != 0) hw = conv_out(hw, 3, 2, 1);
      }
      grid_h_ = grid_w_ = hw;
    } else {
      // desk preset: stem /2, one 3-D conv /2, one 3-D residual stage
      stem_ = nn::make_conv3d(ps, pre + ".f.stem", 3, c, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, rng);
      mid_ = nn::make_conv3d(ps, pre + ".f.mid", c, 2 * c, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, rng);
      ResStage stage;
      stage.conv_a = nn::make_conv3d(ps, pre + ".f.res.a", 2 * c, cfg.embed_dim, {3, 3, 3},
                                     {1, 1, 1}, {1, 1, 1}, rng);
      stage.conv_b = nn::make_conv3d(ps, pre + ".f.res.b", cfg.embed_dim, cfg.embed_dim,
                                     {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
      stage.skip = nn::make_conv3d(ps, pre + ".f.res.skip", 2 * c, cfg.embed_dim, {1, 1, 1},
                                   {1, 1, 1}, {0, 0, 0}, rng);
      stages_.push_back(std::move(stage));
      grid_h_ = grid_w_ = conv_out(conv_out(cfg.video_size, 3, 2, 1), 3, 2, 1);
    }
  } else if (modality == Modality::audio) {
    // VGG-style 2-D stack over the log-mel image (time x mel)
    has_conv_path_ = true;
    const int64_t c = cfg.video_channels;
    stem_ = nn::make_conv3d(ps, pre + ".f.stem", 1, c, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, rng);
    mid_ = nn::make_conv3d(ps, pre + ".f.mid", c, 2 * c, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, rng);
    ResStage stage;
    stage.conv_a = nn::make_conv3d(ps, pre + ".f.res.a", 2 * c, cfg.embed_dim, {1, 3, 3},
                                   {1, 1, 2}, {0, 1, 1}, rng);
    stage.conv_b = nn::make_conv3d(ps, pre + ".f.res.b", cfg.embed_dim, cfg.embed_dim, {1, 3, 3},
                                   {1, 1, 1}, {0, 1, 1}, rng);
    stage.skip = nn::make_conv3d(ps, pre + ".f.res.skip", 2 * c, cfg.embed_dim, {1, 1, 1},
                                 {1, 1, 2}, {0, 0, 0}, rng);
    stages_.push_back(std::move(stage));
    grid_h_ = conv_out(conv_out(cfg.audio_frames_per_block, 3, 2, 1), 3, 2, 1);
    grid_w_ = conv_out(conv_out(conv_out(cfg.audio_mels, 3, 2, 1), 3, 2, 1), 3, 2, 1);
  } else {
    // scene graph: MLP over the flattened object x relationship matrix;
    // the embedding is lifted to a constant grid for the shared interface
    has_sg_path_ = true;
    if (cfg.sg_input_dim <= 0)
      throw std::invalid_argument("scene-graph encoder requires sg_input_dim > 0");
    sg_mlp_ = nn::make_mlp2(ps, pre + ".f.mlp", cfg.sg_input_dim, cfg.sg_hidden, cfg.embed_dim,
                            rng);
    grid_h_ = grid_w_ = 1;
  }

  gru_ = nn::make_conv_gru(ps, pre + ".g", dim_, rng);
  phi_ = nn::make_mlp2(ps, pre + ".phi", dim_, dim_, dim_, rng);
  head_activity_ = nn::make_linear(ps, pre + ".head.activity", dim_, cfg.n_activity, rng);
  head_atomic_ = nn::make_linear(ps, pre + ".head.atomic", dim_, cfg.n_atomic, rng);
}

Var EncoderStack::encode_video_audio(Var x) const {
  Var h = relu(stem_.forward(std::move(x)));
  h = relu(mid_.forward(h));
  for (const auto& s : stages_) h = s.forward(h);
  h = temporal_mean(h);  // collapse remaining temporal extent
  return to_cells(h);    // [NB * H'W', D]
}

Var EncoderStack::encode_blocks(Var x) const {
  if (has_sg_path_) {
    if (x->shape.size() != 2)
      throw std::invalid_argument("scene-graph encode_blocks expects [NB, n_obj*n_rel]");
    Var e = sg_mlp_.forward(std::move(x));
    return broadcast_rows(e, cells());
  }
  if (x->shape.size() != 5) throw std::invalid_argument("encode_blocks expects [NB, C, T, H, W]");
  return encode_video_audio(std::move(x));
}

std::vector<Var> EncoderStack::aggregate(Var z_cells, int64_t n_blocks, int64_t batch, Rng& rng,
                                         bool train) const {
  const int64_t S = cells();
  const int64_t rows_per_block = batch * S;
  if (z_cells->shape[0] != n_blocks * rows_per_block)
    throw std::invalid_argument("aggregate: row count does not match n_blocks * batch * cells");
  std::vector<Var> contexts;
  contexts.reserve(static_cast<size_t>(n_blocks));
  Var h = gru_.initial_state(rows_per_block);
  for (int64_t j = 0; j < n_blocks; ++j) {
    Var zj = slice_rows(z_cells, j * rows_per_block, rows_per_block);
    h = gru_.step(zj, h);
    h = ag::dropout(h, gru_dropout_, rng, train);
    contexts.push_back(h);
  }
  return contexts;
}

Var EncoderStack::pool(Var cells_matrix, int64_t batch) const {
  (void)batch;
  return max_rows_group(std::move(cells_matrix), cells());
}

std::vector<Var> EncoderStack::rollout_predictions(Var h_last, int64_t batch, int64_t steps,
                                                   Rng& rng, bool train) const {
  if (steps < 0) throw std::invalid_argument("rollout_predictions: steps must be >= 0");
  std::vector<Var> preds;
  preds.reserve(static_cast<size_t>(steps));
  Var h = std::move(h_last);
  for (int64_t s = 0; s < steps; ++s) {
    Var c = pool(h, batch);                       // [B, D]
    Var z_pred = phi_.forward(c);                 // [B, D]
    Var z_grid = broadcast_rows(z_pred, cells()); // lift to grid form
    preds.push_back(z_grid);
    if (s + 1 < steps) {
      h = gru_.step(z_grid, h);
      h = ag::dropout(h, gru_dropout_, rng, train);
    }
  }
  return preds;
}

Var EncoderStack::activity_logits(Var seq_repr, Rng& rng, bool train) const {
  return head_activity_.forward(ag::dropout(std::move(seq_repr), head_dropout_, rng, train));
}

Var EncoderStack::atomic_logits(Var seq_repr, Rng& rng, bool train) const {
  return head_atomic_.forward(ag::dropout(std::move(seq_repr), head_dropout_, rng, train));
}

Var AttentionHead::logits(Var cells) const {
  Var l = ag::linear(std::move(cells), w, b);  // [G*S, 1]
  return reshape(l, {l->shape[0]});
}

MultiModalModel MultiModalModel::build(const ModelConfig& cfg,
                                       const std::vector<Modality>& modalities,
                                       bool with_attention, uint64_t seed) {
  MultiModalModel m;
  m.cfg = cfg;
  Rng rng(seed);
  for (Modality mod : modalities)
    m.stacks[mod] = std::make_shared<EncoderStack>(mod, cfg, m.params, rng);
  if (with_attention) {
    for (Modality a : modalities) {
      for (Modality b : modalities) {
        if (a == b) continue;
        AttentionHead head;
        const std::string name = std::string("att.") + schema::modality_name(a) + "." +
                                 schema::modality_name(b);
        head.w = m.params.add(name + ".w", {cfg.embed_dim, 1},
                              nn::uniform_init(rng, cfg.embed_dim,
                                               1.0 / std::sqrt(double(cfg.embed_dim))));
        head.b = m.params.add(name + ".b", {1}, {0.0});
        m.attn_heads[a][b] = head;
      }
    }
  }
  m.log_sigma_v2 = m.params.add("loss.log_sigma_v2", {1}, {0.0});
  m.log_sigma_a2 = m.params.add("loss.log_sigma_a2", {1}, {0.0});
  return m;
}

std::vector<Var> MultiModalModel::modality_params(Modality m) const {
  const std::string pre = std::string(schema::modality_name(m)) + ".";
  std::vector<Var> out;
  for (const auto& p : params.all())
    if (p->name.rfind(pre, 0) == 0) out.push_back(p);
  return out;
}

EncoderStack& MultiModalModel::stack(Modality m) {
  auto it = stacks.find(m);
  if (it == stacks.end())
    throw std::invalid_argument(std::string("model has no modality ") + schema::modality_name(m));
  return *it->second;
}

const EncoderStack& MultiModalModel::stack(Modality m) const {
  auto it = stacks.find(m);
  if (it == stacks.end())
    throw std::invalid_argument(std::string("model has no modality ") + schema::modality_name(m));
  return *it->second;
}

}  // namespace ccau::encoders
