#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ccau/config.hpp"
#include "ccau/data.hpp"
#include "ccau/encoders.hpp"

namespace ccau::train {

using schema::Modality;

enum class Regime { SM, CT, SKD, CKD, SS, SS_SV };
Regime regime_from_string(const std::string& s);
const char* regime_name(Regime r);

struct TrainOptions {
  Regime regime = Regime::CT;
  std::vector<Modality> modalities{Modality::ego_rgb, Modality::audio};

  // compositional objective
  std::string comp_mode = "both";  // activity | atomic | both | both_uncertainty
  double lambda = 10.0;
  bool per_block_atomic = false;

  // alignment branch
  bool alignment = true;
  double align_weight = 1.0;
  bool attention = false;
  double tau_att = 1.0;
  bool nce_normalize = false;
  double nce_temperature = 1.0;

  // knowledge distillation
  double kd_alpha = 1.0;
  double kd_beta = 0.1;
  double kd_tau = 2.5;
  Modality skd_student = Modality::ego_rgb;
  std::vector<std::string> teacher_checkpoints;

  // optimizer
  double lr = 1e-3;
  bool cosine_decay = true;
  int64_t steps = 200;
  int64_t ss_steps = 150;  // phase-1 length for SS and SS_SV
  int64_t batch_size = 8;
  uint64_t seed = 0;

  // few-shot support: restrict training to base activity classes
  bool base_classes_only = false;
  int64_t novel_count = 0;
  uint64_t fewshot_seed = 0;

  static TrainOptions from_config(const Config& cfg);
};

struct EvalMetrics {
  double acc1 = 0.0;
  double acc3 = 0.0;
  double map = 0.0;
  int64_t n = 0;
};

struct TrainResult {
  std::vector<double> loss_curve;      // supervised phase (per step)
  std::vector<double> pretrain_curve;  // self-supervised phase (per step)
  std::map<std::string, EvalMetrics> metrics;  // "<modality>/<split>"
};

class Trainer {
 public:
  Trainer(TrainOptions opts, const encoders::ModelConfig& mcfg, data::DatasetCache& cache);

  TrainResult train();
  EvalMetrics evaluate(Modality m, const std::vector<std::string>& ids);

  // frozen D-dim sequence features (row per id), eval mode
  std::vector<double> sequence_features(Modality m, const std::vector<std::string>& ids);

  encoders::MultiModalModel& model() { return model_; }
  const TrainOptions& options() const { return opts_; }
  const std::vector<std::string>& train_ids() const { return train_ids_; }

  // loss-graph construction for one batch (exposed for the isolation and
  // gradient-flow tests); does not step the optimizer
  ag::Var build_loss(const std::vector<const data::PreparedSequence*>& batch, bool train_mode,
                     bool supervised_phase);

 private:
  struct ModalityForward {
    std::vector<ag::Var> contexts;  // per block, [B*cells, D]
    std::vector<ag::Var> pooled;    // per block, [B, D]
    ag::Var seq_repr;               // [B, D]
    ag::Var z_cells;                // [N*B*cells, D]
  };

  ModalityForward forward_modality(Modality m,
                                   const std::vector<const data::PreparedSequence*>& batch,
                                   bool train_mode);
  ag::Var compositional_term(Modality m, const ModalityForward& fwd,
                             const std::vector<const data::PreparedSequence*>& batch,
                             bool train_mode);
  ag::Var alignment_embeddings(Modality m, Modality other, const ModalityForward& fwd);
  ag::Var predictive_term(Modality m, const ModalityForward& fwd, int64_t batch_size,
                          bool train_mode);

  std::vector<const data::PreparedSequence*> next_batch();

  TrainOptions opts_;
  encoders::ModelConfig mcfg_;
  data::DatasetCache& cache_;
  encoders::MultiModalModel model_;
  std::vector<std::string> train_ids_;

  // frozen teacher models for SKD
  std::map<Modality, std::shared_ptr<encoders::MultiModalModel>> teachers_;

  Rng data_rng_;
  Rng dropout_rng_;
  std::vector<std::string> epoch_order_;
  size_t epoch_pos_ = 0;

  // Adam state
  struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t t = 0;
  };
  AdamState adam_;
  void adam_step(double lr);
};

void save_checkpoint(const encoders::MultiModalModel& model, int64_t step,
                     const std::string& path);
int64_t load_checkpoint(encoders::MultiModalModel& model, const std::string& path);

// Full run orchestration: trains per the config, writes config.snapshot.ini,
// checkpoint.bin, metrics.jsonl, train_log.jsonl and summary.json to out_dir.
TrainResult run_training(const Config& cfg, const std::string& data_dir,
                         const std::string& out_dir);

// Scene-graph oracle baseline: MLP over the sequence-level incidence matrix.
struct OracleResult {
  double acc1_test1 = 0, acc3_test1 = 0;
  double acc1_test2 = 0, acc3_test2 = 0;
  double acc1_mean = 0, acc3_mean = 0;
};
OracleResult train_scene_graph_oracle(data::DatasetCache& cache, int64_t steps, double lr,
                                      uint64_t seed);

}  // namespace ccau::train
