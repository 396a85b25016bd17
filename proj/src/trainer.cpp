#include "ccau/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ccau/fewshot.hpp"
#include "ccau/losses.hpp"
#include "ccau/metrics.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ccau::train {

Regime regime_from_string(const std::string& s) {
  if (s == "SM") return Regime::SM;
  if (s == "CT") return Regime::CT;
  if (s == "SKD") return Regime::SKD;
  if (s == "CKD") return Regime::CKD;
  if (s == "SS") return Regime::SS;
  if (s == "SS_SV" || s == "SS+SV") return Regime::SS_SV;
  throw std::invalid_argument("unknown regime: " + s);
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::SM: return "SM";
    case Regime::CT: return "CT";
    case Regime::SKD: return "SKD";
    case Regime::CKD: return "CKD";
    case Regime::SS: return "SS";
    case Regime::SS_SV: return "SS_SV";
  }
  return "?";
}

TrainOptions TrainOptions::from_config(const Config& cfg) {
  TrainOptions o;
  o.regime = regime_from_string(cfg.get_str("train", "regime", "CT"));
  auto mods = cfg.get_list("train", "modalities", {"ego_rgb", "audio"});
  o.modalities.clear();
  for (const auto& m : mods) o.modalities.push_back(schema::modality_from_name(m));

  const bool is_kd = o.regime == Regime::SKD || o.regime == Regime::CKD;
  o.comp_mode = cfg.get_str("train", "comp_mode", is_kd ? "activity" : "both");
  o.lambda = cfg.get_double("loss", "lambda", o.lambda);
  o.per_block_atomic = cfg.get_bool("loss", "per_block_atomic", o.per_block_atomic);

  o.alignment = cfg.get_bool("loss", "alignment", o.regime == Regime::CT);
  o.align_weight = cfg.get_double("loss", "align_weight", o.align_weight);
  o.attention = cfg.get_bool("loss", "attention", o.attention);
  o.tau_att = cfg.get_double("loss", "tau_att", o.tau_att);
  o.nce_normalize = cfg.get_bool("loss", "nce_normalize", o.nce_normalize);
  o.nce_temperature = cfg.get_double("loss", "nce_temperature", o.nce_temperature);

  o.kd_alpha = cfg.get_double("loss", "kd_alpha", o.kd_alpha);
  o.kd_beta = cfg.get_double("loss", "kd_beta", o.kd_beta);
  o.kd_tau = cfg.get_double("loss", "kd_tau", o.kd_tau);
  o.skd_student = schema::modality_from_name(cfg.get_str("train", "skd_student", "ego_rgb"));
  o.teacher_checkpoints = cfg.get_list("train", "teacher_checkpoints", {});

  o.lr = cfg.get_double("train", "lr", o.lr);
  o.cosine_decay = cfg.get_bool("train", "cosine_decay", o.cosine_decay);
  o.steps = cfg.get_int("train", "steps", o.steps);
  o.ss_steps = cfg.get_int("train", "ss_steps", o.ss_steps);
  o.batch_size = cfg.get_int("train", "batch_size", o.batch_size);
  o.seed = static_cast<uint64_t>(cfg.get_int("train", "seed", 0));

  o.base_classes_only = cfg.get_bool("train", "base_classes_only", false);
  o.novel_count = cfg.get_int("eval", "novel_count", 0);
  o.fewshot_seed = static_cast<uint64_t>(cfg.get_int("eval", "fewshot_seed", 0));
  return o;
}

namespace {

std::vector<schema::Modality> checkpoint_modalities(const std::string& path);

}  // namespace

Trainer::Trainer(TrainOptions opts, const encoders::ModelConfig& mcfg, data::DatasetCache& cache)
    : opts_(std::move(opts)),
      mcfg_(mcfg),
      cache_(cache),
      model_(encoders::MultiModalModel::build(
          mcfg,
          opts_.regime == Regime::SKD ? std::vector<Modality>{opts_.skd_student}
                                      : opts_.modalities,
          opts_.attention, opts_.seed)),
      data_rng_(opts_.seed ^ 0x94d049bb133111ebull),
      dropout_rng_(opts_.seed ^ 0xbf58476d1ce4e5b9ull) {
  const bool multi = opts_.regime == Regime::CT || opts_.regime == Regime::SKD ||
                     opts_.regime == Regime::CKD;
  if (multi && opts_.modalities.size() < 2)
    throw std::invalid_argument(std::string(regime_name(opts_.regime)) +
                                " requires at least 2 modalities");
  if (opts_.regime == Regime::SKD) {
    if (std::find(opts_.modalities.begin(), opts_.modalities.end(), opts_.skd_student) ==
        opts_.modalities.end())
      throw std::invalid_argument("SKD student must be one of the configured modalities");
    if (opts_.teacher_checkpoints.empty())
      throw std::invalid_argument("SKD requires teacher_checkpoints");
    std::set<Modality> covered;
    for (const auto& path : opts_.teacher_checkpoints) {
      auto mods = checkpoint_modalities(path);
      auto teacher = std::make_shared<encoders::MultiModalModel>(
          encoders::MultiModalModel::build(mcfg_, mods, false, 0));
      load_checkpoint(*teacher, path);
      for (Modality m : mods) {
        teachers_[m] = teacher;
        covered.insert(m);
      }
    }
    for (Modality m : opts_.modalities)
      if (m != opts_.skd_student && !covered.count(m))
        throw std::invalid_argument(std::string("SKD teacher checkpoint missing modality ") +
                                    schema::modality_name(m));
  }

  train_ids_ = cache_.split_ids("train");
  if (opts_.base_classes_only) {
    auto [base, novel] =
        eval::class_split(cache_.n_activity(), opts_.novel_count, opts_.fewshot_seed);
    std::set<int64_t> novel_set(novel.begin(), novel.end());
    std::vector<std::string> kept;
    for (const auto& id : train_ids_) {
      const auto& p = cache_.get(id, {});
      if (!novel_set.count(p.activity)) kept.push_back(id);
    }
    train_ids_ = std::move(kept);
  }
  if (train_ids_.empty()) throw std::runtime_error("no training sequences available");

  adam_.m.resize(model_.params.all().size());
  adam_.v.resize(model_.params.all().size());
  for (size_t i = 0; i < model_.params.all().size(); ++i) {
    adam_.m[i].assign(model_.params.all()[i]->val.size(), 0.0);
    adam_.v[i].assign(model_.params.all()[i]->val.size(), 0.0);
  }
}

std::vector<const data::PreparedSequence*> Trainer::next_batch() {
  const int64_t bs = std::min<int64_t>(opts_.batch_size, static_cast<int64_t>(train_ids_.size()));
  if (epoch_pos_ + static_cast<size_t>(bs) > epoch_order_.size()) {
    epoch_order_ = train_ids_;
    data_rng_.shuffle(epoch_order_);
    epoch_pos_ = 0;
  }
  std::vector<const data::PreparedSequence*> batch;
  for (int64_t i = 0; i < bs; ++i)
    batch.push_back(&cache_.get(epoch_order_[epoch_pos_++], opts_.modalities));
  return batch;
}

Trainer::ModalityForward Trainer::forward_modality(
    Modality m, const std::vector<const data::PreparedSequence*>& batch, bool train_mode) {
  const int64_t B = static_cast<int64_t>(batch.size());
  const int64_t N = mcfg_.n_blocks;
  auto& stack = model_.stack(m);

  ModalityForward fwd;
  ag::Var x = cache_.batch_inputs(batch, m);
  fwd.z_cells = stack.encode_blocks(x);
  fwd.contexts = stack.aggregate(fwd.z_cells, N, B, dropout_rng_, train_mode);
  fwd.pooled.reserve(static_cast<size_t>(N));
  ag::Var acc;
  for (int64_t j = 0; j < N; ++j) {
    ag::Var c = stack.pool(fwd.contexts[static_cast<size_t>(j)], B);
    fwd.pooled.push_back(c);
    acc = acc ? ag::add(acc, c) : c;
  }
  fwd.seq_repr = ag::scale(acc, 1.0 / static_cast<double>(N));
  return fwd;
}

ag::Var Trainer::compositional_term(Modality m, const ModalityForward& fwd,
                                    const std::vector<const data::PreparedSequence*>& batch,
                                    bool train_mode) {
  auto& stack = model_.stack(m);
  const auto labels = cache_.batch_labels(batch);

  ag::Var loss_v, loss_a;
  if (opts_.comp_mode != "atomic") {
    ag::Var logits = stack.activity_logits(fwd.seq_repr, dropout_rng_, train_mode);
    loss_v = ag::cross_entropy_mean(logits, labels);
  }
  if (opts_.comp_mode != "activity") {
    ag::Var logits = stack.atomic_logits(fwd.seq_repr, dropout_rng_, train_mode);
    loss_a = ag::bce_with_logits_mean(logits, cache_.batch_seq_multihot(batch));
    if (opts_.per_block_atomic) {
      const int64_t B = static_cast<int64_t>(batch.size());
      const int64_t M = cache_.n_atomic();
      ag::Var aux;
      for (int64_t j = 0; j < mcfg_.n_blocks; ++j) {
        std::vector<double> tgt(static_cast<size_t>(B * M));
        for (int64_t b = 0; b < B; ++b)
          std::copy_n(batch[static_cast<size_t>(b)]->block_multihot.begin() + j * M, M,
                      tgt.begin() + b * M);
        ag::Var logits_j = stack.atomic_logits(fwd.pooled[static_cast<size_t>(j)], dropout_rng_,
                                               train_mode);
        ag::Var term = ag::bce_with_logits_mean(logits_j, ag::constant({B, M}, std::move(tgt)));
        aux = aux ? ag::add(aux, term) : term;
      }
      loss_a = ag::scale(ag::add(loss_a, ag::scale(aux, 1.0 / double(mcfg_.n_blocks))), 0.5);
    }
  }

  if (opts_.comp_mode == "activity") return loss_v;
  if (opts_.comp_mode == "atomic") return loss_a;
  if (opts_.comp_mode == "both_uncertainty")
    return losses::uncertainty_weighted_loss(loss_v, loss_a, model_.log_sigma_v2,
                                             model_.log_sigma_a2);
  return losses::compositional_loss(loss_v, loss_a, opts_.lambda);
}

ag::Var Trainer::alignment_embeddings(Modality m, Modality other, const ModalityForward& fwd) {
  auto& stack = model_.stack(m);
  std::vector<ag::Var> per_block;
  per_block.reserve(fwd.contexts.size());
  if (opts_.attention) {
    const auto& head = model_.attn_heads.at(m).at(other);
    for (const auto& ctx : fwd.contexts) {
      ag::Var logits = head.logits(ctx);
      per_block.push_back(ag::attn_pool_cells(ctx, logits, stack.cells(), opts_.tau_att));
    }
  } else {
    for (const auto& c : fwd.pooled) per_block.push_back(c);
  }
  return ag::concat_rows(per_block);  // [N*B, D], block-major
}

ag::Var Trainer::predictive_term(Modality m, const ModalityForward& fwd, int64_t batch_size,
                                 bool train_mode) {
  auto& stack = model_.stack(m);
  const int64_t S = stack.cells();
  const int64_t N = mcfg_.n_blocks;
  const int64_t obs = std::min<int64_t>(mcfg_.observed_blocks, N - 1);
  const int64_t steps = std::min<int64_t>(mcfg_.predicted_blocks, N - obs);
  if (steps < 1)
    throw std::invalid_argument("predictive loss needs at least one future block");
  const int64_t rows = batch_size * S;
  ag::Var z_obs = ag::slice_rows(fwd.z_cells, 0, obs * rows);
  auto ctx = stack.aggregate(z_obs, obs, batch_size, dropout_rng_, train_mode);
  auto preds = stack.rollout_predictions(ctx.back(), batch_size, steps, dropout_rng_, train_mode);
  ag::Var anchors = ag::concat_rows(preds);
  ag::Var targets = ag::slice_rows(fwd.z_cells, obs * rows, steps * rows);
  losses::NceOptions nce{opts_.nce_normalize, opts_.nce_temperature};
  return losses::predictive_contrastive_loss(anchors, targets, nce);
}

ag::Var Trainer::build_loss(const std::vector<const data::PreparedSequence*>& batch,
                            bool train_mode, bool supervised_phase) {
  losses::NceOptions nce{opts_.nce_normalize, opts_.nce_temperature};

  if (!supervised_phase) {
    // self-supervised predictive pre-training
    ag::Var total;
    for (Modality m : opts_.modalities) {
      auto fwd = forward_modality(m, batch, train_mode);
      ag::Var term = predictive_term(m, fwd, static_cast<int64_t>(batch.size()), train_mode);
      total = total ? ag::add(total, term) : term;
    }
    return total;
  }

  switch (opts_.regime) {
    case Regime::SM:
    case Regime::SS:
    case Regime::SS_SV: {
      // per-modality supervision, no cross-modality loss
      ag::Var total;
      for (Modality m : opts_.modalities) {
        auto fwd = forward_modality(m, batch, train_mode);
        ag::Var term = compositional_term(m, fwd, batch, train_mode);
        total = total ? ag::add(total, term) : term;
      }
      return total;
    }
    case Regime::CT: {
      std::map<Modality, ModalityForward> fwds;
      ag::Var total;
      for (Modality m : opts_.modalities) {
        fwds[m] = forward_modality(m, batch, train_mode);
        ag::Var term = compositional_term(m, fwds[m], batch, train_mode);
        total = total ? ag::add(total, term) : term;
      }
      if (opts_.alignment) {
        ag::Var align;
        for (Modality m : opts_.modalities) {
          for (Modality m2 : opts_.modalities) {
            if (m == m2) continue;
            ag::Var term = losses::alignment_nce_loss(alignment_embeddings(m, m2, fwds[m]),
                                                      alignment_embeddings(m2, m, fwds[m2]), nce);
            align = align ? ag::add(align, term) : term;
          }
        }
        total = ag::add(total, ag::scale(align, opts_.align_weight));
      }
      return total;
    }
    case Regime::SKD: {
      const auto labels = cache_.batch_labels(batch);
      auto fwd = forward_modality(opts_.skd_student, batch, train_mode);
      ag::Var s_logits =
          model_.stack(opts_.skd_student).activity_logits(fwd.seq_repr, dropout_rng_, train_mode);
      ag::Var total;
      bool first = true;
      for (Modality m : opts_.modalities) {
        if (m == opts_.skd_student) continue;
        std::vector<double> t_logits;
        {
          ag::NoGradGuard ng;
          auto& teacher = *teachers_.at(m);
          const int64_t B = static_cast<int64_t>(batch.size());
          auto& tstack = teacher.stack(m);
          ag::Var x = cache_.batch_inputs(batch, m);
          ag::Var z = tstack.encode_blocks(x);
          auto ctx = tstack.aggregate(z, mcfg_.n_blocks, B, dropout_rng_, false);
          ag::Var acc;
          for (const auto& c : ctx) {
            ag::Var pooled = tstack.pool(c, B);
            acc = acc ? ag::add(acc, pooled) : pooled;
          }
          ag::Var repr = ag::scale(acc, 1.0 / double(mcfg_.n_blocks));
          t_logits = tstack.activity_logits(repr, dropout_rng_, false)->val;
        }
        ag::Var term = losses::distillation_loss(s_logits, t_logits, labels,
                                                 first ? opts_.kd_alpha : 0.0, opts_.kd_beta,
                                                 opts_.kd_tau);
        first = false;
        total = total ? ag::add(total, term) : term;
      }
      if (opts_.comp_mode == "both" || opts_.comp_mode == "atomic") {
        ag::Var logits = model_.stack(opts_.skd_student)
                             .atomic_logits(fwd.seq_repr, dropout_rng_, train_mode);
        ag::Var la = ag::bce_with_logits_mean(logits, cache_.batch_seq_multihot(batch));
        total = ag::add(total, ag::scale(la, opts_.lambda));
      }
      return total;
    }
    case Regime::CKD: {
      const auto labels = cache_.batch_labels(batch);
      std::map<Modality, ag::Var> logits;
      for (Modality m : opts_.modalities) {
        auto fwd = forward_modality(m, batch, train_mode);
        logits[m] = model_.stack(m).activity_logits(fwd.seq_repr, dropout_rng_, train_mode);
      }
      // every modality takes the student role against the step-start
      // snapshots of the others (their logits detached by value)
      ag::Var total;
      for (Modality s : opts_.modalities) {
        ag::Var term_s = ag::scale(ag::cross_entropy_mean(logits[s], labels), opts_.kd_alpha);
        for (Modality t : opts_.modalities) {
          if (t == s) continue;
          ag::Var soft = losses::distillation_loss(logits[s], logits[t]->val, labels, 0.0,
                                                   opts_.kd_beta, opts_.kd_tau);
          term_s = ag::add(term_s, soft);
        }
        total = total ? ag::add(total, term_s) : term_s;
      }
      return total;
    }
  }
  throw std::logic_error("unreachable regime");
}

void Trainer::adam_step(double lr) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++adam_.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_.t));
  const auto& params = model_.params.all();
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p->grad.empty()) continue;
    for (size_t j = 0; j < p->val.size(); ++j) {
      const double g = p->grad[j];
      adam_.m[i][j] = b1 * adam_.m[i][j] + (1 - b1) * g;
      adam_.v[i][j] = b2 * adam_.v[i][j] + (1 - b2) * g * g;
      const double mh = adam_.m[i][j] / c1;
      const double vh = adam_.v[i][j] / c2;
      p->val[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

TrainResult Trainer::train() {
  TrainResult res;

  const bool has_pretrain = opts_.regime == Regime::SS || opts_.regime == Regime::SS_SV;
  const int64_t pre_steps = has_pretrain ? opts_.ss_steps : 0;
  const int64_t sup_steps = opts_.regime == Regime::SS ? 0 : opts_.steps;

  for (int64_t phase = 0; phase < 2; ++phase) {
    const bool supervised = phase == 1;
    const int64_t n_steps = supervised ? sup_steps : pre_steps;
    for (int64_t step = 0; step < n_steps; ++step) {
      auto batch = next_batch();
      ag::Var loss = build_loss(batch, true, supervised);
      ag::zero_grad(model_.params.all());
      ag::backward(loss);
      const double lr = opts_.cosine_decay
                            ? opts_.lr * 0.5 *
                                  (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                  static_cast<double>(n_steps)))
                            : opts_.lr;
      adam_step(lr);
      (supervised ? res.loss_curve : res.pretrain_curve).push_back(loss->val[0]);
    }
  }

  const std::vector<Modality> eval_mods =
      opts_.regime == Regime::SKD ? std::vector<Modality>{opts_.skd_student} : opts_.modalities;
  for (Modality m : eval_mods) {
    for (const char* split : {"test1", "test2"}) {
      EvalMetrics em = evaluate(m, cache_.split_ids(split));
      res.metrics[std::string(schema::modality_name(m)) + "/" + split] = em;
    }
  }
  return res;
}

EvalMetrics Trainer::evaluate(Modality m, const std::vector<std::string>& ids) {
  model_.stack(m);  // raises for unknown modality
  const int64_t n = static_cast<int64_t>(ids.size());
  if (n == 0) throw std::invalid_argument("evaluate: empty split");
  const int64_t A = cache_.n_activity(), M = cache_.n_atomic();

  std::vector<double> act_scores(static_cast<size_t>(n * A));
  std::vector<double> atom_scores(static_cast<size_t>(n * M));
  std::vector<double> atom_labels(static_cast<size_t>(n * M));
  std::vector<int64_t> labels(static_cast<size_t>(n));

  ag::NoGradGuard ng;
  const int64_t eval_bs = 16;
  Rng dummy(0);  // dropout disabled in eval mode; never draws
  for (int64_t at = 0; at < n; at += eval_bs) {
    const int64_t bs = std::min<int64_t>(eval_bs, n - at);
    std::vector<const data::PreparedSequence*> batch;
    for (int64_t i = 0; i < bs; ++i) {
      const auto& p = cache_.get(ids[static_cast<size_t>(at + i)], {m});
      batch.push_back(&p);
      labels[static_cast<size_t>(at + i)] = p.activity;
      std::copy(p.seq_multihot.begin(), p.seq_multihot.end(),
                atom_labels.begin() + (at + i) * M);
    }
    auto fwd = forward_modality(m, batch, false);
    auto& stack = model_.stack(m);
    ag::Var act = stack.activity_logits(fwd.seq_repr, dummy, false);
    ag::Var atom = stack.atomic_logits(fwd.seq_repr, dummy, false);
    std::copy(act->val.begin(), act->val.end(), act_scores.begin() + at * A);
    std::copy(atom->val.begin(), atom->val.end(), atom_scores.begin() + at * M);
  }

  EvalMetrics em;
  em.n = n;
  em.acc1 = eval::topk_accuracy(act_scores, n, A, labels, 1);
  em.acc3 = eval::topk_accuracy(act_scores, n, A, labels, std::min<int64_t>(3, A));
  em.map = eval::support_weighted_map(atom_scores, n, M, atom_labels).map;
  return em;
}

std::vector<double> Trainer::sequence_features(Modality m, const std::vector<std::string>& ids) {
  ag::NoGradGuard ng;
  const int64_t D = mcfg_.embed_dim;
  std::vector<double> out(ids.size() * static_cast<size_t>(D));
  Rng dummy(0);
  const int64_t eval_bs = 16;
  const int64_t n = static_cast<int64_t>(ids.size());
  for (int64_t at = 0; at < n; at += eval_bs) {
    const int64_t bs = std::min<int64_t>(eval_bs, n - at);
    std::vector<const data::PreparedSequence*> batch;
    for (int64_t i = 0; i < bs; ++i)
      batch.push_back(&cache_.get(ids[static_cast<size_t>(at + i)], {m}));
    auto fwd = forward_modality(m, batch, false);
    std::copy(fwd.seq_repr->val.begin(), fwd.seq_repr->val.end(),
              out.begin() + static_cast<size_t>(at * D));
  }
  return out;
}

// --- checkpoints ---------------------------------------------------------------

void save_checkpoint(const encoders::MultiModalModel& model, int64_t step,
                     const std::string& path) {
  json header;
  header["step"] = step;
  json params = json::array();
  for (const auto& p : model.params.all()) {
    json pj;
    pj["name"] = p->name;
    pj["shape"] = p->shape;
    params.push_back(pj);
  }
  header["params"] = params;
  const std::string h = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << "CCAUCKPT1\n";
  const uint64_t hlen = h.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : model.params.all())
    out.write(reinterpret_cast<const char*>(p->val.data()),
              static_cast<std::streamsize>(p->val.size() * sizeof(double)));
}

namespace {

json read_checkpoint_header(std::ifstream& in, const std::string& path) {
  std::string magic(10, '\0');
  in.read(magic.data(), 10);
  if (magic != "CCAUCKPT1\n") throw std::runtime_error("bad checkpoint magic in " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header in " + path);
  return json::parse(h);
}

std::vector<schema::Modality> checkpoint_modalities(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint: " + path);
  json header = read_checkpoint_header(in, path);
  std::set<std::string> names;
  for (const auto& pj : header["params"]) {
    const std::string n = pj["name"];
    const size_t dot = n.find('.');
    if (dot == std::string::npos) continue;
    const std::string prefix = n.substr(0, dot);
    for (const char* m : {"ego_rgb", "third_rgb", "audio", "scene_graph"})
      if (prefix == m) names.insert(prefix);
  }
  std::vector<schema::Modality> out;
  for (const auto& n : names) out.push_back(schema::modality_from_name(n));
  if (out.empty()) throw std::runtime_error("checkpoint has no modality parameters: " + path);
  return out;
}

}  // namespace

int64_t load_checkpoint(encoders::MultiModalModel& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint: " + path);
  json header = read_checkpoint_header(in, path);

  // strict name/shape manifest match, in file order
  size_t idx = 0;
  const auto& params = model.params.all();
  for (const auto& pj : header["params"]) {
    if (idx >= params.size()) throw std::runtime_error("checkpoint has extra parameters: " + path);
    auto& p = params[idx++];
    if (pj["name"] != p->name)
      throw std::runtime_error("checkpoint parameter mismatch: expected " + p->name + ", found " +
                               pj["name"].get<std::string>());
    std::vector<int64_t> shape = pj["shape"];
    if (shape != p->shape) throw std::runtime_error("checkpoint shape mismatch for " + p->name);
    in.read(reinterpret_cast<char*>(p->val.data()),
            static_cast<std::streamsize>(p->val.size() * sizeof(double)));
  }
  if (idx != params.size()) throw std::runtime_error("checkpoint missing parameters: " + path);
  if (!in) throw std::runtime_error("truncated checkpoint data in " + path);
  return header["step"].get<int64_t>();
}

// --- run orchestration ------------------------------------------------------------

TrainResult run_training(const Config& cfg, const std::string& data_dir,
                         const std::string& out_dir) {
  auto parsed = schema::parse_annotations(data_dir);
  const auto& vocab = parsed.split.vocab;
  encoders::ModelConfig mcfg =
      encoders::ModelConfig::from_config(cfg, vocab.n_activity, vocab.n_atomic,
                                         vocab.n_obj * vocab.n_rel);
  data::DatasetCache cache(data_dir, mcfg);
  TrainOptions opts = TrainOptions::from_config(cfg);

  Trainer trainer(opts, mcfg, cache);
  TrainResult res = trainer.train();

  fs::create_directories(out_dir);
  {
    Config snapshot = cfg;
    snapshot.set("data", "path", data_dir);
    snapshot.write_file((fs::path(out_dir) / "config.snapshot.ini").string());
  }
  save_checkpoint(trainer.model(), opts.steps, (fs::path(out_dir) / "checkpoint.bin").string());
  {
    std::ofstream mf(fs::path(out_dir) / "metrics.jsonl");
    for (const auto& [key, em] : res.metrics) {
      const size_t slash = key.find('/');
      json rec;
      rec["regime"] = regime_name(opts.regime);
      rec["modality"] = key.substr(0, slash);
      rec["split"] = key.substr(slash + 1);
      rec["acc1"] = em.acc1;
      rec["acc3"] = em.acc3;
      rec["map"] = em.map;
      rec["n"] = em.n;
      mf << rec.dump() << "\n";
    }
  }
  {
    std::ofstream lf(fs::path(out_dir) / "train_log.jsonl");
    for (size_t i = 0; i < res.pretrain_curve.size(); ++i) {
      json rec;
      rec["phase"] = "pretrain";
      rec["step"] = i;
      rec["loss"] = res.pretrain_curve[i];
      lf << rec.dump() << "\n";
    }
    for (size_t i = 0; i < res.loss_curve.size(); ++i) {
      json rec;
      rec["phase"] = "supervised";
      rec["step"] = i;
      rec["loss"] = res.loss_curve[i];
      lf << rec.dump() << "\n";
    }
  }
  {
    json summary;
    summary["regime"] = regime_name(opts.regime);
    json mods = json::array();
    for (Modality m : opts.modalities) mods.push_back(schema::modality_name(m));
    summary["modalities"] = mods;
    summary["steps"] = opts.steps;
    summary["seed"] = opts.seed;
    if (!res.loss_curve.empty()) summary["final_loss"] = res.loss_curve.back();
    if (!res.pretrain_curve.empty()) summary["final_pretrain_loss"] = res.pretrain_curve.back();
    json metrics;
    for (const auto& [key, em] : res.metrics) {
      json rec;
      rec["acc1"] = em.acc1;
      rec["acc3"] = em.acc3;
      rec["map"] = em.map;
      rec["n"] = em.n;
      metrics[key] = rec;
    }
    summary["metrics"] = metrics;
    std::ofstream sf(fs::path(out_dir) / "summary.json");
    sf << summary.dump(2) << "\n";
  }
  return res;
}

// --- scene-graph oracle baseline ------------------------------------------------------

OracleResult train_scene_graph_oracle(data::DatasetCache& cache, int64_t steps, double lr,
                                      uint64_t seed) {
  const auto& parsed = cache.parsed();
  const int64_t V = parsed.split.vocab.n_obj * parsed.split.vocab.n_rel;
  const int64_t A = parsed.split.vocab.n_activity;

  std::map<std::string, const schema::SyncedSequence*> by_id;
  bool any_graphs = false;
  for (const auto& s : parsed.sequences) {
    by_id[s.sequence_id] = &s;
    if (!s.scene_graphs.empty()) any_graphs = true;
  }
  if (!any_graphs) throw std::invalid_argument("dataset has no scene-graph annotations");

  auto features = [&](const std::vector<std::string>& ids, std::vector<double>& x,
                      std::vector<int64_t>& y) {
    x.assign(ids.size() * static_cast<size_t>(V), 0.0);
    y.assign(ids.size(), 0);
    for (size_t i = 0; i < ids.size(); ++i) {
      const auto* seq = by_id.at(ids[i]);
      auto m = schema::encode_scene_graph_matrix(seq->scene_graphs, parsed.split.vocab.n_obj,
                                                 parsed.split.vocab.n_rel);
      std::copy(m.begin(), m.end(), x.begin() + i * static_cast<size_t>(V));
      y[i] = seq->activity_class;
    }
  };

  std::vector<double> x_train;
  std::vector<int64_t> y_train;
  features(parsed.split.train, x_train, y_train);
  const int64_t n_train = static_cast<int64_t>(parsed.split.train.size());

  nn::ParamStore ps;
  Rng rng(seed);
  auto mlp = nn::make_mlp2(ps, "sg_oracle", V, 128, A, rng);

  // Adam over full-batch steps
  std::vector<std::vector<double>> am(ps.all().size()), av(ps.all().size());
  for (size_t i = 0; i < ps.all().size(); ++i) {
    am[i].assign(ps.all()[i]->val.size(), 0.0);
    av[i].assign(ps.all()[i]->val.size(), 0.0);
  }
  ag::Var x = ag::constant({n_train, V}, x_train);
  for (int64_t t = 1; t <= steps; ++t) {
    ag::Var loss = ag::cross_entropy_mean(mlp.forward(x), y_train);
    ag::zero_grad(ps.all());
    ag::backward(loss);
    const double b1 = 0.9, b2 = 0.999;
    for (size_t i = 0; i < ps.all().size(); ++i) {
      auto& p = ps.all()[i];
      if (p->grad.empty()) continue;
      for (size_t j = 0; j < p->val.size(); ++j) {
        am[i][j] = b1 * am[i][j] + (1 - b1) * p->grad[j];
        av[i][j] = b2 * av[i][j] + (1 - b2) * p->grad[j] * p->grad[j];
        const double mh = am[i][j] / (1 - std::pow(b1, double(t)));
        const double vh = av[i][j] / (1 - std::pow(b2, double(t)));
        p->val[j] -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
  }

  OracleResult out;
  auto eval_split = [&](const std::vector<std::string>& ids, double& acc1, double& acc3) {
    std::vector<double> xs;
    std::vector<int64_t> ys;
    features(ids, xs, ys);
    ag::NoGradGuard ng;
    ag::Var scores = mlp.forward(ag::constant({static_cast<int64_t>(ids.size()), V}, xs));
    acc1 = eval::topk_accuracy(scores->val, static_cast<int64_t>(ids.size()), A, ys, 1);
    acc3 = eval::topk_accuracy(scores->val, static_cast<int64_t>(ids.size()), A,
                               ys, std::min<int64_t>(3, A));
  };
  eval_split(parsed.split.test1, out.acc1_test1, out.acc3_test1);
  eval_split(parsed.split.test2, out.acc1_test2, out.acc3_test2);
  out.acc1_mean = 0.5 * (out.acc1_test1 + out.acc1_test2);
  out.acc3_mean = 0.5 * (out.acc3_test1 + out.acc3_test2);
  return out;
}

}  // namespace ccau::train
