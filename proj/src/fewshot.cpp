#include "ccau/fewshot.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "ccau/metrics.hpp"
#include "ccau/nn.hpp"
#include "ccau/trainer.hpp"

namespace ccau::eval {

std::pair<std::vector<int64_t>, std::vector<int64_t>> class_split(int64_t n_activity,
                                                                  int64_t novel_count,
                                                                  uint64_t seed) {
  if (novel_count < 1 || novel_count >= n_activity)
    throw std::invalid_argument("class_split: novel_count must be in [1, n_activity)");
  std::vector<int64_t> classes(static_cast<size_t>(n_activity));
  for (size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int64_t>(i);
  Rng rng(seed ^ 0x8f14e45fceea167aull);
  rng.shuffle(classes);
  std::vector<int64_t> novel(classes.end() - novel_count, classes.end());
  std::vector<int64_t> base(classes.begin(), classes.end() - novel_count);
  std::sort(base.begin(), base.end());
  std::sort(novel.begin(), novel.end());
  return {base, novel};
}

namespace {

// linear probe trained with full-batch Adam on frozen features
struct Probe {
  nn::ParamStore ps;
  nn::Linear head;
};

std::vector<double> train_probe_scores(const std::vector<double>& x_train, int64_t n_train,
                                       int64_t dim, const std::vector<double>& targets,
                                       int64_t n_out, bool multilabel,
                                       const std::vector<int64_t>& labels,
                                       const std::vector<double>& x_eval, int64_t n_eval,
                                       int64_t steps, double lr, uint64_t seed) {
  nn::ParamStore ps;
  Rng rng(seed);
  nn::Linear head = nn::make_linear(ps, "probe", dim, n_out, rng);
  std::vector<std::vector<double>> am(ps.all().size()), av(ps.all().size());
  for (size_t i = 0; i < ps.all().size(); ++i) {
    am[i].assign(ps.all()[i]->val.size(), 0.0);
    av[i].assign(ps.all()[i]->val.size(), 0.0);
  }
  ag::Var x = ag::constant({n_train, dim}, x_train);
  ag::Var t = multilabel ? ag::constant({n_train, n_out}, targets) : nullptr;
  for (int64_t it = 1; it <= steps; ++it) {
    ag::Var logits = head.forward(x);
    ag::Var loss = multilabel ? ag::bce_with_logits_mean(logits, t)
                              : ag::cross_entropy_mean(logits, labels);
    ag::zero_grad(ps.all());
    ag::backward(loss);
    for (size_t i = 0; i < ps.all().size(); ++i) {
      auto& p = ps.all()[i];
      if (p->grad.empty()) continue;
      for (size_t j = 0; j < p->val.size(); ++j) {
        am[i][j] = 0.9 * am[i][j] + 0.1 * p->grad[j];
        av[i][j] = 0.999 * av[i][j] + 0.001 * p->grad[j] * p->grad[j];
        const double mh = am[i][j] / (1 - std::pow(0.9, double(it)));
        const double vh = av[i][j] / (1 - std::pow(0.999, double(it)));
        p->val[j] -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
  }
  ag::NoGradGuard ng;
  return head.forward(ag::constant({n_eval, dim}, x_eval))->val;
}

}  // namespace

std::vector<FewShotRow> few_shot_protocol(train::Trainer& trainer, data::DatasetCache& cache,
                                          const FewShotConfig& cfg) {
  const int64_t A = cache.n_activity();
  const int64_t M = cache.n_atomic();
  const int64_t D = trainer.model().cfg.embed_dim;
  auto [base, novel] = class_split(A, cfg.novel_count, cfg.seed);
  std::set<int64_t> novel_set(novel.begin(), novel.end());
  std::map<int64_t, int64_t> novel_index;
  for (size_t i = 0; i < novel.size(); ++i) novel_index[novel[i]] = static_cast<int64_t>(i);

  // group novel-class train sequences per class, with one seeded shuffle so
  // shot sets are nested across k
  std::map<int64_t, std::vector<std::string>> pools;
  for (const auto& id : cache.split_ids("train")) {
    const auto& p = cache.get(id, {});
    if (novel_set.count(p.activity)) pools[p.activity].push_back(id);
  }
  Rng rng(cfg.seed ^ 0x5bd1e995ull);
  for (auto& [cls, ids] : pools) rng.shuffle(ids);

  // evaluation sets: novel-class sequences per test split
  struct EvalSet {
    std::vector<std::string> ids;
    std::vector<int64_t> novel_labels;
    std::vector<double> atom_multihot;
    std::vector<double> feats;
  };
  std::vector<EvalSet> eval_sets;
  for (const char* split : {"test1", "test2"}) {
    EvalSet es;
    for (const auto& id : cache.split_ids(split)) {
      const auto& p = cache.get(id, {});
      if (!novel_set.count(p.activity)) continue;
      es.ids.push_back(id);
      es.novel_labels.push_back(novel_index.at(p.activity));
    }
    es.atom_multihot.resize(es.ids.size() * static_cast<size_t>(M));
    for (size_t i = 0; i < es.ids.size(); ++i) {
      const auto& p = cache.get(es.ids[i], {});
      std::copy(p.seq_multihot.begin(), p.seq_multihot.end(),
                es.atom_multihot.begin() + i * static_cast<size_t>(M));
    }
    if (!es.ids.empty()) es.feats = trainer.sequence_features(cfg.modality, es.ids);
    eval_sets.push_back(std::move(es));
  }

  std::vector<FewShotRow> rows;
  for (int64_t k : cfg.shots) {
    if (k < 1) throw std::invalid_argument("few-shot k must be >= 1");
    FewShotRow row;
    row.k = k;

    std::vector<std::string> shot_ids;
    for (const auto& [cls, ids] : pools) {
      const int64_t take = std::min<int64_t>(k, static_cast<int64_t>(ids.size()));
      if (take < k) row.shortfalls.push_back({cls, static_cast<int64_t>(ids.size())});
      for (int64_t i = 0; i < take; ++i) shot_ids.push_back(ids[static_cast<size_t>(i)]);
    }
    if (shot_ids.empty()) throw std::runtime_error("few-shot: no novel-class train sequences");

    const int64_t n_shot = static_cast<int64_t>(shot_ids.size());
    std::vector<double> feats = trainer.sequence_features(cfg.modality, shot_ids);
    std::vector<int64_t> labels(shot_ids.size());
    std::vector<double> atom_targets(shot_ids.size() * static_cast<size_t>(M));
    for (size_t i = 0; i < shot_ids.size(); ++i) {
      const auto& p = cache.get(shot_ids[i], {});
      labels[i] = novel_index.at(p.activity);
      std::copy(p.seq_multihot.begin(), p.seq_multihot.end(),
                atom_targets.begin() + i * static_cast<size_t>(M));
    }

    double acc_sum = 0.0, map_sum = 0.0;
    int64_t used_splits = 0;
    for (const auto& es : eval_sets) {
      if (es.ids.empty()) continue;
      const int64_t n_eval = static_cast<int64_t>(es.ids.size());
      auto act_scores =
          train_probe_scores(feats, n_shot, D, {}, static_cast<int64_t>(novel.size()), false,
                             labels, es.feats, n_eval, cfg.probe_steps, cfg.probe_lr,
                             cfg.seed ^ 0xabcdu);
      auto atom_scores = train_probe_scores(feats, n_shot, D, atom_targets, M, true, {},
                                            es.feats, n_eval, cfg.probe_steps, cfg.probe_lr,
                                            cfg.seed ^ 0xdcbau);
      acc_sum += topk_accuracy(act_scores, n_eval, static_cast<int64_t>(novel.size()),
                               es.novel_labels, 1);
      map_sum += support_weighted_map(atom_scores, n_eval, M, es.atom_multihot).map;
      ++used_splits;
    }
    if (used_splits == 0) throw std::runtime_error("few-shot: no novel-class test sequences");
    row.activity_acc = acc_sum / static_cast<double>(used_splits);
    row.atomic_map = map_sum / static_cast<double>(used_splits);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ccau::eval
