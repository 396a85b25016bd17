#pragma once

#include <cstdint>
#include <vector>

namespace ccau::eval {

// Fraction of samples whose true class is among the k highest scores.
// Ties are broken toward the lowest class index.
double topk_accuracy(const std::vector<double>& scores, int64_t n_samples, int64_t n_classes,
                     const std::vector<int64_t>& labels, int64_t k);

struct MapResult {
  double map = 0.0;
  std::vector<double> per_class_ap;       // NaN for zero-support classes
  std::vector<int64_t> per_class_support;
};

// Support-weighted mean average precision for multi-label scores.
// AP per class averages precision at each positive, ranking samples by
// descending score (ties by ascending sample index); classes with zero
// support are excluded and the weights are the positive counts.
MapResult support_weighted_map(const std::vector<double>& scores, int64_t n_samples,
                               int64_t n_classes, const std::vector<double>& multi_hot);

}  // namespace ccau::eval
