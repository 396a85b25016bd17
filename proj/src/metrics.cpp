#include "ccau/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ccau::eval {

double topk_accuracy(const std::vector<double>& scores, int64_t n_samples, int64_t n_classes,
                     const std::vector<int64_t>& labels, int64_t k) {
  if (n_samples < 1) throw std::invalid_argument("topk_accuracy: empty input");
  if (k < 1 || k > n_classes) throw std::invalid_argument("topk_accuracy: k out of range");
  if (static_cast<int64_t>(scores.size()) != n_samples * n_classes ||
      static_cast<int64_t>(labels.size()) != n_samples)
    throw std::invalid_argument("topk_accuracy: shape mismatch");

  int64_t hits = 0;
  for (int64_t s = 0; s < n_samples; ++s) {
    const double* row = scores.data() + s * n_classes;
    const int64_t y = labels[static_cast<size_t>(s)];
    if (y < 0 || y >= n_classes) throw std::invalid_argument("topk_accuracy: label out of range");
    // rank of the true class = #classes strictly better + #ties with lower index
    int64_t better = 0;
    for (int64_t c = 0; c < n_classes; ++c) {
      if (c == y) continue;
      if (row[c] > row[y] || (row[c] == row[y] && c < y)) ++better;
    }
    if (better < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_samples);
}

MapResult support_weighted_map(const std::vector<double>& scores, int64_t n_samples,
                               int64_t n_classes, const std::vector<double>& multi_hot) {
  if (static_cast<int64_t>(scores.size()) != n_samples * n_classes ||
      static_cast<int64_t>(multi_hot.size()) != n_samples * n_classes)
    throw std::invalid_argument("support_weighted_map: shape mismatch");

  MapResult res;
  res.per_class_ap.assign(static_cast<size_t>(n_classes), std::nan(""));
  res.per_class_support.assign(static_cast<size_t>(n_classes), 0);

  double weighted_sum = 0.0;
  int64_t total_support = 0;
  std::vector<int64_t> order(static_cast<size_t>(n_samples));
  for (int64_t c = 0; c < n_classes; ++c) {
    int64_t support = 0;
    for (int64_t s = 0; s < n_samples; ++s)
      if (multi_hot[static_cast<size_t>(s * n_classes + c)] != 0.0) ++support;
    res.per_class_support[static_cast<size_t>(c)] = support;
    if (support == 0) continue;

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return scores[static_cast<size_t>(a * n_classes + c)] >
             scores[static_cast<size_t>(b * n_classes + c)];
    });
    // precision at each positive, averaged
    double ap = 0.0;
    int64_t seen_pos = 0;
    for (int64_t rank = 0; rank < n_samples; ++rank) {
      if (multi_hot[static_cast<size_t>(order[static_cast<size_t>(rank)] * n_classes + c)] !=
          0.0) {
        ++seen_pos;
        ap += static_cast<double>(seen_pos) / static_cast<double>(rank + 1);
      }
    }
    ap /= static_cast<double>(support);
    res.per_class_ap[static_cast<size_t>(c)] = ap;
    weighted_sum += ap * static_cast<double>(support);
    total_support += support;
  }
  if (total_support == 0)
    throw std::invalid_argument("support_weighted_map: no class has a positive label");
  res.map = weighted_sum / static_cast<double>(total_support);
  return res;
}

}  // namespace ccau::eval
