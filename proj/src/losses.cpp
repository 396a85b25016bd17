#include "ccau/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ccau::losses {

using namespace ag;

namespace {

Var maybe_normalize_rows(Var x) {
  // x / ||x|| per row, composed from primitive ops so gradients flow
  const int64_t n = x->shape[0], d = x->shape[1];
  Var sq = mul(x, x);
  Var ones = constant({d, 1}, std::vector<double>(static_cast<size_t>(d), 1.0));
  Var norms = matmul(sq, ones);                      // [n,1] sum of squares
  Var inv = exp_(scale(log_(add_scalar(norms, 1e-12)), -0.5));  // 1/sqrt
  // broadcast [n,1] across columns via matmul with row of ones
  Var row_ones = constant({1, d}, std::vector<double>(static_cast<size_t>(d), 1.0));
  Var inv_full = matmul(inv, row_ones);              // [n,d]
  (void)n;
  return mul(x, inv_full);
}

Var nce_core(Var anchors, Var candidates, const NceOptions& opts) {
  if (anchors->shape.size() != 2 || candidates->shape.size() != 2)
    throw std::invalid_argument("nce loss expects [J, D] matrices");
  if (anchors->shape != candidates->shape)
    throw std::invalid_argument("nce loss: anchor/candidate index sets must match");
  const int64_t j = anchors->shape[0];
  Var a = anchors, c = candidates;
  if (opts.l2_normalize) {
    a = maybe_normalize_rows(a);
    c = maybe_normalize_rows(c);
  }
  Var logits = matmul(a, transpose(c));  // [J, J]
  if (opts.l2_normalize && opts.temperature != 1.0)
    logits = scale(logits, 1.0 / opts.temperature);
  std::vector<int64_t> diag(static_cast<size_t>(j));
  for (int64_t i = 0; i < j; ++i) diag[static_cast<size_t>(i)] = i * j + i;
  return neg(sum(take(log_softmax_rows(logits), std::move(diag))));
}

}  // namespace

Var alignment_nce_loss(Var anchors, Var candidates, const NceOptions& opts) {
  return nce_core(std::move(anchors), std::move(candidates), opts);
}

Var multi_modal_alignment_loss(const std::vector<Var>& embeddings_per_modality,
                               const NceOptions& opts) {
  if (embeddings_per_modality.size() < 2)
    throw std::invalid_argument("multi_modal_alignment_loss requires >= 2 modalities");
  Var total;
  for (size_t m = 0; m < embeddings_per_modality.size(); ++m) {
    for (size_t m2 = 0; m2 < embeddings_per_modality.size(); ++m2) {
      if (m == m2) continue;
      Var term = alignment_nce_loss(embeddings_per_modality[m], embeddings_per_modality[m2], opts);
      total = total ? add(total, term) : term;
    }
  }
  return total;
}

Var attention_pool(Var grid_cells, Var logits, double tau, std::vector<double>* probs) {
  if (grid_cells->shape.size() != 2)
    throw std::invalid_argument("attention_pool expects cell-major [S, D]");
  const int64_t s = grid_cells->shape[0];
  const int64_t d = grid_cells->shape[1];
  if (probs) *probs = softmax_groups(logits->val, s, tau);
  return reshape(attn_pool_cells(std::move(grid_cells), std::move(logits), s, tau), {d});
}

Var compositional_loss(Var activity_loss, Var atomic_loss, double lambda) {
  if (lambda < 0) throw std::invalid_argument("compositional_loss: lambda must be >= 0");
  return add(std::move(activity_loss), scale(std::move(atomic_loss), lambda));
}

Var uncertainty_weighted_loss(Var activity_loss, Var atomic_loss, Var log_sigma_v2,
                              Var log_sigma_a2) {
  // L_v * exp(-log sigma_v^2) + L_a * exp(-log sigma_a^2)
  //   + 0.5 * (log sigma_v^2 + log sigma_a^2)        [= log(sigma_v * sigma_a)]
  Var term_v = mul(std::move(activity_loss), exp_(neg(log_sigma_v2)));
  Var term_a = mul(std::move(atomic_loss), exp_(neg(log_sigma_a2)));
  Var reg = scale(add(log_sigma_v2, log_sigma_a2), 0.5);
  return add(add(term_v, term_a), reg);
}

Var distillation_loss(Var student_logits, const std::vector<double>& teacher_logits,
                      const std::vector<int64_t>& labels, double alpha, double beta, double tau) {
  if (student_logits->shape.size() != 2)
    throw std::invalid_argument("distillation_loss expects [B, C] student logits");
  const int64_t b = student_logits->shape[0], c = student_logits->shape[1];
  if (static_cast<int64_t>(teacher_logits.size()) != b * c)
    throw std::invalid_argument("distillation_loss: teacher/student shape mismatch");
  if (tau <= 0) throw std::invalid_argument("distillation_loss: tau must be positive");

  Var hard = cross_entropy_mean(student_logits, labels);

  // teacher distribution softened at tau, held constant
  std::vector<double> pt(teacher_logits.size());
  for (int64_t r = 0; r < b; ++r) {
    const double* z = teacher_logits.data() + r * c;
    double m = z[0];
    for (int64_t k = 1; k < c; ++k) m = std::max(m, z[k]);
    double s = 0.0;
    for (int64_t k = 0; k < c; ++k) s += std::exp((z[k] - m) / tau);
    for (int64_t k = 0; k < c; ++k)
      pt[static_cast<size_t>(r * c + k)] = std::exp((z[k] - m) / tau) / s;
  }
  Var soft_logp = log_softmax_rows(scale(student_logits, 1.0 / tau));
  Var soft = scale(sum(mul(constant({b, c}, std::move(pt)), soft_logp)),
                   -1.0 / static_cast<double>(b));

  return add(scale(hard, alpha), scale(soft, beta));
}

Var predictive_contrastive_loss(Var predicted_cells, Var actual_cells, const NceOptions& opts) {
  if (!predicted_cells || predicted_cells->shape.empty() || predicted_cells->shape[0] == 0)
    throw std::invalid_argument("predictive_contrastive_loss: no prediction steps");
  const int64_t anchors = predicted_cells->shape[0];
  Var total = nce_core(std::move(predicted_cells), std::move(actual_cells), opts);
  return scale(total, 1.0 / static_cast<double>(anchors));
}

}  // namespace ccau::losses
