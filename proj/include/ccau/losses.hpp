#pragma once

#include <map>
#include <vector>

#include "ccau/autograd.hpp"

namespace ccau::losses {

using ag::Var;

struct NceOptions {
  bool l2_normalize = false;  // Eq-faithful default: raw dot products
  double temperature = 1.0;   // applied only when normalizing is enabled
};

// NCE alignment for one ordered modality pair. anchors/candidates are
// [J, D] with matching (sample, block) row order; each anchor's positive is
// the candidate at its own row and every candidate row serves as a negative:
//   -sum_i log( exp(a_i . c_i) / sum_j exp(a_i . c_j) )
Var alignment_nce_loss(Var anchors, Var candidates, const NceOptions& opts = {});

// sum over all ordered pairs m != m' of embeddings[m] vs embeddings[m']
Var multi_modal_alignment_loss(const std::vector<Var>& embeddings_per_modality,
                               const NceOptions& opts = {});

// softmax-weighted pooling of one D x H' x W' grid (Eq. form); grid is given
// cell-major as [S, D], logits as [S]. Returns the pooled vector, and fills
// *probs with the softmax map when requested.
Var attention_pool(Var grid_cells, Var logits, double tau, std::vector<double>* probs = nullptr);

// L_c = L_v + lambda * L_a
Var compositional_loss(Var activity_loss, Var atomic_loss, double lambda);

// L_v / sigma_v^2 + L_a / sigma_a^2 + log(sigma_v * sigma_a), with the
// variances parameterized as log sigma^2 (trainable scalars)
Var uncertainty_weighted_loss(Var activity_loss, Var atomic_loss, Var log_sigma_v2,
                              Var log_sigma_a2);

// alpha * H(y, softmax(zs)) + beta * H(softmax(zt / tau), softmax(zs / tau)),
// averaged over the batch; teacher logits are plain values (no gradient)
Var distillation_loss(Var student_logits, const std::vector<double>& teacher_logits,
                      const std::vector<int64_t>& labels, double alpha, double beta, double tau);

// Dense predictive NCE: each predicted cell's positive is the true latent at
// the same (sample, step, cell); negatives are every other cell/step/sample.
// predicted/actual are matching [A, D] stacks; mean over anchors.
Var predictive_contrastive_loss(Var predicted_cells, Var actual_cells,
                                const NceOptions& opts = {});

}  // namespace ccau::losses
