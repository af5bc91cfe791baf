#pragma once

#include <utility>
#include <vector>

#include "cblm/concepts.hpp"
#include "cblm/tensor.hpp"

namespace cblm::losses {

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.1;
};

constexpr double kCosEps = 1e-8;

// Mean negative log-probability of `targets` (position, token id) under
// row-wise softmax of `logits`. Throws EmptyLossError on an empty target set.
double mlm_loss(const Tensor<double>& logits, const std::vector<std::pair<int, int>>& targets);

// Mean squared error of chat against the observed entries of c; 0 when
// nothing is observed.
double concept_loss(const std::vector<double>& chat, const concepts::ConceptVector& c);

// d(concept_loss)/d(chat); exactly zero at unobserved entries.
std::vector<double> concept_loss_grad(const std::vector<double>& chat,
                                      const concepts::ConceptVector& c);

// Mean over `rows` of |cos(z, h_tilde[row])| with an epsilon-guarded
// denominator; z is a row vector of the same width as h_tilde.
double orthogonality_loss(const Tensor<double>& z, const Tensor<double>& h_tilde,
                          const std::vector<int>& rows);

double total_loss(double mlm, double concept_term, double orth, const LossWeights& w);

}  // namespace cblm::losses
