#include "cblm/losses.hpp"

#include "cblm/graph.hpp"

namespace cblm::losses {

// All three losses evaluate through the same tape ops the training graph
// uses, so the trained quantities and the tested quantities cannot drift.

double mlm_loss(const Tensor<double>& logits, const std::vector<std::pair<int, int>>& targets) {
  Graph<double> g;
  int l = g.leaf(logits);
  return g.val(g.cross_entropy(l, targets)).v[0];
}

double concept_loss(const std::vector<double>& chat, const concepts::ConceptVector& c) {
  Graph<double> g;
  Tensor<double> pred(1, static_cast<int>(chat.size()));
  pred.v = chat;
  int p = g.leaf(pred);
  return g.val(g.mse_masked(p, c.values, c.observed)).v[0];
}

std::vector<double> concept_loss_grad(const std::vector<double>& chat,
                                      const concepts::ConceptVector& c) {
  Graph<double> g;
  Tensor<double> pred(1, static_cast<int>(chat.size()));
  pred.v = chat;
  int p = g.leaf(pred, true);
  int loss = g.mse_masked(p, c.values, c.observed);
  g.backward(loss);
  return g.grad(p).v;
}

double orthogonality_loss(const Tensor<double>& z, const Tensor<double>& h_tilde,
                          const std::vector<int>& rows) {
  Graph<double> g;
  int u = g.leaf(z);
  int v = g.leaf(h_tilde);
  return g.val(g.cos_orth(u, v, rows, kCosEps)).v[0];
}

double total_loss(double mlm, double concept_term, double orth, const LossWeights& w) {
  return mlm + w.alpha * concept_term + w.beta * orth;
}

}  // namespace cblm::losses
