#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cblm/concepts.hpp"
#include "cblm/graph.hpp"
#include "cblm/losses.hpp"
#include "cblm/rng.hpp"
#include "cblm/seqio.hpp"
#include "cblm/tensor.hpp"

namespace cblm::model {

enum class Variant { CB, C, CC, AR };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// How the concept head pools encoder states into h0.
enum class ConceptPool { cls, mean };

struct ModelConfig {
  int layers = 2;
  int d = 64;
  int heads = 4;
  int intermediate = 0;  // 0 means 4*d
  int max_len = 128;
  int vocab_size = 33;
  int k = 14;
  int concept_emb_dim = 2;
  Variant variant = Variant::CB;
  double embedding_noise_sigma = 0.01;
  std::uint64_t seed = 0;
  bool final_norm = true;
  ConceptPool concept_pool = ConceptPool::cls;
  double ln_eps = 1e-5;
  double rope_base = 10000.0;

  int intermediate_dim() const { return intermediate > 0 ? intermediate : 4 * d; }
  int concept_cols() const { return k * concept_emb_dim; }
  void validate() const;
};

enum class ForwardMode { train_independent, inference, intervened };

template <typename S>
struct ForwardOptions {
  ForwardMode mode = ForwardMode::inference;
  const concepts::ConceptVector* concepts = nullptr;   // normalized targets
  const std::vector<double>* chat_override = nullptr;  // intervened mode, size k
  bool build_losses = false;
  losses::LossWeights weights{};
  const Tensor<S>* embedding_noise = nullptr;  // (frame x d), training only
};

// Per-position encoder states plus the concept pathway for one sequence.
// Node handles index into `graph`; -1 marks an absent stage.
template <typename S>
struct ForwardResult {
  Graph<S> graph;
  int frame = 0;        // rows processed (frame, or frame + k for C/CC)
  int position_shift = 0;  // sequence position -> row index offset (C/CC tags)
  int emb = -1;
  int H = -1;
  int h0 = -1;
  int chat = -1;
  int z = -1;
  int z_pad = -1;
  int h_tilde = -1;
  int logits = -1;
  int loss_mlm = -1;
  int loss_concept = -1;
  int loss_orth = -1;
  int loss_total = -1;
  std::vector<int> masked_rows;   // rows of `logits` that were MASK inputs
  std::vector<S> chat_effective;  // values the decoder consumed (CB only)

  double loss_value(int node) const { return node < 0 ? 0.0 : static_cast<double>(graph.val(node).v[0]); }
  double mlm() const { return loss_value(loss_mlm); }
  double concept_term() const { return loss_value(loss_concept); }
  double orth() const { return loss_value(loss_orth); }
  double total() const { return loss_value(loss_total); }
};

template <typename S>
class CbModel {
 public:
  explicit CbModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param<S>>& params() { return params_; }
  const std::vector<Param<S>>& params() const { return params_; }
  Param<S>& param(const std::string& name);
  const Param<S>& param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grads();

  // Deterministic random initialization; streams keyed by parameter name.
  void init_parameters(std::uint64_t seed);

  // CB forward over one masked sequence. `targets` carries the pre-mask ids
  // when losses are requested.
  ForwardResult<S> forward(const seqio::TokenSequence& masked,
                           const ForwardOptions<S>& opt,
                           const seqio::TokenSequence* targets = nullptr);

  // C / CC forward: concepts become k tag rows after CLS.
  ForwardResult<S> forward_conditional(const seqio::TokenSequence& masked,
                                       const concepts::ConceptVector& c,
                                       const ForwardOptions<S>& opt,
                                       const seqio::TokenSequence* targets = nullptr);

  // AR forward: causal attention, rows predict the next token.
  ForwardResult<S> forward_autoregressive(const seqio::TokenSequence& x, bool build_loss,
                                          const Tensor<S>* noise = nullptr);

  // Stand-alone pieces of the pipeline (plain math, no tape).
  Tensor<S> encode(const seqio::TokenSequence& x);  // (padded len x d), PAD rows zero
  std::vector<S> predict_concepts(const Tensor<S>& h0) const;
  Tensor<S> known_embedding(const std::vector<S>& chat) const;  // (k x concept_emb_dim)
  Tensor<S> unknown_embedding(const Tensor<S>& H) const;        // row-wise MLP
  // Raw decoder response W^dec [z | h]; exactly linear in both halves.
  std::vector<S> decode_logits(const Tensor<S>& z, const S* h_tilde_row) const;
  std::vector<S> decode_probs(const Tensor<S>& z, const S* h_tilde_row) const;

 private:
  int encode_from(Graph<S>& g, int x, bool causal);
  void add_param(const std::string& name, int rows, int cols);

  ModelConfig cfg_;
  std::vector<Param<S>> params_;
  std::map<std::string, int> index_;
};

// Zero-mean Gaussian perturbation for token embeddings; sigma = 0 gives an
// all-zero tensor.
template <typename S>
Tensor<S> embedding_noise(int rows, int cols, double sigma, Rng& rng);

using CbModelF = CbModel<float>;
using CbModelD = CbModel<double>;

}  // namespace cblm::model
