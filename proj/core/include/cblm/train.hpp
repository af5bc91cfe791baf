#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cblm/checkpoint.hpp"
#include "cblm/corpus.hpp"
#include "cblm/losses.hpp"
#include "cblm/model.hpp"
#include "cblm/tensor.hpp"

namespace cblm::train {

struct TrainConfig {
  int steps = 3000;
  int batch_size = 16;
  double mask_rate = 0.25;
  double learning_rate = 1e-3;
  double clip_norm = 0.5;
  int warmup_steps = 100;
  losses::LossWeights weights{};
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  int eval_every = 200;
  // Per-concept multiplier applied to normalized targets before training;
  // 1.0 everywhere is a healthy run. Deliberately broken scales reproduce
  // concept-pipeline bugs end to end.
  std::vector<double> concept_scale;

  void validate() const;
};

struct TrainRecord {
  int step = 0;
  double lr = 0.0;
  double mlm = 0.0;
  double concept_term = 0.0;
  double orth = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
  bool has_eval = false;
  std::vector<double> val_concept_mse;
  double val_perplexity = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> records;

  const TrainRecord& last_eval() const;
  void write_jsonl(const std::string& path) const;
  static TrainReport read_jsonl(const std::string& path);
};

// Decoupled weight-decay Adam over the model's parameter list.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  explicit AdamW(const std::vector<Param<float>>& params);
  void step(std::vector<Param<float>>& params, double lr);

 private:
  int t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

// Scales all gradients so the global norm is at most clip; returns the
// pre-clip norm.
double clip_gradients(std::vector<Param<float>>& params, double clip);

// Linear warmup: (step / warmup) * lr for step <= warmup, then lr. Steps
// are 1-based.
double warmup_lr(int step, const TrainConfig& cfg);

// Runs the training loop matching the model's variant: CB trains with the
// independent concept path, C/CC condition on concepts, AR predicts next
// tokens. The corpus must hold normalized concepts and tokens. Returns the
// report; max_activation (when given) collects the per-concept maximum of
// predicted activations seen during training.
TrainReport train(model::CbModelF& m, const corpus::Corpus& data, const TrainConfig& cfg,
                  std::vector<double>* max_activation = nullptr);

}  // namespace cblm::train
