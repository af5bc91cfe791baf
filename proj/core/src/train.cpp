#include "cblm/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "cblm/errors.hpp"
#include "cblm/rng.hpp"

namespace cblm::train {

using nlohmann::json;

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (mask_rate <= 0.0 || mask_rate >= 1.0) throw ConfigError("mask_rate must lie in (0,1)");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

const TrainRecord& TrainReport::last_eval() const {
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (it->has_eval) return *it;
  }
  throw ConfigError("report contains no evaluation records");
}

void TrainReport::write_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) {
    json j;
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["mlm"] = r.mlm;
    j["concept"] = r.concept_term;
    j["orth"] = r.orth;
    j["total"] = r.total;
    j["grad_norm"] = r.grad_norm;
    j["clipped_norm"] = r.clipped_norm;
    if (r.has_eval) {
      j["val_concept_mse"] = r.val_concept_mse;
      j["val_perplexity"] = r.val_perplexity;
    }
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

TrainReport TrainReport::read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  TrainReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw FormatError(path + ": bad record at line " + std::to_string(lineno));
    }
    TrainRecord r;
    r.step = j.value("step", 0);
    r.lr = j.value("lr", 0.0);
    r.mlm = j.value("mlm", 0.0);
    r.concept_term = j.value("concept", 0.0);
    r.orth = j.value("orth", 0.0);
    r.total = j.value("total", 0.0);
    r.grad_norm = j.value("grad_norm", 0.0);
    r.clipped_norm = j.value("clipped_norm", 0.0);
    if (j.contains("val_concept_mse")) {
      r.has_eval = true;
      r.val_concept_mse = j["val_concept_mse"].get<std::vector<double>>();
      r.val_perplexity = j.value("val_perplexity", 0.0);
    }
    report.records.push_back(std::move(r));
  }
  return report;
}

AdamW::AdamW(const std::vector<Param<float>>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0f);
    v_.emplace_back(p.value.size(), 0.0f);
  }
}

void AdamW::step(std::vector<Param<float>>& params, double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1, t_);
  double bc2 = 1.0 - std::pow(beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.v;
    const auto& g = params[i].grad.v;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = g[j];
      double mj = beta1 * m[j] + (1.0 - beta1) * gj;
      double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      double mhat = mj / bc1;
      double vhat = vj / bc2;
      double wj = w[j];
      w[j] = static_cast<float>(wj - lr * (mhat / (std::sqrt(vhat) + eps) +
                                           weight_decay * wj));
    }
  }
}

namespace {

double global_grad_norm(const std::vector<Param<float>>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    for (float g : p.grad.v) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(acc);
}

}  // namespace

double clip_gradients(std::vector<Param<float>>& params, double clip) {
  double norm = global_grad_norm(params);
  if (norm > clip && norm > 0.0) {
    float scale = static_cast<float>(clip / norm);
    for (auto& p : params) {
      for (float& g : p.grad.v) g *= scale;
    }
  }
  return norm;
}

double warmup_lr(int step, const TrainConfig& cfg) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return (static_cast<double>(step) / cfg.warmup_steps) * cfg.learning_rate;
  }
  return cfg.learning_rate;
}

namespace {

// Pooled negative log-likelihood of `targets` at the given logits rows.
void accumulate_nll(const Tensor<float>& logits, const std::vector<int>& rows,
                    const std::vector<int>& targets, double* nll_sum, long* count) {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const float* row = logits.row(rows[r]);
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double denom = 0.0;
    for (int c = 0; c < logits.cols; ++c) denom += std::exp(row[c] - mx);
    double logp = row[targets[r]] - mx - std::log(denom);
    *nll_sum -= logp;
    ++*count;
  }
}

struct VariantRunner {
  model::CbModelF& m;
  const TrainConfig& cfg;
  bool uses_concepts;

  model::ForwardResult<float> run(const seqio::TokenSequence& masked,
                                  const seqio::TokenSequence& original,
                                  const concepts::ConceptVector* cv,
                                  const Tensor<float>* noise, bool build_losses) {
    model::ForwardOptions<float> opt;
    opt.build_losses = build_losses;
    opt.weights = cfg.weights;
    opt.embedding_noise = noise;
    switch (m.config().variant) {
      case model::Variant::CB:
        opt.mode = build_losses ? model::ForwardMode::train_independent
                                : model::ForwardMode::inference;
        opt.concepts = cv;
        return m.forward(masked, opt, &original);
      case model::Variant::C:
      case model::Variant::CC:
        return m.forward_conditional(masked, *cv, opt, &original);
      case model::Variant::AR:
        return m.forward_autoregressive(original, build_losses, noise);
    }
    throw ConfigError("unreachable variant");
  }
};

}  // namespace

TrainReport train(model::CbModelF& m, const corpus::Corpus& data, const TrainConfig& cfg,
                  std::vector<double>* max_activation) {
  cfg.validate();
  if (data.empty()) throw EmptyAfterFilterError("training corpus is empty");

  const auto& mcfg = m.config();
  bool uses_concepts = mcfg.variant != model::Variant::AR;
  bool has_head =
      mcfg.variant == model::Variant::CB || mcfg.variant == model::Variant::CC;

  for (const auto& ex : data) {
    if (ex.tokens.ids.empty()) throw ConfigError("corpus is not tokenized");
    if (uses_concepts) {
      if (!ex.concepts.normalized) throw ConfigError("corpus concepts are not normalized");
      if (ex.concepts.k() != mcfg.k) {
        throw ConfigError("corpus concept width does not match the model");
      }
    }
  }
  std::vector<double> scale = cfg.concept_scale;
  if (!scale.empty() && static_cast<int>(scale.size()) != mcfg.k) {
    throw ConfigError("concept_scale width does not match the model");
  }

  auto [train_set, val_set] = corpus::split_validation(data);
  auto train_count = train_set.size();

  auto scaled_concepts = [&](const concepts::ConceptVector& cv) {
    if (scale.empty()) return cv;
    concepts::ConceptVector out = cv;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= scale[i];
    return out;
  };

  AdamW opt(m.params());
  VariantRunner runner{m, cfg, uses_concepts};
  TrainReport report;
  std::vector<double> maxact(static_cast<std::size_t>(mcfg.k),
                             -std::numeric_limits<double>::infinity());

  for (int step = 1; step <= cfg.steps; ++step) {
    double lr = warmup_lr(step, cfg);
    m.zero_grads();

    Rng batch_rng = Rng::derive(cfg.seed, "batch", static_cast<std::uint64_t>(step));
    double mlm_sum = 0.0, concept_sum = 0.0, orth_sum = 0.0, total_sum = 0.0;

    for (int lane = 0; lane < cfg.batch_size; ++lane) {
      const auto& ex = train_set[batch_rng.below(train_count)];
      auto lane_u = static_cast<std::uint64_t>(lane);
      auto step_u = static_cast<std::uint64_t>(step);

      seqio::TokenSequence masked = ex.tokens;
      if (mcfg.variant != model::Variant::AR) {
        std::uint64_t mask_seed = Rng::derive(cfg.seed, "mask", step_u, lane_u).next_u64();
        masked = seqio::apply_mask(ex.tokens, cfg.mask_rate, mask_seed).first;
      }

      Rng noise_rng = Rng::derive(cfg.seed, "noise", step_u, lane_u);
      auto noise = model::embedding_noise<float>(masked.frame_length(), mcfg.d,
                                                 cfg.noise_sigma, noise_rng);

      concepts::ConceptVector cv;
      if (uses_concepts) cv = scaled_concepts(ex.concepts);
      auto res = runner.run(masked, ex.tokens, uses_concepts ? &cv : nullptr, &noise, true);

      int scaled = res.graph.scale(res.loss_total, 1.0f / static_cast<float>(cfg.batch_size));
      res.graph.backward(scaled);

      mlm_sum += res.mlm();
      concept_sum += res.concept_term();
      orth_sum += res.orth();
      total_sum += res.total();

      if (has_head) {
        const auto& chat = res.graph.val(res.chat);
        for (int i = 0; i < mcfg.k; ++i) {
          auto iu = static_cast<std::size_t>(i);
          maxact[iu] = std::max(maxact[iu], static_cast<double>(chat.v[iu]));
        }
      }
    }

    TrainRecord rec;
    rec.step = step;
    rec.lr = lr;
    rec.mlm = mlm_sum / cfg.batch_size;
    rec.concept_term = concept_sum / cfg.batch_size;
    rec.orth = orth_sum / cfg.batch_size;
    rec.total = total_sum / cfg.batch_size;
    if (!std::isfinite(rec.total)) {
      throw DivergenceError("non-finite loss at step " + std::to_string(step));
    }

    rec.grad_norm = clip_gradients(m.params(), cfg.clip_norm);
    rec.clipped_norm = global_grad_norm(m.params());
    opt.step(m.params(), lr);

    if ((step % cfg.eval_every == 0 || step == cfg.steps) && !val_set.empty()) {
      rec.has_eval = true;
      std::vector<double> mse_sum(static_cast<std::size_t>(mcfg.k), 0.0);
      std::vector<long> mse_count(static_cast<std::size_t>(mcfg.k), 0);
      double nll_sum = 0.0;
      long nll_count = 0;
      for (std::size_t vi = 0; vi < val_set.size(); ++vi) {
        const auto& ex = val_set[vi];
        seqio::TokenSequence masked = ex.tokens;
        if (mcfg.variant != model::Variant::AR) {
          std::uint64_t mask_seed = Rng::derive(cfg.seed, "val-mask", vi).next_u64();
          masked = seqio::apply_mask(ex.tokens, cfg.mask_rate, mask_seed).first;
        }
        concepts::ConceptVector cv;
        if (uses_concepts) cv = scaled_concepts(ex.concepts);
        auto res = runner.run(masked, ex.tokens, uses_concepts ? &cv : nullptr, nullptr, false);

        if (has_head) {
          const auto& chat = res.graph.val(res.chat);
          for (int i = 0; i < mcfg.k; ++i) {
            auto iu = static_cast<std::size_t>(i);
            if (!cv.observed[iu]) continue;
            double diff = static_cast<double>(chat.v[iu]) - cv.values[iu];
            mse_sum[iu] += diff * diff;
            ++mse_count[iu];
          }
        }

        std::vector<int> rows;
        std::vector<int> targets;
        if (mcfg.variant == model::Variant::AR) {
          for (int t = 0; t + 1 < res.frame; ++t) {
            rows.push_back(t);
            targets.push_back(ex.tokens.ids[static_cast<std::size_t>(t + 1)]);
          }
        } else {
          for (int r : res.masked_rows) {
            rows.push_back(r);
            targets.push_back(ex.tokens.ids[static_cast<std::size_t>(r - res.position_shift)]);
          }
        }
        accumulate_nll(res.graph.val(res.logits), rows, targets, &nll_sum, &nll_count);
      }
      rec.val_concept_mse.assign(static_cast<std::size_t>(mcfg.k), 0.0);
      for (int i = 0; i < mcfg.k; ++i) {
        auto iu = static_cast<std::size_t>(i);
        if (mse_count[iu] > 0) rec.val_concept_mse[iu] = mse_sum[iu] / mse_count[iu];
      }
      rec.val_perplexity = nll_count > 0 ? std::exp(nll_sum / nll_count) : 0.0;
    }

    report.records.push_back(std::move(rec));
  }

  if (max_activation != nullptr) {
    if (has_head) {
      max_activation->assign(maxact.begin(), maxact.end());
    } else {
      max_activation->clear();
    }
  }
  return report;
}

}  // namespace cblm::train
