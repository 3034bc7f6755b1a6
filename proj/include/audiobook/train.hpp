// SPDX-License-Identifier: Apache-2.0
//
// Staged teacher-forced training with AdamW, and autoregressive generation.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "audiobook/checkpoint.hpp"
#include "audiobook/error.hpp"
#include "audiobook/model.hpp"
#include "audiobook/rng.hpp"
#include "audiobook/sequence.hpp"

namespace audiobook {

struct TrainConfig {
  int stage = 1;
  double base_lr = 3e-3;  // learning rate of stages 1 and 2; stage 3 runs at a tenth of it
  int batch_size = 16;
  int steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup = 100;
  bool cosine = true;
  double heldout_fraction = 0.05;
  int heldout_cap = 256;
  int log_every = 100;
  int eval_every = 0;  // 0: held-out loss only at the start and end
  bool unmasked = false;  // ablation: train on every next-token target
  std::uint64_t seed = 1;

  double lr() const { return stage == 3 ? base_lr / 10.0 : base_lr; }

  void validate() const {
    if (stage < 1 || stage > 3) throw ValidationError("stage must be 1, 2 or 3");
    if (steps < 1) throw ValidationError("steps must be >= 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (!(base_lr > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) throw ValidationError("held-out fraction must lie in [0,1)");
    if (warmup < 0) throw ValidationError("warmup must be >= 0");
  }

  /// Learning rate at optimizer step t (0-based): linear warmup, then cosine decay to zero.
  double lr_at(int t) const {
    const double peak = lr();
    const int w = std::min(warmup, steps / 10);
    if (t < w) return peak * static_cast<double>(t + 1) / static_cast<double>(w);
    if (!cosine) return peak;
    const double frac = static_cast<double>(t - w) / static_cast<double>(std::max(1, steps - w));
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

/// A prepared training example.
struct Example {
  ModelInput input;
  std::vector<std::uint8_t> mask;
};

inline Example make_example(const TokenSequence& s, bool unmasked = false) {
  Example e{model_input(s), loss_mask(s)};
  if (unmasked) std::fill(e.mask.begin() + 1, e.mask.end(), std::uint8_t{1});
  return e;
}

inline double mean_loss(const Model& m, std::span<const Example> data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& e : data) s += m.loss(e.input, e.mask);
  return s / static_cast<double>(data.size());
}

/// Deterministic held-out split: a seeded permutation, the first k indices held out.
struct Split {
  std::vector<std::size_t> train, heldout;
};

inline Split split_indices(std::size_t n, double fraction, int cap, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, {tag("heldout-split")}));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  k = std::min<std::size_t>(k, static_cast<std::size_t>(std::max(0, cap)));
  if (n < 2) k = 0;
  Split s;
  s.heldout.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  std::sort(s.heldout.begin(), s.heldout.end());
  return s;
}

/// One AdamW update. Weight decay touches only slices marked for it.
inline void adamw_step(ModelCheckpoint& c, std::span<const double> grad, double lr, const TrainConfig& tc, std::int64_t t) {
  const ParamLayout L = param_layout(c.config);
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(t));
  for (const auto& s : L.slices) {
    const double decay = s.decay ? lr * tc.weight_decay : 0.0;
    for (std::size_t i = s.offset; i < s.offset + s.size(); ++i) {
      c.m[i] = tc.beta1 * c.m[i] + (1.0 - tc.beta1) * grad[i];
      c.v[i] = tc.beta2 * c.v[i] + (1.0 - tc.beta2) * grad[i] * grad[i];
      c.params[i] -= decay * c.params[i];
      c.params[i] -= lr * (c.m[i] / bc1) / (std::sqrt(c.v[i] / bc2) + tc.eps);
    }
  }
}

using TrainProgress = std::function<void(const TrainLogEntry&)>;

/// Runs steps x batch teacher-forced updates. Stages advance 1 -> 2 -> 3; a stage
/// may also be continued. Moments restart when a new stage begins.
inline ModelCheckpoint train_stage(const ModelCheckpoint& start, std::span<const TokenSequence> dataset,
                                   const TrainConfig& tc, const TrainProgress& progress = {}) {
  tc.validate();
  if (dataset.empty()) throw ValidationError("training dataset is empty");
  if (tc.stage != start.stage && tc.stage != start.stage + 1)
    throw ValidationError(fmt::format("stage {} cannot follow stage {}", tc.stage, start.stage));

  ModelCheckpoint c = start;
  const bool new_stage = tc.stage != start.stage;
  if (new_stage || c.m.size() != c.params.size()) {
    c.m.assign(c.params.size(), 0.0);
    c.v.assign(c.params.size(), 0.0);
    c.step = 0;
  }
  c.stage = tc.stage;
  c.seed = tc.seed;

  std::vector<Example> examples;
  examples.reserve(dataset.size());
  for (const auto& s : dataset) examples.push_back(make_example(s, tc.unmasked));
  const Split split = split_indices(examples.size(), tc.heldout_fraction, tc.heldout_cap, tc.seed);
  std::vector<Example> held;
  for (std::size_t i : split.heldout) held.push_back(examples[i]);

  Rng rng(derive_seed(tc.seed, {tag("batches"), static_cast<std::uint64_t>(tc.stage)}));
  if (!new_stage && !c.rng_state.empty()) rng.set_state(c.rng_state);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto record = [&](TrainLogEntry e) {
    c.log.push_back(e);
    if (progress) progress(e);
  };
  record({tc.stage, c.step, nan, mean_loss(c.model(), held), tc.lr_at(0)});

  ParamVector grad(c.params.size());
  double running = 0.0;
  int running_n = 0;
  for (int t = 0; t < tc.steps; ++t) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double batch_loss = 0.0;
    {
      const Model m = c.model();
      for (int b = 0; b < tc.batch_size; ++b) {
        const Example& e = examples[split.train[rng.below(split.train.size())]];
        batch_loss += m.loss(e.input, e.mask, grad, 1.0 / tc.batch_size);
      }
    }
    batch_loss /= tc.batch_size;
    const double lr = tc.lr_at(t);
    ++c.step;
    adamw_step(c, grad, lr, tc, c.step);
    running += batch_loss;
    ++running_n;
    const bool last = t + 1 == tc.steps;
    const bool eval = last || (tc.eval_every > 0 && (t + 1) % tc.eval_every == 0);
    if (eval || (tc.log_every > 0 && (t + 1) % tc.log_every == 0)) {
      record({tc.stage, c.step, running / running_n, eval ? mean_loss(c.model(), held) : nan, lr});
      running = 0.0;
      running_n = 0;
    }
  }
  c.rng_state = rng.state();
  return c;
}

/// First and last held-out losses recorded for a stage.
inline std::pair<double, double> heldout_endpoints(const ModelCheckpoint& c, int stage) {
  double first = std::numeric_limits<double>::quiet_NaN(), last = first;
  for (const auto& e : c.log) {
    if (e.stage != stage || std::isnan(e.heldout)) continue;
    if (std::isnan(first)) first = e.heldout;
    last = e.heldout;
  }
  return {first, last};
}

struct Sampling {
  enum class Kind : std::uint8_t { greedy, top_k } kind = Kind::greedy;
  int k = 1;
  double temperature = 1.0;  // 0 behaves as greedy
  std::uint64_t seed = 0;
};

/// Samples speech tokens after a prefix ending at T until E or max_len. Only
/// speech ids and E are eligible. Returns speech values (0-based, markers excluded).
inline SpeechTokens generate(const Model& model, const TokenSequence& prefix, const Sampling& sampling, int max_len,
                             const TokenIdMap& map) {
  if (prefix.ids.empty() || prefix.ids.back() != TokenIdMap::T) throw ValidationError("prefix must end at T");
  if (max_len < 0) throw ValidationError("max_len must be >= 0");
  if (sampling.kind == Sampling::Kind::top_k && sampling.k < 1) throw ValidationError("top-k needs k >= 1");
  SpeechTokens out;
  if (max_len == 0) return out;
  ModelInput in = model_input(prefix);
  Rng rng(derive_seed(sampling.seed, {tag("generate")}));
  const bool greedy = sampling.kind == Sampling::Kind::greedy || sampling.temperature <= 0.0;
  const TokenId lo = map.speech_offset(), hi = static_cast<TokenId>(map.vocab_size());
  std::vector<TokenId> cand;
  for (TokenId t = lo; t < hi; ++t) cand.push_back(t);
  cand.push_back(TokenIdMap::E);
  while (static_cast<int>(out.size()) < max_len && in.ids.size() < static_cast<std::size_t>(model.config().max_len)) {
    const Vec lg = model.next_logits(in);
    TokenId pick;
    if (greedy) {
      pick = cand.front();
      for (TokenId t : cand)
        if (lg(t) > lg(pick) || (lg(t) == lg(pick) && t < pick)) pick = t;
    } else {
      std::vector<TokenId> order = cand;
      std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return lg(a) > lg(b); });
      order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(sampling.k)));
      std::vector<double> w;
      const double mx = lg(order.front());
      for (TokenId t : order) w.push_back(std::exp((lg(t) - mx) / sampling.temperature));
      double u = rng.uniform() * std::accumulate(w.begin(), w.end(), 0.0);
      pick = order.back();
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (u < w[i]) {
          pick = order[i];
          break;
        }
        u -= w[i];
      }
    }
    if (pick == TokenIdMap::E) break;
    out.push_back(pick - lo);
    in.ids.push_back(pick);
    in.positions.push_back(in.positions.back() + 1);
    in.roles.push_back(static_cast<int>(Role::speech));
  }
  return out;
}

/// Generator interface: the trained model in practice, the oracle in tests.
using SpeechGenerator = std::function<SpeechTokens(const TokenSequence& prefix, const Sampling&, int max_len)>;

inline SpeechGenerator model_generator(const ModelCheckpoint& c, const TokenIdMap& map) {
  return [model = c.model(), map](const TokenSequence& prefix, const Sampling& s, int max_len) {
    return generate(model, prefix, s, max_len, map);
  };
}

}  // namespace audiobook
