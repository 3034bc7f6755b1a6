// SPDX-License-Identifier: Apache-2.0
//
// Small causal transformer over the flat token space with a speaker-vector
// prefix. Pre-norm blocks, GELU feed-forward, learned block-relative position
// and role embeddings. Forward and backward are written out by hand in double
// precision.
//
// Slot layout: slot 0 holds the projected speaker vector, slot j+1 holds token
// j. Logit row j therefore predicts token j, and row n predicts the token after
// the sequence.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fmt/format.h>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "audiobook/error.hpp"
#include "audiobook/rng.hpp"
#include "audiobook/sequence.hpp"
#include "audiobook/token_map.hpp"

namespace audiobook {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::RowVectorXd;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Vec>;
using CVecMap = Eigen::Map<const Vec>;

// Parameter-sized buffers live at Eigen's maximum alignment. Eigen peels vectorized
// reductions by address, so an arbitrary malloc alignment would change rounding
// from run to run.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelConfig {
  int vocab = 128;  // 32 markers/controls + 32 text + 64 speech
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int ff_mult = 4;
  int max_len = 256;      // tokens, excluding the speaker slot
  int max_position = 64;  // block-relative positions are clamped below this
  int n_roles = 5;
  int speaker_dim = 16;
  std::uint64_t seed = 1;

  int ff_dim() const { return d_model * ff_mult; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab <= TokenIdMap::kSpecialCount + TokenIdMap::kControlCount)
      throw ValidationError("model vocab too small");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || ff_mult < 1)
      throw ValidationError("model sizes must be positive");
    if (d_model % n_heads != 0) throw ValidationError("d_model must be divisible by n_heads");
    if (max_len < 1 || max_position < 1 || n_roles < 5 || speaker_dim < 1)
      throw ValidationError("bad model limits");
  }
  bool operator==(const ModelConfig&) const = default;
};

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool decay = false;  // weight decay applies to matrices and embeddings only
  std::size_t size() const { return rows * cols; }
};

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, qkv_w, qkv_b, o_w, o_b, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ParamLayout {
  std::vector<ParamSlice> slices;
  std::size_t total = 0;
  std::size_t tok, pos, role, spk_w, spk_b, lnf_g, lnf_b, out_w, out_b;
  std::vector<LayerOffsets> layers;

  const ParamSlice& find(std::string_view name) const {
    for (const auto& s : slices)
      if (s.name == name) return s;
    throw ValidationError("no parameter slice '" + std::string(name) + "'");
  }
};

inline ParamLayout param_layout(const ModelConfig& cfg) {
  cfg.validate();
  ParamLayout L;
  auto add = [&](std::string name, int rows, int cols, bool decay) {
    const std::size_t off = L.total;
    L.slices.push_back({std::move(name), off, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), decay});
    L.total += L.slices.back().size();
    return off;
  };
  const int d = cfg.d_model, F = cfg.ff_dim();
  L.tok = add("tok_emb", cfg.vocab, d, true);
  L.pos = add("pos_emb", cfg.max_position, d, true);
  L.role = add("role_emb", cfg.n_roles, d, true);
  L.spk_w = add("spk_proj.w", cfg.speaker_dim, d, true);
  L.spk_b = add("spk_proj.b", 1, d, false);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = fmt::format("layer{}.", l);
    LayerOffsets o{};
    o.ln1_g = add(p + "ln1.g", 1, d, false);
    o.ln1_b = add(p + "ln1.b", 1, d, false);
    o.qkv_w = add(p + "attn.qkv.w", d, 3 * d, true);
    o.qkv_b = add(p + "attn.qkv.b", 1, 3 * d, false);
    o.o_w = add(p + "attn.out.w", d, d, true);
    o.o_b = add(p + "attn.out.b", 1, d, false);
    o.ln2_g = add(p + "ln2.g", 1, d, false);
    o.ln2_b = add(p + "ln2.b", 1, d, false);
    o.ff1_w = add(p + "ff.in.w", d, F, true);
    o.ff1_b = add(p + "ff.in.b", 1, F, false);
    o.ff2_w = add(p + "ff.out.w", F, d, true);
    o.ff2_b = add(p + "ff.out.b", 1, d, false);
    L.layers.push_back(o);
  }
  L.lnf_g = add("ln_f.g", 1, d, false);
  L.lnf_b = add("ln_f.b", 1, d, false);
  L.out_w = add("head.w", d, cfg.vocab, true);
  L.out_b = add("head.b", 1, cfg.vocab, false);
  return L;
}

/// Closed form: L*(4d^2 + 2dF + 9d + F) + d*(2*vocab + P + R + D + 3) + vocab.
inline std::size_t param_count(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model), F = static_cast<std::size_t>(cfg.ff_dim());
  const std::size_t L = static_cast<std::size_t>(cfg.n_layers), V = static_cast<std::size_t>(cfg.vocab);
  return L * (4 * d * d + 2 * d * F + 9 * d + F) +
         d * (2 * V + static_cast<std::size_t>(cfg.max_position + cfg.n_roles + cfg.speaker_dim) + 3) + V;
}

/// Initialization: embeddings U(-1,1); weight matrices U(-1/sqrt(fan_in), +)
/// with the two residual output projections further scaled by 1/sqrt(2*layers);
/// biases 0; layer-norm gains 1.
inline ParamVector init_parameters(const ModelConfig& cfg) {
  const ParamLayout L = param_layout(cfg);
  ParamVector p(L.total, 0.0);
  Rng rng(derive_seed(cfg.seed, {tag("model-init")}));
  const double resid = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& s : L.slices) {
    double* x = p.data() + s.offset;
    const bool gain = s.name.ends_with(".g");
    const bool bias = s.name.ends_with(".b");
    if (gain) {
      std::fill(x, x + s.size(), 1.0);
    } else if (bias) {
      // zero
    } else if (s.name.ends_with("_emb")) {
      for (std::size_t i = 0; i < s.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    } else {
      double a = 1.0 / std::sqrt(static_cast<double>(s.rows));
      if (s.name.ends_with("attn.out.w") || s.name.ends_with("ff.out.w")) a *= resid;
      for (std::size_t i = 0; i < s.size(); ++i) x[i] = rng.uniform(-a, a);
    }
  }
  return p;
}

/// Everything the network reads from one sequence.
struct ModelInput {
  std::vector<TokenId> ids;
  std::vector<int> positions;
  std::vector<int> roles;
  ParamVector speaker;
};

inline ModelInput model_input(const TokenSequence& s) {
  ModelInput in;
  in.ids = s.ids;
  in.positions = block_positions(s.ids);
  in.roles.reserve(s.roles.size());
  for (Role r : s.roles) in.roles.push_back(static_cast<int>(r));
  in.speaker.assign(s.speaker.values.begin(), s.speaker.values.end());
  return in;
}

namespace detail {

inline constexpr double kLnEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double z) { return 0.5 * z * (1.0 + std::tanh(kGeluC * (z + 0.044715 * z * z * z))); }
inline double gelu_grad(double z) {
  const double u = kGeluC * (z + 0.044715 * z * z * z);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * z * z);
}

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

inline Mat layer_norm(const Mat& x, const double* g, const double* b, LnCache& c) {
  const Eigen::Index n = x.rows(), d = x.cols();
  c.xhat.resize(n, d);
  c.rstd.resize(n);
  Mat y(n, d);
  CVecMap G(g, d), B(b, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    c.rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    c.xhat.row(i) = (x.row(i).array() - mean) * c.rstd(i);
    y.row(i) = c.xhat.row(i).cwiseProduct(G) + B;
  }
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const double* g, const LnCache& c, double* dg, double* db) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  CVecMap G(g, d);
  VecMap dG(dg, d), dB(db, d);
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    dG += dy.row(i).cwiseProduct(c.xhat.row(i));
    dB += dy.row(i);
    const Vec dxhat = dy.row(i).cwiseProduct(G);
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(c.xhat.row(i)).mean();
    dx.row(i) = c.rstd(i) * (dxhat.array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

}  // namespace detail

/// Activations kept for the backward pass.
struct ForwardCache {
  struct Layer {
    Mat x_in;
    detail::LnCache ln1;
    Mat h1, qkv, att_out, x_mid;
    std::vector<Mat> probs;  // per head, N x N, causal
    detail::LnCache ln2;
    Mat h2, z, act;
  };
  std::vector<Layer> layers;
  Mat x_final;
  detail::LnCache lnf;
  Mat hf;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::span<const double> params) : cfg_(cfg), layout_(param_layout(cfg)), p_(params) {
    if (params.size() != layout_.total)
      throw ValidationError(fmt::format("parameter vector has {} values, config needs {}", params.size(), layout_.total));
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }

  void check_input(const ModelInput& in) const {
    if (in.ids.size() > static_cast<std::size_t>(cfg_.max_len))
      throw ValidationError(fmt::format("sequence length {} exceeds cap {}", in.ids.size(), cfg_.max_len));
    if (in.positions.size() != in.ids.size() || in.roles.size() != in.ids.size())
      throw ValidationError("model input arrays disagree in length");
    if (in.speaker.size() != static_cast<std::size_t>(cfg_.speaker_dim))
      throw ValidationError("speaker vector has wrong dimension");
    for (std::size_t j = 0; j < in.ids.size(); ++j) {
      if (in.ids[j] < 0 || in.ids[j] >= cfg_.vocab) throw ValidationError(fmt::format("token id out of range at {}", j));
      if (in.roles[j] < 0 || in.roles[j] >= cfg_.n_roles) throw ValidationError("role out of range");
    }
  }

  /// Final hidden states (N x d, N = ids+1), filling `cache` when given.
  Mat hidden(const ModelInput& in, ForwardCache* cache) const {
    check_input(in);
    const int d = cfg_.d_model, F = cfg_.ff_dim(), H = cfg_.n_heads, hd = cfg_.head_dim();
    const Eigen::Index N = static_cast<Eigen::Index>(in.ids.size()) + 1;
    Mat x(N, d);
    {
      CMatMap W(ptr(layout_.spk_w), cfg_.speaker_dim, d);
      CVecMap e(in.speaker.data(), cfg_.speaker_dim);
      x.row(0) = e * W + CVecMap(ptr(layout_.spk_b), d);
      for (Eigen::Index j = 1; j < N; ++j) {
        const std::size_t t = static_cast<std::size_t>(j - 1);
        x.row(j) = row(layout_.tok, in.ids[t]) + row(layout_.pos, clamp_pos(in.positions[t])) +
                   row(layout_.role, in.roles[t]);
      }
    }
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.layers.assign(static_cast<std::size_t>(cfg_.n_layers), {});
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const LayerOffsets& o = layout_.layers[static_cast<std::size_t>(l)];
      auto& lc = c.layers[static_cast<std::size_t>(l)];
      if (cache) lc.x_in = x;
      lc.h1 = detail::layer_norm(x, ptr(o.ln1_g), ptr(o.ln1_b), lc.ln1);
      lc.qkv = lc.h1 * CMatMap(ptr(o.qkv_w), d, 3 * d);
      lc.qkv.rowwise() += CVecMap(ptr(o.qkv_b), 3 * d);
      lc.att_out.resize(N, d);
      lc.probs.resize(static_cast<std::size_t>(H));
      for (int h = 0; h < H; ++h) {
        const auto Q = lc.qkv.middleCols(h * hd, hd);
        const auto K = lc.qkv.middleCols(d + h * hd, hd);
        const auto V = lc.qkv.middleCols(2 * d + h * hd, hd);
        Mat& P = lc.probs[static_cast<std::size_t>(h)];
        P = (Q * K.transpose()) * scale;
        for (Eigen::Index i = 0; i < N; ++i) {
          const double m = P.row(i).head(i + 1).maxCoeff();
          double s = 0.0;
          for (Eigen::Index j = 0; j <= i; ++j) s += (P(i, j) = std::exp(P(i, j) - m));
          P.row(i).head(i + 1) /= s;
          P.row(i).tail(N - i - 1).setZero();
        }
        lc.att_out.middleCols(h * hd, hd) = P * V;
      }
      x += lc.att_out * CMatMap(ptr(o.o_w), d, d);
      x.rowwise() += CVecMap(ptr(o.o_b), d);
      if (cache) lc.x_mid = x;
      lc.h2 = detail::layer_norm(x, ptr(o.ln2_g), ptr(o.ln2_b), lc.ln2);
      lc.z = lc.h2 * CMatMap(ptr(o.ff1_w), d, F);
      lc.z.rowwise() += CVecMap(ptr(o.ff1_b), F);
      lc.act = lc.z.unaryExpr([](double v) { return detail::gelu(v); });
      x += lc.act * CMatMap(ptr(o.ff2_w), F, d);
      x.rowwise() += CVecMap(ptr(o.ff2_b), d);
    }
    if (cache) c.x_final = x;
    Mat hf = detail::layer_norm(x, ptr(layout_.lnf_g), ptr(layout_.lnf_b), c.lnf);
    if (cache) c.hf = hf;
    return hf;
  }

  /// Logits for every slot: N x vocab.
  Mat logits(const ModelInput& in) const {
    Mat hf = hidden(in, nullptr);
    Mat out = hf * CMatMap(ptr(layout_.out_w), cfg_.d_model, cfg_.vocab);
    out.rowwise() += CVecMap(ptr(layout_.out_b), cfg_.vocab);
    return out;
  }

  /// Logits of the last slot only (next-token distribution after the prefix).
  Vec next_logits(const ModelInput& in) const {
    Mat hf = hidden(in, nullptr);
    Vec out = hf.row(hf.rows() - 1) * CMatMap(ptr(layout_.out_w), cfg_.d_model, cfg_.vocab);
    return out + CVecMap(ptr(layout_.out_b), cfg_.vocab);
  }

  /// Mean cross-entropy over targets t with mask[t]; row t of the logits predicts ids[t].
  /// When `grad` is non-null, adds scale * dLoss/dparams into it.
  double loss(const ModelInput& in, std::span<const std::uint8_t> mask, std::span<double> grad = {},
              double scale = 1.0) const {
    if (mask.size() != in.ids.size()) throw ValidationError("loss mask length mismatch");
    std::vector<Eigen::Index> targets;
    for (std::size_t t = 0; t < mask.size(); ++t)
      if (mask[t]) targets.push_back(static_cast<Eigen::Index>(t));
    if (targets.empty()) throw ValidationError("sequence has no speech positions");
    const bool want_grad = !grad.empty();
    if (want_grad && grad.size() != layout_.total) throw ValidationError("gradient buffer has wrong size");

    ForwardCache cache;
    const Mat hf = hidden(in, want_grad ? &cache : nullptr);
    const int d = cfg_.d_model, V = cfg_.vocab;
    const Eigen::Index M = static_cast<Eigen::Index>(targets.size());
    Mat sel(M, d);
    for (Eigen::Index r = 0; r < M; ++r) sel.row(r) = hf.row(targets[static_cast<std::size_t>(r)]);
    Mat lg = sel * CMatMap(ptr(layout_.out_w), d, V);
    lg.rowwise() += CVecMap(ptr(layout_.out_b), V);

    double total = 0.0;
    Mat dlg(M, V);
    for (Eigen::Index r = 0; r < M; ++r) {
      const double m = lg.row(r).maxCoeff();
      const Vec e = (lg.row(r).array() - m).exp();
      const double s = e.sum();
      const TokenId tgt = in.ids[static_cast<std::size_t>(targets[static_cast<std::size_t>(r)])];
      total += std::log(s) + m - lg(r, tgt);
      if (want_grad) {
        dlg.row(r) = e / s;
        dlg(r, tgt) -= 1.0;
      }
    }
    const double mean = total / static_cast<double>(M);
    if (!want_grad) return mean;

    dlg *= scale / static_cast<double>(M);
    MatMap(g(grad, layout_.out_w), d, V).noalias() += sel.transpose() * dlg;
    VecMap(g(grad, layout_.out_b), V) += dlg.colwise().sum();
    Mat dhf = Mat::Zero(hf.rows(), d);
    const Mat dsel = dlg * CMatMap(ptr(layout_.out_w), d, V).transpose();
    for (Eigen::Index r = 0; r < M; ++r) dhf.row(targets[static_cast<std::size_t>(r)]) += dsel.row(r);
    backward(in, cache, dhf, grad);
    return mean;
  }

 private:
  const double* ptr(std::size_t off) const { return p_.data() + off; }
  static double* g(std::span<double> grad, std::size_t off) { return grad.data() + off; }
  int clamp_pos(int p) const { return std::clamp(p, 0, cfg_.max_position - 1); }
  CVecMap row(std::size_t base, int r) const {
    return CVecMap(ptr(base + static_cast<std::size_t>(r) * static_cast<std::size_t>(cfg_.d_model)), cfg_.d_model);
  }

  void backward(const ModelInput& in, const ForwardCache& c, const Mat& dhf, std::span<double> grad) const {
    const int d = cfg_.d_model, F = cfg_.ff_dim(), H = cfg_.n_heads, hd = cfg_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Mat dx = detail::layer_norm_backward(dhf, ptr(layout_.lnf_g), c.lnf, g(grad, layout_.lnf_g), g(grad, layout_.lnf_b));
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const LayerOffsets& o = layout_.layers[static_cast<std::size_t>(l)];
      const auto& lc = c.layers[static_cast<std::size_t>(l)];
      // feed-forward branch
      MatMap(g(grad, o.ff2_w), F, d).noalias() += lc.act.transpose() * dx;
      VecMap(g(grad, o.ff2_b), d) += dx.colwise().sum();
      Mat dz = dx * CMatMap(ptr(o.ff2_w), F, d).transpose();
      dz = dz.cwiseProduct(lc.z.unaryExpr([](double v) { return detail::gelu_grad(v); }));
      MatMap(g(grad, o.ff1_w), d, F).noalias() += lc.h2.transpose() * dz;
      VecMap(g(grad, o.ff1_b), F) += dz.colwise().sum();
      const Mat dh2 = dz * CMatMap(ptr(o.ff1_w), d, F).transpose();
      dx += detail::layer_norm_backward(dh2, ptr(o.ln2_g), lc.ln2, g(grad, o.ln2_g), g(grad, o.ln2_b));
      // attention branch
      MatMap(g(grad, o.o_w), d, d).noalias() += lc.att_out.transpose() * dx;
      VecMap(g(grad, o.o_b), d) += dx.colwise().sum();
      const Mat datt = dx * CMatMap(ptr(o.o_w), d, d).transpose();
      Mat dqkv(lc.qkv.rows(), 3 * d);
      for (int h = 0; h < H; ++h) {
        const auto Q = lc.qkv.middleCols(h * hd, hd);
        const auto K = lc.qkv.middleCols(d + h * hd, hd);
        const auto V = lc.qkv.middleCols(2 * d + h * hd, hd);
        const Mat& P = lc.probs[static_cast<std::size_t>(h)];
        const auto dO = datt.middleCols(h * hd, hd);
        Mat dP = dO * V.transpose();
        dqkv.middleCols(2 * d + h * hd, hd) = P.transpose() * dO;
        const Eigen::VectorXd rs = (dP.cwiseProduct(P)).rowwise().sum();
        Mat dS = P.cwiseProduct(dP.colwise() - rs) * scale;
        dqkv.middleCols(h * hd, hd) = dS * K;
        dqkv.middleCols(d + h * hd, hd) = dS.transpose() * Q;
      }
      MatMap(g(grad, o.qkv_w), d, 3 * d).noalias() += lc.h1.transpose() * dqkv;
      VecMap(g(grad, o.qkv_b), 3 * d) += dqkv.colwise().sum();
      const Mat dh1 = dqkv * CMatMap(ptr(o.qkv_w), d, 3 * d).transpose();
      dx += detail::layer_norm_backward(dh1, ptr(o.ln1_g), lc.ln1, g(grad, o.ln1_g), g(grad, o.ln1_b));
    }
    // embeddings
    CVecMap e(in.speaker.data(), cfg_.speaker_dim);
    MatMap(g(grad, layout_.spk_w), cfg_.speaker_dim, d).noalias() += e.transpose() * dx.row(0);
    VecMap(g(grad, layout_.spk_b), d) += dx.row(0);
    for (std::size_t t = 0; t < in.ids.size(); ++t) {
      const auto dr = dx.row(static_cast<Eigen::Index>(t) + 1);
      auto acc = [&](std::size_t base, int r) {
        VecMap(g(grad, base + static_cast<std::size_t>(r) * static_cast<std::size_t>(d)), d) += dr;
      };
      acc(layout_.tok, in.ids[t]);
      acc(layout_.pos, clamp_pos(in.positions[t]));
      acc(layout_.role, in.roles[t]);
    }
  }

  ModelConfig cfg_;
  ParamLayout layout_;
  std::span<const double> p_;
};

}  // namespace audiobook
