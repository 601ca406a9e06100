#pragma once

#include "diffcap/embedding.hpp"
#include "diffcap/types.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffcap {

struct DenoiserConfig {
  int embed_dim = 128;  // H
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ff_mult = 4;
  int img_len = 16;
  int cap_len = 18;
  int max_timestep = 2000;
  double dropout = 0.0;
  int vocab_size = 0;
  FeatureSpec features;

  int seq_len() const { return img_len + cap_len; }
  int max_len() const { return std::max(img_len, cap_len); }
  int head_dim() const { return d_model / n_heads; }
  int ff_dim() const { return d_model * ff_mult; }

  void validate() const {
    if (embed_dim < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || ff_mult < 1)
      throw std::invalid_argument("denoiser dimensions must be positive");
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
    if (img_len < 1 || cap_len < 1 || max_timestep < 1)
      throw std::invalid_argument("sequence lengths and T_max must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0,1)");
    if (vocab_size < 5) throw std::invalid_argument("vocabulary too small");
    if (features.width() < 2) throw std::invalid_argument("empty patch feature spec");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

/// Parameters of one pre-norm transformer block.
template <typename Scalar>
struct LayerParams {
  Matrix<Scalar> ln1_g, ln1_b;
  Matrix<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix<Scalar> ln2_g, ln2_b;
  Matrix<Scalar> w1, b1, w2, b2;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "ln1.gain", self.ln1_g);
    f(prefix + "ln1.bias", self.ln1_b);
    f(prefix + "attn.wq", self.wq);
    f(prefix + "attn.bq", self.bq);
    f(prefix + "attn.wk", self.wk);
    f(prefix + "attn.bk", self.bk);
    f(prefix + "attn.wv", self.wv);
    f(prefix + "attn.bv", self.bv);
    f(prefix + "attn.wo", self.wo);
    f(prefix + "attn.bo", self.bo);
    f(prefix + "ln2.gain", self.ln2_g);
    f(prefix + "ln2.bias", self.ln2_b);
    f(prefix + "ff.w1", self.w1);
    f(prefix + "ff.b1", self.b1);
    f(prefix + "ff.w2", self.w2);
    f(prefix + "ff.b2", self.b2);
  }
};

/// Every trainable tensor of f_theta, including the co-trained embedding table.
template <typename Scalar>
struct DenoiserParams {
  EmbeddingTable<Scalar> embedding;
  Matrix<Scalar> in_w, in_b;
  Matrix<Scalar> time_w1, time_b1, time_w2, time_b2;
  std::vector<LayerParams<Scalar>> layers;
  Matrix<Scalar> final_g, final_b;
  Matrix<Scalar> out_w, out_b;

  /// Calls f(name, tensor) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  long parameter_count() const {
    long n = 0;
    visit([&](const std::string&, const Matrix<Scalar>& m) { n += m.size(); });
    return n;
  }

  void set_zero() {
    visit([](const std::string&, Matrix<Scalar>& m) { m.setZero(); });
  }

  static DenoiserParams zeros_like(const DenoiserParams& o) {
    DenoiserParams z = o;
    z.set_zero();
    return z;
  }

  template <typename Other>
  DenoiserParams<Other> cast() const {
    DenoiserParams<Other> out;
    out.embedding.features = embedding.features;
    out.layers.resize(layers.size());
    std::vector<const Matrix<Scalar>*> src;
    visit([&](const std::string&, const Matrix<Scalar>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.visit([&](const std::string&, Matrix<Other>& m) { m = src[i++]->template cast<Other>(); });
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    self.embedding.visit(f);
    f("input.w", self.in_w);
    f("input.b", self.in_b);
    f("time.w1", self.time_w1);
    f("time.b1", self.time_b1);
    f("time.w2", self.time_w2);
    f("time.b2", self.time_b2);
    for (std::size_t l = 0; l < self.layers.size(); ++l)
      LayerParams<Scalar>::visit(self.layers[l], "layer" + std::to_string(l) + ".", f);
    f("final_ln.gain", self.final_g);
    f("final_ln.bias", self.final_b);
    f("output.w", self.out_w);
    f("output.b", self.out_b);
  }
};

/// Closed-form parameter count:
///   (V + P + 2 + L_max) H                      embedding table
/// + H d + d                                    input projection
/// + 2 (d^2 + d)                                timestep MLP
/// + n_layers (4 d^2 + 2 f d^2 + 9 d + f d)     blocks (f = ff_mult)
/// + 2 d + d H + H                              final norm and output projection
inline long expected_parameter_count(const DenoiserConfig& c) {
  const long H = c.embed_dim, d = c.d_model, f = c.ff_mult;
  const long table = (c.vocab_size + c.features.width() + 2L + c.max_len()) * H;
  const long block = 4 * d * d + 2 * f * d * d + 9 * d + f * d;
  return table + (H * d + d) + 2 * (d * d + d) + c.n_layers * block + (2 * d + d * H + H);
}

namespace detail {

template <typename Scalar>
void uniform_fill(Matrix<Scalar>& m, Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

// Glorot-uniform bound scaled by `gain`.
inline double glorot(Eigen::Index fan_in, Eigen::Index fan_out, double gain = 1.0) {
  return gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

/// Initialization:
///  - token rows U(-sqrt3, sqrt3) (unit variance); patch projector Glorot;
///    modality/position rows unit-variance uniform scaled by 0.1
///  - linear weights Glorot-uniform with gain 1, except the residual output
///    projections (attn.wo, ff.w2) with gain 1/sqrt(2 n_layers)
///  - biases 0, layer-norm gains 1
template <typename Scalar>
DenoiserParams<Scalar> init_params(const DenoiserConfig& c, Rng& rng) {
  c.validate();
  using detail::glorot;
  using detail::uniform_fill;
  const long H = c.embed_dim, d = c.d_model, F = c.ff_dim();
  const double unit = std::sqrt(3.0);
  const double resid_gain = 1.0 / std::sqrt(2.0 * c.n_layers);
  auto zeros = [](Eigen::Index r, Eigen::Index k) { return Matrix<Scalar>::Zero(r, k).eval(); };
  auto ones = [](Eigen::Index r, Eigen::Index k) { return Matrix<Scalar>::Ones(r, k).eval(); };

  DenoiserParams<Scalar> p;
  p.embedding.features = c.features;
  uniform_fill(p.embedding.tokens, c.vocab_size, H, unit, rng);
  uniform_fill(p.embedding.patch_projector, c.features.width(), H,
               glorot(c.features.width(), H), rng);
  uniform_fill(p.embedding.modality, 2, H, 0.1 * unit, rng);
  uniform_fill(p.embedding.position, c.max_len(), H, 0.1 * unit, rng);
  uniform_fill(p.in_w, H, d, glorot(H, d), rng);
  p.in_b = zeros(1, d);
  uniform_fill(p.time_w1, d, d, glorot(d, d), rng);
  p.time_b1 = zeros(1, d);
  uniform_fill(p.time_w2, d, d, glorot(d, d), rng);
  p.time_b2 = zeros(1, d);
  p.layers.resize(c.n_layers);
  for (auto& L : p.layers) {
    L.ln1_g = ones(1, d);
    L.ln1_b = zeros(1, d);
    uniform_fill(L.wq, d, d, glorot(d, d), rng);
    L.bq = zeros(1, d);
    uniform_fill(L.wk, d, d, glorot(d, d), rng);
    L.bk = zeros(1, d);
    uniform_fill(L.wv, d, d, glorot(d, d), rng);
    L.bv = zeros(1, d);
    uniform_fill(L.wo, d, d, glorot(d, d, resid_gain), rng);
    L.bo = zeros(1, d);
    L.ln2_g = ones(1, d);
    L.ln2_b = zeros(1, d);
    uniform_fill(L.w1, d, F, glorot(d, F), rng);
    L.b1 = zeros(1, F);
    uniform_fill(L.w2, F, d, glorot(F, d, resid_gain), rng);
    L.b2 = zeros(1, d);
  }
  p.final_g = ones(1, d);
  p.final_b = zeros(1, d);
  uniform_fill(p.out_w, d, H, glorot(d, H), rng);
  p.out_b = zeros(1, H);
  return p;
}

/// Throws if any tensor shape disagrees with the config or holds non-finite values.
template <typename Scalar>
void check_params(const DenoiserParams<Scalar>& p, const DenoiserConfig& c) {
  c.validate();
  if (static_cast<int>(p.layers.size()) != c.n_layers)
    throw std::invalid_argument("layer count does not match config");
  const long H = c.embed_dim, d = c.d_model, F = c.ff_dim();
  auto expect = [](const Matrix<Scalar>& m, long r, long k, const char* name) {
    if (m.rows() != r || m.cols() != k)
      throw std::invalid_argument(std::string("tensor ") + name + " has the wrong shape");
    if (!m.allFinite()) throw std::invalid_argument(std::string("tensor ") + name + " is not finite");
  };
  if (!(p.embedding.features == c.features)) throw std::invalid_argument("feature spec mismatch");
  expect(p.embedding.tokens, c.vocab_size, H, "embedding.tokens");
  expect(p.embedding.patch_projector, c.features.width(), H, "embedding.patch_projector");
  expect(p.embedding.modality, 2, H, "embedding.modality");
  expect(p.embedding.position, c.max_len(), H, "embedding.position");
  expect(p.in_w, H, d, "input.w");
  expect(p.in_b, 1, d, "input.b");
  expect(p.time_w1, d, d, "time.w1");
  expect(p.time_b1, 1, d, "time.b1");
  expect(p.time_w2, d, d, "time.w2");
  expect(p.time_b2, 1, d, "time.b2");
  for (const auto& L : p.layers) {
    expect(L.ln1_g, 1, d, "ln1.gain");
    expect(L.ln1_b, 1, d, "ln1.bias");
    expect(L.wq, d, d, "attn.wq");
    expect(L.bq, 1, d, "attn.bq");
    expect(L.wk, d, d, "attn.wk");
    expect(L.bk, 1, d, "attn.bk");
    expect(L.wv, d, d, "attn.wv");
    expect(L.bv, 1, d, "attn.bv");
    expect(L.wo, d, d, "attn.wo");
    expect(L.bo, 1, d, "attn.bo");
    expect(L.ln2_g, 1, d, "ln2.gain");
    expect(L.ln2_b, 1, d, "ln2.bias");
    expect(L.w1, d, F, "ff.w1");
    expect(L.b1, 1, F, "ff.b1");
    expect(L.w2, F, d, "ff.w2");
    expect(L.b2, 1, d, "ff.b2");
  }
  expect(p.final_g, 1, d, "final_ln.gain");
  expect(p.final_b, 1, d, "final_ln.bias");
  expect(p.out_w, d, H, "output.w");
  expect(p.out_b, 1, H, "output.b");
}

namespace detail {

constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
void layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, const Matrix<Scalar>& bias,
                Matrix<Scalar>& y, Matrix<Scalar>& xhat, Matrix<Scalar>& rstd) {
  const Eigen::Index n = x.cols();
  xhat.resize(x.rows(), n);
  rstd.resize(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().sum() / static_cast<Scalar>(n);
    rstd(r, 0) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r, 0);
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const Matrix<Scalar>& xhat,
                                   const Matrix<Scalar>& rstd, const Matrix<Scalar>& gain,
                                   Matrix<Scalar>& dgain, Matrix<Scalar>& dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Matrix<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar m1 = dxhat.row(r).mean();
    const Scalar m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
    dx.row(r) = rstd(r, 0) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

// tanh-approximated GELU.
template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& u) {
  const Scalar k = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar c = static_cast<Scalar>(0.044715);
  return (Scalar(0.5) * u.array() *
          (Scalar(1) + (k * (u.array() + c * u.array().cube())).tanh()))
      .matrix();
}

template <typename Scalar>
Matrix<Scalar> gelu_backward(const Matrix<Scalar>& u, const Matrix<Scalar>& dg) {
  const Scalar k = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar c = static_cast<Scalar>(0.044715);
  auto th = (k * (u.array() + c * u.array().cube())).tanh();
  auto deriv = Scalar(0.5) * (Scalar(1) + th) +
               Scalar(0.5) * u.array() * (Scalar(1) - th.square()) * k *
                   (Scalar(1) + Scalar(3) * c * u.array().square());
  return (dg.array() * deriv).matrix();
}

template <typename Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& z) {
  return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
}

template <typename Scalar>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix<Scalar> m(rows, cols);
  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : Scalar(0);
  return m;
}

}  // namespace detail

/// Sinusoidal embedding of timestep t (1 x width): [sin(t w_i), cos(t w_i)],
/// w_i = 10000^(-i / (width/2)).
template <typename Scalar>
RowVector<Scalar> timestep_embedding(int t, int width) {
  RowVector<Scalar> e = RowVector<Scalar>::Zero(width);
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
    e(i) = static_cast<Scalar>(std::sin(t * freq));
    e(half + i) = static_cast<Scalar>(std::cos(t * freq));
  }
  return e;
}

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> input, ln1_xhat, ln1_rstd, ln1_out;
  Matrix<Scalar> q, k, v, attn;
  std::vector<Matrix<Scalar>> probs;  // batch * heads, each L x L
  Matrix<Scalar> attn_mask;
  Matrix<Scalar> mid, ln2_xhat, ln2_rstd, ln2_out, ff_pre, ff_act, ff_mask;
};

/// Activations retained by a forward pass for the backward pass.
template <typename Scalar>
struct ForwardCache {
  Matrix<Scalar> input;
  Matrix<Scalar> time_sin, time_pre, time_act;
  std::vector<LayerCache<Scalar>> layers;
  Matrix<Scalar> final_in, final_xhat, final_rstd, final_out;
};

/// Batched forward pass. `x` stacks B sequences of config.seq_len() rows;
/// timesteps[b] conditions sequence b. Attention is unmasked within each
/// sequence. Pass `cache` to retain activations, `dropout_rng` to enable
/// dropout (training only).
template <typename Scalar>
Matrix<Scalar> denoiser_forward(const DenoiserParams<Scalar>& p, const DenoiserConfig& c,
                                const Matrix<Scalar>& x, std::span<const int> timesteps,
                                ForwardCache<Scalar>* cache = nullptr,
                                Rng* dropout_rng = nullptr) {
  const int L = c.seq_len();
  const int B = static_cast<int>(timesteps.size());
  const int d = c.d_model, nh = c.n_heads, dh = c.head_dim();
  if (x.rows() != static_cast<Eigen::Index>(B) * L || x.cols() != c.embed_dim)
    throw std::invalid_argument("denoiser input has the wrong shape");
  for (int t : timesteps)
    if (t < 1 || t > c.max_timestep) throw std::out_of_range("timestep outside 1..T_max");
  if (!x.allFinite()) throw std::domain_error("non-finite denoiser input");
  const bool drop = dropout_rng != nullptr && c.dropout > 0.0;
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  Matrix<Scalar> sin_t(B, d);
  for (int b = 0; b < B; ++b) sin_t.row(b) = timestep_embedding<Scalar>(timesteps[b], d);
  Matrix<Scalar> time_pre = (sin_t * p.time_w1).rowwise() + p.time_b1.row(0);
  Matrix<Scalar> time_act = time_pre.cwiseProduct(detail::sigmoid(time_pre));
  Matrix<Scalar> temb = (time_act * p.time_w2).rowwise() + p.time_b2.row(0);

  // Segment frame (modality + position) is re-added here: at large t the
  // caption latent is almost pure noise and would otherwise lose row identity.
  const Matrix<Scalar> frame = segment_frame(p.embedding, c.img_len, c.cap_len);
  Matrix<Scalar> u = x;
  for (int b = 0; b < B; ++b) u.middleRows(static_cast<Eigen::Index>(b) * L, L) += frame;
  Matrix<Scalar> h = (u * p.in_w).rowwise() + p.in_b.row(0);
  for (int b = 0; b < B; ++b) h.middleRows(static_cast<Eigen::Index>(b) * L, L).rowwise() += temb.row(b);

  if (cache) {
    cache->input = std::move(u);
    cache->time_sin = sin_t;
    cache->time_pre = time_pre;
    cache->time_act = time_act;
    cache->layers.assign(c.n_layers, {});
  }

  for (int l = 0; l < c.n_layers; ++l) {
    const auto& P = p.layers[l];
    LayerCache<Scalar> local;
    LayerCache<Scalar>& lc = cache ? cache->layers[l] : local;
    lc.input = h;
    detail::layer_norm(h, P.ln1_g, P.ln1_b, lc.ln1_out, lc.ln1_xhat, lc.ln1_rstd);
    lc.q = (lc.ln1_out * P.wq).rowwise() + P.bq.row(0);
    lc.k = (lc.ln1_out * P.wk).rowwise() + P.bk.row(0);
    lc.v = (lc.ln1_out * P.wv).rowwise() + P.bv.row(0);
    lc.attn.resize(h.rows(), d);
    if (cache) lc.probs.resize(static_cast<std::size_t>(B) * nh);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
      for (int hd = 0; hd < nh; ++hd) {
        Matrix<Scalar> s = lc.q.block(r0, hd * dh, L, dh) * lc.k.block(r0, hd * dh, L, dh).transpose();
        s *= scale;
        for (int r = 0; r < L; ++r) {
          s.row(r).array() -= s.row(r).maxCoeff();
          s.row(r) = s.row(r).array().exp();
          s.row(r) /= s.row(r).sum();
        }
        lc.attn.block(r0, hd * dh, L, dh).noalias() = s * lc.v.block(r0, hd * dh, L, dh);
        if (cache) lc.probs[static_cast<std::size_t>(b) * nh + hd] = std::move(s);
      }
    }
    Matrix<Scalar> branch = (lc.attn * P.wo).rowwise() + P.bo.row(0);
    if (drop) {
      lc.attn_mask = detail::dropout_mask<Scalar>(branch.rows(), branch.cols(), c.dropout, *dropout_rng);
      branch = branch.cwiseProduct(lc.attn_mask);
    }
    h += branch;
    lc.mid = h;
    detail::layer_norm(h, P.ln2_g, P.ln2_b, lc.ln2_out, lc.ln2_xhat, lc.ln2_rstd);
    lc.ff_pre = (lc.ln2_out * P.w1).rowwise() + P.b1.row(0);
    lc.ff_act = detail::gelu(lc.ff_pre);
    branch = (lc.ff_act * P.w2).rowwise() + P.b2.row(0);
    if (drop) {
      lc.ff_mask = detail::dropout_mask<Scalar>(branch.rows(), branch.cols(), c.dropout, *dropout_rng);
      branch = branch.cwiseProduct(lc.ff_mask);
    }
    h += branch;
  }

  Matrix<Scalar> normed, xhat, rstd;
  detail::layer_norm(h, p.final_g, p.final_b, normed, xhat, rstd);
  Matrix<Scalar> out = (normed * p.out_w).rowwise() + p.out_b.row(0);
  if (cache) {
    cache->final_in = std::move(h);
    cache->final_xhat = std::move(xhat);
    cache->final_rstd = std::move(rstd);
    cache->final_out = std::move(normed);
  }
  return out;
}

/// Backward pass of denoiser_forward. Accumulates into `grad` and returns the
/// gradient with respect to the input rows.
template <typename Scalar>
Matrix<Scalar> denoiser_backward(const DenoiserParams<Scalar>& p, const DenoiserConfig& c,
                                 const ForwardCache<Scalar>& cache, const Matrix<Scalar>& d_out,
                                 DenoiserParams<Scalar>& grad) {
  const int L = c.seq_len();
  const int B = static_cast<int>(cache.time_sin.rows());
  const int nh = c.n_heads, dh = c.head_dim();
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  grad.out_w.noalias() += cache.final_out.transpose() * d_out;
  grad.out_b += d_out.colwise().sum();
  Matrix<Scalar> d_normed = d_out * p.out_w.transpose();
  Matrix<Scalar> dh_ = detail::layer_norm_backward(d_normed, cache.final_xhat, cache.final_rstd,
                                                   p.final_g, grad.final_g, grad.final_b);

  for (int l = c.n_layers - 1; l >= 0; --l) {
    const auto& P = p.layers[l];
    auto& G = grad.layers[l];
    const auto& lc = cache.layers[l];

    // feed-forward branch
    Matrix<Scalar> d_branch = lc.ff_mask.size() ? dh_.cwiseProduct(lc.ff_mask).eval() : dh_;
    G.w2.noalias() += lc.ff_act.transpose() * d_branch;
    G.b2 += d_branch.colwise().sum();
    const Matrix<Scalar> d_act = d_branch * P.w2.transpose();
    Matrix<Scalar> d_pre = detail::gelu_backward(lc.ff_pre, d_act);
    G.w1.noalias() += lc.ln2_out.transpose() * d_pre;
    G.b1 += d_pre.colwise().sum();
    Matrix<Scalar> d_ln2 = d_pre * P.w1.transpose();
    dh_ += detail::layer_norm_backward(d_ln2, lc.ln2_xhat, lc.ln2_rstd, P.ln2_g, G.ln2_g, G.ln2_b);

    // attention branch
    d_branch = lc.attn_mask.size() ? dh_.cwiseProduct(lc.attn_mask).eval() : dh_;
    G.wo.noalias() += lc.attn.transpose() * d_branch;
    G.bo += d_branch.colwise().sum();
    Matrix<Scalar> d_attn = d_branch * P.wo.transpose();
    Matrix<Scalar> dq(lc.q.rows(), lc.q.cols()), dk(lc.k.rows(), lc.k.cols()), dv(lc.v.rows(), lc.v.cols());
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
      for (int hd = 0; hd < nh; ++hd) {
        const Matrix<Scalar>& prob = lc.probs[static_cast<std::size_t>(b) * nh + hd];
        const auto d_o = d_attn.block(r0, hd * dh, L, dh);
        dv.block(r0, hd * dh, L, dh).noalias() = prob.transpose() * d_o;
        Matrix<Scalar> d_p = d_o * lc.v.block(r0, hd * dh, L, dh).transpose();
        Matrix<Scalar> d_s = prob.cwiseProduct(
            (d_p.colwise() - d_p.cwiseProduct(prob).rowwise().sum()).eval());
        d_s *= scale;
        dq.block(r0, hd * dh, L, dh).noalias() = d_s * lc.k.block(r0, hd * dh, L, dh);
        dk.block(r0, hd * dh, L, dh).noalias() = d_s.transpose() * lc.q.block(r0, hd * dh, L, dh);
      }
    }
    G.wq.noalias() += lc.ln1_out.transpose() * dq;
    G.bq += dq.colwise().sum();
    G.wk.noalias() += lc.ln1_out.transpose() * dk;
    G.bk += dk.colwise().sum();
    G.wv.noalias() += lc.ln1_out.transpose() * dv;
    G.bv += dv.colwise().sum();
    Matrix<Scalar> d_ln1 = dq * P.wq.transpose();
    d_ln1.noalias() += dk * P.wk.transpose();
    d_ln1.noalias() += dv * P.wv.transpose();
    dh_ += detail::layer_norm_backward(d_ln1, lc.ln1_xhat, lc.ln1_rstd, P.ln1_g, G.ln1_g, G.ln1_b);
  }

  // timestep MLP
  Matrix<Scalar> d_temb(B, c.d_model);
  for (int b = 0; b < B; ++b) d_temb.row(b) = dh_.middleRows(static_cast<Eigen::Index>(b) * L, L).colwise().sum();
  grad.time_w2.noalias() += cache.time_act.transpose() * d_temb;
  grad.time_b2 += d_temb.colwise().sum();
  Matrix<Scalar> d_act = d_temb * p.time_w2.transpose();
  Matrix<Scalar> sig = detail::sigmoid(cache.time_pre);
  Matrix<Scalar> d_pre = d_act.array() * sig.array() *
                         (Scalar(1) + cache.time_pre.array() * (Scalar(1) - sig.array()));
  grad.time_w1.noalias() += cache.time_sin.transpose() * d_pre;
  grad.time_b1 += d_pre.colwise().sum();

  grad.in_w.noalias() += cache.input.transpose() * dh_;
  grad.in_b += dh_.colwise().sum();
  Matrix<Scalar> dx = dh_ * p.in_w.transpose();
  for (int b = 0; b < B; ++b) {
    const auto rows = dx.middleRows(static_cast<Eigen::Index>(b) * L, L);
    grad.embedding.modality.row(kImage) += rows.topRows(c.img_len).colwise().sum();
    grad.embedding.modality.row(kCaption) += rows.bottomRows(c.cap_len).colwise().sum();
    grad.embedding.position.topRows(c.img_len) += rows.topRows(c.img_len);
    grad.embedding.position.topRows(c.cap_len) += rows.bottomRows(c.cap_len);
  }
  return dx;
}

/// f_theta(x_t, t): full-sequence output; its caption rows are the x_0 estimate.
template <typename Scalar>
LatentSequence<Scalar> predict_x0(const DenoiserParams<Scalar>& p, const DenoiserConfig& c,
                                  const LatentSequence<Scalar>& x_t, int t) {
  if (x_t.img_len != c.img_len || x_t.cap_len != c.cap_len)
    throw std::invalid_argument("latent segment lengths do not match the config");
  const int ts[1] = {t};
  return {denoiser_forward(p, c, x_t.values, std::span<const int>(ts)), x_t.img_len, x_t.cap_len};
}

}  // namespace diffcap
