#pragma once

#include "diffcap/patch.hpp"
#include "diffcap/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffcap {

enum Modality : int { kImage = 0, kCaption = 1 };

/// EMB(.) parameters shared by both segments of the joint latent.
template <typename Scalar>
struct EmbeddingTable {
  FeatureSpec features;
  Matrix<Scalar> tokens;           // vocab_size x H
  Matrix<Scalar> patch_projector;  // features.width() x H
  Matrix<Scalar> modality;         // 2 x H, rows indexed by Modality
  Matrix<Scalar> position;         // L_max x H, indexed by in-segment position

  int dim() const { return static_cast<int>(tokens.cols()); }
  int vocab_size() const { return static_cast<int>(tokens.rows()); }

  template <typename F>
  void visit(F&& f) {
    f("embedding.tokens", tokens);
    f("embedding.patch_projector", patch_projector);
    f("embedding.modality", modality);
    f("embedding.position", position);
  }
  template <typename F>
  void visit(F&& f) const {
    f("embedding.tokens", tokens);
    f("embedding.patch_projector", patch_projector);
    f("embedding.modality", modality);
    f("embedding.position", position);
  }

  template <typename Other>
  EmbeddingTable<Other> cast() const {
    return {features, tokens.template cast<Other>(), patch_projector.template cast<Other>(),
            modality.template cast<Other>(), position.template cast<Other>()};
  }

  static EmbeddingTable zeros_like(const EmbeddingTable& o) {
    return {o.features, Matrix<Scalar>::Zero(o.tokens.rows(), o.tokens.cols()),
            Matrix<Scalar>::Zero(o.patch_projector.rows(), o.patch_projector.cols()),
            Matrix<Scalar>::Zero(o.modality.rows(), o.modality.cols()),
            Matrix<Scalar>::Zero(o.position.rows(), o.position.cols())};
  }
};

/// A view paired with a framed, padded caption (token ids).
struct InputPair {
  ViewPatchGrid view;
  std::vector<int> caption;
};

/// Joint latent: `img_len` image rows followed by `cap_len` caption rows.
template <typename Scalar>
struct LatentSequence {
  Matrix<Scalar> values;
  int img_len = 0;
  int cap_len = 0;

  auto image() { return values.topRows(img_len); }
  auto image() const { return values.topRows(img_len); }
  auto caption() { return values.bottomRows(cap_len); }
  auto caption() const { return values.bottomRows(cap_len); }
};

template <typename Scalar>
void check_pair(const EmbeddingTable<Scalar>& table, const InputPair& pair) {
  pair.view.validate(table.features);
  const Eigen::Index max_len = table.position.rows();
  if (pair.view.cell_count() > max_len || static_cast<Eigen::Index>(pair.caption.size()) > max_len)
    throw std::out_of_range("segment longer than the position table");
  for (int id : pair.caption)
    if (id < 0 || id >= table.vocab_size())
      throw std::out_of_range("caption token id " + std::to_string(id) + " out of range");
}

/// Modality + position offsets of the caption rows (cap_len x H).
template <typename Scalar>
Matrix<Scalar> caption_offsets(const EmbeddingTable<Scalar>& table, int cap_len) {
  Matrix<Scalar> off = table.position.topRows(cap_len);
  off.rowwise() += table.modality.row(kCaption);
  return off;
}

/// Modality + position rows of a whole sequence (img_len + cap_len) x H.
template <typename Scalar>
Matrix<Scalar> segment_frame(const EmbeddingTable<Scalar>& table, int img_len, int cap_len) {
  Matrix<Scalar> f(img_len + cap_len, table.dim());
  f.topRows(img_len) = table.position.topRows(img_len);
  f.topRows(img_len).rowwise() += table.modality.row(kImage);
  f.bottomRows(cap_len) = caption_offsets(table, cap_len);
  return f;
}

/// Image row j: patch features projected + image modality + position j.
template <typename Scalar>
Matrix<Scalar> embed_view(const EmbeddingTable<Scalar>& table, const ViewPatchGrid& view) {
  const int n = view.cell_count();
  Matrix<Scalar> rows = table.position.topRows(n);
  rows.rowwise() += table.modality.row(kImage);
  for (int j = 0; j < n; ++j)
    for (int col : view.active_features(j, table.features))
      rows.row(j) += table.patch_projector.row(col);
  return rows;
}

template <typename Scalar>
LatentSequence<Scalar> embed_pair(const EmbeddingTable<Scalar>& table, const InputPair& pair) {
  check_pair(table, pair);
  const int img = pair.view.cell_count();
  const int cap = static_cast<int>(pair.caption.size());
  LatentSequence<Scalar> out{Matrix<Scalar>(img + cap, table.dim()), img, cap};
  out.image() = embed_view(table, pair.view);
  Matrix<Scalar> caption = caption_offsets(table, cap);
  for (int k = 0; k < cap; ++k) caption.row(k) += table.tokens.row(pair.caption[k]);
  out.caption() = caption;
  return out;
}

/// Draw x_0 ~ N(EMB(pair), beta0 I) over both segments.
template <typename Scalar>
LatentSequence<Scalar> sample_x0(const EmbeddingTable<Scalar>& table, const InputPair& pair,
                                 double beta0, Rng& rng) {
  if (!(beta0 >= 0.0 && beta0 < 1.0)) throw std::invalid_argument("beta0 must lie in [0, 1)");
  LatentSequence<Scalar> x = embed_pair(table, pair);
  Matrix<Scalar> noise = random_normal<Scalar>(x.values.rows(), x.values.cols(), rng);
  x.values += static_cast<Scalar>(std::sqrt(beta0)) * noise;
  return x;
}

/// Scatter a gradient w.r.t. embed_pair's output into table gradients.
template <typename Scalar, typename Derived>
void accumulate_embedding_grad(EmbeddingTable<Scalar>& grad, const InputPair& pair,
                               const Eigen::MatrixBase<Derived>& d_latent) {
  const int img = pair.view.cell_count();
  const int cap = static_cast<int>(pair.caption.size());
  for (int j = 0; j < img; ++j) {
    grad.modality.row(kImage) += d_latent.row(j);
    grad.position.row(j) += d_latent.row(j);
    for (int col : pair.view.active_features(j, grad.features))
      grad.patch_projector.row(col) += d_latent.row(j);
  }
  for (int k = 0; k < cap; ++k) {
    grad.modality.row(kCaption) += d_latent.row(img + k);
    grad.position.row(k) += d_latent.row(img + k);
    grad.tokens.row(pair.caption[k]) += d_latent.row(img + k);
  }
}

template <typename Scalar>
struct Rounding {
  std::vector<int> tokens;
  Matrix<Scalar> logits;  // cap_len x vocab_size
};

/// Position-wise maximum likelihood rounding. Logits are negative squared
/// distances between each caption row (offsets removed) and every token row;
/// ties go to the smallest id.
template <typename Scalar, typename Derived>
Rounding<Scalar> round_to_tokens(const EmbeddingTable<Scalar>& table,
                                 const Eigen::MatrixBase<Derived>& cap_latent) {
  if (!cap_latent.allFinite()) throw std::domain_error("non-finite caption latent");
  const int cap = static_cast<int>(cap_latent.rows());
  const Matrix<Scalar> y = cap_latent - caption_offsets(table, cap);
  Rounding<Scalar> r{std::vector<int>(cap, 0), Matrix<Scalar>(cap, table.vocab_size())};
  for (int k = 0; k < cap; ++k) {
    for (int v = 0; v < table.vocab_size(); ++v) {
      r.logits(k, v) = -(y.row(k) - table.tokens.row(v)).squaredNorm();
      if (r.logits(k, v) > r.logits(k, r.tokens[k])) r.tokens[k] = v;
    }
  }
  return r;
}

/// Snap every caption row onto its nearest embedded token row.
template <typename Scalar, typename Derived>
Matrix<Scalar> clamp_to_embedding(const EmbeddingTable<Scalar>& table,
                                  const Eigen::MatrixBase<Derived>& cap_latent) {
  const int cap = static_cast<int>(cap_latent.rows());
  const auto tokens = round_to_tokens(table, cap_latent).tokens;
  Matrix<Scalar> out = caption_offsets(table, cap);
  for (int k = 0; k < cap; ++k) out.row(k) += table.tokens.row(tokens[k]);
  return out;
}

}  // namespace diffcap
