#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"

#include "diffcap/denoiser.hpp"

using namespace diffcap;

TEST_CASE("parameter count: closed form and hand count") {
  DenoiserConfig c;
  c.embed_dim = 8;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.ff_mult = 4;
  c.img_len = 16;
  c.cap_len = 18;
  c.vocab_size = 39;
  c.features = {10, 8, 5, 4};
  Rng rng(0);
  const auto p = init_params<double>(c, rng);
  // table: (39 tokens + 28 feature columns + 2 modalities + 18 positions) x 8
  const long table = (39 + 28 + 2 + 18) * 8;
  // in 8x16+16, time MLP 2(16x16+16), per layer 4(16x16+16) + 2x16 x2 (norms)
  // + 16x64+64 + 64x16+16, final norm 32, out 16x8+8
  const long per_layer = 4 * (256 + 16) + 4 * 16 + (1024 + 64) + (1024 + 16);
  const long trunk = (128 + 16) + 2 * (256 + 16) + 2 * per_layer + 32 + (128 + 8);
  CHECK(trunk == 7416);
  CHECK(p.parameter_count() == table + trunk);
  CHECK(expected_parameter_count(c) == table + trunk);
}

TEST_CASE("initialisation is seeded and validated") {
  const auto c = testing::tiny_config();
  Rng a(5), b(5), other(6);
  const auto pa = init_params<double>(c, a), pb = init_params<double>(c, b), po = init_params<double>(c, other);
  bool same = true, differs = false;
  std::vector<const Matrix<double>*> bs, os;
  pb.visit([&](const std::string&, const Matrix<double>& m) { bs.push_back(&m); });
  po.visit([&](const std::string&, const Matrix<double>& m) { os.push_back(&m); });
  std::size_t i = 0;
  pa.visit([&](const std::string&, const Matrix<double>& m) {
    same = same && m == *bs[i];
    differs = differs || (m.size() && m != *os[i]);
    ++i;
  });
  CHECK(same);
  CHECK(differs);

  DenoiserConfig bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  Rng r(0);
  CHECK_THROWS_AS(init_params<double>(bad, r), std::invalid_argument);
}

TEST_CASE("forward pass: shape, finiteness, timestep conditioning") {
  const auto c = testing::tiny_config();
  Rng rng(7);
  const auto p = init_params<double>(c, rng);
  const Matrix<double> x = random_normal<double>(2 * c.seq_len(), c.embed_dim, rng);
  const std::vector<int> ts{1, 1};
  const Matrix<double> y = denoiser_forward(p, c, x, std::span<const int>(ts));
  CHECK(y.rows() == x.rows());
  CHECK(y.cols() == x.cols());
  CHECK(y.allFinite());
  const std::vector<int> late{c.max_timestep, c.max_timestep};
  CHECK((denoiser_forward(p, c, x, std::span<const int>(late)) - y).norm() > 1e-6);
  // sequences in a batch do not interact
  const std::vector<int> one{1};
  const Matrix<double> first = denoiser_forward(p, c, Matrix<double>(x.topRows(c.seq_len())), std::span<const int>(one));
  CHECK((first - y.topRows(c.seq_len())).norm() < 1e-12);
  const std::vector<int> zero{0};
  CHECK_THROWS_AS(denoiser_forward(p, c, Matrix<double>(x.topRows(c.seq_len())), std::span<const int>(zero)),
                  std::out_of_range);
}

TEST_CASE("forward pass is permutation-equivariant over rows once position and modality are zeroed") {
  const auto c = testing::tiny_config();
  Rng rng(8);
  auto p = init_params<double>(c, rng);
  p.embedding.position.setZero();
  p.embedding.modality.setZero();
  const Matrix<double> x = random_normal<double>(c.seq_len(), c.embed_dim, rng);
  std::vector<int> perm(c.seq_len());
  for (int i = 0; i < c.seq_len(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix<double> xp(x.rows(), x.cols());
  for (int i = 0; i < c.seq_len(); ++i) xp.row(i) = x.row(perm[i]);
  const std::vector<int> ts{17};
  const Matrix<double> y = denoiser_forward(p, c, x, std::span<const int>(ts));
  const Matrix<double> yp = denoiser_forward(p, c, xp, std::span<const int>(ts));
  for (int i = 0; i < c.seq_len(); ++i) CHECK((yp.row(i) - y.row(perm[i])).norm() < 1e-12);
}

TEST_CASE("dropout is active only with a random stream") {
  auto c = testing::tiny_config();
  c.dropout = 0.5;
  Rng rng(9);
  const auto p = init_params<double>(c, rng);
  const Matrix<double> x = random_normal<double>(c.seq_len(), c.embed_dim, rng);
  const std::vector<int> ts{3};
  const Matrix<double> eval = denoiser_forward(p, c, x, std::span<const int>(ts));
  Rng d1(1), d2(1);
  const Matrix<double> t1 = denoiser_forward(p, c, x, std::span<const int>(ts), static_cast<ForwardCache<double>*>(nullptr), &d1);
  const Matrix<double> t2 = denoiser_forward(p, c, x, std::span<const int>(ts), static_cast<ForwardCache<double>*>(nullptr), &d2);
  CHECK(t1 == t2);
  CHECK((t1 - eval).norm() > 1e-6);
}

TEST_CASE("analytic gradients match central differences") {
  auto c = testing::tiny_config();
  Rng rng(10);
  const auto p = init_params<double>(c, rng);
  REQUIRE(p.parameter_count() <= 5000);
  const int B = 2;
  const Matrix<double> x = random_normal<double>(B * c.seq_len(), c.embed_dim, rng);
  const Matrix<double> w = random_normal<double>(B * c.seq_len(), c.embed_dim, rng);
  const std::vector<int> ts{3, 41};
  auto loss = [&](const DenoiserParams<double>& q) {
    return denoiser_forward(q, c, x, std::span<const int>(ts)).cwiseProduct(w).sum();
  };
  ForwardCache<double> cache;
  denoiser_forward(p, c, x, std::span<const int>(ts), &cache);
  auto grad = DenoiserParams<double>::zeros_like(p);
  const Matrix<double> dx = denoiser_backward(p, c, cache, w, grad);

  const auto res = testing::check_gradients(p, grad, loss, 25, 11);
  CAPTURE(res.worst_tensor);
  CHECK(res.worst <= 1e-4);

  // input gradient
  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); i += 7) {
    Matrix<double> xu = x, xd = x;
    xu.data()[i] += 1e-4;
    xd.data()[i] -= 1e-4;
    const double num = (denoiser_forward(p, c, xu, std::span<const int>(ts)).cwiseProduct(w).sum() -
                        denoiser_forward(p, c, xd, std::span<const int>(ts)).cwiseProduct(w).sum()) /
                       2e-4;
    worst = std::max(worst, std::abs(num - dx.data()[i]) / std::max(1e-9, std::abs(num)));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("timestep embedding is bounded and distinct per step") {
  const auto a = timestep_embedding<double>(1, 16), b = timestep_embedding<double>(2, 16);
  CHECK(a.size() == 16);
  CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
  CHECK((a - b).norm() > 1e-3);
}
