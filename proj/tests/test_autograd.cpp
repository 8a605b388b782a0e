#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "ser/autograd.hpp"
#include "test_util.hpp"

using namespace ser;
using namespace ser::ag;

using T = double;
using Tn = Tensor<double>;

namespace {

constexpr double kOpTolerance = 1e-4;

Vector<T> random_vector(Index n, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Vector<T> v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(gen);
  return v;
}

Tn random_tensor(Shape shape, unsigned seed, bool grad = true) {
  const Index n = shape_size(shape);
  return Tn(std::move(shape), random_vector(n, seed), grad);
}

// Scalar <w, t> with fixed random weights, so no gradient is trivially zero.
Tn probe(const Tn& t, unsigned seed = 99) {
  const Tn flat = reshape(t, {1, t.size()});
  const Tn w({t.size(), 1}, random_vector(t.size(), seed));
  return sum(linear(flat, w, Tn::zeros({1})));
}

GradCheckResult check(const std::function<Tn()>& f, std::vector<Tn> params) {
  return grad_check<T>(f, std::span<Tn>(params));
}

}  // namespace

TEST_CASE("grad_check basics") {
  // f(p) = sum(p^2) = p . p^T
  Tn q({1, 2}, Vector<T>{{1.0, 2.0}}, true);
  auto square = [&] { return sum(linear(q, reshape(q, {2, 1}), Tn::zeros({1}))); };
  q.zero_grad();
  backward(square());
  CHECK(q.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(q.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
  std::vector<Tn> qs{q};
  const auto r = grad_check<T>(square, std::span<Tn>(qs));
  CHECK(r.checked == 2);
  CHECK(r.max_relative_error < 1e-8);

  Tn k({3}, Vector<T>{{0.0, 1.0, -1.0}}, true);
  std::vector<Tn> ks{k};
  const auto kr = grad_check<T>([&] { return sum(relu(k)); }, std::span<Tn>(ks));
  CHECK(kr.kinks == 1);
  CHECK(kr.checked == 2);
}

TEST_CASE("conv2d_valid values and shapes") {
  const Tn ones = Tn::full({1, 3, 3}, 1.0);
  const Tn k = Tn::full({1, 1, 2, 2}, 1.0);
  const Tn out = conv2d_valid(ones, k, Tn::zeros({1}));
  CHECK(out.shape() == Shape{1, 2, 2});
  CHECK(out.values() == Vector<T>::Constant(4, 4.0));

  const Tensor<float> big = Tensor<float>::full({1, 128, 188}, 0.5f);
  const Tensor<float> kernels = Tensor<float>::full({200, 1, 4, 6}, 0.1f);
  const auto y = conv2d_valid(big, kernels, Tensor<float>::zeros({200}));
  CHECK(y.shape() == Shape{200, 125, 183});

  CHECK_THROWS_AS(conv2d_valid(ones, Tn::full({1, 2, 2, 2}, 1.0), Tn::zeros({1})), Error);
}

TEST_CASE("conv2d_valid agrees with the brute-force oracle") {
  unsigned seed = 1;
  for (Index c_in : {1, 2, 3}) {
    for (Index c_out : {1, 4}) {
      const Index h = 8, w = 8 - c_in, kh = 3, kw = 2 + c_in;
      const Tn x = random_tensor({c_in, h, w}, seed++, false);
      const Tn k = random_tensor({c_out, c_in, kh, kw}, seed++, false);
      const Tn b = random_tensor({c_out}, seed++, false);
      const Tn y = conv2d_valid(x, k, b);
      const auto ref = oracle::conv2d_valid({x.values().data(), x.values().data() + x.size()}, c_in, h, w,
                                            {k.values().data(), k.values().data() + k.size()}, c_out, kh, kw,
                                            {b.values().data(), b.values().data() + b.size()});
      REQUIRE(static_cast<Index>(ref.size()) == y.size());
      double err = 0;
      for (Index i = 0; i < y.size(); ++i) err = std::max(err, std::abs(y.values()[i] - ref[static_cast<std::size_t>(i)]));
      CHECK(err < 1e-10);
    }
  }
  // Batched input gives the per-sample results stacked.
  const Tn x = random_tensor({2, 2, 6, 7}, 50, false);
  const Tn k = random_tensor({3, 2, 2, 3}, 51, false);
  const Tn b = random_tensor({3}, 52, false);
  const Tn y = conv2d_valid(x, k, b);
  CHECK(y.shape() == Shape{2, 3, 5, 5});
  for (Index n = 0; n < 2; ++n) {
    const auto ref = oracle::conv2d_valid({x.values().data() + n * 84, x.values().data() + (n + 1) * 84}, 2, 6, 7,
                                          {k.values().data(), k.values().data() + k.size()}, 3, 2, 3,
                                          {b.values().data(), b.values().data() + 3});
    for (Index i = 0; i < 75; ++i) CHECK(std::abs(y.values()[n * 75 + i] - ref[static_cast<std::size_t>(i)]) < 1e-10);
  }
}

TEST_CASE("conv2d_valid gradients") {
  Tn x = random_tensor({2, 6, 7}, 3), k = random_tensor({3, 2, 3, 2}, 4), b = random_tensor({3}, 5);
  CHECK(check([&] { return probe(conv2d_valid(x, k, b)); }, {x, k, b}).max_relative_error < kOpTolerance);
  Tn xb = random_tensor({2, 1, 5, 6}, 6), kb = random_tensor({2, 1, 2, 3}, 7), bb = random_tensor({2}, 8);
  CHECK(check([&] { return probe(conv2d_valid(xb, kb, bb)); }, {xb, kb, bb}).max_relative_error < kOpTolerance);
}

TEST_CASE("maxpool2d") {
  Vector<T> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i + 1;
  const Tn y = maxpool2d(Tn({1, 4, 4}, v), 2, 2);
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK(y.values() == Vector<T>{{6, 8, 14, 16}});

  const Tensor<float> big = Tensor<float>::zeros({200, 125, 183});
  CHECK(maxpool2d(big, 62, 91).shape() == Shape{200, 2, 2});

  Tn x = random_tensor({1, 6, 6}, 11);
  const auto r = check([&] { return probe(maxpool2d(x, 3, 3)); }, {x});
  CHECK(r.max_relative_error < kOpTolerance);
  CHECK(r.checked == 36);

  // Ties go to the first maximum; gradient mass is conserved per window.
  Tn tied = Tn::full({1, 2, 2}, 1.0, true);
  const Tn m = maxpool2d(tied, 2, 2);
  backward(probe(m));
  CHECK(tied.grad()[0] != 0.0);
  CHECK(tied.grad().tail(3).cwiseAbs().maxCoeff() == 0.0);

  Tn z = random_tensor({2, 7, 9}, 12);
  const Tn pooled = maxpool2d(z, 3, 4);
  CHECK(pooled.shape() == Shape{2, 2, 2});
  const Tn w({8, 1}, random_vector(8, 13));
  backward(sum(linear(reshape(pooled, {1, 8}), w, Tn::zeros({1}))));
  CHECK(std::abs(z.grad().sum() - w.values().sum()) < 1e-12);
}

TEST_CASE("activations") {
  const Tn r = relu(Tn({3}, Vector<T>{{-1, 0, 2}}));
  CHECK(r.values() == Vector<T>{{0, 0, 2}});
  CHECK(sigmoid(Tn({1}, Vector<T>{{0.0}})).item() == 0.5);
  CHECK(activation(Activation::Sigmoid, Tn({1}, Vector<T>{{0.0}})).item() == 0.5);

  Vector<T> v = random_vector(20, 14);
  for (Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) < 1e-3) v[i] = 0.5;
  }
  Tn x({20}, v, true);
  CHECK(check([&] { return probe(relu(x)); }, {x}).max_relative_error < kOpTolerance);
  CHECK(check([&] { return probe(sigmoid(x)); }, {x}).max_relative_error < kOpTolerance);
}

TEST_CASE("linear") {
  const Tn x = random_tensor({3, 4}, 15, false);
  Vector<T> eye = Vector<T>::Zero(16);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  CHECK(linear(x, Tn({4, 4}, eye), Tn::zeros({4})).values() == x.values());
  CHECK(linear(Tensor<float>::zeros({1, 3200}), Tensor<float>::zeros({3200, 64}), Tensor<float>::zeros({64})).shape() ==
        Shape{1, 64});
  CHECK_THROWS_AS(linear(x, Tn::zeros({3, 2}), Tn::zeros({2})), Error);

  Tn a = random_tensor({2, 3}, 16), w = random_tensor({3, 2}, 17), b = random_tensor({2}, 18);
  CHECK(check([&] { return probe(linear(a, w, b)); }, {a, w, b}).max_relative_error < kOpTolerance);
}

TEST_CASE("batchnorm") {
  BatchNormState<T> state(3);
  const Tn x({8, 3}, random_vector(24, 19, -4, 7));
  const Tn y = batchnorm(x, Tn::full({3}, 1.0), Tn::zeros({3}), state, Mode::Train);
  const ConstMatrixMap<T> m(y.values().data(), 8, 3);
  for (Index c = 0; c < 3; ++c) {
    const double mean = m.col(c).mean();
    const double var = (m.col(c).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
  // Running stats moved 10% of the way toward the batch statistics.
  const ConstMatrixMap<T> xm(x.values().data(), 8, 3);
  CHECK(state.running_mean[0] == doctest::Approx(0.1 * xm.col(0).mean()).epsilon(1e-12));

  Vector<T> flat = random_vector(12, 20);
  for (int i = 0; i < 4; ++i) flat[i * 3 + 1] = 3.0;
  BatchNormState<T> s2(3);
  const Tn z = batchnorm(Tn({4, 3}, flat), Tn::full({3}, 2.0), Tn::full({3}, 0.25), s2, Mode::Train);
  for (int i = 0; i < 4; ++i) CHECK(z.values()[i * 3 + 1] == 0.25);

  BatchNormState<T> s3(3);
  const Tn eval = batchnorm(x, Tn::full({3}, 1.0), Tn::zeros({3}), s3, Mode::Eval);
  CHECK((eval.values() - x.values() / std::sqrt(1.0 + 1e-5)).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(batchnorm(Tn::zeros({1, 3}), Tn::full({3}, 1.0), Tn::zeros({3}), s3, Mode::Train), Error);

  Tn xi = random_tensor({4, 3}, 21), g = random_tensor({3}, 22), be = random_tensor({3}, 23);
  BatchNormState<T> s4(3);
  CHECK(check([&] { return probe(batchnorm(xi, g, be, s4, Mode::Train)); }, {xi, g, be}).max_relative_error <
        kOpTolerance);
}

TEST_CASE("dropout") {
  Rng rng(1);
  const Tn x = random_tensor({50}, 24, false);
  CHECK(dropout(x, 0.0, Mode::Train, rng).values() == x.values());
  CHECK(dropout(x, 0.7, Mode::Eval, rng).values() == x.values());
  const Tn ones = Tn::full({10000}, 1.0);
  const Tn d = dropout(ones, 0.5, Mode::Train, rng);
  CHECK(std::abs(d.values().mean() - 1.0) < 0.05);
  for (Index i = 0; i < d.size(); ++i) CHECK((d.values()[i] == 0.0 || d.values()[i] == 2.0));

  Tn xg = random_tensor({30}, 25);
  CHECK(check([&] {
          Rng r(7);
          return probe(dropout(xg, 0.5, Mode::Train, r));
        }, {xg}).max_relative_error < kOpTolerance);
}

TEST_CASE("concat_flatten") {
  std::vector<Tensor<float>> paths;
  for (int i = 0; i < 4; ++i) paths.push_back(Tensor<float>::full({200, 2, 2}, float(i)));
  const auto c = concat_flatten<float>(paths);
  CHECK(c.shape() == Shape{1, 3200});
  CHECK(c.values()[800] == 1.0f);

  const Tn single = random_tensor({1, 5}, 26, false);
  std::vector<Tn> one{single};
  CHECK(concat_flatten<T>(one).values() == single.values());

  Tn a = random_tensor({2, 3}, 27), b = random_tensor({2, 1, 2, 2}, 28);
  std::vector<Tn> parts{a, b};
  const Tn joined = concat_flatten<T>(parts);
  CHECK(joined.shape() == Shape{2, 7});
  backward(sum(joined));
  CHECK(a.grad() == Vector<T>::Ones(6));
  CHECK(b.grad() == Vector<T>::Ones(8));
  CHECK(check([&] { return probe(concat_flatten<T>(parts)); }, {a, b}).max_relative_error < kOpTolerance);
}

TEST_CASE("softmax_cross_entropy") {
  const std::vector<int> labels{2};
  CHECK(softmax_cross_entropy(Tn::zeros({1, 4}), std::span<const int>(labels)).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const std::vector<int> zero{0};
  CHECK(softmax_cross_entropy(Tn({1, 4}, Vector<T>{{30, 0, 0, 0}}), std::span<const int>(zero)).item() < 1e-9);
  const std::vector<int> bad{4};
  CHECK_THROWS_AS(softmax_cross_entropy(Tn::zeros({1, 4}), std::span<const int>(bad)), Error);

  Tn logits = random_tensor({3, 4}, 29);
  const std::vector<int> y{0, 3, 1};
  CHECK(check([&] { return softmax_cross_entropy(logits, std::span<const int>(y)); }, {logits}).max_relative_error <
        kOpTolerance);

  const auto p = softmax_rows(logits);
  CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("mse_loss") {
  const Tn a = random_tensor({2, 3}, 30, false);
  CHECK(mse_loss(a, a).item() == 0.0);
  CHECK(mse_loss(Tn::zeros({2}), Tn::full({2}, 1.0)).item() == 1.0);
  CHECK_THROWS_AS(mse_loss(Tn::zeros({2}), Tn::zeros({3})), Error);
  Tn p = random_tensor({2, 3}, 31);
  CHECK(check([&] { return mse_loss(p, a); }, {p}).max_relative_error < kOpTolerance);
}

TEST_CASE("add, scale, sum, reshape gradients") {
  Tn a = random_tensor({2, 3}, 32), b = random_tensor({2, 3}, 33);
  CHECK(check([&] { return probe(add(a, scale(b, 3.0))); }, {a, b}).max_relative_error < kOpTolerance);
  CHECK(check([&] { return probe(reshape(a, {3, 2})); }, {a}).max_relative_error < kOpTolerance);
  CHECK_THROWS_AS(add(a, Tn::zeros({3, 2})), Error);
  CHECK_THROWS_AS(reshape(a, {4, 2}), Error);
}

TEST_CASE("backward semantics") {
  Tn x({1}, Vector<T>{{3.0}}, true);
  Tn unused({2}, Vector<T>{{1.0, 1.0}}, true);
  const Tn y = scale(x, 1.0);
  backward(add(y, y));
  CHECK(x.grad()[0] == 2.0);
  CHECK(unused.grad() == Vector<T>::Zero(2));

  x.zero_grad();
  const Tn loss = sum(scale(x, 5.0));
  backward(loss);
  CHECK(x.grad()[0] == 5.0);
  CHECK_THROWS_AS(backward(loss), Error);
  try {
    backward(loss);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AlreadyConsumed);
  }
  try {
    backward(scale(x, 2.0));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotScalar);
  }

  // Leaf gradients accumulate until zero_grad.
  x.zero_grad();
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 3.0)));
  CHECK(x.grad()[0] == 5.0);
}

TEST_CASE("backward is linear") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    Tn x = random_tensor({2, 3}, 40 + seed), w = random_tensor({3, 2}, 50 + seed), b = random_tensor({2}, 60 + seed);
    auto l1 = [&] { return probe(sigmoid(linear(x, w, b)), 1); };
    auto l2 = [&] { return mse_loss(relu(linear(x, w, b)), Tn::full({2, 2}, 0.3)); };
    const double alpha = 0.7 + seed, beta = -1.3;
    std::vector<Tn> ps{x, w, b};
    auto grads = [&](const std::function<Tn()>& f) {
      for (auto& p : ps) p.zero_grad();
      backward(f());
      std::vector<Vector<T>> g;
      for (auto& p : ps) g.push_back(p.grad());
      return g;
    };
    const auto g1 = grads(l1);
    const auto g2 = grads(l2);
    const auto g12 = grads([&] { return add(scale(l1(), alpha), scale(l2(), beta)); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK((g12[i] - (alpha * g1[i] + beta * g2[i])).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  NamedTensors<float> tensors;
  tensors["b.weight"] = Tensor<float>({2, 3}, Vector<float>::LinSpaced(6, -1, 1));
  tensors["a.bias"] = Tensor<float>({3}, Vector<float>::Constant(3, 0.5f));
  const std::string bytes = encode_checkpoint(tensors);
  CHECK(bytes.substr(0, 4) == "SERC");
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back.begin()->first == "a.bias");
  CHECK(back.at("b.weight").shape == Shape{2, 3});
  CHECK(back.at("b.weight").values[5] == 1.0f);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 2)), Error);

  testutil::TempDir dir("serc");
  save_checkpoint(dir / "m.serc", tensors);
  CHECK(testutil::read_bytes(dir / "m.serc") == bytes);
  CHECK(load_checkpoint(dir / "m.serc").at("a.bias").values[0] == 0.5f);
}
