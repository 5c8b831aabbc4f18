#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mmformer/gradcheck.hpp"
#include "mmformer/ops.hpp"
#include "test_util.hpp"

using namespace mmf;
using mmf::testing::as;
using mmf::testing::max_abs_diff;
using mmf::testing::naive_conv3d;
using mmf::testing::random_away_from_zero;
using mmf::testing::random_tensor;

using mmf::testing::weighted_sum;

TEST_SUITE("tensor_engine") {

TEST_CASE("conv3d scalar kernel multiplies") {
  Tensor x = Tensor::full({1, 1, 1, 1, 1}, 2.f);
  Tensor w = Tensor::full({1, 1, 1, 1, 1}, 3.f);
  Tensor b = Tensor::zeros({1});
  CHECK(conv3d(x, w, b, 1, 0).item() == doctest::Approx(6.0));
}

TEST_CASE("conv3d matches the naive loop oracle") {
  struct Case {
    Shape x, w;
    int stride, pad;
  };
  const std::vector<Case> cases = {
      {{1, 1, 4, 4, 4}, {1, 1, 3, 3, 3}, 1, 1},
      {{2, 2, 5, 4, 3}, {3, 2, 3, 3, 3}, 1, 1},
      {{1, 2, 5, 5, 4}, {2, 2, 3, 3, 3}, 2, 1},
      {{1, 3, 4, 3, 5}, {2, 3, 1, 1, 1}, 1, 0},
      {{1, 1, 5, 5, 5}, {1, 1, 3, 3, 3}, 1, 0},
  };
  std::uint64_t seed = 1;
  for (const auto& c : cases) {
    Tensor x = random_tensor(c.x, seed++);
    Tensor w = random_tensor(c.w, seed++);
    Tensor b = random_tensor({c.w[0]}, seed++);
    Tensor y = conv3d(x, w, b, c.stride, c.pad);
    auto ref = naive_conv3d(x, w, b, c.stride, c.pad);
    REQUIRE(ref.size() == y.data().size());
    double err = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(ref[i] - y.data()[i]));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("conv3d output extent formula") {
  Tensor x = random_tensor({1, 1, 4, 4, 4}, 3);
  Tensor w = random_tensor({1, 1, 3, 3, 3}, 4);
  Tensor y = conv3d(x, w, Tensor(), 2, 1);
  CHECK(y.shape() == Shape{1, 1, 2, 2, 2});
}

TEST_CASE("conv3d rejects bad shapes") {
  Tensor x = random_tensor({1, 2, 4, 4, 4}, 3);
  CHECK_THROWS_AS(conv3d(x, random_tensor({1, 3, 3, 3, 3}, 1), Tensor(), 1, 1), ShapeError);
  Tensor tiny = random_tensor({1, 2, 1, 1, 1}, 3);
  CHECK_THROWS_AS(conv3d(tiny, random_tensor({1, 2, 3, 3, 3}, 1), Tensor(), 1, 0), ShapeError);
}

TEST_CASE("transposed conv tiles disjoint 2x blocks") {
  Tensor x = Tensor::full({1, 1, 2, 2, 2}, 1.f);
  Tensor w = Tensor::full({1, 1, 2, 2, 2}, 1.f);
  Tensor y = conv_transpose3d(x, w, Tensor::zeros({1}));
  CHECK(y.shape() == Shape{1, 1, 4, 4, 4});
  for (float v : y.data()) CHECK(v == 1.f);

  Tensor z = conv_transpose3d(Tensor::zeros({1, 2, 2, 1, 3}), random_tensor({2, 3, 2, 2, 2}, 2),
                              Tensor::from_data({3}, {0.5f, -1.f, 2.f}));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < 4 * 2 * 6; ++i)
      CHECK(z.data()[c * 48 + i] == doctest::Approx(std::vector<float>{0.5f, -1.f, 2.f}[c]));
}

TEST_CASE("transposed conv matches scatter-add oracle") {
  Tensor x = random_tensor({2, 3, 2, 3, 2}, 11);
  Tensor w = random_tensor({3, 2, 2, 2, 2}, 12);
  Tensor b = random_tensor({2}, 13);
  Tensor y = conv_transpose3d(x, w, b);
  const auto& ys = y.shape();
  std::vector<double> ref(y.data().size(), 0.0);
  auto at = [&](std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t yy, std::int64_t q) {
    return (((n * ys[1] + c) * ys[2] + z) * ys[3] + yy) * ys[4] + q;
  };
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t co = 0; co < 2; ++co)
      for (std::int64_t z = 0; z < ys[2]; ++z)
        for (std::int64_t yy = 0; yy < ys[3]; ++yy)
          for (std::int64_t q = 0; q < ys[4]; ++q) ref[at(n, co, z, yy, q)] = b.data()[co];
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t ci = 0; ci < 3; ++ci)
      for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t yy = 0; yy < 3; ++yy)
          for (std::int64_t q = 0; q < 2; ++q)
            for (std::int64_t co = 0; co < 2; ++co)
              for (int a = 0; a < 2; ++a)
                for (int bb = 0; bb < 2; ++bb)
                  for (int c = 0; c < 2; ++c)
                    ref[at(n, co, 2 * z + a, 2 * yy + bb, 2 * q + c)] +=
                        double(x.at({n, ci, z, yy, q})) * double(w.at({ci, co, a, bb, c}));
  double err = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(ref[i] - y.data()[i]));
  CHECK(err < 1e-4);
  CHECK_THROWS_AS(conv_transpose3d(x, random_tensor({2, 2, 2, 2, 2}, 1), Tensor()), ShapeError);
}

TEST_CASE("group_norm degenerate and affine cases") {
  Tensor x = Tensor::full({1, 4, 2, 2, 2}, 3.f);
  Tensor ones = Tensor::full({4}, 1.f), zeros = Tensor::zeros({4});
  Tensor normed = group_norm(x, 2, ones, zeros);
  for (float v : normed.data()) CHECK(v == 0.f);
  Tensor r = random_tensor({1, 4, 2, 2, 2}, 5);
  Tensor shifted = group_norm(r, 2, zeros, Tensor::full({4}, 5.f));
  for (float v : shifted.data()) CHECK(v == 5.f);
  CHECK_THROWS_AS(group_norm(r, 3, Tensor::full({4}, 1.f), zeros), ShapeError);
}

TEST_CASE("group_norm matches per-group statistics oracle") {
  Tensor x = random_tensor({1, 4, 2, 2, 2}, 6, -2.f, 3.f);
  Tensor gamma = random_tensor({4}, 7), beta = random_tensor({4}, 8);
  Tensor y = group_norm(x, 2, gamma, beta, 1e-5);
  for (int g = 0; g < 2; ++g) {
    double m = 0, v = 0;
    for (int i = 0; i < 16; ++i) m += x.data()[g * 16 + i];
    m /= 16;
    for (int i = 0; i < 16; ++i) v += std::pow(x.data()[g * 16 + i] - m, 2);
    v /= 16;
    for (int i = 0; i < 16; ++i) {
      const int c = g * 2 + i / 8;
      const double ref = (x.data()[g * 16 + i] - m) / std::sqrt(v + 1e-5) * gamma.data()[c] +
                         beta.data()[c];
      CHECK(std::abs(ref - y.data()[g * 16 + i]) < 1e-5);
    }
  }
}

TEST_CASE("normalised outputs have zero mean and unit variance") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = random_tensor({2, 8, 3, 2, 4}, 100 + seed, -5.f, 7.f);
    Tensor y = group_norm(x, 4, Tensor::full({8}, 1.f), Tensor::zeros({8}));
    const std::int64_t block = 2 * 24;
    for (std::int64_t b = 0; b < 8; ++b) {
      double m = 0, v = 0;
      for (std::int64_t i = 0; i < block; ++i) m += y.data()[b * block + i];
      m /= block;
      for (std::int64_t i = 0; i < block; ++i) v += std::pow(y.data()[b * block + i] - m, 2);
      v /= block;
      CHECK(std::abs(m) < 1e-4);
      CHECK(std::abs(v - 1) < 1e-3);
    }
    Tensor t = random_tensor({3, 5, 16}, 200 + seed, -3.f, 9.f);
    Tensor l = layer_norm(t, Tensor::full({16}, 1.f), Tensor::zeros({16}));
    for (std::int64_t r = 0; r < 15; ++r) {
      double m = 0, v = 0;
      for (int i = 0; i < 16; ++i) m += l.data()[r * 16 + i];
      m /= 16;
      for (int i = 0; i < 16; ++i) v += std::pow(l.data()[r * 16 + i] - m, 2);
      CHECK(std::abs(m) < 1e-4);
      CHECK(std::abs(v / 16 - 1) < 1e-3);
    }
  }
}

TEST_CASE("layer_norm cases") {
  Tensor t = Tensor::from_data({1, 4}, {1, 2, 3, 4});
  Tensor y = layer_norm(t, Tensor::full({4}, 1.f), Tensor::zeros({4}), 1e-5);
  double m = 0, v = 0;
  for (float a : y.data()) m += a;
  m /= 4;
  for (float a : y.data()) v += (a - m) * (a - m);
  CHECK(std::abs(m) < 1e-5);
  CHECK(std::abs(v / 4 - 1) < 1e-5);
  Tensor flat = layer_norm(Tensor::full({2, 3}, 7.f), Tensor::full({3}, 1.f), Tensor::zeros({3}));
  for (float a : flat.data()) CHECK(a == 0.f);

  Tensor r = random_tensor({2, 6}, 9);
  Tensor g = random_tensor({6}, 10), b = random_tensor({6}, 11);
  Tensor out = layer_norm(r, g, b, 1e-5);
  for (int row = 0; row < 2; ++row) {
    double mm = 0, vv = 0;
    for (int i = 0; i < 6; ++i) mm += r.data()[row * 6 + i];
    mm /= 6;
    for (int i = 0; i < 6; ++i) vv += std::pow(r.data()[row * 6 + i] - mm, 2);
    vv /= 6;
    for (int i = 0; i < 6; ++i)
      CHECK(std::abs((r.data()[row * 6 + i] - mm) / std::sqrt(vv + 1e-5) * g.data()[i] + b.data()[i] -
                     out.data()[row * 6 + i]) < 1e-5);
  }
  CHECK_THROWS_AS(layer_norm(r, Tensor::full({5}, 1.f), Tensor::zeros({5})), ShapeError);
}

TEST_CASE("activations") {
  Tensor x = Tensor::from_data({3}, {-1.f, 2.f, 0.f});
  Tensor r = relu(x);
  CHECK(r.data()[0] == 0.f);
  CHECK(r.data()[1] == 2.f);
  Tensor g = gelu(Tensor::from_data({2}, {0.f, 1.f}));
  CHECK(g.data()[0] == 0.f);
  // Phi(1) from the complementary error function.
  const double phi1 = 0.5 * std::erfc(-1.0 / std::sqrt(2.0));
  CHECK(std::abs(g.data()[1] - phi1) < 1e-6);
  CHECK(std::abs(g.data()[1] - 0.841345) < 1e-6);
  Tensor s = sigmoid(Tensor::from_data({3}, {0.f, 100.f, -100.f}));
  CHECK(s.data()[0] == 0.5f);
  CHECK(s.data()[1] == doctest::Approx(1.0));
  CHECK(s.data()[2] >= 0.f);
}

TEST_CASE("linear cases") {
  Tensor x = random_tensor({2, 3, 4}, 12);
  std::vector<float> eye(16, 0.f);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.f;
  Tensor id = linear(x, Tensor::from_data({4, 4}, eye), Tensor::zeros({4}));
  CHECK(max_abs_diff(id.data(), x.data()) == 0.0);

  Tensor hand = linear(Tensor::from_data({1, 2}, {1, 2}), Tensor::from_data({2, 2}, {1, 0, 0, 1}),
                       Tensor::from_data({2}, {1, 1}));
  CHECK(hand.data()[0] == 2.f);
  CHECK(hand.data()[1] == 3.f);

  Tensor w = random_tensor({4, 5}, 13), b = random_tensor({5}, 14);
  Tensor y = linear(x, w, b);
  CHECK(y.shape() == Shape{2, 3, 5});
  for (int r = 0; r < 6; ++r)
    for (int j = 0; j < 5; ++j) {
      double acc = b.data()[j];
      for (int k = 0; k < 4; ++k) acc += double(x.data()[r * 4 + k]) * w.data()[k * 5 + j];
      CHECK(std::abs(acc - y.data()[r * 5 + j]) < 1e-5);
    }
  CHECK_THROWS_AS(linear(x, random_tensor({3, 5}, 1), Tensor()), ShapeError);
}

TEST_CASE("matmul matches loop oracle") {
  Tensor a = random_tensor({2, 3, 4}, 15), b = random_tensor({2, 4, 5}, 16);
  Tensor bt = random_tensor({2, 5, 4}, 17);
  Tensor c = matmul(a, b), ct = matmul(a, bt, true);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 5; ++j) {
        double s = 0, st = 0;
        for (int k = 0; k < 4; ++k) {
          s += double(a.at({n, i, k})) * b.at({n, k, j});
          st += double(a.at({n, i, k})) * bt.at({n, j, k});
        }
        CHECK(std::abs(s - c.at({n, i, j})) < 1e-5);
        CHECK(std::abs(st - ct.at({n, i, j})) < 1e-5);
      }
}

TEST_CASE("softmax cases") {
  Tensor u = softmax(Tensor::full({1, 4}, 2.5f), -1);
  for (float v : u.data()) CHECK(v == doctest::Approx(0.25));
  Tensor x = random_tensor({3, 5}, 18, -4.f, 4.f);
  std::vector<float> shifted(x.data().begin(), x.data().end());
  for (auto& v : shifted) v += 7.f;
  CHECK(max_abs_diff(softmax(x, 1).data(), softmax(Tensor::from_data({3, 5}, shifted), 1).data()) < 1e-6);
  Tensor two = softmax(Tensor::from_data({2}, {0.f, float(std::log(3.0))}), 0);
  CHECK(std::abs(two.data()[0] - 0.25) < 1e-6);
  CHECK(std::abs(two.data()[1] - 0.75) < 1e-6);
}

TEST_CASE("softmax slices sum to one for arbitrary finite inputs") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tensor x = random_tensor({2, 3, 4}, 300 + seed, -50.f, 50.f);
    const int axis = static_cast<int>(seed % 3);
    Tensor y = softmax(x, axis);
    const auto& s = x.shape();
    for (std::int64_t a = 0; a < s[(axis + 1) % 3]; ++a)
      for (std::int64_t b = 0; b < s[(axis + 2) % 3]; ++b) {
        double total = 0;
        for (std::int64_t l = 0; l < s[axis]; ++l) {
          std::int64_t idx[3];
          idx[axis] = l;
          idx[(axis + 1) % 3] = a;
          idx[(axis + 2) % 3] = b;
          const float v = y.at({idx[0], idx[1], idx[2]});
          CHECK(v >= 0.f);
          CHECK(v <= 1.f);
          total += v;
        }
        CHECK(std::abs(total - 1) < 1e-5);
      }
  }
}

TEST_CASE("concat, reshape and flatten addressing") {
  Tensor a = random_tensor({1, 512, 6}, 19), b = random_tensor({1, 512, 6}, 20);
  Tensor c = concat<float>({a, b}, 1);
  CHECK(c.shape() == Shape{1, 1024, 6});
  CHECK(c.at({0, 0, 3}) == a.at({0, 0, 3}));
  CHECK(c.at({0, 700, 2}) == b.at({0, 188, 2}));
  CHECK_THROWS_AS(concat<float>({a, random_tensor({1, 3, 5}, 1)}, 1), ShapeError);

  Tensor v = random_tensor({2, 3, 2, 3, 4}, 21);
  Tensor f = flatten_spatial(v);
  CHECK(f.shape() == Shape{2, 24, 3});
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t ch = 0; ch < 3; ++ch)
      for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t y = 0; y < 3; ++y)
          for (std::int64_t q = 0; q < 4; ++q)
            CHECK(f.data()[(n * 24 + (z * 12 + y * 4 + q)) * 3 + ch] == v.at({n, ch, z, y, q}));
  Tensor back = unflatten_spatial(f, {2, 3, 4});
  CHECK(back.shape() == v.shape());
  CHECK(max_abs_diff(back.data(), v.data()) == 0.0);
  CHECK_THROWS_AS(reshape(v, {5, 5}), ShapeError);
}

TEST_CASE("trilinear interpolation") {
  Tensor c = Tensor::full({1, 2, 2, 3, 2}, 0.3f);
  Tensor cu = trilinear_interpolate(c, {4, 6, 4});
  for (float v : cu.data()) CHECK(v == 0.3f);
  Tensor r = random_tensor({1, 2, 3, 2, 4}, 22);
  CHECK(max_abs_diff(trilinear_interpolate(r, {3, 2, 4}).data(), r.data()) == 0.0);

  // Ramp along the last axis: value equals the clamped source coordinate.
  std::vector<float> ramp;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int q = 0; q < 4; ++q) ramp.push_back(float(q));
  Tensor up = trilinear_interpolate(Tensor::from_data({1, 1, 2, 2, 4}, ramp), {4, 4, 8});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int q = 0; q < 8; ++q) {
        const double src = std::clamp((q + 0.5) * 4.0 / 8.0 - 0.5, 0.0, 3.0);
        CHECK(std::abs(up.at({0, 0, z, y, q}) - src) < 1e-6);
      }
}

TEST_CASE("backward basics") {
  Tensor x = random_tensor({2, 3}, 23);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor s = sum(x);
  backward(s);
  for (float g : x.grad()) CHECK(g == 1.f);
  backward(s);
  for (float g : x.grad()) CHECK(g == 2.f);

  Tensor y = Tensor::full({1}, 3.f, true);
  tape.backward(sum(mul(y, y)));
  CHECK(y.grad()[0] == 6.f);

  CHECK_THROWS_AS(tape.backward(mul(x, x)), ShapeError);
  Tensor detached = Tensor::full({1}, 1.f);
  CHECK_THROWS(tape.backward(detached));
}

TEST_CASE("tape replays ops in reverse order") {
  Tensor x = random_tensor({3}, 24);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum(relu(scale(x, 2.0)));
  REQUIRE(tape.size() == 3);
  CHECK(std::string(tape.entries()[0].name) == "scale");
  CHECK(std::string(tape.entries()[2].name) == "sum");
  tape.backward(y);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == (x.data()[i] > 0 ? 2.f : 0.f));
}

TEST_CASE("non-finite values are surfaced") {
  Tensor x = Tensor::from_data({2}, {1.f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS(relu(x), NumericError);
  CHECK_THROWS_AS(scale(Tensor::full({1}, 3e38f), 10.0), NumericError);
}

TEST_CASE("finite difference check of trivial sum") {
  Tensor x = random_tensor({3, 4}, 25);
  CHECK(finite_difference_check([](const auto& t) { return sum(t); }, x) < 1e-6);
}

TEST_CASE("every differentiable op passes finite differences") {
  const double tol = 1e-3;
  Tensor x5 = random_tensor({1, 2, 3, 4, 3}, 30);
  Tensor w3 = random_tensor({2, 2, 3, 3, 3}, 31);
  Tensor b2 = random_tensor({2}, 32);

  SUBCASE("conv3d input/weight/bias") {
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(conv3d(t, as<T>(w3), as<T>(b2), 1, 1), 1);
    }, x5) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(conv3d(as<T>(x5), t, as<T>(b2), 2, 1), 2);
    }, w3) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(conv3d(as<T>(x5), as<T>(w3), t, 1, 1), 3);
    }, b2) < tol);
  }
  SUBCASE("conv_transpose3d") {
    Tensor wt = random_tensor({2, 3, 2, 2, 2}, 33);
    Tensor bt = random_tensor({3}, 34);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(conv_transpose3d(t, as<T>(wt), as<T>(bt)), 4);
    }, x5) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(conv_transpose3d(as<T>(x5), t, as<T>(bt)), 5);
    }, wt) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(conv_transpose3d(as<T>(x5), as<T>(wt), t), 6);
    }, bt) < tol);
  }
  SUBCASE("group_norm") {
    Tensor g = random_tensor({2}, 35), b = random_tensor({2}, 36);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(group_norm(t, 1, as<T>(g), as<T>(b)), 7);
    }, x5) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(group_norm(as<T>(x5), 2, t, as<T>(b)), 8);
    }, g) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(group_norm(as<T>(x5), 2, as<T>(g), t), 9);
    }, b) < tol);
  }
  SUBCASE("layer_norm") {
    Tensor x = random_tensor({2, 3, 5}, 37);
    Tensor g = random_tensor({5}, 38), b = random_tensor({5}, 39);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(layer_norm(t, as<T>(g), as<T>(b)), 10);
    }, x) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(layer_norm(as<T>(x), t, as<T>(b)), 11);
    }, g) < tol);
  }
  SUBCASE("pointwise activations") {
    Tensor x = random_away_from_zero({2, 5}, 40);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(relu(t), 12); }, x) < tol);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(gelu(t), 13); }, x) < tol);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(sigmoid(t), 14); }, x) < tol);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(scale(t, -1.7), 15); }, x) < tol);
  }
  SUBCASE("linear, matmul, softmax") {
    Tensor x = random_tensor({2, 3, 4}, 41);
    Tensor w = random_tensor({4, 5}, 42), b = random_tensor({5}, 43);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(linear(t, as<T>(w), as<T>(b)), 16);
    }, x) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(linear(as<T>(x), t, as<T>(b)), 17);
    }, w) < tol);
    Tensor r = random_tensor({2, 4, 3}, 44), rt = random_tensor({2, 5, 4}, 45);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(matmul(t, as<T>(r)), 18);
    }, x) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(matmul(as<T>(x), t, true), 19);
    }, rt) < tol);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(softmax(t, 1), 20); }, x) < tol);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(softmax(t, 2), 21); }, x) < tol);
  }
  SUBCASE("shape ops and interpolation") {
    Tensor y = random_tensor({1, 2, 3, 4, 3}, 46);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(concat<T>({t, as<T>(y), t}, 1), 22);
    }, x5) < tol);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(flatten_spatial(t), 23); }, x5) < tol);
    CHECK(finite_difference_check([](const auto& t) { return weighted_sum(transpose(t, 0, 3), 24); }, x5) < tol);
    CHECK(finite_difference_check([](const auto& t) {
      return weighted_sum(trilinear_interpolate(t, {5, 5, 4}), 25);
    }, x5) < tol);
    CHECK(finite_difference_check([&](const auto& t) {
      using T = typename std::decay_t<decltype(t)>::value_type;
      return weighted_sum(add(t, mul(t, as<T>(y))), 26);
    }, x5) < tol);
  }
}

TEST_CASE("composite conv-norm-relu graph matches finite differences") {
  Tensor x = random_tensor({1, 2, 4, 4, 4}, 50);
  Tensor w = random_tensor({4, 2, 3, 3, 3}, 51);
  Tensor g = Tensor::full({4}, 1.f), b = random_tensor({4}, 52, 0.2f, 0.6f);
  auto f = [&](const auto& t) {
    using T = typename std::decay_t<decltype(t)>::value_type;
    return weighted_sum(relu(group_norm(conv3d(t, as<T>(w), BasicTensor<T>(), 1, 1), 2, as<T>(g), as<T>(b))), 53);
  };
  CHECK(finite_difference_check(f, x) < 1e-3);
  CHECK(finite_difference_check([&](const auto& t) {
    using T = typename std::decay_t<decltype(t)>::value_type;
    return weighted_sum(relu(group_norm(conv3d(as<T>(x), t, BasicTensor<T>(), 1, 1), 2, as<T>(g), as<T>(b))), 54);
  }, w) < 1e-3);
}

TEST_CASE("forward passes are bit-identical across runs") {
  Tensor x = random_tensor({1, 2, 4, 4, 4}, 60);
  Tensor w = random_tensor({3, 2, 3, 3, 3}, 61);
  auto run = [&] {
    return gelu(group_norm(conv3d(x, w, Tensor(), 1, 1), 1, Tensor::full({3}, 1.f), Tensor::zeros({3})));
  };
  Tensor a = run(), b = run();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

}
