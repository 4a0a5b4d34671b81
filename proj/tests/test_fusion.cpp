#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "kvmt/fusion.hpp"

using namespace kvmt;

namespace {

double total(const Vector& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

}  // namespace

TEST_CASE("knn_distribution examples") {
  const NeighborSet equal = {{0, 2, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}};
  const Vector p = knn_distribution(equal, 1.0, 5);
  CHECK(p[2] == doctest::Approx(2.0 / 3.0));
  CHECK(p[3] == doctest::Approx(1.0 / 3.0));
  CHECK(p[0] == 0.0);
  CHECK(p[4] == 0.0);

  const NeighborSet single = {{4, 1, 0.3}};
  CHECK(knn_distribution(single, 0.5, 3) == Vector{0.0, 1.0, 0.0});

  // Two values at distances 0 and 1, T = 1: e^0 / (e^0 + e^-1).
  const NeighborSet two = {{0, 0, 0.0}, {1, 1, 1.0}};
  const Vector q = knn_distribution(two, 1.0, 2);
  CHECK(q[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("knn_distribution properties") {
  Rng rng(1);
  std::uniform_real_distribution<double> dist(0.0, 5.0);
  std::uniform_int_distribution<TokenId> val(0, 6);
  for (int trial = 0; trial < 200; ++trial) {
    NeighborSet nb;
    for (EntryId i = 0; i < 8; ++i) nb.push_back({i, val(rng), dist(rng)});
    const double t = 0.1 + dist(rng);
    const Vector p = knn_distribution(nb, t, 7);
    CHECK(total(p) == doctest::Approx(1.0));
    for (double x : p) CHECK(x >= 0.0);
    // Values never retrieved get nothing.
    for (TokenId y = 0; y < 7; ++y) {
      const bool present = std::any_of(nb.begin(), nb.end(), [y](const Neighbor& n) { return n.value == y; });
      if (!present) CHECK(p[y] == 0.0);
    }
    // Neighbor order does not matter.
    NeighborSet shuffled = nb;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const Vector p2 = knn_distribution(shuffled, t, 7);
    for (std::size_t y = 0; y < 7; ++y) CHECK(p2[y] == doctest::Approx(p[y]).epsilon(1e-12));
  }
}

TEST_CASE("knn_distribution sharpens as T goes to zero") {
  const NeighborSet nb = {{0, 0, 0.5}, {1, 1, 0.6}, {2, 1, 0.7}};
  const Vector cold = knn_distribution(nb, 1e-4, 2);
  CHECK(cold[0] == doctest::Approx(1.0));
  const Vector hot = knn_distribution(nb, 1e4, 2);
  CHECK(hot[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-3));
  // Large distances stay finite.
  const NeighborSet far = {{0, 0, 1e6}, {1, 1, 1e6 + 1}};
  const Vector p = knn_distribution(far, 1.0, 2);
  CHECK(std::isfinite(p[0]));
  CHECK(total(p) == doctest::Approx(1.0));
}

TEST_CASE("knn_distribution errors") {
  const NeighborSet nb = {{0, 3, 0.0}};
  CHECK_THROWS_AS(knn_distribution(nb, 0.0, 5), InvalidArgument);
  CHECK_THROWS_AS(knn_distribution({}, 1.0, 5), InvalidArgument);
  CHECK_THROWS_AS(knn_distribution(nb, 1.0, 3), InvalidArgument);
}

TEST_CASE("interpolate") {
  const Vector a = {0.7, 0.2, 0.1};
  const Vector b = {0.0, 0.5, 0.5};
  CHECK(interpolate(a, b, 1.0) == a);
  CHECK(interpolate(a, b, 0.0) == b);
  const Vector mid = interpolate(a, b, 0.25);
  CHECK(mid[0] == doctest::Approx(0.175));
  CHECK(mid[1] == doctest::Approx(0.425));
  CHECK(total(mid) == doctest::Approx(1.0));
  // Affine in lambda.
  for (double l : {0.1, 0.5, 0.9}) {
    const Vector m = interpolate(a, b, l);
    for (std::size_t i = 0; i < 3; ++i) CHECK(m[i] == doctest::Approx(l * a[i] + (1 - l) * b[i]));
  }
  CHECK_THROWS_AS(interpolate(a, b, 1.5), InvalidArgument);
  CHECK_THROWS_AS(interpolate(a, b, -0.1), InvalidArgument);
  CHECK_THROWS_AS(interpolate(a, Vector{1.0}, 0.5), InvalidArgument);
}

TEST_CASE("attend_values examples") {
  SUBCASE("a single embedding is returned as is") {
    const Attention a = attend_values(Vector{0.3, -1.0}, {Vector{2.0, 5.0}});
    CHECK(a.weights == Vector{1.0});
    CHECK(a.m == Vector{2.0, 5.0});
  }
  SUBCASE("zero query averages") {
    const Attention a = attend_values(Vector{0.0, 0.0}, {Vector{1.0, 0.0}, Vector{0.0, 1.0}});
    CHECK(a.weights[0] == doctest::Approx(0.5));
    CHECK(a.m[0] == doctest::Approx(0.5));
    CHECK(a.m[1] == doctest::Approx(0.5));
  }
  SUBCASE("unscaled dot products") {
    // scores 2 and 0 for d = 2: weight e^2/(e^2+1) with no 1/sqrt(d).
    const Attention a = attend_values(Vector{2.0, 0.0}, {Vector{1.0, 0.0}, Vector{0.0, 1.0}});
    const double w = std::exp(2.0) / (std::exp(2.0) + 1.0);
    CHECK(a.weights[0] == doctest::Approx(w));
    CHECK(a.m[0] == doctest::Approx(w));
    CHECK(a.m[1] == doctest::Approx(1.0 - w));
  }
  CHECK_THROWS_AS(attend_values(Vector{1.0}, {}), InvalidArgument);
  CHECK_THROWS_AS(attend_values(Vector{1.0}, {Vector{1.0, 2.0}}), InvalidArgument);
}

TEST_CASE("attend_values output lies in the hull of the embeddings") {
  const Matrix e = testing::gaussian(5, 3, 2);
  std::vector<Vector> emb;
  for (std::size_t i = 0; i < 5; ++i) emb.emplace_back(e.row(i).begin(), e.row(i).end());
  Rng rng(3);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    const Vector q = {g(rng), g(rng), g(rng)};
    const Attention a = attend_values(q, emb);
    CHECK(total(a.weights) == doctest::Approx(1.0));
    for (std::size_t c = 0; c < 3; ++c) {
      double lo = 1e9, hi = -1e9;
      for (const auto& v : emb) {
        lo = std::min(lo, v[c]);
        hi = std::max(hi, v[c]);
      }
      CHECK(a.m[c] >= lo - 1e-12);
      CHECK(a.m[c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("gate_fuse examples") {
  FusionParams p = FusionParams::zeros(2);
  const Vector h = {1.0, -1.0};
  const Vector m = {3.0, 5.0};
  SUBCASE("zero parameters average") {
    const Gate g = gate_fuse(h, m, p);
    CHECK(g.g == Vector{0.5, 0.5});
    CHECK(g.z[0] == doctest::Approx(2.0));
    CHECK(g.z[1] == doctest::Approx(2.0));
  }
  SUBCASE("saturated bias selects one side") {
    p.b = {50.0, -50.0};
    const Gate g = gate_fuse(h, m, p);
    CHECK(g.z[0] == doctest::Approx(3.0));
    CHECK(g.z[1] == doctest::Approx(-1.0));
  }
  SUBCASE("weights see h and m") {
    p.w1 = Matrix::identity(2);
    p.w2 = Matrix(2, 2);
    p.w2(0, 1) = 1.0;
    // gate pre-activations: h + (m1, 0) = (6, -1)
    const Gate g = gate_fuse(h, m, p);
    CHECK(g.g[0] == doctest::Approx(sigmoid(6.0)));
    CHECK(g.g[1] == doctest::Approx(sigmoid(-1.0)));
    CHECK(g.z[1] == doctest::Approx(sigmoid(-1.0) * 5.0 + (1 - sigmoid(-1.0)) * -1.0));
  }
  CHECK_THROWS_AS(gate_fuse(Vector{1.0}, m, p), InvalidArgument);
}

TEST_CASE("gate output lies between h and m") {
  Rng rng(4);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    FusionParams p{testing::gaussian(4, 4, trial), testing::gaussian(4, 4, trial + 1000), Vector(4)};
    for (auto& x : p.b) x = g(rng);
    Vector h(4), m(4);
    for (auto& x : h) x = g(rng);
    for (auto& x : m) x = g(rng);
    const Gate out = gate_fuse(h, m, p);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(out.g[i] >= 0.0);
      CHECK(out.g[i] <= 1.0);
      CHECK(out.z[i] >= std::min(h[i], m[i]) - 1e-12);
      CHECK(out.z[i] <= std::max(h[i], m[i]) + 1e-12);
    }
  }
}

TEST_CASE("output_distribution") {
  Matrix w(3, 2);
  w(0, 0) = 1;
  w(1, 1) = 1;
  w(2, 0) = 1;
  w(2, 1) = 1;
  const Vector z = {1.0, 2.0};
  // logits 1, 2, 3
  const Vector p = output_distribution(z, w);
  const double s = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p[0] == doctest::Approx(std::exp(1.0) / s));
  CHECK(p[1] == doctest::Approx(std::exp(2.0) / s));
  CHECK(p[2] == doctest::Approx(std::exp(3.0) / s));
  CHECK(output_distribution(Vector{0.0, 0.0}, w) == Vector(3, 1.0 / 3.0));
}
