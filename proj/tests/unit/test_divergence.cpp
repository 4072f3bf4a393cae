#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "doctest.h"
#include "safl/divergence.hpp"
#include "safl/errors.hpp"

using namespace safl;

namespace {

constexpr double kLn2 = std::numbers::ln2;

DiscreteDist random_dist(std::mt19937_64& rng, int atoms) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pts, w;
  double total = 0.0;
  for (int i = 0; i < atoms; ++i) {
    pts.push_back(static_cast<double>(rng() % 12));
    w.push_back(u(rng) + 0.01);
    total += w.back();
  }
  // Merge duplicates produced by the coarse grid.
  std::vector<double> up, uw;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool merged = false;
    for (std::size_t j = 0; j < up.size(); ++j)
      if (up[j] == pts[i]) {
        uw[j] += w[i] / total;
        merged = true;
      }
    if (!merged) {
      up.push_back(pts[i]);
      uw.push_back(w[i] / total);
    }
  }
  double s = 0.0;
  for (double v : uw) s += v;
  uw.back() += 1.0 - s;
  return DiscreteDist::on_line(up, uw);
}

}  // namespace

TEST_CASE("identical distributions have zero divergence") {
  const DiscreteDist p = DiscreteDist::on_line({0.0, 1.0, 3.0}, {0.2, 0.5, 0.3});
  CHECK(kl(p, p) == 0.0);
  CHECK(jsd(p, p) == 0.0);
  CHECK(tv(p, p) == 0.0);
  CHECK(wasserstein_1d(p, p) == 0.0);
  CHECK(value_at_optimum(p, p) == doctest::Approx(-2.0 * kLn2).epsilon(1e-15));
}

TEST_CASE("closed-form values") {
  const DiscreteDist p = DiscreteDist::on_line({0.0, 1.0}, {0.5, 0.5});
  const DiscreteDist q = DiscreteDist::on_line({0.0, 1.0}, {0.25, 0.75});
  CHECK(kl(p, q) == doctest::Approx(0.5 * std::log(4.0 / 3.0)).epsilon(1e-15));
  CHECK(tv(p, q) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(wasserstein_1d(p, q) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(kl(p, DiscreteDist::point_mass({0.0})) == std::numeric_limits<double>::infinity());

  const DiscreteDist spread = DiscreteDist::on_line({0.0, 2.0}, {0.5, 0.5});
  CHECK(wasserstein_1d(spread, DiscreteDist::point_mass({1.0})) == 1.0);
  CHECK(wasserstein_1d(DiscreteDist::point_mass({-1.5}), DiscreteDist::point_mass({2.0})) == 3.5);
}

TEST_CASE("disjoint supports saturate JS and TV") {
  const DiscreteDist a = DiscreteDist::on_line({0.0, 1.0}, {0.5, 0.5});
  const DiscreteDist b = DiscreteDist::on_line({2.0, 3.0}, {0.1, 0.9});
  CHECK(jsd(a, b) == kLn2);
  CHECK(tv(a, b) == 1.0);
  CHECK(value_at_optimum(a, b) == 0.0);
  for (const DiscriminatorEntry& e : optimal_joint_discriminator(a, b)) {
    CHECK(e.value == (e.atom[0] < 2.0 ? 1.0 : 0.0));
  }
}

TEST_CASE("parallel lines table") {
  const DivergenceTriple zero = parallel_lines_triple(0.0);
  CHECK(zero.w == 0.0);
  CHECK(zero.js == 0.0);
  CHECK(zero.tv == 0.0);
  for (double theta : {0.5, -0.3, 1.0, 1e-6}) {
    const DivergenceTriple t = parallel_lines_triple(theta);
    CHECK(t.w == doctest::Approx(std::abs(theta)).epsilon(1e-15));
    CHECK(t.js == kLn2);
    CHECK(t.tv == 1.0);
  }
  const DiscreteDist line = parallel_line(0.25);
  REQUIRE(line.support.size() == 8);
  CHECK(line.support[3] == std::vector<double>{0.25, 3.5 / 8});
  CHECK(line.probs[0] == 0.125);

  const auto table = divergence_table({-1.0, 0.0, 1.0});
  REQUIRE(table.size() == 3);
  CHECK(table[0].first == -1.0);
  CHECK(table[1].second.js == 0.0);
}

TEST_CASE("randomised identities and inequalities") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const DiscreteDist p = random_dist(rng, 1 + static_cast<int>(rng() % 6));
    const DiscreteDist q = random_dist(rng, 1 + static_cast<int>(rng() % 6));
    const double j = jsd(p, q);
    const double t = tv(p, q);
    CHECK(j == doctest::Approx(jsd(q, p)).epsilon(1e-14));
    CHECK(j >= -1e-15);
    CHECK(j <= kLn2 + 1e-15);
    CHECK(j <= kLn2 * t + 1e-12);
    CHECK(t <= std::sqrt(kl(p, q) / 2.0) + 1e-12);  // Pinsker
    // Optimal discriminator value = 2 JSD - 2 ln 2.
    CHECK(value_at_optimum(p, q) == doctest::Approx(2.0 * j - 2.0 * kLn2).epsilon(1e-12));
    double mean_p = 0.0, mean_q = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) mean_p += p.probs[i] * p.support[i][0];
    for (std::size_t i = 0; i < q.probs.size(); ++i) mean_q += q.probs[i] * q.support[i][0];
    CHECK(wasserstein_1d(p, q) >= std::abs(mean_p - mean_q) - 1e-12);
  }
}

TEST_CASE("align merges supports in sorted order") {
  const AlignedPair a = align(DiscreteDist::on_line({2.0, 0.0}, {0.5, 0.5}), DiscreteDist::point_mass({1.0}));
  REQUIRE(a.universe.size() == 3);
  CHECK(a.universe[1] == std::vector<double>{1.0});
  CHECK(a.p == std::vector<double>{0.5, 0.0, 0.5});
  CHECK(a.q == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("validation") {
  CHECK_THROWS_AS(DiscreteDist::on_line({0.0, 1.0}, {0.5, 0.6}).validate(), InvalidArgument);
  CHECK_THROWS_AS(DiscreteDist::on_line({0.0, 0.0}, {0.5, 0.5}).validate(), InvalidArgument);
  CHECK_THROWS_AS(DiscreteDist::on_line({0.0, 1.0}, {1.5, -0.5}).validate(), InvalidArgument);
  CHECK_THROWS_AS(jsd(DiscreteDist::point_mass({0.0}), DiscreteDist::point_mass({0.0, 1.0})), InvalidArgument);
  CHECK_THROWS_AS(wasserstein_1d(parallel_line(0.0), parallel_line(1.0)), InvalidArgument);
}
