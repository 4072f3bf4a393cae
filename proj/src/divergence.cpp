#include "safl/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "safl/errors.hpp"

namespace safl {

namespace {

// Pairwise summation keeps sums of equal power-of-two multiples exact.
double pairwise_sum(const double* v, std::size_t n) {
  if (n == 0) return 0.0;
  if (n == 1) return v[0];
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

double safe_term(double p, double q) {
  if (p == 0.0) return 0.0;
  if (q == 0.0) return std::numeric_limits<double>::infinity();
  return p * std::log(p / q);
}

}  // namespace

void DiscreteDist::validate() const {
  if (support.size() != probs.size()) {
    throw InvalidArgument("support and probs differ in length");
  }
  if (support.empty()) {
    throw InvalidArgument("distribution has no atoms");
  }
  const std::size_t dim = support.front().size();
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i].size() != dim || dim == 0) {
      throw InvalidArgument("support points must share a nonzero dimension");
    }
    if (!seen.insert(support[i]).second) {
      throw InvalidArgument("support points must be distinct");
    }
    if (!(probs[i] >= 0.0) || !std::isfinite(probs[i])) {
      throw InvalidArgument("probabilities must be finite and nonnegative");
    }
  }
  if (std::abs(pairwise_sum(probs) - 1.0) > 1e-12) {
    throw InvalidArgument("probabilities must sum to 1");
  }
}

DiscreteDist DiscreteDist::point_mass(std::vector<double> at) { return {{std::move(at)}, {1.0}}; }

DiscreteDist DiscreteDist::on_line(const std::vector<double>& points, std::vector<double> probs) {
  DiscreteDist d;
  for (double x : points) d.support.push_back({x});
  d.probs = std::move(probs);
  return d;
}

AlignedPair align(const DiscreteDist& P, const DiscreteDist& Q) {
  P.validate();
  Q.validate();
  if (P.support.front().size() != Q.support.front().size()) {
    throw InvalidArgument("distributions live in different dimensions");
  }
  AlignedPair out;
  std::set<std::vector<double>> all(P.support.begin(), P.support.end());
  all.insert(Q.support.begin(), Q.support.end());
  out.universe.assign(all.begin(), all.end());
  out.p.assign(out.universe.size(), 0.0);
  out.q.assign(out.universe.size(), 0.0);
  auto index_of = [&](const std::vector<double>& atom) {
    return static_cast<std::size_t>(std::lower_bound(out.universe.begin(), out.universe.end(), atom) -
                                    out.universe.begin());
  };
  for (std::size_t i = 0; i < P.support.size(); ++i) out.p[index_of(P.support[i])] = P.probs[i];
  for (std::size_t i = 0; i < Q.support.size(); ++i) out.q[index_of(Q.support[i])] = Q.probs[i];
  return out;
}

double kl(const DiscreteDist& P, const DiscreteDist& Q) {
  const AlignedPair a = align(P, Q);
  std::vector<double> terms(a.p.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    terms[i] = safe_term(a.p[i], a.q[i]);
  }
  return pairwise_sum(terms);
}

double jsd(const DiscreteDist& P, const DiscreteDist& Q) {
  const AlignedPair a = align(P, Q);
  std::vector<double> tp(a.p.size()), tq(a.p.size());
  for (std::size_t i = 0; i < a.p.size(); ++i) {
    const double m = 0.5 * (a.p[i] + a.q[i]);
    tp[i] = safe_term(a.p[i], m);
    tq[i] = safe_term(a.q[i], m);
  }
  return 0.5 * pairwise_sum(tp) + 0.5 * pairwise_sum(tq);
}

double tv(const DiscreteDist& P, const DiscreteDist& Q) {
  const AlignedPair a = align(P, Q);
  std::vector<double> d(a.p.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(a.p[i] - a.q[i]);
  return 0.5 * pairwise_sum(d);
}

double wasserstein_1d(const DiscreteDist& P, const DiscreteDist& Q) {
  const AlignedPair a = align(P, Q);
  if (a.universe.front().size() != 1) {
    throw InvalidArgument("wasserstein_1d needs supports on the real line");
  }
  std::vector<double> pieces;
  double fp = 0.0, fq = 0.0;
  for (std::size_t i = 0; i + 1 < a.universe.size(); ++i) {
    fp += a.p[i];
    fq += a.q[i];
    pieces.push_back(std::abs(fp - fq) * (a.universe[i + 1][0] - a.universe[i][0]));
  }
  return pairwise_sum(pieces);
}

DiscreteDist parallel_line(double theta) {
  constexpr int kAtoms = 8;
  DiscreteDist d;
  for (int k = 0; k < kAtoms; ++k) {
    d.support.push_back({theta, (k + 0.5) / kAtoms});
    d.probs.push_back(1.0 / kAtoms);
  }
  return d;
}

DivergenceTriple parallel_lines_triple(double theta) {
  const DiscreteDist p_theta = parallel_line(theta);
  const DiscreteDist p_zero = parallel_line(0.0);
  DivergenceTriple out;
  // Both lines carry the same vertical marginal, so the optimal plan moves
  // every atom horizontally and W reduces to W1 of the horizontal marginals.
  out.w = wasserstein_1d(DiscreteDist::point_mass({theta}), DiscreteDist::point_mass({0.0}));
  out.js = jsd(p_theta, p_zero);
  out.tv = tv(p_theta, p_zero);
  return out;
}

std::vector<DiscriminatorEntry> optimal_joint_discriminator(const DiscreteDist& p_ex, const DiscreteDist& p_gz) {
  const AlignedPair a = align(p_ex, p_gz);
  std::vector<DiscriminatorEntry> table;
  for (std::size_t i = 0; i < a.universe.size(); ++i) {
    const double total = a.p[i] + a.q[i];
    if (total > 0.0) {
      table.push_back({a.universe[i], a.p[i] / total});
    }
  }
  return table;
}

double value_at_optimum(const DiscreteDist& p_ex, const DiscreteDist& p_gz) {
  const AlignedPair a = align(p_ex, p_gz);
  std::vector<double> terms;
  for (std::size_t i = 0; i < a.universe.size(); ++i) {
    const double total = a.p[i] + a.q[i];
    if (a.p[i] > 0.0) terms.push_back(a.p[i] * std::log(a.p[i] / total));
    if (a.q[i] > 0.0) terms.push_back(a.q[i] * std::log(a.q[i] / total));
  }
  return pairwise_sum(terms);
}

std::vector<std::pair<double, DivergenceTriple>> divergence_table(const std::vector<double>& thetas) {
  std::vector<std::pair<double, DivergenceTriple>> rows;
  rows.reserve(thetas.size());
  for (double t : thetas) rows.emplace_back(t, parallel_lines_triple(t));
  return rows;
}

}  // namespace safl
