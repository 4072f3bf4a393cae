#pragma once

// Exact divergences between finite distributions. Two distributions are
// compared on the union of their supports; atoms match by exact coordinate
// equality. Natural logarithms throughout.

#include <cstddef>
#include <vector>

namespace safl {

struct DiscreteDist {
  /// One coordinate vector per atom. All atoms share one dimension (1 or 2 in practice).
  std::vector<std::vector<double>> support;
  std::vector<double> probs;

  /// Throws InvalidArgument unless probs are nonnegative, sum to 1 within
  /// 1e-12, and the support points are distinct and equally dimensioned.
  void validate() const;

  static DiscreteDist point_mass(std::vector<double> at);
  /// 1D convenience constructor.
  static DiscreteDist on_line(const std::vector<double>& points, std::vector<double> probs);
};

/// Both distributions expressed over the sorted union of their supports.
struct AlignedPair {
  std::vector<std::vector<double>> universe;
  std::vector<double> p;
  std::vector<double> q;
};
AlignedPair align(const DiscreteDist& P, const DiscreteDist& Q);

/// Sum p ln(p/q), +inf when some q = 0 with p > 0.
double kl(const DiscreteDist& P, const DiscreteDist& Q);
double jsd(const DiscreteDist& P, const DiscreteDist& Q);
double tv(const DiscreteDist& P, const DiscreteDist& Q);
/// W1 on the real line: integral of |F_P - F_Q| over the merged sorted support.
double wasserstein_1d(const DiscreteDist& P, const DiscreteDist& Q);

struct DivergenceTriple {
  double w = 0.0;
  double js = 0.0;
  double tv = 0.0;
};

/// P_theta = (theta, Z) against P_0 = (0, Z), Z uniform on 8 equal atoms of [0, 1].
DiscreteDist parallel_line(double theta);
DivergenceTriple parallel_lines_triple(double theta);

struct DiscriminatorEntry {
  std::vector<double> atom;
  double value = 0.0;
};

/// p_EX / (p_EX + p_GZ) over the union support; atoms with both masses zero are skipped.
std::vector<DiscriminatorEntry> optimal_joint_discriminator(const DiscreteDist& p_ex, const DiscreteDist& p_gz);

/// E_{P_EX}[ln f] + E_{P_GZ}[ln(1 - f)] with the optimal f above.
double value_at_optimum(const DiscreteDist& p_ex, const DiscreteDist& p_gz);

/// Rows of (theta, W, JS, TV) for the given parameters.
std::vector<std::pair<double, DivergenceTriple>> divergence_table(const std::vector<double>& thetas);

}  // namespace safl
