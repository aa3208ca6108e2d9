#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

#include <Eigen/Dense>

namespace bamd::linalg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kSingularTolerance = 1e-12;

// (A + u v')^{-1} from A^{-1}, with no inversion. Throws SingularUpdateError
// when |1 + v' A^{-1} u| < kSingularTolerance.
MatrixXd sherman_morrison_update(const MatrixXd& a_inv, const VectorXd& u, const VectorXd& v);

// (A + U V)^{-1} = A^{-1} - A^{-1} U (I + V A^{-1} U)^{-1} V A^{-1}; only the
// k x k inner matrix is factorized.
MatrixXd woodbury_update(const MatrixXd& a_inv, const MatrixXd& u, const MatrixXd& v);

struct RankOneUpdate {
  VectorXd u;
  VectorXd v;
};

// A_p^{-1} for A_p = A_0 + sum_k u_k v_k', one Sherman-Morrison step per term.
// A failing step reports its (zero-based) index through SingularUpdateError.
MatrixXd rank_one_chain(const MatrixXd& a0_inv, std::span<const RankOneUpdate> updates);

enum class DualBranch {
  Auto,    // invert whichever of the s x s and n x n forms is smaller
  Primal,  // (Z' R^{-1} Z + I / phi2)^{-1}
  Dual,    // phi2 [I - Z' (R / phi2 + Z Z')^{-1} Z]
};

// (Z' R^{-1} Z + I / phi2)^{-1}. R must be positive definite.
MatrixXd dual_form_inverse(const MatrixXd& z, const MatrixXd& r, double phi2, DualBranch branch = DualBranch::Auto);

struct CachePolicy {
  std::size_t refresh_period = 200;  // rank-one applications between full refactorizations
  double drift_bound = 1e-8;         // tolerated max |A B - I| when a refresh falls due
  Index shift_chain_max_dim = 64;    // identity shifts use the e_j chain below this size
};

// One changed design column: Z1 = Z0 + delta e_j'.
struct ColumnDelta {
  Index column = 0;
  VectorXd delta;

  bool is_zero() const { return delta.size() == 0 || (delta.array() == 0.0).all(); }
};

// Tracks A = Z' R^{-1} Z + I / phi2 together with its inverse. A itself is
// kept exactly (it only changes by cheap row/column edits) so refreshes
// never need Z again. Single owner; not safe to share mid-update.
class InverseCache {
 public:
  InverseCache() = default;
  InverseCache(MatrixXd a, double phi2, CachePolicy policy = {});

  static InverseCache from_design(const MatrixXd& z, const MatrixXd& r_inv, double phi2, CachePolicy policy = {});

  const MatrixXd& matrix() const { return a_; }
  const MatrixXd& inverse() const { return inv_; }
  double phi2() const { return phi2_; }
  Index dim() const { return a_.rows(); }
  const CachePolicy& policy() const { return policy_; }

  std::size_t update_count() const { return update_count_; }
  std::size_t refresh_count() const { return refresh_count_; }
  // Singular intermediate denominators that forced a full re-inversion.
  std::size_t fallback_count() const { return fallback_count_; }
  // Refreshes at which the accumulated drift exceeded policy().drift_bound.
  std::size_t drift_violations() const { return drift_violations_; }

  // max |A B - I| for the current pair.
  double drift() const;
  // Full refactorization of A.
  void refresh();

  void apply_column_delta(const MatrixXd& z0, const ColumnDelta& delta, const MatrixXd& r_inv);
  void shift_phi2(double phi2_new);

 private:
  // Returns false when the denominator is too close to zero; inv_ is left
  // untouched in that case.
  bool sm_ej_left(Index j, const VectorXd& w);   // A += e_j w'
  bool sm_ej_right(Index j, const VectorXd& w);  // A += w e_j'
  bool sm_ej_diag(Index j, double kappa);        // A += kappa e_j e_j'
  void note_updates(std::size_t count);
  void symmetrize();

  MatrixXd a_;
  MatrixXd inv_;
  double phi2_ = 1.0;
  CachePolicy policy_;
  std::size_t update_count_ = 0;
  std::size_t since_refresh_ = 0;
  std::size_t refresh_count_ = 0;
  std::size_t fallback_count_ = 0;
  std::size_t drift_violations_ = 0;
  // workspace
  VectorXd rd_, w_, col_, row_;
};

// Moves the cache from A0 = Z0' R^{-1} Z0 + I / phi2_old to
// A1 = Z1' R^{-1} Z1 + I / phi2_new with Z1 = Z0 + delta. The delta terms are
// three Sherman-Morrison steps:
//   Delta' R^{-1} Z0 = e_j w',  Z0' R^{-1} Delta = w e_j',
//   Delta' R^{-1} Delta = kappa e_j e_j',  w = Z0' R^{-1} d, kappa = d' R^{-1} d.
void column_delta_inverse_update(InverseCache& cache, const MatrixXd& z0, const ColumnDelta& delta,
                                 const MatrixXd& r_inv, double phi2_old, double phi2_new);

struct BenchRow {
  Index s = 0;
  Index n = 0;
  double update_seconds = 0.0;  // per column-delta update
  double dense_seconds = 0.0;   // per dense re-inversion of the same A
};

// Times the column-delta update against dense re-inversion on a random
// genotype design of the given size.
BenchRow bench_column_update(Index s, Index n, int reps, std::uint64_t seed);

}  // namespace bamd::linalg
