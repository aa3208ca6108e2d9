#include "bamd/linalg.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "bamd/errors.hpp"
#include "bamd/rng.hpp"

namespace bamd::linalg {

MatrixXd sherman_morrison_update(const MatrixXd& a_inv, const VectorXd& u, const VectorXd& v) {
  const VectorXd bu = a_inv * u;
  const Eigen::RowVectorXd vb = v.transpose() * a_inv;
  const double denom = 1.0 + v.dot(bu);
  if (std::abs(denom) < kSingularTolerance) {
    throw SingularUpdateError("sherman_morrison_update: singular update (1 + v'A^{-1}u = " + std::to_string(denom) + ")", 0);
  }
  return a_inv - (bu * vb) / denom;
}

MatrixXd woodbury_update(const MatrixXd& a_inv, const MatrixXd& u, const MatrixXd& v) {
  const Index k = u.cols();
  if (v.rows() != k || u.rows() != a_inv.rows() || v.cols() != a_inv.cols()) {
    throw Error("woodbury_update: dimension mismatch");
  }
  const MatrixXd bu = a_inv * u;
  const MatrixXd vb = v * a_inv;
  const MatrixXd inner = MatrixXd::Identity(k, k) + v * bu;
  Eigen::FullPivLU<MatrixXd> lu(inner);
  if (k > 0 && (!lu.isInvertible() || std::abs(lu.determinant()) < kSingularTolerance)) {
    throw SingularUpdateError("woodbury_update: inner matrix I + V A^{-1} U is singular", 0);
  }
  if (k == 0) return a_inv;
  return a_inv - bu * lu.solve(vb);
}

MatrixXd rank_one_chain(const MatrixXd& a0_inv, std::span<const RankOneUpdate> updates) {
  MatrixXd b = a0_inv;
  VectorXd bu(b.rows());
  Eigen::RowVectorXd vb(b.cols());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const auto& [u, v] = updates[k];
    bu.noalias() = b * u;
    vb.noalias() = v.transpose() * b;
    const double denom = 1.0 + v.dot(bu);
    if (std::abs(denom) < kSingularTolerance) {
      throw SingularUpdateError("rank_one_chain: singular update at step " + std::to_string(k), k);
    }
    b.noalias() -= (bu * vb) / denom;
  }
  return b;
}

namespace {

Eigen::LLT<MatrixXd> factor_pd(const MatrixXd& r, const char* what) {
  Eigen::LLT<MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) throw DataError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

MatrixXd spd_inverse(const MatrixXd& a) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("inverse cache: matrix is not positive definite");
  return llt.solve(MatrixXd::Identity(a.rows(), a.cols()));
}

}  // namespace

MatrixXd dual_form_inverse(const MatrixXd& z, const MatrixXd& r, double phi2, DualBranch branch) {
  if (!(phi2 > 0.0)) throw Error("dual_form_inverse: phi2 must be positive");
  const Index n = z.rows();
  const Index s = z.cols();
  if (r.rows() != n || r.cols() != n) throw Error("dual_form_inverse: R dimension mismatch");
  if (branch == DualBranch::Auto) branch = (s <= n) ? DualBranch::Primal : DualBranch::Dual;

  if (branch == DualBranch::Primal) {
    const auto llt = factor_pd(r, "dual_form_inverse");
    MatrixXd a = z.transpose() * llt.solve(z);
    a.diagonal().array() += 1.0 / phi2;
    return spd_inverse(a);
  }
  factor_pd(r, "dual_form_inverse");
  MatrixXd inner = r / phi2;
  inner.noalias() += z * z.transpose();
  const auto llt = factor_pd(inner, "dual_form_inverse");
  MatrixXd out = -(z.transpose() * llt.solve(z));
  out.diagonal().array() += 1.0;
  return phi2 * out;
}

InverseCache::InverseCache(MatrixXd a, double phi2, CachePolicy policy)
    : a_(std::move(a)), phi2_(phi2), policy_(policy) {
  if (!(phi2 > 0.0)) throw Error("inverse cache: phi2 must be positive");
  inv_ = spd_inverse(a_);
  const Index s = a_.rows();
  w_.resize(s);
  col_.resize(s);
  row_.resize(s);
}

InverseCache InverseCache::from_design(const MatrixXd& z, const MatrixXd& r_inv, double phi2, CachePolicy policy) {
  MatrixXd a = z.transpose() * r_inv * z;
  a = 0.5 * (a + a.transpose()).eval();
  a.diagonal().array() += 1.0 / phi2;
  return InverseCache(std::move(a), phi2, policy);
}

double InverseCache::drift() const {
  if (a_.size() == 0) return 0.0;
  return (a_ * inv_ - MatrixXd::Identity(a_.rows(), a_.cols())).cwiseAbs().maxCoeff();
}

void InverseCache::refresh() {
  inv_ = spd_inverse(a_);
  since_refresh_ = 0;
  ++refresh_count_;
}

void InverseCache::note_updates(std::size_t count) {
  update_count_ += count;
  since_refresh_ += count;
  if (policy_.refresh_period > 0 && since_refresh_ >= policy_.refresh_period) {
    if (drift() > policy_.drift_bound) ++drift_violations_;
    refresh();
  }
}

void InverseCache::symmetrize() {
  const Index s = inv_.rows();
  for (Index j = 0; j < s; ++j) {
    for (Index i = j + 1; i < s; ++i) {
      const double m = 0.5 * (inv_(i, j) + inv_(j, i));
      inv_(i, j) = m;
      inv_(j, i) = m;
    }
  }
}

bool InverseCache::sm_ej_left(Index j, const VectorXd& w) {
  // B u = B e_j,  v' B = w' B
  col_ = inv_.col(j);
  row_.noalias() = inv_.transpose() * w;
  const double denom = 1.0 + w.dot(col_);
  if (std::abs(denom) < kSingularTolerance) return false;
  inv_.noalias() -= (col_ / denom) * row_.transpose();
  return true;
}

bool InverseCache::sm_ej_right(Index j, const VectorXd& w) {
  // B u = B w,  v' B = e_j' B
  col_.noalias() = inv_ * w;
  row_ = inv_.row(j).transpose();
  const double denom = 1.0 + row_.dot(w);
  if (std::abs(denom) < kSingularTolerance) return false;
  inv_.noalias() -= (col_ / denom) * row_.transpose();
  return true;
}

bool InverseCache::sm_ej_diag(Index j, double kappa) {
  const double denom = 1.0 + kappa * inv_(j, j);
  if (std::abs(denom) < kSingularTolerance) return false;
  col_ = inv_.col(j);
  row_ = inv_.row(j).transpose();
  inv_.noalias() -= (col_ * (kappa / denom)) * row_.transpose();
  return true;
}

void InverseCache::apply_column_delta(const MatrixXd& z0, const ColumnDelta& delta, const MatrixXd& r_inv) {
  if (delta.is_zero()) return;
  const Index j = delta.column;
  const Index n = z0.rows();
  if (j < 0 || j >= a_.rows() || delta.delta.size() != n) throw Error("column delta: index or length out of range");

  // R^{-1} d touches only the columns where d is nonzero.
  rd_.setZero(n);
  for (Index i = 0; i < n; ++i) {
    const double d = delta.delta[i];
    if (d != 0.0) rd_.noalias() += d * r_inv.col(i);
  }
  w_.noalias() = z0.transpose() * rd_;
  const double kappa = delta.delta.dot(rd_);

  // The exact A is always updated; the inverse follows through Sherman-Morrison.
  a_.row(j) += w_.transpose();
  a_.col(j) += w_;
  a_(j, j) += kappa;

  const bool ok = sm_ej_left(j, w_) && sm_ej_right(j, w_) && sm_ej_diag(j, kappa);
  if (!ok) {
    ++fallback_count_;
    refresh();
    return;
  }
  symmetrize();
  note_updates(3);
}

void InverseCache::shift_phi2(double phi2_new) {
  if (!(phi2_new > 0.0)) throw Error("inverse cache: phi2 must be positive");
  const double c = 1.0 / phi2_new - 1.0 / phi2_;
  phi2_ = phi2_new;
  if (c == 0.0) return;
  a_.diagonal().array() += c;
  const Index s = a_.rows();
  if (s < policy_.shift_chain_max_dim) {
    for (Index j = 0; j < s; ++j) {
      if (!sm_ej_diag(j, c)) {
        ++fallback_count_;
        refresh();
        return;
      }
    }
    symmetrize();
    note_updates(static_cast<std::size_t>(s));
  } else {
    refresh();
  }
}

void column_delta_inverse_update(InverseCache& cache, const MatrixXd& z0, const ColumnDelta& delta,
                                 const MatrixXd& r_inv, double phi2_old, double phi2_new) {
  if (std::abs(phi2_old - cache.phi2()) > 1e-12 * std::max(1.0, std::abs(phi2_old))) {
    throw Error("column_delta_inverse_update: cache was built for a different phi2");
  }
  cache.apply_column_delta(z0, delta, r_inv);
  cache.shift_phi2(phi2_new);
}

BenchRow bench_column_update(Index s, Index n, int reps, std::uint64_t seed) {
  auto rng = make_rng(seed, 0xbe4c);
  std::uniform_int_distribution<int> geno(-1, 1);
  MatrixXd z(n, s);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < s; ++j) z(i, j) = geno(rng);
  const MatrixXd r_inv = MatrixXd::Identity(n, n);
  const double phi2 = 1.0;
  InverseCache cache = InverseCache::from_design(z, r_inv, phi2, CachePolicy{0, 1e-8, 64});

  std::vector<ColumnDelta> deltas;
  deltas.reserve(reps);
  for (int k = 0; k < reps; ++k) {
    ColumnDelta d{static_cast<Index>(k % s), VectorXd::Zero(n)};
    const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
    const double cur = z(i, d.column);
    const double next = cur >= 0.0 ? cur - 1.0 : cur + 1.0;
    d.delta[i] = next - cur;
    deltas.push_back(std::move(d));
  }

  using clock = std::chrono::steady_clock;
  MatrixXd zw = z;
  const auto t0 = clock::now();
  for (const auto& d : deltas) {
    column_delta_inverse_update(cache, zw, d, r_inv, phi2, phi2);
    zw.col(d.column) += d.delta;
  }
  const auto t1 = clock::now();

  MatrixXd a = cache.matrix();
  double sink = 0.0;
  const auto t2 = clock::now();
  for (int k = 0; k < reps; ++k) {
    a(k % s, k % s) += 1e-9;
    Eigen::LLT<MatrixXd> llt(a);
    const MatrixXd inv = llt.solve(MatrixXd::Identity(s, s));
    sink += inv(0, 0);
  }
  const auto t3 = clock::now();
  if (!std::isfinite(sink)) throw NumericalError("bench: dense inversion failed");

  BenchRow row;
  row.s = s;
  row.n = n;
  row.update_seconds = std::chrono::duration<double>(t1 - t0).count() / reps;
  row.dense_seconds = std::chrono::duration<double>(t3 - t2).count() / reps;
  return row;
}

}  // namespace bamd::linalg
