#include "bamd/errors.hpp"
#include "bamd/linalg.hpp"
#include "bamd/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bamd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(Index r, Index c, Rng& rng) {
  MatrixXd m(r, c);
  for (Index j = 0; j < c; ++j) m.col(j) = standard_normal_vector(rng, r);
  return m;
}

double rel_err(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / b.norm(); }

MatrixXd genotype_design(Index n, Index s, Rng& rng) {
  MatrixXd z(n, s);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < s; ++j) z(i, j) = static_cast<double>(static_cast<int>(rng() % 3) - 1);
  }
  return z;
}

}  // namespace

TEST_SUITE("linalg") {
  TEST_CASE("sherman-morrison matches dense inversion") {
    Rng rng = make_rng(1);
    for (int k = 0; k < 100; ++k) {
      const Index n = 2 + static_cast<Index>(rng() % 30);
      const MatrixXd a = testing::random_spd(n, rng());
      const VectorXd u = standard_normal_vector(rng, n);
      const VectorXd v = standard_normal_vector(rng, n);
      const MatrixXd got = linalg::sherman_morrison_update(a.inverse(), u, v);
      CHECK(rel_err(got, (a + u * v.transpose()).inverse()) < 1e-10);
    }
  }

  TEST_CASE("sherman-morrison refuses a singular update") {
    const MatrixXd a = MatrixXd::Identity(3, 3);
    VectorXd u = VectorXd::Zero(3);
    u[0] = 1.0;
    const VectorXd v = -u;
    CHECK_THROWS_AS(linalg::sherman_morrison_update(a, u, v), SingularUpdateError);
  }

  TEST_CASE("woodbury matches dense inversion") {
    Rng rng = make_rng(2);
    for (int k = 0; k < 50; ++k) {
      const Index n = 5 + static_cast<Index>(rng() % 30);
      const Index m = 1 + static_cast<Index>(rng() % 5);
      const MatrixXd a = testing::random_spd(n, rng());
      const MatrixXd u = random_matrix(n, m, rng);
      const MatrixXd v = random_matrix(m, n, rng);
      CHECK(rel_err(linalg::woodbury_update(a.inverse(), u, v), (a + u * v).inverse()) < 1e-9);
    }
  }

  TEST_CASE("rank-one chain reports the failing step") {
    const MatrixXd a = MatrixXd::Identity(2, 2);
    std::vector<linalg::RankOneUpdate> ups;
    VectorXd e0 = VectorXd::Zero(2);
    e0[0] = 1.0;
    ups.push_back({e0, e0});         // A = diag(2, 1)
    ups.push_back({e0, -2.0 * e0});  // A = diag(0, 1): singular
    try {
      linalg::rank_one_chain(a, ups);
      FAIL("expected a singular step");
    } catch (const SingularUpdateError& e) {
      CHECK(e.step() == 1);
    }
    ups.pop_back();
    const MatrixXd got = linalg::rank_one_chain(a, ups);
    CHECK(got(0, 0) == doctest::Approx(0.5));
  }

  TEST_CASE("dual form agrees with the primal form") {
    Rng rng = make_rng(3);
    for (int k = 0; k < 20; ++k) {
      const Index n = 3 + static_cast<Index>(rng() % 20);
      const Index s = 3 + static_cast<Index>(rng() % 20);
      const MatrixXd z = genotype_design(n, s, rng);
      const MatrixXd r = testing::random_spd(n, rng());
      const double phi2 = 0.1 + 3.0 * uniform01(rng);
      const MatrixXd p = linalg::dual_form_inverse(z, r, phi2, linalg::DualBranch::Primal);
      const MatrixXd d = linalg::dual_form_inverse(z, r, phi2, linalg::DualBranch::Dual);
      const MatrixXd dense = (z.transpose() * r.inverse() * z + MatrixXd::Identity(s, s) / phi2).inverse();
      CHECK(rel_err(p, dense) < 1e-10);
      CHECK(rel_err(d, dense) < 1e-10);
    }
  }

  TEST_CASE("cache follows column deltas and phi2 shifts") {
    Rng rng = make_rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const Index n = 20 + static_cast<Index>(rng() % 20);
      const Index s = 2 + static_cast<Index>(rng() % 15);
      MatrixXd z = genotype_design(n, s, rng);
      const MatrixXd r = testing::random_spd(n, rng());
      const MatrixXd r_inv = r.inverse();
      double phi2 = 1.0;
      auto cache = linalg::InverseCache::from_design(z, r_inv, phi2, {1000, 1e-8, 64});
      for (int step = 0; step < 60; ++step) {
        linalg::ColumnDelta d{static_cast<Index>(rng() % s), VectorXd::Zero(n)};
        for (int c = 0; c < 3; ++c) d.delta[static_cast<Index>(rng() % n)] = static_cast<double>(static_cast<int>(rng() % 3) - 1);
        const double phi2_new = 0.2 + 2.0 * uniform01(rng);
        linalg::column_delta_inverse_update(cache, z, d, r_inv, phi2, phi2_new);
        z.col(d.column) += d.delta;
        phi2 = phi2_new;
        const MatrixXd a = z.transpose() * r_inv * z + MatrixXd::Identity(s, s) / phi2;
        CHECK(rel_err(cache.matrix(), a) < 1e-12);
        CHECK(rel_err(cache.inverse(), a.inverse()) < 1e-8);
      }
      CHECK(cache.drift() < 1e-8);
    }
  }

  TEST_CASE("refresh restores an exact inverse") {
    Rng rng = make_rng(6);
    const MatrixXd z = genotype_design(30, 6, rng);
    auto cache = linalg::InverseCache::from_design(z, MatrixXd::Identity(30, 30), 0.5, {3, 1e-8, 64});
    for (int k = 0; k < 10; ++k) cache.shift_phi2(0.5 + 0.1 * k);
    CHECK(cache.refresh_count() >= 1);
    cache.refresh();
    CHECK(cache.drift() < 1e-13);
    CHECK(cache.phi2() == doctest::Approx(1.4));
  }

  TEST_CASE("zero delta leaves the cache unchanged") {
    Rng rng = make_rng(7);
    const MatrixXd z = genotype_design(10, 3, rng);
    const MatrixXd r_inv = MatrixXd::Identity(10, 10);
    auto cache = linalg::InverseCache::from_design(z, r_inv, 1.0);
    const MatrixXd before = cache.inverse();
    linalg::column_delta_inverse_update(cache, z, {1, VectorXd::Zero(10)}, r_inv, 1.0, 1.0);
    CHECK(cache.inverse() == before);
  }
}
