#include <cmath>

#include "bamd/em.hpp"
#include "bamd/errors.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bamd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

model::Dataset em_toy(Index n, Index s, double missing, model::Coding coding, std::uint64_t seed) {
  auto codes = testing::random_codes(n, s, seed);
  Rng rng = make_rng(seed, 31);
  model::MaskMatrix mask = model::MaskMatrix::Constant(n, s, false);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < s; ++j) mask(i, j) = uniform01(rng) < missing;
  }
  for (Index j = 0; j < s; ++j) mask(j % n, j) = false;
  MatrixXd x(n, 2);
  x.col(0).setOnes();
  x.col(1) = standard_normal_vector(rng, n);
  const MatrixXd z = model::snp_design(codes, coding);
  const VectorXd gamma = standard_normal_vector(rng, z.cols());
  const MatrixXd r = MatrixXd::Identity(n, n);
  const VectorXd y = testing::simulate_phenotypes(x, z, Eigen::Vector2d(1, 2), gamma, 0.5, r, seed);
  return testing::make_dataset(codes, mask, y, x, r, coding);
}

}  // namespace

TEST_SUITE("em") {
  TEST_CASE("complete data reduces to least squares") {
    const auto d = em_toy(40, 3, 0.0, model::Coding::AdditiveDominance, 1);
    const auto r = em::run_em(d, {});
    MatrixXd w(40, 2 + 6);
    w << d.design, model::snp_design(d.genotypes.codes, d.coding);
    const VectorXd ls = w.colPivHouseholderQr().solve(d.phenotypes);
    CHECK((r.state.beta - ls.head(2)).norm() < 1e-10);
    CHECK((r.state.gamma - ls.tail(6)).norm() < 1e-10);
    CHECK(r.state.sigma2 == doctest::Approx((d.phenotypes - w * ls).squaredNorm() / 40.0).epsilon(1e-10));
    CHECK(r.converged);
  }

  TEST_CASE("completion table equals direct enumeration") {
    const auto d = em_toy(10, 3, 0.5, model::Coding::AdditiveDominance, 2);
    const auto pattern = em::MissingPattern::from(d.genotypes);
    em::EmState st;
    st.beta = Eigen::Vector2d(0.5, 1.5);
    st.gamma = VectorXd::LinSpaced(6, -1, 1);
    st.sigma2 = 0.8;
    for (Index i = 0; i < 10; ++i) {
      const auto table = em::missing_distribution(st, d, pattern, i);
      REQUIRE(table.size() == pattern.enumeration_size(i));
      double total = 0.0;
      std::vector<double> brute;
      double brute_total = 0.0;
      for (const auto& c : table) {
        total += c.probability;
        auto codes = d.genotypes.codes;
        for (std::size_t m = 0; m < c.codes.size(); ++m) codes(i, pattern.missing[i][m]) = c.codes[m];
        const MatrixXd z = model::snp_design(codes, d.coding);
        const double e = d.phenotypes[i] - d.design.row(i).dot(st.beta) - z.row(i).dot(st.gamma);
        brute.push_back(std::exp(-e * e / (2.0 * st.sigma2)));
        brute_total += brute.back();
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t k = 0; k < table.size(); ++k) CHECK(table[k].probability == doctest::Approx(brute[k] / brute_total));
    }
  }

  TEST_CASE("log-likelihood never decreases") {
    for (std::uint64_t seed = 3; seed < 8; ++seed) {
      const auto d = em_toy(30, 3, 0.25, model::Coding::Signed, seed);
      const auto r = em::run_em(d, {});
      REQUIRE(r.exact);
      for (std::size_t k = 1; k < r.log.size(); ++k) CHECK(*r.log[k].loglik >= *r.log[k - 1].loglik - 1e-9);
    }
  }

  TEST_CASE("monte carlo moments approach the exact ones") {
    const auto d = em_toy(12, 3, 0.4, model::Coding::Signed, 9);
    const auto pattern = em::MissingPattern::from(d.genotypes);
    em::EmState st;
    st.beta = Eigen::Vector2d(1, 2);
    st.gamma = Eigen::Vector3d(0.5, -0.5, 1.0);
    st.sigma2 = 0.5;
    Rng rng = make_rng(1);
    const auto exact = em::e_step(st, d, pattern, {}, rng);
    CHECK(exact.monte_carlo_individuals == 0);
    em::EStepOptions mc;
    mc.cap = 1;
    mc.mc_samples = 20000;
    const auto approx = em::e_step(st, d, pattern, mc, rng);
    CHECK(approx.monte_carlo_individuals > 0);
    CHECK((approx.expected_z - exact.expected_z).cwiseAbs().maxCoeff() < 0.05);
    CHECK((approx.v_z - exact.v_z).cwiseAbs().maxCoeff() < 0.2);
    CHECK_FALSE(em::observed_loglik(st, d, pattern, 1).has_value());
    CHECK_THROWS_AS(em::missing_distribution(st, d, pattern, 1, 0), UsageError);
  }

  TEST_CASE("enumeration size saturates") {
    em::MissingPattern p;
    p.missing.push_back(std::vector<Index>(100, 0));
    p.missing.push_back({0, 1});
    CHECK(p.enumeration_size(0) == std::numeric_limits<std::size_t>::max());
    CHECK(p.enumeration_size(1) == 9);
    CHECK_FALSE(p.exact_possible(729));
  }

  TEST_CASE("output formats") {
    const auto d = em_toy(20, 2, 0.1, model::Coding::Signed, 10);
    const auto r = em::run_em(d, {});
    CHECK(em::format_em_log(r).rfind("iteration,loglik,max_delta\n", 0) == 0);
    const auto est = em::format_em_estimates(r, d);
    CHECK(est.find("sigma2,") != std::string::npos);
    CHECK(est.find("SNP2,") != std::string::npos);
  }
}
