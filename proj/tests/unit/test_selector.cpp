#include <cmath>

#include "bamd/errors.hpp"
#include "bamd/gibbs.hpp"
#include "bamd/selector.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bamd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using selector::ModelIndicator;

namespace {

struct Run {
  model::Dataset data;
  gibbs::PosteriorSamples ps;
};

Run small_run(Index n, Index s, double missing, model::Coding coding, std::size_t iters, std::uint64_t seed) {
  auto codes = testing::random_codes(n, s, seed);
  Rng rng = make_rng(seed, 9);
  model::MaskMatrix mask = model::MaskMatrix::Constant(n, s, false);
  for (Index i = 1; i < n; ++i) {
    for (Index j = 0; j < s; ++j) mask(i, j) = uniform01(rng) < missing;
  }
  const MatrixXd x = MatrixXd::Ones(n, 1);
  const MatrixXd z = model::snp_design(codes, coding);
  VectorXd gamma = VectorXd::Zero(z.cols());
  gamma[0] = 1.5;
  const MatrixXd r = MatrixXd::Identity(n, n);
  const VectorXd y = testing::simulate_phenotypes(x, z, VectorXd::Constant(1, 2.0), gamma, 1.0, r, seed);
  Run out{testing::make_dataset(codes, mask, y, x, r, coding), {}};
  gibbs::GibbsConfig cfg;
  cfg.total_iterations = iters + 500;
  cfg.burn_in = 500;
  cfg.thinning = 1;
  cfg.seed = seed;
  out.ps = gibbs::run_chain(out.data, model::default_priors(), cfg);
  return out;
}

}  // namespace

TEST_SUITE("selector") {
  TEST_CASE("bitstrings") {
    const auto d = selector::parse_bitstring("1011", 4);
    CHECK(selector::to_bitstring(d) == "1011");
    CHECK_FALSE(selector::is_full_model(d));
    CHECK(selector::is_full_model(selector::full_model(3)));
    CHECK_THROWS_AS(selector::parse_bitstring("10", 3), UsageError);
    CHECK_THROWS_AS(selector::parse_bitstring("1a1", 3), UsageError);
    CHECK(selector::excluded_columns(d, model::Coding::AdditiveDominance) == std::vector<Index>{2, 3});
  }

  TEST_CASE("full model estimate is exactly one") {
    const auto run = small_run(15, 3, 0.2, model::Coding::Signed, 300, 1);
    const auto e =
        selector::estimate_bayes_factor(run.data, run.ps.states, run.ps.missing_cells, selector::full_model(3));
    CHECK(e.log_value == 0.0);
    CHECK(e.value() == 1.0);
    CHECK(e.sample_count == 300);
  }

  TEST_CASE("snapshot terms equal direct evaluation") {
    const auto run = small_run(14, 3, 0.25, model::Coding::AdditiveDominance, 60, 2);
    for (const auto& st : run.ps.states) {
      const auto codes = gibbs::state_codes(run.data.genotypes, run.ps.missing_cells, st.imputed);
      const MatrixXd z = model::snp_design(codes, run.data.coding);
      const auto snap = selector::make_snapshot(run.data, z, st);
      for (const char* bits : {"011", "101", "110", "000", "111"}) {
        const auto delta = selector::parse_bitstring(bits, 3);
        const auto naive = selector::bf_sample_term(run.data, z, st, delta);
        const auto fast = selector::bf_sample_term(snap, delta, run.data.coding);
        REQUIRE(naive.has_value() == fast.has_value());
        if (naive) CHECK(*fast == doctest::Approx(*naive).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("summand matches its formula") {
    const auto run = small_run(12, 2, 0.0, model::Coding::Signed, 20, 3);
    const auto& st = run.ps.states.back();
    const MatrixXd z = run.data.genotypes.codes.cast<double>();
    const VectorXd c = run.data.phenotypes - run.data.design * st.beta - z.col(0) * st.gamma[0];
    const VectorXd zc = z.col(1);
    const double zz = zc.squaredNorm();
    const double cpc = std::pow(zc.dot(c), 2) / zz;
    const double expected = 0.5 * std::log(st.phi2) + 0.5 * std::log(zz) +
                            (st.gamma[1] * st.gamma[1] / st.phi2 - cpc) / (2.0 * st.sigma2);
    const auto got = selector::bf_sample_term(run.data, z, st, selector::parse_bitstring("10", 2));
    REQUIRE(got.has_value());
    CHECK(*got == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("estimator agrees with quadrature on a conjugate toy") {
    const auto run = small_run(15, 2, 0.0, model::Coding::Signed, 20000, 4);
    const MatrixXd z = run.data.genotypes.codes.cast<double>();
    const auto& y = run.data.phenotypes;
    const auto& x = run.data.design;
    const MatrixXd r = MatrixXd::Identity(15, 15);
    const auto pr = model::default_priors();
    const double full = testing::log_marginal_likelihood(y, x, z, r, pr);
    const double keep_first = testing::log_marginal_likelihood(y, x, z.leftCols(1), r, pr) - full;
    const auto e = selector::estimate_bayes_factor(run.data, run.ps.states, run.ps.missing_cells,
                                                   selector::parse_bitstring("10", 2));
    CHECK(std::abs(e.value() / std::exp(keep_first) - 1.0) < 0.1);
  }

  TEST_CASE("accumulator is stable and rejects empty input") {
    selector::BayesFactorAccumulator acc;
    acc.add(1000.0);
    acc.add(1000.0 + std::log(3.0));
    acc.add(std::nullopt);
    const auto e = acc.finish();
    CHECK(e.log_value == doctest::Approx(1000.0 + std::log(2.0)));
    CHECK(e.invalid_count == 1);
    CHECK(e.invalid_rate() == doctest::Approx(1.0 / 3.0));
    selector::BayesFactorAccumulator none;
    none.add(std::nullopt);
    CHECK_THROWS_AS(none.finish(), NumericalError);
  }

  TEST_CASE("proposals only touch candidates") {
    Rng rng = make_rng(5);
    const ModelIndicator start{1, 0, 1, 0, 1};
    const std::vector<Index> cand{1, 3};
    for (int k = 0; k < 500; ++k) {
      const auto prop = selector::propose_model(start, rng, 0.5, cand);
      CHECK(prop[0] == 1);
      CHECK(prop[2] == 1);
      CHECK(prop[4] == 1);
    }
    int flips = 0;
    for (int k = 0; k < 200; ++k) {
      const auto prop = selector::propose_model(start, rng, 1.0, cand);
      int diff = 0;
      for (std::size_t b = 0; b < prop.size(); ++b) diff += prop[b] != start[b];
      flips += diff == 1;
    }
    CHECK(flips == 200);
  }

  TEST_CASE("search occupies the dominant model") {
    selector::SearchConfig cfg;
    cfg.search_iterations = 20000;
    cfg.seed = 3;
    auto eval = [](const ModelIndicator& d, std::size_t) {
      selector::BayesFactorEstimate e;
      e.log_value = d[0] == 0 ? std::log(100.0) : 0.0;
      return e;
    };
    selector::ModelSearch search(1, cfg, eval);
    for (std::size_t k = 0; k < cfg.search_iterations; ++k) search.step(0);
    std::size_t dominant = 0;
    for (const auto& s : search.trace().visited) dominant += s.current[0] == 0;
    CHECK(static_cast<double>(dominant) / cfg.search_iterations > 0.95);
    CHECK(search.trace().best == ModelIndicator{0});
  }

  TEST_CASE("a common factor leaves the search unchanged") {
    selector::SearchConfig cfg;
    cfg.search_iterations = 400;
    cfg.seed = 9;
    auto make = [](double shift) {
      return [shift](const ModelIndicator& d, std::size_t) {
        selector::BayesFactorEstimate e;
        double v = 0.0;
        for (std::size_t b = 0; b < d.size(); ++b) v += (d[b] ? 0.25 : -0.5) * static_cast<double>(b + 1);
        e.log_value = v + shift;
        return e;
      };
    };
    selector::ModelSearch a(4, cfg, make(0.0));
    selector::ModelSearch b(4, cfg, make(8.0));
    for (std::size_t k = 0; k < cfg.search_iterations; ++k) {
      a.step(k);
      b.step(k);
    }
    REQUIRE(a.trace().visited.size() == b.trace().visited.size());
    for (std::size_t k = 0; k < a.trace().visited.size(); ++k) {
      CHECK(a.trace().visited[k].accepted == b.trace().visited[k].accepted);
      CHECK(a.trace().visited[k].current == b.trace().visited[k].current);
    }
    CHECK(a.trace().best == b.trace().best);
  }

  TEST_CASE("live coupling reproduces the recorded replay") {
    auto run = small_run(16, 3, 0.15, model::Coding::Signed, 1200, 6);
    selector::SearchConfig cfg;
    cfg.search_iterations = 50;
    cfg.min_samples_per_bf = 300;
    cfg.seed = 2;
    const auto replay = selector::mh_model_search(run.data, run.ps.states, run.ps.missing_cells, cfg);
    CHECK(replay.visited.size() == 50);
    CHECK(replay.window == 300);

    gibbs::GibbsConfig gcfg = run.ps.config;
    selector::LiveSelector live(run.data, cfg, gcfg.retained_count(), run.ps.missing_cells);
    const auto ps = gibbs::run_chain(run.data, model::default_priors(), gcfg, live.sink());
    const auto trace = live.finish();
    REQUIRE(trace.visited.size() == replay.visited.size());
    for (std::size_t k = 0; k < trace.visited.size(); ++k) {
      CHECK(trace.visited[k].proposed == replay.visited[k].proposed);
      CHECK(trace.visited[k].log_bf == replay.visited[k].log_bf);
      CHECK(trace.visited[k].window_end == replay.visited[k].window_end);
    }
    CHECK(trace.best == replay.best);
  }

  TEST_CASE("short streams still run every step") {
    auto run = small_run(12, 2, 0.0, model::Coding::Signed, 100, 7);
    selector::SearchConfig cfg;
    cfg.search_iterations = 30;
    cfg.min_samples_per_bf = 2000;
    const auto t = selector::mh_model_search(run.data, run.ps.states, run.ps.missing_cells, cfg);
    CHECK(t.visited.size() == 30);
    CHECK(t.window == 100);
  }

  TEST_CASE("exhaustive ranking") {
    auto run = small_run(18, 3, 0.1, model::Coding::Signed, 500, 8);
    const std::vector<Index> cand{0, 1, 2};
    const auto ranked = selector::exhaustive_search(run.data, run.ps.states, run.ps.missing_cells, cand);
    REQUIRE(ranked.size() == 8);
    for (std::size_t k = 1; k < ranked.size(); ++k) CHECK(ranked[k - 1].estimate.log_value >= ranked[k].estimate.log_value);
    bool saw_full = false;
    for (const auto& m : ranked) {
      if (selector::is_full_model(m.delta)) {
        saw_full = true;
        CHECK(m.estimate.log_value == 0.0);
      }
    }
    CHECK(saw_full);
    CHECK_THROWS_AS(selector::exhaustive_search(run.data, run.ps.states, run.ps.missing_cells,
                                                std::vector<Index>(21, 0)),
                    UsageError);
    const auto csv = selector::format_ranked_csv(ranked, run.data);
    CHECK(csv.rfind("rank,delta,log_bf,valid_terms,invalid_terms,included\n", 0) == 0);
  }

  TEST_CASE("search config validation") {
    selector::SearchConfig c;
    CHECK_NOTHROW(c.validate());
    c.mixture_prob = 1.5;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.mixture_prob = 0.5;
    c.min_samples_per_bf = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
  }
}
