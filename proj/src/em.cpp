#include "bamd/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bamd/errors.hpp"
#include "bamd/io.hpp"

namespace bamd::em {

MissingPattern MissingPattern::from(const model::GenotypeMatrix& g) {
  MissingPattern p;
  p.missing.assign(static_cast<std::size_t>(g.n()), {});
  for (Index i = 0; i < g.n(); ++i)
    for (Index j = 0; j < g.s(); ++j)
      if (g.missing(i, j)) p.missing[i].push_back(j);
  return p;
}

std::size_t MissingPattern::enumeration_size(Index i) const {
  std::size_t size = 1;
  for (std::size_t k = 0; k < missing[i].size(); ++k) {
    if (size > std::numeric_limits<std::size_t>::max() / kGenotypeArity) return std::numeric_limits<std::size_t>::max();
    size *= kGenotypeArity;
  }
  return size;
}

bool MissingPattern::exact_possible(std::size_t cap) const {
  for (std::size_t i = 0; i < missing.size(); ++i)
    if (enumeration_size(static_cast<Index>(i)) > cap) return false;
  return true;
}

namespace {

double snp_effect(const VectorXd& gamma, model::Coding coding, Index j, int c) {
  const Index w = model::design_width(coding);
  double t = 0.0;
  for (Index k = 0; k < w; ++k) t += model::design_value(coding, c, k) * gamma[j * w + k];
  return t;
}

// Y_i - X_i beta minus the observed SNP contributions.
double partial_residual(const EmState& st, const model::Dataset& d, const MissingPattern& pattern, Index i) {
  double r = d.phenotypes[i] - d.design.row(i).dot(st.beta);
  const auto& miss = pattern.missing[i];
  for (Index j = 0; j < d.snp_count(); ++j) {
    if (std::find(miss.begin(), miss.end(), j) != miss.end()) continue;
    r -= snp_effect(st.gamma, d.coding, j, d.genotypes.codes(i, j));
  }
  return r;
}

// Calls f(codes) for every completion in odometer order.
template <typename F>
void for_each_completion(std::size_t k, F&& f) {
  std::vector<int> digits(k, 0);
  std::vector<int> codes(k, model::kGenotypeCodes[0]);
  for (;;) {
    f(codes);
    std::size_t pos = 0;
    while (pos < k && digits[pos] == kGenotypeArity - 1) {
      digits[pos] = 0;
      codes[pos] = model::kGenotypeCodes[0];
      ++pos;
    }
    if (pos == k) return;
    ++digits[pos];
    codes[pos] = model::kGenotypeCodes[digits[pos]];
  }
}

double completion_effect(const EmState& st, const model::Dataset& d, const std::vector<Index>& miss,
                         const std::vector<int>& codes) {
  double t = 0.0;
  for (std::size_t m = 0; m < miss.size(); ++m) t += snp_effect(st.gamma, d.coding, miss[m], codes[m]);
  return t;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Missing design columns of individual i and their values for one completion.
std::vector<Index> missing_columns(const std::vector<Index>& miss, model::Coding coding) {
  const Index w = model::design_width(coding);
  std::vector<Index> cols;
  for (Index j : miss)
    for (Index k = 0; k < w; ++k) cols.push_back(j * w + k);
  return cols;
}

VectorXd completion_design(const std::vector<int>& codes, model::Coding coding) {
  const Index w = model::design_width(coding);
  VectorXd z(static_cast<Index>(codes.size()) * w);
  for (std::size_t m = 0; m < codes.size(); ++m)
    for (Index k = 0; k < w; ++k) z[static_cast<Index>(m) * w + k] = model::design_value(coding, codes[m], k);
  return z;
}

}  // namespace

std::vector<Completion> missing_distribution(const EmState& st, const model::Dataset& data,
                                             const MissingPattern& pattern, Index i, std::size_t cap) {
  if (pattern.enumeration_size(i) > cap) {
    throw UsageError("individual " + data.genotypes.ids[i] + " has " + std::to_string(pattern.missing[i].size()) +
                     " missing SNPs, above the enumeration cap; use the Gibbs E-step");
  }
  const auto& miss = pattern.missing[i];
  const double r = partial_residual(st, data, pattern, i);
  std::vector<Completion> table;
  std::vector<double> logw;
  for_each_completion(miss.size(), [&](const std::vector<int>& codes) {
    const double e = r - completion_effect(st, data, miss, codes);
    table.push_back(Completion{codes, 0.0});
    logw.push_back(-e * e / (2.0 * st.sigma2));
  });
  const double lse = log_sum_exp(logw);
  for (std::size_t c = 0; c < table.size(); ++c) table[c].probability = std::exp(logw[c] - lse);
  return table;
}

Moments e_step(const EmState& st, const model::Dataset& data, const MissingPattern& pattern,
               const EStepOptions& options, Rng& rng) {
  const Index n = data.n();
  const Index q = data.gamma_size();
  Moments out;
  out.expected_z = model::snp_design(data.genotypes.codes, data.coding);
  out.v_z = MatrixXd::Zero(q, q);

  for (Index i = 0; i < n; ++i) {
    const auto& miss = pattern.missing[i];
    if (miss.empty()) continue;
    const auto cols = missing_columns(miss, data.coding);
    const auto m = static_cast<Index>(cols.size());
    VectorXd mean = VectorXd::Zero(m);
    MatrixXd second = MatrixXd::Zero(m, m);

    if (pattern.enumeration_size(i) <= options.cap) {
      for (const auto& c : missing_distribution(st, data, pattern, i, options.cap)) {
        const VectorXd z = completion_design(c.codes, data.coding);
        mean += c.probability * z;
        second.noalias() += c.probability * z * z.transpose();
      }
    } else {
      ++out.monte_carlo_individuals;
      const double r = partial_residual(st, data, pattern, i);
      std::vector<int> codes(miss.size(), 0);
      double fitted = completion_effect(st, data, miss, codes);
      const std::size_t sweeps = options.mc_burn_in + options.mc_samples;
      for (std::size_t t = 0; t < sweeps; ++t) {
        for (std::size_t k = 0; k < miss.size(); ++k) {
          const double rest = fitted - snp_effect(st.gamma, data.coding, miss[k], codes[k]);
          std::array<double, 3> logp{};
          for (int c = 0; c < 3; ++c) {
            const double e = r - rest - snp_effect(st.gamma, data.coding, miss[k], model::kGenotypeCodes[c]);
            logp[c] = -e * e / (2.0 * st.sigma2);
          }
          const double mx = *std::max_element(logp.begin(), logp.end());
          std::array<double, 3> p{};
          double total = 0.0;
          for (int c = 0; c < 3; ++c) total += p[c] = std::exp(logp[c] - mx);
          for (auto& v : p) v /= total;
          codes[k] = model::kGenotypeCodes[draw_categorical(rng, p)];
          fitted = rest + snp_effect(st.gamma, data.coding, miss[k], codes[k]);
        }
        if (t < options.mc_burn_in) continue;
        const VectorXd z = completion_design(codes, data.coding);
        mean += z;
        second.noalias() += z * z.transpose();
      }
      const auto draws = static_cast<double>(options.mc_samples);
      mean /= draws;
      second /= draws;
    }
    const MatrixXd cov = second - mean * mean.transpose();
    for (Index a = 0; a < m; ++a) {
      out.expected_z(i, cols[a]) = mean[a];
      for (Index b = 0; b < m; ++b) out.v_z(cols[a], cols[b]) += cov(a, b);
    }
  }
  out.v_z = 0.5 * (out.v_z + out.v_z.transpose());
  return out;
}

MStepResult m_step(const Moments& moments, const model::Dataset& data) {
  const auto& x = data.design;
  const auto& y = data.phenotypes;
  const auto& zb = moments.expected_z;
  const Index n = data.n();
  const Index q = zb.cols();

  Eigen::HouseholderQR<MatrixXd> xqr(x);
  const MatrixXd qx = xqr.householderQ() * MatrixXd::Identity(n, x.cols());
  const MatrixXd zr = zb - qx * (qx.transpose() * zb);
  const VectorXd yr = y - qx * (qx.transpose() * y);

  MStepResult out;
  MatrixXd a = zr.transpose() * zr + moments.v_z;
  const VectorXd b = zr.transpose() * yr;
  Eigen::LLT<MatrixXd> llt(a);
  bool ok = llt.info() == Eigen::Success;
  if (ok && q > 0) {
    const VectorXd d = llt.matrixLLT().diagonal().cwiseAbs2();
    ok = d.minCoeff() > 1e-12 * d.maxCoeff();
  }
  if (!ok) {
    a.diagonal().array() += 1e-8;
    llt.compute(a);
    if (llt.info() != Eigen::Success) throw NumericalError("EM M-step system is singular even after ridging");
    out.ridged = true;
  }
  out.gamma = llt.solve(b);
  out.beta = xqr.solve(VectorXd(y - zb * out.gamma));
  const VectorXd res = y - x * out.beta - zb * out.gamma;
  out.sigma2 = (res.squaredNorm() + out.gamma.dot(moments.v_z * out.gamma)) / static_cast<double>(n);
  return out;
}

std::optional<double> observed_loglik(const EmState& st, const model::Dataset& data, const MissingPattern& pattern,
                                      std::size_t cap) {
  if (!pattern.exact_possible(cap)) return std::nullopt;
  const Index n = data.n();
  double ll = -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * st.sigma2);
  for (Index i = 0; i < n; ++i) {
    const auto& miss = pattern.missing[i];
    const double r = partial_residual(st, data, pattern, i);
    if (miss.empty()) {
      ll -= r * r / (2.0 * st.sigma2);
      continue;
    }
    std::vector<double> terms;
    for_each_completion(miss.size(), [&](const std::vector<int>& codes) {
      const double e = r - completion_effect(st, data, miss, codes);
      terms.push_back(-e * e / (2.0 * st.sigma2));
    });
    ll += log_sum_exp(terms);
  }
  return ll;
}

namespace {

EmState complete_case_start(const model::Dataset& d, const MissingPattern& pattern) {
  const Index n = d.n();
  const Index p = d.p();
  const Index q = d.gamma_size();
  const MatrixXd z = model::snp_design(d.genotypes.codes, d.coding);
  EmState st;
  std::vector<Index> rows;
  for (Index i = 0; i < n; ++i)
    if (pattern.missing[i].empty()) rows.push_back(i);
  const auto m = static_cast<Index>(rows.size());
  if (m > p + q) {
    MatrixXd a(m, p + q);
    VectorXd y(m);
    for (Index r = 0; r < m; ++r) {
      a.row(r) << d.design.row(rows[r]), z.row(rows[r]);
      y[r] = d.phenotypes[rows[r]];
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    if (qr.rank() == p + q) {
      const VectorXd theta = qr.solve(y);
      st.beta = theta.head(p);
      st.gamma = theta.tail(q);
      st.sigma2 = (y - a * theta).squaredNorm() / static_cast<double>(m);
      return st;
    }
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(d.design);
  st.beta = qr.solve(d.phenotypes);
  st.gamma = VectorXd::Zero(q);
  st.sigma2 = (d.phenotypes - d.design * st.beta).squaredNorm() / static_cast<double>(n);
  return st;
}

double max_relative_change(const EmState& a, const MStepResult& b) {
  double m = 0.0;
  auto upd = [&](double old, double now) { m = std::max(m, std::abs(now - old) / std::max(1.0, std::abs(old))); };
  for (Index k = 0; k < a.beta.size(); ++k) upd(a.beta[k], b.beta[k]);
  for (Index k = 0; k < a.gamma.size(); ++k) upd(a.gamma[k], b.gamma[k]);
  upd(a.sigma2, b.sigma2);
  return m;
}

}  // namespace

EmResult run_em(const model::Dataset& data, const EmConfig& config) {
  const auto pattern = MissingPattern::from(data.genotypes);
  EmResult out;
  out.exact = pattern.exact_possible(config.e_step.cap);
  out.state = complete_case_start(data, pattern);
  const bool any_missing = data.genotypes.missing_count() > 0;
  if (any_missing && !(out.state.sigma2 > 0.0)) out.state.sigma2 = 1e-12;
  if (!out.exact) out.warnings.emplace_back("some individuals exceed the enumeration cap; using the Monte Carlo E-step");
  auto rng = make_rng(config.seed, 0xe5);

  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    const auto moments = e_step(out.state, data, pattern, config.e_step, rng);
    const auto next = m_step(moments, data);
    if (next.ridged) out.warnings.push_back("iteration " + std::to_string(it) + ": ridge-stabilized M-step");
    const double delta = max_relative_change(out.state, next);
    out.state.beta = next.beta;
    out.state.gamma = next.gamma;
    out.state.sigma2 = next.sigma2;
    out.state.expected_z = moments.expected_z;
    out.state.v_z = moments.v_z;
    EmIteration rec{it, std::nullopt, delta};
    if (out.exact && out.state.sigma2 > 0.0) rec.loglik = observed_loglik(out.state, data, pattern, config.e_step.cap);
    out.log.push_back(rec);
    if (delta < config.tolerance) {
      out.converged = true;
      break;
    }
    if (any_missing && !(out.state.sigma2 > 0.0)) throw NumericalError("EM residual variance collapsed to zero");
  }
  if (!out.converged) out.warnings.emplace_back("EM did not converge within the iteration limit");
  return out;
}

std::string format_em_log(const EmResult& r) {
  std::string out = "iteration,loglik,max_delta\n";
  for (const auto& it : r.log) {
    out += std::to_string(it.iteration) + "," + (it.loglik ? io::format_double(*it.loglik) : std::string("NA")) + "," +
           io::format_double(it.max_delta) + "\n";
  }
  return out;
}

std::string format_em_estimates(const EmResult& r, const model::Dataset& data) {
  std::string out = "parameter,estimate\n";
  for (Index k = 0; k < r.state.beta.size(); ++k)
    out += data.design_names[k] + "," + io::format_double(r.state.beta[k]) + "\n";
  const auto names = data.gamma_names();
  for (Index k = 0; k < r.state.gamma.size(); ++k) out += names[k] + "," + io::format_double(r.state.gamma[k]) + "\n";
  out += "sigma2," + io::format_double(r.state.sigma2) + "\n";
  return out;
}

}  // namespace bamd::em
