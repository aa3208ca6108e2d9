#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "bamd/rng.hpp"

namespace bamd::testing {

double kolmogorov_survival(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  // Stephens' small-sample correction to the asymptotic distribution.
  const double rn = std::sqrt(n);
  return {d, kolmogorov_survival((rn + 0.12 + 0.11 / rn) * d)};
}

double chi_square_p_value(std::span<const double> observed, std::span<const double> expected) {
  double stat = 0.0;
  int cells = 0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    if (expected[k] <= 0.0) {
      if (observed[k] > 0.0) return 0.0;
      continue;
    }
    stat += (observed[k] - expected[k]) * (observed[k] - expected[k]) / expected[k];
    ++cells;
  }
  if (cells < 2) return 1.0;
  boost::math::chi_squared dist(cells - 1);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

double chi_square_homogeneity_p_value(std::span<const double> a, std::span<const double> b) {
  const double na = std::accumulate(a.begin(), a.end(), 0.0);
  const double nb = std::accumulate(b.begin(), b.end(), 0.0);
  double stat = 0.0;
  int cells = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double tot = a[k] + b[k];
    if (tot == 0.0) continue;
    const double ea = tot * na / (na + nb);
    const double eb = tot * nb / (na + nb);
    stat += (a[k] - ea) * (a[k] - ea) / ea + (b[k] - eb) * (b[k] - eb) / eb;
    ++cells;
  }
  if (cells < 2) return 1.0;
  boost::math::chi_squared dist(cells - 1);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double inverse_gamma_cdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_q(shape, scale / x);
}

namespace {

// log of the integrand at fixed phi2 after integrating beta and sigma2.
double log_conditional_marginal(const VectorXd& y, const MatrixXd& x, const MatrixXd& z, const MatrixXd& r, double phi2,
                                const model::PriorHyperparams& pr) {
  const Index n = y.size();
  const Index p = x.cols();
  MatrixXd w = r;
  if (z.cols() > 0) w.noalias() += phi2 * z * z.transpose();
  Eigen::LLT<MatrixXd> lw(w);
  const MatrixXd wx = lw.solve(x);
  const VectorXd wy = lw.solve(y);
  const MatrixXd xwx = x.transpose() * wx;
  Eigen::LLT<MatrixXd> lx(xwx);
  const VectorXd bhat = lx.solve(x.transpose() * wy);
  const double q = y.dot(wy) - (x.transpose() * wy).dot(bhat);
  const double logdet_w = 2.0 * lw.matrixLLT().diagonal().array().log().sum();
  const double logdet_x = 2.0 * lx.matrixLLT().diagonal().array().log().sum();
  const double nu = static_cast<double>(n - p);
  const double shape = pr.a + 0.5 * nu;
  return pr.a * std::log(pr.b) - std::lgamma(pr.a) + std::lgamma(shape) - shape * std::log(pr.b + 0.5 * q) -
         0.5 * nu * std::log(2.0 * M_PI) - 0.5 * logdet_w - 0.5 * logdet_x;
}

}  // namespace

double log_marginal_likelihood(const VectorXd& y, const MatrixXd& x, const MatrixXd& z, const MatrixXd& r,
                               const model::PriorHyperparams& pr, double log_lo, double log_hi, std::size_t points) {
  const double h = (log_hi - log_lo) / static_cast<double>(points - 1);
  std::vector<double> logs(points);
  for (std::size_t k = 0; k < points; ++k) {
    const double t = log_lo + h * static_cast<double>(k);
    const double phi2 = std::exp(t);
    // IG(c, d) density in phi2 times the Jacobian phi2.
    const double log_prior = pr.c * std::log(pr.d) - std::lgamma(pr.c) - pr.c * t - pr.d / phi2;
    logs[k] = log_conditional_marginal(y, x, z, r, phi2, pr) + log_prior;
    if (k == 0 || k + 1 == points) logs[k] += std::log(0.5);
  }
  const double m = *std::max_element(logs.begin(), logs.end());
  double s = 0.0;
  for (double v : logs) s += std::exp(v - m);
  return m + std::log(s * h);
}

model::Dataset make_dataset(const model::CodeMatrix& codes, const model::MaskMatrix& missing, const VectorXd& y,
                            const MatrixXd& x, const MatrixXd& r, model::Coding coding) {
  model::Dataset d;
  const Index n = codes.rows();
  for (Index i = 0; i < n; ++i) d.genotypes.ids.push_back("i" + std::to_string(i + 1));
  for (Index j = 0; j < codes.cols(); ++j) d.genotypes.snp_names.push_back("SNP" + std::to_string(j + 1));
  d.genotypes.codes = codes;
  d.genotypes.missing = missing;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < codes.cols(); ++j) {
      if (missing(i, j)) d.genotypes.codes(i, j) = 0;
    }
  }
  d.genotypes.alleles.resize(static_cast<std::size_t>(codes.cols()));
  d.phenotypes = y;
  d.design = x;
  for (Index k = 0; k < x.cols(); ++k) d.design_names.push_back("x" + std::to_string(k + 1));
  d.kinship = pedigree::RelationshipMatrix(d.genotypes.ids, r);
  d.coding = coding;
  return d;
}

model::CodeMatrix random_codes(Index n, Index s, std::uint64_t seed) {
  Rng rng = make_rng(seed, 77);
  std::uniform_int_distribution<int> pick(-1, 1);
  model::CodeMatrix c(n, s);
  for (Index j = 0; j < s; ++j) {
    do {
      for (Index i = 0; i < n; ++i) c(i, j) = pick(rng);
    } while (c.col(j).minCoeff() == c.col(j).maxCoeff());
  }
  return c;
}

VectorXd simulate_phenotypes(const MatrixXd& x, const MatrixXd& z, const VectorXd& beta, const VectorXd& gamma,
                             double sigma2, const MatrixXd& r, std::uint64_t seed) {
  Rng rng = make_rng(seed, 78);
  const MatrixXd l = Eigen::LLT<MatrixXd>(r).matrixL();
  VectorXd y = x * beta + std::sqrt(sigma2) * (l * standard_normal_vector(rng, x.rows()));
  if (z.cols() > 0) y += z * gamma;
  return y;
}

MatrixXd random_spd(Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 79);
  MatrixXd a(n, n);
  for (Index i = 0; i < n; ++i) a.col(i) = standard_normal_vector(rng, n);
  MatrixXd m = a * a.transpose() / static_cast<double>(n) + MatrixXd::Identity(n, n);
  return 0.5 * (m + m.transpose());
}

}  // namespace bamd::testing
