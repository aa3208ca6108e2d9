#include "bamd/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "bamd/errors.hpp"
#include "bamd/io.hpp"

namespace bamd::gibbs {

void GibbsConfig::validate() const {
  if (burn_in >= total_iterations) throw UsageError("burn-in must be smaller than the iteration count");
  if (thinning == 0) throw UsageError("thinning must be at least 1");
}

ChainContext::ChainContext(const model::Dataset& data, model::PriorHyperparams priors)
    : data_(&data), priors_(priors) {
  priors_.validate();
  const auto& r = data.kinship.values();
  const Index n = data.n();
  r_identity_ = n > 0 && (r - MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() == 0.0;
  Eigen::LLT<MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) throw NumericalError("kinship matrix is not positive definite");
  r_inv_ = r_identity_ ? MatrixXd::Identity(n, n) : MatrixXd(llt.solve(MatrixXd::Identity(n, n)));

  const MatrixXd rinv_x = r_inv_ * data.design;
  const MatrixXd xtrx = data.design.transpose() * rinv_x;
  Eigen::LLT<MatrixXd> xllt(xtrx);
  if (xllt.info() != Eigen::Success) throw NumericalError("X' R^{-1} X is not positive definite");
  const MatrixXd v = xllt.solve(MatrixXd::Identity(xtrx.rows(), xtrx.cols()));
  beta_projector_ = v * rinv_x.transpose();
  Eigen::LLT<MatrixXd> vllt(v);
  beta_cov_factor_ = vllt.matrixL();

  missing_cells_ = data.genotypes.missing_cells();
  missing_by_snp_.assign(static_cast<std::size_t>(data.snp_count()), {});
  for (const auto& [i, j] : missing_cells_) missing_by_snp_[j].push_back(i);
}

VectorXd ChainContext::apply_r_inv(const VectorXd& v) const {
  if (r_identity_) return v;
  return r_inv_ * v;
}

VectorXd beta_conditional_mean(const ParameterState& st, const ChainContext& ctx) {
  return ctx.beta_projector() * (ctx.data().phenotypes - st.design * st.gamma);
}

VectorXd sample_beta(const ParameterState& st, const ChainContext& ctx, Rng& rng) {
  const VectorXd mean = beta_conditional_mean(st, ctx);
  const VectorXd z = standard_normal_vector(rng, mean.size());
  return mean + std::sqrt(st.sigma2) * (ctx.beta_cov_factor() * z);
}

VectorXd gamma_conditional_mean(const ParameterState& st, const ChainContext& ctx, const MatrixXd& m_inv) {
  const VectorXd resid = ctx.data().phenotypes - ctx.data().design * st.beta;
  return m_inv * (st.design.transpose() * ctx.apply_r_inv(resid));
}

VectorXd sample_gamma(const ParameterState& st, const ChainContext& ctx, Rng& rng, linalg::InverseCache& cache) {
  Eigen::LLT<MatrixXd> llt(cache.inverse());
  if (llt.info() != Eigen::Success) {
    cache.refresh();
    llt.compute(cache.inverse());
    if (llt.info() != Eigen::Success) throw NumericalError("gamma conditional covariance is not positive definite");
  }
  const VectorXd mean = gamma_conditional_mean(st, ctx, cache.inverse());
  const VectorXd z = standard_normal_vector(rng, mean.size());
  const MatrixXd l = llt.matrixL();
  return mean + std::sqrt(st.sigma2) * (l * z);
}

std::pair<double, double> sigma2_shape_scale(const ParameterState& st, const ChainContext& ctx) {
  const auto& d = ctx.data();
  const VectorXd e = d.phenotypes - d.design * st.beta - st.design * st.gamma;
  const double qf = e.dot(ctx.apply_r_inv(e));
  const auto& pr = ctx.priors();
  const double shape = 0.5 * static_cast<double>(d.n()) + 0.5 * static_cast<double>(st.gamma.size()) + pr.a;
  const double scale = 0.5 * (qf + st.gamma.squaredNorm() / st.phi2 + 2.0 * pr.b);
  return {shape, scale};
}

double sample_sigma2(const ParameterState& st, const ChainContext& ctx, Rng& rng) {
  const auto [shape, scale] = sigma2_shape_scale(st, ctx);
  return inverse_gamma(rng, shape, scale);
}

std::pair<double, double> phi2_shape_scale(const ParameterState& st, const ChainContext& ctx) {
  const auto& pr = ctx.priors();
  const double shape = 0.5 * static_cast<double>(st.gamma.size()) + pr.c;
  const double scale = 0.5 * (st.gamma.squaredNorm() / st.sigma2 + 2.0 * pr.d);
  return {shape, scale};
}

double sample_phi2(const ParameterState& st, const ChainContext& ctx, Rng& rng) {
  const auto [shape, scale] = phi2_shape_scale(st, ctx);
  return inverse_gamma(rng, shape, scale);
}

namespace {

// Contribution of genotype code c at SNP j to the linear predictor.
double snp_effect(const ParameterState& st, model::Coding coding, Index j, int c) {
  const Index w = model::design_width(coding);
  double t = 0.0;
  for (Index k = 0; k < w; ++k) t += model::design_value(coding, c, k) * st.gamma[j * w + k];
  return t;
}

std::array<double, 3> normalize_log(const std::array<double, 3>& logp) {
  const double m = *std::max_element(logp.begin(), logp.end());
  std::array<double, 3> p{};
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    p[k] = std::isinf(logp[k]) ? 0.0 : std::exp(logp[k] - m);
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

double log_weight(double w) { return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity(); }

}  // namespace

std::array<double, 3> imputation_probabilities(const ParameterState& st, const ChainContext& ctx, Index i, Index j,
                                               const model::ImputationPrior& prior) {
  const auto& d = ctx.data();
  const double resid = d.phenotypes[i] - d.design.row(i).dot(st.beta) - st.design.row(i).dot(st.gamma) +
                       snp_effect(st, d.coding, j, st.codes(i, j));
  const auto& w = prior.weights(i, j);
  std::array<double, 3> logp{};
  for (int k = 0; k < 3; ++k) {
    const double r = resid - snp_effect(st, d.coding, j, model::kGenotypeCodes[k]);
    logp[k] = log_weight(w[k]) - r * r / (2.0 * st.sigma2);
  }
  return normalize_log(logp);
}

ColumnImputation impute_snp_column(const ParameterState& st, const ChainContext& ctx, Index j, Rng& rng,
                                   const model::ImputationPrior& prior, ImputationLikelihood likelihood) {
  const auto& d = ctx.data();
  const Index n = d.n();
  const Index w = model::design_width(d.coding);
  ColumnImputation out;
  out.snp = j;
  out.codes = st.codes.col(j);
  const auto& rows = ctx.missing_by_snp()[static_cast<std::size_t>(j)];

  if (likelihood == ImputationLikelihood::Printed) {
    for (Index i : rows) {
      const auto probs = imputation_probabilities(st, ctx, i, j, prior);
      out.codes[i] = model::kGenotypeCodes[draw_categorical(rng, probs)];
    }
  } else {
    // Changing Z_ij moves e_i by delta; e' Q e moves by 2 delta (Qe)_i + delta^2 Q_ii.
    const auto& q = ctx.r_inv();
    VectorXd e = d.phenotypes - d.design * st.beta - st.design * st.gamma;
    VectorXd qe = ctx.apply_r_inv(e);
    for (Index i : rows) {
      const int cur = out.codes[i];
      const double t_cur = snp_effect(st, d.coding, j, cur);
      const auto& wts = prior.weights(i, j);
      std::array<double, 3> logp{};
      std::array<double, 3> shift{};
      for (int k = 0; k < 3; ++k) {
        shift[k] = t_cur - snp_effect(st, d.coding, j, model::kGenotypeCodes[k]);
        logp[k] = log_weight(wts[k]) - (2.0 * shift[k] * qe[i] + shift[k] * shift[k] * q(i, i)) / (2.0 * st.sigma2);
      }
      const int k = draw_categorical(rng, normalize_log(logp));
      out.codes[i] = model::kGenotypeCodes[k];
      if (shift[k] != 0.0) {
        e[i] += shift[k];
        qe.noalias() += shift[k] * q.col(i);
      }
    }
  }

  for (Index k = 0; k < w; ++k) {
    linalg::ColumnDelta delta{j * w + k, VectorXd::Zero(n)};
    for (Index i : rows) {
      delta.delta[i] = model::design_value(d.coding, out.codes[i], k) - model::design_value(d.coding, st.codes(i, j), k);
    }
    out.deltas.push_back(std::move(delta));
  }
  return out;
}

void apply_imputation(ParameterState& st, const ChainContext& ctx, const ColumnImputation& imp,
                      linalg::InverseCache& cache) {
  for (const auto& delta : imp.deltas) {
    if (delta.is_zero()) continue;
    linalg::column_delta_inverse_update(cache, st.design, delta, ctx.r_inv(), cache.phi2(), cache.phi2());
    st.design.col(delta.column) += delta.delta;
  }
  st.codes.col(imp.snp) = imp.codes;
}

ParameterState initial_state(const ChainContext& ctx, const model::ImputationPrior& prior, Rng& rng) {
  const auto& d = ctx.data();
  const Index n = d.n();
  const Index p = d.p();
  const Index q = d.gamma_size();
  ParameterState st;
  st.codes = d.genotypes.codes;
  for (const auto& [i, j] : ctx.missing_cells()) {
    const auto& w = prior.weights(i, j);
    st.codes(i, j) = model::kGenotypeCodes[draw_categorical(rng, w)];
  }
  st.design = model::snp_design(st.codes, d.coding);
  st.beta = VectorXd::Zero(p);
  st.gamma = VectorXd::Zero(q);

  std::vector<Index> complete;
  for (Index i = 0; i < n; ++i) {
    if (!d.genotypes.missing.row(i).any()) complete.push_back(i);
  }
  const auto m = static_cast<Index>(complete.size());
  if (m > p + q) {
    MatrixXd a(m, p + q);
    VectorXd y(m);
    MatrixXd rc(m, m);
    for (Index r = 0; r < m; ++r) {
      a.row(r) << d.design.row(complete[r]), st.design.row(complete[r]);
      y[r] = d.phenotypes[complete[r]];
      for (Index c = 0; c < m; ++c) rc(r, c) = d.kinship(complete[r], complete[c]);
    }
    Eigen::LLT<MatrixXd> llt(rc);
    if (llt.info() == Eigen::Success) {
      const MatrixXd wa = llt.solve(a);
      const MatrixXd normal = a.transpose() * wa;
      Eigen::ColPivHouseholderQR<MatrixXd> qr(normal);
      qr.setThreshold(1e-10);
      if (qr.rank() == p + q) {
        const VectorXd theta = qr.solve(wa.transpose() * y);
        st.beta = theta.head(p);
        st.gamma = theta.tail(q);
      }
    }
  }
  const double mean = d.phenotypes.mean();
  const double var = n > 1 ? (d.phenotypes.array() - mean).square().sum() / static_cast<double>(n - 1) : 1.0;
  st.sigma2 = var > 0.0 ? var : 1.0;
  st.phi2 = 1.0;
  return st;
}

namespace {

RetainedState snapshot(const ParameterState& st, const ChainContext& ctx, std::size_t t) {
  RetainedState r;
  r.iteration = t;
  r.beta = st.beta;
  r.gamma = st.gamma;
  r.sigma2 = st.sigma2;
  r.phi2 = st.phi2;
  r.imputed.reserve(ctx.missing_cells().size());
  for (const auto& [i, j] : ctx.missing_cells()) r.imputed.push_back(static_cast<std::int8_t>(st.codes(i, j)));
  return r;
}

#ifndef NDEBUG
void assert_observed_fixed(const ParameterState& st, const model::GenotypeMatrix& g) {
  for (Index j = 0; j < g.s(); ++j)
    for (Index i = 0; i < g.n(); ++i)
      if (!g.missing(i, j) && st.codes(i, j) != g.codes(i, j)) throw Error("observed genotype modified by the sampler");
}
#endif

}  // namespace

PosteriorSamples run_chain(const model::Dataset& data, const model::PriorHyperparams& priors,
                           const GibbsConfig& config, const StateSink& sink) {
  config.validate();
  const ChainContext ctx(data, priors);
  auto rng = make_rng(config.seed, config.chain_index);
  ParameterState st = initial_state(ctx, config.imputation_prior, rng);
  linalg::InverseCache cache = linalg::InverseCache::from_design(
      st.design, ctx.r_inv(), st.phi2, linalg::CachePolicy{config.refresh_period, 1e-8, 64});

  PosteriorSamples out;
  out.config = config;
  out.missing_cells = ctx.missing_cells();
  out.states.reserve(config.retained_count());
  const Index s = data.snp_count();
  const bool imputing = config.impute && !ctx.missing_cells().empty();

  for (std::size_t t = 0; t < config.total_iterations; ++t) {
    try {
      if (imputing) {
        auto visit = [&](Index j) {
          if (ctx.missing_by_snp()[static_cast<std::size_t>(j)].empty()) return;
          const auto imp = impute_snp_column(st, ctx, j, rng, config.imputation_prior, config.likelihood);
          apply_imputation(st, ctx, imp, cache);
        };
        if (config.sweep == SweepMode::SingleColumn) {
          visit(static_cast<Index>(t % static_cast<std::size_t>(s)));
        } else {
          for (Index j = 0; j < s; ++j) visit(j);
        }
#ifndef NDEBUG
        assert_observed_fixed(st, data.genotypes);
#endif
      }
      cache.shift_phi2(st.phi2);
      st.gamma = sample_gamma(st, ctx, rng, cache);
      st.beta = sample_beta(st, ctx, rng);
      st.sigma2 = sample_sigma2(st, ctx, rng);
      st.phi2 = sample_phi2(st, ctx, rng);
    } catch (const NumericalError& e) {
      throw NumericalError("chain aborted at iteration " + std::to_string(t) + " (sigma2=" + io::format_double(st.sigma2) +
                           ", phi2=" + io::format_double(st.phi2) + "): " + e.what());
    }
    if (t >= config.burn_in && (t - config.burn_in + 1) % config.thinning == 0) {
      out.states.push_back(snapshot(st, ctx, t));
      if (sink) sink(out.states.back());
    }
  }
  out.retained_count = out.states.size();
  out.diagnostics.cache_refreshes = cache.refresh_count();
  out.diagnostics.cache_fallbacks = cache.fallback_count();
  out.diagnostics.drift_violations = cache.drift_violations();
  out.diagnostics.final_drift = cache.drift();
  return out;
}

std::vector<PosteriorSamples> run_chains(const model::Dataset& data, const model::PriorHyperparams& priors,
                                         const GibbsConfig& config, std::size_t chains) {
  std::vector<PosteriorSamples> out(chains);
  std::vector<std::exception_ptr> errors(chains);
  std::vector<std::thread> workers;
  workers.reserve(chains);
  for (std::size_t c = 0; c < chains; ++c) {
    workers.emplace_back([&, c] {
      try {
        GibbsConfig cc = config;
        cc.chain_index = c;
        out[c] = run_chain(data, priors, cc);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

CodeMatrix state_codes(const model::GenotypeMatrix& g, const std::vector<std::pair<Index, Index>>& cells,
                       std::span<const std::int8_t> imputed) {
  if (cells.size() != imputed.size()) throw DataError("imputation record does not match the masked cells");
  CodeMatrix codes = g.codes;
  for (std::size_t k = 0; k < cells.size(); ++k) codes(cells[k].first, cells[k].second) = imputed[k];
  return codes;
}

CredibleInterval hpd_interval(std::span<const double> draws, double level) {
  if (draws.size() < 100) throw DataError("hpd_interval: at least 100 draws required");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("hpd_interval: level must lie in (0, 1)");
  std::vector<double> x(draws.begin(), draws.end());
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  auto k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  std::size_t best = 0;
  double width = x[k - 1] - x[0];
  for (std::size_t i = 1; i + k <= n; ++i) {
    const double w = x[i + k - 1] - x[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  CredibleInterval ci;
  ci.lower = x[best];
  ci.upper = x[best + k - 1];
  ci.level = level;
  ci.contains_zero = ci.lower <= 0.0 && ci.upper >= 0.0;
  return ci;
}

std::vector<std::string> parameter_names(const model::Dataset& data) {
  std::vector<std::string> names;
  for (Index k = 0; k < data.p(); ++k) names.push_back("beta_" + std::to_string(k + 1));
  for (Index k = 0; k < data.gamma_size(); ++k) names.push_back("gamma_" + std::to_string(k + 1));
  names.emplace_back("sigma2");
  names.emplace_back("phi2");
  return names;
}

std::vector<double> parameter_trace(std::span<const RetainedState> states, Index parameter, Index p, Index q) {
  std::vector<double> x;
  x.reserve(states.size());
  for (const auto& s : states) {
    if (parameter < p) x.push_back(s.beta[parameter]);
    else if (parameter < p + q) x.push_back(s.gamma[parameter - p]);
    else if (parameter == p + q) x.push_back(s.sigma2);
    else x.push_back(s.phi2);
  }
  return x;
}

std::vector<ParameterSummary> summarize(std::span<const RetainedState> states, const model::Dataset& data,
                                        double level) {
  const Index p = data.p();
  const Index q = data.gamma_size();
  const auto names = parameter_names(data);
  std::vector<ParameterSummary> out;
  for (Index k = 0; k < p + q + 2; ++k) {
    const auto x = parameter_trace(states, k, p, q);
    ParameterSummary s;
    s.name = names[k];
    s.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    s.hpd = hpd_interval(x, level);
    s.significant = !s.hpd.contains_zero;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> autocorrelations(std::span<const double> x, std::size_t max_lag) {
  const std::size_t n = x.size();
  std::vector<double> out(max_lag, 0.0);
  if (n < 2) return out;
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double denom = 0.0;
  for (double v : x) denom += (v - m) * (v - m);
  if (denom == 0.0) return out;
  for (std::size_t lag = 1; lag <= max_lag && lag < n; ++lag) {
    double num = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) num += (x[t] - m) * (x[t + lag] - m);
    out[lag - 1] = num / denom;
  }
  return out;
}

double batch_means_se(std::span<const double> x, std::size_t batches) {
  const std::size_t len = x.size() / batches;
  if (len == 0) throw DataError("batch_means_se: too few draws for the batch count");
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    means[b] = std::accumulate(x.begin() + b * len, x.begin() + (b + 1) * len, 0.0) / static_cast<double>(len);
  }
  const double m = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(batches);
  double v = 0.0;
  for (double b : means) v += (b - m) * (b - m);
  v /= static_cast<double>(batches - 1);
  return std::sqrt(v / static_cast<double>(batches));
}

std::string format_samples_csv(std::span<const RetainedState> states, Index p, Index q) {
  std::string out;
  for (Index k = 0; k < p; ++k) out += "beta_" + std::to_string(k + 1) + ",";
  for (Index k = 0; k < q; ++k) out += "gamma_" + std::to_string(k + 1) + ",";
  out += "sigma2,phi2\n";
  for (const auto& s : states) {
    for (Index k = 0; k < p; ++k) out += io::format_double(s.beta[k]) + ",";
    for (Index k = 0; k < q; ++k) out += io::format_double(s.gamma[k]) + ",";
    out += io::format_double(s.sigma2) + "," + io::format_double(s.phi2) + "\n";
  }
  return out;
}

std::string format_imputations_csv(std::span<const RetainedState> states, const model::GenotypeMatrix& g,
                                   const std::vector<std::pair<Index, Index>>& cells) {
  std::string out = "iteration";
  for (const auto& [i, j] : cells) out += "," + g.ids[i] + ":" + g.snp_names[j];
  out += "\n";
  for (const auto& s : states) {
    out += std::to_string(s.iteration);
    for (auto c : s.imputed) out += "," + std::to_string(static_cast<int>(c));
    out += "\n";
  }
  return out;
}

std::vector<RetainedState> read_recorded_states(const std::filesystem::path& samples,
                                                const std::filesystem::path& imputations, Index p, Index q,
                                                const model::GenotypeMatrix& g) {
  const auto st = io::read_csv(samples);
  if (static_cast<Index>(st.header.size()) != p + q + 2) {
    throw DataError(samples.string() + ": expected " + std::to_string(p + q + 2) + " columns");
  }
  std::vector<RetainedState> out;
  out.reserve(st.rows.size());
  for (std::size_t r = 0; r < st.rows.size(); ++r) {
    RetainedState s;
    const auto& row = st.rows[r];
    s.iteration = r;
    s.beta.resize(p);
    s.gamma.resize(q);
    for (Index k = 0; k < p; ++k) s.beta[k] = io::parse_double(row[k], samples.string());
    for (Index k = 0; k < q; ++k) s.gamma[k] = io::parse_double(row[p + k], samples.string());
    s.sigma2 = io::parse_double(row[p + q], samples.string());
    s.phi2 = io::parse_double(row[p + q + 1], samples.string());
    out.push_back(std::move(s));
  }

  const auto cells = g.missing_cells();
  if (imputations.empty()) {
    if (!cells.empty()) throw DataError("the dataset has masked genotypes; an imputation record is required");
    return out;
  }
  const auto imp = io::read_csv(imputations);
  if (imp.header.size() != cells.size() + 1) throw DataError(imputations.string() + ": masked cells do not match the dataset");
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto expected = g.ids[cells[k].first] + ":" + g.snp_names[cells[k].second];
    if (imp.header[k + 1] != expected) throw DataError(imputations.string() + ": column " + imp.header[k + 1] + " does not match " + expected);
  }
  if (imp.rows.size() != out.size()) throw DataError("recorded samples and imputations have different lengths");
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].iteration = static_cast<std::size_t>(io::parse_int(imp.rows[r][0], imputations.string()));
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const auto c = io::parse_int(imp.rows[r][k + 1], imputations.string());
      if (c < -1 || c > 1) throw DataError(imputations.string() + ": imputed code out of range");
      out[r].imputed.push_back(static_cast<std::int8_t>(c));
    }
  }
  return out;
}

}  // namespace bamd::gibbs
