#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bamd/linalg.hpp"
#include "bamd/model.hpp"
#include "bamd/rng.hpp"

namespace bamd::gibbs {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using model::CodeMatrix;

enum class SweepMode {
  SingleColumn,  // one SNP column per iteration, cycling j = t mod s
  AllColumns,    // every SNP column every iteration
};

enum class ImputationLikelihood {
  Printed,          // per-individual residual with sigma^2 only
  KinshipWeighted,  // residual weighted by R^{-1} across individuals
};

struct GibbsConfig {
  std::size_t total_iterations = 50000;
  std::size_t burn_in = 10000;
  std::size_t thinning = 4;
  std::uint64_t seed = 1;
  std::uint64_t chain_index = 0;
  model::ImputationPrior imputation_prior = model::ImputationPrior::uniform();
  std::size_t refresh_period = 200;
  SweepMode sweep = SweepMode::SingleColumn;
  ImputationLikelihood likelihood = ImputationLikelihood::Printed;
  bool impute = true;

  // Throws UsageError on burn_in >= total_iterations or thinning == 0.
  void validate() const;
  std::size_t retained_count() const { return (total_iterations - burn_in) / thinning; }
};

// One Gibbs state. codes holds observed genotypes and the current
// imputations; design is the matching SNP design matrix.
struct ParameterState {
  VectorXd beta;
  VectorXd gamma;
  double sigma2 = 1.0;
  double phi2 = 1.0;
  CodeMatrix codes;
  MatrixXd design;
};

// Quantities fixed for the lifetime of a chain.
class ChainContext {
 public:
  ChainContext(const model::Dataset& data, model::PriorHyperparams priors);

  const model::Dataset& data() const { return *data_; }
  const model::PriorHyperparams& priors() const { return priors_; }
  const MatrixXd& r_inv() const { return r_inv_; }
  bool r_is_identity() const { return r_identity_; }
  // R^{-1} v, skipping the product when R = I.
  VectorXd apply_r_inv(const VectorXd& v) const;
  // (X' R^{-1} X)^{-1} X' R^{-1}
  const MatrixXd& beta_projector() const { return beta_projector_; }
  // Lower Cholesky factor of (X' R^{-1} X)^{-1}
  const MatrixXd& beta_cov_factor() const { return beta_cov_factor_; }
  const std::vector<std::pair<Index, Index>>& missing_cells() const { return missing_cells_; }
  // Masked individuals per SNP.
  const std::vector<std::vector<Index>>& missing_by_snp() const { return missing_by_snp_; }

 private:
  const model::Dataset* data_;
  model::PriorHyperparams priors_;
  MatrixXd r_inv_;
  bool r_identity_ = false;
  MatrixXd beta_projector_;
  MatrixXd beta_cov_factor_;
  std::vector<std::pair<Index, Index>> missing_cells_;
  std::vector<std::vector<Index>> missing_by_snp_;
};

// Full conditionals. Each returns the draw without modifying the state.
VectorXd sample_beta(const ParameterState& st, const ChainContext& ctx, Rng& rng);
VectorXd sample_gamma(const ParameterState& st, const ChainContext& ctx, Rng& rng, linalg::InverseCache& cache);
double sample_sigma2(const ParameterState& st, const ChainContext& ctx, Rng& rng);
double sample_phi2(const ParameterState& st, const ChainContext& ctx, Rng& rng);

// Conditional means and inverted-gamma parameters behind the draws above.
VectorXd beta_conditional_mean(const ParameterState& st, const ChainContext& ctx);
VectorXd gamma_conditional_mean(const ParameterState& st, const ChainContext& ctx, const MatrixXd& m_inv);
std::pair<double, double> sigma2_shape_scale(const ParameterState& st, const ChainContext& ctx);
std::pair<double, double> phi2_shape_scale(const ParameterState& st, const ChainContext& ctx);

// P(Z_ij = -1, 0, +1 | rest) for a masked cell, with the current residual of
// individual i excluding SNP j. Probabilities are normalized after
// max-subtraction in log space.
std::array<double, 3> imputation_probabilities(const ParameterState& st, const ChainContext& ctx, Index i, Index j,
                                               const model::ImputationPrior& prior);

struct ColumnImputation {
  Index snp = 0;
  Eigen::VectorXi codes;                   // full new column of codes
  std::vector<linalg::ColumnDelta> deltas;  // one per SNP design column, possibly zero
};

// Redraws every masked cell of SNP j; observed cells are never touched.
ColumnImputation impute_snp_column(const ParameterState& st, const ChainContext& ctx, Index j, Rng& rng,
                                   const model::ImputationPrior& prior,
                                   ImputationLikelihood likelihood = ImputationLikelihood::Printed);

// Writes the imputation into the state and moves the cache along with each
// changed design column.
void apply_imputation(ParameterState& st, const ChainContext& ctx, const ColumnImputation& imp,
                      linalg::InverseCache& cache);

// Complete-case GLS for beta and gamma (zeros when the complete cases cannot
// identify them), sigma^2 the sample phenotype variance, phi^2 = 1, masked
// genotypes drawn from the imputation prior.
ParameterState initial_state(const ChainContext& ctx, const model::ImputationPrior& prior, Rng& rng);

struct RetainedState {
  std::size_t iteration = 0;
  VectorXd beta;
  VectorXd gamma;
  double sigma2 = 0.0;
  double phi2 = 0.0;
  std::vector<std::int8_t> imputed;  // codes at ChainContext::missing_cells()
};

struct ChainDiagnostics {
  std::size_t cache_refreshes = 0;
  std::size_t cache_fallbacks = 0;
  std::size_t drift_violations = 0;
  double final_drift = 0.0;
};

struct PosteriorSamples {
  std::vector<RetainedState> states;
  std::size_t retained_count = 0;
  GibbsConfig config;
  std::vector<std::pair<Index, Index>> missing_cells;
  ChainDiagnostics diagnostics;
};

using StateSink = std::function<void(const RetainedState&)>;

// Runs one chain; deterministic in (data, priors, config). Every retained
// state is also passed to sink, in order, when one is given.
PosteriorSamples run_chain(const model::Dataset& data, const model::PriorHyperparams& priors,
                           const GibbsConfig& config, const StateSink& sink = {});

// Independent chains on streams 0..k-1 of config.seed, run concurrently.
std::vector<PosteriorSamples> run_chains(const model::Dataset& data, const model::PriorHyperparams& priors,
                                         const GibbsConfig& config, std::size_t chains);

// Rebuild the complete code matrix of a retained state.
CodeMatrix state_codes(const model::GenotypeMatrix& g, const std::vector<std::pair<Index, Index>>& cells,
                       std::span<const std::int8_t> imputed);

struct CredibleInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  bool contains_zero = true;
};

// Shortest interval holding ceil(level * N) of the sorted draws. Needs at
// least 100 draws.
CredibleInterval hpd_interval(std::span<const double> draws, double level);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  CredibleInterval hpd;
  bool significant = false;  // interval excludes zero
};

// Rows beta_1..p, gamma_1..s, sigma2, phi2 over the pooled states.
std::vector<ParameterSummary> summarize(std::span<const RetainedState> states, const model::Dataset& data,
                                        double level = 0.95);

std::vector<double> parameter_trace(std::span<const RetainedState> states, Index parameter, Index p, Index q);
std::vector<std::string> parameter_names(const model::Dataset& data);

// Lag 1..max_lag sample autocorrelations.
std::vector<double> autocorrelations(std::span<const double> x, std::size_t max_lag = 20);
// Monte Carlo standard error of the mean by non-overlapping batch means.
double batch_means_se(std::span<const double> x, std::size_t batches = 50);

// Sample dump: beta_1..p, gamma_1..s, sigma2, phi2 per retained state.
std::string format_samples_csv(std::span<const RetainedState> states, Index p, Index q);
// Imputation dump: iteration then one column per masked cell (id:snp).
std::string format_imputations_csv(std::span<const RetainedState> states, const model::GenotypeMatrix& g,
                                   const std::vector<std::pair<Index, Index>>& cells);
// Reads both dumps back into states (imputations may be empty when nothing
// is masked).
std::vector<RetainedState> read_recorded_states(const std::filesystem::path& samples,
                                                const std::filesystem::path& imputations, Index p, Index q,
                                                const model::GenotypeMatrix& g);

}  // namespace bamd::gibbs
