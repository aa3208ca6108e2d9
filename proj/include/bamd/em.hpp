#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bamd/model.hpp"
#include "bamd/rng.hpp"

// Maximum-likelihood baseline with missing genotypes. The residual
// correlation R is not part of this likelihood.
namespace bamd::em {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr int kGenotypeArity = 3;
inline constexpr std::size_t kDefaultEnumerationCap = 729;

struct MissingPattern {
  std::vector<std::vector<Index>> missing;  // per individual, missing SNP indices

  static MissingPattern from(const model::GenotypeMatrix& g);
  // 3^k_i, saturating at SIZE_MAX.
  std::size_t enumeration_size(Index i) const;
  bool exact_possible(std::size_t cap) const;
};

struct EmState {
  VectorXd beta;
  VectorXd gamma;
  double sigma2 = 1.0;
  MatrixXd expected_z;  // n x q expected design
  MatrixXd v_z;         // q x q summed conditional covariance
};

// One completion c of individual i's missing SNPs with its probability.
struct Completion {
  std::vector<int> codes;
  double probability = 0.0;
};

// Exact table over all 3^k completions; throws UsageError above the cap.
std::vector<Completion> missing_distribution(const EmState& st, const model::Dataset& data,
                                             const MissingPattern& pattern, Index i,
                                             std::size_t cap = kDefaultEnumerationCap);

struct EStepOptions {
  std::size_t cap = kDefaultEnumerationCap;
  std::size_t mc_samples = 2000;
  std::size_t mc_burn_in = 200;
};

struct Moments {
  MatrixXd expected_z;
  MatrixXd v_z;
  std::size_t monte_carlo_individuals = 0;
};

// Exact moments under the cap, Gibbs-scan Monte Carlo moments above it.
Moments e_step(const EmState& st, const model::Dataset& data, const MissingPattern& pattern,
               const EStepOptions& options, Rng& rng);

struct MStepResult {
  VectorXd beta;
  VectorXd gamma;
  double sigma2 = 0.0;
  bool ridged = false;
};

// Maximizes the expected complete-data log-likelihood jointly in (beta, gamma):
// gamma = (Zb'(I-H)Zb + V_Z)^{-1} Zb'(I-H)Y with H the projector onto X.
MStepResult m_step(const Moments& moments, const model::Dataset& data);

// Observed-data log-likelihood, summing every completion in log space.
// nullopt when some individual exceeds the cap.
std::optional<double> observed_loglik(const EmState& st, const model::Dataset& data, const MissingPattern& pattern,
                                      std::size_t cap = kDefaultEnumerationCap);

struct EmConfig {
  double tolerance = 1e-8;
  std::size_t max_iterations = 500;
  EStepOptions e_step;
  std::uint64_t seed = 1;
};

struct EmIteration {
  std::size_t iteration = 0;
  std::optional<double> loglik;
  double max_delta = 0.0;
};

struct EmResult {
  EmState state;
  std::vector<EmIteration> log;
  bool converged = false;
  bool exact = true;
  std::vector<std::string> warnings;
};

// Starts from the complete-case least-squares fit.
EmResult run_em(const model::Dataset& data, const EmConfig& config);

// iteration,loglik,max_delta
std::string format_em_log(const EmResult& r);
// parameter,estimate
std::string format_em_estimates(const EmResult& r, const model::Dataset& data);

}  // namespace bamd::em
