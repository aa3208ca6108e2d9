#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bamd/gibbs.hpp"
#include "bamd/model.hpp"
#include "bamd/pedigree.hpp"

namespace bamd::simulator {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class KinshipMode {
  Pedigree,         // full-sib families with unrelated parents
  Equicorrelation,  // 1 on the diagonal, rho within a family
  Identity,
};

std::string to_string(KinshipMode m);
KinshipMode parse_kinship_mode(const std::string& s);

struct SimDesign {
  std::string name = "custom";
  std::vector<Index> family_sizes;
  std::vector<std::array<double, 3>> genotype_freqs;  // P(-1), P(0), P(+1) per SNP
  VectorXd beta_true;                                 // one effect per family
  VectorXd gamma_true;                                // s or 2s entries by coding
  double sigma2_true = 1.0;
  KinshipMode kinship_mode = KinshipMode::Pedigree;
  double rho = 0.8;
  model::Coding coding = model::Coding::Signed;

  Index snp_count() const { return static_cast<Index>(genotype_freqs.size()); }
  Index n() const;
  // Throws UsageError on inconsistent sizes, bad frequencies or rho.
  void validate() const;
};

// Six full-sib families of 20, five SNPs in additive/dominance coding.
SimDesign table1_design();
// Three families (16, 17, 17), 25 SNPs, signed coding. gamma ~ N(0, 25 I)
// with |gamma| < 3 zeroed; the equicorrelated preset keeps them all, the
// uncorrelated one only the five largest.
SimDesign figure1_design(std::uint64_t gamma_seed);
SimDesign figure2_design(std::uint64_t gamma_seed);
SimDesign named_design(const std::string& name, std::uint64_t gamma_seed);

// Draw from N(0, sd^2 I), zero entries below threshold in magnitude and,
// when keep is given, all but the keep largest in magnitude.
VectorXd draw_sparse_gamma(Rng& rng, Index s, double sd, double threshold, std::optional<Index> keep);

struct TruthRecord {
  std::string design;
  std::uint64_t seed = 0;
  model::Coding coding = model::Coding::Signed;
  double sigma2 = 1.0;
  VectorXd beta;
  VectorXd gamma;
  std::vector<std::string> ids;
  std::vector<std::string> snp_names;
  model::CodeMatrix codes;  // complete genotypes before masking

  bool operator==(const TruthRecord& o) const;
};

std::string format_truth(const TruthRecord& t);
TruthRecord parse_truth(std::string_view text, std::string_view source);
TruthRecord read_truth(const std::filesystem::path& path);

struct SimulatedData {
  model::Dataset dataset;
  TruthRecord truth;
  std::vector<std::string> families;            // per individual
  std::vector<pedigree::PedigreeRecord> pedigree;  // pedigree mode only
};

SimulatedData simulate_dataset(const SimDesign& design, std::uint64_t seed);

// Masks round(fraction * n * s) cells chosen uniformly without replacement,
// redrawing if a SNP would lose every observation.
model::Dataset apply_missingness(const model::Dataset& d, double fraction, std::uint64_t seed);

// Files in the formats the CLI reads back.
model::RawGenotypeTable genotype_table(const model::Dataset& d);
model::PhenotypeTable phenotype_table(const SimulatedData& sim, const model::Dataset& d);

struct ParameterRecovery {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  gibbs::CredibleInterval hpd;
  double deviation() const { return mean - truth; }
  bool covered() const { return hpd.lower <= truth && truth <= hpd.upper; }
};

struct ImputationRecovery {
  std::string snp;
  std::size_t masked = 0;
  std::optional<double> correct_frequency;  // nullopt when nothing is masked
};

struct RecoveryReport {
  std::vector<ParameterRecovery> parameters;  // beta then gamma then sigma2
  std::vector<ImputationRecovery> imputation;
};

RecoveryReport recovery_report(const TruthRecord& truth, const model::Dataset& data,
                               std::span<const gibbs::RetainedState> states,
                               const std::vector<std::pair<Index, Index>>& cells, double level = 0.95);
std::string format_recovery_csv(const RecoveryReport& r);
std::string format_imputation_recovery_csv(const RecoveryReport& r);

}  // namespace bamd::simulator
