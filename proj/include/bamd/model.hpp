#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bamd/pedigree.hpp"

namespace bamd::model {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using CodeMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr std::array<int, 3> kGenotypeCodes{-1, 0, 1};
inline int code_slot(int code) { return code + 1; }

// How a genotype call enters the SNP design matrix.
enum class Coding {
  Signed,             // one column: -1 / 0 / +1
  AdditiveDominance,  // two columns: additive -1 / 0 / +1, dominance 0 / 1 / 0
};

std::string to_string(Coding c);
Coding parse_coding(const std::string& s);

inline Index design_width(Coding c) { return c == Coding::Signed ? 1 : 2; }
inline double design_value(Coding c, int code, Index k) {
  if (c == Coding::Signed || k == 0) return static_cast<double>(code);
  return code == 0 ? 1.0 : 0.0;
}

struct SnpAlleles {
  // Calls for the -1 / 0 / +1 codes; numeric columns decode to "-1", "0", "1".
  std::array<std::string, 3> calls{"-1", "0", "1"};
};

// Coded genotypes with an explicit missingness mask. Masked cells hold a
// placeholder code of 0 until imputed.
struct GenotypeMatrix {
  std::vector<std::string> ids;
  std::vector<std::string> snp_names;
  CodeMatrix codes;
  MaskMatrix missing;
  std::vector<SnpAlleles> alleles;

  Index n() const { return codes.rows(); }
  Index s() const { return codes.cols(); }
  bool is_missing(Index i, Index j) const { return missing(i, j); }
  Index missing_count() const;
  double missing_fraction() const;
  double column_missing_fraction(Index j) const;
  // Masked cells, ordered by SNP then individual.
  std::vector<std::pair<Index, Index>> missing_cells() const;
};

struct RawGenotypeTable {
  std::vector<std::string> ids;
  std::vector<std::string> snp_names;
  std::vector<std::vector<std::string>> calls;  // n x s, "NA" marks missing
};

inline constexpr const char* kMissingCall = "NA";

struct EncodedGenotypes {
  GenotypeMatrix genotypes;
  std::vector<std::string> warnings;
};

// Two-letter calls: the homozygote of the lexicographically smaller allele is
// -1, the heterozygote 0, the other homozygote +1. A column with a single
// allele codes its homozygote as +1 and is reported as monomorphic. Columns
// whose observed calls are all integers in {-1, 0, 1} are taken as
// pre-coded.
EncodedGenotypes encode_genotypes(const RawGenotypeTable& raw);
RawGenotypeTable decode_genotypes(const GenotypeMatrix& g);

struct PriorHyperparams {
  double a = 2.0;  // sigma^2 ~ IG(a, b)
  double b = 1.0;
  double c = 2.0;  // phi^2 ~ IG(c, d)
  double d = 1.0;

  // Throws UsageError unless all are strictly positive.
  void validate() const;
};

// a = c = 2, b = d = 1: prior means of sigma^2 and phi^2 are both 1.
PriorHyperparams default_priors();

// Per-cell weights over the (-1, 0, +1) genotypes used for masked entries.
class ImputationPrior {
 public:
  enum class Mode { Uniform, Weights };

  static ImputationPrior uniform();
  // weights is n*s triples indexed by i * s + j. Throws DataError on
  // negative weights or triples not summing to 1 within 1e-12.
  static ImputationPrior from_weights(Index n, Index s, std::vector<std::array<double, 3>> weights);

  Mode mode() const { return mode_; }
  const std::array<double, 3>& weights(Index i, Index j) const;

 private:
  Mode mode_ = Mode::Uniform;
  Index n_ = 0;
  Index s_ = 0;
  std::vector<std::array<double, 3>> weights_;
};

// Reads id,snp,p_minus,p_het,p_plus rows; unlisted cells stay uniform.
ImputationPrior read_imputation_weights(const std::filesystem::path& path, const GenotypeMatrix& g);

struct Dataset {
  GenotypeMatrix genotypes;
  VectorXd phenotypes;
  MatrixXd design;  // X, n x p
  std::vector<std::string> design_names;
  pedigree::RelationshipMatrix kinship;
  Coding coding = Coding::Signed;

  Index n() const { return phenotypes.size(); }
  Index p() const { return design.cols(); }
  Index snp_count() const { return genotypes.s(); }
  // Number of SNP design columns (length of gamma).
  Index gamma_size() const { return genotypes.s() * design_width(coding); }
  std::vector<std::string> gamma_names() const;
  Index snp_of_gamma(Index k) const { return k / design_width(coding); }
};

// SNP design matrix for the given codes (n x gamma_size).
MatrixXd snp_design(const CodeMatrix& codes, Coding coding);

struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  double overall_missing = 0.0;
  std::vector<double> column_missing;

  bool ok() const { return errors.empty(); }
};

inline constexpr double kMissingnessWarning = 0.15;

// Checks every type invariant; never modifies d.
ValidationReport validate_dataset(const Dataset& d);
// Throws DataError carrying the first error when the report is not ok.
void require_valid(const ValidationReport& report);

RawGenotypeTable read_genotype_csv(const std::filesystem::path& path);
RawGenotypeTable parse_genotype_csv(std::string_view text, std::string_view source);
std::string format_genotype_csv(const RawGenotypeTable& raw);

struct PhenotypeTable {
  std::vector<std::string> ids;
  std::vector<double> values;
  std::vector<std::string> families;  // empty when the file has no family column
};

PhenotypeTable read_phenotype_csv(const std::filesystem::path& path);
PhenotypeTable parse_phenotype_csv(std::string_view text, std::string_view source);
std::string format_phenotype_csv(const PhenotypeTable& t);

// Order individuals as in the genotype table and build the covariate design:
// family indicators when the phenotype file carries families, otherwise an
// intercept column. kinship must cover every genotyped id.
Dataset assemble_dataset(const EncodedGenotypes& genotypes, const PhenotypeTable& phenotypes,
                         const pedigree::RelationshipMatrix& kinship, Coding coding);

}  // namespace bamd::model
