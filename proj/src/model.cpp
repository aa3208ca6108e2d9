#include "bamd/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "bamd/errors.hpp"
#include "bamd/io.hpp"

namespace bamd::model {

std::string to_string(Coding c) { return c == Coding::Signed ? "signed" : "additive-dominance"; }

Coding parse_coding(const std::string& s) {
  if (s == "signed") return Coding::Signed;
  if (s == "additive-dominance" || s == "ad") return Coding::AdditiveDominance;
  throw UsageError("unknown coding '" + s + "' (expected signed or additive-dominance)");
}

Index GenotypeMatrix::missing_count() const { return missing.count(); }

double GenotypeMatrix::missing_fraction() const {
  return missing.size() == 0 ? 0.0 : static_cast<double>(missing.count()) / static_cast<double>(missing.size());
}

double GenotypeMatrix::column_missing_fraction(Index j) const {
  return n() == 0 ? 0.0 : static_cast<double>(missing.col(j).count()) / static_cast<double>(n());
}

std::vector<std::pair<Index, Index>> GenotypeMatrix::missing_cells() const {
  std::vector<std::pair<Index, Index>> cells;
  cells.reserve(static_cast<std::size_t>(missing_count()));
  for (Index j = 0; j < s(); ++j)
    for (Index i = 0; i < n(); ++i)
      if (missing(i, j)) cells.emplace_back(i, j);
  return cells;
}

namespace {

bool is_precoded(std::string_view call) { return call == "-1" || call == "0" || call == "1" || call == "+1"; }

bool is_homozygote(const std::string& call) { return call[0] == call[1]; }

}  // namespace

EncodedGenotypes encode_genotypes(const RawGenotypeTable& raw) {
  const auto n = static_cast<Index>(raw.ids.size());
  const auto s = static_cast<Index>(raw.snp_names.size());
  if (static_cast<Index>(raw.calls.size()) != n) throw DataError("genotypes: row count does not match id count");

  EncodedGenotypes out;
  auto& g = out.genotypes;
  g.ids = raw.ids;
  g.snp_names = raw.snp_names;
  g.codes = CodeMatrix::Zero(n, s);
  g.missing = MaskMatrix::Constant(n, s, false);
  g.alleles.assign(static_cast<std::size_t>(s), SnpAlleles{});

  for (Index j = 0; j < s; ++j) {
    const auto& name = raw.snp_names[j];
    std::vector<std::string> observed;
    for (Index i = 0; i < n; ++i) {
      if (static_cast<Index>(raw.calls[i].size()) != s) throw DataError("genotypes: row " + raw.ids[i] + " has the wrong width");
      const auto& call = raw.calls[i][j];
      if (call == kMissingCall) {
        g.missing(i, j) = true;
      } else {
        observed.push_back(call);
      }
    }
    if (observed.empty()) throw DataError("genotypes: SNP " + name + " has no observed calls");

    const bool numeric = std::all_of(observed.begin(), observed.end(), [](const auto& c) { return is_precoded(c); });
    std::set<int> used;
    if (numeric) {
      for (Index i = 0; i < n; ++i) {
        if (g.missing(i, j)) continue;
        const int code = static_cast<int>(io::parse_int(raw.calls[i][j], name));
        g.codes(i, j) = code;
        used.insert(code);
      }
    } else {
      // Normalized category -> first spelling seen.
      std::map<std::string, std::string> categories;
      std::set<char> alleles;
      for (const auto& call : observed) {
        if (call.size() != 2 || !std::isalpha(static_cast<unsigned char>(call[0])) ||
            !std::isalpha(static_cast<unsigned char>(call[1]))) {
          throw DataError("genotypes: SNP " + name + ": unrecognized call '" + call + "'");
        }
        std::string key = call;
        std::sort(key.begin(), key.end());
        categories.emplace(key, call);
        alleles.insert(call[0]);
        alleles.insert(call[1]);
      }
      if (categories.size() > 3) {
        throw DataError("genotypes: SNP " + name + " has " + std::to_string(categories.size()) +
                        " categories (at most 3 allowed)");
      }
      if (alleles.size() > 2) throw DataError("genotypes: SNP " + name + " is not biallelic");
      const char lo = *alleles.begin();
      const char hi = *alleles.rbegin();
      auto& names = g.alleles[j].calls;
      names = {std::string(2, lo), std::string{lo, hi}, std::string(2, hi)};
      for (const auto& [key, spelling] : categories) {
        if (!is_homozygote(key)) names[1] = spelling;
      }
      for (Index i = 0; i < n; ++i) {
        if (g.missing(i, j)) continue;
        const auto& call = raw.calls[i][j];
        int code = 0;
        if (!is_homozygote(call)) {
          code = 0;
        } else if (alleles.size() == 1 || call[0] == hi) {
          code = 1;
        } else {
          code = -1;
        }
        g.codes(i, j) = code;
        used.insert(code);
      }
      if (alleles.size() == 1) names = {std::string(2, '?'), "?" + std::string(1, lo), std::string(2, lo)};
    }
    if (used.size() == 1) out.warnings.push_back("SNP " + name + " is monomorphic among observed calls");
  }
  return out;
}

RawGenotypeTable decode_genotypes(const GenotypeMatrix& g) {
  RawGenotypeTable raw;
  raw.ids = g.ids;
  raw.snp_names = g.snp_names;
  raw.calls.assign(static_cast<std::size_t>(g.n()), std::vector<std::string>(static_cast<std::size_t>(g.s())));
  for (Index i = 0; i < g.n(); ++i) {
    for (Index j = 0; j < g.s(); ++j) {
      raw.calls[i][j] = g.missing(i, j) ? kMissingCall : g.alleles[j].calls[code_slot(g.codes(i, j))];
    }
  }
  return raw;
}

void PriorHyperparams::validate() const {
  for (auto [name, v] : {std::pair{"a", a}, {"b", b}, {"c", c}, {"d", d}}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw UsageError(std::string("prior hyperparameter ") + name + " must be > 0");
    }
  }
}

PriorHyperparams default_priors() { return PriorHyperparams{2.0, 1.0, 2.0, 1.0}; }

ImputationPrior ImputationPrior::uniform() { return ImputationPrior{}; }

ImputationPrior ImputationPrior::from_weights(Index n, Index s, std::vector<std::array<double, 3>> weights) {
  if (static_cast<Index>(weights.size()) != n * s) throw DataError("imputation prior: expected n*s weight triples");
  for (const auto& w : weights) {
    if (w[0] < 0.0 || w[1] < 0.0 || w[2] < 0.0) throw DataError("imputation prior: negative weight");
    if (std::abs(w[0] + w[1] + w[2] - 1.0) > 1e-12) throw DataError("imputation prior: weights must sum to 1");
  }
  ImputationPrior p;
  p.mode_ = Mode::Weights;
  p.n_ = n;
  p.s_ = s;
  p.weights_ = std::move(weights);
  return p;
}

const std::array<double, 3>& ImputationPrior::weights(Index i, Index j) const {
  static const std::array<double, 3> kUniform{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  if (mode_ == Mode::Uniform) return kUniform;
  return weights_[static_cast<std::size_t>(i * s_ + j)];
}

ImputationPrior read_imputation_weights(const std::filesystem::path& path, const GenotypeMatrix& g) {
  const auto table = io::read_csv(path);
  const std::vector<std::string> expected{"id", "snp", "p_minus", "p_het", "p_plus"};
  if (table.header != expected) throw DataError(path.string() + ": header must be id,snp,p_minus,p_het,p_plus");
  std::unordered_map<std::string, Index> id_pos, snp_pos;
  for (Index i = 0; i < g.n(); ++i) id_pos.emplace(g.ids[i], i);
  for (Index j = 0; j < g.s(); ++j) snp_pos.emplace(g.snp_names[j], j);
  std::vector<std::array<double, 3>> w(static_cast<std::size_t>(g.n() * g.s()), {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
  for (const auto& row : table.rows) {
    auto ii = id_pos.find(row[0]);
    auto jj = snp_pos.find(row[1]);
    if (ii == id_pos.end()) throw DataError(path.string() + ": unknown id " + row[0]);
    if (jj == snp_pos.end()) throw DataError(path.string() + ": unknown SNP " + row[1]);
    w[static_cast<std::size_t>(ii->second * g.s() + jj->second)] = {
        io::parse_double(row[2], path.string()), io::parse_double(row[3], path.string()),
        io::parse_double(row[4], path.string())};
  }
  return ImputationPrior::from_weights(g.n(), g.s(), std::move(w));
}

std::vector<std::string> Dataset::gamma_names() const {
  std::vector<std::string> names;
  for (const auto& snp : genotypes.snp_names) {
    if (coding == Coding::Signed) {
      names.push_back(snp);
    } else {
      names.push_back(snp + ":a");
      names.push_back(snp + ":d");
    }
  }
  return names;
}

MatrixXd snp_design(const CodeMatrix& codes, Coding coding) {
  const Index w = design_width(coding);
  MatrixXd z(codes.rows(), codes.cols() * w);
  for (Index j = 0; j < codes.cols(); ++j)
    for (Index k = 0; k < w; ++k)
      for (Index i = 0; i < codes.rows(); ++i) z(i, j * w + k) = design_value(coding, codes(i, j), k);
  return z;
}

ValidationReport validate_dataset(const Dataset& d) {
  ValidationReport rep;
  const auto& g = d.genotypes;
  const Index n = d.phenotypes.size();
  if (g.n() != n) rep.errors.push_back("dimension mismatch: " + std::to_string(g.n()) + " genotyped vs " + std::to_string(n) + " phenotyped");
  if (d.design.rows() != n) rep.errors.push_back("dimension mismatch: design has " + std::to_string(d.design.rows()) + " rows, expected " + std::to_string(n));
  if (d.kinship.dim() != n) rep.errors.push_back("dimension mismatch: kinship is " + std::to_string(d.kinship.dim()) + " square, expected " + std::to_string(n));
  if (g.missing.rows() != g.codes.rows() || g.missing.cols() != g.codes.cols()) rep.errors.push_back("dimension mismatch: missingness mask");
  if (!rep.ok()) return rep;

  if (!d.phenotypes.allFinite()) rep.errors.push_back("phenotypes contain non-finite values");

  const Index p = d.design.cols();
  if (p == 0 || p >= n) {
    rep.errors.push_back("design must have 1 <= p < n columns");
  } else {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(d.design);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) rep.errors.push_back("design matrix X is rank deficient (rank " + std::to_string(qr.rank()) + " < " + std::to_string(p) + ")");
  }

  const auto& r = d.kinship.values();
  if ((r - r.transpose()).cwiseAbs().maxCoeff() > 1e-12) rep.errors.push_back("kinship matrix is not symmetric");
  else if (!pedigree::is_positive_definite(r)) rep.errors.push_back("kinship matrix is not positive definite");

  rep.column_missing.resize(static_cast<std::size_t>(g.s()));
  for (Index j = 0; j < g.s(); ++j) {
    rep.column_missing[j] = g.column_missing_fraction(j);
    if (g.missing.col(j).count() == g.n()) rep.errors.push_back("SNP " + g.snp_names[j] + " has no observed entries");
    for (Index i = 0; i < g.n(); ++i) {
      if (g.missing(i, j)) continue;
      const int c = g.codes(i, j);
      if (c < -1 || c > 1) {
        rep.errors.push_back("SNP " + g.snp_names[j] + " has an invalid code");
        break;
      }
    }
  }
  rep.overall_missing = g.missing_fraction();
  if (rep.overall_missing > kMissingnessWarning) {
    rep.warnings.push_back("overall missingness " + io::format_double(rep.overall_missing) +
                           " exceeds 0.15; estimates may be unreliable");
  }
  return rep;
}

void require_valid(const ValidationReport& report) {
  if (!report.ok()) throw DataError("invalid dataset: " + report.errors.front());
}

RawGenotypeTable parse_genotype_csv(std::string_view text, std::string_view source) {
  const auto table = io::parse_csv(text, source);
  if (table.header.size() < 2) throw DataError(std::string(source) + ": genotype file needs an id column and at least one SNP");
  RawGenotypeTable raw;
  raw.snp_names.assign(table.header.begin() + 1, table.header.end());
  for (const auto& row : table.rows) {
    raw.ids.push_back(row[0]);
    raw.calls.emplace_back(row.begin() + 1, row.end());
  }
  return raw;
}

RawGenotypeTable read_genotype_csv(const std::filesystem::path& path) {
  return parse_genotype_csv(io::read_file(path), path.string());
}

std::string format_genotype_csv(const RawGenotypeTable& raw) {
  std::string out = "id";
  for (const auto& s : raw.snp_names) out += "," + s;
  out += "\n";
  for (std::size_t i = 0; i < raw.ids.size(); ++i) {
    out += raw.ids[i];
    for (const auto& c : raw.calls[i]) out += "," + c;
    out += "\n";
  }
  return out;
}

PhenotypeTable parse_phenotype_csv(std::string_view text, std::string_view source) {
  const auto table = io::parse_csv(text, source);
  const bool with_family = table.header.size() == 3 && table.header[2] == "family";
  if (table.header.size() < 2 || table.header[0] != "id" || table.header[1] != "value" ||
      (table.header.size() == 3 && !with_family) || table.header.size() > 3) {
    throw DataError(std::string(source) + ": phenotype header must be id,value or id,value,family");
  }
  PhenotypeTable out;
  for (const auto& row : table.rows) {
    if (row[1] == kMissingCall || row[1].empty()) {
      throw DataError(std::string(source) + ": missing phenotype for " + row[0] + " (phenotypes may not be missing)");
    }
    out.ids.push_back(row[0]);
    out.values.push_back(io::parse_double(row[1], source));
    if (with_family) out.families.push_back(row[2]);
  }
  return out;
}

PhenotypeTable read_phenotype_csv(const std::filesystem::path& path) {
  return parse_phenotype_csv(io::read_file(path), path.string());
}

std::string format_phenotype_csv(const PhenotypeTable& t) {
  std::string out = t.families.empty() ? "id,value\n" : "id,value,family\n";
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    out += t.ids[i] + "," + io::format_double(t.values[i]);
    if (!t.families.empty()) out += "," + t.families[i];
    out += "\n";
  }
  return out;
}

Dataset assemble_dataset(const EncodedGenotypes& genotypes, const PhenotypeTable& phenotypes,
                         const pedigree::RelationshipMatrix& kinship, Coding coding) {
  Dataset d;
  d.genotypes = genotypes.genotypes;
  d.coding = coding;
  const auto& ids = d.genotypes.ids;
  const auto n = static_cast<Index>(ids.size());

  std::unordered_map<std::string, std::size_t> pheno_pos;
  for (std::size_t k = 0; k < phenotypes.ids.size(); ++k) {
    if (!pheno_pos.emplace(phenotypes.ids[k], k).second) throw DataError("phenotypes: duplicate id " + phenotypes.ids[k]);
  }
  if (pheno_pos.size() != ids.size()) {
    throw DataError("phenotypes: " + std::to_string(pheno_pos.size()) + " individuals but " + std::to_string(ids.size()) + " genotyped");
  }
  d.phenotypes.resize(n);
  std::vector<std::string> family(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto it = pheno_pos.find(ids[i]);
    if (it == pheno_pos.end()) throw DataError("phenotypes: no phenotype for genotyped individual " + ids[i]);
    d.phenotypes[i] = phenotypes.values[it->second];
    if (!phenotypes.families.empty()) family[i] = phenotypes.families[it->second];
  }

  if (phenotypes.families.empty()) {
    d.design = MatrixXd::Ones(n, 1);
    d.design_names = {"intercept"};
  } else {
    std::set<std::string> labels(family.begin(), family.end());
    std::map<std::string, Index> col;
    for (const auto& l : labels) {
      col.emplace(l, static_cast<Index>(d.design_names.size()));
      d.design_names.push_back("family_" + l);
    }
    d.design = MatrixXd::Zero(n, static_cast<Index>(labels.size()));
    for (Index i = 0; i < n; ++i) d.design(i, col[family[i]]) = 1.0;
  }

  d.kinship = pedigree::extract_submatrix(kinship, ids);
  return d;
}

}  // namespace bamd::model
