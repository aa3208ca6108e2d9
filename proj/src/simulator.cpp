#include "bamd/simulator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bamd/errors.hpp"
#include "bamd/io.hpp"

namespace bamd::simulator {

std::string to_string(KinshipMode m) {
  switch (m) {
    case KinshipMode::Pedigree: return "pedigree";
    case KinshipMode::Equicorrelation: return "equicorrelation";
    case KinshipMode::Identity: return "identity";
  }
  return "identity";
}

KinshipMode parse_kinship_mode(const std::string& s) {
  if (s == "pedigree") return KinshipMode::Pedigree;
  if (s == "equicorrelation") return KinshipMode::Equicorrelation;
  if (s == "identity") return KinshipMode::Identity;
  throw UsageError("unknown kinship mode: " + s);
}

Index SimDesign::n() const { return std::accumulate(family_sizes.begin(), family_sizes.end(), Index{0}); }

void SimDesign::validate() const {
  if (family_sizes.empty()) throw UsageError("design needs at least one family");
  for (Index f : family_sizes)
    if (f < 1) throw UsageError("family sizes must be positive");
  if (beta_true.size() != static_cast<Index>(family_sizes.size())) throw UsageError("need one beta per family");
  if (genotype_freqs.empty()) throw UsageError("design needs at least one SNP");
  if (gamma_true.size() != snp_count() * model::design_width(coding)) throw UsageError("gamma length does not match the coding");
  for (const auto& f : genotype_freqs) {
    double total = 0.0;
    for (double p : f) {
      if (!(p >= 0.0)) throw UsageError("genotype frequencies must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw UsageError("genotype frequencies must sum to 1");
  }
  if (!(sigma2_true > 0.0)) throw UsageError("sigma2 must be positive");
  if (kinship_mode == KinshipMode::Equicorrelation) {
    const Index largest = *std::max_element(family_sizes.begin(), family_sizes.end());
    const double lo = largest > 1 ? -1.0 / static_cast<double>(largest - 1) : -1.0;
    if (!(rho > lo && rho < 1.0)) throw UsageError("rho outside the positive-definite range for these families");
  }
}

SimDesign table1_design() {
  SimDesign d;
  d.name = "table1";
  d.family_sizes = {20, 20, 20, 20, 20, 20};
  d.genotype_freqs = {{0.3384, 0.5307, 0.1309},
                      {0.3113, 0.3875, 0.3012},
                      {0.1023, 0.0796, 0.8181},
                      {0.0331, 0.1950, 0.7719},
                      {0.0592, 0.5425, 0.3983}};
  d.beta_true = (VectorXd(6) << 15, 20, 25, 30, 35, 40).finished();
  d.gamma_true = (VectorXd(10) << -2.0, 1.0, 1.0, -1.0, 3.0, 0.0, 2.5, 0.1, 0.3, 3.0).finished();
  d.sigma2_true = 1.0;
  d.kinship_mode = KinshipMode::Pedigree;
  d.coding = model::Coding::AdditiveDominance;
  return d;
}

VectorXd draw_sparse_gamma(Rng& rng, Index s, double sd, double threshold, std::optional<Index> keep) {
  VectorXd g = sd * standard_normal_vector(rng, s);
  for (Index j = 0; j < s; ++j)
    if (std::abs(g[j]) < threshold) g[j] = 0.0;
  if (keep && *keep < s) {
    std::vector<Index> order(static_cast<std::size_t>(s));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return std::abs(g[a]) > std::abs(g[b]); });
    for (std::size_t k = static_cast<std::size_t>(*keep); k < order.size(); ++k) g[order[k]] = 0.0;
  }
  return g;
}

namespace {

SimDesign comparison_base(std::uint64_t gamma_seed, std::optional<Index> keep) {
  SimDesign d;
  d.family_sizes = {16, 17, 17};
  d.genotype_freqs.assign(25, {0.25, 0.5, 0.25});
  d.beta_true = (VectorXd(3) << 10, 20, 30).finished();
  auto rng = make_rng(gamma_seed, 0x9a33a);
  d.gamma_true = draw_sparse_gamma(rng, 25, 5.0, 3.0, keep);
  d.sigma2_true = 1.0;
  d.coding = model::Coding::Signed;
  return d;
}

}  // namespace

SimDesign figure1_design(std::uint64_t gamma_seed) {
  auto d = comparison_base(gamma_seed, std::nullopt);
  d.name = "figure1";
  d.kinship_mode = KinshipMode::Equicorrelation;
  d.rho = 0.8;
  return d;
}

SimDesign figure2_design(std::uint64_t gamma_seed) {
  auto d = comparison_base(gamma_seed, Index{5});
  d.name = "figure2";
  d.kinship_mode = KinshipMode::Identity;
  return d;
}

SimDesign named_design(const std::string& name, std::uint64_t gamma_seed) {
  if (name == "table1") return table1_design();
  if (name == "figure1") return figure1_design(gamma_seed);
  if (name == "figure2") return figure2_design(gamma_seed);
  throw UsageError("unknown design: " + name + " (expected table1, figure1 or figure2)");
}

bool TruthRecord::operator==(const TruthRecord& o) const {
  auto same = [](const VectorXd& a, const VectorXd& b) {
    if (a.size() != b.size()) return false;
    for (Index k = 0; k < a.size(); ++k)
      if (std::bit_cast<std::uint64_t>(a[k]) != std::bit_cast<std::uint64_t>(b[k])) return false;
    return true;
  };
  return design == o.design && seed == o.seed && coding == o.coding &&
         std::bit_cast<std::uint64_t>(sigma2) == std::bit_cast<std::uint64_t>(o.sigma2) && same(beta, o.beta) &&
         same(gamma, o.gamma) && ids == o.ids && snp_names == o.snp_names && codes.rows() == o.codes.rows() &&
         codes.cols() == o.codes.cols() && codes == o.codes;
}

namespace {

std::string join_doubles(const VectorXd& v) {
  std::string out;
  for (Index k = 0; k < v.size(); ++k) out += (k ? "," : "") + io::format_double(v[k]);
  return out;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + v[k];
  return out;
}

VectorXd parse_doubles(const std::string& s, std::string_view source) {
  if (s.empty()) return VectorXd();
  const auto parts = io::split(s, ',');
  VectorXd v(static_cast<Index>(parts.size()));
  for (std::size_t k = 0; k < parts.size(); ++k) v[static_cast<Index>(k)] = io::parse_double(parts[k], source);
  return v;
}

}  // namespace

std::string format_truth(const TruthRecord& t) {
  std::string out;
  out += "design=" + t.design + "\n";
  out += "seed=" + std::to_string(t.seed) + "\n";
  out += "coding=" + model::to_string(t.coding) + "\n";
  out += "sigma2=" + io::format_double(t.sigma2) + "\n";
  out += "beta=" + join_doubles(t.beta) + "\n";
  out += "gamma=" + join_doubles(t.gamma) + "\n";
  out += "snps=" + join_strings(t.snp_names) + "\n";
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    out += "genotype." + t.ids[i] + "=";
    for (Index j = 0; j < t.codes.cols(); ++j) out += (j ? "," : "") + std::to_string(t.codes(static_cast<Index>(i), j));
    out += "\n";
  }
  return out;
}

TruthRecord parse_truth(std::string_view text, std::string_view source) {
  TruthRecord t;
  std::vector<std::vector<int>> rows;
  bool have_snps = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    line = std::string(io::trim(line));
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(std::string(source) + ": malformed truth line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "design") t.design = value;
    else if (key == "seed") t.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "coding") t.coding = model::parse_coding(value);
    else if (key == "sigma2") t.sigma2 = io::parse_double(value, source);
    else if (key == "beta") t.beta = parse_doubles(value, source);
    else if (key == "gamma") t.gamma = parse_doubles(value, source);
    else if (key == "snps") {
      t.snp_names = io::split(value, ',');
      have_snps = true;
    } else if (key.rfind("genotype.", 0) == 0) {
      t.ids.push_back(key.substr(9));
      std::vector<int> row;
      for (const auto& c : io::split(value, ',')) row.push_back(static_cast<int>(io::parse_int(c, source)));
      rows.push_back(std::move(row));
    } else {
      throw DataError(std::string(source) + ": unknown truth key " + key);
    }
  }
  if (!have_snps) throw DataError(std::string(source) + ": truth record lacks snps");
  const auto s = static_cast<Index>(t.snp_names.size());
  t.codes.resize(static_cast<Index>(rows.size()), s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != s) throw DataError(std::string(source) + ": genotype row width mismatch");
    for (Index j = 0; j < s; ++j) t.codes(static_cast<Index>(i), j) = rows[i][j];
  }
  return t;
}

TruthRecord read_truth(const std::filesystem::path& path) { return parse_truth(io::read_file(path), path.string()); }

SimulatedData simulate_dataset(const SimDesign& design, std::uint64_t seed) {
  design.validate();
  const Index n = design.n();
  const Index s = design.snp_count();
  const auto nfam = design.family_sizes.size();
  const int width = static_cast<int>(std::to_string(nfam).size());
  auto pad = [](std::size_t v, int w) {
    auto str = std::to_string(v);
    return std::string(static_cast<std::size_t>(std::max(0, w - static_cast<int>(str.size()))), '0') + str;
  };

  SimulatedData sim;
  std::vector<std::string> ids;
  for (std::size_t f = 0; f < nfam; ++f) {
    const std::string fam = "F" + pad(f + 1, width);
    const int cw = static_cast<int>(std::to_string(design.family_sizes[f]).size());
    if (design.kinship_mode == KinshipMode::Pedigree) {
      sim.pedigree.push_back({fam + "_sire", std::nullopt, std::nullopt});
      sim.pedigree.push_back({fam + "_dam", std::nullopt, std::nullopt});
    }
    for (Index k = 0; k < design.family_sizes[f]; ++k) {
      ids.push_back(fam + "_" + pad(static_cast<std::size_t>(k + 1), cw));
      sim.families.push_back(fam);
      if (design.kinship_mode == KinshipMode::Pedigree) sim.pedigree.push_back({ids.back(), fam + "_sire", fam + "_dam"});
    }
  }

  pedigree::RelationshipMatrix kinship = pedigree::RelationshipMatrix::identity(ids);
  if (design.kinship_mode == KinshipMode::Pedigree) {
    const auto full = pedigree::build_numerator_matrix(pedigree::order_pedigree(sim.pedigree));
    kinship = pedigree::extract_submatrix(full, ids);
  } else if (design.kinship_mode == KinshipMode::Equicorrelation) {
    MatrixXd r = MatrixXd::Identity(n, n);
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b < n; ++b)
        if (a != b && sim.families[a] == sim.families[b]) r(a, b) = design.rho;
    if (!pedigree::is_positive_definite(r)) throw UsageError("equicorrelation matrix is not positive definite");
    kinship = pedigree::RelationshipMatrix(ids, std::move(r));
  }

  auto geno_rng = make_rng(seed, 1);
  model::RawGenotypeTable raw;
  raw.ids = ids;
  const int sw = static_cast<int>(std::to_string(s).size());
  for (Index j = 0; j < s; ++j) raw.snp_names.push_back("SNP" + pad(static_cast<std::size_t>(j + 1), sw));
  static const std::array<std::string, 3> calls{"CC", "CG", "GG"};
  raw.calls.assign(static_cast<std::size_t>(n), std::vector<std::string>(static_cast<std::size_t>(s)));
  for (Index j = 0; j < s; ++j) {
    const auto& f = design.genotype_freqs[j];
    for (Index i = 0; i < n; ++i) raw.calls[i][j] = calls[draw_categorical(geno_rng, f)];
  }
  const auto encoded = model::encode_genotypes(raw);

  // Phenotypes from the encoded codes so truth and dataset agree exactly.
  const Eigen::MatrixXd z = model::snp_design(encoded.genotypes.codes, design.coding);
  MatrixXd x = MatrixXd::Zero(n, static_cast<Index>(nfam));
  for (Index i = 0; i < n; ++i) {
    const auto f = std::stoul(sim.families[i].substr(1)) - 1;
    x(i, static_cast<Index>(f)) = 1.0;
  }
  auto noise_rng = make_rng(seed, 2);
  Eigen::LLT<MatrixXd> llt(kinship.values());
  const MatrixXd l = llt.matrixL();
  const VectorXd eps = std::sqrt(design.sigma2_true) * (l * standard_normal_vector(noise_rng, n));
  const VectorXd y = x * design.beta_true + z * design.gamma_true + eps;

  model::PhenotypeTable pheno;
  pheno.ids = ids;
  pheno.values.assign(y.data(), y.data() + n);
  pheno.families = sim.families;
  sim.dataset = model::assemble_dataset(encoded, pheno, kinship, design.coding);

  sim.truth.design = design.name;
  sim.truth.seed = seed;
  sim.truth.coding = design.coding;
  sim.truth.sigma2 = design.sigma2_true;
  sim.truth.beta = design.beta_true;
  sim.truth.gamma = design.gamma_true;
  sim.truth.ids = ids;
  sim.truth.snp_names = raw.snp_names;
  sim.truth.codes = encoded.genotypes.codes;
  return sim;
}

model::Dataset apply_missingness(const model::Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 0.95)) throw UsageError("missing fraction must lie in [0, 0.95]");
  model::Dataset out = d;
  const Index n = d.genotypes.n();
  const Index s = d.genotypes.s();
  std::vector<Index> free;
  for (Index j = 0; j < s; ++j)
    for (Index i = 0; i < n; ++i)
      if (!d.genotypes.missing(i, j)) free.push_back(j * n + i);
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n * s)));
  if (target == 0) return out;
  if (target > free.size()) throw UsageError("missing fraction exceeds the observed cells");
  auto rng = make_rng(seed, 3);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<Index> chosen;
    chosen.reserve(target);
    std::sample(free.begin(), free.end(), std::back_inserter(chosen), static_cast<std::ptrdiff_t>(target), rng);
    model::MaskMatrix mask = d.genotypes.missing;
    for (Index c : chosen) mask(c % n, c / n) = true;
    bool ok = true;
    for (Index j = 0; j < s && ok; ++j) ok = !mask.col(j).all();
    if (!ok) continue;
    out.genotypes.missing = mask;
    for (Index c : chosen) out.genotypes.codes(c % n, c / n) = 0;
    return out;
  }
  throw DataError("could not place the missing cells without emptying a SNP column");
}

model::RawGenotypeTable genotype_table(const model::Dataset& d) { return model::decode_genotypes(d.genotypes); }

model::PhenotypeTable phenotype_table(const SimulatedData& sim, const model::Dataset& d) {
  model::PhenotypeTable t;
  t.ids = d.genotypes.ids;
  t.values.assign(d.phenotypes.data(), d.phenotypes.data() + d.n());
  t.families = sim.families;
  return t;
}

RecoveryReport recovery_report(const TruthRecord& truth, const model::Dataset& data,
                               std::span<const gibbs::RetainedState> states,
                               const std::vector<std::pair<Index, Index>>& cells, double level) {
  const Index p = data.p();
  const Index q = data.gamma_size();
  if (truth.beta.size() != p || truth.gamma.size() != q) throw DataError("truth record does not match the dataset");
  RecoveryReport r;
  const auto gnames = data.gamma_names();
  for (Index k = 0; k < p + q + 1; ++k) {
    const auto x = gibbs::parameter_trace(states, k, p, q);
    ParameterRecovery rec;
    rec.name = k < p ? data.design_names[k] : (k < p + q ? gnames[k - p] : std::string("sigma2"));
    rec.truth = k < p ? truth.beta[k] : (k < p + q ? truth.gamma[k - p] : truth.sigma2);
    rec.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    rec.hpd = gibbs::hpd_interval(x, level);
    r.parameters.push_back(rec);
  }
  const Index s = data.snp_count();
  std::vector<std::size_t> masked(static_cast<std::size_t>(s), 0);
  std::vector<std::size_t> correct(static_cast<std::size_t>(s), 0);
  for (std::size_t c = 0; c < cells.size(); ++c) ++masked[cells[c].second];
  for (const auto& st : states) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (st.imputed[c] == truth.codes(cells[c].first, cells[c].second)) ++correct[cells[c].second];
    }
  }
  for (Index j = 0; j < s; ++j) {
    ImputationRecovery ir;
    ir.snp = data.genotypes.snp_names[j];
    ir.masked = masked[j];
    if (masked[j] > 0 && !states.empty()) {
      ir.correct_frequency = static_cast<double>(correct[j]) / static_cast<double>(masked[j] * states.size());
    }
    r.imputation.push_back(ir);
  }
  return r;
}

std::string format_recovery_csv(const RecoveryReport& r) {
  std::string out = "parameter,truth,mean,deviation,lower,upper,covered\n";
  for (const auto& p : r.parameters) {
    out += p.name + "," + io::format_double(p.truth) + "," + io::format_double(p.mean) + "," +
           io::format_double(p.deviation()) + "," + io::format_double(p.hpd.lower) + "," +
           io::format_double(p.hpd.upper) + "," + (p.covered() ? "1" : "0") + "\n";
  }
  return out;
}

std::string format_imputation_recovery_csv(const RecoveryReport& r) {
  std::string out = "snp,masked,correct_frequency\n";
  for (const auto& i : r.imputation) {
    out += i.snp + "," + std::to_string(i.masked) + "," +
           (i.correct_frequency ? io::format_double(*i.correct_frequency) : std::string("n/a")) + "\n";
  }
  return out;
}

}  // namespace bamd::simulator
