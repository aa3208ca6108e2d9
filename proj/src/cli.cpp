#include "bamd/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "bamd/em.hpp"
#include "bamd/errors.hpp"
#include "bamd/gibbs.hpp"
#include "bamd/io.hpp"
#include "bamd/linalg.hpp"
#include "bamd/model.hpp"
#include "bamd/pedigree.hpp"
#include "bamd/selector.hpp"
#include "bamd/simulator.hpp"

namespace bamd::cli {

namespace fs = std::filesystem;
using Eigen::Index;

void Manifest::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void Manifest::note(const std::string& key, const std::string& value) { notes_.emplace_back(key, value); }

std::string Manifest::header() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += "# " + k + "=" + v + "\n";
  for (const auto& [k, v] : notes_) out += "# " + k + "=" + v + "\n";
  return out;
}

std::string Manifest::ini() const {
  std::string out;
  for (const auto& [k, v] : notes_) out += "# " + k + "=" + v + "\n";
  for (const auto& [k, v] : entries_) {
    if (k == "command") continue;
    out += k + "=" + v + "\n";
  }
  return out;
}

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::vector<std::string> files;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (args[k] == "--config") {
      if (k + 1 >= args.size()) throw UsageError("--config needs a file");
      files.push_back(args[++k]);
    } else if (args[k].rfind("--config=", 0) == 0) {
      files.push_back(args[k].substr(9));
    } else {
      rest.push_back(args[k]);
    }
  }
  if (files.empty()) return rest;

  std::set<std::string> given;
  for (const auto& a : rest) {
    if (a.rfind("--", 0) != 0) continue;
    given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  }
  // Program name and subcommand stay first; file flags go before user flags.
  std::vector<std::string> out(rest.begin(), rest.begin() + std::min<std::size_t>(2, rest.size()));
  for (const auto& f : files) {
    std::istringstream in(io::read_file(f));
    std::string line;
    while (std::getline(in, line)) {
      const std::string t(io::trim(line));
      if (t.empty() || t[0] == '#' || t[0] == '[') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw UsageError(f + ": expected key=value, got: " + t);
      const std::string key(io::trim(std::string_view(t).substr(0, eq)));
      const std::string value(io::trim(std::string_view(t).substr(eq + 1)));
      if (given.count(key) || value.empty() || value == "false") continue;
      given.insert(key);
      out.push_back("--" + key);
      if (value != "true") out.push_back(value);
    }
  }
  out.insert(out.end(), rest.begin() + std::min<std::size_t>(2, rest.size()), rest.end());
  return out;
}

namespace {

struct DataOptions {
  std::string genotypes;
  std::string phenotypes;
  std::string pedigree;
  std::string kinship = "pedigree";
  std::string kinship_file;
  std::string coding = "signed";
};

struct ChainOptions {
  std::size_t iters = 50000;
  std::size_t burnin = 10000;
  std::size_t thin = 4;
  std::uint64_t seed = 1;
  std::size_t chains = 1;
  double prior_a = 2.0;
  double prior_b = 1.0;
  double prior_c = 2.0;
  double prior_d = 1.0;
  std::string imputation_prior = "uniform";
  std::string imputation_weights;
  std::string sweep = "single";
  std::string imputation_likelihood = "printed";
  std::size_t refresh_period = 200;
  double level = 0.95;
};

struct SearchOptions {
  double mixture_prob = 0.5;
  std::size_t search_iters = 1000;
  std::size_t window = 2000;
  bool exhaustive = false;
  std::vector<std::string> candidates;
  std::string samples;
  std::string imputations;
};

void add_data_options(CLI::App* app, DataOptions& o) {
  app->add_option("--genotypes", o.genotypes, "Genotype CSV (id column then one column per SNP)");
  app->add_option("--phenotypes", o.phenotypes, "Phenotype CSV: id,value[,family]");
  app->add_option("--pedigree", o.pedigree, "Pedigree CSV: id,sire,dam");
  app->add_option("--kinship", o.kinship, "Residual correlation source")
      ->check(CLI::IsMember({"pedigree", "identity", "file"}));
  app->add_option("--kinship-file", o.kinship_file, "Relationship matrix CSV for --kinship file");
  app->add_option("--coding", o.coding, "SNP coding")->check(CLI::IsMember({"signed", "additive-dominance", "ad"}));
}

void add_chain_options(CLI::App* app, ChainOptions& o) {
  app->add_option("--iters", o.iters, "Total Gibbs iterations");
  app->add_option("--burnin", o.burnin, "Burn-in iterations");
  app->add_option("--thin", o.thin, "Thinning interval");
  app->add_option("--seed", o.seed, "Random seed");
  app->add_option("--chains", o.chains, "Independent chains")->check(CLI::PositiveNumber);
  app->add_option("--prior-a", o.prior_a, "sigma^2 ~ IG(a, b)");
  app->add_option("--prior-b", o.prior_b);
  app->add_option("--prior-c", o.prior_c, "phi^2 ~ IG(c, d)");
  app->add_option("--prior-d", o.prior_d);
  app->add_option("--imputation-prior", o.imputation_prior)->check(CLI::IsMember({"uniform", "file"}));
  app->add_option("--imputation-weights", o.imputation_weights, "CSV id,snp,p_minus,p_het,p_plus");
  app->add_option("--sweep", o.sweep, "Imputed SNP columns per iteration")->check(CLI::IsMember({"single", "all"}));
  app->add_option("--imputation-likelihood", o.imputation_likelihood,
                  "printed: per-individual residual; kinship: R^-1 weighted residual")
      ->check(CLI::IsMember({"printed", "kinship"}));
  app->add_option("--refresh-period", o.refresh_period, "Rank-one updates between exact re-inversions");
  app->add_option("--level", o.level, "HPD interval level");
}

void add_search_options(CLI::App* app, SearchOptions& o) {
  app->add_option("--mixture-prob", o.mixture_prob, "Probability of a single-bit flip proposal");
  app->add_option("--search-iters", o.search_iters, "Metropolis-Hastings steps");
  app->add_option("--window", o.window, "States per Bayes factor estimate");
  app->add_flag("--exhaustive", o.exhaustive, "Evaluate every subset of the candidates");
  app->add_option("--candidates", o.candidates, "SNP names or 1-based indices, or 'significant'")->delimiter(',');
  app->add_option("--samples", o.samples, "Recorded sample CSV (offline mode)");
  app->add_option("--imputations", o.imputations, "Recorded imputation CSV (offline mode)");
}

// Every option of the subcommand that was parsed, in declaration order.
Manifest manifest_from(const CLI::App* app) {
  Manifest m;
  m.set("command", app->get_name());
  for (const auto* o : app->get_options()) {
    if (o->get_lnames().empty()) continue;
    const auto& name = o->get_lnames().front();
    if (name == "help" || name == "out-dir" || name == "config") continue;
    std::string value;
    if (o->get_expected_min() == 0) {
      value = o->count() ? "true" : "false";
    } else if (o->count()) {
      for (const auto& r : o->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = o->get_default_str();
      if (value == "{}") value.clear();
    }
    m.set(name, value);
  }
  m.note("version", std::string("bamd ") + kVersion);
  return m;
}

void note_digest(Manifest& m, const std::string& key, const std::string& path) {
  if (!path.empty()) m.note("sha256." + key, io::sha256_file(path));
}

void write_output(const fs::path& dir, const std::string& name, const Manifest& m, const std::string& body) {
  io::write_file(dir / name, m.header() + body);
}

void warn(const std::string& msg) { std::cerr << "bamd: warning: " << msg << "\n"; }

model::Dataset load_dataset(const DataOptions& o, Manifest& m) {
  if (o.genotypes.empty()) throw UsageError("--genotypes is required");
  if (o.phenotypes.empty()) throw UsageError("--phenotypes is required");
  note_digest(m, "genotypes", o.genotypes);
  note_digest(m, "phenotypes", o.phenotypes);
  const auto encoded = model::encode_genotypes(model::read_genotype_csv(o.genotypes));
  for (const auto& w : encoded.warnings) warn(w);
  const auto pheno = model::read_phenotype_csv(o.phenotypes);

  pedigree::RelationshipMatrix kinship = pedigree::RelationshipMatrix::identity(encoded.genotypes.ids);
  if (o.kinship == "pedigree") {
    if (o.pedigree.empty()) throw UsageError("--kinship pedigree needs --pedigree (or use --kinship identity)");
    note_digest(m, "pedigree", o.pedigree);
    const auto records = pedigree::read_pedigree_csv(o.pedigree);
    kinship = pedigree::build_numerator_matrix(pedigree::order_pedigree(records));
  } else if (o.kinship == "file") {
    if (o.kinship_file.empty()) throw UsageError("--kinship file needs --kinship-file");
    note_digest(m, "kinship", o.kinship_file);
    kinship = pedigree::read_relationship_csv(o.kinship_file);
  }
  auto data = model::assemble_dataset(encoded, pheno, kinship, model::parse_coding(o.coding));
  const auto report = model::validate_dataset(data);
  for (const auto& w : report.warnings) warn(w);
  model::require_valid(report);
  return data;
}

model::PriorHyperparams priors_from(const ChainOptions& o) {
  model::PriorHyperparams p{o.prior_a, o.prior_b, o.prior_c, o.prior_d};
  p.validate();
  return p;
}

gibbs::GibbsConfig gibbs_config_from(const ChainOptions& o, const model::Dataset& data, Manifest& m) {
  gibbs::GibbsConfig c;
  c.total_iterations = o.iters;
  c.burn_in = o.burnin;
  c.thinning = o.thin;
  c.seed = o.seed;
  c.refresh_period = o.refresh_period;
  c.sweep = o.sweep == "all" ? gibbs::SweepMode::AllColumns : gibbs::SweepMode::SingleColumn;
  c.likelihood = o.imputation_likelihood == "kinship" ? gibbs::ImputationLikelihood::KinshipWeighted
                                                      : gibbs::ImputationLikelihood::Printed;
  if (o.imputation_prior == "file") {
    if (o.imputation_weights.empty()) throw UsageError("--imputation-prior file needs --imputation-weights");
    note_digest(m, "imputation-weights", o.imputation_weights);
    c.imputation_prior = model::read_imputation_weights(o.imputation_weights, data.genotypes);
  }
  if (o.refresh_period == 0) throw UsageError("--refresh-period must be at least 1");
  if (!(o.level > 0.0 && o.level < 1.0)) throw UsageError("--level must lie in (0, 1)");
  c.validate();
  return c;
}

std::vector<gibbs::PosteriorSamples> run_all_chains(const model::Dataset& data, const model::PriorHyperparams& priors,
                                                    const gibbs::GibbsConfig& cfg, std::size_t chains) {
  if (chains == 1) return {gibbs::run_chain(data, priors, cfg)};
  return gibbs::run_chains(data, priors, cfg, chains);
}

std::string format_summary_csv(std::span<const gibbs::ParameterSummary> rows, const model::Dataset& data) {
  std::vector<std::string> labels = data.design_names;
  for (const auto& g : data.gamma_names()) labels.push_back(g);
  labels.emplace_back("sigma2");
  labels.emplace_back("phi2");
  std::string out = "parameter,label,mean,lower,upper,level,significant\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    out += r.name + "," + labels[k] + "," + io::format_double(r.mean) + "," + io::format_double(r.hpd.lower) + "," +
           io::format_double(r.hpd.upper) + "," + io::format_double(r.hpd.level) + "," + (r.significant ? "1" : "0") +
           "\n";
  }
  return out;
}

// Per-SNP effect intervals for plotting, one row per design column.
std::string format_intervals_csv(std::span<const gibbs::ParameterSummary> rows, const model::Dataset& data) {
  std::string out = "index,snp,term,lower,mean,upper,significant\n";
  const auto names = data.gamma_names();
  const Index p = data.p();
  for (Index k = 0; k < data.gamma_size(); ++k) {
    const auto& r = rows[static_cast<std::size_t>(p + k)];
    const auto snp = data.genotypes.snp_names[data.snp_of_gamma(k)];
    std::string term = "effect";
    if (data.coding == model::Coding::AdditiveDominance) term = k % 2 == 0 ? "additive" : "dominance";
    out += std::to_string(k + 1) + "," + snp + "," + term + "," + io::format_double(r.hpd.lower) + "," +
           io::format_double(r.mean) + "," + io::format_double(r.hpd.upper) + "," + (r.significant ? "1" : "0") + "\n";
  }
  return out;
}

std::string format_autocorrelation_csv(const std::vector<gibbs::PosteriorSamples>& chains, const model::Dataset& data) {
  constexpr std::size_t kLags = 20;
  std::string out = "chain,parameter";
  for (std::size_t l = 1; l <= kLags; ++l) out += ",lag_" + std::to_string(l);
  out += "\n";
  const auto names = gibbs::parameter_names(data);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (Index k = 0; k < static_cast<Index>(names.size()); ++k) {
      const auto x = gibbs::parameter_trace(chains[c].states, k, data.p(), data.gamma_size());
      out += std::to_string(c) + "," + names[k];
      for (double r : gibbs::autocorrelations(x, kLags)) out += "," + io::format_double(r);
      out += "\n";
    }
  }
  return out;
}

std::string format_diagnostics_csv(const std::vector<gibbs::PosteriorSamples>& chains) {
  std::string out = "chain,retained,cache_refreshes,cache_fallbacks,drift_violations,final_drift\n";
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& d = chains[c].diagnostics;
    out += std::to_string(c) + "," + std::to_string(chains[c].retained_count) + "," + std::to_string(d.cache_refreshes) +
           "," + std::to_string(d.cache_fallbacks) + "," + std::to_string(d.drift_violations) + "," +
           io::format_double(d.final_drift) + "\n";
  }
  return out;
}

void write_chain_files(const fs::path& dir, const Manifest& m, const model::Dataset& data,
                       const gibbs::PosteriorSamples& ps, std::size_t chain) {
  const auto tag = "_chain" + std::to_string(chain) + ".csv";
  write_output(dir, "samples" + tag, m, gibbs::format_samples_csv(ps.states, data.p(), data.gamma_size()));
  write_output(dir, "imputations" + tag, m, gibbs::format_imputations_csv(ps.states, data.genotypes, ps.missing_cells));
}

std::vector<gibbs::RetainedState> pooled(const std::vector<gibbs::PosteriorSamples>& chains) {
  std::vector<gibbs::RetainedState> all;
  for (const auto& c : chains) all.insert(all.end(), c.states.begin(), c.states.end());
  return all;
}

int cmd_run(const CLI::App* app, const DataOptions& dopt, const ChainOptions& copt, const std::string& out_dir) {
  Manifest m = manifest_from(app);
  const auto data = load_dataset(dopt, m);
  const auto priors = priors_from(copt);
  const auto cfg = gibbs_config_from(copt, data, m);
  const fs::path dir(out_dir);

  const auto chains = run_all_chains(data, priors, cfg, copt.chains);
  for (std::size_t c = 0; c < chains.size(); ++c) write_chain_files(dir, m, data, chains[c], c);
  const auto all = pooled(chains);
  const auto summary = gibbs::summarize(all, data, copt.level);
  write_output(dir, "summary.csv", m, format_summary_csv(summary, data));
  write_output(dir, "intervals.csv", m, format_intervals_csv(summary, data));
  write_output(dir, "autocorrelation.csv", m, format_autocorrelation_csv(chains, data));
  write_output(dir, "diagnostics.csv", m, format_diagnostics_csv(chains));
  io::write_file(dir / "manifest.ini", m.ini());

  std::size_t significant = 0;
  for (Index k = 0; k < data.gamma_size(); ++k) significant += summary[static_cast<std::size_t>(data.p() + k)].significant;
  std::cout << "retained " << all.size() << " states over " << chains.size() << " chain(s); " << significant << " of "
            << data.gamma_size() << " SNP effects significant at level " << io::format_double(copt.level) << "\n";
  return kOk;
}

std::vector<Index> resolve_candidates(const std::vector<std::string>& tokens, const model::Dataset& data,
                                      std::span<const gibbs::RetainedState> states, double level) {
  std::vector<Index> out;
  const Index s = data.snp_count();
  for (const auto& tok : tokens) {
    if (tok == "significant") {
      if (states.empty()) throw UsageError("--candidates significant needs retained states");
      const auto summary = gibbs::summarize(states, data, level);
      for (Index k = 0; k < data.gamma_size(); ++k) {
        if (summary[static_cast<std::size_t>(data.p() + k)].significant) out.push_back(data.snp_of_gamma(k));
      }
      continue;
    }
    const auto& names = data.genotypes.snp_names;
    auto it = std::find(names.begin(), names.end(), tok);
    if (it != names.end()) {
      out.push_back(static_cast<Index>(it - names.begin()));
      continue;
    }
    Index idx = 0;
    try {
      idx = static_cast<Index>(io::parse_int(tok, "--candidates"));
    } catch (const DataError&) {
      throw UsageError("unknown candidate SNP: " + tok);
    }
    if (idx < 1 || idx > s) throw UsageError("candidate index out of range: " + tok);
    out.push_back(idx - 1);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool needs_states(const std::vector<std::string>& tokens) {
  return std::find(tokens.begin(), tokens.end(), "significant") != tokens.end();
}

int cmd_select(const CLI::App* app, const DataOptions& dopt, const ChainOptions& copt, const SearchOptions& sopt,
               const std::string& out_dir) {
  Manifest m = manifest_from(app);
  const auto data = load_dataset(dopt, m);
  const fs::path dir(out_dir);
  const auto cells = data.genotypes.missing_cells();
  if (!(copt.level > 0.0 && copt.level < 1.0)) throw UsageError("--level must lie in (0, 1)");

  std::vector<gibbs::RetainedState> states;
  const bool recorded = !sopt.samples.empty();
  if (recorded) {
    note_digest(m, "samples", sopt.samples);
    note_digest(m, "imputations", sopt.imputations);
    states = gibbs::read_recorded_states(sopt.samples, sopt.imputations, data.p(), data.gamma_size(), data.genotypes);
  } else if (!sopt.imputations.empty()) {
    throw UsageError("--imputations is only meaningful with --samples");
  }

  selector::SearchConfig scfg;
  scfg.mixture_prob = sopt.mixture_prob;
  scfg.search_iterations = sopt.search_iters;
  scfg.seed = copt.seed;
  scfg.min_samples_per_bf = sopt.window;
  scfg.validate();

  const bool live = !recorded && !sopt.exhaustive && !needs_states(sopt.candidates);
  if (!recorded && !live) {
    const auto priors = priors_from(copt);
    const auto cfg = gibbs_config_from(copt, data, m);
    auto ps = gibbs::run_chain(data, priors, cfg);
    write_chain_files(dir, m, data, ps, 0);
    states = std::move(ps.states);
  }
  const auto candidates = resolve_candidates(sopt.candidates, data, states, copt.level);
  const bool restricted = !sopt.candidates.empty();

  if (sopt.exhaustive) {
    std::vector<Index> cand = candidates;
    if (!restricted) {
      for (Index j = 0; j < data.snp_count(); ++j) cand.push_back(j);
    }
    const auto ranked = selector::exhaustive_search(data, states, cells, cand);
    if (ranked.empty()) throw NumericalError("no model had a valid Bayes factor estimate");
    write_output(dir, "ranked_models.csv", m, selector::format_ranked_csv(ranked, data));
    write_output(dir, "best_model.csv", m,
                 selector::format_best_model_csv(ranked.front().delta, ranked.front().estimate.log_value, data));
    io::write_file(dir / "manifest.ini", m.ini());
    std::cout << "evaluated " << ranked.size() << " models; best " << selector::to_bitstring(ranked.front().delta)
              << " log BF " << io::format_double(ranked.front().estimate.log_value) << "\n";
    return kOk;
  }

  scfg.candidates = candidates;
  if (restricted && candidates.empty()) warn("no candidate SNPs; the search only visits the empty model");
  selector::SearchTrace trace;
  if (live) {
    const auto priors = priors_from(copt);
    const auto cfg = gibbs_config_from(copt, data, m);
    selector::LiveSelector sel(data, scfg, cfg.retained_count(), cells);
    auto ps = gibbs::run_chain(data, priors, cfg, sel.sink());
    trace = sel.finish();
    write_chain_files(dir, m, data, ps, 0);
  } else {
    if (restricted && candidates.empty()) {
      scfg.candidates.clear();
    }
    trace = selector::mh_model_search(data, states, cells, scfg);
  }
  if (trace.visited.empty()) throw NumericalError("every proposal failed Bayes factor estimation");
  write_output(dir, "trace.csv", m, selector::format_trace_csv(trace));
  write_output(dir, "best_model.csv", m, selector::format_best_model_csv(trace.best, trace.best_log_bf, data));
  io::write_file(dir / "manifest.ini", m.ini());
  std::cout << "search steps " << trace.visited.size() << " (skipped " << trace.skipped << "); best "
            << selector::to_bitstring(trace.best) << " log BF " << io::format_double(trace.best_log_bf) << "\n";
  return kOk;
}

int cmd_kinship(const CLI::App* app, const DataOptions& dopt, const std::string& out_dir) {
  Manifest m = manifest_from(app);
  if (dopt.pedigree.empty()) throw UsageError("--pedigree is required");
  note_digest(m, "pedigree", dopt.pedigree);
  const auto ordered = pedigree::order_pedigree(pedigree::read_pedigree_csv(dopt.pedigree));
  auto a = pedigree::build_numerator_matrix(ordered);
  if (!dopt.genotypes.empty()) {
    note_digest(m, "genotypes", dopt.genotypes);
    const auto raw = model::read_genotype_csv(dopt.genotypes);
    a = pedigree::extract_submatrix(a, raw.ids);
  }
  if (!pedigree::is_positive_definite(a.values())) throw NumericalError("relationship matrix is not positive definite");
  const fs::path dir(out_dir);
  write_output(dir, "kinship.csv", m, pedigree::format_relationship_csv(a));
  io::write_file(dir / "manifest.ini", m.ini());
  std::cout << "wrote " << a.dim() << "x" << a.dim() << " relationship matrix\n";
  return kOk;
}

int cmd_em(const CLI::App* app, const DataOptions& dopt, const em::EmConfig& cfg, const std::string& out_dir) {
  Manifest m = manifest_from(app);
  const auto data = load_dataset(dopt, m);
  if (!(cfg.tolerance > 0.0)) throw UsageError("--tol must be positive");
  const auto r = em::run_em(data, cfg);
  for (const auto& w : r.warnings) warn(w);
  const fs::path dir(out_dir);
  write_output(dir, "em_log.csv", m, em::format_em_log(r));
  write_output(dir, "em_estimates.csv", m, em::format_em_estimates(r, data));
  io::write_file(dir / "manifest.ini", m.ini());
  std::cout << (r.converged ? "converged" : "stopped") << " after " << r.log.size() << " iteration(s)\n";
  return kOk;
}

int cmd_simulate(const CLI::App* app, const std::string& design_name, std::uint64_t seed,
                 std::optional<std::uint64_t> gamma_seed, double missing, const std::string& out_dir) {
  Manifest m = manifest_from(app);
  const auto design = simulator::named_design(design_name, gamma_seed.value_or(seed));
  const auto sim = simulator::simulate_dataset(design, seed);
  const auto masked = simulator::apply_missingness(sim.dataset, missing, seed);
  const fs::path dir(out_dir);
  write_output(dir, "genotypes.csv", m, model::format_genotype_csv(simulator::genotype_table(masked)));
  write_output(dir, "phenotypes.csv", m, model::format_phenotype_csv(simulator::phenotype_table(sim, masked)));
  if (design.kinship_mode == simulator::KinshipMode::Pedigree) {
    std::string body = "id,sire,dam\n";
    for (const auto& r : sim.pedigree) body += r.id + "," + r.sire.value_or("") + "," + r.dam.value_or("") + "\n";
    write_output(dir, "pedigree.csv", m, body);
  } else if (design.kinship_mode == simulator::KinshipMode::Equicorrelation) {
    write_output(dir, "kinship.csv", m, pedigree::format_relationship_csv(masked.kinship));
  }
  write_output(dir, "truth.txt", m, simulator::format_truth(sim.truth));
  io::write_file(dir / "manifest.ini", m.ini());
  std::cout << "simulated " << masked.n() << " individuals x " << masked.snp_count() << " SNPs, "
            << masked.genotypes.missing_count() << " masked cells (" << simulator::to_string(design.kinship_mode)
            << " kinship)\n";
  return kOk;
}

int cmd_bench(const CLI::App* app, const std::vector<Index>& sizes, Index n, int reps, std::uint64_t seed,
              const std::string& out_dir) {
  Manifest m = manifest_from(app);
  if (reps < 1) throw UsageError("--reps must be at least 1");
  std::string body = "s,n,update_seconds,dense_seconds,speedup\n";
  for (Index s : sizes) {
    if (s < 1) throw UsageError("bench sizes must be positive");
    const Index rows = n > 0 ? n : 2 * s;
    const auto row = linalg::bench_column_update(s, rows, reps, seed);
    body += std::to_string(row.s) + "," + std::to_string(row.n) + "," + io::format_double(row.update_seconds) + "," +
            io::format_double(row.dense_seconds) + "," + io::format_double(row.dense_seconds / row.update_seconds) + "\n";
    std::cout << "s=" << row.s << " update " << row.update_seconds << " s, dense " << row.dense_seconds << " s\n";
  }
  const fs::path dir(out_dir);
  write_output(dir, "bench.csv", m, body);
  io::write_file(dir / "manifest.ini", m.ini());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& raw_args) {
  try {
    const auto args = expand_config(raw_args);
    CLI::App app{"Bayesian association with missing genotype data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("bamd ") + kVersion);

    DataOptions dopt;
    ChainOptions copt;
    SearchOptions sopt;
    em::EmConfig ecfg;
    std::string out_dir = ".";
    std::string config_file;
    std::string design = "table1";
    std::uint64_t sim_seed = 1;
    std::uint64_t gamma_seed = 0;
    double missing = 0.0;
    std::vector<Index> sizes{16, 32, 64, 128, 256};
    Index bench_n = 0;
    int reps = 5;
    std::uint64_t bench_seed = 1;

    auto common = [&](CLI::App* sub) {
      sub->option_defaults()->always_capture_default();
      sub->add_option("--config", config_file, "key=value file; command-line flags take precedence");
      sub->add_option("--out-dir", out_dir, "Output directory");
    };

    auto* run_cmd = app.add_subcommand("run", "Run the Gibbs sampler and write samples and intervals");
    common(run_cmd);
    add_data_options(run_cmd, dopt);
    add_chain_options(run_cmd, copt);

    auto* select_cmd = app.add_subcommand("select", "Bayes-factor model search over SNP subsets");
    common(select_cmd);
    add_data_options(select_cmd, dopt);
    add_chain_options(select_cmd, copt);
    add_search_options(select_cmd, sopt);

    auto* kinship_cmd = app.add_subcommand("kinship", "Numerator relationship matrix from a pedigree");
    common(kinship_cmd);
    kinship_cmd->add_option("--pedigree", dopt.pedigree, "Pedigree CSV: id,sire,dam");
    kinship_cmd->add_option("--genotypes", dopt.genotypes, "Restrict to the individuals of this genotype file");

    auto* em_cmd = app.add_subcommand("em", "Maximum-likelihood fit by EM over missing genotypes");
    common(em_cmd);
    DataOptions em_data;
    em_data.kinship = "identity";
    add_data_options(em_cmd, em_data);
    em_cmd->add_option("--tol", ecfg.tolerance, "Relative parameter change for convergence");
    em_cmd->add_option("--max-iter", ecfg.max_iterations);
    em_cmd->add_option("--cap", ecfg.e_step.cap, "Largest exact enumeration per individual");
    em_cmd->add_option("--mc-samples", ecfg.e_step.mc_samples, "Gibbs draws per individual above the cap");
    em_cmd->add_option("--seed", ecfg.seed);

    auto* sim_cmd = app.add_subcommand("simulate", "Write a simulated dataset and its truth record");
    common(sim_cmd);
    sim_cmd->add_option("--design", design)->check(CLI::IsMember({"table1", "figure1", "figure2"}));
    sim_cmd->add_option("--seed", sim_seed);
    sim_cmd->add_option("--gamma-seed", gamma_seed, "Seed for random effect sizes (default: --seed)");
    sim_cmd->add_option("--missing", missing, "Fraction of genotype cells to mask");

    auto* bench_cmd = app.add_subcommand("bench", "Time rank-one inverse updates against dense re-inversion");
    common(bench_cmd);
    bench_cmd->add_option("--sizes", sizes, "Numbers of SNPs")->delimiter(',');
    bench_cmd->add_option("--n", bench_n, "Individuals (default 2s)");
    bench_cmd->add_option("--reps", reps);
    bench_cmd->add_option("--seed", bench_seed);

    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    try {
      app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::cerr << "bamd: error: " << e.what() << "\n";
      return kUsage;
    }

    if (run_cmd->parsed()) return cmd_run(run_cmd, dopt, copt, out_dir);
    if (select_cmd->parsed()) return cmd_select(select_cmd, dopt, copt, sopt, out_dir);
    if (kinship_cmd->parsed()) return cmd_kinship(kinship_cmd, dopt, out_dir);
    if (em_cmd->parsed()) return cmd_em(em_cmd, em_data, ecfg, out_dir);
    if (sim_cmd->parsed()) {
      const auto gs = sim_cmd->get_option("--gamma-seed")->count() ? std::optional<std::uint64_t>(gamma_seed) : std::nullopt;
      return cmd_simulate(sim_cmd, design, sim_seed, gs, missing, out_dir);
    }
    if (bench_cmd->parsed()) return cmd_bench(bench_cmd, sizes, bench_n, reps, bench_seed, out_dir);
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "bamd: usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "bamd: data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "bamd: numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "bamd: error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace bamd::cli
