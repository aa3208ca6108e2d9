#include "bamd/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bamd/errors.hpp"
#include "bamd/io.hpp"

namespace bamd::selector {

ModelIndicator full_model(Index s) { return ModelIndicator(static_cast<std::size_t>(s), 1); }

bool is_full_model(const ModelIndicator& delta) {
  return std::all_of(delta.begin(), delta.end(), [](auto b) { return b != 0; });
}

std::string to_bitstring(const ModelIndicator& delta) {
  std::string s;
  s.reserve(delta.size());
  for (auto b : delta) s.push_back(b ? '1' : '0');
  return s;
}

ModelIndicator parse_bitstring(std::string_view bits, Index s) {
  if (static_cast<Index>(bits.size()) != s) throw UsageError("model bitstring has the wrong length");
  ModelIndicator out;
  for (char c : bits) {
    if (c != '0' && c != '1') throw UsageError("model bitstring must contain only 0 and 1");
    out.push_back(c == '1');
  }
  return out;
}

std::vector<Index> excluded_columns(const ModelIndicator& delta, model::Coding coding) {
  const Index w = model::design_width(coding);
  std::vector<Index> cols;
  for (std::size_t j = 0; j < delta.size(); ++j) {
    if (delta[j]) continue;
    for (Index k = 0; k < w; ++k) cols.push_back(static_cast<Index>(j) * w + k);
  }
  return cols;
}

StateSnapshot make_snapshot(const model::Dataset& data, const MatrixXd& design, const gibbs::RetainedState& st) {
  StateSnapshot s;
  s.sigma2 = st.sigma2;
  s.phi2 = st.phi2;
  s.gamma = st.gamma;
  s.gram = design.transpose() * design;
  const VectorXd c = data.phenotypes - data.design * st.beta - design * st.gamma;
  s.cross = design.transpose() * c;
  return s;
}

StateSnapshot make_snapshot(const model::Dataset& data, const gibbs::RetainedState& st,
                            const std::vector<std::pair<Index, Index>>& cells) {
  const auto codes = gibbs::state_codes(data.genotypes, cells, st.imputed);
  return make_snapshot(data, model::snp_design(codes, data.coding), st);
}

namespace {

MatrixXd select_columns(const MatrixXd& m, const std::vector<Index>& cols) {
  MatrixXd out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = m.col(cols[k]);
  return out;
}

struct ReducedParts {
  MatrixXd zc;
  VectorXd gamma_c;
  VectorXd c_delta;
};

ReducedParts reduced_parts(const model::Dataset& data, const MatrixXd& design, const gibbs::RetainedState& st,
                           const std::vector<Index>& cols) {
  ReducedParts p;
  p.zc = select_columns(design, cols);
  p.gamma_c.resize(static_cast<Index>(cols.size()));
  VectorXd gamma_delta = st.gamma;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    p.gamma_c[static_cast<Index>(k)] = st.gamma[cols[k]];
    gamma_delta[cols[k]] = 0.0;
  }
  p.c_delta = data.phenotypes - data.design * st.beta - design * gamma_delta;
  return p;
}

// log |G|^{1/2} and C' P C, or nullopt for a singular Gram matrix.
std::optional<std::pair<double, double>> projection_terms(const MatrixXd& zc, const VectorXd& c) {
  const MatrixXd gram = zc.transpose() * zc;
  Eigen::FullPivLU<MatrixXd> lu(gram);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) return std::nullopt;
  const MatrixXd proj = zc * lu.inverse() * zc.transpose();
  const double det = gram.determinant();
  if (!(det > 0.0)) return std::nullopt;
  return std::make_pair(0.5 * std::log(det), c.dot(proj * c));
}

}  // namespace

std::optional<double> log_g_weight(const model::Dataset& data, const MatrixXd& design,
                                   const gibbs::RetainedState& st, const ModelIndicator& delta) {
  const auto cols = excluded_columns(delta, data.coding);
  if (cols.empty()) throw UsageError("g weight needs at least one excluded SNP");
  const auto parts = reduced_parts(data, design, st, cols);
  const auto terms = projection_terms(parts.zc, parts.c_delta);
  if (!terms) return std::nullopt;
  const double d = static_cast<double>(cols.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * st.sigma2) + terms->first - terms->second / (2.0 * st.sigma2);
}

std::optional<double> bf_sample_term(const model::Dataset& data, const MatrixXd& design,
                                     const gibbs::RetainedState& st, const ModelIndicator& delta) {
  const auto cols = excluded_columns(delta, data.coding);
  if (cols.empty()) return 0.0;
  const auto parts = reduced_parts(data, design, st, cols);
  const auto terms = projection_terms(parts.zc, parts.c_delta);
  if (!terms) return std::nullopt;
  const double d = static_cast<double>(cols.size());
  return 0.5 * d * std::log(st.phi2) + terms->first +
         (parts.gamma_c.squaredNorm() / st.phi2 - terms->second) / (2.0 * st.sigma2);
}

std::optional<double> bf_sample_term(const StateSnapshot& snap, const ModelIndicator& delta, model::Coding coding) {
  const auto cols = excluded_columns(delta, coding);
  if (cols.empty()) return 0.0;
  const auto d = static_cast<Index>(cols.size());
  MatrixXd g(d, d);
  VectorXd gamma_c(d);
  VectorXd h(d);
  for (Index a = 0; a < d; ++a) {
    gamma_c[a] = snap.gamma[cols[a]];
    h[a] = snap.cross[cols[a]];
    for (Index b = 0; b < d; ++b) g(a, b) = snap.gram(cols[a], cols[b]);
  }
  // Z_c' C_delta = Z_c'(C_full + Z_c gamma_c).
  const VectorXd rhs = h + g * gamma_c;
  Eigen::LLT<MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const VectorXd diag = llt.matrixLLT().diagonal();
  const double lo = diag.cwiseAbs2().minCoeff();
  const double hi = diag.cwiseAbs2().maxCoeff();
  if (!(lo > 1e-12 * hi)) return std::nullopt;
  const double log_det_half = diag.array().log().sum();
  const VectorXd w = llt.matrixL().solve(rhs);
  return 0.5 * static_cast<double>(d) * std::log(snap.phi2) + log_det_half +
         (gamma_c.squaredNorm() / snap.phi2 - w.squaredNorm()) / (2.0 * snap.sigma2);
}

double BayesFactorEstimate::value() const { return std::exp(log_value); }

double BayesFactorEstimate::invalid_rate() const {
  const auto total = sample_count + invalid_count;
  return total == 0 ? 0.0 : static_cast<double>(invalid_count) / static_cast<double>(total);
}

void BayesFactorAccumulator::add(std::optional<double> log_term) {
  if (!log_term || !std::isfinite(*log_term)) {
    ++invalid_;
    return;
  }
  const double t = *log_term;
  if (t > max_) {
    scaled_sum_ = scaled_sum_ * std::exp(max_ - t) + 1.0;
    max_ = t;
  } else {
    scaled_sum_ += std::exp(t - max_);
  }
  ++count_;
  const double delta = t - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (t - mean_);
}

BayesFactorEstimate BayesFactorAccumulator::finish() const {
  if (count_ == 0) throw NumericalError("Bayes factor estimate has no valid terms");
  BayesFactorEstimate e;
  // All-zero terms give exactly log 1 = 0.
  e.log_value = max_ + std::log(scaled_sum_ / static_cast<double>(count_));
  if (max_ == 0.0 && scaled_sum_ == static_cast<double>(count_)) e.log_value = 0.0;
  e.sample_count = count_;
  e.invalid_count = invalid_;
  e.log_term_mean = mean_;
  e.log_term_var = count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0;
  return e;
}

BayesFactorEstimate estimate_bayes_factor(std::span<const StateSnapshot> snaps, const ModelIndicator& delta,
                                          model::Coding coding) {
  BayesFactorAccumulator acc;
  for (const auto& s : snaps) acc.add(bf_sample_term(s, delta, coding));
  return acc.finish();
}

BayesFactorEstimate estimate_bayes_factor(const model::Dataset& data, std::span<const gibbs::RetainedState> states,
                                          const std::vector<std::pair<Index, Index>>& cells,
                                          const ModelIndicator& delta) {
  BayesFactorAccumulator acc;
  for (const auto& st : states) acc.add(bf_sample_term(make_snapshot(data, st, cells), delta, data.coding));
  return acc.finish();
}

void SearchConfig::validate() const {
  if (!(mixture_prob >= 0.0 && mixture_prob <= 1.0)) throw UsageError("mixture probability must lie in [0, 1]");
  if (min_samples_per_bf == 0) throw UsageError("the Bayes factor window needs at least one state");
}

ModelIndicator propose_model(const ModelIndicator& current, Rng& rng, double mixture_prob,
                             std::span<const Index> candidates) {
  ModelIndicator next = current;
  if (candidates.empty()) return next;
  if (uniform01(rng) < mixture_prob) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    auto& bit = next[static_cast<std::size_t>(candidates[pick(rng)])];
    bit = bit ? 0 : 1;
  } else {
    std::bernoulli_distribution coin(0.5);
    for (Index j : candidates) next[static_cast<std::size_t>(j)] = coin(rng) ? 1 : 0;
  }
  return next;
}

ModelSearch::ModelSearch(Index s, SearchConfig config, Evaluator evaluator)
    : s_(s), config_(std::move(config)), evaluator_(std::move(evaluator)), rng_(make_rng(config_.seed, 0x5e1ec7)) {
  config_.validate();
  if (config_.candidates.empty()) {
    for (Index j = 0; j < s_; ++j) candidates_.push_back(j);
  } else {
    candidates_ = config_.candidates;
    std::sort(candidates_.begin(), candidates_.end());
    candidates_.erase(std::unique(candidates_.begin(), candidates_.end()), candidates_.end());
    for (Index j : candidates_) {
      if (j < 0 || j >= s_) throw UsageError("candidate SNP index out of range");
    }
  }
  current_.assign(static_cast<std::size_t>(s_), 0);
  for (Index j : candidates_) current_[static_cast<std::size_t>(j)] = 1;
  trace_.best = current_;
  trace_.best_log_bf = is_full_model(current_) ? 0.0 : -std::numeric_limits<double>::infinity();
  trace_.window = config_.min_samples_per_bf;
}

void ModelSearch::step(std::size_t window_end) {
  const std::size_t k = steps_++;
  const auto proposed = propose_model(current_, rng_, config_.mixture_prob, candidates_);
  double log_new = 0.0;
  double log_cur = 0.0;
  try {
    log_new = evaluator_(proposed, window_end).log_value;
    log_cur = evaluator_(current_, window_end).log_value;
  } catch (const NumericalError&) {
    ++trace_.skipped;
    return;
  }
  const ModelIndicator incumbent = current_;
  const bool accept = std::log(uniform01(rng_)) < log_new - log_cur;
  if (accept) current_ = proposed;
  trace_.visited.push_back(SearchStep{k, window_end, proposed, log_new, accept, current_});
  if (log_cur > trace_.best_log_bf) {
    trace_.best_log_bf = log_cur;
    trace_.best = incumbent;
  }
  if (log_new > trace_.best_log_bf) {
    trace_.best_log_bf = log_new;
    trace_.best = proposed;
  }
}

StreamingSelector::StreamingSelector(const model::Dataset& data, SearchConfig config, std::size_t total_states,
                                     std::vector<std::pair<Index, Index>> cells)
    : data_(&data),
      config_(config),
      total_(total_states),
      cells_(std::move(cells)),
      search_(data.snp_count(), config, [this](const ModelIndicator& d, std::size_t end) { return evaluate(d, end); }) {}

BayesFactorEstimate StreamingSelector::evaluate(const ModelIndicator& delta, std::size_t window_end) {
  if (window_end != memo_window_) {
    memo_.clear();
    memo_window_ = window_end;
  }
  if (auto it = memo_.find(delta); it != memo_.end()) return it->second;
  ++evaluations_;
  BayesFactorAccumulator acc;
  for (const auto& snap : window_) acc.add(bf_sample_term(snap, delta, data_->coding));
  auto est = acc.finish();
  memo_.emplace(delta, est);
  return est;
}

void StreamingSelector::push(const gibbs::RetainedState& st) {
  window_.push_back(make_snapshot(*data_, st, cells_));
  if (window_.size() > config_.min_samples_per_bf) window_.pop_front();
  const std::size_t k = pushed_++;
  const std::size_t w = config_.min_samples_per_bf;
  if (total_ < w || k + 1 < w) return;
  // Spread the search steps evenly over the windows that fit in the stream.
  const std::size_t windows = total_ - w + 1;
  const std::size_t target = (k - w + 2) * config_.search_iterations / windows;
  while (search_.steps_taken() < target) search_.step(k);
}

SearchTrace StreamingSelector::finish() {
  if (pushed_ == 0) throw UsageError("model search needs at least one retained state");
  while (search_.steps_taken() < config_.search_iterations) search_.step(pushed_ - 1);
  SearchTrace t = search_.trace();
  t.evaluations = evaluations_;
  t.window = window_.size();
  return t;
}

LiveSelector::LiveSelector(const model::Dataset& data, SearchConfig config, std::size_t total_states,
                           std::vector<std::pair<Index, Index>> cells, std::size_t capacity)
    : selector_(data, std::move(config), total_states, std::move(cells)), capacity_(std::max<std::size_t>(capacity, 1)) {
  worker_ = std::thread([this] { consume(); });
}

LiveSelector::~LiveSelector() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  not_empty_.notify_all();
  not_full_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void LiveSelector::push(const gibbs::RetainedState& st) {
  std::unique_lock lock(mutex_);
  not_full_.wait(lock, [this] { return queue_.size() < capacity_ || error_ || closed_; });
  if (error_ || closed_) return;
  queue_.push_back(st);
  not_empty_.notify_one();
}

gibbs::StateSink LiveSelector::sink() {
  return [this](const gibbs::RetainedState& st) { push(st); };
}

void LiveSelector::consume() {
  for (;;) {
    gibbs::RetainedState st;
    {
      std::unique_lock lock(mutex_);
      not_empty_.wait(lock, [this] { return !queue_.empty() || closed_; });
      if (queue_.empty()) return;
      st = std::move(queue_.front());
      queue_.pop_front();
    }
    not_full_.notify_one();
    try {
      selector_.push(st);
    } catch (...) {
      std::lock_guard lock(mutex_);
      error_ = std::current_exception();
      queue_.clear();
      not_full_.notify_all();
      return;
    }
  }
}

SearchTrace LiveSelector::finish() {
  if (finished_) throw Error("live selector already finished");
  finished_ = true;
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  not_empty_.notify_all();
  worker_.join();
  if (error_) std::rethrow_exception(error_);
  return selector_.finish();
}

SearchTrace mh_model_search(const model::Dataset& data, std::span<const gibbs::RetainedState> states,
                            const std::vector<std::pair<Index, Index>>& cells, const SearchConfig& config) {
  StreamingSelector sel(data, config, states.size(), cells);
  for (const auto& st : states) sel.push(st);
  return sel.finish();
}

std::vector<RankedModel> exhaustive_search(const model::Dataset& data, std::span<const gibbs::RetainedState> states,
                                           const std::vector<std::pair<Index, Index>>& cells,
                                           std::span<const Index> candidate_snps) {
  if (candidate_snps.size() > kMaxExhaustiveCandidates) {
    throw UsageError("exhaustive search is limited to " + std::to_string(kMaxExhaustiveCandidates) +
                     " candidate SNPs; use the Metropolis-Hastings search instead");
  }
  const Index s = data.snp_count();
  for (Index j : candidate_snps) {
    if (j < 0 || j >= s) throw UsageError("candidate SNP index out of range");
  }
  const std::size_t models = std::size_t{1} << candidate_snps.size();
  std::vector<ModelIndicator> deltas(models, ModelIndicator(static_cast<std::size_t>(s), 0));
  for (std::size_t m = 0; m < models; ++m) {
    for (std::size_t k = 0; k < candidate_snps.size(); ++k) {
      if (m >> k & 1U) deltas[m][static_cast<std::size_t>(candidate_snps[k])] = 1;
    }
  }
  std::vector<BayesFactorAccumulator> acc(models);
  for (const auto& st : states) {
    const auto snap = make_snapshot(data, st, cells);
    for (std::size_t m = 0; m < models; ++m) acc[m].add(bf_sample_term(snap, deltas[m], data.coding));
  }
  std::vector<RankedModel> out;
  for (std::size_t m = 0; m < models; ++m) {
    if (acc[m].count() == 0) continue;
    out.push_back(RankedModel{deltas[m], acc[m].finish()});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.estimate.log_value > b.estimate.log_value; });
  return out;
}

namespace {

std::string included_names(const ModelIndicator& delta, const model::Dataset& data) {
  std::string out;
  for (std::size_t j = 0; j < delta.size(); ++j) {
    if (!delta[j]) continue;
    if (!out.empty()) out += ";";
    out += data.genotypes.snp_names[j];
  }
  return out;
}

}  // namespace

std::string format_trace_csv(const SearchTrace& trace) {
  std::string out = "step,window_end,proposed,log_bf,accepted,current\n";
  for (const auto& s : trace.visited) {
    out += std::to_string(s.step) + "," + std::to_string(s.window_end) + "," + to_bitstring(s.proposed) + "," +
           io::format_double(s.log_bf) + "," + (s.accepted ? "1" : "0") + "," + to_bitstring(s.current) + "\n";
  }
  return out;
}

std::string format_best_model_csv(const ModelIndicator& best, double log_bf, const model::Dataset& data) {
  return "delta,log_bf,included\n" + to_bitstring(best) + "," + io::format_double(log_bf) + "," +
         included_names(best, data) + "\n";
}

std::string format_ranked_csv(std::span<const RankedModel> ranked, const model::Dataset& data) {
  std::string out = "rank,delta,log_bf,valid_terms,invalid_terms,included\n";
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& m = ranked[r];
    out += std::to_string(r + 1) + "," + to_bitstring(m.delta) + "," + io::format_double(m.estimate.log_value) + "," +
           std::to_string(m.estimate.sample_count) + "," + std::to_string(m.estimate.invalid_count) + "," +
           included_names(m.delta, data) + "\n";
  }
  return out;
}

}  // namespace bamd::selector
