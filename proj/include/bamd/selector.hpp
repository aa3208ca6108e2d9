#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "bamd/gibbs.hpp"
#include "bamd/model.hpp"
#include "bamd/rng.hpp"

namespace bamd::selector {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// One bit per SNP; a SNP's bit covers all of its design columns.
using ModelIndicator = std::vector<std::uint8_t>;

ModelIndicator full_model(Index s);
bool is_full_model(const ModelIndicator& delta);
std::string to_bitstring(const ModelIndicator& delta);
ModelIndicator parse_bitstring(std::string_view bits, Index s);
// Design columns of the SNPs switched off in delta.
std::vector<Index> excluded_columns(const ModelIndicator& delta, model::Coding coding);

// Per-state quantities the estimator needs: Z'Z and Z'(Y - X beta - Z gamma)
// for the state's own imputed Z.
struct StateSnapshot {
  double sigma2 = 1.0;
  double phi2 = 1.0;
  VectorXd gamma;
  MatrixXd gram;
  VectorXd cross;
};

StateSnapshot make_snapshot(const model::Dataset& data, const MatrixXd& design, const gibbs::RetainedState& st);
StateSnapshot make_snapshot(const model::Dataset& data, const gibbs::RetainedState& st,
                            const std::vector<std::pair<Index, Index>>& cells);

// log g for the excluded-SNP weight function. nullopt when the excluded-column
// Gram matrix is singular. Requires at least one excluded SNP.
std::optional<double> log_g_weight(const model::Dataset& data, const MatrixXd& design,
                                   const gibbs::RetainedState& st, const ModelIndicator& delta);

// log of one estimator summand, by direct evaluation with an explicit
// projector. Zero for the full model.
std::optional<double> bf_sample_term(const model::Dataset& data, const MatrixXd& design,
                                     const gibbs::RetainedState& st, const ModelIndicator& delta);
// Same value from a snapshot, without touching n-sized quantities.
std::optional<double> bf_sample_term(const StateSnapshot& snap, const ModelIndicator& delta, model::Coding coding);

struct BayesFactorEstimate {
  double log_value = 0.0;
  std::size_t sample_count = 0;
  std::size_t invalid_count = 0;
  double log_term_mean = 0.0;
  double log_term_var = 0.0;

  double value() const;
  double invalid_rate() const;
};

// Streaming log-sum-exp over the valid terms.
class BayesFactorAccumulator {
 public:
  void add(std::optional<double> log_term);
  std::size_t count() const { return count_; }
  // Throws NumericalError when no term was valid.
  BayesFactorEstimate finish() const;

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double scaled_sum_ = 0.0;
  std::size_t count_ = 0;
  std::size_t invalid_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

BayesFactorEstimate estimate_bayes_factor(std::span<const StateSnapshot> snaps, const ModelIndicator& delta,
                                          model::Coding coding);
BayesFactorEstimate estimate_bayes_factor(const model::Dataset& data, std::span<const gibbs::RetainedState> states,
                                          const std::vector<std::pair<Index, Index>>& cells,
                                          const ModelIndicator& delta);

struct SearchConfig {
  double mixture_prob = 0.5;
  std::size_t search_iterations = 1000;
  std::uint64_t seed = 1;
  std::size_t min_samples_per_bf = 2000;
  // SNPs the search may switch; the rest stay excluded. Empty means all.
  std::vector<Index> candidates;

  void validate() const;
};

// With probability a flip one candidate bit, otherwise draw every candidate
// bit uniformly.
ModelIndicator propose_model(const ModelIndicator& current, Rng& rng, double mixture_prob,
                             std::span<const Index> candidates);

struct SearchStep {
  std::size_t step = 0;
  std::size_t window_end = 0;
  ModelIndicator proposed;
  double log_bf = 0.0;
  bool accepted = false;
  ModelIndicator current;  // incumbent after the step
};

struct SearchTrace {
  std::vector<SearchStep> visited;
  ModelIndicator best;
  double best_log_bf = 0.0;
  std::size_t skipped = 0;
  std::size_t evaluations = 0;
  std::size_t window = 0;
};

using Evaluator = std::function<BayesFactorEstimate(const ModelIndicator&, std::size_t window_end)>;

// The MH chain over models. The evaluator supplies log BF-hat for a model and
// window; incumbent and proposal are always compared on the same window.
class ModelSearch {
 public:
  ModelSearch(Index s, SearchConfig config, Evaluator evaluator);

  void step(std::size_t window_end);
  std::size_t steps_taken() const { return steps_; }
  const SearchTrace& trace() const { return trace_; }
  const ModelIndicator& current() const { return current_; }

 private:
  Index s_;
  SearchConfig config_;
  Evaluator evaluator_;
  std::vector<Index> candidates_;
  Rng rng_;
  ModelIndicator current_;
  std::size_t steps_ = 0;
  SearchTrace trace_;
};

// Feeds retained states in order and schedules MH steps over a sliding
// window of the latest min_samples_per_bf snapshots. The schedule depends
// only on (state count, config), so a recorded replay reproduces a live run.
class StreamingSelector {
 public:
  StreamingSelector(const model::Dataset& data, SearchConfig config, std::size_t total_states,
                    std::vector<std::pair<Index, Index>> cells);

  void push(const gibbs::RetainedState& st);
  SearchTrace finish();

 private:
  BayesFactorEstimate evaluate(const ModelIndicator& delta, std::size_t window_end);

  const model::Dataset* data_;
  SearchConfig config_;
  std::size_t total_;
  std::vector<std::pair<Index, Index>> cells_;
  std::deque<StateSnapshot> window_;
  std::size_t pushed_ = 0;
  std::size_t memo_window_ = static_cast<std::size_t>(-1);
  std::map<ModelIndicator, BayesFactorEstimate> memo_;
  std::size_t evaluations_ = 0;
  ModelSearch search_;
};

// Runs a StreamingSelector on a consumer thread behind a bounded queue, so
// it can sit directly on a Gibbs chain's state sink.
class LiveSelector {
 public:
  LiveSelector(const model::Dataset& data, SearchConfig config, std::size_t total_states,
               std::vector<std::pair<Index, Index>> cells, std::size_t capacity = 256);
  ~LiveSelector();
  LiveSelector(const LiveSelector&) = delete;
  LiveSelector& operator=(const LiveSelector&) = delete;

  // Blocks while the queue is full.
  void push(const gibbs::RetainedState& st);
  gibbs::StateSink sink();
  // Waits for the consumer to drain the queue; rethrows consumer errors.
  SearchTrace finish();

 private:
  void consume();

  StreamingSelector selector_;
  std::size_t capacity_;
  std::deque<gibbs::RetainedState> queue_;
  std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  bool closed_ = false;
  std::exception_ptr error_;
  std::thread worker_;
  bool finished_ = false;
};

// Offline search over a recorded state stream.
SearchTrace mh_model_search(const model::Dataset& data, std::span<const gibbs::RetainedState> states,
                            const std::vector<std::pair<Index, Index>>& cells, const SearchConfig& config);

struct RankedModel {
  ModelIndicator delta;
  BayesFactorEstimate estimate;
};

inline constexpr std::size_t kMaxExhaustiveCandidates = 20;

// Every subset of the candidates (others excluded) over all states, ranked by
// log BF-hat. Models whose terms are all invalid are dropped.
std::vector<RankedModel> exhaustive_search(const model::Dataset& data, std::span<const gibbs::RetainedState> states,
                                           const std::vector<std::pair<Index, Index>>& cells,
                                           std::span<const Index> candidate_snps);

// step,window_end,proposed,log_bf,accepted,current
std::string format_trace_csv(const SearchTrace& trace);
// delta,log_bf,included
std::string format_best_model_csv(const ModelIndicator& best, double log_bf, const model::Dataset& data);
std::string format_ranked_csv(std::span<const RankedModel> ranked, const model::Dataset& data);

}  // namespace bamd::selector
