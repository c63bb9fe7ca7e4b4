#pragma once

// Estimation from snapshot data: CTMC path simulation, snapshot sampling,
// transition counting, the discrete-time log likelihood and its gradient,
// maximum likelihood, and the Monte Carlo replication harness.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctdc/ctmc.hpp"
#include "ctdc/model.hpp"
#include "ctdc/sparse.hpp"

namespace ctdc::inference {

using Rng = std::mt19937_64;

/// Independent stream for replication `rep` of a run seeded with `seed`.
Rng replication_stream(std::uint64_t seed, std::uint64_t rep);

/// Piecewise-constant path: state states[i] on [times[i], times[i+1]).
struct EventPath {
    std::vector<double> times;
    std::vector<std::size_t> states;
    double horizon = 0.0;
};

EventPath simulate_trajectory(const ctmc::IntensityMatrix& q, std::size_t k0, double horizon, Rng& rng);

/// States at t0, t0 + delta, ..., t0 + n * delta (right-continuous).
std::vector<std::size_t> sample_snapshots(const EventPath& path, double delta, std::size_t n_snapshots,
                                          double t0 = 0.0);

struct SnapshotDataset {
    double delta = 1.0;
    std::vector<std::vector<std::size_t>> markets;
};

/// Every market has at least two snapshots and every state is below n_states.
void validate(const SnapshotDataset& ds, std::size_t n_states);

struct TransitionCounts {
    std::size_t n_states = 0;
    sparse::CsrMatrix d;                    // d(k, l): transitions k -> l
    sparse::CsrMatrix by_destination;       // transpose of d
    std::uint64_t total = 0;
    std::vector<std::size_t> destinations;  // columns l with positive count

    double count(std::size_t k, std::size_t l) const { return d.at(k, l); }
};

TransitionCounts count_transitions(const SnapshotDataset& ds, std::size_t n_states);

struct LikelihoodOptions {
    double eps = 1e-12;     // uniformization truncation tolerance
    double p_min = 1e-300;  // floor applied before taking logs
};

/// Log likelihood of fixed transition counts as a function of theta, with the
/// sparsity pattern of Q built on the first call and reused afterwards.
class LikelihoodEvaluator {
public:
    LikelihoodEvaluator(const model::StructuralModel& model, TransitionCounts counts, double delta,
                        LikelihoodOptions options = {});

    double log_likelihood(std::span<const double> theta);
    /// Value and analytic gradient (one evaluation).
    double log_likelihood(std::span<const double> theta, std::span<double> gradient);

    std::size_t evaluations() const { return evaluations_; }
    /// Destination columns processed over all evaluations.
    std::size_t columns_evaluated() const { return columns_evaluated_; }
    /// Observed cells whose probability fell below p_min (possible misspecification).
    std::size_t floored_cells() const { return floored_; }
    const TransitionCounts& counts() const { return counts_; }
    const model::StructuralModel& model() const { return model_; }
    /// Empty until the first evaluation.
    const sparse::SparsityPattern& pattern() const { return pattern_; }
    double delta() const { return delta_; }

private:
    double evaluate(std::span<const double> theta, std::span<double> gradient, bool with_gradient);

    const model::StructuralModel& model_;
    TransitionCounts counts_;
    double delta_;
    LikelihoodOptions options_;
    sparse::SparsityPattern pattern_;
    std::size_t evaluations_ = 0;
    std::size_t columns_evaluated_ = 0;
    std::size_t floored_ = 0;
};

double log_likelihood(const model::StructuralModel& model, std::span<const double> theta,
                      const TransitionCounts& counts, double delta, double eps = 1e-12);

std::vector<double> log_likelihood_gradient(const model::StructuralModel& model, std::span<const double> theta,
                                            const TransitionCounts& counts, double delta, double eps = 1e-12);

enum class GradientMode { analytic, numeric };

const char* to_string(GradientMode mode);
GradientMode parse_gradient_mode(std::string_view s);

struct FitOptions {
    GradientMode gradient = GradientMode::analytic;
    double gtol = 1e-6;   // projected gradient of the log likelihood
    double ftol = 1e-14;  // relative change of the log likelihood
    std::size_t max_iterations = 500;
    LikelihoodOptions likelihood;
    std::optional<std::vector<double>> lower;  // defaults: the model's bounds
    std::optional<std::vector<double>> upper;
};

struct EstimationResult {
    model::ParameterVector theta_hat;
    double loglik = 0.0;
    std::size_t n_func_evals = 0;
    double wall_time = 0.0;  // seconds
    bool converged = false;
    GradientMode gradient_mode = GradientMode::analytic;
    std::size_t iterations = 0;
    double projected_gradient_norm = 0.0;
    std::string message;
};

EstimationResult fit_mle(const model::StructuralModel& model, const TransitionCounts& counts, double delta,
                         std::span<const double> theta0, const FitOptions& options = {});

EstimationResult fit_mle(const model::StructuralModel& model, const SnapshotDataset& ds,
                         std::span<const double> theta0, const FitOptions& options = {});

/// Central differences with h = eps^(1/3) max(1, |theta_j|); 2p evaluations.
std::vector<double> numeric_gradient(LikelihoodEvaluator& evaluator, std::span<const double> theta);

// ---------------------------------------------------------------------------
// Monte Carlo

enum class McMode { analytic, numeric, both };

struct McConfig {
    std::size_t players = 3;
    std::size_t demand = 3;
    std::size_t n_obs = 1000;
    std::size_t n_reps = 25;
    double delta = 1.0;
    std::vector<double> theta_true{-0.5, -0.05, 0.1, 1.0, 0.3};
    std::optional<std::vector<double>> theta_start;  // defaults to theta_true
    std::uint64_t seed = 42;
    McMode mode = McMode::analytic;
    std::size_t threads = 1;
    double burn_in = 100.0;  // in units of delta
    FitOptions fit;
};

struct ReplicationRecord {
    std::size_t rep = 0;
    bool ok = false;
    std::string error;
    std::optional<EstimationResult> analytic;
    std::optional<EstimationResult> numeric;
};

struct ParameterStats {
    std::string name;
    double truth = 0.0;
    double mean = 0.0;
    double median = 0.0;
    double sd = 0.0;
    double rmse = 0.0;
    double mean_bias = 0.0;
    double median_bias = 0.0;
};

struct Moments {
    double mean = 0.0;
    double median = 0.0;
    double sd = 0.0;
};

struct McSummary {
    GradientMode mode = GradientMode::analytic;
    std::size_t n_reps = 0;    // successful replications
    std::size_t n_failed = 0;  // excluded from the statistics
    std::vector<ParameterStats> parameters;
    Moments time;
    Moments func_evals;
};

struct McResult {
    McConfig config;
    std::vector<ReplicationRecord> replications;
    std::vector<McSummary> summaries;  // one per gradient mode that was run
};

/// Summary of the estimates of one gradient mode over successful replications.
McSummary summarize(std::span<const ReplicationRecord> reps, GradientMode mode,
                    const std::vector<std::string>& names, std::span<const double> truth);

/// Data for replication `rep`: one market simulated from state 0
/// at theta_true, burn-in of burn_in * delta, then n_obs transitions.
SnapshotDataset simulate_dataset(const McConfig& config, std::size_t rep);

McResult run_monte_carlo(const McConfig& config);

/// One block of rows per summary, tagged with its gradient mode.
void write_summary_csv(std::ostream& os, std::span<const McSummary> summaries);
/// One row per replication and gradient mode.
void write_replications_csv(std::ostream& os, const McResult& result);
void write_summary_table(std::ostream& os, const McSummary& s);

// ---------------------------------------------------------------------------
// Dataset files: header market_id,obs_index,state_index, rows sorted.

void write_dataset_csv(std::ostream& os, const SnapshotDataset& ds);
/// Throws ErrorCode::data_format on malformed input.
SnapshotDataset read_dataset_csv(std::istream& is, double delta);

}  // namespace ctdc::inference
