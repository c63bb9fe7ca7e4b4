#include "ctdc/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "ctdc/error.hpp"
#include "ctdc/optimize.hpp"

namespace ctdc::inference {

using model::StructuralModel;

Rng replication_stream(std::uint64_t seed, std::uint64_t rep) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32)};
    return Rng(seq);
}

// ---------------------------------------------------------------------------
// Simulation

EventPath simulate_trajectory(const ctmc::IntensityMatrix& q, std::size_t k0, double horizon, Rng& rng) {
    require(k0 < q.size(), ErrorCode::invalid_argument, "initial state out of range");
    require(horizon > 0.0, ErrorCode::invalid_argument, "horizon must be positive");
    const auto& m = q.matrix();
    const auto rp = m.row_ptr();
    const auto ci = m.col_idx();
    const auto qv = m.values();

    EventPath path;
    path.horizon = horizon;
    path.times.push_back(0.0);
    path.states.push_back(k0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double t = 0.0;
    std::size_t k = k0;
    for (;;) {
        const double rate = -m.at(k, k);
        if (rate <= 0.0) break;  // absorbing
        t += std::exponential_distribution<double>(rate)(rng);
        if (t > horizon) break;
        const double target = unif(rng) * rate;
        double acc = 0.0;
        std::size_t next = k;
        for (auto p = rp[k]; p < rp[k + 1]; ++p) {
            if (ci[p] == k || qv[p] <= 0.0) continue;
            acc += qv[p];
            next = ci[p];
            if (target < acc) break;
        }
        k = next;
        path.times.push_back(t);
        path.states.push_back(k);
    }
    return path;
}

std::vector<std::size_t> sample_snapshots(const EventPath& path, double delta, std::size_t n_snapshots,
                                          double t0) {
    require(delta > 0.0, ErrorCode::invalid_argument, "snapshot spacing must be positive");
    require(!path.times.empty(), ErrorCode::invalid_argument, "empty path");
    const double t_end = t0 + static_cast<double>(n_snapshots) * delta;
    require(t0 >= 0.0 && t_end <= path.horizon, ErrorCode::invalid_argument,
            "path horizon too short for the requested snapshots");
    std::vector<std::size_t> out;
    out.reserve(n_snapshots + 1);
    for (std::size_t n = 0; n <= n_snapshots; ++n) {
        const double t = t0 + static_cast<double>(n) * delta;
        const auto it = std::upper_bound(path.times.begin(), path.times.end(), t);
        out.push_back(path.states[static_cast<std::size_t>(it - path.times.begin()) - 1]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Counting

void validate(const SnapshotDataset& ds, std::size_t n_states) {
    require(ds.delta > 0.0, ErrorCode::data_format, "snapshot spacing must be positive");
    for (std::size_t m = 0; m < ds.markets.size(); ++m) {
        require(ds.markets[m].size() >= 2, ErrorCode::data_format,
                "market " + std::to_string(m) + " has fewer than two snapshots");
        for (std::size_t s : ds.markets[m])
            require(s < n_states, ErrorCode::data_format,
                    "state index " + std::to_string(s) + " out of range in market " + std::to_string(m));
    }
}

TransitionCounts count_transitions(const SnapshotDataset& ds, std::size_t n_states) {
    validate(ds, n_states);
    std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> cells;
    TransitionCounts out;
    out.n_states = n_states;
    for (const auto& market : ds.markets)
        for (std::size_t n = 1; n < market.size(); ++n) {
            ++cells[{market[n - 1], market[n]}];
            ++out.total;
        }
    sparse::CooMatrix coo(n_states, n_states);
    std::vector<char> used(n_states, 0);
    for (const auto& [kl, c] : cells) {
        coo.push_back(kl.first, kl.second, static_cast<double>(c));
        used[kl.second] = 1;
    }
    out.d = sparse::coo_to_csr(coo);
    out.by_destination = sparse::csr_to_csc(out.d);
    for (std::size_t l = 0; l < n_states; ++l)
        if (used[l]) out.destinations.push_back(l);
    return out;
}

// ---------------------------------------------------------------------------
// Likelihood

LikelihoodEvaluator::LikelihoodEvaluator(const StructuralModel& model, TransitionCounts counts, double delta,
                                         LikelihoodOptions options)
    : model_(model), counts_(std::move(counts)), delta_(delta), options_(options) {
    require(counts_.n_states == model_.n_states(), ErrorCode::dimension_mismatch,
            "transition counts do not match the model's state space");
    require(delta_ > 0.0, ErrorCode::invalid_argument, "snapshot spacing must be positive");
    require(options_.eps > 0.0 && options_.eps < 1.0, ErrorCode::invalid_argument, "eps must lie in (0, 1)");
    require(options_.p_min > 0.0, ErrorCode::invalid_argument, "probability floor must be positive");
}

double LikelihoodEvaluator::log_likelihood(std::span<const double> theta) {
    return evaluate(theta, {}, false);
}

double LikelihoodEvaluator::log_likelihood(std::span<const double> theta, std::span<double> gradient) {
    require(gradient.size() == theta.size(), ErrorCode::dimension_mismatch, "gradient has the wrong length");
    return evaluate(theta, gradient, true);
}

double LikelihoodEvaluator::evaluate(std::span<const double> theta, std::span<double> gradient,
                                     bool with_gradient) {
    ++evaluations_;
    const auto inst = model_.instantiate(theta, with_gradient);
    if (!pattern_.structure()) pattern_ = model::generator_pattern(inst.spec);
    const auto assembled = model::assemble_q(inst.spec, inst.ccp, &pattern_);
    const ctmc::Uniformization kernel(assembled.q, delta_, options_.eps);

    std::vector<sparse::CsrMatrix> dq;
    if (with_gradient) {
        dq = model::assemble_q_derivatives(inst.spec, inst.ccp, inst.derivatives, pattern_);
        std::fill(gradient.begin(), gradient.end(), 0.0);
    }

    const std::size_t K = counts_.n_states;
    const auto rp = counts_.by_destination.row_ptr();
    const auto src = counts_.by_destination.col_idx();
    const auto cnt = counts_.by_destination.values();
    std::vector<double> e(K, 0.0), mu;
    std::vector<std::vector<double>> mu_alpha;
    double ll = 0.0;
    for (std::size_t l : counts_.destinations) {
        // Column l of P(delta) = exp(delta Q) e_l.
        e[l] = 1.0;
        if (with_gradient)
            kernel.apply_with_derivatives(dq, e, mu, mu_alpha);
        else
            mu = kernel.apply(e);
        e[l] = 0.0;
        ++columns_evaluated_;
        for (auto p = rp[l]; p < rp[l + 1]; ++p) {
            const std::size_t k = src[p];
            const double d = cnt[p];
            const double prob = mu[k];
            if (!(prob >= options_.p_min)) {
                ++floored_;
                ll += d * std::log(options_.p_min);
                continue;
            }
            ll += d * std::log(prob);
            if (with_gradient)
                for (std::size_t a = 0; a < gradient.size(); ++a) gradient[a] += d / prob * mu_alpha[a][k];
        }
    }
    require(std::isfinite(ll), ErrorCode::numeric, "log likelihood is not finite");
    return ll;
}

double log_likelihood(const StructuralModel& model, std::span<const double> theta,
                      const TransitionCounts& counts, double delta, double eps) {
    LikelihoodEvaluator ev(model, counts, delta, {eps, 1e-300});
    return ev.log_likelihood(theta);
}

std::vector<double> log_likelihood_gradient(const StructuralModel& model, std::span<const double> theta,
                                            const TransitionCounts& counts, double delta, double eps) {
    LikelihoodEvaluator ev(model, counts, delta, {eps, 1e-300});
    std::vector<double> g(theta.size());
    ev.log_likelihood(theta, g);
    return g;
}

std::vector<double> numeric_gradient(LikelihoodEvaluator& evaluator, std::span<const double> theta) {
    const double h0 = std::cbrt(std::numeric_limits<double>::epsilon());
    std::vector<double> x(theta.begin(), theta.end()), g(theta.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double h = h0 * std::max(1.0, std::abs(theta[j]));
        x[j] = theta[j] + h;
        const double up = evaluator.log_likelihood(x);
        x[j] = theta[j] - h;
        const double down = evaluator.log_likelihood(x);
        x[j] = theta[j];
        g[j] = (up - down) / (2.0 * h);
    }
    return g;
}

const char* to_string(GradientMode mode) { return mode == GradientMode::analytic ? "analytic" : "numeric"; }

GradientMode parse_gradient_mode(std::string_view s) {
    if (s == "analytic") return GradientMode::analytic;
    if (s == "numeric") return GradientMode::numeric;
    fail(ErrorCode::config, "gradient mode must be 'analytic' or 'numeric', got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Maximum likelihood

EstimationResult fit_mle(const StructuralModel& model, const TransitionCounts& counts, double delta,
                         std::span<const double> theta0, const FitOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    model::ParameterVector params = model.parameters();
    require(theta0.size() == params.size(), ErrorCode::dimension_mismatch,
            "starting value has the wrong number of parameters");
    const auto lower = options.lower.value_or(params.lower);
    const auto upper = options.upper.value_or(params.upper);
    for (std::size_t j = 0; j < theta0.size(); ++j)
        require(theta0[j] >= lower[j] && theta0[j] <= upper[j], ErrorCode::invalid_argument,
                "starting value of " + params.names[j] + " lies outside its bounds");

    LikelihoodEvaluator ev(model, counts, delta, options.likelihood);
    optimize::Objective obj;
    if (options.gradient == GradientMode::analytic) {
        obj.value_and_gradient = [&](std::span<const double> x, std::span<double> g) {
            const double f = ev.log_likelihood(x, g);
            for (auto& gi : g) gi = -gi;
            return -f;
        };
    } else {
        obj.value = [&](std::span<const double> x) { return -ev.log_likelihood(x); };
        obj.gradient = [&](std::span<const double> x, double, std::span<double> g) {
            const auto ng = numeric_gradient(ev, x);
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = -ng[j];
        };
    }
    optimize::Options opt;
    opt.gtol = options.gtol;
    opt.ftol = options.ftol;
    opt.max_iterations = options.max_iterations;
    const auto r = optimize::minimize_bounded(obj, {theta0.begin(), theta0.end()}, lower, upper, opt);

    EstimationResult out;
    params.values = r.x;
    params.lower = lower;
    params.upper = upper;
    out.theta_hat = std::move(params);
    out.loglik = -r.f;
    out.n_func_evals = ev.evaluations();
    out.converged = r.converged;
    out.gradient_mode = options.gradient;
    out.iterations = r.iterations;
    out.projected_gradient_norm = r.projected_gradient_norm;
    out.message = r.message;
    out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

EstimationResult fit_mle(const StructuralModel& model, const SnapshotDataset& ds, std::span<const double> theta0,
                         const FitOptions& options) {
    return fit_mle(model, count_transitions(ds, model.n_states()), ds.delta, theta0, options);
}

// ---------------------------------------------------------------------------
// Monte Carlo

namespace {

model::EntryExitModel mc_model(const McConfig& c) {
    model::EntryExitParams p;
    p.players = c.players;
    p.demand = c.demand;
    return model::EntryExitModel(p);
}

double sorted_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Moments moments(const std::vector<double>& v) {
    Moments m;
    const auto n = static_cast<double>(v.size());
    if (v.empty()) return {std::nan(""), std::nan(""), std::nan("")};
    m.mean = sorted_sum(v) / n;
    m.median = median_of(v);
    std::vector<double> sq;
    for (double x : v) sq.push_back((x - m.mean) * (x - m.mean));
    m.sd = v.size() > 1 ? std::sqrt(sorted_sum(sq) / (n - 1.0)) : 0.0;
    return m;
}

}  // namespace

McSummary summarize(std::span<const ReplicationRecord> reps, GradientMode mode,
                    const std::vector<std::string>& names, std::span<const double> truth) {
    McSummary s;
    s.mode = mode;
    std::vector<std::vector<double>> est(names.size());
    std::vector<double> times, evals;
    for (const auto& r : reps) {
        const auto& fit = mode == GradientMode::analytic ? r.analytic : r.numeric;
        if (!r.ok || !fit) {
            if (!r.ok) ++s.n_failed;
            continue;
        }
        ++s.n_reps;
        for (std::size_t j = 0; j < names.size(); ++j) est[j].push_back(fit->theta_hat.values[j]);
        times.push_back(fit->wall_time);
        evals.push_back(static_cast<double>(fit->n_func_evals));
    }
    for (std::size_t j = 0; j < names.size(); ++j) {
        const Moments m = moments(est[j]);
        ParameterStats p;
        p.name = names[j];
        p.truth = truth[j];
        p.mean = m.mean;
        p.median = m.median;
        p.sd = m.sd;
        p.mean_bias = m.mean - truth[j];
        p.median_bias = m.median - truth[j];
        std::vector<double> sq;
        for (double x : est[j]) sq.push_back((x - truth[j]) * (x - truth[j]));
        p.rmse = est[j].empty() ? std::nan("") : std::sqrt(sorted_sum(sq) / static_cast<double>(est[j].size()));
        s.parameters.push_back(p);
    }
    s.time = moments(times);
    s.func_evals = moments(evals);
    return s;
}

SnapshotDataset simulate_dataset(const McConfig& c, std::size_t rep) {
    require(c.n_obs >= 1 && c.delta > 0.0 && c.burn_in >= 0.0, ErrorCode::config,
            "Monte Carlo needs n_obs >= 1, delta > 0 and a nonnegative burn-in");
    const auto model = mc_model(c);
    const auto inst = model.instantiate(c.theta_true, false);
    const auto q = model::assemble_q(inst.spec, inst.ccp).q;
    Rng rng = replication_stream(c.seed, rep);
    const double t0 = c.burn_in * c.delta;
    const double horizon = t0 + (static_cast<double>(c.n_obs) + 1.0) * c.delta;
    const auto path = simulate_trajectory(q, 0, horizon, rng);
    SnapshotDataset ds;
    ds.delta = c.delta;
    ds.markets.push_back(sample_snapshots(path, c.delta, c.n_obs, t0));
    return ds;
}

McResult run_monte_carlo(const McConfig& config) {
    const auto model = mc_model(config);
    const auto params = model.parameters();
    require(config.theta_true.size() == params.size(), ErrorCode::config, "theta_true needs 5 values");
    const std::vector<double> start = config.theta_start.value_or(config.theta_true);
    require(start.size() == params.size(), ErrorCode::config, "theta_start needs 5 values");
    require(config.n_reps >= 1, ErrorCode::config, "at least one replication is required");

    McResult out;
    out.config = config;
    out.replications.resize(config.n_reps);

    auto run_one = [&](std::size_t r) {
        ReplicationRecord rec;
        rec.rep = r;
        try {
            const auto ds = simulate_dataset(config, r);
            const auto counts = count_transitions(ds, model.n_states());
            FitOptions fo = config.fit;
            if (config.mode != McMode::numeric) {
                fo.gradient = GradientMode::analytic;
                rec.analytic = fit_mle(model, counts, ds.delta, start, fo);
            }
            if (config.mode != McMode::analytic) {
                fo.gradient = GradientMode::numeric;
                rec.numeric = fit_mle(model, counts, ds.delta, start, fo);
            }
            rec.ok = true;
        } catch (const Error& e) {
            rec.error = e.what();
        }
        out.replications[r] = std::move(rec);
    };

    std::size_t threads = config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
    threads = std::min(threads, config.n_reps);
    if (threads <= 1) {
        for (std::size_t r = 0; r < config.n_reps; ++r) run_one(r);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t r; (r = next.fetch_add(1)) < config.n_reps;) run_one(r);
            });
        for (auto& th : pool) th.join();
    }

    if (config.mode != McMode::numeric)
        out.summaries.push_back(summarize(out.replications, GradientMode::analytic, params.names, config.theta_true));
    if (config.mode != McMode::analytic)
        out.summaries.push_back(summarize(out.replications, GradientMode::numeric, params.names, config.theta_true));
    return out;
}

void write_summary_csv(std::ostream& os, std::span<const McSummary> summaries) {
    const auto prec = os.precision(17);
    os << "gradient,parameter,true_value,mean,median,sd,rmse,mean_bias,median_bias\n";
    for (const auto& s : summaries) {
        const char* g = to_string(s.mode);
        for (const auto& p : s.parameters)
            os << g << ',' << p.name << ',' << p.truth << ',' << p.mean << ',' << p.median << ',' << p.sd << ','
               << p.rmse << ',' << p.mean_bias << ',' << p.median_bias << '\n';
        os << g << ",time_s,," << s.time.mean << ',' << s.time.median << ',' << s.time.sd << ",,,\n";
        os << g << ",func_evals,," << s.func_evals.mean << ',' << s.func_evals.median << ',' << s.func_evals.sd
           << ",,,\n";
    }
    os.precision(prec);
}

void write_replications_csv(std::ostream& os, const McResult& result) {
    const auto prec = os.precision(17);
    os << "rep,gradient,ok,converged,loglik,n_func_evals";
    std::vector<std::string> names;
    if (!result.summaries.empty())
        for (const auto& p : result.summaries.front().parameters) names.push_back(p.name);
    for (const auto& n : names) os << ',' << n;
    os << ",error\n";
    for (const auto& r : result.replications) {
        if (!r.ok) {
            os << r.rep << ",,0,0,,";
            for (std::size_t j = 0; j < names.size(); ++j) os << ',';
            os << ",\"" << r.error << "\"\n";
            continue;
        }
        for (const auto* fit : {&r.analytic, &r.numeric}) {
            if (!*fit) continue;
            const auto& f = **fit;
            os << r.rep << ',' << to_string(f.gradient_mode) << ",1," << (f.converged ? 1 : 0) << ',' << f.loglik
               << ',' << f.n_func_evals;
            for (double x : f.theta_hat.values) os << ',' << x;
            os << ",\n";
        }
    }
    os.precision(prec);
}

void write_summary_table(std::ostream& os, const McSummary& s) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << std::fixed << std::setprecision(3);
    auto num = [&](double x, int w) { os << std::setw(w) << x; };
    os << std::left << std::setw(14) << "Parameter" << std::right << std::setw(11) << "True Value"
       << std::setw(10) << "Mean" << std::setw(10) << "Median" << std::setw(10) << "S.D." << std::setw(10)
       << "RMSE" << std::setw(11) << "Mean Bias" << std::setw(13) << "Median Bias" << '\n';
    const std::string rule(89, '-');
    os << rule << '\n';
    for (const auto& p : s.parameters) {
        os << std::left << std::setw(14) << p.name << std::right;
        num(p.truth, 11);
        num(p.mean, 10);
        num(p.median, 10);
        num(p.sd, 10);
        num(p.rmse, 10);
        num(p.mean_bias, 11);
        num(p.median_bias, 13);
        os << '\n';
    }
    os << rule << '\n';
    os << std::left << std::setw(14) << "Time (s)" << std::right << std::setw(11) << "";
    num(s.time.mean, 10);
    num(s.time.median, 10);
    num(s.time.sd, 10);
    os << '\n' << std::left << std::setw(14) << "Func. Eval." << std::right << std::setw(11) << "";
    num(s.func_evals.mean, 10);
    num(s.func_evals.median, 10);
    num(s.func_evals.sd, 10);
    os << '\n' << rule << '\n';
    os << "gradient: " << to_string(s.mode) << ", replications: " << s.n_reps << ", failed: " << s.n_failed << '\n';
    os.flags(flags);
    os.precision(prec);
}

// ---------------------------------------------------------------------------
// Dataset files

void write_dataset_csv(std::ostream& os, const SnapshotDataset& ds) {
    os << "market_id,obs_index,state_index\n";
    for (std::size_t m = 0; m < ds.markets.size(); ++m)
        for (std::size_t n = 0; n < ds.markets[m].size(); ++n) os << m << ',' << n << ',' << ds.markets[m][n] << '\n';
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::size_t parse_index(std::string_view field, std::size_t line) {
    field = trim(field);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    require(ec == std::errc() && ptr == field.data() + field.size() && !field.empty(), ErrorCode::data_format,
            "line " + std::to_string(line) + ": '" + std::string(field) + "' is not a nonnegative integer");
    return v;
}

}  // namespace

SnapshotDataset read_dataset_csv(std::istream& is, double delta) {
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), ErrorCode::data_format, "dataset is empty");
    require(trim(line) == "market_id,obs_index,state_index", ErrorCode::data_format,
            "dataset header must be 'market_id,obs_index,state_index'");
    SnapshotDataset ds;
    ds.delta = delta;
    std::size_t line_no = 1;
    std::optional<std::size_t> current;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::string_view rest = line;
        std::size_t fields[3];
        for (int f = 0; f < 3; ++f) {
            const auto comma = rest.find(',');
            require((f < 2) == (comma != std::string_view::npos), ErrorCode::data_format,
                    "line " + std::to_string(line_no) + ": expected three comma-separated fields");
            fields[f] = parse_index(rest.substr(0, comma), line_no);
            if (comma != std::string_view::npos) rest.remove_prefix(comma + 1);
        }
        if (!current || fields[0] != *current) {
            require(!current || fields[0] > *current, ErrorCode::data_format,
                    "line " + std::to_string(line_no) + ": rows must be sorted by market_id");
            current = fields[0];
            ds.markets.emplace_back();
        }
        require(fields[1] == ds.markets.back().size(), ErrorCode::data_format,
                "line " + std::to_string(line_no) + ": obs_index must count up from 0 within each market");
        ds.markets.back().push_back(fields[2]);
    }
    require(!ds.markets.empty(), ErrorCode::data_format, "dataset has no observations");
    for (std::size_t m = 0; m < ds.markets.size(); ++m)
        require(ds.markets[m].size() >= 2, ErrorCode::data_format,
                "every market needs at least two snapshots");
    return ds;
}

}  // namespace ctdc::inference
