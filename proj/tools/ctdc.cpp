// ctdc: command-line front end.
//
//   ctdc expm     exp(delta Q) v and its parameter derivatives
//   ctdc solve    value function by vi | nk | rvi
//   ctdc simulate snapshot panel from a model
//   ctdc loglik   log likelihood (and gradient) of a snapshot panel
//   ctdc fit      maximum likelihood estimate
//   ctdc mc       Monte Carlo replications of the entry-exit experiment
//
// Exit codes: 0 ok, 1 internal error, 2 config/usage, 3 numeric failure,
// 4 malformed data.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ctdc/config.hpp"
#include "ctdc/ctmc.hpp"
#include "ctdc/error.hpp"
#include "ctdc/inference.hpp"
#include "ctdc/model.hpp"
#include "ctdc/solver.hpp"

using namespace ctdc;
using nlohmann::json;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitData = 4;

int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::numeric:
        case ErrorCode::pattern: return kExitNumeric;
        case ErrorCode::data_format: return kExitData;
        case ErrorCode::config:
        case ErrorCode::invalid_argument:
        case ErrorCode::dimension_mismatch: return kExitConfig;
    }
    return kExitInternal;
}

void with_output(const std::string& path, const std::function<void(std::ostream&)>& write) {
    if (path.empty() || path == "-") {
        write(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path);
    require(out.good(), ErrorCode::config, "cannot open '" + path + "' for writing");
    write(out);
    require(out.good(), ErrorCode::config, "failed writing '" + path + "'");
}

// name=value pairs applied on top of the model's configured parameter values.
model::ParameterVector apply_overrides(model::ParameterVector p, const std::vector<std::string>& overrides) {
    for (const auto& s : overrides) {
        const auto eq = s.find('=');
        require(eq != std::string::npos, ErrorCode::config, "expected name=value, got '" + s + "'");
        double v = 0.0;
        try {
            std::size_t used = 0;
            v = std::stod(s.substr(eq + 1), &used);
            require(used == s.size() - eq - 1, ErrorCode::config, "bad number in '" + s + "'");
        } catch (const std::logic_error&) {
            fail(ErrorCode::config, "bad number in '" + s + "'");
        }
        const auto name = s.substr(0, eq);
        try {
            p.set(name, v);
        } catch (const Error&) {
            fail(ErrorCode::config, "unknown parameter '" + name + "'");
        }
    }
    return p;
}

std::vector<double> parse_vector_spec(const std::string& spec, std::size_t n) {
    if (spec.rfind("e:", 0) == 0) {
        std::size_t idx = 0;
        try {
            std::size_t used = 0;
            idx = std::stoul(spec.substr(2), &used);
            require(used == spec.size() - 2, ErrorCode::config, "bad basis index in '" + spec + "'");
        } catch (const std::logic_error&) {
            fail(ErrorCode::config, "bad basis index in '" + spec + "'");
        }
        require(idx < n, ErrorCode::config, "basis index " + std::to_string(idx) + " out of range");
        std::vector<double> v(n, 0.0);
        v[idx] = 1.0;
        return v;
    }
    std::ifstream in(spec);
    require(in.good(), ErrorCode::config, "cannot open vector file '" + spec + "'");
    std::vector<double> v;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        // Last comma-separated field, so both "x" and "state,x" layouts work.
        const auto field = line.substr(line.rfind(',') == std::string::npos ? 0 : line.rfind(',') + 1);
        try {
            v.push_back(std::stod(field));
        } catch (const std::logic_error&) {
            require(first, ErrorCode::data_format, "non-numeric entry '" + field + "' in '" + spec + "'");
        }
        first = false;
    }
    require(v.size() == n, ErrorCode::data_format,
            "vector file has " + std::to_string(v.size()) + " entries, expected " + std::to_string(n));
    return v;
}

inference::SnapshotDataset load_dataset(const std::string& path, double delta) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::config, "cannot open data file '" + path + "'");
    return inference::read_dataset_csv(in, delta);
}

json report_json(const solver::ConvergenceReport& r) {
    return {{"iterations", r.iterations},
            {"converged", r.converged},
            {"final_residual", r.final_residual},
            {"residuals", r.residuals}};
}

// ---------------------------------------------------------------------------

struct ExpmArgs {
    std::string config, vector = "e:0", out;
    double delta = 1.0, tol = 1e-12;
    std::vector<std::string> deriv, theta;
};

int run_expm(const ExpmArgs& a) {
    const auto cfg = config::load_model_config(a.config);
    const auto mdl = config::make_structural_model(cfg);
    const auto theta = apply_overrides(mdl->parameters(), a.theta);
    const auto inst = mdl->instantiate(theta.values, !a.deriv.empty());
    const auto assembled = model::assemble_q(inst.spec, inst.ccp);
    const auto v = parse_vector_spec(a.vector, assembled.q.size());

    std::vector<sparse::CsrMatrix> dq;
    if (!a.deriv.empty()) {
        try {
            dq = model::assemble_q_derivatives(*mdl, theta, a.deriv);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::invalid_argument) fail(ErrorCode::config, e.what());
            throw;
        }
    }
    const auto r = ctmc::expmvd(assembled.q, dq, a.delta, v, a.tol);
    with_output(a.out, [&](std::ostream& os) {
        os << std::setprecision(17) << "state,value";
        for (const auto& d : a.deriv) os << ",d_" << d;
        os << '\n';
        for (std::size_t k = 0; k < r.mu.size(); ++k) {
            os << k << ',' << r.mu[k];
            for (const auto& m : r.mu_alpha) os << ',' << m[k];
            os << '\n';
        }
    });
    return 0;
}

struct SolveArgs {
    std::string config, method = "nk", out, report;
    double tol = 1e-10;
    std::size_t player = 0, max_iter = 1'000'000, warm_start = 20;
};

int run_solve(const SolveArgs& a) {
    const auto cfg = config::load_model_config(a.config);
    const auto spec = config::make_game(cfg);
    const auto policy = config::make_policy(cfg);
    require(a.player < spec.n_players, ErrorCode::config, "player index out of range");
    const std::vector<double> v0(spec.n_states, 0.0);

    solver::SolveResult res;
    if (a.method == "vi") {
        res = solver::value_iterate(spec, policy, a.player, v0, {a.tol, a.max_iter});
    } else if (a.method == "nk") {
        solver::NewtonOptions o;
        o.tol = a.tol;
        o.max_iterations = std::min<std::size_t>(a.max_iter, 100);
        o.warm_start_sweeps = a.warm_start;
        res = solver::newton_kantorovich(spec, policy, a.player, v0, o);
    } else if (a.method == "rvi") {
        const auto rep = solver::uniform_representation(spec, policy, a.player);
        res = solver::relative_value_iterate(rep, v0, {a.tol, a.max_iter});
    } else {
        fail(ErrorCode::config, "method must be vi, nk or rvi");
    }

    json doc = report_json(res.report);
    doc["method"] = a.method;
    doc["model"] = config::to_string(cfg.kind);
    doc["player"] = a.player;
    if (!a.out.empty()) {
        with_output(a.out, [&](std::ostream& os) {
            os << std::setprecision(17) << "state,value\n";
            for (std::size_t k = 0; k < res.value.size(); ++k) os << k << ',' << res.value[k] << '\n';
        });
    } else {
        doc["value"] = res.value;
    }
    with_output(a.report, [&](std::ostream& os) { os << doc.dump(2) << '\n'; });
    if (!res.report.converged) {
        std::cerr << "ctdc solve: " << a.method << " did not converge within the iteration limit\n";
        return kExitNumeric;
    }
    return 0;
}

struct SimulateArgs {
    std::string config, out;
    std::size_t markets = 1, obs = 1000;
    double delta = 1.0, burn_in = 100.0;
    std::uint64_t seed = 42;
    std::vector<std::string> theta;
};

int run_simulate(const SimulateArgs& a) {
    const auto cfg = config::load_model_config(a.config);
    const auto mdl = config::make_structural_model(cfg);
    const auto theta = apply_overrides(mdl->parameters(), a.theta);
    const auto inst = mdl->instantiate(theta.values, false);
    const auto q = model::assemble_q(inst.spec, inst.ccp).q;
    require(a.delta > 0.0 && a.obs >= 1 && a.markets >= 1, ErrorCode::config,
            "simulate needs delta > 0, obs >= 1 and markets >= 1");
    inference::SnapshotDataset ds;
    ds.delta = a.delta;
    const double t0 = a.burn_in * a.delta;
    for (std::size_t m = 0; m < a.markets; ++m) {
        auto rng = inference::replication_stream(a.seed, m);
        const auto path = inference::simulate_trajectory(q, 0, t0 + (static_cast<double>(a.obs) + 1.0) * a.delta, rng);
        ds.markets.push_back(inference::sample_snapshots(path, a.delta, a.obs, t0));
    }
    with_output(a.out, [&](std::ostream& os) { inference::write_dataset_csv(os, ds); });
    return 0;
}

struct LoglikArgs {
    std::string config, data, out;
    double delta = 1.0, tol = 1e-12;
    bool gradient = false;
    std::vector<std::string> theta;
};

int run_loglik(const LoglikArgs& a) {
    const auto cfg = config::load_model_config(a.config);
    const auto mdl = config::make_structural_model(cfg);
    const auto theta = apply_overrides(mdl->parameters(), a.theta);
    const auto ds = load_dataset(a.data, a.delta);
    inference::LikelihoodEvaluator ev(*mdl, inference::count_transitions(ds, mdl->n_states()), a.delta,
                                      {a.tol, 1e-300});
    json doc;
    if (a.gradient) {
        std::vector<double> g(theta.size());
        doc["loglik"] = ev.log_likelihood(theta.values, g);
        json grad = json::object();
        for (std::size_t j = 0; j < g.size(); ++j) grad[theta.names[j]] = g[j];
        doc["gradient"] = grad;
    } else {
        doc["loglik"] = ev.log_likelihood(theta.values);
    }
    json th = json::object();
    for (std::size_t j = 0; j < theta.size(); ++j) th[theta.names[j]] = theta.values[j];
    doc["theta"] = th;
    doc["transitions"] = ev.counts().total;
    doc["columns_evaluated"] = ev.columns_evaluated();
    doc["floored_cells"] = ev.floored_cells();
    if (ev.floored_cells() > 0)
        std::cerr << "ctdc loglik: warning: " << ev.floored_cells()
                  << " observed transitions have probability below the floor\n";
    with_output(a.out, [&](std::ostream& os) { os << std::setprecision(17) << doc.dump(2) << '\n'; });
    return 0;
}

struct FitArgs {
    std::string config, data, out, gradient = "analytic";
    double delta = 1.0, tol = 1e-12, gtol = 1e-6, ftol = 1e-14;
    std::size_t max_iter = 500;
    std::vector<std::string> start;
};

int run_fit(const FitArgs& a) {
    const auto cfg = config::load_model_config(a.config);
    const auto mdl = config::make_structural_model(cfg);
    const auto start = apply_overrides(mdl->parameters(), a.start);
    const auto ds = load_dataset(a.data, a.delta);
    inference::FitOptions fo;
    fo.gradient = inference::parse_gradient_mode(a.gradient);
    fo.gtol = a.gtol;
    fo.ftol = a.ftol;
    fo.max_iterations = a.max_iter;
    fo.likelihood.eps = a.tol;
    const auto r = inference::fit_mle(*mdl, ds, start.values, fo);
    with_output(a.out, [&](std::ostream& os) { os << config::to_json(r).dump(2) << '\n'; });
    if (!r.converged) {
        std::cerr << "ctdc fit: optimizer did not converge (" << r.message << ")\n";
        return kExitNumeric;
    }
    return 0;
}

struct McArgs {
    std::string config, out, replications, save_config, gradient = "analytic";
    std::size_t players = 3, demand = 3, obs = 1000, reps = 25, threads = 0;
    std::uint64_t seed = 42;
    double delta = 1.0, burn_in = 100.0;
    std::vector<double> theta_true{-0.5, -0.05, 0.1, 1.0, 0.3}, theta_start;
};

int run_mc(const McArgs& a, const CLI::App& cmd) {
    inference::McConfig c;
    if (!a.config.empty()) {
        std::ifstream in(a.config);
        require(in.good(), ErrorCode::config, "cannot open config file '" + a.config + "'");
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            fail(ErrorCode::config, std::string("invalid JSON: ") + e.what());
        }
        c = config::parse_mc_config(j);
    }
    // Flags given on the command line win over the config file.
    auto given = [&](const char* name) { return a.config.empty() || cmd.count(name) > 0; };
    if (given("--players")) c.players = a.players;
    if (given("--demand")) c.demand = a.demand;
    if (given("--obs")) c.n_obs = a.obs;
    if (given("--reps")) c.n_reps = a.reps;
    if (given("--seed")) c.seed = a.seed;
    if (given("--delta")) c.delta = a.delta;
    if (given("--burn-in")) c.burn_in = a.burn_in;
    if (given("--threads")) c.threads = a.threads;
    if (given("--theta-true")) c.theta_true = a.theta_true;
    if (cmd.count("--theta-start") > 0) c.theta_start = a.theta_start;
    if (given("--gradient")) c.mode = config::parse_mc_config(json{{"gradient", a.gradient}}).mode;
    c = config::parse_mc_config(config::to_json(c));  // validates

    if (!a.save_config.empty())
        with_output(a.save_config, [&](std::ostream& os) { os << config::to_json(c).dump(2) << '\n'; });

    const auto result = inference::run_monte_carlo(c);
    for (const auto& s : result.summaries) {
        std::cout << "\nMonte Carlo: N = " << c.players << ", D = " << c.demand << ", " << c.n_obs << " obs, "
                  << c.n_reps << " replications, seed " << c.seed << '\n';
        inference::write_summary_table(std::cout, s);
    }
    for (const auto& r : result.replications)
        if (!r.ok) std::cerr << "ctdc mc: replication " << r.rep << " failed: " << r.error << '\n';
    if (!a.out.empty())
        with_output(a.out, [&](std::ostream& os) { inference::write_summary_csv(os, result.summaries); });
    if (!a.replications.empty())
        with_output(a.replications, [&](std::ostream& os) { inference::write_replications_csv(os, result); });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continuous-time dynamic discrete choice: uniformization, value solvers, snapshot MLE"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    std::function<int()> run;

    ExpmArgs expm;
    auto* c_expm = app.add_subcommand("expm", "exp(delta Q) v via uniformization, with optional derivatives");
    c_expm->add_option("--config", expm.config, "model config JSON")->required();
    c_expm->add_option("--delta", expm.delta, "time interval");
    c_expm->add_option("--vector", expm.vector, "e:<index> or a CSV file with one value per state");
    c_expm->add_option("--tol", expm.tol, "truncation tolerance eps");
    c_expm->add_option("--deriv", expm.deriv, "parameter to differentiate with respect to (repeatable)");
    c_expm->add_option("--theta", expm.theta, "parameter override name=value (repeatable)");
    c_expm->add_option("--out", expm.out, "output CSV (default stdout)");
    c_expm->callback([&] { run = [&] { return run_expm(expm); }; });

    SolveArgs solve;
    auto* c_solve = app.add_subcommand("solve", "value function of one player for fixed beliefs");
    c_solve->add_option("--config", solve.config, "model config JSON (renewal or entry_exit)")->required();
    c_solve->add_option("--method", solve.method, "vi, nk or rvi")->check(CLI::IsMember({"vi", "nk", "rvi"}));
    c_solve->add_option("--tol", solve.tol, "stopping tolerance");
    c_solve->add_option("--player", solve.player, "player index");
    c_solve->add_option("--max-iter", solve.max_iter, "iteration limit (nk is capped at 100)");
    c_solve->add_option("--warm-start", solve.warm_start, "value-iteration sweeps before Newton steps");
    c_solve->add_option("--out", solve.out, "value CSV (default: included in the JSON report)");
    c_solve->add_option("--report", solve.report, "JSON convergence report (default stdout)");
    c_solve->callback([&] { run = [&] { return run_solve(solve); }; });

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "simulate a snapshot panel at the configured parameters");
    c_sim->add_option("--config", sim.config, "model config JSON")->required();
    c_sim->add_option("--markets", sim.markets, "number of markets");
    c_sim->add_option("--obs", sim.obs, "transitions per market");
    c_sim->add_option("--delta", sim.delta, "snapshot spacing");
    c_sim->add_option("--burn-in", sim.burn_in, "burn-in length in units of delta");
    c_sim->add_option("--seed", sim.seed, "random seed");
    c_sim->add_option("--theta", sim.theta, "parameter override name=value (repeatable)");
    c_sim->add_option("--out", sim.out, "dataset CSV (default stdout)");
    c_sim->callback([&] { run = [&] { return run_simulate(sim); }; });

    LoglikArgs ll;
    auto* c_ll = app.add_subcommand("loglik", "log likelihood of a snapshot panel");
    c_ll->add_option("--config", ll.config, "model config JSON")->required();
    c_ll->add_option("--data", ll.data, "dataset CSV (market_id,obs_index,state_index)")->required();
    c_ll->add_option("--delta", ll.delta, "snapshot spacing");
    c_ll->add_option("--theta", ll.theta, "parameter override name=value (repeatable)");
    c_ll->add_flag("--gradient", ll.gradient, "also report the analytic gradient");
    c_ll->add_option("--tol", ll.tol, "truncation tolerance eps");
    c_ll->add_option("--out", ll.out, "output JSON (default stdout)");
    c_ll->callback([&] { run = [&] { return run_loglik(ll); }; });

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit", "maximum likelihood estimate from a snapshot panel");
    c_fit->add_option("--config", fit.config, "model config JSON")->required();
    c_fit->add_option("--data", fit.data, "dataset CSV (market_id,obs_index,state_index)")->required();
    c_fit->add_option("--delta", fit.delta, "snapshot spacing");
    c_fit->add_option("--gradient", fit.gradient, "analytic or numeric")
        ->check(CLI::IsMember({"analytic", "numeric"}));
    c_fit->add_option("--start", fit.start, "starting value override name=value (repeatable)");
    c_fit->add_option("--gtol", fit.gtol, "projected-gradient tolerance");
    c_fit->add_option("--ftol", fit.ftol, "relative log-likelihood change tolerance");
    c_fit->add_option("--max-iter", fit.max_iter, "optimizer iteration limit");
    c_fit->add_option("--tol", fit.tol, "truncation tolerance eps");
    c_fit->add_option("--out", fit.out, "EstimationResult JSON (default stdout)");
    c_fit->callback([&] { run = [&] { return run_fit(fit); }; });

    McArgs mc;
    auto* c_mc = app.add_subcommand("mc", "Monte Carlo replications of the entry-exit estimator");
    c_mc->add_option("--config", mc.config, "Monte Carlo config JSON; flags override it");
    c_mc->add_option("--players", mc.players, "number of firms N");
    c_mc->add_option("--demand", mc.demand, "number of demand states D");
    c_mc->add_option("--obs", mc.obs, "observed transitions per replication");
    c_mc->add_option("--reps", mc.reps, "replications");
    c_mc->add_option("--seed", mc.seed, "random seed");
    c_mc->add_option("--delta", mc.delta, "snapshot spacing");
    c_mc->add_option("--burn-in", mc.burn_in, "burn-in length in units of delta");
    c_mc->add_option("--gradient", mc.gradient, "analytic, numeric or both")
        ->check(CLI::IsMember({"analytic", "numeric", "both"}));
    c_mc->add_option("--threads", mc.threads, "worker threads, 0 = all cores");
    c_mc->add_option("--theta-true", mc.theta_true, "true (theta_ec theta_rn theta_d lambda gamma)")
        ->expected(5);
    c_mc->add_option("--theta-start", mc.theta_start, "starting values (default: the truth)")->expected(5);
    c_mc->add_option("--out", mc.out, "summary CSV");
    c_mc->add_option("--replications", mc.replications, "per-replication CSV");
    c_mc->add_option("--save-config", mc.save_config, "write the effective config as JSON");
    c_mc->callback([&] { run = [&] { return run_mc(mc, *c_mc); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }
    try {
        return run();
    } catch (const Error& e) {
        std::cerr << "ctdc: " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "ctdc: internal error: " << e.what() << '\n';
        return kExitInternal;
    }
}
