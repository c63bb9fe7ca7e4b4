#include "ctdc/config.hpp"

#include <fstream>
#include <set>

#include "ctdc/error.hpp"
#include "ctdc/solver.hpp"

namespace ctdc::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    require(j.is_object(), ErrorCode::config, where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        require(allowed.count(key) > 0, ErrorCode::config, "unknown key '" + key + "' in " + where);
}

double number(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    require(j.at(key).is_number(), ErrorCode::config, std::string("'") + key + "' must be a number");
    return j.at(key).get<double>();
}

std::size_t count(const json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    require(j.at(key).is_number_unsigned() || (j.at(key).is_number_integer() && j.at(key).get<long long>() >= 0),
            ErrorCode::config, std::string("'") + key + "' must be a nonnegative integer");
    return j.at(key).get<std::size_t>();
}

std::vector<double> numbers(const json& j, const char* key) {
    require(j.at(key).is_array(), ErrorCode::config, std::string("'") + key + "' must be an array");
    std::vector<double> out;
    for (const auto& x : j.at(key)) {
        require(x.is_number(), ErrorCode::config, std::string("'") + key + "' must hold numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

bool same(const model::RenewalParams& a, const model::RenewalParams& b) {
    return a.states == b.states && a.gamma == b.gamma && a.lambda == b.lambda && a.beta == b.beta &&
           a.mu == b.mu && a.rho == b.rho && a.shock_scale == b.shock_scale;
}

bool same(const model::EntryExitParams& a, const model::EntryExitParams& b) {
    return a.players == b.players && a.demand == b.demand && a.theta_ec == b.theta_ec &&
           a.theta_rn == b.theta_rn && a.theta_d == b.theta_d && a.lambda == b.lambda && a.gamma == b.gamma &&
           a.rho == b.rho && a.shock_scale == b.shock_scale;
}

}  // namespace

const char* to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::renewal: return "renewal";
        case ModelKind::entry_exit: return "entry_exit";
        case ModelKind::two_state: return "two_state";
    }
    return "?";
}

bool ModelConfig::operator==(const ModelConfig& o) const {
    return kind == o.kind && same(renewal, o.renewal) && replace_probabilities == o.replace_probabilities &&
           same(entry_exit, o.entry_exit) && alpha == o.alpha && beta == o.beta;
}

ModelConfig parse_model_config(const json& j) {
    require(j.is_object() && j.contains("model") && j.at("model").is_string(), ErrorCode::config,
            "config needs a string field 'model'");
    const auto name = j.at("model").get<std::string>();
    ModelConfig c;
    const json params = j.value("parameters", json::object());
    if (name == "renewal") {
        c.kind = ModelKind::renewal;
        check_keys(j, {"model", "states", "parameters", "shock_scale", "replace_probabilities"}, "renewal config");
        check_keys(params, {"gamma", "lambda", "beta", "mu", "rho"}, "renewal parameters");
        auto& p = c.renewal;
        p.states = count(j, "states", p.states);
        p.gamma = number(params, "gamma", p.gamma);
        p.lambda = number(params, "lambda", p.lambda);
        p.beta = number(params, "beta", p.beta);
        p.mu = number(params, "mu", p.mu);
        p.rho = number(params, "rho", p.rho);
        p.shock_scale = number(j, "shock_scale", p.shock_scale);
        if (j.contains("replace_probabilities")) {
            c.replace_probabilities = numbers(j, "replace_probabilities");
            require(c.replace_probabilities->size() == p.states, ErrorCode::config,
                    "replace_probabilities needs one entry per state");
        }
    } else if (name == "entry_exit") {
        c.kind = ModelKind::entry_exit;
        check_keys(j, {"model", "players", "demand", "parameters", "shock_scale"}, "entry_exit config");
        check_keys(params, {"theta_ec", "theta_rn", "theta_d", "lambda", "gamma", "rho"}, "entry_exit parameters");
        auto& p = c.entry_exit;
        p.players = count(j, "players", p.players);
        p.demand = count(j, "demand", p.demand);
        p.theta_ec = number(params, "theta_ec", p.theta_ec);
        p.theta_rn = number(params, "theta_rn", p.theta_rn);
        p.theta_d = number(params, "theta_d", p.theta_d);
        p.lambda = number(params, "lambda", p.lambda);
        p.gamma = number(params, "gamma", p.gamma);
        p.rho = number(params, "rho", p.rho);
        p.shock_scale = number(j, "shock_scale", p.shock_scale);
    } else if (name == "two_state") {
        c.kind = ModelKind::two_state;
        check_keys(j, {"model", "parameters"}, "two_state config");
        check_keys(params, {"alpha", "beta"}, "two_state parameters");
        c.alpha = number(params, "alpha", c.alpha);
        c.beta = number(params, "beta", c.beta);
    } else {
        fail(ErrorCode::config, "unknown model '" + name + "' (expected renewal, entry_exit or two_state)");
    }
    return c;
}

json to_json(const ModelConfig& c) {
    json j;
    j["model"] = to_string(c.kind);
    switch (c.kind) {
        case ModelKind::renewal: {
            const auto& p = c.renewal;
            j["states"] = p.states;
            j["parameters"] = {{"gamma", p.gamma}, {"lambda", p.lambda}, {"beta", p.beta},
                               {"mu", p.mu},       {"rho", p.rho}};
            j["shock_scale"] = p.shock_scale;
            if (c.replace_probabilities) j["replace_probabilities"] = *c.replace_probabilities;
            break;
        }
        case ModelKind::entry_exit: {
            const auto& p = c.entry_exit;
            j["players"] = p.players;
            j["demand"] = p.demand;
            j["parameters"] = {{"theta_ec", p.theta_ec}, {"theta_rn", p.theta_rn}, {"theta_d", p.theta_d},
                               {"lambda", p.lambda},     {"gamma", p.gamma},       {"rho", p.rho}};
            j["shock_scale"] = p.shock_scale;
            break;
        }
        case ModelKind::two_state:
            j["parameters"] = {{"alpha", c.alpha}, {"beta", c.beta}};
            break;
    }
    return j;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::config, "cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::config, "invalid JSON in '" + path + "': " + e.what());
    }
    return parse_model_config(j);
}

std::vector<double> optimal_replacement_probabilities(const model::RenewalParams& p) {
    const auto spec = model::build_renewal(p);
    const auto beliefs = model::CcpProfile::uniform(1, 2, p.states);
    const std::vector<double> v0(p.states, 0.0);
    solver::NewtonOptions opt;
    opt.tol = 1e-12;
    opt.warm_start_sweeps = 20;
    const auto nk = solver::newton_kantorovich(spec, beliefs, 0, v0, opt);
    require(nk.report.converged, ErrorCode::numeric, "could not solve the renewal model for its CCPs");
    const auto block = solver::ccp_from_value(spec, 0, nk.value);
    return {block.begin() + static_cast<std::ptrdiff_t>(p.states), block.end()};
}

std::unique_ptr<model::StructuralModel> make_structural_model(const ModelConfig& c) {
    switch (c.kind) {
        case ModelKind::renewal:
            return std::make_unique<model::RenewalModel>(
                c.renewal, c.replace_probabilities.value_or(optimal_replacement_probabilities(c.renewal)));
        case ModelKind::entry_exit:
            return std::make_unique<model::EntryExitModel>(c.entry_exit);
        case ModelKind::two_state:
            return std::make_unique<model::TwoStateModel>(c.alpha, c.beta);
    }
    fail(ErrorCode::config, "unknown model kind");
}

model::GameSpec make_game(const ModelConfig& c) {
    switch (c.kind) {
        case ModelKind::renewal: return model::build_renewal(c.renewal);
        case ModelKind::entry_exit: return model::build_entry_exit(c.entry_exit);
        case ModelKind::two_state: break;
    }
    fail(ErrorCode::config, "the two_state model has no players, so there is no value function to solve");
}

model::CcpProfile make_policy(const ModelConfig& c) {
    switch (c.kind) {
        case ModelKind::renewal:
            return model::renewal_ccps(
                c.replace_probabilities.value_or(optimal_replacement_probabilities(c.renewal)));
        case ModelKind::entry_exit: return model::entry_exit_ccps(c.entry_exit);
        case ModelKind::two_state: break;
    }
    fail(ErrorCode::config, "the two_state model has no players");
}

// ---------------------------------------------------------------------------

bool same_mc_config(const inference::McConfig& a, const inference::McConfig& b) {
    return a.players == b.players && a.demand == b.demand && a.n_obs == b.n_obs && a.n_reps == b.n_reps &&
           a.delta == b.delta && a.theta_true == b.theta_true && a.theta_start == b.theta_start &&
           a.seed == b.seed && a.mode == b.mode && a.threads == b.threads && a.burn_in == b.burn_in &&
           a.fit.gtol == b.fit.gtol && a.fit.ftol == b.fit.ftol && a.fit.max_iterations == b.fit.max_iterations &&
           a.fit.likelihood.eps == b.fit.likelihood.eps;
}

namespace {

inference::McMode parse_mode(const std::string& s) {
    if (s == "analytic") return inference::McMode::analytic;
    if (s == "numeric") return inference::McMode::numeric;
    if (s == "both") return inference::McMode::both;
    fail(ErrorCode::config, "gradient must be analytic, numeric or both, got '" + s + "'");
}

const char* mode_name(inference::McMode m) {
    switch (m) {
        case inference::McMode::analytic: return "analytic";
        case inference::McMode::numeric: return "numeric";
        case inference::McMode::both: return "both";
    }
    return "?";
}

}  // namespace

inference::McConfig parse_mc_config(const json& j) {
    check_keys(j,
               {"players", "demand", "obs", "reps", "delta", "theta_true", "theta_start", "seed", "gradient",
                "threads", "burn_in", "gtol", "ftol", "max_iterations", "eps"},
               "Monte Carlo config");
    inference::McConfig c;
    c.players = count(j, "players", c.players);
    c.demand = count(j, "demand", c.demand);
    c.n_obs = count(j, "obs", c.n_obs);
    c.n_reps = count(j, "reps", c.n_reps);
    c.delta = number(j, "delta", c.delta);
    if (j.contains("theta_true")) c.theta_true = numbers(j, "theta_true");
    if (j.contains("theta_start")) c.theta_start = numbers(j, "theta_start");
    c.seed = count(j, "seed", c.seed);
    if (j.contains("gradient")) {
        require(j.at("gradient").is_string(), ErrorCode::config, "'gradient' must be a string");
        c.mode = parse_mode(j.at("gradient").get<std::string>());
    }
    c.threads = count(j, "threads", c.threads);
    c.burn_in = number(j, "burn_in", c.burn_in);
    c.fit.gtol = number(j, "gtol", c.fit.gtol);
    c.fit.ftol = number(j, "ftol", c.fit.ftol);
    c.fit.max_iterations = count(j, "max_iterations", c.fit.max_iterations);
    c.fit.likelihood.eps = number(j, "eps", c.fit.likelihood.eps);
    require(c.theta_true.size() == 5, ErrorCode::config, "theta_true needs 5 values");
    require(!c.theta_start || c.theta_start->size() == 5, ErrorCode::config, "theta_start needs 5 values");
    return c;
}

json to_json(const inference::McConfig& c) {
    json j{{"players", c.players},
           {"demand", c.demand},
           {"obs", c.n_obs},
           {"reps", c.n_reps},
           {"delta", c.delta},
           {"theta_true", c.theta_true},
           {"seed", c.seed},
           {"gradient", mode_name(c.mode)},
           {"threads", c.threads},
           {"burn_in", c.burn_in},
           {"gtol", c.fit.gtol},
           {"ftol", c.fit.ftol},
           {"max_iterations", c.fit.max_iterations},
           {"eps", c.fit.likelihood.eps}};
    if (c.theta_start) j["theta_start"] = *c.theta_start;
    return j;
}

json to_json(const inference::EstimationResult& r) {
    json theta = json::object();
    for (std::size_t i = 0; i < r.theta_hat.size(); ++i) theta[r.theta_hat.names[i]] = r.theta_hat.values[i];
    return {{"theta_hat", theta},
            {"loglik", r.loglik},
            {"n_func_evals", r.n_func_evals},
            {"wall_time", r.wall_time},
            {"converged", r.converged},
            {"gradient_mode", inference::to_string(r.gradient_mode)},
            {"iterations", r.iterations},
            {"projected_gradient_norm", r.projected_gradient_norm},
            {"message", r.message}};
}

}  // namespace ctdc::config
