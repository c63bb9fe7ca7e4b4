#pragma once

// JSON run configurations shared by the command-line tool and the tests.
// Unknown keys are rejected so that typos surface as config errors.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctdc/inference.hpp"
#include "ctdc/model.hpp"

namespace ctdc::config {

enum class ModelKind { renewal, entry_exit, two_state };

struct ModelConfig {
    ModelKind kind = ModelKind::renewal;
    model::RenewalParams renewal;
    /// Fixed replacement CCPs; when absent the optimal CCPs are solved for.
    std::optional<std::vector<double>> replace_probabilities;
    model::EntryExitParams entry_exit;
    double alpha = 0.2;  // two_state
    double beta = 0.1;

    bool operator==(const ModelConfig&) const;
};

const char* to_string(ModelKind kind);

/// Throws ErrorCode::config on schema violations.
ModelConfig parse_model_config(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig load_model_config(const std::string& path);

/// The estimable family described by the config, at its configured values.
std::unique_ptr<model::StructuralModel> make_structural_model(const ModelConfig& c);

/// Game primitives for the value-function solvers (renewal and entry_exit).
model::GameSpec make_game(const ModelConfig& c);

/// CCP profile used as beliefs about rivals and as the policy for policy
/// evaluation: fixed or solved replacement CCPs for renewal, the myopic entry
/// probabilities for entry_exit.
model::CcpProfile make_policy(const ModelConfig& c);

/// Optimal replacement probabilities of the renewal model (Newton-Kantorovich
/// after a value-iteration warm start).
std::vector<double> optimal_replacement_probabilities(const model::RenewalParams& p);

bool same_mc_config(const inference::McConfig& a, const inference::McConfig& b);
inference::McConfig parse_mc_config(const nlohmann::json& j);
nlohmann::json to_json(const inference::McConfig& c);

nlohmann::json to_json(const inference::EstimationResult& r);

}  // namespace ctdc::config
