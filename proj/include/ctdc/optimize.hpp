#pragma once

// Box-constrained limited-memory BFGS: two-loop recursion on the free
// variables, projected backtracking line search. Minimizes.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ctdc::optimize {

struct Objective {
    /// f(x). Throwing or returning a non-finite value marks x as infeasible.
    std::function<double(std::span<const double>)> value;
    /// g(x) given f = value(x).
    std::function<void(std::span<const double>, double, std::span<double>)> gradient;
    /// When set, used for every evaluation instead of value + gradient.
    std::function<double(std::span<const double>, std::span<double>)> value_and_gradient;
};

struct Options {
    double gtol = 1e-6;   // sup-norm of the projected gradient
    double ftol = 1e-13;  // relative decrease of f between iterations
    std::size_t max_iterations = 500;
    std::size_t memory = 10;
    std::size_t max_backtracks = 60;
};

struct Result {
    std::vector<double> x;
    double f = 0.0;
    std::vector<double> gradient;
    double projected_gradient_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::string message;
};

/// x0 is clipped into [lower, upper] first.
Result minimize_bounded(const Objective& objective, std::vector<double> x0, const std::vector<double>& lower,
                        const std::vector<double>& upper, const Options& options = {});

}  // namespace ctdc::optimize
