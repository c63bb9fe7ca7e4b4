#include "ctdc/ctmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctdc/error.hpp"

namespace ctdc::ctmc {

using sparse::CsrMatrix;
using sparse::Index;

namespace {

// Q's structure with every diagonal position present. Returns the structure
// and, for each of Q's stored entries, its position in the new value array.
struct DiagonalClosure {
    std::shared_ptr<const sparse::CsrStructure> structure;
    std::vector<Index> remap;
    std::vector<Index> diagonal;  // position of (k, k)
};

DiagonalClosure close_diagonal(const CsrMatrix& q) {
    const Index n = q.rows();
    bool complete = true;
    for (Index k = 0; k < n && complete; ++k) complete = q.position(k, k).has_value();

    DiagonalClosure out;
    if (complete) {
        out.structure = q.structure();
        out.remap.resize(q.nnz());
        for (Index p = 0; p < q.nnz(); ++p) out.remap[p] = p;
    } else {
        sparse::CooMatrix coo(n, n);
        const auto rp = q.row_ptr();
        const auto ci = q.col_idx();
        for (Index r = 0; r < n; ++r) {
            for (Index p = rp[r]; p < rp[r + 1]; ++p) coo.push_back(r, ci[p], 0.0);
            if (!q.position(r, r)) coo.push_back(r, r, 0.0);
        }
        CsrMatrix closed = sparse::coo_to_csr(coo);
        out.structure = closed.structure();
        out.remap.resize(q.nnz());
        for (Index r = 0; r < n; ++r)
            for (Index p = rp[r]; p < rp[r + 1]; ++p) out.remap[p] = *closed.position(r, ci[p]);
    }
    out.diagonal.resize(n);
    for (Index k = 0; k < n; ++k) out.diagonal[k] = *out.structure->find(k, k);
    return out;
}

// Values of a * Q + b * I on the diagonal closure of Q.
std::vector<double> shifted_values(const CsrMatrix& q, const DiagonalClosure& closure, double a,
                                   double b) {
    std::vector<double> values(closure.structure->nnz(), 0.0);
    const auto qv = q.values();
    for (Index p = 0; p < q.nnz(); ++p) values[closure.remap[p]] = a * qv[p];
    for (Index pos : closure.diagonal) values[pos] += b;
    return values;
}

void check_eps(double eps) {
    require(eps > 0.0 && eps < 1.0, ErrorCode::invalid_argument,
            "tolerance eps must lie in (0, 1), got " + std::to_string(eps));
}

double resolve_rate(const IntensityMatrix& q, std::optional<double> eta) {
    if (!eta) return default_uniform_rate(q);
    require(std::isfinite(*eta) && *eta > 0.0, ErrorCode::invalid_argument,
            "uniform rate must be positive and finite");
    require(*eta >= q.max_exit_rate(), ErrorCode::invalid_argument,
            "uniform rate " + std::to_string(*eta) + " is below max |q_kk| = " +
                std::to_string(q.max_exit_rate()));
    return *eta;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> IntensityMatrix::exit_rates() const {
    std::vector<double> rates(size(), 0.0);
    for (Index k = 0; k < size(); ++k) rates[k] = -q_.at(k, k);
    return rates;
}

IntensityMatrix validate_generator(CsrMatrix q) {
    require(q.rows() == q.cols(), ErrorCode::dimension_mismatch,
            "generator must be square, got " + std::to_string(q.rows()) + "x" +
                std::to_string(q.cols()));
    const auto rp = q.row_ptr();
    const auto ci = q.col_idx();
    const auto qv = q.values();
    double max_exit = 0.0;
    for (Index r = 0; r < q.rows(); ++r) {
        double sum = 0.0, abs_sum = 0.0, off_mass = 0.0;
        bool has_diag = false;
        for (Index p = rp[r]; p < rp[r + 1]; ++p) {
            const double x = qv[p];
            require(std::isfinite(x), ErrorCode::numeric,
                    "generator has a non-finite entry in row " + std::to_string(r));
            if (ci[p] == r) {
                has_diag = true;
                require(x <= 0.0, ErrorCode::invalid_argument,
                        "generator has a positive diagonal in row " + std::to_string(r));
                max_exit = std::max(max_exit, -x);
            } else {
                require(x >= 0.0, ErrorCode::invalid_argument,
                        "generator has a negative off-diagonal at (" + std::to_string(r) + "," +
                            std::to_string(ci[p]) + ")");
                off_mass += x;
            }
            sum += x;
            abs_sum += std::abs(x);
        }
        require(has_diag || off_mass == 0.0, ErrorCode::invalid_argument,
                "generator row " + std::to_string(r) + " has off-diagonal mass but no diagonal entry");
        require(std::abs(sum) <= kRowSumTolerance * std::max(1.0, abs_sum), ErrorCode::invalid_argument,
                "generator row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
    return IntensityMatrix(std::move(q), max_exit);
}

double default_uniform_rate(const IntensityMatrix& q) {
    const double m = q.max_exit_rate();
    return m + 1e-8 * std::max(1.0, m);
}

UniformizedChain uniformize(const IntensityMatrix& q, std::optional<double> eta) {
    const double rate = resolve_rate(q, eta);
    const DiagonalClosure closure = close_diagonal(q.matrix());
    return {rate, CsrMatrix(closure.structure, shifted_values(q.matrix(), closure, 1.0 / rate, 1.0))};
}

std::size_t truncation_point(double rate, double eps) {
    check_eps(eps);
    require(std::isfinite(rate) && rate >= 0.0, ErrorCode::invalid_argument,
            "Poisson rate must be nonnegative and finite");
    require(rate <= kMaxPoissonRate, ErrorCode::numeric,
            "Poisson rate " + std::to_string(rate) + " exceeds the supported maximum of 700");
    if (rate == 0.0) return 0;

    // Log pmf by upward recurrence, carried past the mode until the terms are
    // negligible relative to eps; the tail is then accumulated from the top
    // so that small terms are summed first.
    const double log_rate = std::log(rate);
    const double log_eps = std::log(eps);
    std::vector<double> log_pmf{-rate};
    for (std::size_t j = 1;; ++j) {
        log_pmf.push_back(log_pmf.back() + log_rate - std::log(static_cast<double>(j)));
        if (static_cast<double>(j) > rate && log_pmf.back() < log_eps - 40.0) break;
    }

    // log_tail[J] = log sum_{j > J} pmf(j)
    const std::size_t top = log_pmf.size() - 1;
    std::vector<double> log_tail(top + 1, -std::numeric_limits<double>::infinity());
    for (std::size_t J = top; J-- > 0;) {
        const double a = log_tail[J + 1];
        const double b = log_pmf[J + 1];
        const double hi = std::max(a, b);
        log_tail[J] = hi + std::log1p(std::exp(std::min(a, b) - hi));
    }
    for (std::size_t J = 0; J <= top; ++J)
        if (log_tail[J] < log_eps) return J;
    return top;
}

// ---------------------------------------------------------------------------

Uniformization::Uniformization(const IntensityMatrix& q, double delta, double eps,
                               std::optional<double> eta)
    : delta_(delta), eta_(resolve_rate(q, eta)), terms_(0) {
    check_eps(eps);
    require(std::isfinite(delta) && delta >= 0.0, ErrorCode::invalid_argument,
            "time interval must be nonnegative and finite");
    terms_ = truncation_point(eta_ * delta_, eps);
    const DiagonalClosure closure = close_diagonal(q.matrix());
    scaled_sigma_ = CsrMatrix(closure.structure,
                              shifted_values(q.matrix(), closure, delta_, eta_ * delta_));
}

std::vector<double> Uniformization::apply(std::span<const double> v) const {
    std::vector<double> mu;
    std::vector<std::vector<double>> unused;
    apply_with_derivatives({}, v, mu, unused);
    return mu;
}

std::vector<double> Uniformization::apply_transpose(std::span<const double> p) const {
    const std::size_t n = size();
    require(p.size() == n, ErrorCode::dimension_mismatch,
            "propagate: vector length " + std::to_string(p.size()) + " does not match K = " +
                std::to_string(n));
    const CsrMatrix st = sparse::transpose(scaled_sigma_);
    std::vector<double> nu(p.begin(), p.end()), next(n), mu(p.begin(), p.end());
    for (std::size_t j = 1; j <= terms_; ++j) {
        const double inv_j = 1.0 / static_cast<double>(j);
        sparse::spmv(st, nu, next);
        for (std::size_t k = 0; k < n; ++k) {
            nu[k] = next[k] * inv_j;
            mu[k] += nu[k];
        }
    }
    const double scale = std::exp(-eta_delta());
    for (auto& x : mu) x *= scale;
    return mu;
}

void Uniformization::apply_with_derivatives(std::span<const CsrMatrix> dq,
                                            std::span<const double> v, std::vector<double>& mu,
                                            std::vector<std::vector<double>>& mu_alpha) const {
    const std::size_t n = size();
    require(v.size() == n, ErrorCode::dimension_mismatch,
            "expmv: vector length " + std::to_string(v.size()) + " does not match K = " +
                std::to_string(n));
    for (const auto& d : dq) {
        require(d.rows() == n && d.cols() == n, ErrorCode::dimension_mismatch,
                "expmvd: derivative matrix dimension mismatch");
    }
    const std::size_t n_par = dq.size();

    std::vector<double> nu(v.begin(), v.end());
    std::vector<double> next(n);
    mu.assign(v.begin(), v.end());

    // delta_j = (eta*Delta / j) [dSigma nu_{j-1} + Sigma delta_{j-1}], delta_0 = 0,
    // written with Delta * dQ = eta * Delta * dSigma.
    std::vector<std::vector<double>> deriv(n_par, std::vector<double>(n, 0.0));
    std::vector<double> deriv_next(n_par > 0 ? n : 0);
    mu_alpha.assign(n_par, std::vector<double>(n, 0.0));

    for (std::size_t j = 1; j <= terms_; ++j) {
        const double inv_j = 1.0 / static_cast<double>(j);
        for (std::size_t a = 0; a < n_par; ++a) {
            sparse::spmv(scaled_sigma_, deriv[a], deriv_next);
            sparse::spmv_add(dq[a], delta_, nu, deriv_next);
            for (std::size_t k = 0; k < n; ++k) {
                deriv[a][k] = deriv_next[k] * inv_j;
                mu_alpha[a][k] += deriv[a][k];
            }
        }
        sparse::spmv(scaled_sigma_, nu, next);
        for (std::size_t k = 0; k < n; ++k) {
            nu[k] = next[k] * inv_j;
            mu[k] += nu[k];
        }
    }

    const double scale = std::exp(-eta_delta());
    for (auto& x : mu) x *= scale;
    for (auto& m : mu_alpha)
        for (auto& x : m) x *= scale;
}

std::vector<double> expmv(const IntensityMatrix& q, double delta, std::span<const double> v,
                          double eps, std::optional<double> eta) {
    return Uniformization(q, delta, eps, eta).apply(v);
}

std::vector<double> propagate(const IntensityMatrix& q, double delta, std::span<const double> p, double eps,
                              std::optional<double> eta) {
    return Uniformization(q, delta, eps, eta).apply_transpose(p);
}

ExpmvdResult expmvd(const IntensityMatrix& q, std::span<const CsrMatrix> dq, double delta,
                    std::span<const double> v, double eps, std::optional<double> eta) {
    ExpmvdResult out;
    Uniformization(q, delta, eps, eta).apply_with_derivatives(dq, v, out.mu, out.mu_alpha);
    return out;
}

// ---------------------------------------------------------------------------

DenseMatrix dense_expm_oracle(const IntensityMatrix& q, double delta) {
    const std::size_t n = q.size();
    require(n <= kDenseOracleMaxStates, ErrorCode::invalid_argument,
            "dense_expm_oracle: K = " + std::to_string(n) + " exceeds the test-scale guard");
    using Real = long double;
    std::vector<Real> a(n * n, 0.0L);
    const auto dense = sparse::to_dense(q.matrix());
    Real norm = 0.0L;
    for (std::size_t r = 0; r < n; ++r) {
        Real row = 0.0L;
        for (std::size_t c = 0; c < n; ++c) {
            a[r * n + c] = static_cast<Real>(delta) * static_cast<Real>(dense[r * n + c]);
            row += std::fabs(a[r * n + c]);
        }
        norm = std::max(norm, row);
    }
    int squarings = 0;
    while (norm > 0.25L) {
        norm /= 2.0L;
        ++squarings;
    }
    const Real scale = std::ldexp(1.0L, -squarings);
    for (auto& x : a) x *= scale;

    auto multiply = [n](const std::vector<Real>& x, const std::vector<Real>& y) {
        std::vector<Real> z(n * n, 0.0L);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t m = 0; m < n; ++m) {
                const Real xr = x[r * n + m];
                if (xr == 0.0L) continue;
                for (std::size_t c = 0; c < n; ++c) z[r * n + c] += xr * y[m * n + c];
            }
        return z;
    };

    std::vector<Real> result(n * n, 0.0L), term(n * n, 0.0L);
    for (std::size_t k = 0; k < n; ++k) result[k * n + k] = term[k * n + k] = 1.0L;
    for (int j = 1; j <= 30; ++j) {
        term = multiply(term, a);
        for (auto& x : term) x /= static_cast<Real>(j);
        for (std::size_t p = 0; p < n * n; ++p) result[p] += term[p];
    }
    for (int s = 0; s < squarings; ++s) result = multiply(result, result);

    DenseMatrix out{n, std::vector<double>(n * n)};
    for (std::size_t p = 0; p < n * n; ++p) out.data[p] = static_cast<double>(result[p]);
    return out;
}

}  // namespace ctdc::ctmc
