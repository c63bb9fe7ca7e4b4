#include "ctdc/sparse.hpp"

#include <algorithm>
#include <atomic>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "ctdc/error.hpp"

namespace ctdc::sparse {

namespace {

std::atomic<std::uint64_t> g_structure_builds{0};

std::shared_ptr<const CsrStructure> make_structure(CsrStructure s) {
    g_structure_builds.fetch_add(1, std::memory_order_relaxed);
    return std::make_shared<const CsrStructure>(std::move(s));
}

}  // namespace

std::uint64_t structure_builds() { return g_structure_builds.load(std::memory_order_relaxed); }

void CooMatrix::push_back(Index row, Index col, double value) {
    row_idx.push_back(row);
    col_idx.push_back(col);
    values.push_back(value);
}

std::optional<Index> CsrStructure::find(Index row, Index col) const {
    if (row >= n_rows) return std::nullopt;
    auto first = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[row]);
    auto last = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[row + 1]);
    auto it = std::lower_bound(first, last, col);
    if (it == last || *it != col) return std::nullopt;
    return static_cast<Index>(it - col_idx.begin());
}

// ---------------------------------------------------------------------------

CsrMatrix::CsrMatrix() : structure_(std::make_shared<const CsrStructure>(CsrStructure{0, 0, {0}, {}})) {}

CsrMatrix::CsrMatrix(std::shared_ptr<const CsrStructure> structure, std::vector<double> values)
    : structure_(std::move(structure)), values_(std::move(values)) {
    require(structure_ != nullptr, ErrorCode::invalid_argument, "CsrMatrix: null structure");
    require(values_.size() == structure_->nnz(), ErrorCode::dimension_mismatch,
            "CsrMatrix: value array length does not match structure");
}

CsrMatrix CsrMatrix::identity(Index n) {
    CsrStructure s{n, n, std::vector<Index>(n + 1), std::vector<Index>(n)};
    std::iota(s.row_ptr.begin(), s.row_ptr.end(), Index{0});
    std::iota(s.col_idx.begin(), s.col_idx.end(), Index{0});
    return CsrMatrix(make_structure(std::move(s)), std::vector<double>(n, 1.0));
}

CsrMatrix CsrMatrix::zeros_like(const CsrMatrix& other) {
    return CsrMatrix(other.structure_, std::vector<double>(other.nnz(), 0.0));
}

double CsrMatrix::at(Index row, Index col) const {
    auto pos = structure_->find(row, col);
    return pos ? values_[*pos] : 0.0;
}

void CsrMatrix::assign_values(std::vector<double> values) {
    require(values.size() == values_.size(), ErrorCode::dimension_mismatch,
            "assign_values: length mismatch");
    values_ = std::move(values);
}

// ---------------------------------------------------------------------------

CsrMatrix coo_to_csr(const CooMatrix& a) {
    const Index nnz = a.nnz();
    require(a.row_idx.size() == nnz && a.col_idx.size() == nnz, ErrorCode::dimension_mismatch,
            "coo_to_csr: row/col/value arrays differ in length");
    for (Index e = 0; e < nnz; ++e) {
        if (a.row_idx[e] >= a.n_rows || a.col_idx[e] >= a.n_cols) {
            fail(ErrorCode::dimension_mismatch,
                 "coo_to_csr: entry (" + std::to_string(a.row_idx[e]) + "," +
                     std::to_string(a.col_idx[e]) + ") outside " + std::to_string(a.n_rows) + "x" +
                     std::to_string(a.n_cols));
        }
    }

    std::vector<Index> order(nnz);
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index x, Index y) {
        return a.row_idx[x] != a.row_idx[y] ? a.row_idx[x] < a.row_idx[y]
                                            : a.col_idx[x] < a.col_idx[y];
    });

    CsrStructure s{a.n_rows, a.n_cols, std::vector<Index>(a.n_rows + 1, 0), {}};
    s.col_idx.reserve(nnz);
    std::vector<double> values;
    values.reserve(nnz);
    for (Index e = 0; e < nnz; ++e) {
        const Index src = order[e];
        if (e > 0) {
            const Index prev = order[e - 1];
            if (a.row_idx[prev] == a.row_idx[src] && a.col_idx[prev] == a.col_idx[src]) {
                fail(ErrorCode::pattern, "coo_to_csr: duplicate entry (" +
                                             std::to_string(a.row_idx[src]) + "," +
                                             std::to_string(a.col_idx[src]) + ")");
            }
        }
        ++s.row_ptr[a.row_idx[src] + 1];
        s.col_idx.push_back(a.col_idx[src]);
        values.push_back(a.values[src]);
    }
    std::partial_sum(s.row_ptr.begin(), s.row_ptr.end(), s.row_ptr.begin());
    return CsrMatrix(make_structure(std::move(s)), std::move(values));
}

CsrMatrix csr_to_csc(const CsrMatrix& a) {
    const Index rows = a.rows();
    const Index cols = a.cols();
    const auto rp = a.row_ptr();
    const auto ci = a.col_idx();
    const auto av = a.values();

    CsrStructure t{cols, rows, std::vector<Index>(cols + 1, 0), std::vector<Index>(a.nnz())};
    for (Index c : ci) ++t.row_ptr[c + 1];
    std::partial_sum(t.row_ptr.begin(), t.row_ptr.end(), t.row_ptr.begin());

    std::vector<Index> next(t.row_ptr.begin(), t.row_ptr.end() - 1);
    std::vector<double> values(a.nnz());
    // Rows are visited in increasing order, so each transposed row comes out sorted.
    for (Index r = 0; r < rows; ++r) {
        for (Index p = rp[r]; p < rp[r + 1]; ++p) {
            const Index dst = next[ci[p]]++;
            t.col_idx[dst] = r;
            values[dst] = av[p];
        }
    }
    return CsrMatrix(make_structure(std::move(t)), std::move(values));
}

void spmv(const CsrMatrix& a, std::span<const double> x, std::span<double> y) {
    require(x.size() == a.cols() && y.size() == a.rows(), ErrorCode::dimension_mismatch,
            "spmv: dimension mismatch");
    const auto rp = a.row_ptr();
    const auto ci = a.col_idx();
    const auto av = a.values();
    for (Index r = 0; r < a.rows(); ++r) {
        double sum = 0.0;
        for (Index p = rp[r]; p < rp[r + 1]; ++p) sum += av[p] * x[ci[p]];
        y[r] = sum;
    }
}

std::vector<double> spmv(const CsrMatrix& a, std::span<const double> x) {
    std::vector<double> y(a.rows());
    spmv(a, x, y);
    return y;
}

void spmv_add(const CsrMatrix& a, double alpha, std::span<const double> x, std::span<double> y) {
    require(x.size() == a.cols() && y.size() == a.rows(), ErrorCode::dimension_mismatch,
            "spmv_add: dimension mismatch");
    const auto rp = a.row_ptr();
    const auto ci = a.col_idx();
    const auto av = a.values();
    for (Index r = 0; r < a.rows(); ++r) {
        double sum = 0.0;
        for (Index p = rp[r]; p < rp[r + 1]; ++p) sum += av[p] * x[ci[p]];
        y[r] += alpha * sum;
    }
}

std::vector<double> to_dense(const CsrMatrix& a) {
    std::vector<double> d(a.rows() * a.cols(), 0.0);
    const auto rp = a.row_ptr();
    const auto ci = a.col_idx();
    const auto av = a.values();
    for (Index r = 0; r < a.rows(); ++r)
        for (Index p = rp[r]; p < rp[r + 1]; ++p) d[r * a.cols() + ci[p]] = av[p];
    return d;
}

std::vector<double> to_dense(const CooMatrix& a) {
    std::vector<double> d(a.n_rows * a.n_cols, 0.0);
    for (Index e = 0; e < a.nnz(); ++e) d[a.row_idx[e] * a.n_cols + a.col_idx[e]] += a.values[e];
    return d;
}

// ---------------------------------------------------------------------------

SparsityPattern SparsityPattern::build(Index n_rows, Index n_cols,
                                       std::span<const SlotEntry> entries) {
    CooMatrix coo(n_rows, n_cols);
    coo.row_idx.reserve(entries.size());
    coo.col_idx.reserve(entries.size());
    coo.values.reserve(entries.size());
    for (const auto& e : entries) coo.push_back(e.row, e.col, 0.0);
    CsrMatrix csr = coo_to_csr(coo);

    auto map = std::make_shared<std::map<SlotKey, Index>>();
    for (const auto& e : entries) {
        require(e.key.kind != SlotKey::Kind::coordinate, ErrorCode::pattern,
                "SparsityPattern: coordinate keys are implicit and cannot be registered");
        auto [it, inserted] = map->emplace(e.key, *csr.position(e.row, e.col));
        require(inserted, ErrorCode::pattern, "SparsityPattern: duplicate slot key");
    }

    SparsityPattern p;
    p.structure_ = csr.structure();
    p.addresses_ = std::move(map);
    return p;
}

bool SparsityPattern::contains(const SlotKey& key) const {
    if (!structure_) return false;
    if (key.kind == SlotKey::Kind::coordinate) return structure_->find(key.id[0], key.id[1]).has_value();
    return addresses_->count(key) > 0;
}

Index SparsityPattern::address(const SlotKey& key) const {
    require(structure_ != nullptr, ErrorCode::pattern, "SparsityPattern: empty pattern");
    if (key.kind == SlotKey::Kind::coordinate) {
        auto pos = structure_->find(key.id[0], key.id[1]);
        if (!pos) {
            fail(ErrorCode::pattern, "SparsityPattern: no structural entry at (" +
                                         std::to_string(key.id[0]) + "," +
                                         std::to_string(key.id[1]) + ")");
        }
        return *pos;
    }
    auto it = addresses_->find(key);
    require(it != addresses_->end(), ErrorCode::pattern, "SparsityPattern: unknown address");
    return it->second;
}

CsrMatrix SparsityPattern::zeros() const {
    require(structure_ != nullptr, ErrorCode::pattern, "SparsityPattern: empty pattern");
    return CsrMatrix(structure_, std::vector<double>(structure_->nnz(), 0.0));
}

void update_values(const SparsityPattern& pattern, std::span<const Assignment> assignments,
                   CsrMatrix& target) {
    require(pattern.structure() != nullptr && target.structure() == pattern.structure(),
            ErrorCode::pattern, "update_values: target does not carry this pattern");
    // Resolve every address before writing so a bad key leaves target untouched.
    std::vector<Index> positions;
    positions.reserve(assignments.size());
    for (const auto& a : assignments) positions.push_back(pattern.address(a.key));

    std::vector<double> values(target.values().begin(), target.values().end());
    for (std::size_t n = 0; n < assignments.size(); ++n) values[positions[n]] = assignments[n].value;
    target.assign_values(std::move(values));
}

// ---------------------------------------------------------------------------

void write_matrix_market(std::ostream& out, const CsrMatrix& a) {
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << a.rows() << ' ' << a.cols() << ' ' << a.nnz() << '\n';
    out.precision(17);
    const auto rp = a.row_ptr();
    const auto ci = a.col_idx();
    const auto av = a.values();
    for (Index r = 0; r < a.rows(); ++r)
        for (Index p = rp[r]; p < rp[r + 1]; ++p) out << r + 1 << ' ' << ci[p] + 1 << ' ' << av[p] << '\n';
}

CooMatrix read_matrix_market(std::istream& in) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line.rfind("%%MatrixMarket", 0) == 0,
            ErrorCode::data_format, "read_matrix_market: missing banner");
    require(line.find("coordinate") != std::string::npos, ErrorCode::data_format,
            "read_matrix_market: only coordinate format is supported");
    while (std::getline(in, line) && (line.empty() || line[0] == '%')) {
    }
    std::istringstream header(line);
    Index rows = 0, cols = 0, nnz = 0;
    require(static_cast<bool>(header >> rows >> cols >> nnz), ErrorCode::data_format,
            "read_matrix_market: bad size line");
    CooMatrix coo(rows, cols);
    for (Index e = 0; e < nnz; ++e) {
        Index r = 0, c = 0;
        double v = 0.0;
        require(static_cast<bool>(in >> r >> c >> v) && r >= 1 && c >= 1, ErrorCode::data_format,
                "read_matrix_market: bad entry line");
        coo.push_back(r - 1, c - 1, v);
    }
    return coo;
}

}  // namespace ctdc::sparse
