#pragma once

// Sparse storage (COO, CSR, CSC-as-transposed-CSR) and kernels.
//
// Indexing is 0-based everywhere. A CSR matrix splits into a shared, immutable
// CsrStructure (row pointers + column indices) and an owned value array, so a
// sparsity pattern can be built once and reused while only values change.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace ctdc::sparse {

using Index = std::size_t;

struct CooMatrix {
    Index n_rows = 0;
    Index n_cols = 0;
    std::vector<Index> row_idx;
    std::vector<Index> col_idx;
    std::vector<double> values;

    CooMatrix() = default;
    CooMatrix(Index rows, Index cols) : n_rows(rows), n_cols(cols) {}

    Index nnz() const { return values.size(); }
    void push_back(Index row, Index col, double value);
};

struct CsrStructure {
    Index n_rows = 0;
    Index n_cols = 0;
    std::vector<Index> row_ptr;  // length n_rows + 1, row_ptr[0] == 0
    std::vector<Index> col_idx;  // strictly increasing within each row

    Index nnz() const { return col_idx.size(); }
    std::optional<Index> find(Index row, Index col) const;

    bool operator==(const CsrStructure&) const = default;
};

/// Number of CsrStructure objects built since process start. Used to check
/// that parameter updates never rebuild a sparsity pattern.
std::uint64_t structure_builds();

class CsrMatrix {
public:
    CsrMatrix();
    CsrMatrix(std::shared_ptr<const CsrStructure> structure, std::vector<double> values);

    static CsrMatrix identity(Index n);
    static CsrMatrix zeros_like(const CsrMatrix& other);

    Index rows() const { return structure_->n_rows; }
    Index cols() const { return structure_->n_cols; }
    Index nnz() const { return structure_->nnz(); }

    std::span<const Index> row_ptr() const { return structure_->row_ptr; }
    std::span<const Index> col_idx() const { return structure_->col_idx; }
    std::span<const double> values() const { return values_; }
    const std::shared_ptr<const CsrStructure>& structure() const { return structure_; }

    bool shares_structure_with(const CsrMatrix& other) const {
        return structure_ == other.structure_;
    }

    std::optional<Index> position(Index row, Index col) const { return structure_->find(row, col); }
    /// Stored value at (row, col), or 0 when the entry is structurally absent.
    double at(Index row, Index col) const;

    /// Replace the whole value array; the structure is untouched.
    void assign_values(std::vector<double> values);

private:
    std::shared_ptr<const CsrStructure> structure_;
    std::vector<double> values_;
};

/// Duplicate coordinates are rejected with ErrorCode::pattern.
CsrMatrix coo_to_csr(const CooMatrix& a);

/// CSR of the transpose; read as CSC of the input.
CsrMatrix csr_to_csc(const CsrMatrix& a);
inline CsrMatrix transpose(const CsrMatrix& a) { return csr_to_csc(a); }

std::vector<double> spmv(const CsrMatrix& a, std::span<const double> x);
/// y = a * x without allocation. y must not alias x.
void spmv(const CsrMatrix& a, std::span<const double> x, std::span<double> y);
/// y = alpha * a * x + y
void spmv_add(const CsrMatrix& a, double alpha, std::span<const double> x, std::span<double> y);

/// Dense row-major copy (n_rows * n_cols).
std::vector<double> to_dense(const CsrMatrix& a);
std::vector<double> to_dense(const CooMatrix& a);

// ---------------------------------------------------------------------------
// Precomputed addresses

/// Logical identifier of a structural entry. The kinds mirror the transitions
/// a model generates; `coordinate` addresses a raw (row, col) position.
struct SlotKey {
    enum class Kind : std::uint8_t { nature, player, diagonal, coordinate };

    Kind kind = Kind::coordinate;
    std::array<Index, 3> id{};

    static SlotKey nature(Index from, Index to) { return {Kind::nature, {from, to, 0}}; }
    static SlotKey player(Index player, Index action, Index state) {
        return {Kind::player, {player, action, state}};
    }
    static SlotKey diagonal(Index state) { return {Kind::diagonal, {state, 0, 0}}; }
    static SlotKey coordinate(Index row, Index col) { return {Kind::coordinate, {row, col, 0}}; }

    auto operator<=>(const SlotKey&) const = default;
};

struct SlotEntry {
    SlotKey key;
    Index row;
    Index col;
};

struct Assignment {
    SlotKey key;
    double value;
};

class SparsityPattern {
public:
    SparsityPattern() = default;

    /// Builds the CSR structure and the key -> value-position map. Each key
    /// and each (row, col) must appear once.
    static SparsityPattern build(Index n_rows, Index n_cols, std::span<const SlotEntry> entries);

    const std::shared_ptr<const CsrStructure>& structure() const { return structure_; }
    Index nnz() const { return structure_ ? structure_->nnz() : 0; }

    bool contains(const SlotKey& key) const;
    /// Value-array position of `key`; throws ErrorCode::pattern when unknown.
    Index address(const SlotKey& key) const;

    /// A matrix with this pattern and all values zero.
    CsrMatrix zeros() const;

private:
    std::shared_ptr<const CsrStructure> structure_;
    std::shared_ptr<const std::map<SlotKey, Index>> addresses_;
};

/// Writes assignments into `target`'s value array. `target` must carry the
/// pattern's structure; row pointers and column indices are never modified.
void update_values(const SparsityPattern& pattern, std::span<const Assignment> assignments,
                   CsrMatrix& target);

// Matrix Market coordinate format (1-based on disk), for debugging dumps.
void write_matrix_market(std::ostream& out, const CsrMatrix& a);
CooMatrix read_matrix_market(std::istream& in);

}  // namespace ctdc::sparse
