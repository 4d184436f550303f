#pragma once

#include "malbench/linalg.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace malbench::data {

using BitVec = std::vector<std::uint8_t>;

int hamming_distance(const BitVec& a, const BitVec& b);
/// a >= b elementwise (no bit of b was cleared in a).
bool covers(const BitVec& a, const BitVec& b);
Vec to_real(const BitVec& bits);

struct BitMatrix {
    int n = 0;
    int d = 0;
    std::vector<std::uint8_t> bits;          // row-major, entries 0/1
    std::vector<std::string> feature_names;  // empty, or d unique names

    std::uint8_t at(int row, int col) const { return bits[static_cast<std::size_t>(row) * d + col]; }
    void set(int row, int col, std::uint8_t v) { bits[static_cast<std::size_t>(row) * d + col] = v; }
    BitVec row(int i) const;
    Mat to_real() const;
    void validate() const;

    static BitMatrix zeros(int n, int d);
};

struct Dataset {
    BitMatrix X;
    std::vector<int> y;  // 0 = benign, 1 = malware

    void validate() const;
    int count_label(int label) const;
    Dataset subset(const std::vector<int>& rows) const;
    /// Row indices with the given label, in dataset order.
    std::vector<int> rows_with_label(int label) const;
    BitMatrix rows_matrix(const std::vector<int>& rows) const;
};

struct SplitSpec {
    double train_frac = 0.5625;
    double val_frac = 0.1875;
    double test_frac = 0.25;
    std::uint64_t seed = 0;
    bool stratified = true;

    void validate() const;  // fractions sum to 1 +- 1e-12
};

struct Split {
    Dataset train, val, test;
};

struct SynthSpec {
    int n_benign = 2000;
    int n_malware = 2000;
    int d = 500;
    int n_malware_markers = 20;
    int n_benign_markers = 20;
    double marker_on_prob = 0.9;
    double background_on_prob = 0.05;
    std::uint64_t seed = 1;

    void validate() const;
};

/// CSV with a header of feature names plus a final "label" column; body 0/1.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

/// Sparse records "label idx idx ...", 0-based strictly ascending indices,
/// '#' comments and blank lines allowed. dim == 0 infers d = max index + 1;
/// an explicit dim makes out-of-range indices an error.
Dataset load_sparse(const std::string& path, int dim = 0);
void save_sparse(const Dataset& ds, const std::string& path);

/// Per-feature chi-squared score of the observed per-class feature sums
/// against the class-proportional expectation. All-zero features score 0.
Vec chi2_scores(const Dataset& ds);

/// Indices (ascending) of the k best-scoring features, ties to the lower
/// index, plus the column-reduced dataset.
std::pair<std::vector<int>, Dataset> select_k_best(const Dataset& ds, int k);

/// Disjoint stratified partition; per-part counts are floored and remainders
/// go to train. Deterministic under spec.seed.
Split split_dataset(const Dataset& ds, const SplitSpec& spec);

/// Planted-signal stand-in dataset: feature layout is
/// [malware markers | benign markers | background]. Markers fire with
/// marker_on_prob for their own class and background_on_prob otherwise.
Dataset generate_synthetic(const SynthSpec& spec);

}  // namespace malbench::data
