#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>

namespace malbench {

// Row-major to match the row-major weight arrays in the checkpoint format.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

bool all_finite(const Mat& m);
bool all_finite(const Vec& v);

/// Index of the first maximal entry (ties break to the lowest index).
int argmax(const Vec& v);

/// FNV-1a over raw bytes; used to assert immutability of model parameters.
std::uint64_t hash_bytes(const void* data, std::size_t len,
                         std::uint64_t h = 1469598103934665603ull);
std::uint64_t hash_matrix(const Mat& m, std::uint64_t h = 1469598103934665603ull);
std::uint64_t hash_vector(const Vec& v, std::uint64_t h = 1469598103934665603ull);

}  // namespace malbench
