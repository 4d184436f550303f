#pragma once

#include <stdexcept>
#include <string>

namespace malbench {

/// Problems with input files or dataset contents. The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failures during training, attack execution or report generation (exit code 3).
class RunError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace malbench
