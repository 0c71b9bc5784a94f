#pragma once

#include <stdexcept>
#include <string>

namespace drama {

/// Malformed topology file or metrics file.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Structurally well-formed input that violates an invariant
/// (duplicate link, dangling event reference, nonpositive length, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A caller broke an API precondition (non-neighbor action, unknown router,
/// shape mismatch). These halt the run with a diagnostic.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace drama
