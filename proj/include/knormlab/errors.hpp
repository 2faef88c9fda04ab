#pragma once

#include <stdexcept>
#include <string>

namespace knormlab {

// Exit codes used by the CLI. Library code throws the matching exception.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitContractError = 3;
inline constexpr int kExitBudgetExhausted = 4;

// Invalid configuration: bad file, unknown key, infeasible setting.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A caller violated an operation's precondition or an internal invariant
// failed (shape mismatch, non-scalar loss, batch-dependent layer in DP, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// The configured privacy budget would be exceeded by the next step.
struct BudgetExhaustedError : std::runtime_error {
  explicit BudgetExhaustedError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace knormlab
