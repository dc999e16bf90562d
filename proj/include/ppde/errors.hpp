#pragma once

#include <stdexcept>
#include <string>

namespace ppde {

/// Input outside the mathematical domain of an operation (off-grid time,
/// misaligned concatenation, |x| > alpha, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Solver parameters that would make a scheme unstable or ill-posed
/// (CFL violations, penalty stability guard).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values or iterative solvers that failed to converge.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Combinatorial or recursion budget exhausted.
class BudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ppde
