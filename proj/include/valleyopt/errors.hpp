#pragma once

#include <stdexcept>
#include <string>

namespace valleyopt {

// Instance data is inconsistent (bad file, violated invariant). CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// A configured work or time budget was exceeded. CLI exit code 3.
class BudgetError : public std::runtime_error {
public:
    explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

// An internal caller violated a precondition (solver bug, not a data error).
class InfeasibleControlError : public std::logic_error {
public:
    explicit InfeasibleControlError(const std::string& what) : std::logic_error(what) {}
};

} // namespace valleyopt
