#pragma once

#include <stdexcept>
#include <string>

namespace mlmtest {

enum class ErrorKind {
    not_positive_definite,
    infeasible_omega,
    rank_deficient_design,
    non_convergence,
    singular_observed_information,
    singular_information,
    instance_too_large,
    parse_error,
    missing_column,
    empty_unit,
    invalid_config,
};

const char* error_kind_name(ErrorKind kind);

// Input problems map to exit status 2, numerical failures to 3.
bool is_input_error(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

}  // namespace mlmtest
