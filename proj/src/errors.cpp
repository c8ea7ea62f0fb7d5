#include "mlmtest/errors.hpp"

namespace mlmtest {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::not_positive_definite: return "NotPositiveDefinite";
        case ErrorKind::infeasible_omega: return "InfeasibleOmega";
        case ErrorKind::rank_deficient_design: return "RankDeficientDesign";
        case ErrorKind::non_convergence: return "NonConvergence";
        case ErrorKind::singular_observed_information: return "SingularObservedInformation";
        case ErrorKind::singular_information: return "SingularInformation";
        case ErrorKind::instance_too_large: return "InstanceTooLarge";
        case ErrorKind::parse_error: return "ParseError";
        case ErrorKind::missing_column: return "MissingColumn";
        case ErrorKind::empty_unit: return "EmptyUnit";
        case ErrorKind::invalid_config: return "InvalidConfig";
    }
    return "Error";
}

bool is_input_error(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::rank_deficient_design:
        case ErrorKind::parse_error:
        case ErrorKind::missing_column:
        case ErrorKind::empty_unit:
        case ErrorKind::invalid_config:
        case ErrorKind::instance_too_large:
            return true;
        default:
            return false;
    }
}

}  // namespace mlmtest
