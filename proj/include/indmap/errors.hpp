#pragma once

#include <stdexcept>
#include <string>

namespace indmap {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input outside the map's domain by more than the admission tolerance.
struct domain_error : error {
    using error::error;
};

// An orbit landed numerically on the critical set (|f'| below 1e-300).
struct critical_hit : error {
    using error::error;
};

struct window_too_short : error {
    using error::error;
};

struct invalid_series : error {
    using error::error;
};

struct no_threshold : error {
    using error::error;
};

struct no_valid_delta : error {
    using error::error;
};

struct non_hyperbolic_sample : error {
    using error::error;
};

struct bracket_error : error {
    using error::error;
};

struct no_t0 : error {
    using error::error;
};

struct kac_divergence : error {
    using error::error;
};

struct non_convergence : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

} // namespace indmap
