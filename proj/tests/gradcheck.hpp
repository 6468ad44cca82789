#pragma once

// Central finite-difference gradient oracle. The probe tensor is a leaf;
// the functional under test is re-evaluated at perturbed inputs with the
// tape disabled. Double instantiations of the ops keep the difference
// quotient noise far below the tolerance.

#include <cmath>
#include <functional>
#include <string>

#include "irn/tensor.hpp"

namespace irn::testing {

struct GradCheckResult {
    bool ok = true;
    double worst_abs_diff = 0.0;
    double worst_ref = 0.0;
    size_t worst_index = 0;
    std::string message;
};

// Checks d loss / d x elementwise: |ad - fd| < max(abs_floor, rel_tol * ref)
// with ref = max(|ad|, |fd|).
template <typename F>
GradCheckResult check_gradient(TensorT<double>& x, F&& functional, double step = 1e-3,
                               double rel_tol = 1e-3, double abs_floor = 1e-5) {
    x.set_requires_grad(true);
    x.zero_grad();
    TensorT<double> loss = functional(x);
    backward(loss);
    std::vector<double> ad(x.grad(), x.grad() + x.numel());

    GradCheckResult r;
    for (size_t i = 0; i < x.numel(); ++i) {
        const double orig = x.data()[i];
        double fp, fm;
        {
            NoGradGuard ng;
            x.data()[i] = orig + step;
            fp = functional(x).item();
            x.data()[i] = orig - step;
            fm = functional(x).item();
            x.data()[i] = orig;
        }
        const double fd = (fp - fm) / (2.0 * step);
        const double diff = std::fabs(ad[i] - fd);
        const double ref = std::max(std::fabs(ad[i]), std::fabs(fd));
        if (diff > r.worst_abs_diff) {
            r.worst_abs_diff = diff;
            r.worst_ref = ref;
            r.worst_index = i;
        }
        if (diff > std::max(abs_floor, rel_tol * ref)) {
            r.ok = false;
            r.message = "gradient mismatch at element " + std::to_string(i) + ": ad=" +
                        std::to_string(ad[i]) + " fd=" + std::to_string(fd);
            return r;
        }
    }
    return r;
}

inline double max_abs_diff(const TensorT<double>& a, const TensorT<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

inline double max_abs_diff(const TensorT<float>& a, const TensorT<float>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]));
    return m;
}

}  // namespace irn::testing
