#pragma once

// Central finite-difference verification of tape gradients. Used by both the
// test suites and the `gradcheck` CLI subcommand.

#include <functional>
#include <string>

#include "tformer/ops.hpp"

namespace tformer {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t checked = 0;
    std::string worst; // "input#i[j]"
    bool ok(double tol) const { return max_rel_err < tol; }
};

// fn: builds a scalar loss from tracked inputs on the given tape.
// Checks d(loss)/d(inputs[k][j]) against (f(x+h)-f(x-h))/2h for every
// coordinate (or a strided subset when max_coords_per_input is set).
// denom_floor bounds the relative-error denominator from below; raise it for
// deep graphs where the finite-difference noise (~eps*|f|/step) exceeds what
// a 1e-6 floor can absorb on coordinates whose true gradient is ~0.
inline double fd_rel_err(double analytic, double numeric, double denom_floor = 1e-6) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), denom_floor});
    return std::abs(analytic - numeric) / denom;
}

template <class T>
GradCheckResult grad_check(
    const std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>& fn,
    std::vector<Tensor<T>> inputs, T step = T(1e-5), int64_t max_coords_per_input = 0,
    double denom_floor = 1e-6) {
    GradCheckResult res;

    auto eval = [&](const std::vector<Tensor<T>>& xs) {
        Tape<T> tape;
        std::vector<Var<T>> vars;
        vars.reserve(xs.size());
        for (const auto& x : xs) vars.push_back(tape.param(x));
        return fn(tape, vars).value[0];
    };

    // Analytic gradients from one taped run.
    std::vector<Tensor<T>> grads;
    {
        Tape<T> tape;
        std::vector<Var<T>> vars;
        for (const auto& x : inputs) vars.push_back(tape.param(x));
        Var<T> loss = fn(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) grads.push_back(tape.grad(v));
    }

    for (size_t k = 0; k < inputs.size(); ++k) {
        const int64_t n = inputs[k].numel();
        int64_t stride = 1;
        if (max_coords_per_input > 0 && n > max_coords_per_input)
            stride = (n + max_coords_per_input - 1) / max_coords_per_input;
        for (int64_t j = 0; j < n; j += stride) {
            std::vector<T> bumped = inputs[k].vec();
            const T x0 = bumped[static_cast<size_t>(j)];
            bumped[static_cast<size_t>(j)] = x0 + step;
            std::vector<Tensor<T>> xs = inputs;
            xs[k] = Tensor<T>(inputs[k].shape(), bumped);
            const double fp = static_cast<double>(eval(xs));
            bumped[static_cast<size_t>(j)] = x0 - step;
            xs[k] = Tensor<T>(inputs[k].shape(), bumped);
            const double fm = static_cast<double>(eval(xs));
            const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
            const double analytic = static_cast<double>(grads[k][j]);
            const double rel = fd_rel_err(analytic, numeric, denom_floor);
            res.checked++;
            res.max_abs_err = std::max(res.max_abs_err, std::abs(analytic - numeric));
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = "input#" + std::to_string(k) + "[" + std::to_string(j) + "]";
            }
        }
    }
    return res;
}

} // namespace tformer
