#pragma once

// Central finite-difference gradient oracle. Test-only: it re-evaluates the
// forward build from scratch for every perturbed element and never touches
// the tape's backward machinery it is checking.

#include <cmath>
#include <functional>
#include <vector>

#include "vicon/autograd.hpp"
#include "vicon/tensor.hpp"

namespace vicon::testing {

// Builds a scalar loss from leaves created on the given tape in input order.
using LossBuilder = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor<double>>& inputs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    return build(tape, vars).value().data[0];
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

inline GradCheckResult gradcheck(const LossBuilder& build, std::vector<Tensor<double>> inputs,
                                 double h = 1e-5) {
    // analytic gradients
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
        Var<double> loss = build(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(tape.grad_of(v));
    }

    GradCheckResult res;
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        for (size_t ei = 0; ei < inputs[vi].data.size(); ++ei) {
            const double orig = inputs[vi].data[ei];
            inputs[vi].data[ei] = orig + h;
            const double lp = eval_loss(build, inputs);
            inputs[vi].data[ei] = orig - h;
            const double lm = eval_loss(build, inputs);
            inputs[vi].data[ei] = orig;

            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[vi].data[ei];
            const double abs_err = std::abs(an - fd);
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            if (abs_err > 1e-9) {
                const double rel = abs_err / std::max(std::abs(an), std::abs(fd));
                res.max_rel_err = std::max(res.max_rel_err, rel);
            }
        }
    }
    return res;
}

}  // namespace vicon::testing
