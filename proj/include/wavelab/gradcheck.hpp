#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wavelab/autodiff.hpp"

namespace wavelab::ad {

struct GradCheckResult {
    double max_rel_error = 0.0;  // max |analytic - central| / max(1, |central|)
    std::size_t coordinates = 0;
    std::string worst;  // "<leaf or parameter>[index]" of the worst coordinate
};

// Builds a scalar from leaves bound on a fresh tape.
using LeafFunction = std::function<Var(Tape&, std::span<const Var>)>;

GradCheckResult finite_difference_check(const LeafFunction& f, std::vector<Tensor> inputs, double eps = 1e-5);

// Builds a scalar from parameters bound through Tape::param.
using ParamFunction = std::function<Var(Tape&)>;

// Checks trainable parameters of a store. max_per_param > 0 samples that many
// evenly spaced coordinates of each parameter instead of all of them.
GradCheckResult finite_difference_check(const ParamFunction& f, ParameterStore& store, double eps = 1e-5,
                                        std::size_t max_per_param = 0);

}  // namespace wavelab::ad
