#pragma once

// Central finite-difference verification of analytic gradients. Runs on the
// 64-bit tensor instantiation only; the training path stays 32-bit.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "distillvol/tensor.hpp"

namespace dv {

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// f() must rebuild the scalar loss from the current contents of `inputs`.
// Relative error per element: |analytic - numeric| / max(|analytic|,
// |numeric|, 1).
GradCheckReport gradcheck_case(const std::string& name, std::vector<Tensor64*> inputs,
                               const std::function<Tensor64()>& f, double step = 1e-5,
                               double tolerance = 1e-4);

// Every differentiable op plus one composite block per architecture.
// `corrupt_op` (test fixture) perturbs that case's analytic gradient so the
// suite's failure path can be exercised; empty means no corruption.
std::vector<GradCheckReport> run_gradcheck_suite(const std::string& corrupt_op = "");

}  // namespace dv
