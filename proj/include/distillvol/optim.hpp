#pragma once

// Optimizers and learning-rate schedules for the training loops.

#include <cstdint>
#include <string>
#include <vector>

#include "distillvol/nets.hpp"

namespace dv {

struct LrSchedule {
    enum class Kind { step_drop, exp_epoch };
    Kind kind = Kind::step_drop;
    double initial = 1e-4;
    std::int64_t drop_iteration = 120000;  // step_drop: one drop at this index
    double factor = 0.1;                   // step_drop multiplier at/after the drop
    double rate = 0.99;                    // exp_epoch: initial * rate^epoch
};

void validate_schedule(const LrSchedule& s);

// index is an iteration for step_drop and an epoch for exp_epoch.
double lr_at(const LrSchedule& s, std::int64_t index);

struct OptimizerSpec {
    enum class Kind { adam, sgd_momentum };
    Kind kind = Kind::adam;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adam
    double momentum = 0.9;                          // sgd
};

// Holds per-parameter moment buffers. step() reads each parameter's
// accumulated gradient (missing gradients count as zero) and updates the
// parameter data in place; the caller zeroes gradients afterwards.
class Optimizer {
  public:
    Optimizer(OptimizerSpec spec, std::vector<Tensor> params);

    // sgd: v <- m*v + g; w <- w - lr*v.  adam: bias-corrected moments.
    void step(double lr);

    std::int64_t step_count() const { return t_; }

  private:
    OptimizerSpec spec_;
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_;  // first moment / velocity
    std::vector<std::vector<float>> v_;  // second moment (adam)
    std::int64_t t_ = 0;
};

}  // namespace dv
