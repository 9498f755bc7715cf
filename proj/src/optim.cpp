#include "distillvol/optim.hpp"

#include <cmath>

#include "distillvol/errors.hpp"

namespace dv {

void validate_schedule(const LrSchedule& s) {
    if (s.initial <= 0.0) throw ConfigError("lr_schedule.initial must be > 0");
    if (s.kind == LrSchedule::Kind::step_drop) {
        if (s.factor <= 0.0 || s.factor >= 1.0)
            throw ConfigError("lr_schedule.factor must be in (0,1)");
        if (s.drop_iteration < 0) throw ConfigError("lr_schedule.drop_iteration must be >= 0");
    } else {
        if (s.rate <= 0.0 || s.rate >= 1.0) throw ConfigError("lr_schedule.rate must be in (0,1)");
    }
}

double lr_at(const LrSchedule& s, std::int64_t index) {
    if (index < 0) throw Error("lr_at: index must be >= 0");
    if (s.kind == LrSchedule::Kind::step_drop)
        return index < s.drop_iteration ? s.initial : s.initial * s.factor;
    return s.initial * std::pow(s.rate, static_cast<double>(index));
}

Optimizer::Optimizer(OptimizerSpec spec, std::vector<Tensor> params)
    : spec_(spec), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
        if (spec_.kind == OptimizerSpec::Kind::adam)
            v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    }
}

void Optimizer::step(double lr) {
    ++t_;
    const double b1 = spec_.beta1, b2 = spec_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));

    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const float* g = p.grad();
        float* w = p.data();
        const std::int64_t n = p.numel();
        auto& m = m_[i];

        if (spec_.kind == OptimizerSpec::Kind::sgd_momentum) {
            const float mom = static_cast<float>(spec_.momentum);
            const float flr = static_cast<float>(lr);
            for (std::int64_t j = 0; j < n; ++j) {
                const float gj = g ? g[j] : 0.0f;
                m[static_cast<std::size_t>(j)] = mom * m[static_cast<std::size_t>(j)] + gj;
                w[j] -= flr * m[static_cast<std::size_t>(j)];
            }
        } else {
            auto& v = v_[i];
            for (std::int64_t j = 0; j < n; ++j) {
                const double gj = g ? g[j] : 0.0;
                const double mj = b1 * m[static_cast<std::size_t>(j)] + (1.0 - b1) * gj;
                const double vj = b2 * v[static_cast<std::size_t>(j)] + (1.0 - b2) * gj * gj;
                m[static_cast<std::size_t>(j)] = static_cast<float>(mj);
                v[static_cast<std::size_t>(j)] = static_cast<float>(vj);
                const double mhat = mj / bias1;
                const double vhat = vj / bias2;
                w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + spec_.eps));
            }
        }
    }
}

}  // namespace dv
