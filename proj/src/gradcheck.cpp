#include "distillvol/gradcheck.hpp"

#include <cmath>

#include "distillvol/losses.hpp"
#include "distillvol/ops.hpp"
#include "distillvol/util.hpp"

namespace dv {

namespace {

// Perturbation hook used by the corrupted-backward fixture.
thread_local double g_grad_fudge = 1.0;

double eval_loss(const std::function<Tensor64()>& f) {
    NoGradGuard no_grad;
    return f().item();
}

}  // namespace

GradCheckReport gradcheck_case(const std::string& name, std::vector<Tensor64*> inputs,
                               const std::function<Tensor64()>& f, double step, double tolerance) {
    for (Tensor64* t : inputs) t->zero_grad();
    {
        Tensor64 loss = f();
        backward(loss);
    }

    GradCheckReport report;
    report.name = name;

    for (Tensor64* t : inputs) {
        std::vector<double> analytic(static_cast<std::size_t>(t->numel()), 0.0);
        if (t->grad())
            std::copy(t->grad(), t->grad() + t->numel(), analytic.begin());
        for (auto& g : analytic) g *= g_grad_fudge;

        for (std::int64_t i = 0; i < t->numel(); ++i) {
            double* slot = t->data() + i;
            const double saved = *slot;
            *slot = saved + step;
            const double up = eval_loss(f);
            *slot = saved - step;
            const double down = eval_loss(f);
            *slot = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[static_cast<std::size_t>(i)];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
            report.max_rel_err = std::max(report.max_rel_err, rel);
        }
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

namespace {

Tensor64 random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi,
                       bool requires_grad = true) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = uniform(rng, lo, hi);
    return Tensor64::from_vector(std::move(shape), std::move(data), requires_grad);
}

// Fixed random projection makes the scalar objective sensitive to every
// output element (a plain sum would hide permutation errors).
Tensor64 project(const Tensor64& out, std::mt19937_64& rng) {
    std::vector<double> w(static_cast<std::size_t>(out.numel()));
    for (auto& v : w) v = uniform(rng, -1.0, 1.0);
    return sum(mul(out, Tensor64::from_vector(out.shape(), std::move(w))));
}

struct Case {
    std::string name;
    std::function<GradCheckReport(const std::string&)> run;
};

GradCheckReport with_fudge(const std::string& name, const std::string& corrupt_op,
                           std::vector<Tensor64*> inputs, const std::function<Tensor64()>& f) {
    g_grad_fudge = (name == corrupt_op) ? 1.5 : 1.0;
    GradCheckReport r = gradcheck_case(name, std::move(inputs), f);
    g_grad_fudge = 1.0;
    return r;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const std::string& corrupt_op) {
    static_assert(sizeof(typename Tensor64::Scalar) == 8, "gradient checks run in 64-bit only");
    std::vector<GradCheckReport> reports;
    auto check = [&](const std::string& name, std::vector<Tensor64*> inputs,
                     const std::function<Tensor64()>& f) {
        reports.push_back(with_fudge(name, corrupt_op, std::move(inputs), f));
    };

    {
        auto rng = make_rng(101);
        Tensor64 x = random_tensor(rng, {1, 2, 4, 4, 4}, -1.0, 1.0);
        Tensor64 w = random_tensor(rng, {3, 2, 3, 3, 3}, -0.5, 0.5);
        Tensor64 b = random_tensor(rng, {3}, -0.2, 0.2);
        auto prng = make_rng(102);
        Tensor64 proj = random_tensor(prng, {1, 3, 4, 4, 4}, -1.0, 1.0, false);
        check("conv3d_s1", {&x, &w, &b},
              [&] { return sum(mul(conv3d(x, w, b, 1, 1), proj)); });
    }
    {
        auto rng = make_rng(103);
        Tensor64 x = random_tensor(rng, {1, 2, 6, 6, 6}, -1.0, 1.0);
        Tensor64 w = random_tensor(rng, {2, 2, 3, 3, 3}, -0.5, 0.5);
        Tensor64 b = random_tensor(rng, {2}, -0.2, 0.2);
        auto prng = make_rng(104);
        Tensor64 proj = random_tensor(prng, {1, 2, 3, 3, 3}, -1.0, 1.0, false);
        check("conv3d_s2", {&x, &w, &b},
              [&] { return sum(mul(conv3d(x, w, b, 2, 1), proj)); });
    }
    {
        auto rng = make_rng(105);
        Tensor64 x = random_tensor(rng, {1, 3, 3, 3, 3}, -1.0, 1.0);
        Tensor64 w = random_tensor(rng, {2, 3, 1, 1, 1}, -0.8, 0.8);
        auto prng = make_rng(106);
        Tensor64 proj = random_tensor(prng, {1, 2, 3, 3, 3}, -1.0, 1.0, false);
        check("conv3d_k1", {&x, &w},
              [&] { return sum(mul(conv3d(x, w, Tensor64(), 1, 0), proj)); });
    }
    {
        auto rng = make_rng(107);
        Tensor64 x = random_tensor(rng, {1, 2, 3, 3, 3}, -1.0, 1.0);
        auto prng = make_rng(108);
        Tensor64 proj = random_tensor(prng, {1, 2, 6, 6, 6}, -1.0, 1.0, false);
        check("upsample_trilinear2x", {&x}, [&] { return sum(mul(upsample_trilinear2x(x), proj)); });
    }
    {
        auto rng = make_rng(109);
        Tensor64 x = random_tensor(rng, {1, 2, 4, 4, 4}, -1.0, 1.0);
        auto prng = make_rng(110);
        Tensor64 proj = random_tensor(prng, {1, 2, 2, 2, 2}, -1.0, 1.0, false);
        check("avg_pool2", {&x}, [&] { return sum(mul(avg_pool2(x), proj)); });
    }
    {
        auto rng = make_rng(111);
        Tensor64 x = random_tensor(rng, {2, 3, 3, 3, 3}, -1.0, 1.0);
        Tensor64 gm = random_tensor(rng, {3}, 0.5, 1.5);
        Tensor64 bt = random_tensor(rng, {3}, -0.5, 0.5);
        auto prng = make_rng(112);
        Tensor64 proj = random_tensor(prng, {2, 3, 3, 3, 3}, -1.0, 1.0, false);
        check("instance_norm", {&x, &gm, &bt},
              [&] { return sum(mul(instance_norm(x, gm, bt), proj)); });
    }
    {
        auto rng = make_rng(113);
        Tensor64 x = random_tensor(rng, {1, 4, 3, 3, 3}, -1.0, 1.0);
        Tensor64 gm = random_tensor(rng, {4}, 0.5, 1.5);
        Tensor64 bt = random_tensor(rng, {4}, -0.5, 0.5);
        auto prng = make_rng(114);
        Tensor64 proj = random_tensor(prng, {1, 4, 3, 3, 3}, -1.0, 1.0, false);
        check("group_norm", {&x, &gm, &bt},
              [&] { return sum(mul(group_norm(x, 2, gm, bt), proj)); });
    }
    {
        auto rng = make_rng(115);
        // offset away from the kink at zero so finite differences are clean
        Tensor64 x = random_tensor(rng, {2, 3, 4}, 0.1, 1.0);
        Tensor64 y = random_tensor(rng, {2, 3, 4}, -1.0, -0.1);
        auto prng = make_rng(116);
        Tensor64 proj = random_tensor(prng, {2, 3, 4}, -1.0, 1.0, false);
        check("relu", {&x, &y}, [&] { return sum(mul(add(relu(x), relu(y)), proj)); });
        check("leaky_relu", {&x, &y},
              [&] { return sum(mul(add(leaky_relu(x, 1e-2), leaky_relu(y, 1e-2)), proj)); });
    }
    {
        auto rng = make_rng(117);
        Tensor64 x = random_tensor(rng, {3, 4}, -2.0, 2.0);
        auto prng = make_rng(118);
        Tensor64 proj = random_tensor(prng, {3, 4}, -1.0, 1.0, false);
        check("sigmoid", {&x}, [&] { return sum(mul(sigmoid(x), proj)); });
    }
    {
        auto rng = make_rng(119);
        Tensor64 a = random_tensor(rng, {4, 3}, -1.0, 1.0);
        Tensor64 b = random_tensor(rng, {4, 3}, -1.0, 1.0);
        auto prng = make_rng(120);
        Tensor64 proj = random_tensor(prng, {4, 3}, -1.0, 1.0, false);
        check("add", {&a, &b}, [&] { return sum(mul(add(a, b), proj)); });
        check("mul", {&a, &b}, [&] { return sum(mul(mul(a, b), proj)); });
        check("elementwise_max", {&a, &b}, [&] { return sum(mul(elementwise_max(a, b), proj)); });
        check("scale", {&a}, [&] { return sum(mul(scale(a, 0.7), proj)); });
    }
    {
        auto rng = make_rng(121);
        Tensor64 a = random_tensor(rng, {1, 2, 2, 2, 2}, -1.0, 1.0);
        Tensor64 b = random_tensor(rng, {1, 3, 2, 2, 2}, -1.0, 1.0);
        auto prng = make_rng(122);
        Tensor64 proj = random_tensor(prng, {1, 5, 2, 2, 2}, -1.0, 1.0, false);
        check("concat", {&a, &b}, [&] { return sum(mul(concat<double>({a, b}, 1), proj)); });
    }
    {
        auto rng = make_rng(123);
        Tensor64 x = random_tensor(rng, {4, 4}, -1.0, 1.0);
        check("sum", {&x}, [&] { return sum(x); });
    }
    {
        auto rng = make_rng(124);
        Tensor64 p = random_tensor(rng, {3, 4, 4, 4}, 0.05, 0.95);
        std::vector<double> gdata(static_cast<std::size_t>(3 * 64));
        for (auto& v : gdata) v = uniform01(rng) < 0.35 ? 1.0 : 0.0;
        Tensor64 g = Tensor64::from_vector({3, 4, 4, 4}, std::move(gdata));
        check("soft_dice_loss", {&p}, [&] { return soft_dice_loss(p, g); });
        check("bce_loss", {&p}, [&] { return bce_loss(p, g); });
        check("combined_loss", {&p}, [&] { return combined_loss(p, g).total; });
    }
    {
        // combined loss fed through a sigmoid over logits, as in training
        auto rng = make_rng(125);
        Tensor64 logits = random_tensor(rng, {1, 3, 4, 4, 4}, -1.5, 1.5);
        std::vector<double> gdata(static_cast<std::size_t>(3 * 64));
        for (auto& v : gdata) v = uniform01(rng) < 0.3 ? 1.0 : 0.0;
        Tensor64 g = Tensor64::from_vector({1, 3, 4, 4, 4}, std::move(gdata));
        check("combined_loss_through_sigmoid", {&logits},
              [&] { return combined_loss(sigmoid(logits), g).total; });
    }

    // --- one composite block per architecture -----------------------------
    {
        // unet block: conv/in/lrelu x2, strided conv down, 1x1 reduce,
        // trilinear upsample, concat with the skip, conv
        auto rng = make_rng(201);
        Tensor64 x = random_tensor(rng, {1, 2, 4, 4, 4}, -1.0, 1.0, false);
        Tensor64 w1 = random_tensor(rng, {2, 2, 3, 3, 3}, -0.4, 0.4);
        Tensor64 b1 = random_tensor(rng, {2}, -0.1, 0.1);
        Tensor64 g1 = random_tensor(rng, {2}, 0.8, 1.2);
        Tensor64 s1 = random_tensor(rng, {2}, -0.2, 0.2);
        Tensor64 wd = random_tensor(rng, {4, 2, 3, 3, 3}, -0.4, 0.4);
        Tensor64 bd = random_tensor(rng, {4}, -0.1, 0.1);
        Tensor64 wr = random_tensor(rng, {2, 4, 1, 1, 1}, -0.4, 0.4);
        Tensor64 w2 = random_tensor(rng, {2, 4, 3, 3, 3}, -0.3, 0.3);
        Tensor64 b2 = random_tensor(rng, {2}, -0.1, 0.1);
        auto prng = make_rng(202);
        Tensor64 proj = random_tensor(prng, {1, 2, 4, 4, 4}, -1.0, 1.0, false);
        check("unet_block", {&w1, &b1, &g1, &s1, &wd, &bd, &wr, &w2, &b2}, [&] {
            Tensor64 h = leaky_relu(instance_norm(conv3d(x, w1, b1, 1, 1), g1, s1), 1e-2);
            Tensor64 skip = h;
            Tensor64 down = leaky_relu(conv3d(h, wd, bd, 2, 1), 1e-2);
            Tensor64 up = upsample_trilinear2x(conv3d(down, wr, Tensor64(), 1, 0));
            Tensor64 cat = concat<double>({up, skip}, 1);
            return sum(mul(conv3d(cat, w2, b2, 1, 1), proj));
        });
    }
    {
        // residual-unet block: pre-activation group-norm residual block
        auto rng = make_rng(203);
        Tensor64 x = random_tensor(rng, {1, 4, 4, 4, 4}, -1.0, 1.0, false);
        Tensor64 g1 = random_tensor(rng, {4}, 0.8, 1.2);
        Tensor64 s1 = random_tensor(rng, {4}, -0.2, 0.2);
        Tensor64 w1 = random_tensor(rng, {4, 4, 3, 3, 3}, -0.3, 0.3);
        Tensor64 b1 = random_tensor(rng, {4}, -0.1, 0.1);
        Tensor64 g2 = random_tensor(rng, {4}, 0.8, 1.2);
        Tensor64 s2 = random_tensor(rng, {4}, -0.2, 0.2);
        Tensor64 w2 = random_tensor(rng, {4, 4, 3, 3, 3}, -0.3, 0.3);
        Tensor64 b2 = random_tensor(rng, {4}, -0.1, 0.1);
        auto prng = make_rng(204);
        Tensor64 proj = random_tensor(prng, {1, 4, 4, 4, 4}, -1.0, 1.0, false);
        check("res_unet_block", {&g1, &s1, &w1, &b1, &g2, &s2, &w2, &b2}, [&] {
            Tensor64 h = conv3d(relu(group_norm(x, 2, g1, s1)), w1, b1, 1, 1);
            h = conv3d(relu(group_norm(h, 2, g2, s2)), w2, b2, 1, 1);
            return sum(mul(add(h, x), proj));
        });
    }
    {
        // cascade block: two single-modality encoders fused by elementwise
        // max, then a head conv
        auto rng = make_rng(205);
        Tensor64 xa = random_tensor(rng, {1, 1, 4, 4, 4}, -1.0, 1.0, false);
        Tensor64 xb = random_tensor(rng, {1, 1, 4, 4, 4}, -1.0, 1.0, false);
        Tensor64 wa = random_tensor(rng, {2, 1, 3, 3, 3}, -0.4, 0.4);
        Tensor64 ba = random_tensor(rng, {2}, -0.1, 0.1);
        Tensor64 wb = random_tensor(rng, {2, 1, 3, 3, 3}, -0.4, 0.4);
        Tensor64 bb = random_tensor(rng, {2}, -0.1, 0.1);
        Tensor64 ga = random_tensor(rng, {2}, 0.8, 1.2);
        Tensor64 sa = random_tensor(rng, {2}, -0.2, 0.2);
        Tensor64 gb = random_tensor(rng, {2}, 0.8, 1.2);
        Tensor64 sb = random_tensor(rng, {2}, -0.2, 0.2);
        Tensor64 wh = random_tensor(rng, {1, 2, 3, 3, 3}, -0.4, 0.4);
        auto prng = make_rng(206);
        Tensor64 proj = random_tensor(prng, {1, 1, 4, 4, 4}, -1.0, 1.0, false);
        check("cascade_block", {&wa, &ba, &wb, &bb, &ga, &sa, &gb, &sb, &wh}, [&] {
            Tensor64 ea = relu(instance_norm(conv3d(xa, wa, ba, 1, 1), ga, sa));
            Tensor64 eb = relu(instance_norm(conv3d(xb, wb, bb, 1, 1), gb, sb));
            Tensor64 fused = elementwise_max(ea, eb);
            return sum(mul(conv3d(fused, wh, Tensor64(), 1, 1), proj));
        });
    }

    return reports;
}

}  // namespace dv
