#pragma once

// Dense N-D tensor with reverse-mode automatic differentiation. The op set
// lives in ops.hpp and covers exactly what the three architectures need.
// Scalar type is a template parameter: float is the training path, double
// the finite-difference verification path.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "distillvol/errors.hpp"

namespace dv {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// One node of the computation graph. Outputs hold shared references to their
// inputs, so a held loss tensor keeps its whole graph alive; parameters are
// leaves and outlive the graphs built on them.
template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> data;
    bool requires_grad = false;
    std::vector<S> grad;  // empty until first accumulation; then same length as data

    std::vector<std::shared_ptr<TensorImpl<S>>> inputs;
    // backward_fn(self, out_grad, in_grads): accumulate into in_grads[i]
    // (aligned with inputs; nullptr where the input does not need gradient).
    std::function<void(const TensorImpl<S>&, const S*, const std::vector<S*>&)> backward_fn;
    const char* op = "leaf";

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
};

// Tracks whether newly created ops record the graph. Inference paths disable
// it so sliding-window forwards do not retain activations.
bool grad_mode_enabled();
void set_grad_mode(bool enabled);

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_enabled()) { set_grad_mode(false); }
    ~NoGradGuard() { set_grad_mode(prev); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
class TensorT {
  public:
    using Scalar = S;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<TensorImpl<S>> impl) : impl_(std::move(impl)) {}

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static TensorT filled(Shape shape, S value, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl<S>>();
        impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
        impl->shape = std::move(shape);
        impl->requires_grad = requires_grad;
        return TensorT(std::move(impl));
    }

    static TensorT from_vector(Shape shape, std::vector<S> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        auto impl = std::make_shared<TensorImpl<S>>();
        impl->shape = std::move(shape);
        impl->data = std::move(values);
        impl->requires_grad = requires_grad;
        return TensorT(std::move(impl));
    }

    static TensorT scalar(S value, bool requires_grad = false) {
        return from_vector({1}, {value}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return impl_ ? impl_->numel() : 0; }

    const S* data() const { return impl_->data.data(); }
    S* data() { return impl_->data.data(); }
    const std::vector<S>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) {
        if (v && !impl_->inputs.empty())
            throw Error("requires_grad can only be toggled on leaf tensors");
        impl_->requires_grad = v;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const S* grad() const { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }
    std::vector<S>& grad_vec() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), S(0));
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }

    S item() const {
        if (numel() != 1)
            throw ShapeError("item() requires a scalar tensor, got shape " + shape_str(shape()));
        return impl_->data[0];
    }

    const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

  private:
    std::shared_ptr<TensorImpl<S>> impl_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

// Builds the op node for `result`, linking inputs and backward only while
// grad mode is on and some input needs gradient.
template <typename S>
TensorT<S> make_op(const char* op, Shape shape, std::vector<S> data,
                   std::vector<TensorT<S>> inputs,
                   std::function<void(const TensorImpl<S>&, const S*, const std::vector<S*>&)> backward) {
    auto out = TensorT<S>::from_vector(std::move(shape), std::move(data));
    bool needs = false;
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
    if (needs && grad_mode_enabled()) {
        auto& impl = *out.impl();
        impl.requires_grad = true;
        impl.op = op;
        for (const auto& in : inputs)
            if (in.defined()) impl.inputs.push_back(in.impl());
        impl.backward_fn = std::move(backward);
    }
    return out;
}

}  // namespace detail

// Reverse-mode pass from a scalar loss. Per-call gradients are propagated in
// local buffers and then added into every reachable requires_grad tensor, so
// repeated calls without zeroing accumulate additively.
template <typename S>
void backward(const TensorT<S>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad()) return;

    // iterative post-order DFS -> topological order (inputs before outputs)
    std::vector<TensorImpl<S>*> topo;
    std::unordered_set<TensorImpl<S>*> visited;
    struct Frame {
        TensorImpl<S>* node;
        std::size_t next_input;
    };
    std::vector<Frame> stack{{loss.impl().get(), 0}};
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_input < f.node->inputs.size()) {
            TensorImpl<S>* in = f.node->inputs[f.next_input++].get();
            if (in->requires_grad && !visited.count(in)) {
                visited.insert(in);
                stack.push_back({in, 0});
            }
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    std::unordered_map<TensorImpl<S>*, std::vector<S>> local;
    local[loss.impl().get()] = {S(1)};

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorImpl<S>* node = *it;
        auto found = local.find(node);
        if (found == local.end()) continue;  // unreachable from the loss
        if (node->backward_fn) {
            std::vector<S*> in_grads(node->inputs.size(), nullptr);
            for (std::size_t i = 0; i < node->inputs.size(); ++i) {
                TensorImpl<S>* in = node->inputs[i].get();
                if (!in->requires_grad) continue;
                auto& buf = local[in];
                if (buf.empty()) buf.assign(in->data.size(), S(0));
                in_grads[i] = buf.data();
            }
            node->backward_fn(*node, found->second.data(), in_grads);
        }
    }

    for (TensorImpl<S>* node : topo) {
        auto found = local.find(node);
        if (found == local.end()) continue;
        if (node->grad.empty()) node->grad.assign(node->data.size(), S(0));
        const auto& src = found->second;
        for (std::size_t i = 0; i < src.size(); ++i) node->grad[i] += src[i];
    }
}

}  // namespace dv
