#pragma once

// Network blocks and the factory builders for the three teacher
// architectures (plain UNet, residual UNet, cascaded multi-encoder UNet) and
// the student (residual UNet again). A built network is an ordered parameter
// list plus a forward closure from [N,4,D,H,W] input to [N,3,D,H,W] logits.

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "distillvol/ops.hpp"
#include "distillvol/tensor.hpp"
#include "distillvol/util.hpp"
#include "distillvol/volume.hpp"

namespace dv {

enum class NormKind { instance, group };
enum class ActKind { relu, leaky_relu };

struct NetConfig {
    std::string arch = "unet";  // unet | res_unet | cascaded_unet
    int base_channels = 16;
    int levels = 4;
    int in_modalities = 4;
    int out_regions = 3;
    NormKind norm = NormKind::instance;
    int groups = 8;
    ActKind activation = ActKind::leaky_relu;
    double leaky_slope = 1e-2;
    int stages = 2;  // cascaded_unet only
    std::uint64_t init_seed = 0;
};

void validate_net_config(const NetConfig& cfg);

template <typename S>
struct NetworkT {
    NetConfig cfg;
    std::vector<std::pair<std::string, TensorT<S>>> params;  // unique names, fixed order
    std::function<TensorT<S>(const TensorT<S>&)> forward;
    std::int64_t spatial_divisor = 1;  // input extents must divide this
    int encoder_res_blocks = 0;
    int decoder_res_blocks = 0;

    void zero_grads() {
        for (auto& [name, p] : params) p.zero_grad();
    }
};

using Network = NetworkT<float>;

namespace detail {

// Creates and registers named parameters; conv weights get He fan-in
// initialization, biases and norm shifts zeros, norm scales ones.
template <typename S>
class ParamBank {
  public:
    ParamBank(NetworkT<S>& net, std::uint64_t seed) : net_(net), rng_(make_rng(seed)) {}

    TensorT<S> conv_weight(const std::string& name, std::int64_t co, std::int64_t ci,
                           std::int64_t k) {
        const std::int64_t n = co * ci * k * k * k;
        const double std_dev = std::sqrt(2.0 / static_cast<double>(ci * k * k * k));
        std::vector<S> data(static_cast<std::size_t>(n));
        for (auto& v : data) v = static_cast<S>(gaussian(rng_, 0.0, std_dev));
        return reg(name, TensorT<S>::from_vector({co, ci, k, k, k}, std::move(data), true));
    }

    TensorT<S> zeros(const std::string& name, Shape shape) {
        return reg(name, TensorT<S>::zeros(std::move(shape), true));
    }

    TensorT<S> ones(const std::string& name, Shape shape) {
        return reg(name, TensorT<S>::filled(std::move(shape), S(1), true));
    }

  private:
    TensorT<S> reg(const std::string& name, TensorT<S> t) {
        if (!seen_.insert(name).second) throw Error("duplicate parameter name: " + name);
        net_.params.emplace_back(name, t);
        return t;
    }

    NetworkT<S>& net_;
    std::mt19937_64 rng_;
    std::unordered_set<std::string> seen_;
};

template <typename S>
struct ConvLayer {
    TensorT<S> w, b;
    int stride = 1, padding = 1;

    TensorT<S> operator()(const TensorT<S>& x) const { return conv3d(x, w, b, stride, padding); }
};

template <typename S>
ConvLayer<S> make_conv(ParamBank<S>& bank, const std::string& name, std::int64_t ci,
                       std::int64_t co, std::int64_t k, int stride) {
    ConvLayer<S> layer;
    layer.w = bank.conv_weight(name + ".weight", co, ci, k);
    layer.b = bank.zeros(name + ".bias", {co});
    layer.stride = stride;
    layer.padding = static_cast<int>(k / 2);
    return layer;
}

template <typename S>
struct NormLayer {
    TensorT<S> gamma, beta;
    int groups = 0;  // 0 selects instance normalization

    TensorT<S> operator()(const TensorT<S>& x) const {
        return groups == 0 ? instance_norm(x, gamma, beta) : group_norm(x, groups, gamma, beta);
    }
};

template <typename S>
NormLayer<S> make_norm(ParamBank<S>& bank, const std::string& name, std::int64_t channels,
                       const NetConfig& cfg) {
    NormLayer<S> layer;
    layer.gamma = bank.ones(name + ".scale", {channels});
    layer.beta = bank.zeros(name + ".shift", {channels});
    if (cfg.norm == NormKind::group) {
        // clamp at channel width so narrow layers stay valid
        layer.groups = static_cast<int>(std::min<std::int64_t>(cfg.groups, channels));
        if (channels % layer.groups != 0)
            throw ShapeError("group_norm: channel count " + std::to_string(channels) +
                             " not divisible by groups " + std::to_string(layer.groups));
    }
    return layer;
}

template <typename S>
TensorT<S> activate(const TensorT<S>& x, const NetConfig& cfg) {
    return cfg.activation == ActKind::relu ? relu(x) : leaky_relu(x, cfg.leaky_slope);
}

// conv -> norm -> activation
template <typename S>
struct ConvNormAct {
    ConvLayer<S> conv;
    NormLayer<S> norm;
    const NetConfig* cfg = nullptr;

    TensorT<S> operator()(const TensorT<S>& x) const { return activate(norm(conv(x)), *cfg); }
};

template <typename S>
ConvNormAct<S> make_cna(ParamBank<S>& bank, const std::string& name, std::int64_t ci,
                        std::int64_t co, std::int64_t k, int stride, const NetConfig& cfg) {
    return {make_conv(bank, name + ".conv", ci, co, k, stride),
            make_norm(bank, name + ".norm", co, cfg), &cfg};
}

// Pre-activation residual block: norm -> act -> conv -> norm -> act -> conv,
// plus the identity skip. Output shape equals input shape.
template <typename S>
struct ResidualBlock {
    NormLayer<S> n1, n2;
    ConvLayer<S> c1, c2;
    const NetConfig* cfg = nullptr;

    TensorT<S> operator()(const TensorT<S>& x) const {
        auto y = c1(activate(n1(x), *cfg));
        y = c2(activate(n2(y), *cfg));
        return add(y, x);
    }
};

template <typename S>
ResidualBlock<S> make_res_block(ParamBank<S>& bank, const std::string& name, std::int64_t channels,
                                const NetConfig& cfg) {
    return {make_norm(bank, name + ".norm1", channels, cfg),
            make_norm(bank, name + ".norm2", channels, cfg),
            make_conv(bank, name + ".conv1", channels, channels, 3, 1),
            make_conv(bank, name + ".conv2", channels, channels, 3, 1), &cfg};
}

template <typename S>
void check_divisible(const TensorT<S>& x, std::int64_t divisor, const char* arch) {
    for (int axis = 2; axis < 5; ++axis)
        if (x.dim(axis) % divisor != 0)
            throw ShapeError(std::string(arch) + ": input extent " + std::to_string(x.dim(axis)) +
                             " on axis " + std::to_string(axis) + " is not divisible by " +
                             std::to_string(divisor));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

Network build_unet(const NetConfig& cfg);
Network build_res_unet(const NetConfig& cfg);
Network build_cascaded_unet(const NetConfig& cfg, int stages);

// Dispatch on cfg.arch (cascaded stage count from cfg.stages).
Network build_network(const NetConfig& cfg);

// ---------------------------------------------------------------------------
// full-volume inference
// ---------------------------------------------------------------------------

// Sliding-window tiling with uniform averaging of overlapping logits, then
// sigmoid. Volumes smaller than the patch are zero-padded and cropped back.
RegionProbs forward_full_volume(const Network& net, const MultiModalScan& scan,
                                const Extents3& patch, double overlap);

// [1,4,D,H,W] input tensor from a scan's modalities.
Tensor scan_to_tensor(const MultiModalScan& scan);

}  // namespace dv
