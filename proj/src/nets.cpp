#include "distillvol/nets.hpp"

#include <algorithm>
#include <cmath>

#include "distillvol/errors.hpp"

namespace dv {

using detail::ConvLayer;
using detail::ConvNormAct;
using detail::make_cna;
using detail::make_conv;
using detail::make_res_block;
using detail::ParamBank;
using detail::ResidualBlock;

void validate_net_config(const NetConfig& cfg) {
    if (cfg.levels < 2) throw ConfigError("model.levels must be >= 2, got " + std::to_string(cfg.levels));
    if (cfg.base_channels < 1)
        throw ConfigError("model.base_channels must be >= 1, got " + std::to_string(cfg.base_channels));
    if (cfg.out_regions != 3)
        throw ConfigError("model.out_regions must be 3, got " + std::to_string(cfg.out_regions));
    if (cfg.in_modalities != 4)
        throw ConfigError("model.in_modalities must be 4, got " + std::to_string(cfg.in_modalities));
    if (cfg.stages < 1) throw ConfigError("model.stages must be >= 1, got " + std::to_string(cfg.stages));
}

// ---------------------------------------------------------------------------
// plain UNet: strided-conv encoder, trilinear decoder with channel reduction
// before each upsampling, concatenated skips
// ---------------------------------------------------------------------------

Network build_unet(const NetConfig& cfg) {
    validate_net_config(cfg);
    if (cfg.norm != NormKind::instance)
        throw ConfigError("unet requires instance normalization");
    if (cfg.activation != ActKind::leaky_relu || cfg.leaky_slope != 1e-2)
        throw ConfigError("unet requires leaky_relu activation with slope 0.01");

    Network net;
    net.cfg = cfg;
    // layers keep pointers into the config; give it stable storage that the
    // forward closure owns
    auto shared_cfg = std::make_shared<NetConfig>(cfg);
    const int L = cfg.levels;
    const std::int64_t B = cfg.base_channels;
    auto ch = [B](int level) { return B << level; };
    net.spatial_divisor = std::int64_t(1) << (L - 1);

    ParamBank<float> bank(net, hash_combine(0x554e4554ull /* "UNET" */, cfg.init_seed));

    auto stem_a = make_cna(bank, "encoder.0.a", cfg.in_modalities, ch(0), 3, 1, *shared_cfg);
    auto stem_b = make_cna(bank, "encoder.0.b", ch(0), ch(0), 3, 1, *shared_cfg);

    std::vector<ConvNormAct<float>> downs, refines;
    for (int l = 1; l < L; ++l) {
        const std::string base = "encoder." + std::to_string(l);
        downs.push_back(make_cna(bank, base + ".down", ch(l - 1), ch(l), 3, 2, *shared_cfg));
        refines.push_back(make_cna(bank, base + ".conv", ch(l), ch(l), 3, 1, *shared_cfg));
    }

    std::vector<ConvNormAct<float>> reduces, dec_a, dec_b;
    for (int l = L - 2; l >= 0; --l) {
        const std::string base = "decoder." + std::to_string(l);
        reduces.push_back(make_cna(bank, base + ".reduce", ch(l + 1), ch(l), 1, 1, *shared_cfg));
        dec_a.push_back(make_cna(bank, base + ".a", 2 * ch(l), ch(l), 3, 1, *shared_cfg));
        dec_b.push_back(make_cna(bank, base + ".b", ch(l), ch(l), 3, 1, *shared_cfg));
    }
    auto head = make_conv(bank, "head", ch(0), cfg.out_regions, 1, 1);

    const std::int64_t divisor = net.spatial_divisor;
    net.forward = [=](const Tensor& x) -> Tensor {
        (void)shared_cfg;
        detail::check_divisible(x, divisor, "unet");
        std::vector<Tensor> skips;
        Tensor h = stem_b(stem_a(x));
        skips.push_back(h);
        for (std::size_t l = 0; l < downs.size(); ++l) {
            h = refines[l](downs[l](h));
            if (l + 1 < downs.size()) skips.push_back(h);
        }
        for (std::size_t i = 0; i < reduces.size(); ++i) {
            h = upsample_trilinear2x(reduces[i](h));
            h = concat<float>({h, skips[skips.size() - 1 - i]}, 1);
            h = dec_b[i](dec_a[i](h));
        }
        return head(h);
    };
    return net;
}

// ---------------------------------------------------------------------------
// residual UNet: asymmetric encoder with block schedule 1,2,2,4, one residual
// block per decoder level, additive skips (the student architecture)
// ---------------------------------------------------------------------------

Network build_res_unet(const NetConfig& cfg) {
    validate_net_config(cfg);
    if (cfg.levels != 4)
        throw ConfigError("res_unet block schedule is fixed to 4 levels, got levels=" +
                          std::to_string(cfg.levels));
    if (cfg.norm != NormKind::group) throw ConfigError("res_unet requires group normalization");
    if (cfg.activation != ActKind::relu) throw ConfigError("res_unet requires relu activation");

    Network net;
    net.cfg = cfg;
    auto shared_cfg = std::make_shared<NetConfig>(cfg);
    const std::int64_t B = cfg.base_channels;
    auto ch = [B](int level) { return B << level; };
    net.spatial_divisor = 8;

    ParamBank<float> bank(net, hash_combine(0x5245534eull /* "RESN" */, cfg.init_seed));
    static constexpr int kBlockCounts[4] = {1, 2, 2, 4};

    auto stem = make_conv(bank, "stem", cfg.in_modalities, ch(0), 3, 1);

    std::vector<std::vector<ResidualBlock<float>>> enc_blocks(4);
    std::vector<ConvLayer<float>> down_convs;
    for (int l = 0; l < 4; ++l) {
        for (int b = 0; b < kBlockCounts[l]; ++b) {
            enc_blocks[static_cast<std::size_t>(l)].push_back(make_res_block(
                bank, "encoder." + std::to_string(l) + ".block" + std::to_string(b), ch(l),
                *shared_cfg));
            ++net.encoder_res_blocks;
        }
        if (l < 3)
            down_convs.push_back(
                make_conv(bank, "encoder." + std::to_string(l) + ".down", ch(l), ch(l + 1), 3, 2));
    }

    std::vector<ConvLayer<float>> reduces;
    std::vector<ResidualBlock<float>> dec_blocks;
    for (int l = 2; l >= 0; --l) {
        reduces.push_back(
            make_conv(bank, "decoder." + std::to_string(l) + ".reduce", ch(l + 1), ch(l), 1, 1));
        dec_blocks.push_back(
            make_res_block(bank, "decoder." + std::to_string(l) + ".block", ch(l), *shared_cfg));
        ++net.decoder_res_blocks;
    }
    auto head = make_conv(bank, "head", ch(0), cfg.out_regions, 1, 1);

    net.forward = [=](const Tensor& x) -> Tensor {
        (void)shared_cfg;
        detail::check_divisible(x, 8, "res_unet");
        Tensor h = stem(x);
        std::vector<Tensor> skips;
        for (int l = 0; l < 4; ++l) {
            for (const auto& block : enc_blocks[static_cast<std::size_t>(l)]) h = block(h);
            if (l < 3) {
                skips.push_back(h);
                h = down_convs[static_cast<std::size_t>(l)](h);
            }
        }
        for (std::size_t i = 0; i < reduces.size(); ++i) {
            h = upsample_trilinear2x(reduces[i](h));
            h = add(h, skips[skips.size() - 1 - i]);
            h = dec_blocks[i](h);
        }
        return head(h);
    };
    return net;
}

// ---------------------------------------------------------------------------
// cascaded UNet: per-modality encoders fused by elementwise maximum, one UNet
// per scale; each later stage sees the previous stage's upsampled
// probabilities as 3 extra input channels
// ---------------------------------------------------------------------------

namespace {

struct CascadeStage {
    // per modality: stem + per-level res block + per-level down conv
    std::vector<ConvLayer<float>> stems;                          // [4]
    std::vector<std::vector<ResidualBlock<float>>> enc_blocks;    // [4][L]
    std::vector<std::vector<ConvLayer<float>>> enc_downs;         // [4][L-1]
    std::vector<ConvLayer<float>> reduces;                        // decoder 1x1, L-1
    std::vector<ConvLayer<float>> merges;                         // post-concat 1x1, L-1
    std::vector<ResidualBlock<float>> dec_blocks;                 // L-1
    ConvLayer<float> head;
};

}  // namespace

Network build_cascaded_unet(const NetConfig& cfg, int stages) {
    validate_net_config(cfg);
    if (stages < 1) throw ConfigError("cascaded_unet requires stages >= 1");

    Network net;
    net.cfg = cfg;
    net.cfg.stages = stages;
    auto shared_cfg = std::make_shared<NetConfig>(net.cfg);
    const int L = cfg.levels;
    const std::int64_t B = cfg.base_channels;
    auto ch = [B](int level) { return B << level; };
    net.spatial_divisor = std::int64_t(1) << (stages - 1 + L - 1);

    ParamBank<float> bank(net, hash_combine(0x43415343ull /* "CASC" */, cfg.init_seed));

    std::vector<CascadeStage> stage_layers;
    for (int s = 0; s < stages; ++s) {
        CascadeStage st;
        const std::string sbase = "stage." + std::to_string(s);
        const std::int64_t enc_in = 1 + (s > 0 ? cfg.out_regions : 0);
        for (int m = 0; m < 4; ++m) {
            const std::string mbase = sbase + ".encoder." + std::string(kModalityNames[m]);
            st.stems.push_back(make_conv(bank, mbase + ".stem", enc_in, ch(0), 3, 1));
            st.enc_blocks.emplace_back();
            st.enc_downs.emplace_back();
            for (int l = 0; l < L; ++l) {
                st.enc_blocks.back().push_back(
                    make_res_block(bank, mbase + ".level" + std::to_string(l) + ".block", ch(l),
                                   *shared_cfg));
                ++net.encoder_res_blocks;
                if (l < L - 1)
                    st.enc_downs.back().push_back(make_conv(
                        bank, mbase + ".level" + std::to_string(l) + ".down", ch(l), ch(l + 1), 3, 2));
            }
        }
        for (int l = L - 2; l >= 0; --l) {
            const std::string dbase = sbase + ".decoder." + std::to_string(l);
            st.reduces.push_back(make_conv(bank, dbase + ".reduce", ch(l + 1), ch(l), 1, 1));
            st.merges.push_back(make_conv(bank, dbase + ".merge", 2 * ch(l), ch(l), 1, 1));
            st.dec_blocks.push_back(make_res_block(bank, dbase + ".block", ch(l), *shared_cfg));
            ++net.decoder_res_blocks;
        }
        st.head = make_conv(bank, sbase + ".head", ch(0), cfg.out_regions, 1, 1);
        stage_layers.push_back(std::move(st));
    }

    const std::int64_t divisor = net.spatial_divisor;
    const int levels = L;
    net.forward = [=](const Tensor& x) -> Tensor {
        (void)shared_cfg;
        detail::check_divisible(x, divisor, "cascaded_unet");
        const std::int64_t batch = x.dim(0);

        // split the input into one [N,1,...] tensor per modality; done with
        // concat-free slicing via per-channel copy
        auto slice_channel = [&](const Tensor& t, std::int64_t c) {
            const std::int64_t C = t.dim(1), sp = t.dim(2) * t.dim(3) * t.dim(4);
            std::vector<float> data(static_cast<std::size_t>(batch * sp));
            for (std::int64_t n = 0; n < batch; ++n)
                std::copy(t.data() + (n * C + c) * sp, t.data() + (n * C + c + 1) * sp,
                          data.begin() + n * sp);
            return Tensor::from_vector({batch, 1, t.dim(2), t.dim(3), t.dim(4)}, std::move(data));
        };

        // input pyramid: stage s sees the input reduced (stages-1-s) times
        std::vector<Tensor> pyramid(static_cast<std::size_t>(stages));
        pyramid[static_cast<std::size_t>(stages - 1)] = x;
        for (int s = stages - 2; s >= 0; --s)
            pyramid[static_cast<std::size_t>(s)] =
                avg_pool2(pyramid[static_cast<std::size_t>(s + 1)]);

        Tensor prev_probs;  // upsampled sigmoid output of the previous stage
        Tensor logits;
        for (int s = 0; s < stages; ++s) {
            const auto& st = stage_layers[static_cast<std::size_t>(s)];
            const Tensor& stage_in = pyramid[static_cast<std::size_t>(s)];

            // per-modality encoders, fused per level with elementwise max
            std::vector<Tensor> fused(static_cast<std::size_t>(levels));
            for (int m = 0; m < 4; ++m) {
                Tensor h = slice_channel(stage_in, m);
                if (prev_probs.defined()) h = concat<float>({h, prev_probs}, 1);
                h = st.stems[static_cast<std::size_t>(m)](h);
                for (int l = 0; l < levels; ++l) {
                    h = st.enc_blocks[static_cast<std::size_t>(m)][static_cast<std::size_t>(l)](h);
                    auto& slot = fused[static_cast<std::size_t>(l)];
                    slot = slot.defined() ? elementwise_max(slot, h) : h;
                    if (l < levels - 1)
                        h = st.enc_downs[static_cast<std::size_t>(m)][static_cast<std::size_t>(l)](h);
                }
            }

            Tensor h = fused[static_cast<std::size_t>(levels - 1)];
            for (std::size_t i = 0; i < st.reduces.size(); ++i) {
                h = upsample_trilinear2x(st.reduces[i](h));
                h = st.merges[i](concat<float>({h, fused[st.reduces.size() - 1 - i]}, 1));
                h = st.dec_blocks[i](h);
            }
            logits = st.head(h);
            if (s < stages - 1) prev_probs = upsample_trilinear2x(sigmoid(logits));
        }
        return logits;
    };
    return net;
}

Network build_network(const NetConfig& cfg) {
    if (cfg.arch == "unet") return build_unet(cfg);
    if (cfg.arch == "res_unet") return build_res_unet(cfg);
    if (cfg.arch == "cascaded_unet") return build_cascaded_unet(cfg, cfg.stages);
    throw ConfigError("unknown architecture '" + cfg.arch +
                      "' (expected unet, res_unet or cascaded_unet)");
}

// ---------------------------------------------------------------------------
// full-volume inference
// ---------------------------------------------------------------------------

Tensor scan_to_tensor(const MultiModalScan& scan) {
    const Extents3& e = scan.extents();
    const std::int64_t n = extents_numel(e);
    std::vector<float> data(static_cast<std::size_t>(4 * n));
    for (int m = 0; m < 4; ++m)
        std::copy(scan.modalities[static_cast<std::size_t>(m)].voxels.begin(),
                  scan.modalities[static_cast<std::size_t>(m)].voxels.end(),
                  data.begin() + m * n);
    return Tensor::from_vector({1, 4, e[0], e[1], e[2]}, std::move(data));
}

RegionProbs forward_full_volume(const Network& net, const MultiModalScan& scan,
                                const Extents3& patch, double overlap) {
    if (overlap < 0.0 || overlap >= 1.0)
        throw Error("forward_full_volume: overlap must be in [0,1), got " + std::to_string(overlap));
    NoGradGuard no_grad;

    const Extents3& orig = scan.extents();
    Extents3 padded;
    for (int i = 0; i < 3; ++i)
        padded[static_cast<std::size_t>(i)] =
            std::max(orig[static_cast<std::size_t>(i)], patch[static_cast<std::size_t>(i)]);

    const std::int64_t n = extents_numel(padded);
    std::vector<float> volume(static_cast<std::size_t>(4 * n), 0.0f);
    for (int m = 0; m < 4; ++m) {
        const auto& src = scan.modalities[static_cast<std::size_t>(m)].voxels;
        for (std::int64_t d = 0; d < orig[0]; ++d)
            for (std::int64_t h = 0; h < orig[1]; ++h)
                std::copy(src.begin() + (d * orig[1] + h) * orig[2],
                          src.begin() + (d * orig[1] + h + 1) * orig[2],
                          volume.begin() + m * n + (d * padded[1] + h) * padded[2]);
    }

    auto positions = [&](int axis) {
        const std::int64_t ext = padded[static_cast<std::size_t>(axis)];
        const std::int64_t pe = patch[static_cast<std::size_t>(axis)];
        const std::int64_t step = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(static_cast<double>(pe) * (1.0 - overlap))));
        std::vector<std::int64_t> pos;
        for (std::int64_t o = 0; o + pe <= ext; o += step) pos.push_back(o);
        if (pos.empty() || pos.back() != ext - pe) pos.push_back(ext - pe);
        return pos;
    };
    const auto pd = positions(0), ph = positions(1), pw = positions(2);

    std::vector<double> acc(static_cast<std::size_t>(3 * n), 0.0);
    std::vector<std::int32_t> cnt(static_cast<std::size_t>(n), 0);
    const std::int64_t patch_n = extents_numel(patch);

    for (const std::int64_t od : pd)
        for (const std::int64_t oh : ph)
            for (const std::int64_t ow : pw) {
                std::vector<float> tile(static_cast<std::size_t>(4 * patch_n));
                for (int m = 0; m < 4; ++m)
                    for (std::int64_t d = 0; d < patch[0]; ++d)
                        for (std::int64_t h = 0; h < patch[1]; ++h)
                            std::copy(volume.begin() + m * n +
                                          ((od + d) * padded[1] + oh + h) * padded[2] + ow,
                                      volume.begin() + m * n +
                                          ((od + d) * padded[1] + oh + h) * padded[2] + ow +
                                          patch[2],
                                      tile.begin() + m * patch_n + (d * patch[1] + h) * patch[2]);
                const Tensor logits = net.forward(
                    Tensor::from_vector({1, 4, patch[0], patch[1], patch[2]}, std::move(tile)));
                if (logits.rank() != 5 || logits.dim(1) != 3 || logits.dim(2) != patch[0] ||
                    logits.dim(3) != patch[1] || logits.dim(4) != patch[2])
                    throw ShapeError("network output shape " + shape_str(logits.shape()) +
                                     " does not match patch " + std::to_string(patch[0]) + "x" +
                                     std::to_string(patch[1]) + "x" + std::to_string(patch[2]));
                const float* lp = logits.data();
                for (int k = 0; k < 3; ++k)
                    for (std::int64_t d = 0; d < patch[0]; ++d)
                        for (std::int64_t h = 0; h < patch[1]; ++h) {
                            const std::int64_t src = k * patch_n + (d * patch[1] + h) * patch[2];
                            const std::int64_t dst =
                                k * n + ((od + d) * padded[1] + oh + h) * padded[2] + ow;
                            for (std::int64_t w = 0; w < patch[2]; ++w)
                                acc[static_cast<std::size_t>(dst + w)] += lp[src + w];
                        }
                for (std::int64_t d = 0; d < patch[0]; ++d)
                    for (std::int64_t h = 0; h < patch[1]; ++h) {
                        const std::int64_t dst = ((od + d) * padded[1] + oh + h) * padded[2] + ow;
                        for (std::int64_t w = 0; w < patch[2]; ++w)
                            cnt[static_cast<std::size_t>(dst + w)] += 1;
                    }
            }

    RegionProbs out;
    out.extents = orig;
    const std::int64_t out_n = extents_numel(orig);
    out.probs.resize(static_cast<std::size_t>(3 * out_n));
    for (int k = 0; k < 3; ++k)
        for (std::int64_t d = 0; d < orig[0]; ++d)
            for (std::int64_t h = 0; h < orig[1]; ++h)
                for (std::int64_t w = 0; w < orig[2]; ++w) {
                    const std::int64_t src = k * n + (d * padded[1] + h) * padded[2] + w;
                    const std::int64_t dst = k * out_n + (d * orig[1] + h) * orig[2] + w;
                    const double mean_logit =
                        acc[static_cast<std::size_t>(src)] /
                        static_cast<double>(cnt[static_cast<std::size_t>((d * padded[1] + h) *
                                                                             padded[2] +
                                                                         w)]);
                    out.probs[static_cast<std::size_t>(dst)] =
                        static_cast<float>(1.0 / (1.0 + std::exp(-mean_logit)));
                }
    return out;
}

}  // namespace dv
