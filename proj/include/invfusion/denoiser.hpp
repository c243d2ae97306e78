#ifndef INVFUSION_DENOISER_HPP
#define INVFUSION_DENOISER_HPP

#include <cmath>
#include <string>
#include <vector>

#include "invfusion/degradations.hpp"
#include "invfusion/nn.hpp"

namespace invfusion {

// ---------------------------------------------------------------------------
// Configuration. A hierarchical transformer denoiser: patch embedding,
// noise-conditioned RMS norms, cosine-similarity attention with axial rotary
// positions, and per-level feature-degradation + joint attention.
// ---------------------------------------------------------------------------
struct DenoiserConfig {
    ImageShape image;
    int patch_h = 2, patch_w = 2;
    std::vector<int> depths{2, 2};
    std::vector<int> widths{48, 96};
    std::vector<bool> invfusion{true, true};
    int head_dim = 16;
    int class_count = 0;   // 0: unconditional; >0: class table with a null row
    int cond_width = 64;
    int mlp_ratio = 2;
    int nppc_components = 0;  // K > 0 adds K component image groups + variances

    int levels() const { return int(widths.size()); }
    int grid_h(int level) const { return image.h / (patch_h << level); }
    int grid_w(int level) const { return image.w / (patch_w << level); }
    int tokens(int level) const { return grid_h(level) * grid_w(level); }
    int eff_patch_h(int level) const { return patch_h << level; }
    int eff_patch_w(int level) const { return patch_w << level; }

    // Number of full images an activation grid at this level unpacks into.
    int stack_count(int level) const {
        return int((int64_t(tokens(level)) * widths[size_t(level)]) / image.dim());
    }

    void validate() const {
        require_config(image.c > 0 && image.h > 0 && image.w > 0, "bad image shape");
        require_config(!widths.empty() && widths.size() == depths.size() &&
                           widths.size() == invfusion.size(),
                       "depths/widths/invfusion must have equal non-zero length");
        const int deepest = 1 << (levels() - 1);
        require_config(image.h % (patch_h * deepest) == 0 && image.w % (patch_w * deepest) == 0,
                       "image dims must divide patch size at every level");
        for (int l = 0; l < levels(); ++l) {
            const int w = widths[size_t(l)];
            require_config(w % image.c == 0,
                           "width " + std::to_string(w) + " not divisible by image channels");
            require_config(w % head_dim == 0, "width not divisible by head_dim");
            require_config((head_dim / 2) % 2 == 0, "head_dim must be a multiple of 4");
            require_config(depths[size_t(l)] >= 1, "depths must be >= 1");
            if (invfusion[size_t(l)]) {
                const int64_t cell = int64_t(image.c) * eff_patch_h(l) * eff_patch_w(l);
                require_config(
                    w % cell == 0,
                    "invfusion level " + std::to_string(l) + ": width * resolution is not a "
                    "multiple of the input dimension; disable the flag or fix the width");
                require_config(stack_count(l) >= 1, "invfusion level has empty stack");
            }
        }
        require_config(head_dim >= 4, "head_dim too small");
        require_config(cond_width >= 8 && cond_width % 2 == 0, "cond_width must be even, >= 8");
        require_config(mlp_ratio >= 1, "mlp_ratio must be >= 1");
        require_config(class_count >= 0, "class_count must be >= 0");
        require_config(nppc_components >= 0, "nppc_components must be >= 0");
        require_config(int64_t(nppc_components) <= image.dim(),
                       "nppc_components exceeds image dimension");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"image", {image.c, image.h, image.w}},
                              {"patch", {patch_h, patch_w}},
                              {"depths", depths},
                              {"widths", widths},
                              {"invfusion", std::vector<int>(invfusion.begin(), invfusion.end())},
                              {"head_dim", head_dim},
                              {"class_count", class_count},
                              {"cond_width", cond_width},
                              {"mlp_ratio", mlp_ratio},
                              {"nppc_components", nppc_components}};
    }

    static DenoiserConfig from_json(const nlohmann::json& j) {
        DenoiserConfig c;
        auto im = j.at("image");
        c.image = {im.at(0).get<int>(), im.at(1).get<int>(), im.at(2).get<int>()};
        c.patch_h = j.at("patch").at(0).get<int>();
        c.patch_w = j.at("patch").at(1).get<int>();
        c.depths = j.at("depths").get<std::vector<int>>();
        c.widths = j.at("widths").get<std::vector<int>>();
        auto inv = j.at("invfusion").get<std::vector<int>>();
        c.invfusion.assign(inv.begin(), inv.end());
        c.head_dim = j.at("head_dim").get<int>();
        c.class_count = j.at("class_count").get<int>();
        c.cond_width = j.at("cond_width").get<int>();
        c.mlp_ratio = j.at("mlp_ratio").get<int>();
        c.nppc_components = j.value("nppc_components", 0);
        c.validate();
        return c;
    }
};

// Everything the denoiser is conditioned on.
template <class S>
struct ConditioningBundle {
    OperatorPtr<S> op;
    Vec<S> y;        // length op->d_pad()
    int label = -1;  // -1: null class

    void check(const DenoiserConfig& cfg) const {
        require_shape(op != nullptr, "conditioning bundle has no operator");
        require_shape(op->shape_in() == cfg.image, "operator shape does not match config");
        require_shape(y.size() == op->d_pad(), "measurement length does not match operator");
        require_shape(label < cfg.class_count, "class label out of range");
    }
};

// ---------------------------------------------------------------------------
// Index-map builders (pure permutations).
// ---------------------------------------------------------------------------
namespace detail {

// token grid [gh*gw, ph*pw*k*c] -> image stack [k, c*H*W]
inline std::vector<int64_t> unpatch_map(int gh, int gw, int ph, int pw, int k, int c) {
    const int H = gh * ph, W = gw * pw;
    std::vector<int64_t> idx(size_t(k) * c * H * W);
    const int width = ph * pw * k * c;
    for (int s = 0; s < k; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const int64_t out = ((int64_t(s) * c + ch) * H + i) * W + j;
                    const int t = (i / ph) * gw + (j / pw);
                    const int a = ((i % ph) * pw + (j % pw)) * k * c + s * c + ch;
                    idx[size_t(out)] = int64_t(t) * width + a;
                }
    return idx;
}

inline std::vector<int64_t> invert_map(const std::vector<int64_t>& idx) {
    std::vector<int64_t> inv(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) inv[size_t(idx[i])] = int64_t(i);
    return inv;
}

// token grid [gh*gw, w] -> merged grid [gh/2*gw/2, 4w], quadrant-major
inline std::vector<int64_t> merge_map(int gh, int gw, int w) {
    std::vector<int64_t> idx(size_t(gh) * gw * w);
    const int mh = gh / 2, mw = gw / 2;
    for (int i = 0; i < mh; ++i)
        for (int j = 0; j < mw; ++j)
            for (int q = 0; q < 4; ++q)
                for (int a = 0; a < w; ++a) {
                    const int64_t out = (int64_t(i) * mw + j) * (4 * w) + q * w + a;
                    const int ti = 2 * i + q / 2, tj = 2 * j + q % 2;
                    idx[size_t(out)] = (int64_t(ti) * gw + tj) * w + a;
                }
    return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The denoiser network (raw F_theta; EDM preconditioning lives in
// diffusion.hpp).
// ---------------------------------------------------------------------------
template <class S>
class Denoiser {
public:
    using Var = ag::Var<S>;

    DenoiserConfig cfg;
    nn::ParamStore<S> params;

    Denoiser(DenoiserConfig config, uint64_t seed) : cfg(std::move(config)) {
        cfg.validate();
        Rng rng(seed);
        build(rng);
        build_caches();
    }

    struct Output {
        Var x0;      // [1, D]
        Var comps;   // [K, D] raw component images (empty unless nppc)
        Var sigma2;  // [1, K] non-negative variances (empty unless nppc)
    };

    // Full forward pass. x_t is a [1, D] variable (leaf when input gradients
    // are needed). The activation hook in feature-degradation layers can be
    // disabled for linearity tests.
    Output forward(const Var& x_t, S sigma, const ConditioningBundle<S>& bundle,
                   bool fdl_identity_act = false) const {
        bundle.check(cfg);
        require_shape(x_t->rows() == 1 && x_t->cols() == cfg.image.dim(),
                      "x_t must be [1, D]");
        const S sd = sigma_data;
        const S cin = S(1) / std::sqrt(sigma * sigma + sd * sd);
        const S cnoise = std::log(std::max(sigma, S(1e-12))) / S(4);

        // conditioning vector
        Var cond = cond_vector(cnoise, bundle.label);

        // network input: c_in * x_t with H^+ y concatenated as extra channels
        Vec<S> hpy = bundle.op->apply_pinv(bundle.y);
        Var xin = ag::scale(x_t, cin);
        Var full = ag::concat_cols(xin, ag::constant<S>(Mat<S>(hpy.transpose())));
        Var tok = ag::gather_flat(full, patchify_in_, cfg.tokens(0),
                                  cfg.patch_h * cfg.patch_w * 2 * cfg.image.c);
        tok = ag::linear(tok, w_embed_, b_embed_);

        // U-shaped pass over levels
        std::vector<Var> skips;
        for (int l = 0; l < cfg.levels() - 1; ++l) {
            for (int b = 0; b < cfg.depths[size_t(l)]; ++b)
                tok = block_forward(down_blocks_[size_t(l)][size_t(b)], tok, cond, l, bundle,
                                    fdl_identity_act);
            skips.push_back(tok);
            tok = ag::gather_flat(tok, merge_maps_[size_t(l)], cfg.tokens(l + 1),
                                  4 * cfg.widths[size_t(l)]);
            tok = ag::linear(tok, w_merge_[size_t(l)], b_merge_[size_t(l)]);
        }
        const int mid = cfg.levels() - 1;
        for (int b = 0; b < cfg.depths[size_t(mid)]; ++b)
            tok = block_forward(mid_blocks_[size_t(b)], tok, cond, mid, bundle,
                                fdl_identity_act);
        for (int l = cfg.levels() - 2; l >= 0; --l) {
            tok = ag::linear(tok, w_split_[size_t(l)], b_split_[size_t(l)]);
            tok = ag::gather_flat(tok, split_maps_[size_t(l)], cfg.tokens(l),
                                  cfg.widths[size_t(l)]);
            // learned interpolation with the skip connection
            Var skip = skips[size_t(l)];
            tok = ag::add(skip, ag::scale_by(ag::sub(tok, skip), lerp_[size_t(l)]));
            for (int b = 0; b < cfg.depths[size_t(l)]; ++b)
                tok = block_forward(up_blocks_[size_t(l)][size_t(b)], tok, cond, l, bundle,
                                    fdl_identity_act);
        }

        // output head
        tok = ag::rms_norm_rows(tok, norm_eps);
        tok = ag::matmul(tok, w_out_);
        const int groups = 1 + cfg.nppc_components;
        Var stack = ag::gather_flat(tok, unpatch_out_, groups, cfg.image.dim());

        Output out;
        out.x0 = ag::slice_rows(stack, 0, 1);
        if (cfg.nppc_components > 0) {
            out.comps = ag::slice_rows(stack, 1, cfg.nppc_components);
            Var pooled = ag::mean_over_rows(tok);
            out.sigma2 = ag::softplus(ag::linear(pooled, w_var_, b_var_));
        }
        return out;
    }

    // Preconditioned denoised estimate D(x_t; sigma) = c_skip x_t + c_out F.
    Var denoise(const Var& x_t, S sigma, const ConditioningBundle<S>& bundle) const {
        Output o = forward(x_t, sigma, bundle);
        return precondition(x_t, o.x0, sigma);
    }

    Var precondition(const Var& x_t, const Var& f, S sigma) const {
        const S sd = sigma_data;
        const S cskip = sd * sd / (sigma * sigma + sd * sd);
        const S cout = sigma * sd / std::sqrt(sigma * sigma + sd * sd);
        return ag::add(ag::scale(x_t, cskip), ag::scale(f, cout));
    }

    // Convenience inference entry point.
    Vec<S> denoise_value(const Vec<S>& x_t, S sigma, const ConditioningBundle<S>& bundle) const {
        auto v = ag::constant<S>(Mat<S>(x_t.transpose()));
        return denoise(v, sigma, bundle)->val.row(0).transpose();
    }

    // EDM loss weight.
    static S loss_weight(S sigma, S sd = S(0.5)) {
        return (sigma * sigma + sd * sd) / ((sigma * sd) * (sigma * sd));
    }

    static constexpr S sigma_data = S(0.5);
    static constexpr S norm_eps = S(1e-6);

    // ----- building blocks (public for targeted tests) -----

    struct Block {
        Var w_norm1, w_qkv, attn_scale, w_attn_out;
        Var w_norm2, w_mlp1, b_mlp1, w_mlp2, b_mlp2;
        bool joint = false;
        Var w_jnorm, w_jk, w_jv;      // joint attention projections
        Var w_deg, b_deg;             // T_psi of the feature degradation layer
    };

    // Feature degradation layer: unpatch to a k-image stack, apply H, append
    // y, map k+1 -> k per measurement coordinate, apply H^+, re-patch.
    // Returns exact zeros for d = 0 operators.
    Var feature_degradation(const Block& blk, const Var& tokens, int level,
                            const LinearDegradation<S>& op, const Vec<S>& y,
                            bool identity_act = false) const {
        const int k = cfg.stack_count(level);
        const int T = cfg.tokens(level);
        const int w = cfg.widths[size_t(level)];
        if (op.d() == 0)
            return ag::constant<S>(Mat<S>::Zero(T, w));
        Var stack = ag::gather_flat(tokens, unpatch_maps_[size_t(level)], k, cfg.image.dim());
        Var meas = ag::op_apply_rows(stack, op);                       // [k, d_pad]
        Var with_y = ag::concat_rows(meas, ag::constant<S>(Mat<S>(y.transpose())));
        Var mixed = ag::add_colvec(ag::matmul(blk.w_deg, with_y), blk.b_deg);  // [k, d_pad]
        if (!identity_act) mixed = ag::gelu(mixed);
        Var back = ag::op_pinv_rows(mixed, op);                         // [k, D]
        return ag::gather_flat(back, patch_maps_[size_t(level)], T, w);
    }

    // One attention + MLP block. When the block is joint and the operator is
    // informative (d > 0), keys/values from the feature degradation output are
    // concatenated with the self keys/values; the queries are shared and the
    // softmax normalizes over the concatenated axis.
    Var block_forward(const Block& blk, const Var& x, const Var& cond, int level,
                      const ConditioningBundle<S>& bundle, bool fdl_identity_act) const {
        const int w = cfg.widths[size_t(level)];
        const int nheads = w / cfg.head_dim;
        const int e = cfg.head_dim;
        const auto& cosv = rot_cos_[size_t(level)];
        const auto& sinv = rot_sin_[size_t(level)];

        Var xn = ada_rms_norm(x, cond, blk.w_norm1);
        Var qkv = ag::matmul(xn, blk.w_qkv);

        const bool use_joint = blk.joint && bundle.op->d() > 0;
        Var jk, jv;
        if (use_joint) {
            Var feat = feature_degradation(blk, x, level, *bundle.op, bundle.y,
                                           fdl_identity_act);
            Var fn = ada_rms_norm(feat, cond, blk.w_jnorm);
            jk = ag::matmul(ag::concat_cols(xn, fn), blk.w_jk);
            jv = ag::matmul(fn, blk.w_jv);
        }

        std::vector<Var> head_outs;
        head_outs.reserve(size_t(nheads));
        for (int h = 0; h < nheads; ++h) {
            Var q = ag::slice_cols(qkv, int64_t(h) * e, e);
            Var k = ag::slice_cols(qkv, int64_t(w) + h * e, e);
            Var v = ag::slice_cols(qkv, int64_t(2) * w + h * e, e);
            q = ag::rotary(ag::l2_norm_rows(q, norm_eps), cosv, sinv);
            k = ag::rotary(ag::l2_norm_rows(k, norm_eps), cosv, sinv);
            if (use_joint) {
                Var jkh = ag::slice_cols(jk, int64_t(h) * e, e);
                Var jvh = ag::slice_cols(jv, int64_t(h) * e, e);
                jkh = ag::rotary(ag::l2_norm_rows(jkh, norm_eps), cosv, sinv);
                k = ag::concat_rows(k, jkh);
                v = ag::concat_rows(v, jvh);
            }
            Var logits = ag::scale_by(ag::matmul(q, ag::transpose(k)),
                                      ag::slice_cols(blk.attn_scale, h, 1));
            Var attn = ag::softmax_rows(logits);
            head_outs.push_back(ag::matmul(attn, v));
        }
        Var attn_out = head_outs[0];
        for (size_t h = 1; h < head_outs.size(); ++h)
            attn_out = ag::concat_cols(attn_out, head_outs[h]);
        Var x1 = ag::add(x, ag::matmul(attn_out, blk.w_attn_out));

        Var x2 = ada_rms_norm(x1, cond, blk.w_norm2);
        x2 = ag::gelu(ag::add_rowvec(ag::matmul(x2, blk.w_mlp1), blk.b_mlp1));
        x2 = ag::add_rowvec(ag::matmul(x2, blk.w_mlp2), blk.b_mlp2);
        return ag::add(x1, x2);
    }

    // Adaptive RMS norm: rms(x) * (1 + cond W), with W zero-initialized.
    Var ada_rms_norm(const Var& x, const Var& cond, const Var& w_scale) const {
        Var s = ag::add_scalar(ag::matmul(cond, w_scale), S(1));
        return ag::mul_rowvec(ag::rms_norm_rows(x, norm_eps), s);
    }

    Var cond_vector(S cnoise, int label) const {
        const int nf = cfg.cond_width / 2;
        Mat<S> feats(1, cfg.cond_width);
        for (int i = 0; i < nf; ++i) {
            const S f = fourier_freqs_[size_t(i)];
            feats(0, 2 * i) = std::cos(f * cnoise);
            feats(0, 2 * i + 1) = std::sin(f * cnoise);
        }
        Var c = ag::matmul(ag::constant<S>(std::move(feats)), w_cond_in_);
        if (cfg.class_count > 0) {
            const int row = label < 0 ? cfg.class_count : label;
            c = ag::add(c, ag::slice_rows(class_embed_, row, 1));
        }
        c = ag::gelu(ag::linear(c, w_cond1_, b_cond1_));
        return ag::linear(c, w_cond2_, b_cond2_);
    }

    const std::vector<typename Denoiser<S>::Block>& mid_blocks() const { return mid_blocks_; }

private:
    void build(Rng& rng) {
        const int c2 = 2 * cfg.image.c;
        const int in_tok = cfg.patch_h * cfg.patch_w * c2;
        w_embed_ = params.add("embed.w", nn::linear_init<S>(rng, in_tok, cfg.widths[0]));
        b_embed_ = params.add("embed.b", Mat<S>::Zero(1, cfg.widths[0]));

        const int cw = cfg.cond_width;
        w_cond_in_ = params.add("cond.in", nn::linear_init<S>(rng, cw, cw));
        w_cond1_ = params.add("cond.w1", nn::linear_init<S>(rng, cw, cw));
        b_cond1_ = params.add("cond.b1", Mat<S>::Zero(1, cw));
        w_cond2_ = params.add("cond.w2", nn::linear_init<S>(rng, cw, cw));
        b_cond2_ = params.add("cond.b2", Mat<S>::Zero(1, cw));
        if (cfg.class_count > 0)
            class_embed_ = params.add(
                "cond.class", nn::normal_init<S>(rng, cfg.class_count + 1, cw, S(0.5)));

        fourier_freqs_.resize(size_t(cw / 2));
        for (int i = 0; i < cw / 2; ++i)
            fourier_freqs_[size_t(i)] =
                S(0.25 * std::pow(64.0, double(i) / std::max(1, cw / 2 - 1)));

        for (int l = 0; l < cfg.levels() - 1; ++l) {
            std::vector<Block> down, up;
            for (int b = 0; b < cfg.depths[size_t(l)]; ++b) {
                down.push_back(make_block(rng, l, "down" + std::to_string(l) + "." +
                                                      std::to_string(b)));
                up.push_back(make_block(rng, l, "up" + std::to_string(l) + "." +
                                                    std::to_string(b)));
            }
            down_blocks_.push_back(std::move(down));
            up_blocks_.push_back(std::move(up));
            const int w0 = cfg.widths[size_t(l)], w1 = cfg.widths[size_t(l) + 1];
            w_merge_.push_back(params.add("merge" + std::to_string(l) + ".w",
                                          nn::linear_init<S>(rng, 4 * w0, w1)));
            b_merge_.push_back(params.add("merge" + std::to_string(l) + ".b",
                                          Mat<S>::Zero(1, w1)));
            w_split_.push_back(params.add("split" + std::to_string(l) + ".w",
                                          nn::linear_init<S>(rng, w1, 4 * w0)));
            b_split_.push_back(params.add("split" + std::to_string(l) + ".b",
                                          Mat<S>::Zero(1, 4 * w0)));
            lerp_.push_back(params.add("lerp" + std::to_string(l),
                                       Mat<S>::Constant(1, 1, S(0.5))));
        }
        const int mid = cfg.levels() - 1;
        for (int b = 0; b < cfg.depths[size_t(mid)]; ++b)
            mid_blocks_.push_back(make_block(rng, mid, "mid." + std::to_string(b)));

        const int groups = 1 + cfg.nppc_components;
        const int out_tok = cfg.patch_h * cfg.patch_w * groups * cfg.image.c;
        w_out_ = params.add("head.w", Mat<S>::Zero(cfg.widths[0], out_tok));
        if (cfg.nppc_components > 0) {
            w_var_ = params.add("head.var_w",
                                nn::linear_init<S>(rng, cfg.widths[0], cfg.nppc_components));
            b_var_ = params.add("head.var_b", Mat<S>::Zero(1, cfg.nppc_components));
        }
    }

    Block make_block(Rng& rng, int level, const std::string& prefix) {
        Block b;
        const int w = cfg.widths[size_t(level)];
        const int nheads = w / cfg.head_dim;
        b.w_norm1 = params.add(prefix + ".norm1", Mat<S>::Zero(cfg.cond_width, w));
        b.w_qkv = params.add(prefix + ".qkv", nn::linear_init<S>(rng, w, 3 * w));
        b.attn_scale = params.add(prefix + ".scale", Mat<S>::Constant(1, nheads, S(10)));
        b.w_attn_out = params.add(prefix + ".out", Mat<S>::Zero(w, w));
        b.w_norm2 = params.add(prefix + ".norm2", Mat<S>::Zero(cfg.cond_width, w));
        const int hidden = cfg.mlp_ratio * w;
        b.w_mlp1 = params.add(prefix + ".mlp1", nn::linear_init<S>(rng, w, hidden));
        b.b_mlp1 = params.add(prefix + ".mlp1b", Mat<S>::Zero(1, hidden));
        b.w_mlp2 = params.add(prefix + ".mlp2", Mat<S>::Zero(hidden, w));
        b.b_mlp2 = params.add(prefix + ".mlp2b", Mat<S>::Zero(1, w));
        b.joint = cfg.invfusion[size_t(level)];
        if (b.joint) {
            const int k = cfg.stack_count(level);
            b.w_jnorm = params.add(prefix + ".jnorm", Mat<S>::Zero(cfg.cond_width, w));
            b.w_jk = params.add(prefix + ".jk", Mat<S>::Zero(2 * w, w));
            b.w_jv = params.add(prefix + ".jv", Mat<S>::Zero(w, w));
            // T_psi starts as the residual form H a_i - y per stack image
            Mat<S> deg = Mat<S>::Zero(k, k + 1);
            for (int i = 0; i < k; ++i) {
                deg(i, i) = S(1);
                deg(i, k) = S(-1);
            }
            b.w_deg = params.add(prefix + ".deg_w", std::move(deg));
            b.b_deg = params.add(prefix + ".deg_b", Mat<S>::Zero(k, 1));
        }
        return b;
    }

    void build_caches() {
        patchify_in_ = ag::make_index_map(detail::invert_map(detail::unpatch_map(
            cfg.grid_h(0), cfg.grid_w(0), cfg.patch_h, cfg.patch_w, 1, 2 * cfg.image.c)));
        unpatch_out_ = ag::make_index_map(detail::unpatch_map(
            cfg.grid_h(0), cfg.grid_w(0), cfg.patch_h, cfg.patch_w, 1 + cfg.nppc_components,
            cfg.image.c));
        for (int l = 0; l < cfg.levels(); ++l) {
            if (cfg.invfusion[size_t(l)]) {
                auto up = detail::unpatch_map(cfg.grid_h(l), cfg.grid_w(l), cfg.eff_patch_h(l),
                                              cfg.eff_patch_w(l), cfg.stack_count(l),
                                              cfg.image.c);
                patch_maps_.push_back(ag::make_index_map(detail::invert_map(up)));
                unpatch_maps_.push_back(ag::make_index_map(std::move(up)));
            } else {
                patch_maps_.push_back(nullptr);
                unpatch_maps_.push_back(nullptr);
            }
            rot_cos_.push_back(Mat<S>());
            rot_sin_.push_back(Mat<S>());
            build_rotary(l, rot_cos_.back(), rot_sin_.back());
            if (l < cfg.levels() - 1) {
                auto mm = detail::merge_map(cfg.grid_h(l), cfg.grid_w(l),
                                            cfg.widths[size_t(l)]);
                split_maps_.push_back(ag::make_index_map(detail::invert_map(mm)));
                merge_maps_.push_back(ag::make_index_map(std::move(mm)));
            }
        }
    }

    // Axial rotary angles: half of the rotation pairs encode the row
    // coordinate, half the column coordinate. Identical encodings are used
    // for self keys and joint keys.
    void build_rotary(int level, Mat<S>& cosv, Mat<S>& sinv) const {
        const int gh = cfg.grid_h(level), gw = cfg.grid_w(level);
        const int pairs = cfg.head_dim / 2;
        const int per_axis = pairs / 2;
        cosv.resize(gh * gw, pairs);
        sinv.resize(gh * gw, pairs);
        for (int i = 0; i < gh; ++i)
            for (int j = 0; j < gw; ++j) {
                const int t = i * gw + j;
                for (int p = 0; p < pairs; ++p) {
                    const int axis_p = p % per_axis;
                    const S freq = S(std::pow(64.0, -double(axis_p) / per_axis));
                    const S pos = p < per_axis ? S(i - (gh - 1) * S(0.5))
                                               : S(j - (gw - 1) * S(0.5));
                    const S ang = pos * freq;
                    cosv(t, p) = std::cos(ang);
                    sinv(t, p) = std::sin(ang);
                }
            }
    }

    Var w_embed_, b_embed_;
    Var w_cond_in_, w_cond1_, b_cond1_, w_cond2_, b_cond2_, class_embed_;
    Var w_out_, w_var_, b_var_;
    std::vector<std::vector<Block>> down_blocks_, up_blocks_;
    std::vector<Block> mid_blocks_;
    std::vector<Var> w_merge_, b_merge_, w_split_, b_split_, lerp_;
    std::vector<S> fourier_freqs_;

    ag::IndexMap patchify_in_, unpatch_out_;
    std::vector<ag::IndexMap> unpatch_maps_, patch_maps_, merge_maps_, split_maps_;
    std::vector<Mat<S>> rot_cos_, rot_sin_;
};

}  // namespace invfusion

#endif
