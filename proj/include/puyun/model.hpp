#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "puyun/dataset.hpp"
#include "puyun/grid.hpp"
#include "puyun/ops.hpp"
#include "puyun/rng.hpp"
#include "puyun/tensor.hpp"

namespace puyun {

enum class LkaMode { kDirect, kDecomposed };
enum class MergeMode { kResize, kPixelShuffleResize };

inline const char* to_string(LkaMode m) {
    return m == LkaMode::kDirect ? "direct" : "decomposed";
}
inline const char* to_string(MergeMode m) {
    return m == MergeMode::kResize ? "resize" : "pixelshuffle+resize";
}

struct ModelConfig {
    int embed_dim = 64;
    std::array<int, 4> blocks_per_stage = {2, 2, 2, 2};
    int kernel_k = 5;
    LkaMode lka_mode = LkaMode::kDecomposed;
    int patch = 4;
    MergeMode merge = MergeMode::kPixelShuffleResize;
    double droppath_rate = 0.0;
    VariableSet variables = VariableSet::desk_default();
    GridSpec grid = GridSpec::make(33, 64);

    int total_blocks() const {
        return blocks_per_stage[0] + blocks_per_stage[1] + blocks_per_stage[2] +
               blocks_per_stage[3];
    }
    // Latitude rows are trimmed to a patch multiple before embedding.
    int trimmed_lat() const { return (grid.n_lat / patch) * patch; }
    int latent_h() const { return grid.n_lat / patch; }
    int latent_w() const { return grid.n_lon / patch; }

    void validate() const {
        if (embed_dim < 1) throw ConfigError("model: embed_dim must be positive");
        if (kernel_k < 3 || kernel_k % 2 == 0) throw ConfigError("model: kernel_K must be odd >= 3");
        if (patch < 1) throw ConfigError("model: patch must be >= 1");
        for (int b : blocks_per_stage) {
            if (b < 1) throw ConfigError("model: every stage needs at least one block");
        }
        if (grid.n_lon % patch != 0) {
            throw ConfigError("model: longitude size " + std::to_string(grid.n_lon) +
                              " not divisible by patch " + std::to_string(patch));
        }
        if (grid.n_lat < patch) throw ConfigError("model: latitude size smaller than patch");
        if (droppath_rate < 0.0 || droppath_rate >= 1.0) {
            throw ConfigError("model: droppath_rate must be in [0, 1)");
        }
        variables.validate();
    }

    static ModelConfig desk_default() { return ModelConfig{}; }
};

// The decomposed large-kernel attention stack: a dense depthwise conv, a
// dilated depthwise conv, then a pointwise conv. Pinned pairs for the
// kernel sizes used in the ablations; sqrt-based fallback otherwise.
struct LkaDecomposition {
    int k1;
    int k2;
    int dilation;
};

inline LkaDecomposition lka_decomposition(int k) {
    switch (k) {
        case 5: return {3, 3, 2};
        case 7: return {3, 3, 3};
        case 9: return {5, 3, 3};
        case 11: return {5, 3, 4};
        default: break;
    }
    if (k <= 3) return {k, 1, 1};
    int d = std::max(2, static_cast<int>(std::llround(std::sqrt(static_cast<double>(k)))));
    int k1 = 2 * d - 1;
    int k2 = (k + d - 1) / d;
    if (k2 % 2 == 0) ++k2;
    return {k1, k2, d};
}

// Named parameter tensors in a stable construction order; the order defines
// the checkpoint manifest and every deterministic reduction over gradients.
template <typename T>
struct ParametersT {
    std::vector<std::pair<std::string, TensorT<T>>> entries;
    std::unordered_map<std::string, std::size_t> index;

    void add(const std::string& name, TensorT<T> t) {
        if (index.count(name)) throw ConfigError("duplicate parameter path '" + name + "'");
        index.emplace(name, entries.size());
        entries.emplace_back(name, std::move(t));
    }

    bool has(const std::string& name) const { return index.count(name) != 0; }

    const TensorT<T>& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ConfigError("missing parameter '" + name + "'");
        return entries[it->second].second;
    }

    TensorT<T>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw ConfigError("missing parameter '" + name + "'");
        return entries[it->second].second;
    }

    std::size_t tensor_count() const { return entries.size(); }

    std::size_t value_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries) n += t.numel();
        return n;
    }

    // Fresh value copies, detached from any tape.
    ParametersT clone(bool requires_grad) const {
        ParametersT out;
        for (const auto& [name, t] : entries) {
            TensorT<T> c = t.clone();
            c.set_requires_grad(requires_grad);
            out.add(name, std::move(c));
        }
        return out;
    }

    template <typename U>
    ParametersT<U> cast() const {
        ParametersT<U> out;
        for (const auto& [name, t] : entries) out.add(name, t.template cast<U>());
        return out;
    }
};

using Parameters = ParametersT<float>;

namespace detail {

template <typename T>
TensorT<T> trunc_normal_tensor(Shape shape, Rng& rng, double stddev) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : t.raw_values()) {
        v = static_cast<T>(rng.truncated_normal(stddev, -2.0 * stddev, 2.0 * stddev));
    }
    return t;
}

}  // namespace detail

// Truncated-normal weights (std 0.02), zero biases, unit layer-norm gains.
// The merge projection starts at zero so the untrained model is exactly the
// persistence forecast.
template <typename T>
ParametersT<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int e = cfg.embed_dim;
    const int c_in = 2 * cfg.variables.channels() * cfg.patch * cfg.patch;
    Rng rng(Rng::mix(seed, 0xad01));
    ParametersT<T> p;

    p.add("embed.weight", detail::trunc_normal_tensor<T>({e, c_in}, rng, 0.02));
    p.add("embed.bias", TensorT<T>::zeros({e}));

    for (int s = 0; s < 4; ++s) {
        const std::string stage = "stage" + std::to_string(s);
        for (int b = 0; b < cfg.blocks_per_stage[static_cast<std::size_t>(s)]; ++b) {
            const std::string prefix = stage + ".block" + std::to_string(b) + ".";
            p.add(prefix + "pw_in.weight", detail::trunc_normal_tensor<T>({e, e}, rng, 0.02));
            p.add(prefix + "pw_in.bias", TensorT<T>::zeros({e}));
            if (cfg.lka_mode == LkaMode::kDirect) {
                p.add(prefix + "attn.dw.kernel",
                      detail::trunc_normal_tensor<T>({e, cfg.kernel_k, cfg.kernel_k}, rng, 0.02));
            } else {
                const auto d = lka_decomposition(cfg.kernel_k);
                p.add(prefix + "attn.dw1.kernel",
                      detail::trunc_normal_tensor<T>({e, d.k1, d.k1}, rng, 0.02));
                p.add(prefix + "attn.dw2.kernel",
                      detail::trunc_normal_tensor<T>({e, d.k2, d.k2}, rng, 0.02));
            }
            p.add(prefix + "attn.pw.weight", detail::trunc_normal_tensor<T>({e, e}, rng, 0.02));
            p.add(prefix + "attn.pw.bias", TensorT<T>::zeros({e}));
            p.add(prefix + "pw_out.weight", detail::trunc_normal_tensor<T>({e, e}, rng, 0.02));
            p.add(prefix + "pw_out.bias", TensorT<T>::zeros({e}));
        }
        p.add(stage + ".norm.gamma", TensorT<T>::full({e}, T(1)));
        p.add(stage + ".norm.beta", TensorT<T>::zeros({e}));
    }

    p.add("fuse.weight", detail::trunc_normal_tensor<T>({e, 5 * e}, rng, 0.02));
    p.add("fuse.bias", TensorT<T>::zeros({e}));

    const int c_vars = cfg.variables.channels();
    const int merge_out =
        cfg.merge == MergeMode::kPixelShuffleResize ? c_vars * cfg.patch * cfg.patch : c_vars;
    p.add("merge.weight", TensorT<T>::zeros({merge_out, e}));
    p.add("merge.bias", TensorT<T>::zeros({merge_out}));
    return p;
}

// Strided patch embedding expressed as pixel_unshuffle + pointwise conv:
// the pair (X^{t-1}, X^t) is concatenated along channels, latitude rows are
// trimmed to a patch multiple, and each patch becomes one latent pixel.
template <typename T>
TensorT<T> patch_embed(const TensorT<T>& prev, const TensorT<T>& cur,
                       const ParametersT<T>& params, const ModelConfig& cfg) {
    TensorT<T> pair = concat_channels<T>({prev, cur});
    if (pair.dim(1) != cfg.grid.n_lat || pair.dim(2) != cfg.grid.n_lon) {
        throw ConfigError("patch_embed: state shape " + shape_str(pair.shape()) +
                          " does not match grid " + std::to_string(cfg.grid.n_lat) + "x" +
                          std::to_string(cfg.grid.n_lon));
    }
    if (cfg.trimmed_lat() != cfg.grid.n_lat) pair = crop_rows(pair, cfg.trimmed_lat());
    TensorT<T> patches = pixel_unshuffle(pair, cfg.patch);
    return conv2d_pointwise(patches, params.at("embed.weight"), params.at("embed.bias"));
}

// One LKA block: residual around pointwise -> GELU -> (attention map (x)
// value) -> pointwise. branch_scale carries the DropPath decision: 0 drops
// the branch entirely, otherwise it is the kept-branch rescale.
template <typename T>
TensorT<T> lka_block(const TensorT<T>& x, const ParametersT<T>& params, const std::string& prefix,
                     const ModelConfig& cfg, double branch_scale) {
    if (branch_scale == 0.0) return x;
    TensorT<T> h = gelu(conv2d_pointwise(x, params.at(prefix + "pw_in.weight"),
                                         params.at(prefix + "pw_in.bias")));
    TensorT<T> attn;
    if (cfg.lka_mode == LkaMode::kDirect) {
        attn = conv2d_depthwise(h, params.at(prefix + "attn.dw.kernel"), 1);
    } else {
        const auto d = lka_decomposition(cfg.kernel_k);
        attn = conv2d_depthwise(h, params.at(prefix + "attn.dw1.kernel"), 1);
        attn = conv2d_depthwise(attn, params.at(prefix + "attn.dw2.kernel"), d.dilation);
    }
    attn = conv2d_pointwise(attn, params.at(prefix + "attn.pw.weight"),
                            params.at(prefix + "attn.pw.bias"));
    TensorT<T> gated = hadamard(attn, h);
    TensorT<T> branch = conv2d_pointwise(gated, params.at(prefix + "pw_out.weight"),
                                         params.at(prefix + "pw_out.bias"));
    if (branch_scale != 1.0) branch = scale(branch, branch_scale);
    return add(x, branch);
}

// Scheduled DropPath: the drop probability rises linearly with global block
// depth up to droppath_rate; decisions derive from the per-call seed only.
inline double droppath_branch_scale(const ModelConfig& cfg, bool train_mode, std::uint64_t seed,
                                    int global_block) {
    if (!train_mode || cfg.droppath_rate <= 0.0) return 1.0;
    const int total = cfg.total_blocks();
    const double frac = total > 1 ? static_cast<double>(global_block) / (total - 1) : 1.0;
    const double p_drop = cfg.droppath_rate * frac;
    if (p_drop <= 0.0) return 1.0;
    Rng rng(Rng::mix3(seed, static_cast<std::uint64_t>(global_block), 0x0d90));
    const bool keep = rng.uniform() >= p_drop;
    return keep ? 1.0 / (1.0 - p_drop) : 0.0;
}

// Full PuYun forward pass: patch embed -> 4 stages of LKA blocks ->
// per-stage layer norm -> channel concat (+ embedding skip) -> fuse
// projection -> merge head -> residual add of X^t.
template <typename T>
TensorT<T> model_forward(const TensorT<T>& prev, const TensorT<T>& cur,
                         const ParametersT<T>& params, const ModelConfig& cfg, bool train_mode,
                         std::uint64_t droppath_seed = 0) {
    cfg.validate();
    std::string where = "patch_embed";
    try {
        TensorT<T> skip = patch_embed(prev, cur, params, cfg);
        TensorT<T> x = skip;
        std::vector<TensorT<T>> stage_outputs;
        int global_block = 0;
        for (int s = 0; s < 4; ++s) {
            const std::string stage = "stage" + std::to_string(s);
            for (int b = 0; b < cfg.blocks_per_stage[static_cast<std::size_t>(s)]; ++b) {
                where = stage + ".block" + std::to_string(b);
                const double bs =
                    droppath_branch_scale(cfg, train_mode, droppath_seed, global_block);
                x = lka_block(x, params, where + ".", cfg, bs);
                ++global_block;
            }
            where = stage + ".norm";
            stage_outputs.push_back(layer_norm(x, params.at(stage + ".norm.gamma"),
                                               params.at(stage + ".norm.beta"), 1e-5));
        }
        where = "fuse";
        stage_outputs.push_back(skip);
        TensorT<T> fused = conv2d_pointwise(concat_channels(stage_outputs),
                                            params.at("fuse.weight"), params.at("fuse.bias"));
        where = "merge";
        TensorT<T> merged =
            conv2d_pointwise(fused, params.at("merge.weight"), params.at("merge.bias"));
        if (cfg.merge == MergeMode::kPixelShuffleResize) {
            merged = pixel_shuffle(merged, cfg.patch);
        }
        if (merged.dim(1) != cfg.grid.n_lat || merged.dim(2) != cfg.grid.n_lon) {
            merged = resize_bilinear(merged, cfg.grid.n_lat, cfg.grid.n_lon);
        }
        where = "residual";
        return add(merged, cur);
    } catch (const NumericError& e) {
        throw NumericError("model_forward at " + where + ": " + e.what());
    }
}

}  // namespace puyun
