#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vicon/autograd.hpp"
#include "vicon/frame.hpp"
#include "vicon/prompt.hpp"
#include "vicon/rng.hpp"
#include "vicon/tensor.hpp"

namespace vicon {

struct ModelConfig {
    int64_t d = 64;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t d_ffn = 256;
    int64_t max_pairs = 10;    // I
    int64_t min_context = 5;   // pairs exempt from the training loss
    int64_t rx = 4;
    int64_t ry = 4;
    int64_t nc = 16;           // condition patches per frame
    int64_t nq = 16;           // qoi patches per frame
    int64_t c_union = kUnionChannels;
    double dropout = 0.0;
    double ln_eps = 1e-5;

    int64_t patch_len() const { return rx * ry * c_union; }
    int64_t tokens_per_pair() const { return nc + nq; }
    int64_t head_dim() const { return d / n_heads; }

    void validate() const;

    /// Desk-scale defaults (the values above).
    static ModelConfig desk() { return ModelConfig{}; }

    /// Published full-scale configuration; kept as a named preset, not run in CI.
    static ModelConfig full_scale() {
        ModelConfig cfg;
        cfg.d = 1024;
        cfg.n_layers = 10;
        cfg.n_heads = 8;
        cfg.d_ffn = 2048;
        cfg.max_pairs = 10;
        cfg.min_context = 5;
        cfg.rx = 16;
        cfg.ry = 16;
        cfg.nc = 64;
        cfg.nq = 64;
        return cfg;
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors of the transformer.
template <typename T>
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor<T>> tensors;

    Tensor<T>& at(const std::string& name);
    const Tensor<T>& at(const std::string& name) const;

    /// Expected name -> shape table for a configuration, in creation order.
    static std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg);

    /// Fan-in-scaled normal linears, zero biases, std-0.02 positional tables.
    static ModelParams init(const ModelConfig& cfg, uint64_t seed);

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.config = config;
        for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<U>());
        return out;
    }
};

/// Block-causal mask over (nc+nq)*I tokens: condition blocks see earlier pairs
/// plus themselves; qoi blocks additionally see their own pair's condition.
Mask build_block_causal_mask(int64_t num_pairs, int64_t nc, int64_t nq);

/// A patchified, normalized prompt ready for the transformer.
template <typename T>
struct PromptPatches {
    std::vector<Tensor<T>> cond;  // J entries of [nc, patch_len]
    std::vector<Tensor<T>> qoi;   // J entries of [nq, patch_len]

    int64_t num_pairs() const { return static_cast<int64_t>(cond.size()); }
};

/// The same prompt already recorded on a tape (e.g. to track input gradients).
template <typename T>
struct PromptVars {
    std::vector<Var<T>> cond;
    std::vector<Var<T>> qoi;

    int64_t num_pairs() const { return static_cast<int64_t>(cond.size()); }
};

template <typename T>
using ParamVars = std::map<std::string, Var<T>>;

/// Record every parameter as a tape leaf.
template <typename T>
ParamVars<T> push_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);

/// Record prompt patch matrices as (constant) tape leaves.
template <typename T>
PromptVars<T> push_prompt(Tape<T>& tape, const PromptPatches<T>& prompt, bool requires_grad = false);

/// Token sequence [(nc+nq)*J, d]: projected patches plus patch and function
/// positional encodings, pairs concatenated in order.
template <typename T>
Var<T> embed_prompt(Tape<T>& tape, const PromptVars<T>& prompt, const ParamVars<T>& params,
                    const ModelConfig& cfg);

/// Per-pair predicted qoi patch matrices [nc, patch_len], decoded from the
/// output tokens at each pair's condition positions. A non-null generator
/// activates dropout (training); inference passes none.
template <typename T>
std::vector<Var<T>> forward_patch_predictions(Tape<T>& tape, const PromptVars<T>& prompt,
                                              const ParamVars<T>& params, const ModelConfig& cfg,
                                              Rng* dropout_rng = nullptr);

template <typename T>
std::vector<Var<T>> forward_patch_predictions(Tape<T>& tape, const PromptPatches<T>& prompt,
                                              const ParamVars<T>& params, const ModelConfig& cfg,
                                              Rng* dropout_rng = nullptr);

/// Frame-space forward pass over a normalized prompt: one predicted frame per pair.
std::vector<Frame> forward(const PromptSequence& prompt, const ModelParams<float>& params);

struct PredictResult {
    Frame frame;
    bool low_context = false;  // fewer than min_context example pairs
    bool no_context = false;   // question answered with zero example pairs
};

/// Predict the qoi for a new question condition given J in-context pairs.
/// The question rides as pair J+1's condition with a placeholder qoi whose
/// tokens the mask provably hides from every read-out position.
PredictResult predict_next(const std::vector<FramePair>& context, const Frame& question_cond,
                           const ModelParams<float>& params);

/// Patchify a normalized prompt into model inputs.
PromptPatches<float> patchify_prompt(const PromptSequence& prompt, const ModelConfig& cfg);

}  // namespace vicon
