#include "vicon/model.hpp"

#include <cmath>
#include <stdexcept>

#include "vicon/patching.hpp"
#include "vicon/rng.hpp"

namespace vicon {

void ModelConfig::validate() const {
    if (d < 1 || n_layers < 1 || n_heads < 1 || d_ffn < 1) {
        throw std::invalid_argument("model config: dimensions must be positive");
    }
    if (d % n_heads != 0) {
        throw std::invalid_argument("model config: d=" + std::to_string(d) + " not divisible by n_heads=" +
                                    std::to_string(n_heads));
    }
    if (max_pairs < 2 || min_context < 0 || min_context >= max_pairs) {
        throw std::invalid_argument("model config: need 0 <= min_context < max_pairs");
    }
    if (nc < 1 || nq < 1 || rx < 1 || ry < 1 || c_union < 1) {
        throw std::invalid_argument("model config: patch geometry must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("model config: dropout must lie in [0,1)");
    }
}

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
std::vector<std::pair<std::string, Shape>> ModelParams<T>::param_shapes(const ModelConfig& cfg) {
    const int64_t p = cfg.patch_len();
    const int64_t np = std::max(cfg.nc, cfg.nq);
    std::vector<std::pair<std::string, Shape>> shapes;
    shapes.emplace_back("embed.weight", Shape{p, cfg.d});
    shapes.emplace_back("embed.bias", Shape{1, cfg.d});
    shapes.emplace_back("decode.weight", Shape{cfg.d, p});
    shapes.emplace_back("decode.bias", Shape{1, p});
    shapes.emplace_back("pos_patch", Shape{np, cfg.d});
    shapes.emplace_back("pos_cond", Shape{cfg.max_pairs, cfg.d});
    shapes.emplace_back("pos_qoi", Shape{cfg.max_pairs, cfg.d});
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string base = "layers." + std::to_string(l) + ".";
        shapes.emplace_back(base + "ln1.gamma", Shape{1, cfg.d});
        shapes.emplace_back(base + "ln1.beta", Shape{1, cfg.d});
        shapes.emplace_back(base + "attn.wq", Shape{cfg.d, cfg.d});
        shapes.emplace_back(base + "attn.bq", Shape{1, cfg.d});
        shapes.emplace_back(base + "attn.wk", Shape{cfg.d, cfg.d});
        shapes.emplace_back(base + "attn.bk", Shape{1, cfg.d});
        shapes.emplace_back(base + "attn.wv", Shape{cfg.d, cfg.d});
        shapes.emplace_back(base + "attn.bv", Shape{1, cfg.d});
        shapes.emplace_back(base + "attn.wo", Shape{cfg.d, cfg.d});
        shapes.emplace_back(base + "attn.bo", Shape{1, cfg.d});
        shapes.emplace_back(base + "ln2.gamma", Shape{1, cfg.d});
        shapes.emplace_back(base + "ln2.beta", Shape{1, cfg.d});
        shapes.emplace_back(base + "ffn.w1", Shape{cfg.d, cfg.d_ffn});
        shapes.emplace_back(base + "ffn.b1", Shape{1, cfg.d_ffn});
        shapes.emplace_back(base + "ffn.w2", Shape{cfg.d_ffn, cfg.d});
        shapes.emplace_back(base + "ffn.b2", Shape{1, cfg.d});
    }
    return shapes;
}

namespace {

bool is_weight_matrix(const std::string& name) {
    return name.ends_with(".weight") || name.ends_with(".wq") || name.ends_with(".wk") ||
           name.ends_with(".wv") || name.ends_with(".wo") || name.ends_with(".w1") || name.ends_with(".w2");
}

bool is_positional(const std::string& name) { return name.starts_with("pos_"); }

bool is_gamma(const std::string& name) { return name.ends_with(".gamma"); }

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams<T> params;
    params.config = cfg;
    for (const auto& [name, shape] : param_shapes(cfg)) {
        Tensor<T> t(shape);
        if (is_weight_matrix(name)) {
            const double std = 1.0 / std::sqrt(static_cast<double>(shape.at(0)));
            for (auto& v : t.data) v = static_cast<T>(std * rng.normal());
        } else if (is_positional(name)) {
            for (auto& v : t.data) v = static_cast<T>(0.02 * rng.normal());
        } else if (is_gamma(name)) {
            for (auto& v : t.data) v = T(1);
        }
        // biases and betas stay zero
        params.tensors.emplace(name, std::move(t));
    }
    return params;
}

Mask build_block_causal_mask(int64_t num_pairs, int64_t nc, int64_t nq) {
    if (num_pairs < 1 || nc < 1 || nq < 1) {
        throw std::invalid_argument("build_block_causal_mask: need num_pairs, nc, nq >= 1");
    }
    const int64_t block = nc + nq;
    const int64_t len = block * num_pairs;
    Mask mask(len, len, 0);
    for (int64_t r = 0; r < len; ++r) {
        const int64_t pair_r = r / block;
        const bool cond_r = (r % block) < nc;
        for (int64_t c = 0; c < len; ++c) {
            const int64_t pair_c = c / block;
            const bool cond_c = (c % block) < nc;
            bool allowed = false;
            if (pair_c < pair_r) {
                allowed = true;
            } else if (pair_c == pair_r) {
                allowed = cond_r ? cond_c : true;
            }
            if (allowed) mask.set(r, c, 1);
        }
    }
    return mask;
}

template <typename T>
ParamVars<T> push_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
    ParamVars<T> vars;
    for (const auto& [name, tensor] : params.tensors) {
        vars.emplace(name, tape.leaf(tensor, requires_grad));
    }
    return vars;
}

namespace {

template <typename T>
Var<T> param(const ParamVars<T>& vars, const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::out_of_range("missing parameter var '" + name + "'");
    return it->second;
}

template <typename T>
Var<T> multi_head_attention(Tape<T>&, Var<T> x, const ParamVars<T>& p, const std::string& base,
                            const Mask& mask, const ModelConfig& cfg) {
    Var<T> q = add(matmul(x, param(p, base + "wq")), param(p, base + "bq"));
    Var<T> k = add(matmul(x, param(p, base + "wk")), param(p, base + "bk"));
    Var<T> v = add(matmul(x, param(p, base + "wv")), param(p, base + "bv"));
    const int64_t dh = cfg.head_dim();
    std::vector<Var<T>> heads;
    heads.reserve(static_cast<size_t>(cfg.n_heads));
    for (int64_t h = 0; h < cfg.n_heads; ++h) {
        Var<T> qh = slice_cols(q, h * dh, dh);
        Var<T> kh = slice_cols(k, h * dh, dh);
        Var<T> vh = slice_cols(v, h * dh, dh);
        heads.push_back(masked_attention(qh, kh, vh, mask));
    }
    Var<T> merged = concat_cols(heads);
    return add(matmul(merged, param(p, base + "wo")), param(p, base + "bo"));
}

}  // namespace

template <typename T>
PromptVars<T> push_prompt(Tape<T>& tape, const PromptPatches<T>& prompt, bool requires_grad) {
    PromptVars<T> vars;
    vars.cond.reserve(prompt.cond.size());
    vars.qoi.reserve(prompt.qoi.size());
    for (const auto& c : prompt.cond) vars.cond.push_back(tape.leaf(c, requires_grad));
    for (const auto& q : prompt.qoi) vars.qoi.push_back(tape.leaf(q, requires_grad));
    return vars;
}

template <typename T>
Var<T> embed_prompt(Tape<T>&, const PromptVars<T>& prompt, const ParamVars<T>& params,
                    const ModelConfig& cfg) {
    const int64_t j_pairs = prompt.num_pairs();
    if (j_pairs < 1) throw std::invalid_argument("embed_prompt: prompt has no pairs");
    if (j_pairs > cfg.max_pairs) throw std::invalid_argument("prompt exceeds trained context length");
    if (static_cast<int64_t>(prompt.qoi.size()) != j_pairs) {
        throw std::invalid_argument("embed_prompt: condition/qoi pair count mismatch");
    }

    Var<T> embed_w = param(params, "embed.weight");
    Var<T> embed_b = param(params, "embed.bias");
    Var<T> pos_patch = param(params, "pos_patch");
    Var<T> pos_cond = param(params, "pos_cond");
    Var<T> pos_qoi = param(params, "pos_qoi");
    Var<T> patch_pos_c = slice_rows(pos_patch, 0, cfg.nc);
    Var<T> patch_pos_q = slice_rows(pos_patch, 0, cfg.nq);

    std::vector<Var<T>> blocks;
    blocks.reserve(static_cast<size_t>(2 * j_pairs));
    for (int64_t i = 0; i < j_pairs; ++i) {
        Var<T> cpatch = prompt.cond[static_cast<size_t>(i)];
        Var<T> qpatch = prompt.qoi[static_cast<size_t>(i)];
        if (cpatch.shape() != Shape{cfg.nc, cfg.patch_len()} || qpatch.shape() != Shape{cfg.nq, cfg.patch_len()}) {
            throw std::invalid_argument("embed_prompt: pair " + std::to_string(i) + " patches " +
                                        shape_str(cpatch.shape()) + "/" + shape_str(qpatch.shape()) +
                                        " do not match config");
        }
        Var<T> c_tok = add(matmul(cpatch, embed_w), embed_b);
        c_tok = add(c_tok, patch_pos_c);
        c_tok = add(c_tok, slice_rows(pos_cond, i, 1));
        Var<T> q_tok = add(matmul(qpatch, embed_w), embed_b);
        q_tok = add(q_tok, patch_pos_q);
        q_tok = add(q_tok, slice_rows(pos_qoi, i, 1));
        blocks.push_back(c_tok);
        blocks.push_back(q_tok);
    }
    return concat_rows(blocks);
}

template <typename T>
std::vector<Var<T>> forward_patch_predictions(Tape<T>& tape, const PromptVars<T>& prompt,
                                              const ParamVars<T>& params, const ModelConfig& cfg,
                                              Rng* dropout_rng) {
    if (cfg.nc != cfg.nq) {
        throw std::invalid_argument("forward: predictions are read at condition positions, requires nc == nq");
    }
    const int64_t j_pairs = prompt.num_pairs();
    Var<T> x = embed_prompt(tape, prompt, params, cfg);
    const Mask mask = build_block_causal_mask(j_pairs, cfg.nc, cfg.nq);

    const bool use_dropout = cfg.dropout > 0.0 && dropout_rng != nullptr;
    auto maybe_drop = [&](Var<T> v) { return use_dropout ? dropout(v, cfg.dropout, *dropout_rng) : v; };

    const T eps = static_cast<T>(cfg.ln_eps);
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string base = "layers." + std::to_string(l) + ".";
        Var<T> h = layer_norm(x, param(params, base + "ln1.gamma"), param(params, base + "ln1.beta"), eps);
        x = add(x, maybe_drop(multi_head_attention(tape, h, params, base + "attn.", mask, cfg)));
        Var<T> f = layer_norm(x, param(params, base + "ln2.gamma"), param(params, base + "ln2.beta"), eps);
        f = add(matmul(f, param(params, base + "ffn.w1")), param(params, base + "ffn.b1"));
        f = gelu(f);
        f = add(matmul(f, param(params, base + "ffn.w2")), param(params, base + "ffn.b2"));
        x = add(x, maybe_drop(f));
    }

    Var<T> decode_w = param(params, "decode.weight");
    Var<T> decode_b = param(params, "decode.bias");
    std::vector<Var<T>> preds;
    preds.reserve(static_cast<size_t>(j_pairs));
    for (int64_t i = 0; i < j_pairs; ++i) {
        Var<T> cond_tokens = slice_rows(x, i * cfg.tokens_per_pair(), cfg.nc);
        preds.push_back(add(matmul(cond_tokens, decode_w), decode_b));
    }
    return preds;
}

template <typename T>
std::vector<Var<T>> forward_patch_predictions(Tape<T>& tape, const PromptPatches<T>& prompt,
                                              const ParamVars<T>& params, const ModelConfig& cfg,
                                              Rng* dropout_rng) {
    return forward_patch_predictions(tape, push_prompt(tape, prompt, false), params, cfg, dropout_rng);
}

PromptPatches<float> patchify_prompt(const PromptSequence& prompt, const ModelConfig& cfg) {
    PromptPatches<float> patches;
    patches.cond.reserve(prompt.pairs.size());
    patches.qoi.reserve(prompt.pairs.size());
    for (const FramePair& pair : prompt.pairs) {
        patches.cond.push_back(patchify(pair.cond, cfg.rx, cfg.ry).patches);
        patches.qoi.push_back(patchify(pair.qoi, cfg.rx, cfg.ry).patches);
    }
    return patches;
}

std::vector<Frame> forward(const PromptSequence& prompt, const ModelParams<float>& params) {
    const ModelConfig& cfg = params.config;
    if (prompt.pairs.empty()) throw std::invalid_argument("forward: prompt has no pairs");
    const Frame& first = prompt.pairs.front().cond;
    const PatchLayout layout{first.nx() / cfg.rx, first.ny() / cfg.ry, cfg.rx, cfg.ry, cfg.c_union};

    Tape<float> tape;
    ParamVars<float> vars = push_params(tape, params, false);
    PromptPatches<float> patches = patchify_prompt(prompt, cfg);
    std::vector<Var<float>> preds = forward_patch_predictions(tape, patches, vars, cfg);

    std::vector<Frame> frames;
    frames.reserve(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) {
        PatchGrid grid{layout, preds[i].value()};
        Frame f;
        f.values = unpatchify(grid);
        f.channel_mask = prompt.channel_mask;
        f.time_index = prompt.pairs[i].qoi.time_index;
        f.dt_record = prompt.pairs[i].qoi.dt_record;
        frames.push_back(std::move(f));
    }
    return frames;
}

PredictResult predict_next(const std::vector<FramePair>& context, const Frame& question_cond,
                           const ModelParams<float>& params) {
    const ModelConfig& cfg = params.config;
    const int64_t j_pairs = static_cast<int64_t>(context.size());
    if (j_pairs + 1 > cfg.max_pairs) throw std::invalid_argument("prompt exceeds trained context length");

    PromptSequence prompt;
    prompt.pairs.assign(context.begin(), context.end());
    FramePair question;
    question.cond = question_cond;
    question.qoi = Frame::zeros(question_cond.nx(), question_cond.ny());
    question.qoi.channel_mask = question_cond.channel_mask;
    prompt.pairs.push_back(std::move(question));
    prompt.channel_mask = question_cond.channel_mask;

    std::vector<Frame> preds = forward(prompt, params);
    PredictResult result;
    result.frame = std::move(preds.back());
    result.low_context = j_pairs < cfg.min_context;
    result.no_context = j_pairs == 0;
    return result;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define VICON_INSTANTIATE_MODEL(T)                                                                      \
    template struct ModelParams<T>;                                                                     \
    template ParamVars<T> push_params<T>(Tape<T>&, const ModelParams<T>&, bool);                        \
    template PromptVars<T> push_prompt<T>(Tape<T>&, const PromptPatches<T>&, bool);                     \
    template Var<T> embed_prompt<T>(Tape<T>&, const PromptVars<T>&, const ParamVars<T>&,                \
                                    const ModelConfig&);                                                \
    template std::vector<Var<T>> forward_patch_predictions<T>(Tape<T>&, const PromptVars<T>&,           \
                                                              const ParamVars<T>&, const ModelConfig&,  \
                                                              Rng*);                                    \
    template std::vector<Var<T>> forward_patch_predictions<T>(Tape<T>&, const PromptPatches<T>&,        \
                                                              const ParamVars<T>&, const ModelConfig&,  \
                                                              Rng*);

VICON_INSTANTIATE_MODEL(float)
VICON_INSTANTIATE_MODEL(double)

#undef VICON_INSTANTIATE_MODEL

}  // namespace vicon
