#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mclner/checkpoint.hpp"
#include "mclner/common.hpp"
#include "mclner/corpus.hpp"
#include "mclner/relcodec.hpp"
#include "mclner/tape.hpp"
#include "mclner/tensor.hpp"

namespace mclner {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t d_rel = 64;
    std::size_t d_proj = 128;
    std::size_t vocab_buckets = std::size_t(1) << 15;
    std::size_t n_gram = 3;
    std::size_t heads = 1;
    double dropout = 0.1;
    TagSchema schema;

    std::size_t n_classes() const { return RelationClass::count(schema); }

    void validate() const {
        if (d_model == 0 || d_rel == 0 || d_proj == 0 || vocab_buckets == 0 || n_gram == 0)
            throw ConfigError("model config: all dimensions must be positive");
        if (heads != 1) throw ConfigError("model config: only one fusion head is supported");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("model config: dropout must be in [0,1)");
        if (schema.size() == 0) throw ConfigError("model config: empty tag schema");
    }
};

// Buckets for one token: FNV-1a64 of each byte n-gram of "^token$", mod V.
// A marked token shorter than the n-gram width hashes as a single unit.
inline std::vector<std::uint32_t> hash_buckets(std::string_view token, std::size_t buckets,
                                               std::size_t n_gram) {
    std::string marked;
    marked.reserve(token.size() + 2);
    marked.push_back('^');
    marked.append(token);
    marked.push_back('$');
    std::vector<std::uint32_t> out;
    if (marked.size() < n_gram) {
        out.push_back(static_cast<std::uint32_t>(fnv1a64(marked) % buckets));
        return out;
    }
    for (std::size_t i = 0; i + n_gram <= marked.size(); ++i)
        out.push_back(static_cast<std::uint32_t>(
            fnv1a64(std::string_view(marked).substr(i, n_gram)) % buckets));
    return out;
}

// Named parameter tensors in a fixed declaration order; that order is the
// checkpoint layout, the optimizer slot order, and the initialization draw
// order.
template <typename T>
class ParameterStoreT {
public:
    explicit ParameterStoreT(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        const std::size_t d = cfg.d_model, k = cfg.d_rel, p = cfg.d_proj;
        const std::size_t v = cfg.vocab_buckets, r = cfg.n_classes();
        declare("embed.table", {v, d}, true);
        declare("fusion.wq", {d, d}, true);
        declare("fusion.wk", {d, d}, true);
        declare("fusion.wv", {d, d}, true);
        declare("fusion.wo", {d, d}, true);
        declare("fusion.norm_gain", {d}, true);
        declare("fusion.norm_bias", {d}, true);
        declare("head_mlp.w", {d, d}, false);
        declare("head_mlp.b", {d}, false);
        declare("tail_mlp.w", {d, d}, false);
        declare("tail_mlp.b", {d}, false);
        declare("biaffine.w1", {d, k, d}, false);
        declare("biaffine.w2", {k, 2 * d}, false);
        declare("biaffine.b", {k}, false);
        declare("cln.w_alpha", {d, d}, false);
        declare("cln.b_alpha", {d}, false);
        declare("cln.w_beta", {d, d}, false);
        declare("cln.b_beta", {d}, false);
        declare("cln.adapter.w", {d, k}, false);
        declare("cln.adapter.b", {k}, false);
        declare("proj.w1", {k, k}, false);
        declare("proj.b1", {k}, false);
        declare("proj.w2", {k, p}, false);
        declare("proj.b2", {p}, false);
        declare("cls.w1", {k, k}, false);
        declare("cls.b1", {k}, false);
        declare("cls.w2", {k, r}, false);
        declare("cls.b2", {r}, false);
    }

    // Centered-uniform 1/sqrt(fan_in) for maps and embeddings; zeros for
    // biases; ones for norm gain and the CLN alpha bias; the bilinear W1
    // starts at zero so early training runs on the additive pathway.
    void init(Rng& rng) {
        const std::size_t d = cfg_.d_model, k = cfg_.d_rel;
        init_uniform_fanin(at("embed.table"), d, rng);
        init_uniform_fanin(at("fusion.wq"), d, rng);
        init_uniform_fanin(at("fusion.wk"), d, rng);
        init_uniform_fanin(at("fusion.wv"), d, rng);
        init_uniform_fanin(at("fusion.wo"), d, rng);
        fill(at("fusion.norm_gain"), T(1));
        fill(at("fusion.norm_bias"), T(0));
        init_uniform_fanin(at("head_mlp.w"), d, rng);
        fill(at("head_mlp.b"), T(0));
        init_uniform_fanin(at("tail_mlp.w"), d, rng);
        fill(at("tail_mlp.b"), T(0));
        fill(at("biaffine.w1"), T(0));
        init_uniform_fanin(at("biaffine.w2"), 2 * d, rng);
        fill(at("biaffine.b"), T(0));
        init_uniform_fanin(at("cln.w_alpha"), d, rng);
        fill(at("cln.b_alpha"), T(1));
        init_uniform_fanin(at("cln.w_beta"), d, rng);
        fill(at("cln.b_beta"), T(0));
        init_uniform_fanin(at("cln.adapter.w"), d, rng);
        fill(at("cln.adapter.b"), T(0));
        init_uniform_fanin(at("proj.w1"), k, rng);
        fill(at("proj.b1"), T(0));
        init_uniform_fanin(at("proj.w2"), k, rng);
        fill(at("proj.b2"), T(0));
        init_uniform_fanin(at("cls.w1"), k, rng);
        fill(at("cls.b1"), T(0));
        init_uniform_fanin(at("cls.w2"), k, rng);
        fill(at("cls.b2"), T(0));
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t count() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    TensorT<T>& tensor(std::size_t i) { return tensors_[i]; }
    const TensorT<T>& tensor(std::size_t i) const { return tensors_[i]; }

    // true for the embedding + fusion group (the "encoder tier" of the
    // two-tier learning-rate split)
    bool encoder_tier(std::size_t i) const { return encoder_[i]; }

    TensorT<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return tensors_[it->second];
    }
    const TensorT<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return tensors_[it->second];
    }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

private:
    void declare(std::string name, Shape shape, bool encoder) {
        index_.emplace(name, tensors_.size());
        names_.push_back(std::move(name));
        tensors_.emplace_back(std::move(shape));
        encoder_.push_back(encoder);
    }
    static void fill(TensorT<T>& t, T x) { std::fill(t.v.begin(), t.v.end(), x); }

    ModelConfig cfg_;
    std::vector<std::string> names_;
    std::vector<TensorT<T>> tensors_;
    std::vector<bool> encoder_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParameterStore = ParameterStoreT<float>;

// --- checkpoint adapters ------------------------------------------------------

inline void save_params(const std::string& path, const ParameterStore& store,
                        const nlohmann::json& config) {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (std::size_t i = 0; i < store.count(); ++i)
        tensors.emplace_back(store.name(i), &store.tensor(i));
    save_checkpoint(path, tensors, config);
}

// Copies checkpoint tensors into a store built from `cfg`; names and shapes
// must match the declaration list exactly.
inline void load_params(const Checkpoint& ck, ParameterStore& store) {
    if (ck.tensors.size() != store.count())
        throw FormatError("checkpoint declares " + std::to_string(ck.tensors.size()) +
                          " tensors, model has " + std::to_string(store.count()));
    for (std::size_t i = 0; i < store.count(); ++i) {
        const auto& [name, t] = ck.tensors[i];
        if (name != store.name(i))
            throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" + name +
                              "', expected '" + store.name(i) + "'");
        if (!t.same_shape(store.tensor(i)))
            throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) +
                              ", expected " + shape_str(store.tensor(i).shape));
        store.tensor(i) = t;
    }
}

// Order- and content-sensitive digest of every parameter value; proves a
// store was left untouched across a training phase.
inline std::uint64_t params_checksum(const ParameterStore& store) {
    std::string bytes;
    for (std::size_t i = 0; i < store.count(); ++i) {
        bytes += store.name(i);
        bytes.push_back('\0');
        for (float x : store.tensor(i).v) append_u32_le(bytes, std::bit_cast<std::uint32_t>(x));
    }
    return fnv1a64(bytes);
}

// --- forward graphs -------------------------------------------------------------

// Parameter leaves on one tape, in store order. Values are copied onto the
// tape; gradients are read back from the same handles after backward.
template <typename T>
struct BoundParamsT {
    std::vector<typename TapeT<T>::Var> vars;

    typename TapeT<T>::Var operator[](std::size_t i) const { return vars[i]; }
};

template <typename T>
BoundParamsT<T> bind_params(TapeT<T>& tape, const ParameterStoreT<T>& store) {
    BoundParamsT<T> bp;
    bp.vars.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) bp.vars.push_back(tape.leaf(store.tensor(i)));
    return bp;
}

// One model forward surface bound to a tape. Index lookups resolve once at
// bind time; all methods build graph nodes on the bound tape.
template <typename T>
class BoundModelT {
public:
    using Var = typename TapeT<T>::Var;

    BoundModelT(TapeT<T>& tape, const ModelConfig& cfg, const ParameterStoreT<T>& store,
                const BoundParamsT<T>& bp)
        : tape_(&tape), cfg_(&cfg) {
        auto v = [&](const char* name) {
            for (std::size_t i = 0; i < store.count(); ++i)
                if (store.name(i) == name) return bp.vars[i];
            throw ContractError(std::string("unbound parameter: ") + name);
        };
        embed_table_ = v("embed.table");
        wq_ = v("fusion.wq");
        wk_ = v("fusion.wk");
        wv_ = v("fusion.wv");
        wo_ = v("fusion.wo");
        norm_gain_ = v("fusion.norm_gain");
        norm_bias_ = v("fusion.norm_bias");
        head_w_ = v("head_mlp.w");
        head_b_ = v("head_mlp.b");
        tail_w_ = v("tail_mlp.w");
        tail_b_ = v("tail_mlp.b");
        bw1_ = v("biaffine.w1");
        bw2_ = v("biaffine.w2");
        bb_ = v("biaffine.b");
        walpha_ = v("cln.w_alpha");
        balpha_ = v("cln.b_alpha");
        wbeta_ = v("cln.w_beta");
        bbeta_ = v("cln.b_beta");
        adapter_w_ = v("cln.adapter.w");
        adapter_b_ = v("cln.adapter.b");
        proj_w1_ = v("proj.w1");
        proj_b1_ = v("proj.b1");
        proj_w2_ = v("proj.w2");
        proj_b2_ = v("proj.b2");
        cls_w1_ = v("cls.w1");
        cls_b1_ = v("cls.b1");
        cls_w2_ = v("cls.w2");
        cls_b2_ = v("cls.b2");
    }

    // mean of hashed-trigram bucket rows per token -> (n, d_model)
    Var embed(const std::vector<std::string>& tokens) const {
        if (tokens.empty()) throw ContractError("embed: empty sentence");
        std::vector<std::vector<std::uint32_t>> groups;
        groups.reserve(tokens.size());
        for (const auto& tok : tokens)
            groups.push_back(hash_buckets(tok, cfg_->vocab_buckets, cfg_->n_gram));
        return embed_mean(*tape_, embed_table_, groups);
    }

    // H = layer-norm(E + SelfAttention(E)); seeded dropout when training
    Var encode(const std::vector<std::string>& tokens, bool training, Rng* dropout_rng) const {
        Var e = embed(tokens);
        Var q = matmul(*tape_, e, wq_);
        Var k = matmul(*tape_, e, wk_);
        Var vv = matmul(*tape_, e, wv_);
        Var scores = scale(*tape_, matmul(*tape_, q, k, false, true),
                           1.0 / std::sqrt(static_cast<double>(cfg_->d_model)));
        Var attn = softmax_rows(*tape_, scores);
        Var mixed = matmul(*tape_, matmul(*tape_, attn, vv), wo_);
        Var h = affine_rows(*tape_, standardize_rows(*tape_, add(*tape_, e, mixed)), norm_gain_,
                            norm_bias_);
        if (training && cfg_->dropout > 0.0) {
            if (!dropout_rng) throw ContractError("encode: training without a dropout rng");
            h = dropout(*tape_, h, cfg_->dropout, *dropout_rng);
        }
        return h;
    }

    // r[i,j] = head(h_i)^T W1 tail(h_j) + W2 (head(h_i) (+) tail(h_j)) + b
    Var biaffine_rel(Var h) const {
        const std::size_t d = cfg_->d_model;
        Var hh = relu(*tape_, linear(*tape_, h, head_w_, head_b_));
        Var ht = relu(*tape_, linear(*tape_, h, tail_w_, tail_b_));
        Var bil = bilinear_grid(*tape_, hh, bw1_, ht);
        Var u = matmul(*tape_, hh, slice_cols(*tape_, bw2_, 0, d), false, true);
        Var vv = matmul(*tape_, ht, slice_cols(*tape_, bw2_, d, 2 * d), false, true);
        return add(*tape_, bil, grid_outer_sum(*tape_, u, vv, bb_));
    }

    // r'[i,j] = (W_a h_i + b_a) * standardize(h_j) + (W_b h_i + b_b)
    Var cln_rel(Var h) const {
        Var gamma = linear(*tape_, h, walpha_, balpha_);
        Var lambda = linear(*tape_, h, wbeta_, bbeta_);
        Var s = standardize_rows(*tape_, h);
        return grid_modulate(*tape_, gamma, s, lambda);
    }

    // biaffine + linear-adapted CLN, the single relation representation both
    // heads consume -> (n, n, d_rel)
    Var rel_rep(Var h) const {
        const std::size_t n = tape_->value(h).shape[0];
        Var bi = biaffine_rel(h);
        Var cl = cln_rel(h);
        Var flat = reshape(*tape_, cl, {n * n, cfg_->d_model});
        Var adapted = linear(*tape_, flat, adapter_w_, adapter_b_);
        return add(*tape_, bi, reshape(*tape_, adapted, {n, n, cfg_->d_rel}));
    }

    // per-cell class probabilities, flattened to (n*n, R) row-major by (i,j)
    Var classify_probs(Var rel) const {
        const std::size_t n = tape_->value(rel).shape[0];
        Var flat = reshape(*tape_, rel, {n * n, cfg_->d_rel});
        Var hidden = relu(*tape_, linear(*tape_, flat, cls_w1_, cls_b1_));
        Var logits = linear(*tape_, hidden, cls_w2_, cls_b2_);
        return softmax_rows(*tape_, logits);
    }

    // contrastive projections for selected cells -> (m, d_proj)
    Var project_cells(Var rel, const std::vector<std::pair<std::size_t, std::size_t>>& cells) const {
        Var rows = gather_cells(*tape_, rel, cells);
        return project_rows(rows);
    }

    // all n*n cells, row-major by (i,j) -> (n*n, d_proj)
    Var project_all(Var rel) const {
        const std::size_t n = tape_->value(rel).shape[0];
        Var flat = reshape(*tape_, rel, {n * n, cfg_->d_rel});
        return project_rows(flat);
    }

    // arithmetic mean of encoder rows -> (d_model)
    Var sentence_rep(Var h) const { return mean_rows(*tape_, h); }

    TapeT<T>& tape() const { return *tape_; }

private:
    Var project_rows(Var rows) const {
        Var hidden = tanh_op(*tape_, linear(*tape_, rows, proj_w1_, proj_b1_));
        return linear(*tape_, hidden, proj_w2_, proj_b2_);
    }

    TapeT<T>* tape_;
    const ModelConfig* cfg_;
    Var embed_table_, wq_, wk_, wv_, wo_, norm_gain_, norm_bias_;
    Var head_w_, head_b_, tail_w_, tail_b_;
    Var bw1_, bw2_, bb_;
    Var walpha_, balpha_, wbeta_, bbeta_, adapter_w_, adapter_b_;
    Var proj_w1_, proj_b1_, proj_w2_, proj_b2_;
    Var cls_w1_, cls_b1_, cls_w2_, cls_b2_;
};

using BoundModel = BoundModelT<float>;

// ScoredGrid from flattened per-cell probabilities (n*n, R)
inline ScoredGrid scored_from_probs(const Tensor& probs, std::size_t n, std::size_t n_classes) {
    if (probs.rank() != 2 || probs.shape[0] != n * n || probs.shape[1] != n_classes)
        throw ShapeError("scored_from_probs: got " + shape_str(probs.shape));
    ScoredGrid sg(n, n_classes);
    std::copy(probs.v.begin(), probs.v.end(), sg.probs.begin());
    return sg;
}

// --- inference (tape-local, no gradients) ---------------------------------------

inline ScoredGrid infer_scored_grid(const ModelConfig& cfg, const ParameterStore& store,
                                    const std::vector<std::string>& tokens) {
    TapeT<float> tape;
    auto bp = bind_params(tape, store);
    BoundModel bm(tape, cfg, store, bp);
    auto h = bm.encode(tokens, false, nullptr);
    auto probs = bm.classify_probs(bm.rel_rep(h));
    return scored_from_probs(tape.value(probs), tokens.size(), cfg.n_classes());
}

struct InferredViews {
    ScoredGrid scored;      // per-cell class probabilities
    Tensor projections;     // (n*n, d_proj), row-major by (i,j)
    Tensor sentence;        // (d_model)
};

inline InferredViews infer_views(const ModelConfig& cfg, const ParameterStore& store,
                                 const std::vector<std::string>& tokens) {
    TapeT<float> tape;
    auto bp = bind_params(tape, store);
    BoundModel bm(tape, cfg, store, bp);
    auto h = bm.encode(tokens, false, nullptr);
    auto rel = bm.rel_rep(h);
    InferredViews out{scored_from_probs(tape.value(bm.classify_probs(rel)), tokens.size(),
                                        cfg.n_classes()),
                      tape.value(bm.project_all(rel)), tape.value(bm.sentence_rep(h))};
    return out;
}

} // namespace mclner
