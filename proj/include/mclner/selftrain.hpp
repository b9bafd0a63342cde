#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mclner/codeswitch.hpp"
#include "mclner/common.hpp"
#include "mclner/corpus.hpp"
#include "mclner/lexicon.hpp"
#include "mclner/model.hpp"
#include "mclner/objectives.hpp"
#include "mclner/optim.hpp"
#include "mclner/relcodec.hpp"

namespace mclner {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs_source = 10;
    std::size_t epochs_target = 5;
    double lr_encoder = 1e-3; // embedding + fusion tier
    double lr_head = 1e-3;    // everything else
    AdamWHyper adamw{};
    LossWeights weights{};
    PseudoFilterConfig filter{};
    CodeSwitchConfig codeswitch{}; // its seed field is ignored; seeds derive from `seed`
    std::size_t rounds = 1;
    std::uint64_t seed = 0;
    bool resample_codeswitch_per_epoch = false;
    bool symmetric_sc = false;
    double val_fraction = 0.1;         // held-out source slice for checkpoint selection
    std::size_t source_interleave = 1; // gold source batches per target batch

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
        if (epochs_source < 1) throw ConfigError("train: epochs_source must be at least 1");
        if (epochs_target < 1) throw ConfigError("train: epochs_target must be at least 1");
        if (lr_encoder <= 0.0 || lr_head <= 0.0)
            throw ConfigError("train: learning rates must be positive");
        if (rounds < 1) throw ConfigError("train: rounds must be at least 1");
        if (val_fraction <= 0.0 || val_fraction >= 1.0)
            throw ConfigError("train: val_fraction must be in (0, 1)");
        if (source_interleave < 1) throw ConfigError("train: source_interleave must be at least 1");
        if (filter.confidence_threshold < 0.0 || filter.confidence_threshold > 1.0)
            throw ConfigError("train: confidence_threshold must be in [0, 1]");
        weights.validate();
        codeswitch.validate();
    }
};

// --- run log --------------------------------------------------------------------

struct EpochRecord {
    std::size_t round = 0; // 0 = source phase
    std::string phase;     // "source" | "target"
    std::size_t epoch = 0; // 1-based within its phase
    double ce = 0.0, sc = 0.0, tc = 0.0, mse = 0.0, total = 0.0;
    double val_f1 = 0.0;
    double pseudo_f1 = -1.0; // decode quality on the full target corpus; -1 = not measured
    std::size_t kept = 0, dropped_all_o = 0, dropped_chain = 0, dropped_threshold = 0;
};

inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

struct RunLog {
    std::vector<EpochRecord> records;
    nlohmann::json summary = nlohmann::json::object();

    std::string to_csv() const {
        std::string out =
            "round,phase,epoch,ce,sc,tc,mse,total,val_f1,pseudo_f1,"
            "kept,dropped_all_o,dropped_chain,dropped_threshold\n";
        for (const auto& r : records) {
            out += std::to_string(r.round) + ',' + r.phase + ',' + std::to_string(r.epoch) + ',' +
                   fmt_double(r.ce) + ',' + fmt_double(r.sc) + ',' + fmt_double(r.tc) + ',' +
                   fmt_double(r.mse) + ',' + fmt_double(r.total) + ',' + fmt_double(r.val_f1) +
                   ',' + (r.pseudo_f1 < 0.0 ? std::string() : fmt_double(r.pseudo_f1)) + ',' +
                   std::to_string(r.kept) + ',' + std::to_string(r.dropped_all_o) + ',' +
                   std::to_string(r.dropped_chain) + ',' + std::to_string(r.dropped_threshold) +
                   '\n';
        }
        return out;
    }
};

// --- evaluation helpers ---------------------------------------------------------

inline std::vector<std::vector<EntitySpan>> predict_spans(
    const ModelConfig& mcfg, const ParameterStore& store,
    const std::vector<LabeledSentence>& corpus) {
    std::vector<std::vector<EntitySpan>> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus)
        out.push_back(decode_scored(infer_scored_grid(mcfg, store, s.tokens), mcfg.schema).spans);
    return out;
}

inline F1Report evaluate_model(const ModelConfig& mcfg, const ParameterStore& store,
                               const std::vector<LabeledSentence>& corpus) {
    std::vector<std::vector<EntitySpan>> gold;
    gold.reserve(corpus.size());
    for (const auto& s : corpus) gold.push_back(spans_from_bio(s.labels));
    return entity_f1(gold, predict_spans(mcfg, store, corpus));
}

inline bool corpus_has_gold(const std::vector<LabeledSentence>& corpus) {
    if (corpus.empty()) return false;
    for (const auto& s : corpus)
        if (!s.labeled()) return false;
    return true;
}

// --- shared internals -----------------------------------------------------------

namespace detail {

struct StepLosses {
    double ce = 0.0, sc = 0.0, tc = 0.0, mse = 0.0, total = 0.0;
};

struct LossAccum {
    StepLosses sum;
    std::size_t steps = 0;

    void add(const StepLosses& s) {
        sum.ce += s.ce;
        sum.sc += s.sc;
        sum.tc += s.tc;
        sum.mse += s.mse;
        sum.total += s.total;
        ++steps;
    }
    StepLosses mean() const {
        if (steps == 0) return {};
        const double d = static_cast<double>(steps);
        return {sum.ce / d, sum.sc / d, sum.tc / d, sum.mse / d, sum.total / d};
    }
};

inline AdamW make_optimizer(const ParameterStore& store, const TrainConfig& cfg) {
    AdamW opt(cfg.adamw);
    for (std::size_t i = 0; i < store.count(); ++i)
        opt.add_slot(store.tensor(i).size(),
                     store.encoder_tier(i) ? cfg.lr_encoder : cfg.lr_head);
    return opt;
}

inline void apply_step(ParameterStore& store, AdamW& opt, TapeT<float>& tape,
                       const BoundParamsT<float>& bp) {
    std::vector<Tensor*> params;
    std::vector<const Tensor*> grads;
    params.reserve(store.count());
    grads.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) {
        params.push_back(&store.tensor(i));
        grads.push_back(&tape.grad(bp.vars[i]));
    }
    opt.step(params, grads);
}

// train/val split of a labeled corpus, deterministic in the run seed
inline void split_corpus(std::size_t n, const TrainConfig& cfg, std::vector<std::size_t>& train_idx,
                         std::vector<std::size_t>& val_idx) {
    if (n < 2) throw ConfigError("train: need at least 2 sentences to hold out validation");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(cfg.seed, "valsplit"));
    shuffle_indices(idx, rng);
    std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(n) + 0.5);
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    val_idx.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
}

// fully substituted counterparts of the held-out slice; checkpoint selection
// scores against these as a target-side proxy the target corpus never leaks into
inline std::vector<LabeledSentence> switched_val_set(const std::vector<LabeledSentence>& source,
                                                     const std::vector<std::size_t>& val_idx,
                                                     const BilingualLexicon& lexicon,
                                                     const TrainConfig& cfg, Diag* diag) {
    CodeSwitchConfig cs = cfg.codeswitch;
    cs.p_substitute = 1.0;
    cs.seed = derive_seed(cfg.seed, "valswitch");
    std::vector<LabeledSentence> out;
    out.reserve(val_idx.size());
    for (std::size_t i : val_idx) out.push_back(make_codeswitch(source[i], lexicon, cs, diag).switched);
    return out;
}

// one optimizer step over a batch of gold-labeled sentences, cross-entropy only
inline double ce_only_step(const ModelConfig& mcfg, ParameterStore& store, AdamW& opt,
                           const std::vector<LabeledSentence>& corpus,
                           const std::vector<RelationGrid>& gold,
                           const std::vector<std::size_t>& batch, std::uint64_t step_seed) {
    TapeT<float> tape;
    auto bp = bind_params(tape, store);
    BoundModelT<float> bm(tape, mcfg, store, bp);
    std::vector<TapeT<float>::Var> terms;
    terms.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Rng drop(derive_seed(step_seed, {fnv1a64("drop"), b, 0}));
        auto h = bm.encode(corpus[batch[b]].tokens, true, &drop);
        terms.push_back(loss_ce(tape, bm.classify_probs(bm.rel_rep(h)), gold[batch[b]]));
    }
    auto ce = mean_all(tape, pack_scalars(tape, terms));
    check_finite(tape, ce, "ce");
    tape.backward(ce);
    apply_step(store, opt, tape, bp);
    return static_cast<double>(tape.value(ce).v[0]);
}

} // namespace detail

// --- source phase ---------------------------------------------------------------

struct SourceTrainResult {
    ParameterStore params; // best epoch by validation F1, ties -> earlier
    double best_val_f1 = 0.0;
    std::size_t best_epoch = 0;
    RunLog log;
};

// Multi-view training on labeled source: relation cross-entropy on gold grids
// plus, when w > 0, sentence- and relation-level contrastive terms against
// code-switched counterparts.
inline SourceTrainResult train_source(const ModelConfig& mcfg, const ParameterStore& init,
                                      const std::vector<LabeledSentence>& source,
                                      const BilingualLexicon& lexicon, const TrainConfig& cfg,
                                      Diag* diag = nullptr) {
    mcfg.validate();
    cfg.validate();
    if (source.empty()) throw ConfigError("train_source: empty source corpus");
    for (const auto& s : source)
        if (!s.labeled())
            throw ConfigError("train_source: sentence " + s.id + " has no labels");

    std::vector<std::size_t> train_idx, val_idx;
    detail::split_corpus(source.size(), cfg, train_idx, val_idx);
    auto val_set = detail::switched_val_set(source, val_idx, lexicon, cfg, diag);

    std::vector<RelationGrid> gold(source.size());
    for (std::size_t i : train_idx)
        gold[i] = encode_grid(spans_from_bio(source[i].labels), source[i].size(), mcfg.schema);

    const bool contrastive = cfg.weights.w > 0.0;
    std::vector<AlignedPair> pairs(contrastive ? source.size() : 0);
    std::vector<RelationAlignment> aligns(contrastive ? source.size() : 0);
    auto build_pairs = [&](std::uint64_t cs_seed) {
        CodeSwitchConfig cs = cfg.codeswitch;
        cs.seed = cs_seed;
        for (std::size_t i : train_idx) {
            pairs[i] = make_codeswitch(source[i], lexicon, cs, diag);
            aligns[i] = align_relations(pairs[i], gold[i]);
        }
    };

    ParameterStore store = init;
    ParameterStore best = store;
    AdamW opt = detail::make_optimizer(store, cfg);
    SourceTrainResult res{std::move(best), 0.0, 0, {}};

    for (std::size_t epoch = 1; epoch <= cfg.epochs_source; ++epoch) {
        if (contrastive && (epoch == 1 || cfg.resample_codeswitch_per_epoch))
            build_pairs(derive_seed(cfg.seed,
                                    {fnv1a64("cs"), cfg.resample_codeswitch_per_epoch ? epoch : 0}));

        std::vector<std::size_t> order = train_idx;
        Rng order_rng(derive_seed(cfg.seed, {fnv1a64("order"), epoch}));
        shuffle_indices(order, order_rng);

        detail::LossAccum accum;
        for (std::size_t off = 0, step = 0; off < order.size(); off += cfg.batch_size, ++step) {
            const std::size_t end = std::min(off + cfg.batch_size, order.size());
            const std::uint64_t step_seed = derive_seed(cfg.seed, {fnv1a64("step"), epoch, step});

            TapeT<float> tape;
            auto bp = bind_params(tape, store);
            BoundModelT<float> bm(tape, mcfg, store, bp);
            std::vector<TapeT<float>::Var> ce_terms, tc_terms, src_reps, cpt_reps;
            for (std::size_t b = 0; off + b < end; ++b) {
                const std::size_t i = order[off + b];
                Rng drop_src(derive_seed(step_seed, {fnv1a64("drop"), b, 0}));
                auto h_src = bm.encode(source[i].tokens, true, &drop_src);
                auto rel_src = bm.rel_rep(h_src);
                ce_terms.push_back(loss_ce(tape, bm.classify_probs(rel_src), gold[i]));
                if (contrastive) {
                    Rng drop_cpt(derive_seed(step_seed, {fnv1a64("drop"), b, 1}));
                    auto h_cpt = bm.encode(pairs[i].switched.tokens, true, &drop_cpt);
                    auto rel_cpt = bm.rel_rep(h_cpt);
                    src_reps.push_back(bm.sentence_rep(h_src));
                    cpt_reps.push_back(bm.sentence_rep(h_cpt));
                    tc_terms.push_back(loss_tc(tape, bm, rel_src, rel_cpt, aligns[i],
                                               cfg.weights.tau, cfg.weights.neg_cap,
                                               derive_seed(step_seed, {fnv1a64("neg"), b})));
                }
            }
            auto ce = mean_all(tape, pack_scalars(tape, ce_terms));
            auto zero = [&] { return tape.leaf(Tensor::scalar(0.0f)); };
            auto sc = contrastive ? loss_sc(tape, src_reps, cpt_reps, cfg.weights.tau,
                                            cfg.symmetric_sc)
                                  : zero();
            auto tc = contrastive ? mean_all(tape, pack_scalars(tape, tc_terms)) : zero();
            auto total = total_source(tape, ce, sc, tc, cfg.weights);
            tape.backward(total);
            detail::apply_step(store, opt, tape, bp);
            accum.add({static_cast<double>(tape.value(ce).v[0]),
                       static_cast<double>(tape.value(sc).v[0]),
                       static_cast<double>(tape.value(tc).v[0]), 0.0,
                       static_cast<double>(tape.value(total).v[0])});
        }

        const double val_f1 = evaluate_model(mcfg, store, val_set).f1;
        auto m = accum.mean();
        res.log.records.push_back(
            {0, "source", epoch, m.ce, m.sc, m.tc, 0.0, m.total, val_f1, -1.0, 0, 0, 0, 0});
        if (res.best_epoch == 0 || val_f1 > res.best_val_f1) {
            res.best_val_f1 = val_f1;
            res.best_epoch = epoch;
            res.params = store;
        }
    }
    res.log.summary = {{"phase", "source"},
                       {"best_epoch", res.best_epoch},
                       {"best_val_f1", res.best_val_f1}};
    return res;
}

// --- pseudo-labeling ------------------------------------------------------------

struct PseudoCorpus {
    std::vector<std::size_t> kept_indices;  // positions in the raw target corpus
    std::vector<LabeledSentence> sentences; // kept sentences, pseudo-labeled
    std::vector<RelationGrid> grids;        // encoded pseudo grids
    std::vector<ScoredGrid> teacher;        // teacher distributions for the kept sentences
    std::vector<double> confidences;
    FilterStats stats;
    double f1_all = -1.0;  // teacher decode F1 on every sentence, when gold labels exist
    double f1_kept = -1.0; // same, restricted to the kept subset
};

// No-dropout teacher inference over the raw target corpus, decoded and passed
// through the three-stage filter. Gold labels, when present, are used only to
// report quality; they never reach the pseudo labels.
inline PseudoCorpus pseudo_label(const ModelConfig& mcfg, const ParameterStore& teacher,
                                 const std::vector<LabeledSentence>& target,
                                 const PseudoFilterConfig& filter, Diag* diag = nullptr) {
    (void)diag;
    if (target.empty()) throw ConfigError("pseudo_label: empty target corpus");
    std::vector<ScoredGrid> all_scored;
    all_scored.reserve(target.size());
    std::vector<PseudoItem<std::size_t>> items;
    items.reserve(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        all_scored.push_back(infer_scored_grid(mcfg, teacher, target[i].tokens));
        auto res = decode_scored(all_scored.back(), mcfg.schema);
        items.push_back({i, std::move(res.spans), res.confidence, res.stats.had_broken_chain()});
    }

    PseudoCorpus out;
    auto kept = filter_pseudo(items, filter, &out.stats);
    for (const auto& item : kept) {
        const auto& raw = target[item.sentence];
        LabeledSentence s{raw.id, raw.language, raw.tokens,
                          bio_from_spans(item.spans, raw.size())};
        out.kept_indices.push_back(item.sentence);
        out.grids.push_back(encode_grid(item.spans, raw.size(), mcfg.schema));
        out.teacher.push_back(all_scored[item.sentence]);
        out.confidences.push_back(item.confidence);
        out.sentences.push_back(std::move(s));
    }

    if (corpus_has_gold(target)) {
        std::vector<std::vector<EntitySpan>> gold_all, pred_all, gold_kept, pred_kept;
        for (std::size_t i = 0; i < target.size(); ++i) {
            gold_all.push_back(spans_from_bio(target[i].labels));
            pred_all.push_back(decode_scored(all_scored[i], mcfg.schema).spans);
        }
        out.f1_all = entity_f1(gold_all, pred_all).f1;
        for (std::size_t k = 0; k < out.kept_indices.size(); ++k) {
            gold_kept.push_back(gold_all[out.kept_indices[k]]);
            pred_kept.push_back(spans_from_bio(out.sentences[k].labels));
        }
        if (!gold_kept.empty()) out.f1_kept = entity_f1(gold_kept, pred_kept).f1;
    }
    return out;
}

// --- target phase ---------------------------------------------------------------

struct TargetTrainResult {
    ParameterStore params; // best epoch by validation F1, ties -> earlier
    double best_val_f1 = 0.0;
    std::size_t best_epoch = 0;
    double teacher_f1_all = -1.0;  // pseudo quality before this phase
    double student_f1_all = -1.0;  // pseudo quality of the selected student
    FilterStats filter_stats;
    std::uint64_t teacher_checksum = 0;
    RunLog log;
};

// Student training on filtered pseudo-labels: pseudo-grid cross-entropy plus a
// two-view relation contrastive term and probability-space distillation toward
// the frozen teacher, with gold source batches interleaved as a stabilizer.
inline TargetTrainResult train_target(const ModelConfig& mcfg, const ParameterStore& teacher,
                                      const std::vector<LabeledSentence>& source,
                                      const BilingualLexicon& lexicon,
                                      const std::vector<LabeledSentence>& target,
                                      const TrainConfig& cfg, std::size_t round_index = 1,
                                      Diag* diag = nullptr) {
    mcfg.validate();
    cfg.validate();
    const std::uint64_t checksum_before = params_checksum(teacher);

    PseudoCorpus pseudo = pseudo_label(mcfg, teacher, target, cfg.filter, diag);
    if (pseudo.sentences.empty())
        throw ConfigError(
            "train_target: no pseudo-labeled sentences survived filtering; review "
            "confidence_threshold and the all-O / broken-chain filters");

    std::vector<std::size_t> train_idx, val_idx;
    detail::split_corpus(source.size(), cfg, train_idx, val_idx);
    auto val_set = detail::switched_val_set(source, val_idx, lexicon, cfg, diag);
    std::vector<RelationGrid> src_gold(source.size());
    for (std::size_t i : train_idx)
        src_gold[i] = encode_grid(spans_from_bio(source[i].labels), source[i].size(), mcfg.schema);

    std::vector<RelationAlignment> self_aligns(pseudo.sentences.size());
    for (std::size_t k = 0; k < pseudo.grids.size(); ++k)
        self_aligns[k] = identity_alignment(pseudo.grids[k]);

    ParameterStore student = teacher; // warm start
    AdamW opt = detail::make_optimizer(student, cfg);
    TargetTrainResult res{student, 0.0, 0, pseudo.f1_all, -1.0, pseudo.stats, checksum_before, {}};
    const bool gold_known = corpus_has_gold(target);

    for (std::size_t epoch = 1; epoch <= cfg.epochs_target; ++epoch) {
        std::vector<std::size_t> order(pseudo.sentences.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        Rng order_rng(derive_seed(cfg.seed, {fnv1a64("torder"), round_index, epoch}));
        shuffle_indices(order, order_rng);

        std::vector<std::size_t> src_order = train_idx;
        Rng src_rng(derive_seed(cfg.seed, {fnv1a64("sorder"), round_index, epoch}));
        shuffle_indices(src_order, src_rng);
        std::size_t src_cursor = 0;

        detail::LossAccum accum;
        for (std::size_t off = 0, step = 0; off < order.size(); off += cfg.batch_size, ++step) {
            const std::size_t end = std::min(off + cfg.batch_size, order.size());
            const std::uint64_t step_seed =
                derive_seed(cfg.seed, {fnv1a64("tstep"), round_index, epoch, step});

            TapeT<float> tape;
            auto bp = bind_params(tape, student);
            BoundModelT<float> bm(tape, mcfg, student, bp);
            std::vector<TapeT<float>::Var> ce_terms, tc_terms, mse_terms;
            for (std::size_t b = 0; off + b < end; ++b) {
                const std::size_t k = order[off + b];
                Rng drop_a(derive_seed(step_seed, {fnv1a64("drop"), b, 0}));
                Rng drop_b(derive_seed(step_seed, {fnv1a64("drop"), b, 1}));
                auto h1 = bm.encode(pseudo.sentences[k].tokens, true, &drop_a);
                auto h2 = bm.encode(pseudo.sentences[k].tokens, true, &drop_b);
                auto rel1 = bm.rel_rep(h1);
                auto rel2 = bm.rel_rep(h2);
                auto probs1 = bm.classify_probs(rel1);
                ce_terms.push_back(loss_ce(tape, probs1, pseudo.grids[k]));
                tc_terms.push_back(loss_tc(tape, bm, rel1, rel2, self_aligns[k], cfg.weights.tau,
                                           cfg.weights.neg_cap,
                                           derive_seed(step_seed, {fnv1a64("neg"), b})));
                mse_terms.push_back(loss_mse(tape, probs1, pseudo.teacher[k]));
            }
            auto ce = mean_all(tape, pack_scalars(tape, ce_terms));
            auto tc = mean_all(tape, pack_scalars(tape, tc_terms));
            auto mse = mean_all(tape, pack_scalars(tape, mse_terms));
            auto total = total_target(tape, ce, tc, mse, cfg.weights);
            tape.backward(total);
            detail::apply_step(student, opt, tape, bp);
            accum.add({static_cast<double>(tape.value(ce).v[0]), 0.0,
                       static_cast<double>(tape.value(tc).v[0]),
                       static_cast<double>(tape.value(mse).v[0]),
                       static_cast<double>(tape.value(total).v[0])});

            for (std::size_t g = 0; g < cfg.source_interleave && !src_order.empty(); ++g) {
                std::vector<std::size_t> src_batch;
                for (std::size_t b = 0; b < cfg.batch_size; ++b, ++src_cursor)
                    src_batch.push_back(src_order[src_cursor % src_order.size()]);
                detail::ce_only_step(mcfg, student, opt, source, src_gold, src_batch,
                                     derive_seed(step_seed, {fnv1a64("src"), g}));
            }
        }

        const double val_f1 = evaluate_model(mcfg, student, val_set).f1;
        double pseudo_f1 = -1.0;
        if (gold_known) pseudo_f1 = evaluate_model(mcfg, student, target).f1;
        auto m = accum.mean();
        res.log.records.push_back({round_index, "target", epoch, m.ce, 0.0, m.tc, m.mse, m.total,
                                   val_f1, pseudo_f1, pseudo.stats.kept, pseudo.stats.dropped_all_o,
                                   pseudo.stats.dropped_chain, pseudo.stats.dropped_threshold});
        if (res.best_epoch == 0 || val_f1 > res.best_val_f1) {
            res.best_val_f1 = val_f1;
            res.best_epoch = epoch;
            res.params = student;
            res.student_f1_all = pseudo_f1;
        }
    }

    if (params_checksum(teacher) != checksum_before)
        throw ContractError("train_target: teacher parameters changed during the target phase");
    res.log.summary = {{"phase", "target"},
                       {"round", round_index},
                       {"best_epoch", res.best_epoch},
                       {"best_val_f1", res.best_val_f1},
                       {"teacher_pseudo_f1", res.teacher_f1_all},
                       {"student_pseudo_f1", res.student_f1_all},
                       {"teacher_checksum", res.teacher_checksum},
                       {"kept", pseudo.stats.kept},
                       {"dropped_all_o", pseudo.stats.dropped_all_o},
                       {"dropped_chain", pseudo.stats.dropped_chain},
                       {"dropped_threshold", pseudo.stats.dropped_threshold}};
    return res;
}

// --- full loop --------------------------------------------------------------------

struct SelfTrainResult {
    ParameterStore params; // final student
    RunLog log;            // source records (round 0) then each round's target records
    double source_val_f1 = 0.0;
    std::vector<double> teacher_pseudo_f1; // per round, before its target phase
    std::vector<double> student_pseudo_f1; // per round, selected student
};

// Source phase, then `rounds` iterations of pseudo-labeling + target phase,
// promoting each round's student to the next round's teacher.
inline SelfTrainResult self_train(const ModelConfig& mcfg,
                                  const std::vector<LabeledSentence>& source,
                                  const std::vector<LabeledSentence>& target,
                                  const BilingualLexicon& lexicon, const TrainConfig& cfg,
                                  Diag* diag = nullptr) {
    mcfg.validate();
    cfg.validate();
    ParameterStore store(mcfg);
    Rng init_rng(derive_seed(cfg.seed, "init"));
    store.init(init_rng);

    auto src_res = train_source(mcfg, store, source, lexicon, cfg, diag);
    SelfTrainResult out{std::move(src_res.params), std::move(src_res.log), src_res.best_val_f1,
                        {}, {}};
    nlohmann::json round_summaries = nlohmann::json::array();

    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        auto tgt_res =
            train_target(mcfg, out.params, source, lexicon, target, cfg, round, diag);
        out.teacher_pseudo_f1.push_back(tgt_res.teacher_f1_all);
        out.student_pseudo_f1.push_back(tgt_res.student_f1_all);
        for (auto& r : tgt_res.log.records) out.log.records.push_back(std::move(r));
        round_summaries.push_back(tgt_res.log.summary);
        out.params = std::move(tgt_res.params);
    }

    out.log.summary = {{"rounds", cfg.rounds},
                       {"source_best_val_f1", out.source_val_f1},
                       {"teacher_pseudo_f1", out.teacher_pseudo_f1},
                       {"student_pseudo_f1", out.student_pseudo_f1},
                       {"round_summaries", round_summaries}};
    return out;
}

} // namespace mclner
