#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "mclner/selftrain.hpp"
#include "mclner/synth.hpp"

using namespace mclner;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.d_rel = 6;
    cfg.d_proj = 8;
    cfg.vocab_buckets = 512;
    cfg.n_gram = 3;
    cfg.dropout = 0.1;
    cfg.schema = TagSchema({"LOC", "PER", "ORG"});
    return cfg;
}

TrainConfig tiny_train() {
    TrainConfig cfg;
    cfg.batch_size = 6;
    cfg.epochs_source = 2;
    cfg.epochs_target = 1;
    cfg.weights.neg_cap = 8;
    cfg.codeswitch.p_substitute = 1.0;
    cfg.val_fraction = 0.2;
    cfg.seed = 3;
    return cfg;
}

struct Fixture {
    std::vector<LabeledSentence> source, target;
    BilingualLexicon lexicon;

    Fixture() {
        SynthConfig src_cfg = builtin_benchmark_config(12, 21);
        source = gen_source(src_cfg);
        lexicon = derive_lexicon(src_cfg);
        SynthConfig tgt_cfg = builtin_benchmark_config(6, 77);
        target = derive_targets(gen_source(tgt_cfg), lexicon, tgt_cfg.cipher);
    }
};

ParameterStore init_store(const ModelConfig& mcfg, std::uint64_t seed) {
    ParameterStore store(mcfg);
    Rng rng(seed);
    store.init(rng);
    return store;
}

} // namespace

TEST_CASE("train config validation rejects out-of-range settings") {
    TrainConfig cfg = tiny_train();
    CHECK_NOTHROW(cfg.validate());

    TrainConfig bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.epochs_source = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.lr_head = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.rounds = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.val_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.source_interleave = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.filter.confidence_threshold = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.weights.tau = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("validation splits are deterministic, disjoint, and exhaustive") {
    TrainConfig cfg = tiny_train();
    std::vector<std::size_t> train_a, val_a, train_b, val_b;
    detail::split_corpus(10, cfg, train_a, val_a);
    detail::split_corpus(10, cfg, train_b, val_b);
    CHECK(train_a == train_b);
    CHECK(val_a == val_b);
    CHECK(val_a.size() == 2); // 0.2 of 10
    CHECK(train_a.size() == 8);
    CHECK(std::is_sorted(train_a.begin(), train_a.end()));
    CHECK(std::is_sorted(val_a.begin(), val_a.end()));
    std::set<std::size_t> all(train_a.begin(), train_a.end());
    all.insert(val_a.begin(), val_a.end());
    CHECK(all.size() == 10);

    // tiny corpora still hold out at least one but never all sentences
    detail::split_corpus(2, cfg, train_a, val_a);
    CHECK(train_a.size() == 1);
    CHECK(val_a.size() == 1);
    CHECK_THROWS_AS(detail::split_corpus(1, cfg, train_a, val_a), ConfigError);
}

TEST_CASE("run logs print one CSV row per epoch with stable formatting") {
    RunLog log;
    log.records.push_back({0, "source", 1, 0.5, 0.25, 0.125, 0.0, 0.6875, 0.75, -1.0, 0, 0, 0, 0});
    log.records.push_back({1, "target", 1, 0.5, 0.0, 0.1, 0.2, 0.75, 0.8, 0.625, 4, 1, 2, 3});
    const std::string csv = log.to_csv();
    CHECK(csv ==
          "round,phase,epoch,ce,sc,tc,mse,total,val_f1,pseudo_f1,"
          "kept,dropped_all_o,dropped_chain,dropped_threshold\n"
          "0,source,1,0.5,0.25,0.125,0,0.6875,0.75,,0,0,0,0\n"
          "1,target,1,0.5,0,0.1,0.2,0.75,0.8,0.625,4,1,2,3\n");
    CHECK(fmt_double(1.0 / 3.0) == "0.333333333");
}

TEST_CASE("source training records epochs and tracks the best checkpoint") {
    Fixture fx;
    ModelConfig mcfg = tiny_model();
    TrainConfig cfg = tiny_train();
    ParameterStore init = init_store(mcfg, 1);

    Diag diag;
    SourceTrainResult res = train_source(mcfg, init, fx.source, fx.lexicon, cfg, &diag);

    REQUIRE(res.log.records.size() == cfg.epochs_source);
    for (std::size_t e = 0; e < res.log.records.size(); ++e) {
        const auto& r = res.log.records[e];
        CHECK(r.round == 0);
        CHECK(r.phase == "source");
        CHECK(r.epoch == e + 1);
        CHECK(r.ce > 0.0);
        CHECK(r.mse == 0.0);
        CHECK(r.pseudo_f1 == -1.0);
        CHECK(r.val_f1 >= 0.0);
        CHECK(r.val_f1 <= 1.0);
    }
    CHECK(res.best_epoch >= 1);
    CHECK(res.best_epoch <= cfg.epochs_source);
    CHECK(res.best_val_f1 ==
          std::max(res.log.records[0].val_f1, res.log.records[1].val_f1));
    CHECK(res.log.summary["phase"] == "source");

    // training actually moved the parameters
    CHECK(params_checksum(res.params) != params_checksum(init));

    // contrastive terms were active
    bool any_sc = false, any_tc = false;
    for (const auto& r : res.log.records) {
        any_sc = any_sc || r.sc != 0.0;
        any_tc = any_tc || r.tc != 0.0;
    }
    CHECK(any_sc);
    CHECK(any_tc);

    CHECK_THROWS_AS(train_source(mcfg, init, {}, fx.lexicon, cfg), ConfigError);
    std::vector<LabeledSentence> unlabeled = fx.source;
    unlabeled[0].labels.clear();
    CHECK_THROWS_AS(train_source(mcfg, init, unlabeled, fx.lexicon, cfg), ConfigError);
}

TEST_CASE("turning the contrastive weight off zeroes those loss channels") {
    Fixture fx;
    ModelConfig mcfg = tiny_model();
    TrainConfig cfg = tiny_train();
    cfg.weights.w = 0.0;
    ParameterStore init = init_store(mcfg, 1);

    SourceTrainResult res = train_source(mcfg, init, fx.source, fx.lexicon, cfg);
    for (const auto& r : res.log.records) {
        CHECK(r.sc == 0.0);
        CHECK(r.tc == 0.0);
        CHECK(r.total == r.ce);
    }
}

TEST_CASE("rerunning the source phase reproduces logs and weights bit-for-bit") {
    Fixture fx;
    ModelConfig mcfg = tiny_model();
    TrainConfig cfg = tiny_train();
    ParameterStore init = init_store(mcfg, 1);

    SourceTrainResult a = train_source(mcfg, init, fx.source, fx.lexicon, cfg);
    SourceTrainResult b = train_source(mcfg, init, fx.source, fx.lexicon, cfg);
    CHECK(a.log.to_csv() == b.log.to_csv());
    CHECK(params_checksum(a.params) == params_checksum(b.params));
    CHECK(a.best_epoch == b.best_epoch);

    // a different seed takes a different path
    TrainConfig other = cfg;
    other.seed = 4;
    SourceTrainResult c = train_source(mcfg, init, fx.source, fx.lexicon, other);
    CHECK(a.log.to_csv() != c.log.to_csv());
}

TEST_CASE("pseudo-labeling filters, reports quality, and accounts for every sentence") {
    Fixture fx;
    ModelConfig mcfg = tiny_model();
    ParameterStore teacher = init_store(mcfg, 2);

    PseudoFilterConfig keep_all;
    keep_all.confidence_threshold = 0.0;
    keep_all.drop_all_O = false;
    keep_all.drop_discontinuous = false;
    PseudoCorpus pseudo = pseudo_label(mcfg, teacher, fx.target, keep_all);

    CHECK(pseudo.stats.total() == fx.target.size());
    CHECK(pseudo.stats.kept == fx.target.size());
    REQUIRE(pseudo.sentences.size() == fx.target.size());
    CHECK(pseudo.grids.size() == pseudo.sentences.size());
    CHECK(pseudo.teacher.size() == pseudo.sentences.size());
    CHECK(pseudo.confidences.size() == pseudo.sentences.size());
    CHECK(std::is_sorted(pseudo.kept_indices.begin(), pseudo.kept_indices.end()));
    for (std::size_t k = 0; k < pseudo.sentences.size(); ++k) {
        CHECK(pseudo.sentences[k].labels.size() == pseudo.sentences[k].tokens.size());
        CHECK(pseudo.grids[k].n == pseudo.sentences[k].size());
        CHECK_NOTHROW(pseudo.teacher[k].validate());
        CHECK(pseudo.confidences[k] >= 0.0);
        CHECK(pseudo.confidences[k] <= 1.0);
    }

    // the derived target kept its gold, so quality is measured
    CHECK(pseudo.f1_all >= 0.0);
    CHECK(pseudo.f1_kept >= 0.0);

    // strip the gold and quality reporting turns off
    std::vector<LabeledSentence> blind = fx.target;
    for (auto& s : blind) s.labels.clear();
    PseudoCorpus quiet = pseudo_label(mcfg, teacher, blind, keep_all);
    CHECK(quiet.f1_all == -1.0);
    CHECK(quiet.f1_kept == -1.0);
    CHECK(quiet.stats.total() == blind.size());

    // a filter at threshold 1.0 on an untrained teacher keeps nothing
    PseudoFilterConfig strict;
    strict.confidence_threshold = 1.0;
    PseudoCorpus none = pseudo_label(mcfg, teacher, fx.target, strict);
    CHECK(none.stats.total() == fx.target.size());
    CHECK(none.sentences.size() == none.stats.kept);

    CHECK_THROWS_AS(pseudo_label(mcfg, teacher, {}, keep_all), ConfigError);
}

TEST_CASE("the target phase trains a student while the teacher stays frozen") {
    Fixture fx;
    ModelConfig mcfg = tiny_model();
    TrainConfig cfg = tiny_train();
    cfg.filter.confidence_threshold = 0.0;
    cfg.filter.drop_all_O = false;
    cfg.filter.drop_discontinuous = false;

    ParameterStore teacher = init_store(mcfg, 2);
    const std::uint64_t teacher_sum = params_checksum(teacher);

    TargetTrainResult res =
        train_target(mcfg, teacher, fx.source, fx.lexicon, fx.target, cfg, 1);

    CHECK(params_checksum(teacher) == teacher_sum);
    CHECK(res.teacher_checksum == teacher_sum);
    CHECK(params_checksum(res.params) != teacher_sum); // the student moved

    REQUIRE(res.log.records.size() == cfg.epochs_target);
    for (const auto& r : res.log.records) {
        CHECK(r.round == 1);
        CHECK(r.phase == "target");
        CHECK(r.kept == fx.target.size());
        CHECK(r.pseudo_f1 >= 0.0); // gold present in the derived target
        CHECK(r.mse >= 0.0);
    }
    CHECK(res.best_epoch >= 1);
    CHECK(res.filter_stats.kept == fx.target.size());
    CHECK(res.teacher_f1_all >= 0.0);
    CHECK(res.log.summary["round"] == 1);
    CHECK(res.log.summary["teacher_checksum"] == teacher_sum);

    // an impossible filter aborts the phase with a usage error
    TrainConfig strict = cfg;
    strict.filter.confidence_threshold = 1.0;
    strict.filter.drop_all_O = true;
    CHECK_THROWS_AS(train_target(mcfg, teacher, fx.source, fx.lexicon, fx.target, strict, 1),
                    ConfigError);
}

TEST_CASE("the full loop chains phases and reproduces itself exactly") {
    Fixture fx;
    ModelConfig mcfg = tiny_model();
    TrainConfig cfg = tiny_train();
    cfg.filter.confidence_threshold = 0.0;
    cfg.filter.drop_all_O = false;
    cfg.filter.drop_discontinuous = false;

    SelfTrainResult a = self_train(mcfg, fx.source, fx.target, fx.lexicon, cfg);
    REQUIRE(a.log.records.size() == cfg.epochs_source + cfg.rounds * cfg.epochs_target);
    CHECK(a.log.records[0].phase == "source");
    CHECK(a.log.records.back().phase == "target");
    CHECK(a.teacher_pseudo_f1.size() == cfg.rounds);
    CHECK(a.student_pseudo_f1.size() == cfg.rounds);
    CHECK(a.log.summary["rounds"] == cfg.rounds);
    CHECK(a.log.summary["round_summaries"].size() == cfg.rounds);

    SelfTrainResult b = self_train(mcfg, fx.source, fx.target, fx.lexicon, cfg);
    CHECK(a.log.to_csv() == b.log.to_csv());
    CHECK(params_checksum(a.params) == params_checksum(b.params));
    CHECK(a.log.summary.dump() == b.log.summary.dump());
}

TEST_CASE("evaluation helpers score exact span matches") {
    Fixture fx;
    ModelConfig mcfg = tiny_model();
    ParameterStore store = init_store(mcfg, 4);

    auto preds = predict_spans(mcfg, store, fx.source);
    CHECK(preds.size() == fx.source.size());

    F1Report rep = evaluate_model(mcfg, store, fx.source);
    CHECK(rep.f1 >= 0.0);
    CHECK(rep.f1 <= 1.0);

    CHECK(corpus_has_gold(fx.source));
    std::vector<LabeledSentence> mixed = fx.source;
    mixed[0].labels.clear();
    CHECK(!corpus_has_gold(mixed));
    CHECK(!corpus_has_gold({}));
}
