// Command-line toolkit for desk-scale cross-lingual span labeling with
// token-pair relation grids: synthetic corpus generation, code-switch
// augmentation, grid encoding/decoding, two-phase contrastive training with
// pseudo-label transfer, evaluation, and numeric self-checks.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric error.
// Every command that writes files also writes "<main output>.manifest.json"
// with the resolved configuration and FNV-1a64 checksums of inputs and outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mclner/mclner.hpp"

using nlohmann::json;
using namespace mclner;

namespace {

// --- small helpers ---------------------------------------------------------------

std::string hex64(std::uint64_t x) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

TagSchema parse_schema(const std::string& csv) {
    std::vector<std::string> types;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        std::string t = csv.substr(pos, comma - pos);
        if (!t.empty()) types.push_back(std::move(t));
        pos = comma + 1;
    }
    if (types.empty()) throw ConfigError("schema: entity type list is empty");
    return TagSchema(types);
}

json model_cfg_json(const ModelConfig& cfg) {
    return {{"d_model", cfg.d_model},   {"d_rel", cfg.d_rel},
            {"d_proj", cfg.d_proj},     {"vocab_buckets", cfg.vocab_buckets},
            {"n_gram", cfg.n_gram},     {"dropout", cfg.dropout},
            {"schema", cfg.schema.entity_types()}};
}

ModelConfig model_cfg_from_json(const json& j, const std::string& origin) {
    try {
        ModelConfig cfg;
        cfg.d_model = j.at("d_model").get<std::size_t>();
        cfg.d_rel = j.at("d_rel").get<std::size_t>();
        cfg.d_proj = j.at("d_proj").get<std::size_t>();
        cfg.vocab_buckets = j.at("vocab_buckets").get<std::size_t>();
        cfg.n_gram = j.at("n_gram").get<std::size_t>();
        cfg.dropout = j.at("dropout").get<double>();
        cfg.schema = TagSchema(j.at("schema").get<std::vector<std::string>>());
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw FormatError("model configuration in " + origin + " is incomplete: " + e.what());
    }
}

std::pair<ModelConfig, ParameterStore> load_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    ModelConfig cfg = model_cfg_from_json(ck.config, path);
    ParameterStore store(cfg);
    load_params(ck, store);
    return {std::move(cfg), std::move(store)};
}

std::vector<LabeledSentence> read_conll_file(const std::string& path, const TagSchema& schema,
                                             const std::string& language, Diag* diag) {
    return parse_conll(read_file(path), schema, language, diag);
}

void write_text_file(const std::string& path, const std::string& text) {
    write_file_atomic(path, text);
}

void print_diag(const Diag& diag) {
    for (const auto& m : diag.messages) std::cerr << "note: " << m << "\n";
}

// --- manifest --------------------------------------------------------------------

class Manifest {
public:
    explicit Manifest(std::string command) {
        j_["command"] = std::move(command);
        j_["inputs"] = json::object();
        j_["outputs"] = json::object();
    }
    void config(json c) { j_["config"] = std::move(c); }
    void input(const std::string& name, const std::string& path) {
        j_["inputs"][name] = entry(path);
    }
    void output(const std::string& name, const std::string& path) {
        j_["outputs"][name] = entry(path);
    }
    void note(const std::string& key, json v) { j_["results"][key] = std::move(v); }
    void write(const std::string& main_output) const {
        write_file_atomic(main_output + ".manifest.json", j_.dump(2) + "\n");
    }

private:
    static json entry(const std::string& path) {
        return {{"path", path}, {"fnv1a64", hex64(file_fnv(path))}};
    }
    json j_;
};

// --- config-file / flag resolution -------------------------------------------------

// Registers options and remembers how to back-fill them from a JSON config
// file: a key is the long flag name with dashes as underscores, and an
// explicitly passed flag always wins over the file.
class ConfigBinder {
public:
    template <typename T>
    CLI::Option* bind(CLI::App* cmd, const std::string& flag, T& var, const std::string& desc) {
        auto* opt = cmd->add_option(flag, var, desc)->capture_default_str();
        remember<T>(flag, var);
        return opt;
    }

    CLI::Option* bind_flag(CLI::App* cmd, const std::string& flag, bool& var,
                           const std::string& desc) {
        auto* opt = cmd->add_flag(flag, var, desc);
        remember<bool>(flag, var);
        return opt;
    }

    void apply(const CLI::App& cmd, const json& file) const {
        for (const auto& b : binds_) b(cmd, file);
    }

private:
    template <typename T>
    void remember(const std::string& flag, T& var) {
        std::string key = flag.substr(2);
        std::replace(key.begin(), key.end(), '-', '_');
        binds_.push_back([&var, key, flag](const CLI::App& cmd, const json& file) {
            if (cmd.count(flag) == 0 && file.contains(key)) {
                try {
                    var = file.at(key).get<T>();
                } catch (const json::exception& e) {
                    throw ConfigError("config key '" + key + "': " + e.what());
                }
            }
        });
    }

    std::vector<std::function<void(const CLI::App&, const json&)>> binds_;
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    try {
        json j = json::parse(read_file(path));
        if (!j.is_object()) throw FormatError("config file must hold a JSON object: " + path);
        return j;
    } catch (const json::exception& e) {
        throw FormatError("config file " + path + " is not valid JSON: " + e.what());
    }
}

// --- shared option bundles ----------------------------------------------------------

struct ModelFlags {
    std::size_t d_model = 64, d_rel = 64, d_proj = 128, vocab_buckets = std::size_t(1) << 15,
                n_gram = 3;
    double dropout = 0.1;
    std::string schema_csv = "LOC,PER,ORG";

    void add(CLI::App* cmd, ConfigBinder& bind) {
        bind.bind(cmd, "--d-model", d_model, "encoder width");
        bind.bind(cmd, "--d-rel", d_rel, "relation representation width");
        bind.bind(cmd, "--d-proj", d_proj, "contrastive projection width");
        bind.bind(cmd, "--vocab-buckets", vocab_buckets, "hashed embedding rows");
        bind.bind(cmd, "--n-gram", n_gram, "character n-gram width for token hashing");
        bind.bind(cmd, "--dropout", dropout, "encoder dropout rate in [0,1)");
        bind.bind(cmd, "--schema", schema_csv, "comma-separated entity types");
    }

    ModelConfig config() const {
        ModelConfig cfg;
        cfg.d_model = d_model;
        cfg.d_rel = d_rel;
        cfg.d_proj = d_proj;
        cfg.vocab_buckets = vocab_buckets;
        cfg.n_gram = n_gram;
        cfg.dropout = dropout;
        cfg.schema = parse_schema(schema_csv);
        cfg.validate();
        return cfg;
    }
};

struct TrainFlags {
    std::size_t batch_size = 32, epochs_source = 10, epochs_target = 5, rounds = 1, neg_cap = 128,
                source_interleave = 1;
    double lr = 1e-3, lr_encoder = 0.0; // 0 = same as --lr
    double weight_decay = 0.01;
    double tau = 0.1, w = 0.5, w1 = 0.5, w2 = 1.0;
    double p_substitute = 0.5;
    std::string scope = "entities";
    bool resample_codeswitch = false, symmetric_sc = false;
    double val_fraction = 0.1;
    double threshold = 0.7;
    bool keep_all_o = false, keep_discontinuous = false;
    std::uint64_t seed = 0;

    void add(CLI::App* cmd, ConfigBinder& bind) {
        bind.bind(cmd, "--batch-size", batch_size, "sentences per optimizer step");
        bind.bind(cmd, "--epochs-source", epochs_source, "source-phase epochs");
        bind.bind(cmd, "--epochs-target", epochs_target, "target-phase epochs");
        bind.bind(cmd, "--rounds", rounds, "pseudo-label + target-phase rounds");
        bind.bind(cmd, "--neg-cap", neg_cap, "max sampled negatives per aligned relation pair");
        bind.bind(cmd, "--source-interleave", source_interleave,
                  "gold source batches per target batch");
        bind.bind(cmd, "--lr", lr, "learning rate");
        bind.bind(cmd, "--lr-encoder", lr_encoder,
                  "embedding+fusion learning rate (0 = same as --lr)");
        bind.bind(cmd, "--weight-decay", weight_decay, "decoupled weight decay");
        bind.bind(cmd, "--tau", tau, "contrastive temperature");
        bind.bind(cmd, "--w", w, "source-phase weight on the contrastive terms");
        bind.bind(cmd, "--w1", w1, "target-phase weight on the relation contrast");
        bind.bind(cmd, "--w2", w2, "target-phase weight on distillation");
        bind.bind(cmd, "--p-substitute", p_substitute, "per-phrase switch probability");
        bind.bind(cmd, "--scope", scope, "switch scope: entities | phrases")
            ->check(CLI::IsMember({"entities", "phrases"}));
        bind.bind_flag(cmd, "--resample-codeswitch", resample_codeswitch,
                       "redraw code-switched counterparts every epoch");
        bind.bind_flag(cmd, "--symmetric-sc", symmetric_sc,
                       "score the sentence contrast in both directions");
        bind.bind(cmd, "--val-fraction", val_fraction, "held-out source fraction in (0,1)");
        bind.bind(cmd, "--threshold", threshold, "pseudo-label confidence threshold");
        bind.bind_flag(cmd, "--keep-all-o", keep_all_o,
                       "keep pseudo sentences with no entities");
        bind.bind_flag(cmd, "--keep-discontinuous", keep_discontinuous,
                       "keep pseudo sentences whose decode had broken chains");
        bind.bind(cmd, "--seed", seed, "run seed");
    }

    TrainConfig config() const {
        TrainConfig cfg;
        cfg.batch_size = batch_size;
        cfg.epochs_source = epochs_source;
        cfg.epochs_target = epochs_target;
        cfg.lr_head = lr;
        cfg.lr_encoder = lr_encoder > 0.0 ? lr_encoder : lr;
        cfg.adamw.weight_decay = weight_decay;
        cfg.weights.tau = tau;
        cfg.weights.w = w;
        cfg.weights.w1 = w1;
        cfg.weights.w2 = w2;
        cfg.weights.neg_cap = neg_cap;
        cfg.filter.confidence_threshold = threshold;
        cfg.filter.drop_all_O = !keep_all_o;
        cfg.filter.drop_discontinuous = !keep_discontinuous;
        cfg.codeswitch.p_substitute = p_substitute;
        cfg.codeswitch.scope =
            scope == "phrases" ? SwitchScope::entities_and_phrases : SwitchScope::entities_only;
        cfg.rounds = rounds;
        cfg.seed = seed;
        cfg.resample_codeswitch_per_epoch = resample_codeswitch;
        cfg.symmetric_sc = symmetric_sc;
        cfg.val_fraction = val_fraction;
        cfg.source_interleave = source_interleave;
        cfg.validate();
        return cfg;
    }

    json to_json() const {
        return {{"batch_size", batch_size},
                {"epochs_source", epochs_source},
                {"epochs_target", epochs_target},
                {"rounds", rounds},
                {"neg_cap", neg_cap},
                {"source_interleave", source_interleave},
                {"lr", lr},
                {"lr_encoder", lr_encoder > 0.0 ? lr_encoder : lr},
                {"weight_decay", weight_decay},
                {"tau", tau},
                {"w", w},
                {"w1", w1},
                {"w2", w2},
                {"p_substitute", p_substitute},
                {"scope", scope},
                {"resample_codeswitch", resample_codeswitch},
                {"symmetric_sc", symmetric_sc},
                {"val_fraction", val_fraction},
                {"threshold", threshold},
                {"keep_all_o", keep_all_o},
                {"keep_discontinuous", keep_discontinuous},
                {"seed", seed}};
    }
};

// --- grid CSV --------------------------------------------------------------------

constexpr const char* kGridCsvHeader = "sentence,i,j,label\n";
constexpr const char* kScoredCsvHeader = "sentence,i,j,label,prob\n";

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t comma = line.find(',', pos);
        if (comma == std::string_view::npos) {
            out.emplace_back(line.substr(pos));
            return out;
        }
        out.emplace_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
}

// sparse rows "sentence,i,j,label" -> grids sized by each sentence's length
std::vector<RelationGrid> parse_grid_csv(const std::string& text, const TagSchema& schema,
                                         const std::vector<LabeledSentence>& sentences,
                                         const std::string& origin) {
    std::vector<RelationGrid> grids;
    grids.reserve(sentences.size());
    for (const auto& s : sentences) grids.emplace_back(s.size());

    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string_view line(text.data() + pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (line_no == 1 && std::string(line) + "\n" == kGridCsvHeader) continue;

        auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw FormatError(origin + " line " + std::to_string(line_no) +
                              ": expected 4 comma-separated fields");
        std::size_t sent, i, j;
        try {
            sent = std::stoull(fields[0]);
            i = std::stoull(fields[1]);
            j = std::stoull(fields[2]);
        } catch (const std::exception&) {
            throw FormatError(origin + " line " + std::to_string(line_no) + ": bad index");
        }
        if (sent >= grids.size())
            throw FormatError(origin + " line " + std::to_string(line_no) + ": sentence index " +
                              std::to_string(sent) + " out of range (corpus has " +
                              std::to_string(grids.size()) + ")");
        RelationGrid& g = grids[sent];
        if (i >= g.n || j >= g.n)
            throw FormatError(origin + " line " + std::to_string(line_no) + ": cell (" +
                              std::to_string(i) + "," + std::to_string(j) +
                              ") outside a length-" + std::to_string(g.n) + " sentence");
        const std::size_t cls = RelationClass::from_name(fields[3], schema);
        if (g.at(i, j) != RelationClass::kNone)
            throw FormatError(origin + " line " + std::to_string(line_no) + ": duplicate cell (" +
                              std::to_string(i) + "," + std::to_string(j) + ")");
        g.at(i, j) = cls;
    }
    return grids;
}

// --- command: gen-synth --------------------------------------------------------------

struct GenSynthOpts {
    std::string out_dir, config_path;
    std::size_t n_source = 1000, n_target = 1000;
    std::uint64_t seed = 0;
    std::string cipher = "reverse_suffix";
};

void run_gen_synth(const GenSynthOpts& o) {
    SynthConfig src_cfg = builtin_benchmark_config(o.n_source, o.seed);
    src_cfg.cipher = o.cipher;
    SynthConfig tgt_cfg = builtin_benchmark_config(o.n_target, derive_seed(o.seed, "target-base"));
    tgt_cfg.cipher = o.cipher;

    auto source = gen_source(src_cfg);
    BilingualLexicon lexicon = derive_lexicon(src_cfg);
    auto target_gold = derive_targets(gen_source(tgt_cfg), lexicon, tgt_cfg.cipher);
    for (std::size_t i = 0; i < target_gold.size(); ++i)
        target_gold[i].id = "t" + std::to_string(i);
    auto target_raw = target_gold;
    for (auto& s : target_raw) s.labels.clear();

    const std::string dir = o.out_dir.empty() ? "." : o.out_dir;
    std::filesystem::create_directories(dir);
    const std::string source_path = dir + "/source.conll";
    const std::string target_path = dir + "/target.conll";
    const std::string gold_path = dir + "/target_gold.conll";
    const std::string lex_path = dir + "/lexicon.tsv";
    write_text_file(source_path, write_conll(source));
    write_text_file(target_path, write_conll(target_raw));
    write_text_file(gold_path, write_conll(target_gold));
    write_text_file(lex_path, lexicon.to_tsv());

    Manifest m("gen-synth");
    m.config({{"n_source", o.n_source},
              {"n_target", o.n_target},
              {"seed", o.seed},
              {"cipher", o.cipher},
              {"schema", src_cfg.schema.entity_types()}});
    m.output("source", source_path);
    m.output("target", target_path);
    m.output("target_gold", gold_path);
    m.output("lexicon", lex_path);
    m.write(source_path);

    std::cout << "wrote " << source.size() << " source and " << target_raw.size()
              << " target sentences under " << dir << "\n";
}

// --- command: codeswitch --------------------------------------------------------------

struct CodeSwitchOpts {
    std::string input, lexicon, out, alignments, config_path;
    std::string schema_csv = "LOC,PER,ORG";
    double p_substitute = 0.5;
    std::string scope = "entities";
    std::uint64_t seed = 0;
};

void run_codeswitch(const CodeSwitchOpts& o) {
    TagSchema schema = parse_schema(o.schema_csv);
    Diag diag;
    auto corpus = read_conll_file(o.input, schema, "src", &diag);
    BilingualLexicon lexicon = BilingualLexicon::parse_tsv(read_file(o.lexicon));

    CodeSwitchConfig cs;
    cs.p_substitute = o.p_substitute;
    cs.scope = o.scope == "phrases" ? SwitchScope::entities_and_phrases
                                    : SwitchScope::entities_only;
    cs.seed = o.seed;
    cs.validate();

    std::vector<LabeledSentence> switched;
    switched.reserve(corpus.size());
    std::string sidecar;
    std::size_t n_substitutions = 0;
    for (const auto& s : corpus) {
        AlignedPair pair = make_codeswitch(s, lexicon, cs, &diag);
        n_substitutions += pair.substitutions.size();
        if (!o.alignments.empty()) {
            RelationGrid grid = encode_grid(spans_from_bio(s.labels), s.size(), schema);
            sidecar += alignment_sidecar_line(pair, align_relations(pair, grid));
            sidecar += '\n';
        }
        switched.push_back(std::move(pair.switched));
    }
    write_text_file(o.out, write_conll(switched));
    if (!o.alignments.empty()) write_text_file(o.alignments, sidecar);
    print_diag(diag);

    Manifest m("codeswitch");
    m.config({{"schema", schema.entity_types()},
              {"p_substitute", o.p_substitute},
              {"scope", o.scope},
              {"seed", o.seed}});
    m.input("input", o.input);
    m.input("lexicon", o.lexicon);
    m.output("switched", o.out);
    if (!o.alignments.empty()) m.output("alignments", o.alignments);
    m.note("sentences", corpus.size());
    m.note("substitutions", n_substitutions);
    m.write(o.out);

    std::cout << "switched " << corpus.size() << " sentences with " << n_substitutions
              << " substitutions -> " << o.out << "\n";
}

// --- commands: encode / decode ---------------------------------------------------------

struct EncodeOpts {
    std::string input, out, config_path;
    std::string schema_csv = "LOC,PER,ORG";
};

void run_encode(const EncodeOpts& o) {
    TagSchema schema = parse_schema(o.schema_csv);
    Diag diag;
    auto corpus = read_conll_file(o.input, schema, "src", &diag);
    std::string csv = kGridCsvHeader;
    std::size_t cells = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!corpus[i].labeled())
            throw FormatError("encode: sentence " + corpus[i].id + " has no labels");
        RelationGrid grid = encode_grid(spans_from_bio(corpus[i].labels), corpus[i].size(), schema);
        const std::size_t before = csv.size();
        append_grid_csv(csv, i, grid, schema);
        cells += static_cast<std::size_t>(std::count(csv.begin() + static_cast<std::ptrdiff_t>(before),
                                                     csv.end(), '\n'));
    }
    write_text_file(o.out, csv);
    print_diag(diag);

    Manifest m("encode");
    m.config({{"schema", schema.entity_types()}});
    m.input("input", o.input);
    m.output("grids", o.out);
    m.note("sentences", corpus.size());
    m.note("labeled_cells", cells);
    m.write(o.out);

    std::cout << "encoded " << corpus.size() << " sentences (" << cells << " labeled cells) -> "
              << o.out << "\n";
}

struct DecodeOpts {
    std::string grids, input, out, config_path;
    std::string schema_csv = "LOC,PER,ORG";
};

void run_decode(const DecodeOpts& o) {
    TagSchema schema = parse_schema(o.schema_csv);
    Diag diag;
    auto corpus = read_conll_file(o.input, schema, "src", &diag);
    auto grids = parse_grid_csv(read_file(o.grids), schema, corpus, o.grids);

    std::size_t violations = 0, broken = 0, overlaps = 0;
    std::vector<LabeledSentence> decoded = corpus;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        DecodeStats stats;
        auto spans = decode_grid(grids[i], schema, &stats);
        violations += stats.placement_violations;
        broken += stats.broken_chains;
        overlaps += stats.overlap_drops;
        decoded[i].labels = bio_from_spans(spans, corpus[i].size());
    }
    write_text_file(o.out, write_conll(decoded));
    print_diag(diag);

    Manifest m("decode");
    m.config({{"schema", schema.entity_types()}});
    m.input("grids", o.grids);
    m.input("input", o.input);
    m.output("decoded", o.out);
    m.note("placement_violations", violations);
    m.note("broken_chains", broken);
    m.note("overlap_drops", overlaps);
    m.write(o.out);

    std::cout << "decoded " << corpus.size() << " sentences -> " << o.out << " (violations "
              << violations << ", broken chains " << broken << ", overlap drops " << overlaps
              << ")\n";
}

// --- command: train-src ---------------------------------------------------------------

struct TrainSrcOpts {
    std::string source, lexicon, out, log_path, config_path;
    ModelFlags model;
    TrainFlags train;
};

void run_train_src(const TrainSrcOpts& o) {
    ModelConfig mcfg = o.model.config();
    TrainConfig tcfg = o.train.config();
    Diag diag;
    auto source = read_conll_file(o.source, mcfg.schema, "src", &diag);
    BilingualLexicon lexicon = BilingualLexicon::parse_tsv(read_file(o.lexicon));

    ParameterStore init(mcfg);
    Rng init_rng(derive_seed(tcfg.seed, "init"));
    init.init(init_rng);

    SourceTrainResult res = train_source(mcfg, init, source, lexicon, tcfg, &diag);
    save_params(o.out, res.params, model_cfg_json(mcfg));
    if (!o.log_path.empty()) write_text_file(o.log_path, res.log.to_csv());
    print_diag(diag);

    Manifest m("train-src");
    m.config({{"model", model_cfg_json(mcfg)}, {"train", o.train.to_json()}});
    m.input("source", o.source);
    m.input("lexicon", o.lexicon);
    m.output("model", o.out);
    if (!o.log_path.empty()) m.output("log", o.log_path);
    m.note("summary", res.log.summary);
    m.note("params_fnv1a64", hex64(params_checksum(res.params)));
    m.write(o.out);

    std::cout << "source phase done: best epoch " << res.best_epoch << ", held-out F1 "
              << fmt_double(res.best_val_f1) << " -> " << o.out << "\n";
}

// --- command: pseudo-label ---------------------------------------------------------------

struct PseudoLabelOpts {
    std::string model, target, out, scored, config_path;
    double threshold = 0.7;
    bool keep_all_o = false, keep_discontinuous = false;
};

void run_pseudo_label(const PseudoLabelOpts& o) {
    auto [mcfg, store] = load_model(o.model);
    Diag diag;
    auto target = read_conll_file(o.target, mcfg.schema, "tgt", &diag);

    PseudoFilterConfig filter;
    filter.confidence_threshold = o.threshold;
    filter.drop_all_O = !o.keep_all_o;
    filter.drop_discontinuous = !o.keep_discontinuous;

    PseudoCorpus pseudo = pseudo_label(mcfg, store, target, filter, &diag);
    write_text_file(o.out, write_conll(pseudo.sentences));
    if (!o.scored.empty()) {
        std::string csv = kScoredCsvHeader;
        for (std::size_t i = 0; i < target.size(); ++i)
            append_scored_csv(csv, i, infer_scored_grid(mcfg, store, target[i].tokens),
                              mcfg.schema);
        write_text_file(o.scored, csv);
    }
    print_diag(diag);

    Manifest m("pseudo-label");
    m.config({{"threshold", o.threshold},
              {"keep_all_o", o.keep_all_o},
              {"keep_discontinuous", o.keep_discontinuous}});
    m.input("model", o.model);
    m.input("target", o.target);
    m.output("pseudo", o.out);
    if (!o.scored.empty()) m.output("scored", o.scored);
    m.note("kept", pseudo.stats.kept);
    m.note("dropped_all_o", pseudo.stats.dropped_all_o);
    m.note("dropped_chain", pseudo.stats.dropped_chain);
    m.note("dropped_threshold", pseudo.stats.dropped_threshold);
    if (pseudo.f1_all >= 0.0) m.note("decode_f1_all", pseudo.f1_all);
    if (pseudo.f1_kept >= 0.0) m.note("decode_f1_kept", pseudo.f1_kept);
    m.write(o.out);

    std::cout << "kept " << pseudo.stats.kept << "/" << pseudo.stats.total()
              << " pseudo-labeled sentences -> " << o.out;
    if (pseudo.f1_all >= 0.0)
        std::cout << " (decode F1 all " << fmt_double(pseudo.f1_all) << ", kept "
                  << fmt_double(pseudo.f1_kept) << ")";
    std::cout << "\n";
}

// --- command: train-tgt ---------------------------------------------------------------

struct TrainTgtOpts {
    std::string model, source, lexicon, target, out, log_path, config_path;
    std::size_t round_index = 1;
    TrainFlags train;
};

void run_train_tgt(const TrainTgtOpts& o) {
    auto [mcfg, teacher] = load_model(o.model);
    TrainConfig tcfg = o.train.config();
    Diag diag;
    auto source = read_conll_file(o.source, mcfg.schema, "src", &diag);
    auto target = read_conll_file(o.target, mcfg.schema, "tgt", &diag);
    BilingualLexicon lexicon = BilingualLexicon::parse_tsv(read_file(o.lexicon));

    TargetTrainResult res =
        train_target(mcfg, teacher, source, lexicon, target, tcfg, o.round_index, &diag);
    save_params(o.out, res.params, model_cfg_json(mcfg));
    if (!o.log_path.empty()) write_text_file(o.log_path, res.log.to_csv());
    print_diag(diag);

    Manifest m("train-tgt");
    m.config({{"model", model_cfg_json(mcfg)},
              {"train", o.train.to_json()},
              {"round_index", o.round_index}});
    m.input("model", o.model);
    m.input("source", o.source);
    m.input("lexicon", o.lexicon);
    m.input("target", o.target);
    m.output("student", o.out);
    if (!o.log_path.empty()) m.output("log", o.log_path);
    m.note("summary", res.log.summary);
    m.note("params_fnv1a64", hex64(params_checksum(res.params)));
    m.write(o.out);

    std::cout << "target phase done: best epoch " << res.best_epoch << ", held-out F1 "
              << fmt_double(res.best_val_f1) << " -> " << o.out << "\n";
}

// --- command: selftrain ---------------------------------------------------------------

struct SelfTrainOpts {
    std::string source, lexicon, target, out, log_path, config_path;
    ModelFlags model;
    TrainFlags train;
};

void run_selftrain(const SelfTrainOpts& o) {
    ModelConfig mcfg = o.model.config();
    TrainConfig tcfg = o.train.config();
    Diag diag;
    auto source = read_conll_file(o.source, mcfg.schema, "src", &diag);
    auto target = read_conll_file(o.target, mcfg.schema, "tgt", &diag);
    BilingualLexicon lexicon = BilingualLexicon::parse_tsv(read_file(o.lexicon));

    SelfTrainResult res = self_train(mcfg, source, target, lexicon, tcfg, &diag);
    save_params(o.out, res.params, model_cfg_json(mcfg));
    if (!o.log_path.empty()) write_text_file(o.log_path, res.log.to_csv());
    print_diag(diag);

    Manifest m("selftrain");
    m.config({{"model", model_cfg_json(mcfg)}, {"train", o.train.to_json()}});
    m.input("source", o.source);
    m.input("lexicon", o.lexicon);
    m.input("target", o.target);
    m.output("model", o.out);
    if (!o.log_path.empty()) m.output("log", o.log_path);
    m.note("summary", res.log.summary);
    m.note("params_fnv1a64", hex64(params_checksum(res.params)));
    m.write(o.out);

    std::cout << "self-training done: source held-out F1 " << fmt_double(res.source_val_f1);
    for (std::size_t r = 0; r < res.student_pseudo_f1.size(); ++r)
        if (res.student_pseudo_f1[r] >= 0.0)
            std::cout << ", round " << (r + 1) << " target F1 "
                      << fmt_double(res.student_pseudo_f1[r]);
    std::cout << " -> " << o.out << "\n";
}

// --- command: eval ---------------------------------------------------------------

struct EvalOpts {
    std::string model, input, report, config_path;
};

void run_eval(const EvalOpts& o) {
    auto [mcfg, store] = load_model(o.model);
    Diag diag;
    auto corpus = read_conll_file(o.input, mcfg.schema, "eval", &diag);
    if (!corpus_has_gold(corpus))
        throw FormatError("eval: " + o.input + " has unlabeled sentences; gold tags are required");

    F1Report rep = evaluate_model(mcfg, store, corpus);
    print_diag(diag);
    json out = {{"sentences", corpus.size()}, {"tp", rep.tp},           {"fp", rep.fp},
                {"fn", rep.fn},               {"precision", rep.precision}, {"recall", rep.recall},
                {"f1", rep.f1}};
    if (!o.report.empty()) {
        write_text_file(o.report, out.dump(2) + "\n");
        Manifest m("eval");
        m.input("model", o.model);
        m.input("input", o.input);
        m.output("report", o.report);
        m.note("f1", rep.f1);
        m.write(o.report);
    }
    std::cout << "P " << fmt_double(rep.precision) << "  R " << fmt_double(rep.recall) << "  F1 "
              << fmt_double(rep.f1) << "  (tp " << rep.tp << ", fp " << rep.fp << ", fn " << rep.fn
              << ")\n";
}

// --- command: inspect-sim ---------------------------------------------------------------

struct InspectSimOpts {
    std::string model, source, lexicon, out, projections, config_path;
    std::size_t max_pairs = 100;
    double p_substitute = 1.0;
    std::uint64_t seed = 0;
};

void run_inspect_sim(const InspectSimOpts& o) {
    auto [mcfg, store] = load_model(o.model);
    Diag diag;
    auto source = read_conll_file(o.source, mcfg.schema, "src", &diag);
    BilingualLexicon lexicon = BilingualLexicon::parse_tsv(read_file(o.lexicon));

    std::vector<std::vector<float>> src_vecs, cpt_vecs;
    SimSummary sum = collect_similarity(mcfg, store, source, lexicon, o.p_substitute, o.seed,
                                        o.max_pairs, &diag, &src_vecs, &cpt_vecs);

    std::string csv = "pair";
    for (std::size_t l = 0; l < sum.pairs; ++l) csv += ",cpt" + std::to_string(l);
    csv += '\n';
    for (std::size_t k = 0; k < sum.pairs; ++k) {
        csv += std::to_string(k);
        for (std::size_t l = 0; l < sum.pairs; ++l)
            csv += ',' + fmt_double(vec_cosine(src_vecs[k].data(), cpt_vecs[l].data(),
                                               mcfg.d_proj));
        csv += '\n';
    }
    write_text_file(o.out, csv);

    if (!o.projections.empty()) {
        std::string pcsv = "pair,side,values\n";
        for (std::size_t k = 0; k < sum.pairs; ++k) {
            for (int side = 0; side < 2; ++side) {
                const auto& v = side == 0 ? src_vecs[k] : cpt_vecs[k];
                pcsv += std::to_string(k);
                pcsv += side == 0 ? ",src" : ",cpt";
                for (float x : v) pcsv += ',' + fmt_double(static_cast<double>(x));
                pcsv += '\n';
            }
        }
        write_text_file(o.projections, pcsv);
    }
    print_diag(diag);

    Manifest m("inspect-sim");
    m.config({{"max_pairs", o.max_pairs}, {"p_substitute", o.p_substitute}, {"seed", o.seed}});
    m.input("model", o.model);
    m.input("source", o.source);
    m.input("lexicon", o.lexicon);
    m.output("matrix", o.out);
    if (!o.projections.empty()) m.output("projections", o.projections);
    m.note("pairs", sum.pairs);
    m.note("aligned_mean", sum.aligned_mean);
    m.note("non_aligned_mean", sum.non_aligned_mean);
    m.note("gap", sum.gap());
    m.write(o.out);

    std::cout << "pairs " << sum.pairs << "  aligned_mean " << fmt_double(sum.aligned_mean)
              << "  non_aligned_mean " << fmt_double(sum.non_aligned_mean) << "  gap "
              << fmt_double(sum.gap()) << "\n";
}

// --- command: gradcheck ---------------------------------------------------------------

struct GradCheckOpts {
    double tol = 1e-3;
    std::uint64_t seed = 7;
};

void run_gradcheck(const GradCheckOpts& o) {
    auto suite = run_gradcheck_suite(o.seed);
    bool all_ok = true;
    for (const auto& c : suite) {
        const bool ok = c.result.ok(o.tol);
        all_ok = all_ok && ok;
        std::cout << (ok ? "PASS" : "FAIL") << "  " << c.name << "  max_rel_err "
                  << fmt_double(c.result.max_rel_err) << "  (" << c.result.checked
                  << " partials)\n";
    }
    if (!all_ok)
        throw NumericError("gradient check failed; see the per-case report above");
    std::cout << "all " << suite.size() << " gradient checks passed at tolerance "
              << fmt_double(o.tol) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "mclner: span labeling via token-pair relation grids, with code-switched\n"
        "contrastive training and pseudo-label transfer to an unlabeled language"};
    app.require_subcommand(1);

    std::function<void()> action;

    // gen-synth
    GenSynthOpts gen;
    ConfigBinder gen_bind;
    auto* cmd_gen = app.add_subcommand(
        "gen-synth", "generate a deterministic two-language benchmark corpus");
    cmd_gen->add_option("--out-dir", gen.out_dir, "directory for the four output files")
        ->required();
    gen_bind.bind(cmd_gen, "--n-source", gen.n_source, "number of labeled source sentences");
    gen_bind.bind(cmd_gen, "--n-target", gen.n_target, "number of target sentences");
    gen_bind.bind(cmd_gen, "--seed", gen.seed, "corpus seed");
    gen_bind.bind(cmd_gen, "--cipher", gen.cipher, "word cipher: reverse_suffix | identity")
        ->check(CLI::IsMember({"reverse_suffix", "identity"}));
    cmd_gen->add_option("--config", gen.config_path,
                        "JSON file with defaults for any long option (snake_case keys)");
    cmd_gen->callback([&] {
        action = [&] {
            gen_bind.apply(*cmd_gen, load_config_file(gen.config_path));
            run_gen_synth(gen);
        };
    });

    // codeswitch
    CodeSwitchOpts cs;
    ConfigBinder cs_bind;
    auto* cmd_cs = app.add_subcommand(
        "codeswitch", "replace entity phrases with their lexicon images");
    cmd_cs->add_option("--input", cs.input, "labeled sentences (token + tag per line)")
        ->required();
    cmd_cs->add_option("--lexicon", cs.lexicon, "phrase lexicon (source<TAB>target)")->required();
    cmd_cs->add_option("--out", cs.out, "switched sentences")->required();
    cmd_cs->add_option("--alignments", cs.alignments,
                       "optional JSONL sidecar with token maps and aligned relation cells");
    cs_bind.bind(cmd_cs, "--schema", cs.schema_csv, "comma-separated entity types");
    cs_bind.bind(cmd_cs, "--p-substitute", cs.p_substitute, "per-phrase switch probability");
    cs_bind.bind(cmd_cs, "--scope", cs.scope, "switch scope: entities | phrases")
        ->check(CLI::IsMember({"entities", "phrases"}));
    cs_bind.bind(cmd_cs, "--seed", cs.seed, "switch seed");
    cmd_cs->add_option("--config", cs.config_path,
                       "JSON file with defaults for any long option (snake_case keys)");
    cmd_cs->callback([&] {
        action = [&] {
            cs_bind.apply(*cmd_cs, load_config_file(cs.config_path));
            run_codeswitch(cs);
        };
    });

    // encode
    EncodeOpts enc;
    ConfigBinder enc_bind;
    auto* cmd_enc = app.add_subcommand(
        "encode", "turn gold spans into sparse relation-grid CSV rows");
    cmd_enc->add_option("--input", enc.input, "labeled sentences")->required();
    cmd_enc->add_option("--out", enc.out, "grid CSV (sentence,i,j,label)")->required();
    enc_bind.bind(cmd_enc, "--schema", enc.schema_csv, "comma-separated entity types");
    cmd_enc->add_option("--config", enc.config_path,
                        "JSON file with defaults for any long option (snake_case keys)");
    cmd_enc->callback([&] {
        action = [&] {
            enc_bind.apply(*cmd_enc, load_config_file(enc.config_path));
            run_encode(enc);
        };
    });

    // decode
    DecodeOpts dec;
    ConfigBinder dec_bind;
    auto* cmd_dec = app.add_subcommand(
        "decode", "rebuild span labels from relation-grid CSV rows");
    cmd_dec->add_option("--grids", dec.grids, "grid CSV from encode")->required();
    cmd_dec->add_option("--input", dec.input, "sentences supplying the tokens")->required();
    cmd_dec->add_option("--out", dec.out, "labeled output sentences")->required();
    dec_bind.bind(cmd_dec, "--schema", dec.schema_csv, "comma-separated entity types");
    cmd_dec->add_option("--config", dec.config_path,
                        "JSON file with defaults for any long option (snake_case keys)");
    cmd_dec->callback([&] {
        action = [&] {
            dec_bind.apply(*cmd_dec, load_config_file(dec.config_path));
            run_decode(dec);
        };
    });

    // train-src
    TrainSrcOpts ts;
    ConfigBinder ts_bind;
    auto* cmd_ts = app.add_subcommand(
        "train-src", "train on labeled source sentences with code-switched contrast");
    cmd_ts->add_option("--source", ts.source, "labeled source sentences")->required();
    cmd_ts->add_option("--lexicon", ts.lexicon, "phrase lexicon")->required();
    cmd_ts->add_option("--out", ts.out, "model checkpoint")->required();
    cmd_ts->add_option("--log", ts.log_path, "per-epoch CSV log");
    ts.model.add(cmd_ts, ts_bind);
    ts.train.add(cmd_ts, ts_bind);
    cmd_ts->add_option("--config", ts.config_path,
                       "JSON file with defaults for any long option (snake_case keys)");
    cmd_ts->callback([&] {
        action = [&] {
            ts_bind.apply(*cmd_ts, load_config_file(ts.config_path));
            run_train_src(ts);
        };
    });

    // pseudo-label
    PseudoLabelOpts pl;
    ConfigBinder pl_bind;
    auto* cmd_pl = app.add_subcommand(
        "pseudo-label", "decode and filter model predictions on raw sentences");
    cmd_pl->add_option("--model", pl.model, "model checkpoint")->required();
    cmd_pl->add_option("--target", pl.target, "raw sentences (tags optional, used for quality "
                                              "reporting only)")
        ->required();
    cmd_pl->add_option("--out", pl.out, "kept pseudo-labeled sentences")->required();
    cmd_pl->add_option("--scored", pl.scored,
                       "optional CSV with every cell's class probabilities");
    pl_bind.bind(cmd_pl, "--threshold", pl.threshold, "confidence threshold");
    pl_bind.bind_flag(cmd_pl, "--keep-all-o", pl.keep_all_o,
                      "keep sentences with no predicted entities");
    pl_bind.bind_flag(cmd_pl, "--keep-discontinuous", pl.keep_discontinuous,
                      "keep sentences whose decode had broken chains");
    cmd_pl->add_option("--config", pl.config_path,
                       "JSON file with defaults for any long option (snake_case keys)");
    cmd_pl->callback([&] {
        action = [&] {
            pl_bind.apply(*cmd_pl, load_config_file(pl.config_path));
            run_pseudo_label(pl);
        };
    });

    // train-tgt
    TrainTgtOpts tt;
    ConfigBinder tt_bind;
    auto* cmd_tt = app.add_subcommand(
        "train-tgt", "adapt a trained model to raw target sentences via filtered "
                     "pseudo-labels and distillation");
    cmd_tt->add_option("--model", tt.model, "teacher checkpoint")->required();
    cmd_tt->add_option("--source", tt.source, "labeled source sentences (stabilizer batches)")
        ->required();
    cmd_tt->add_option("--lexicon", tt.lexicon, "phrase lexicon")->required();
    cmd_tt->add_option("--target", tt.target, "raw target sentences")->required();
    cmd_tt->add_option("--out", tt.out, "student checkpoint")->required();
    cmd_tt->add_option("--log", tt.log_path, "per-epoch CSV log");
    tt_bind.bind(cmd_tt, "--round-index", tt.round_index, "1-based round number for the log");
    tt.train.add(cmd_tt, tt_bind);
    cmd_tt->add_option("--config", tt.config_path,
                       "JSON file with defaults for any long option (snake_case keys)");
    cmd_tt->callback([&] {
        action = [&] {
            tt_bind.apply(*cmd_tt, load_config_file(tt.config_path));
            run_train_tgt(tt);
        };
    });

    // selftrain
    SelfTrainOpts st;
    ConfigBinder st_bind;
    auto* cmd_st = app.add_subcommand(
        "selftrain", "full pipeline: source phase, then rounds of pseudo-label + target phase");
    cmd_st->add_option("--source", st.source, "labeled source sentences")->required();
    cmd_st->add_option("--lexicon", st.lexicon, "phrase lexicon")->required();
    cmd_st->add_option("--target", st.target, "raw target sentences")->required();
    cmd_st->add_option("--out", st.out, "final model checkpoint")->required();
    cmd_st->add_option("--log", st.log_path, "per-epoch CSV log across all phases");
    st.model.add(cmd_st, st_bind);
    st.train.add(cmd_st, st_bind);
    cmd_st->add_option("--config", st.config_path,
                       "JSON file with defaults for any long option (snake_case keys)");
    cmd_st->callback([&] {
        action = [&] {
            st_bind.apply(*cmd_st, load_config_file(st.config_path));
            run_selftrain(st);
        };
    });

    // eval
    EvalOpts ev;
    auto* cmd_ev = app.add_subcommand("eval", "exact-match span precision/recall/F1");
    cmd_ev->add_option("--model", ev.model, "model checkpoint")->required();
    cmd_ev->add_option("--input", ev.input, "gold-labeled sentences")->required();
    cmd_ev->add_option("--report", ev.report, "optional JSON report path");
    cmd_ev->callback([&] { action = [&] { run_eval(ev); }; });

    // inspect-sim
    InspectSimOpts is;
    ConfigBinder is_bind;
    auto* cmd_is = app.add_subcommand(
        "inspect-sim",
        "cosine matrix between aligned relation projections and their counterparts");
    cmd_is->add_option("--model", is.model, "model checkpoint")->required();
    cmd_is->add_option("--source", is.source, "labeled sentences to pair up")->required();
    cmd_is->add_option("--lexicon", is.lexicon, "phrase lexicon")->required();
    cmd_is->add_option("--out", is.out, "cosine matrix CSV")->required();
    cmd_is->add_option("--projections", is.projections, "optional raw projection CSV");
    is_bind.bind(cmd_is, "--max-pairs", is.max_pairs, "aligned cells to collect");
    is_bind.bind(cmd_is, "--p-substitute", is.p_substitute, "per-phrase switch probability");
    is_bind.bind(cmd_is, "--seed", is.seed, "switch seed");
    cmd_is->add_option("--config", is.config_path,
                       "JSON file with defaults for any long option (snake_case keys)");
    cmd_is->callback([&] {
        action = [&] {
            is_bind.apply(*cmd_is, load_config_file(is.config_path));
            run_inspect_sim(is);
        };
    });

    // gradcheck
    GradCheckOpts gc;
    auto* cmd_gc = app.add_subcommand(
        "gradcheck", "verify every layer and loss against finite differences");
    cmd_gc->add_option("--tol", gc.tol, "max relative error accepted")->capture_default_str();
    cmd_gc->add_option("--seed", gc.seed, "suite seed")->capture_default_str();
    cmd_gc->callback([&] { action = [&] { run_gradcheck(gc); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "ERROR[1]: " << e.what() << "\n";
        return 1;
    }

    try {
        if (action) action();
        return 0;
    } catch (const Error& e) {
        std::cerr << "ERROR[" << e.exit_code() << "]: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "ERROR[3]: unexpected failure: " << e.what() << "\n";
        return 3;
    }
}
