// lacos: command-line front end wiring the pipeline end to end.
//
// Subcommands: synth (corpus generation), train, eval, quantize, sweep,
// inspect. Every command is deterministic under fixed seed and flags;
// timestamps appear only in stderr log lines, never in artifacts.

#include "CLI11.hpp"
#include "json.hpp"

#include "lacos/checkpoint.hpp"
#include "lacos/data.hpp"
#include "lacos/encoder.hpp"
#include "lacos/errors.hpp"
#include "lacos/eval.hpp"
#include "lacos/lora.hpp"
#include "lacos/objective.hpp"
#include "lacos/optim.hpp"
#include "lacos/quant.hpp"
#include "lacos/rng.hpp"
#include "lacos/train.hpp"
#include "lacos/vocab.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace lacos;

namespace {

// ---------------------------------------------------------------------------
// Logging. The only place timestamps are allowed; goes to stderr so stdout
// and file artifacts stay byte-reproducible.
// ---------------------------------------------------------------------------

std::mutex g_log_mutex;

void log_line(const std::string& msg) {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    localtime_r(&t, &tm);
    char stamp[16];
    std::snprintf(stamp, sizeof stamp, "[%02d:%02d:%02d] ", tm.tm_hour, tm.tm_min, tm.tm_sec);
    const std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << stamp << msg << '\n';
}

void warn(const std::string& msg) {
    const std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << "warning: " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Run configuration: one JSON object covering every knob of a training run.
// All defaults are explicit; the fully resolved config is echoed to
// <out>/config.json and stdout, and re-running from that echo reproduces
// the run.
// ---------------------------------------------------------------------------

struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    bool dedup_premises = true;
    FileFormat data_format = FileFormat::jsonl;
    bool quantize_base = false;         // blockwise-quantize frozen weights before training
    std::size_t weight_block_size = 64;
    std::string train_data;             // may be supplied/overridden by --data
    std::string out_dir;                // may be supplied/overridden by --out
    EncoderConfig encoder;              // encoder.seed falls back to `seed`
    MnrConfig mnr;
    AdamConfig adam;
};

RunConfig default_run_config() {
    RunConfig cfg;
    // Contrastive temperature for CLI training runs. The raw cosine-similarity
    // scale of 1.0 bounds how far the loss can fall (similarities live in
    // [-1, 1]); a sharper temperature gives the synthetic runs a real
    // learning signal. Library callers still default to 1.0.
    cfg.mnr.scale = 20.0;
    return cfg;
}

[[noreturn]] void bad_field(const std::string& ctx, const std::string& key, const char* why) {
    throw ConfigError("config: field '" + ctx + key + "' " + why);
}

void reject_unknown_keys(const ordered_json& j, const std::string& ctx,
                         std::initializer_list<const char*> allowed) {
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (item.key() == a) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError("config: unknown key '" + ctx + item.key() + "'");
    }
}

std::size_t size_field(const ordered_json& j, const std::string& ctx, const char* key,
                       std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
        bad_field(ctx, key, "must be an integer");
    }
    if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
        bad_field(ctx, key, "must be non-negative");
    }
    return v.get<std::size_t>();
}

std::uint64_t seed_field(const ordered_json& j, const std::string& ctx, const char* key,
                         std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
        bad_field(ctx, key, "must be an integer");
    }
    if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
        bad_field(ctx, key, "must be non-negative");
    }
    return v.get<std::uint64_t>();
}

bool bool_field(const ordered_json& j, const std::string& ctx, const char* key, bool fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_boolean()) bad_field(ctx, key, "must be true or false");
    return v.get<bool>();
}

double double_field(const ordered_json& j, const std::string& ctx, const char* key,
                    double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number()) bad_field(ctx, key, "must be a number");
    return v.get<double>();
}

std::string string_field(const ordered_json& j, const std::string& ctx, const char* key,
                         const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_string()) bad_field(ctx, key, "must be a string");
    return v.get<std::string>();
}

Reduction reduction_from_string(const std::string& s) {
    if (s == "sum") return Reduction::sum;
    if (s == "mean") return Reduction::mean;
    throw ConfigError("config: unknown reduction '" + s + "' (expected sum or mean)");
}

const char* to_string(Reduction r) { return r == Reduction::sum ? "sum" : "mean"; }

RunConfig run_config_from_json(const ordered_json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    reject_unknown_keys(j, "",
                        {"seed", "epochs", "batch_size", "dedup_premises", "data_format",
                         "quantize_base", "weight_block_size", "train_data", "out_dir", "encoder",
                         "mnr", "adam"});

    RunConfig cfg = default_run_config();
    cfg.seed = seed_field(j, "", "seed", cfg.seed);
    cfg.epochs = size_field(j, "", "epochs", cfg.epochs);
    cfg.batch_size = size_field(j, "", "batch_size", cfg.batch_size);
    cfg.dedup_premises = bool_field(j, "", "dedup_premises", cfg.dedup_premises);
    cfg.data_format = file_format_from_string(string_field(j, "", "data_format", "jsonl"));
    cfg.quantize_base = bool_field(j, "", "quantize_base", cfg.quantize_base);
    cfg.weight_block_size = size_field(j, "", "weight_block_size", cfg.weight_block_size);
    cfg.train_data = string_field(j, "", "train_data", cfg.train_data);
    cfg.out_dir = string_field(j, "", "out_dir", cfg.out_dir);

    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        if (!e.is_object()) throw ConfigError("config: 'encoder' must be an object");
        reject_unknown_keys(e, "encoder.",
                            {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len",
                             "lora_rank", "lora_attach", "seed", "causal", "train_embeddings",
                             "init_std"});
        EncoderConfig& enc = cfg.encoder;
        enc.vocab_size = size_field(e, "encoder.", "vocab_size", enc.vocab_size);
        enc.d_model = size_field(e, "encoder.", "d_model", enc.d_model);
        enc.n_layers = size_field(e, "encoder.", "n_layers", enc.n_layers);
        enc.n_heads = size_field(e, "encoder.", "n_heads", enc.n_heads);
        enc.d_ff = size_field(e, "encoder.", "d_ff", enc.d_ff);
        enc.max_seq_len = size_field(e, "encoder.", "max_seq_len", enc.max_seq_len);
        enc.lora_rank = size_field(e, "encoder.", "lora_rank", enc.lora_rank);
        if (e.contains("lora_attach")) {
            const auto& arr = e.at("lora_attach");
            if (!arr.is_array()) bad_field("encoder.", "lora_attach", "must be an array");
            enc.lora_attach.clear();
            for (const auto& item : arr) {
                if (!item.is_string()) {
                    bad_field("encoder.", "lora_attach", "must hold attach-point names");
                }
                enc.lora_attach.push_back(attach_point_from_string(item.get<std::string>()));
            }
        }
        enc.seed = seed_field(e, "encoder.", "seed", cfg.seed);
        enc.causal = bool_field(e, "encoder.", "causal", enc.causal);
        enc.train_embeddings = bool_field(e, "encoder.", "train_embeddings", enc.train_embeddings);
        enc.init_std = double_field(e, "encoder.", "init_std", enc.init_std);
    } else {
        cfg.encoder.seed = cfg.seed;
    }

    if (j.contains("mnr")) {
        const auto& m = j.at("mnr");
        if (!m.is_object()) throw ConfigError("config: 'mnr' must be an object");
        reject_unknown_keys(m, "mnr.", {"scale", "reduction"});
        cfg.mnr.scale = double_field(m, "mnr.", "scale", cfg.mnr.scale);
        cfg.mnr.reduction =
            reduction_from_string(string_field(m, "mnr.", "reduction", to_string(cfg.mnr.reduction)));
    }

    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        if (!a.is_object()) throw ConfigError("config: 'adam' must be an object");
        reject_unknown_keys(a, "adam.",
                            {"lr", "beta1", "beta2", "eps", "bias_correction", "quantize_state",
                             "state_block_size", "grad_clip", "weight_decay"});
        AdamConfig& ad = cfg.adam;
        ad.lr = double_field(a, "adam.", "lr", ad.lr);
        ad.beta1 = double_field(a, "adam.", "beta1", ad.beta1);
        ad.beta2 = double_field(a, "adam.", "beta2", ad.beta2);
        ad.eps = double_field(a, "adam.", "eps", ad.eps);
        ad.bias_correction = bool_field(a, "adam.", "bias_correction", ad.bias_correction);
        ad.quantize_state = bool_field(a, "adam.", "quantize_state", ad.quantize_state);
        ad.state_block_size = size_field(a, "adam.", "state_block_size", ad.state_block_size);
        ad.grad_clip = double_field(a, "adam.", "grad_clip", ad.grad_clip);
        ad.weight_decay = double_field(a, "adam.", "weight_decay", ad.weight_decay);
    }

    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    const auto j = ordered_json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ConfigError("config: invalid JSON in '" + path + "'");
    return run_config_from_json(j);
}

/// Fully resolved echo: every default explicit, d_ff and the encoder seed
/// materialized. Re-running `train` from this JSON reproduces the run.
ordered_json run_config_to_json(const RunConfig& cfg) {
    ordered_json enc;
    enc["vocab_size"] = cfg.encoder.vocab_size;
    enc["d_model"] = cfg.encoder.d_model;
    enc["n_layers"] = cfg.encoder.n_layers;
    enc["n_heads"] = cfg.encoder.n_heads;
    enc["d_ff"] = cfg.encoder.resolved_d_ff();
    enc["max_seq_len"] = cfg.encoder.max_seq_len;
    enc["lora_rank"] = cfg.encoder.lora_rank;
    auto attach = ordered_json::array();
    for (const auto ap : cfg.encoder.lora_attach) attach.push_back(to_string(ap));
    enc["lora_attach"] = std::move(attach);
    enc["seed"] = cfg.encoder.seed;
    enc["causal"] = cfg.encoder.causal;
    enc["train_embeddings"] = cfg.encoder.train_embeddings;
    enc["init_std"] = cfg.encoder.init_std;

    ordered_json mnr;
    mnr["scale"] = cfg.mnr.scale;
    mnr["reduction"] = to_string(cfg.mnr.reduction);

    ordered_json adam;
    adam["lr"] = cfg.adam.lr;
    adam["beta1"] = cfg.adam.beta1;
    adam["beta2"] = cfg.adam.beta2;
    adam["eps"] = cfg.adam.eps;
    adam["bias_correction"] = cfg.adam.bias_correction;
    adam["quantize_state"] = cfg.adam.quantize_state;
    adam["state_block_size"] = cfg.adam.state_block_size;
    adam["grad_clip"] = cfg.adam.grad_clip;
    adam["weight_decay"] = cfg.adam.weight_decay;

    ordered_json j;
    j["seed"] = cfg.seed;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["dedup_premises"] = cfg.dedup_premises;
    j["data_format"] = cfg.data_format == FileFormat::jsonl ? "jsonl" : "tsv";
    j["quantize_base"] = cfg.quantize_base;
    j["weight_block_size"] = cfg.weight_block_size;
    j["train_data"] = cfg.train_data;
    j["out_dir"] = cfg.out_dir;
    j["encoder"] = std::move(enc);
    j["mnr"] = std::move(mnr);
    j["adam"] = std::move(adam);
    return j;
}

// ---------------------------------------------------------------------------
// Filesystem helpers. Output problems are data errors (exit 3).
// ---------------------------------------------------------------------------

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir)) {
        throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
    auto out = open_output(path);
    out << text;
    if (!out) throw DataError("failed while writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Training runs, shared by `train` and each `sweep` grid point.
// ---------------------------------------------------------------------------

struct RunArtifacts {
    TrainResult result;
    LoadedModel trained;   // model + the vocabulary it was trained with
    double trainable_fraction = 0.0;
};

RunArtifacts run_training(const RunConfig& cfg, bool save_full, bool echo_stdout) {
    if (cfg.train_data.empty()) {
        throw ConfigError("train: no training data (pass --data or set train_data)");
    }
    if (cfg.out_dir.empty()) {
        throw ConfigError("train: no output directory (pass --out or set out_dir)");
    }
    if (cfg.weight_block_size < 1) throw ConfigError("config: weight_block_size must be >= 1");

    const auto records = load_nli(cfg.train_data, cfg.data_format);
    const auto pairs = filter_entailment(records);
    if (pairs.empty()) {
        throw DataError("train: no entailment pairs in '" + cfg.train_data + "'");
    }

    std::vector<std::string> texts;
    texts.reserve(2 * pairs.size());
    for (const auto& [premise, hypothesis] : pairs) {
        texts.push_back(premise);
        texts.push_back(hypothesis);
    }
    const auto vocab = build_vocabulary(texts, cfg.encoder.vocab_size);

    EncoderConfig enc = cfg.encoder;
    enc.vocab_size = vocab.size(); // config value is a cap; the corpus sets the real size
    enc.d_ff = enc.resolved_d_ff();
    validate(enc);

    SentenceEncoder model(enc);
    if (cfg.quantize_base) quantize_frozen_weights(model, cfg.weight_block_size);

    const fs::path out_dir(cfg.out_dir);
    ensure_directory(out_dir);
    const std::string echo = run_config_to_json(cfg).dump(2) + "\n";
    write_text_file(out_dir / "config.json", echo);
    if (echo_stdout) std::cout << echo;

    auto metrics = open_output(out_dir / "metrics.jsonl");
    const auto on_step = [&](const StepMetric& m) {
        if (!std::isfinite(m.loss)) {
            throw NumericError("train: non-finite loss at step " + std::to_string(m.step));
        }
        ordered_json line;
        line["step"] = m.step;
        line["loss"] = m.loss;
        line["acc"] = m.acc;
        metrics << line.dump() << '\n';
    };

    TrainOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.epochs = cfg.epochs;
    opts.seed = cfg.seed;
    opts.dedup_premises = cfg.dedup_premises;
    opts.mnr = cfg.mnr;
    opts.adam = cfg.adam;

    log_line("train: " + std::to_string(pairs.size()) + " pairs, vocab " +
             std::to_string(vocab.size()) + ", d_model " + std::to_string(enc.d_model) + ", rank " +
             std::to_string(enc.lora_rank));
    auto result = train_model(model, pairs, vocab, opts, on_step);
    metrics.flush();
    if (!metrics) throw DataError("failed while writing metrics");

    {
        auto ckpt = checkpoint_from_model(model, vocab, /*adapter_only=*/true);
        save_checkpoint((out_dir / "adapter.lacs").string(), ckpt);
    }
    if (save_full) {
        auto ckpt = checkpoint_from_model(model, vocab, /*adapter_only=*/false);
        save_checkpoint((out_dir / "model.lacs").string(), ckpt);
    }

    const double fraction = model.trainable_fraction();
    ordered_json summary;
    summary["pairs"] = result.pairs;
    summary["steps"] = result.steps;
    summary["initial_loss"] = result.initial_loss;
    summary["final_loss"] = result.final_loss;
    summary["trainable_params"] = model.trainable_params();
    summary["total_params"] = model.total_params();
    summary["trainable_fraction"] = fraction;
    summary["checkpoint"] = "adapter.lacs";
    write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");

    return RunArtifacts{std::move(result), LoadedModel{std::move(model), std::move(vocab)},
                        fraction};
}

// ---------------------------------------------------------------------------
// Exit codes: 0 success, 2 config, 3 data, 4 numeric, 5 checkpoint format.
// ---------------------------------------------------------------------------

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    if (dynamic_cast<const CheckpointError*>(&e)) return 5;
    if (dynamic_cast<const ShapeError*>(&e)) return 2;
    return 1;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::uint64_t seed = 0;
    std::size_t train_pairs = 2000;
    std::size_t eval_pairs = 400;
    std::size_t vocab = 64;
    std::string out;
};

int cmd_synth(const SynthArgs& args) {
    const auto corpus = synth_corpus(args.seed, args.train_pairs, args.eval_pairs, args.vocab);
    const fs::path out_dir(args.out);
    ensure_directory(out_dir);

    {
        auto out = open_output(out_dir / "train.jsonl");
        write_nli_jsonl(out, corpus.train);
        if (!out) throw DataError("failed while writing train.jsonl");
    }
    {
        auto out = open_output(out_dir / "sts.jsonl");
        write_sts_jsonl(out, corpus.eval);
        if (!out) throw DataError("failed while writing sts.jsonl");
    }

    std::cout << "synth: wrote " << corpus.train.size() << " train pairs and "
              << corpus.eval.size() << " eval pairs to " << out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    bool save_full = false;
};

RunConfig resolve_train_config(const std::string& config_path, const std::string& data,
                               const std::string& out) {
    RunConfig cfg = config_path.empty() ? default_run_config() : load_run_config(config_path);
    if (!data.empty()) cfg.train_data = data;
    if (!out.empty()) cfg.out_dir = out;
    return cfg;
}

int cmd_train(const TrainArgs& args) {
    const RunConfig cfg = resolve_train_config(args.config, args.data, args.out);
    const auto run = run_training(cfg, args.save_full, /*echo_stdout=*/true);
    std::ostringstream line;
    line << "train: " << run.result.pairs << " pairs, " << run.result.steps << " steps, loss "
         << run.result.initial_loss << " -> " << run.result.final_loss << ", trainable fraction "
         << run.trainable_fraction;
    std::cout << line.str() << "\n";
    log_line("train: done, checkpoint at " + (fs::path(cfg.out_dir) / "adapter.lacs").string());
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string model;
    std::string data;
    std::string report;
    std::string format = "jsonl";
};

int cmd_eval(const EvalArgs& args) {
    const auto loaded = model_from_checkpoint(load_checkpoint(args.model));
    const auto records = load_sts(args.data, file_format_from_string(args.format));
    const auto report = sts_eval(loaded.model, loaded.vocab, records);

    write_text_file(args.report, report_to_json(report) + "\n");

    std::ostringstream line;
    line << "eval: n=" << report.n_pairs << " max_rho=";
    if (report.max_rho) {
        line << *report.max_rho;
    } else {
        line << "none (all similarities degenerate)";
    }
    for (const auto kind : kReportSimilarityOrder) {
        line << " | " << to_string(kind) << ' ';
        const auto rho = report.rho(kind);
        if (rho) {
            line << *rho;
        } else {
            line << "degenerate";
        }
    }
    std::cout << line.str() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

struct QuantizeArgs {
    std::string in;
    std::string out;
    std::size_t block_size = 64;
};

int cmd_quantize(const QuantizeArgs& args) {
    if (args.block_size < 1) throw ConfigError("quantize: block size must be >= 1");
    const auto ckpt = load_checkpoint(args.in);
    if (ckpt.has_quantized_weights() || ckpt.base_quant_block) {
        warn("quantize: '" + args.in + "' is already quantized; copying unchanged");
        std::error_code ec;
        fs::copy_file(args.in, args.out, fs::copy_options::overwrite_existing, ec);
        if (ec) throw DataError("cannot write '" + args.out + "': " + ec.message());
        std::cout << "quantize: no-op (input already quantized)\n";
        return 0;
    }

    auto loaded = model_from_checkpoint(ckpt);
    quantize_frozen_weights(loaded.model, args.block_size);

    std::size_t q8_bytes = 0;
    std::size_t f32_bytes = 0;
    for (const auto* lin : loaded.model.lora_layers()) {
        if (!lin->base_q) continue;
        q8_bytes += serialized_size(*lin->base_q);
        f32_bytes += 4 * lin->base_q->rows * lin->base_q->cols;
    }

    auto out_ckpt = checkpoint_from_model(loaded.model, loaded.vocab, /*adapter_only=*/false);
    save_checkpoint(args.out, out_ckpt);

    const double ratio = f32_bytes == 0 ? 0.0
                                        : static_cast<double>(q8_bytes) / static_cast<double>(f32_bytes);
    std::ostringstream line;
    line << "quantize: block " << args.block_size << ", frozen weights " << f32_bytes
         << " B f32 -> " << q8_bytes << " B q8 (ratio " << ratio << ")";
    std::cout << line.str() << "\n";
    if (ratio > 1.0) {
        warn("quantize: block size " + std::to_string(args.block_size) +
             " inflates storage (ratio " + std::to_string(ratio) + ")");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepArgs {
    std::vector<std::size_t> r{1, 2, 4, 8, 16};
    std::vector<std::size_t> batch{32, 64};
    std::vector<double> lr{1e-4, 2e-5, 5e-5};
    std::string config;
    std::string data;
    std::string out;
    std::string val_data;
};

struct SweepRun {
    std::size_t index = 0;
    std::size_t r = 0;
    std::size_t batch = 0;
    double lr = 0.0;
    bool ok = false;
    std::string error;
    int error_code = 0;
    double val_loss = 0.0;
    std::optional<double> standardized;
    std::string dir;
};

std::size_t worker_count(std::size_t n_runs) {
    const char* env = std::getenv("LACOS_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    char* end = nullptr;
    const unsigned long parsed = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || parsed == 0) {
        warn("sweep: ignoring invalid LACOS_THREADS='" + std::string(env) + "'");
        return 1;
    }
    return std::min<std::size_t>(parsed, n_runs);
}

int cmd_sweep(const SweepArgs& args) {
    if (args.r.empty() || args.batch.empty() || args.lr.empty()) {
        throw ConfigError("sweep: grids must be non-empty");
    }
    const RunConfig base = resolve_train_config(args.config, args.data, args.out);
    if (base.train_data.empty()) {
        throw ConfigError("sweep: no training data (pass --data or set train_data)");
    }
    if (base.out_dir.empty()) {
        throw ConfigError("sweep: no output directory (pass --out or set out_dir)");
    }

    // Optional held-out pairs; without them the selection metric is the final
    // epoch-mean training loss, so a single-point sweep reduces to cmd_train.
    std::vector<SentencePair> val_pairs;
    if (!args.val_data.empty()) {
        val_pairs = filter_entailment(load_nli(args.val_data, base.data_format));
        if (val_pairs.empty()) {
            throw DataError("sweep: no entailment pairs in '" + args.val_data + "'");
        }
    }

    const fs::path out_dir(base.out_dir);
    ensure_directory(out_dir / "runs");

    const std::size_t n_runs = args.r.size() * args.batch.size() * args.lr.size();
    std::vector<SweepRun> runs(n_runs);

    const auto execute = [&](std::size_t index) {
        SweepRun& run = runs[index];
        run.index = index;
        const std::size_t li = index % args.lr.size();
        const std::size_t bi = (index / args.lr.size()) % args.batch.size();
        const std::size_t ri = index / (args.lr.size() * args.batch.size());
        run.r = args.r[ri];
        run.batch = args.batch[bi];
        run.lr = args.lr[li];

        char name[32];
        std::snprintf(name, sizeof name, "run_%03zu", index);
        const fs::path run_dir = out_dir / "runs" / name;
        run.dir = (fs::path("runs") / name).string();

        RunConfig cfg = base;
        cfg.encoder.lora_rank = run.r;
        cfg.batch_size = run.batch;
        cfg.adam.lr = run.lr;
        cfg.out_dir = run_dir.string();

        log_line("sweep: " + std::string(name) + " r=" + std::to_string(run.r) +
                 " batch=" + std::to_string(run.batch) + " lr=" + std::to_string(run.lr));
        try {
            const auto artifacts = run_training(cfg, /*save_full=*/false, /*echo_stdout=*/false);
            if (val_pairs.empty()) {
                run.val_loss = artifacts.result.final_loss;
            } else {
                const auto batches = make_batches(val_pairs, cfg.batch_size,
                                                  derive_seed(cfg.seed, 0), cfg.dedup_premises);
                run.val_loss = epoch_mean_loss(artifacts.trained.model, val_pairs, batches,
                                               artifacts.trained.vocab, cfg.mnr);
            }
            run.ok = true;
        } catch (const std::exception& e) {
            run.error = e.what();
            run.error_code = exit_code_for(e);
            log_line("sweep: " + std::string(name) + " failed: " + run.error);
        }
    };

    const std::size_t workers = worker_count(n_runs);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_runs; ++i) execute(i);
    } else {
        log_line("sweep: running " + std::to_string(n_runs) + " configurations on " +
                 std::to_string(workers) + " workers");
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n_runs; i = next.fetch_add(1)) {
                    execute(i);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    // Min-max standardization over the successful runs; skipped (nulls) when
    // fewer than two succeeded or every loss is identical.
    std::vector<std::size_t> ok_indices;
    std::vector<double> ok_losses;
    for (const auto& run : runs) {
        if (run.ok) {
            ok_indices.push_back(run.index);
            ok_losses.push_back(run.val_loss);
        }
    }
    if (ok_losses.size() >= 2) {
        try {
            const auto standardized = standardize_losses(ok_losses);
            for (std::size_t i = 0; i < ok_indices.size(); ++i) {
                runs[ok_indices[i]].standardized = standardized[i];
            }
        } catch (const DegenerateError&) {
            warn("sweep: all validation losses identical; standardized losses omitted");
        }
    }

    std::optional<std::size_t> best;
    for (const auto idx : ok_indices) {
        if (!best || runs[idx].val_loss < runs[*best].val_loss) best = idx;
    }

    ordered_json grid;
    grid["r"] = args.r;
    grid["batch_size"] = args.batch;
    grid["lr"] = args.lr;

    auto runs_json = ordered_json::array();
    for (const auto& run : runs) {
        ordered_json r;
        r["index"] = run.index;
        r["r"] = run.r;
        r["batch_size"] = run.batch;
        r["lr"] = run.lr;
        r["status"] = run.ok ? "ok" : "failed";
        if (run.ok) {
            r["val_loss"] = run.val_loss;
            if (run.standardized) {
                r["standardized_loss"] = *run.standardized;
            } else {
                r["standardized_loss"] = nullptr;
            }
            r["dir"] = run.dir;
        } else {
            r["error"] = run.error;
        }
        runs_json.push_back(std::move(r));
    }

    ordered_json report;
    report["grid"] = std::move(grid);
    report["validation"] = args.val_data.empty() ? "final_train_loss" : "held_out_pairs";
    report["runs"] = std::move(runs_json);
    if (best) {
        const auto& b = runs[*best];
        ordered_json bj;
        bj["index"] = b.index;
        bj["r"] = b.r;
        bj["batch_size"] = b.batch;
        bj["lr"] = b.lr;
        bj["val_loss"] = b.val_loss;
        bj["dir"] = b.dir;
        report["best"] = std::move(bj);
    } else {
        report["best"] = nullptr;
    }
    write_text_file(out_dir / "sweep_report.json", report.dump(2) + "\n");

    if (!best) {
        std::cerr << "error: sweep: all " << n_runs << " runs failed\n";
        return runs.empty() ? 2 : runs.front().error_code;
    }
    const auto& b = runs[*best];
    std::ostringstream line;
    line << "sweep: " << ok_indices.size() << "/" << n_runs << " runs ok, best r=" << b.r
         << " batch=" << b.batch << " lr=" << b.lr << " val_loss=" << b.val_loss;
    std::cout << line.str() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

struct InspectArgs {
    std::string model;
};

int cmd_inspect(const InspectArgs& args) {
    const auto ckpt = load_checkpoint(args.model);

    std::cout << "checkpoint: " << args.model << "\n";
    std::cout << "version " << Checkpoint::kVersion << ", "
              << (ckpt.adapter_only ? "adapter-only" : "full model") << ", vocab "
              << ckpt.vocab_tokens.size() + 2 << " ids, " << ckpt.tensors.size() << " tensors\n";
    if (ckpt.base_quant_block) {
        std::cout << "frozen base: quantized at block " << *ckpt.base_quant_block
                  << " (re-applied on load)\n";
    }
    if (ckpt.has_optimizer_state()) std::cout << "optimizer state: present\n";

    std::size_t q8_count = 0;
    std::size_t q8_bytes = 0;
    std::size_t q8_dense_bytes = 0;
    std::cout << "tensors:\n";
    for (const auto& e : ckpt.tensors) {
        std::cout << "  " << std::left << std::setw(28) << e.name << ' ' << std::setw(3)
                  << e.dtype() << ' ' << std::right << std::setw(5) << e.rows << " x "
                  << std::left << std::setw(5) << e.cols << ' ' << std::right << std::setw(9)
                  << e.payload_bytes() << " B" << (e.trainable ? "  trainable" : "") << "\n";
        if (e.q8) {
            ++q8_count;
            q8_bytes += e.payload_bytes();
            q8_dense_bytes += 4 * e.rows * e.cols;
        }
    }

    auto loaded = model_from_checkpoint(ckpt);
    auto& model = loaded.model;
    std::cout << "trainable fraction: " << model.trainable_fraction() << " ("
              << model.trainable_params() << " / " << model.total_params() << " params)\n";

    if (q8_count > 0) {
        const double ratio = static_cast<double>(q8_bytes) / static_cast<double>(q8_dense_bytes);
        std::cout << "quantized storage: " << q8_count << " tensors, " << q8_bytes << " B vs "
                  << q8_dense_bytes << " B dense (ratio " << ratio << ")\n";
    } else {
        std::cout << "quantized storage: none\n";
    }
    return 0;
}

} // namespace

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"lacos: low-rank adapters over a block-quantized sentence encoder"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic paraphrase corpus");
    synth->alias("synth-data");
    synth->add_option("--seed", synth_args.seed, "Corpus seed")->capture_default_str();
    synth->add_option("--train-pairs", synth_args.train_pairs, "Number of training pairs")
        ->capture_default_str();
    synth->add_option("--eval-pairs", synth_args.eval_pairs, "Number of scored eval pairs")
        ->capture_default_str();
    synth->add_option("--vocab", synth_args.vocab, "Synthetic vocabulary size (>= 16)")
        ->capture_default_str();
    synth->add_option("--out", synth_args.out, "Output directory")->required();

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Fine-tune adapters on entailment pairs");
    train->add_option("--config", train_args.config, "Run config JSON (defaults used when omitted)");
    train->add_option("--data", train_args.data, "Training pairs (overrides config train_data)");
    train->add_option("--out", train_args.out, "Output directory (overrides config out_dir)");
    train->add_flag("--save-full", train_args.save_full,
                    "Also write the full model checkpoint (model.lacs)");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Score a model on similarity-annotated pairs");
    eval->add_option("--model", eval_args.model, "Checkpoint to evaluate")->required();
    eval->add_option("--data", eval_args.data, "Scored sentence pairs")->required();
    eval->add_option("--report", eval_args.report, "Report JSON output path")->required();
    eval->add_option("--format", eval_args.format, "Data format: jsonl or tsv")
        ->capture_default_str();

    QuantizeArgs quant_args;
    auto* quantize = app.add_subcommand("quantize", "Block-quantize a checkpoint's frozen weights");
    quantize->add_option("--in", quant_args.in, "Input checkpoint")->required();
    quantize->add_option("--out", quant_args.out, "Output checkpoint")->required();
    quantize->add_option("--block-size", quant_args.block_size, "Quantization block size")
        ->capture_default_str();

    SweepArgs sweep_args;
    auto* sweep = app.add_subcommand("sweep", "Grid-search rank, batch size and learning rate");
    sweep->add_option("--r", sweep_args.r, "Adapter rank grid")->delimiter(',');
    sweep->add_option("--batch", sweep_args.batch, "Batch size grid")->delimiter(',');
    sweep->add_option("--lr", sweep_args.lr, "Learning rate grid")->delimiter(',');
    sweep->add_option("--config", sweep_args.config, "Base run config JSON");
    sweep->add_option("--data", sweep_args.data, "Training pairs")->required();
    sweep->add_option("--out", sweep_args.out, "Output directory")->required();
    sweep->add_option("--val-data", sweep_args.val_data,
                      "Held-out pairs for validation loss (default: final training loss)");

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect", "Print a checkpoint's manifest and stats");
    inspect->add_option("--model", inspect_args.model, "Checkpoint to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2; // flag/usage problems are config errors
    }

    try {
        if (*synth) return cmd_synth(synth_args);
        if (*train) return cmd_train(train_args);
        if (*eval) return cmd_eval(eval_args);
        if (*quantize) return cmd_quantize(quant_args);
        if (*sweep) return cmd_sweep(sweep_args);
        if (*inspect) return cmd_inspect(inspect_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 2;
}
