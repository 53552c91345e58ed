// End-to-end tests of the command-line tool: every subcommand is driven as a
// subprocess and its artifacts are checked through the library. Exit codes,
// determinism (byte-identical reruns), and the documented warnings are pinned
// here; the full-scale pipeline thresholds live in the acceptance runner.

#include "doctest.h"

#include "lacos/checkpoint.hpp"
#include "lacos/data.hpp"
#include "lacos/errors.hpp"
#include "lacos/eval.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

using namespace lacos;
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct TempDir {
    fs::path path;

    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("lacos_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

/// Runs the CLI with the given argument string; captures exit code and both
/// output streams. `env` is prepended as VAR=value assignments.
CmdResult run_cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const auto out_path = dir.path / ("stdout_" + std::to_string(counter));
    const auto err_path = dir.path / ("stderr_" + std::to_string(counter));
    ++counter;

    std::string cmd = "cd " + dir.path.string() + " && ";
    if (!env.empty()) cmd += "env " + env + " ";
    cmd += std::string(LACOS_CLI_PATH) + " " + args + " > " + out_path.string() + " 2> " +
           err_path.string();

    const int raw = std::system(cmd.c_str());
    CmdResult result;
    result.code = raw == -1 ? -1 : (WIFEXITED(raw) ? WEXITSTATUS(raw) : -2);
    result.out = read_file(out_path);
    result.err = read_file(err_path);
    return result;
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (const char c : text) {
        if (c == '\n') ++n;
    }
    return n;
}

const char* kSmallConfig = R"({
  "seed": 3,
  "epochs": 1,
  "batch_size": 8,
  "encoder": {"d_model": 16, "n_layers": 1, "n_heads": 2, "lora_rank": 2, "max_seq_len": 16},
  "adam": {"lr": 1e-3}
})";

void make_corpus(const TempDir& dir, const std::string& out = "data",
                 const std::string& extra = "--train-pairs 120 --eval-pairs 30") {
    const auto r = run_cli(dir, "synth --seed 5 --vocab 32 " + extra + " --out " + out);
    REQUIRE(r.code == 0);
}

} // namespace

TEST_CASE("synth is deterministic and honors --train-pairs 0") {
    TempDir dir;
    make_corpus(dir, "a");
    make_corpus(dir, "b");
    CHECK(same_bytes(dir.path / "a/train.jsonl", dir.path / "b/train.jsonl"));
    CHECK(same_bytes(dir.path / "a/sts.jsonl", dir.path / "b/sts.jsonl"));

    const auto r = run_cli(dir, "synth --seed 5 --vocab 32 --train-pairs 0 --eval-pairs 12 --out c");
    CHECK(r.code == 0);
    CHECK(read_file(dir.path / "c/train.jsonl").empty());
    const auto eval_records = load_sts(dir / "c/sts.jsonl", FileFormat::jsonl);
    CHECK(eval_records.size() == 12);

    // the eval stream is independent of the train-pair count
    CHECK(load_nli(dir / "a/train.jsonl", FileFormat::jsonl).size() == 120);
    const auto full_eval = load_sts(dir / "a/sts.jsonl", FileFormat::jsonl);
    for (std::size_t i = 0; i < eval_records.size(); ++i) {
        CHECK(eval_records[i].sentence1 == full_eval[i].sentence1);
        CHECK(eval_records[i].score == full_eval[i].score);
    }
}

TEST_CASE("train writes config echo, metrics, summary and an adapter checkpoint") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", kSmallConfig);

    const auto r = run_cli(dir, "train --config cfg.json --data data/train.jsonl --out run");
    REQUIRE(r.code == 0);

    // resolved config echoed to stdout and to the artifact, with defaults explicit
    const auto echo = read_file(dir.path / "run/config.json");
    CHECK(r.out.find(echo) != std::string::npos);
    const auto cfg = ordered_json::parse(echo);
    CHECK(cfg.at("mnr").at("scale").get<double>() == 20.0);
    CHECK(cfg.at("encoder").at("d_ff").get<int>() == 64);
    CHECK(cfg.at("encoder").at("seed").get<int>() == 3); // falls back to the run seed
    CHECK(cfg.at("train_data").get<std::string>() == "data/train.jsonl");

    const auto summary = ordered_json::parse(read_file(dir.path / "run/summary.json"));
    const auto metrics = read_file(dir.path / "run/metrics.jsonl");
    CHECK(count_lines(metrics) == summary.at("steps").get<std::size_t>());
    CHECK(metrics.rfind("{\"step\":1,\"loss\":", 0) == 0); // field order is part of the format
    std::istringstream lines(metrics);
    std::string line;
    std::size_t expected_step = 1;
    while (std::getline(lines, line)) {
        const auto j = ordered_json::parse(line);
        CHECK(j.at("step").get<std::size_t>() == expected_step++);
        CHECK(std::isfinite(j.at("loss").get<double>()));
        CHECK(j.at("acc").get<double>() >= 0.0);
        CHECK(j.at("acc").get<double>() <= 1.0);
    }

    const auto ckpt = load_checkpoint(dir / "run/adapter.lacs");
    CHECK(ckpt.adapter_only);
    for (const auto& e : ckpt.tensors) CHECK(e.trainable);
}

TEST_CASE("train reruns and echo-config reruns are byte-identical") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", kSmallConfig);

    REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out r1").code == 0);
    REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out r2").code == 0);
    CHECK(same_bytes(dir.path / "r1/metrics.jsonl", dir.path / "r2/metrics.jsonl"));
    CHECK(same_bytes(dir.path / "r1/adapter.lacs", dir.path / "r2/adapter.lacs"));
    CHECK(same_bytes(dir.path / "r1/summary.json", dir.path / "r2/summary.json"));

    // the echoed config alone reproduces the run (paths included)
    REQUIRE(run_cli(dir, "train --config r1/config.json --out r3").code == 0);
    CHECK(same_bytes(dir.path / "r1/metrics.jsonl", dir.path / "r3/metrics.jsonl"));
    CHECK(same_bytes(dir.path / "r1/adapter.lacs", dir.path / "r3/adapter.lacs"));
}

TEST_CASE("train with lr=0 is a no-op: final loss equals initial loss") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", R"({
      "seed": 3, "epochs": 1, "batch_size": 8,
      "encoder": {"d_model": 16, "n_layers": 1, "n_heads": 2, "lora_rank": 2, "max_seq_len": 16},
      "adam": {"lr": 0}
    })");
    REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out run").code == 0);
    const auto summary = ordered_json::parse(read_file(dir.path / "run/summary.json"));
    const double initial = summary.at("initial_loss").get<double>();
    const double final_loss = summary.at("final_loss").get<double>();
    CHECK(std::abs(final_loss - initial) <= 1e-6);
}

TEST_CASE("eval writes a schema-round-tripping report") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", kSmallConfig);
    REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out run").code == 0);

    const auto r =
        run_cli(dir, "eval --model run/adapter.lacs --data data/sts.jsonl --report run/report.json");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("max_rho") != std::string::npos);

    const auto report = report_from_json(read_file(dir.path / "run/report.json"));
    CHECK(report.n_pairs == 30);
    CHECK(report.max_rho.has_value());

    const auto again =
        run_cli(dir, "eval --model run/adapter.lacs --data data/sts.jsonl --report run/report2.json");
    REQUIRE(again.code == 0);
    CHECK(same_bytes(dir.path / "run/report.json", dir.path / "run/report2.json"));
}

TEST_CASE("quantize stores frozen bases as q8 and flags degenerate uses") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", kSmallConfig);
    REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out run").code == 0);

    const auto r = run_cli(dir, "quantize --in run/adapter.lacs --out run/q8.lacs --block-size 16");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("ratio") != std::string::npos);

    const auto q8 = load_checkpoint(dir / "run/q8.lacs");
    CHECK(!q8.adapter_only);
    CHECK(q8.has_quantized_weights());
    std::size_t q8_tensors = 0;
    for (const auto& e : q8.tensors) {
        if (e.q8) {
            ++q8_tensors;
            CHECK(!e.trainable);
            CHECK(e.q8->block_size == 16);
        }
        if (e.trainable) CHECK(!e.q8); // adapters stay f32
    }
    CHECK(q8_tensors > 0);

    // a quantized model still evaluates
    CHECK(run_cli(dir, "eval --model run/q8.lacs --data data/sts.jsonl --report run/q8_report.json")
              .code == 0);

    SUBCASE("already-quantized input is a warned no-op copy") {
        const auto again = run_cli(dir, "quantize --in run/q8.lacs --out run/q8_again.lacs");
        CHECK(again.code == 0);
        CHECK(again.err.find("already quantized") != std::string::npos);
        CHECK(same_bytes(dir.path / "run/q8.lacs", dir.path / "run/q8_again.lacs"));
    }

    SUBCASE("block size 1 inflates storage and warns") {
        const auto b1 = run_cli(dir, "quantize --in run/adapter.lacs --out run/b1.lacs --block-size 1");
        CHECK(b1.code == 0);
        CHECK(b1.err.find("inflates") != std::string::npos);
    }
}

TEST_CASE("a single-point sweep reproduces cmd_train exactly") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", kSmallConfig);
    REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out solo").code == 0);

    const auto r = run_cli(dir, "sweep --r 2 --batch 8 --lr 1e-3 --config cfg.json "
                                "--data data/train.jsonl --out swp");
    REQUIRE(r.code == 0);
    CHECK(same_bytes(dir.path / "solo/metrics.jsonl", dir.path / "swp/runs/run_000/metrics.jsonl"));
    CHECK(same_bytes(dir.path / "solo/adapter.lacs", dir.path / "swp/runs/run_000/adapter.lacs"));

    const auto report = ordered_json::parse(read_file(dir.path / "swp/sweep_report.json"));
    REQUIRE(report.at("runs").size() == 1);
    const auto solo_summary = ordered_json::parse(read_file(dir.path / "solo/summary.json"));
    CHECK(report.at("runs").at(0).at("val_loss").get<double>() ==
          solo_summary.at("final_loss").get<double>());
    CHECK(report.at("best").at("index").get<int>() == 0);
}

TEST_CASE("default sweep grids enumerate 30 runs in grid order") {
    TempDir dir;
    make_corpus(dir, "data", "--train-pairs 80 --eval-pairs 8");
    write_file(dir.path / "cfg.json", R"({
      "seed": 3, "epochs": 1,
      "encoder": {"d_model": 16, "n_layers": 1, "n_heads": 2, "max_seq_len": 16}
    })");

    const auto r = run_cli(dir, "sweep --config cfg.json --data data/train.jsonl --out swp");
    REQUIRE(r.code == 0);
    const auto report = ordered_json::parse(read_file(dir.path / "swp/sweep_report.json"));
    const auto& runs = report.at("runs");
    REQUIRE(runs.size() == 30);

    const std::vector<int> r_grid{1, 2, 4, 8, 16};
    const std::vector<int> b_grid{32, 64};
    const std::vector<double> lr_grid{1e-4, 2e-5, 5e-5};
    double best_loss = std::numeric_limits<double>::infinity();
    double lo = best_loss, hi = -best_loss;
    for (std::size_t i = 0; i < 30; ++i) {
        const auto& run = runs.at(i);
        CHECK(run.at("index").get<std::size_t>() == i);
        CHECK(run.at("r").get<int>() == r_grid[i / 6]);
        CHECK(run.at("batch_size").get<int>() == b_grid[(i / 3) % 2]);
        CHECK(run.at("lr").get<double>() == lr_grid[i % 3]);
        REQUIRE(run.at("status").get<std::string>() == "ok");
        const double loss = run.at("val_loss").get<double>();
        const double std_loss = run.at("standardized_loss").get<double>();
        CHECK(std_loss >= 0.0);
        CHECK(std_loss <= 1.0);
        best_loss = std::min(best_loss, loss);
        lo = std::min(lo, std_loss);
        hi = std::max(hi, std_loss);
    }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
    CHECK(report.at("best").at("val_loss").get<double>() == best_loss);
}

TEST_CASE("sweep records sub-run failures and keeps going") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", kSmallConfig);

    // rank 32 exceeds min(d_model, d_ff) = 16 and must fail; rank 2 succeeds
    const auto r = run_cli(dir, "sweep --r 2,32 --batch 8 --lr 1e-3 --config cfg.json "
                                "--data data/train.jsonl --out swp");
    CHECK(r.code == 0);
    const auto report = ordered_json::parse(read_file(dir.path / "swp/sweep_report.json"));
    REQUIRE(report.at("runs").size() == 2);
    CHECK(report.at("runs").at(0).at("status").get<std::string>() == "ok");
    CHECK(report.at("runs").at(1).at("status").get<std::string>() == "failed");
    CHECK(report.at("runs").at(1).at("error").get<std::string>().find("lora_rank") !=
          std::string::npos);
    CHECK(report.at("best").at("r").get<int>() == 2);

    SUBCASE("all grid points failing yields a nonzero exit") {
        const auto bad = run_cli(dir, "sweep --r 32,64 --batch 8 --lr 1e-3 --config cfg.json "
                                      "--data data/train.jsonl --out swp_bad");
        CHECK(bad.code == 2); // configuration failures
        const auto bad_report = ordered_json::parse(read_file(dir.path / "swp_bad/sweep_report.json"));
        CHECK(bad_report.at("best").is_null());
    }
}

TEST_CASE("LACOS_THREADS-parallel sweeps match sequential output byte for byte") {
    TempDir dir;
    make_corpus(dir, "data", "--train-pairs 60 --eval-pairs 8");
    write_file(dir.path / "cfg.json", kSmallConfig);
    const std::string args = "sweep --r 1,2,4 --batch 8 --lr 1e-3 --config cfg.json "
                             "--data data/train.jsonl --out ";
    REQUIRE(run_cli(dir, args + "seq").code == 0);
    REQUIRE(run_cli(dir, args + "par", "LACOS_THREADS=3").code == 0);
    CHECK(same_bytes(dir.path / "seq/sweep_report.json", dir.path / "par/sweep_report.json"));
    for (const char* run : {"run_000", "run_001", "run_002"}) {
        CHECK(same_bytes(dir.path / "seq/runs" / run / "adapter.lacs",
                         dir.path / "par/runs" / run / "adapter.lacs"));
    }

    // an unparseable thread count falls back to sequential with a warning
    const auto odd = run_cli(dir, args + "odd", "LACOS_THREADS=abc");
    CHECK(odd.code == 0);
    CHECK(odd.err.find("LACOS_THREADS") != std::string::npos);
}

TEST_CASE("inspect prints the manifest and the trainable fraction") {
    TempDir dir;
    make_corpus(dir);
    write_file(dir.path / "cfg.json", kSmallConfig);
    REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out run --save-full")
                .code == 0);

    const auto r = run_cli(dir, "inspect --model run/adapter.lacs");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("adapter-only") != std::string::npos);
    CHECK(r.out.find("lora_down") != std::string::npos);
    CHECK(r.out.find("f32") != std::string::npos);
    CHECK(r.out.find("q8") == std::string::npos); // no frozen tensors in the manifest

    // printed fraction matches the library's number for the same checkpoint
    auto loaded = model_from_checkpoint(load_checkpoint(dir / "run/adapter.lacs"));
    std::ostringstream expected;
    expected << "trainable fraction: " << loaded.model.trainable_fraction();
    CHECK(r.out.find(expected.str()) != std::string::npos);

    const auto full = run_cli(dir, "inspect --model run/model.lacs");
    REQUIRE(full.code == 0);
    CHECK(full.out.find("full model") != std::string::npos);
    CHECK(full.out.find("tok_embed") != std::string::npos);
}

TEST_CASE("exit codes: config 2, data 3, checkpoint 5") {
    TempDir dir;
    make_corpus(dir, "data", "--train-pairs 40 --eval-pairs 8");
    write_file(dir.path / "cfg.json", kSmallConfig);

    SUBCASE("unknown flags and missing subcommands are config errors") {
        CHECK(run_cli(dir, "train --no-such-flag").code == 2);
        CHECK(run_cli(dir, "").code == 2);
    }
    SUBCASE("invalid config JSON") {
        write_file(dir.path / "bad.json", "{not json");
        CHECK(run_cli(dir, "train --config bad.json --data data/train.jsonl --out o").code == 2);
    }
    SUBCASE("unknown config key") {
        write_file(dir.path / "bad.json", R"({"learning_rate": 1e-3})");
        const auto r = run_cli(dir, "train --config bad.json --data data/train.jsonl --out o");
        CHECK(r.code == 2);
        CHECK(r.err.find("learning_rate") != std::string::npos);
    }
    SUBCASE("invalid hyperparameters") {
        write_file(dir.path / "bad.json", R"({"batch_size": 1})");
        CHECK(run_cli(dir, "train --config bad.json --data data/train.jsonl --out o").code == 2);
    }
    SUBCASE("missing or malformed data") {
        CHECK(run_cli(dir, "train --config cfg.json --data nope.jsonl --out o").code == 3);
        write_file(dir.path / "bad.jsonl", "{\"premise\": \"a\"}\n");
        const auto r = run_cli(dir, "train --config cfg.json --data bad.jsonl --out o");
        CHECK(r.code == 3);
        CHECK(r.err.find(":1:") != std::string::npos); // line number reported
    }
    SUBCASE("corrupted or missing checkpoints") {
        REQUIRE(run_cli(dir, "train --config cfg.json --data data/train.jsonl --out run").code == 0);
        auto bytes = read_file(dir.path / "run/adapter.lacs");
        bytes[0] = 'X'; // corrupt the magic
        write_file(dir.path / "run/corrupt.lacs", bytes);
        const auto r = run_cli(dir, "inspect --model run/corrupt.lacs");
        CHECK(r.code == 5);
        CHECK(r.err.find("magic") != std::string::npos);
        CHECK(run_cli(dir, "eval --model nope.lacs --data data/sts.jsonl --report rep.json").code ==
              5);
    }
}
