#include "dialograph/backbone.hpp"
#include "dialograph/checkpoint.hpp"
#include "dialograph/config.hpp"
#include "dialograph/corpus.hpp"
#include "dialograph/graph.hpp"
#include "dialograph/mrdan.hpp"
#include "dialograph/pipeline.hpp"
#include "dialograph/ssl.hpp"
#include "dialograph/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dialograph;

namespace {

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out.good()) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    for (const auto& line : lines) out << line << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out.good()) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << text;
}

int cmd_train_or_ssl(const RunConfig& run, bool ssl_enabled) {
    fs::create_directories(run.out_dir);
    TrainOutcome outcome = run_training(run, ssl_enabled);

    save_checkpoint(outcome.params, outcome.model_cfg,
                    (fs::path(run.out_dir) / "model.ckpt").string());
    std::vector<std::string> log_lines;
    for (const auto& rec : outcome.epochs) log_lines.push_back(rec.to_json());
    write_lines(fs::path(run.out_dir) / "train_log.jsonl", log_lines);
    write_text(fs::path(run.out_dir) / "metrics.json",
               metrics_to_json(outcome.final_metrics) + "\n");
    if (ssl_enabled) {
        std::vector<std::string> round_lines;
        for (const auto& r : outcome.rounds) round_lines.push_back(r.to_json());
        write_lines(fs::path(run.out_dir) / "ssl_rounds.jsonl", round_lines);
    }

    std::cout << metrics_to_json(outcome.final_metrics) << "\n";
    return 0;
}

int cmd_eval(const RunConfig& run) {
    if (run.checkpoint.empty())
        throw std::invalid_argument("eval needs run.checkpoint (or --checkpoint)");
    const std::string corpus_path =
        !run.corpus_eval.empty() ? run.corpus_eval : run.corpus_train;
    if (corpus_path.empty())
        throw std::invalid_argument("eval needs corpus.eval or corpus.train");
    CorpusPools pools = load_corpus(corpus_path);

    std::optional<ModelConfig> expected;
    if (run.model_keys_set) expected = resolve_model_config(run, pools);
    LoadedCheckpoint ckpt = load_checkpoint(run.checkpoint, expected);

    std::vector<Dialogue> dialogues = pools.labeled;
    dialogues.insert(dialogues.end(), pools.unlabeled.begin(), pools.unlabeled.end());
    std::sort(dialogues.begin(), dialogues.end(),
              [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });

    std::optional<GroundTruth> sidecar;
    const std::string sidecar_path =
        !run.sidecar_eval.empty() ? run.sidecar_eval : run.sidecar_train;
    if (!sidecar_path.empty()) sidecar = load_sidecar(sidecar_path);

    Metrics metrics = evaluate(dialogues, sidecar ? &*sidecar : nullptr, ckpt.params, ckpt.config,
                               run.graph, ckpt.config.num_classes, run.threads);
    std::cout << metrics_to_json(metrics) << "\n";
    if (!run.out_dir.empty()) {
        fs::create_directories(run.out_dir);
        write_text(fs::path(run.out_dir) / "metrics.json", metrics_to_json(metrics) + "\n");
    }
    return 0;
}

int cmd_gen_synth(const RunConfig& run) {
    fs::create_directories(run.out_dir);
    SynthResult result = generate_synthetic(run.synth);
    save_corpus(result.pools, (fs::path(run.out_dir) / "corpus.jsonl").string());
    save_sidecar(result.truth, (fs::path(run.out_dir) / "truth.jsonl").string());
    json summary;
    summary["labeled"] = result.pools.labeled.size();
    summary["unlabeled"] = result.pools.unlabeled.size();
    summary["num_classes"] = result.pools.num_classes;
    summary["feature_dim"] = result.pools.feature_dim;
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_graph_dump(const RunConfig& run, const std::string& dialogue_id) {
    if (run.corpus_train.empty()) throw std::invalid_argument("graph-dump needs corpus.train");
    CorpusPools pools = load_corpus(run.corpus_train);
    const Dialogue* dialogue = find_dialogue(pools, dialogue_id);
    if (!dialogue)
        throw std::invalid_argument("graph-dump: unknown dialogue id '" + dialogue_id + "'");

    ModelConfig model_cfg = resolve_model_config(run, pools);
    ModelParams params = run.checkpoint.empty()
                             ? init_params(model_cfg, run.seed)
                             : load_checkpoint(run.checkpoint, model_cfg).params;

    auto speaker_idx = assign_speaker_indices(*dialogue, model_cfg.num_speaker_roles);
    Eigen::MatrixXd x0 = init_node_features(*dialogue, speaker_idx, params, model_cfg);
    DialogueGraph graph = build_graph(*dialogue, x0, run.graph, model_cfg.num_speaker_roles);
    std::cout << graph_to_json(graph) << "\n";
    return 0;
}

int cmd_sweep(const RunConfig& run_in) {
    RunConfig run = run_in;
    if (run.sweep.parameter.empty())
        throw std::invalid_argument("sweep needs sweep.parameter (and optionally sweep.values)");
    if (run.sweep.values.empty()) {
        if (run.sweep.parameter == "speaker_window") run.sweep.values = {2, 3, 4, 5};
        else if (run.sweep.parameter == "similarity_threshold")
            run.sweep.values = {0.6, 0.7, 0.8, 0.9};
        else if (run.sweep.parameter == "num_heads") run.sweep.values = {4, 8, 12, 16};
    }
    ModelConfig probe = run.model;
    if (probe.model_dim == 0) probe.model_dim = 64;
    run.sweep.validate(probe);

    std::vector<std::string> rows;
    rows.push_back("parameter,value,seed,accuracy,macro_f1,weighted_f1");
    for (double value : run.sweep.values) {
        for (int rep = 0; rep < run.sweep.repetitions; ++rep) {
            RunConfig variant = run;
            variant.seed = run.seed + static_cast<uint64_t>(rep);
            variant.train.seed = variant.seed;
            if (run.sweep.parameter == "speaker_window")
                variant.graph.speaker_window = static_cast<int>(value);
            else if (run.sweep.parameter == "similarity_threshold")
                variant.graph.similarity_threshold = value;
            else
                variant.model.num_heads = static_cast<int>(value);

            TrainOutcome outcome = run_training(variant, run.sweep.mode == "ssl");
            std::ostringstream row;
            row << run.sweep.parameter << "," << value << "," << variant.seed << ","
                << outcome.final_metrics.accuracy << "," << outcome.final_metrics.macro_f1 << ","
                << outcome.final_metrics.weighted_f1;
            rows.push_back(row.str());
        }
    }
    fs::create_directories(run.out_dir);
    write_lines(fs::path(run.out_dir) / "sweep.csv", rows);
    for (const auto& r : rows) std::cout << r << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dialograph: relational dialogue-graph intent classifier with adaptive "
                 "semi-supervised training"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed_flag;
    std::optional<int> threads_flag;
    std::optional<std::string> out_flag;
    std::optional<std::string> checkpoint_flag;
    app.add_option("--config", config_path, "config file (key = value lines)");
    app.add_option("--set", overrides, "override a config key, e.g. --set train.epochs=5")
        ->take_all();
    app.add_option("--seed", seed_flag, "run seed");
    app.add_option("--threads", threads_flag, "worker cap; 1 = reproducibility mode");
    app.add_option("--out", out_flag, "output directory");
    app.add_option("--checkpoint", checkpoint_flag, "checkpoint manifest path");

    auto* train_cmd = app.add_subcommand("train", "supervised training");
    auto* ssl_cmd = app.add_subcommand("ssl", "training with pseudo-labeling rounds");
    std::string threshold_mode_flag;
    bool no_mrdan = false;
    ssl_cmd->add_option("--threshold-mode", threshold_mode_flag,
                        "class_specific (default) or global_only");
    ssl_cmd->add_flag("--no-mrdan", no_mrdan, "replace MR-DAN layers with mean pooling");
    train_cmd->add_flag("--no-mrdan", no_mrdan, "replace MR-DAN layers with mean pooling");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    auto* gen_cmd = app.add_subcommand("gen-synth", "generate a synthetic corpus + sidecar");
    auto* dump_cmd = app.add_subcommand("graph-dump", "emit one dialogue's graph as JSON");
    std::string dump_id;
    dump_cmd->add_option("--dialogue-id", dump_id, "dialogue to dump")->required();
    auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter sensitivity sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
            return app.exit(e);
        std::cerr << e.what() << "\n";
        return 1;
    }

    RunConfig run;
    try {
        run = resolve_config(config_path, overrides);
        if (seed_flag) {
            run.seed = *seed_flag;
            run.train.seed = *seed_flag;
        } else {
            run.train.seed = run.seed;
        }
        if (threads_flag) run.threads = *threads_flag;
        if (out_flag) run.out_dir = *out_flag;
        if (checkpoint_flag) run.checkpoint = *checkpoint_flag;
        if (!threshold_mode_flag.empty()) {
            if (threshold_mode_flag == "class_specific")
                run.ssl.threshold_mode = ThresholdMode::ClassSpecific;
            else if (threshold_mode_flag == "global_only")
                run.ssl.threshold_mode = ThresholdMode::GlobalOnly;
            else
                throw std::invalid_argument("--threshold-mode must be class_specific or "
                                            "global_only");
        }
        if (no_mrdan) run.model.num_layers = 0;
        if (run.threads < 1) throw std::invalid_argument("--threads must be >= 1");
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (train_cmd->parsed()) return cmd_train_or_ssl(run, false);
        if (ssl_cmd->parsed()) return cmd_train_or_ssl(run, true);
        if (eval_cmd->parsed()) return cmd_eval(run);
        if (gen_cmd->parsed()) return cmd_gen_synth(run);
        if (dump_cmd->parsed()) return cmd_graph_dump(run, dump_id);
        if (sweep_cmd->parsed()) return cmd_sweep(run);
        std::cerr << "no subcommand given\n";
        return 1;
    } catch (const CorpusError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
