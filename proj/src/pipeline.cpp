#include "dialograph/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace dialograph {

using nlohmann::json;

EvalTarget resolve_eval_target(const RunConfig& run, const CorpusPools& train_pools) {
    EvalTarget target;
    if (!run.corpus_eval.empty()) {
        CorpusPools eval_pools = load_corpus(run.corpus_eval);
        target.dialogues = eval_pools.labeled;
        target.dialogues.insert(target.dialogues.end(), eval_pools.unlabeled.begin(),
                                eval_pools.unlabeled.end());
        if (!run.sidecar_eval.empty()) target.sidecar = load_sidecar(run.sidecar_eval);
    } else {
        target.dialogues = train_pools.labeled;
        if (!run.sidecar_train.empty()) target.sidecar = load_sidecar(run.sidecar_train);
    }
    std::sort(target.dialogues.begin(), target.dialogues.end(),
              [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });
    return target;
}

ModelConfig resolve_model_config(const RunConfig& run, const CorpusPools& pools) {
    ModelConfig cfg = run.model;
    if (cfg.input_dim == 0) cfg.input_dim = pools.feature_dim;
    if (cfg.num_classes == 0) cfg.num_classes = pools.num_classes;
    if (cfg.input_dim != pools.feature_dim)
        throw std::invalid_argument("model.input_dim=" + std::to_string(cfg.input_dim) +
                                    " does not match corpus d_h=" +
                                    std::to_string(pools.feature_dim));
    if (cfg.num_classes != pools.num_classes)
        throw std::invalid_argument("model.num_classes=" + std::to_string(cfg.num_classes) +
                                    " does not match corpus K=" +
                                    std::to_string(pools.num_classes));
    cfg.validate();
    return cfg;
}

std::unique_ptr<PredictionOracle> make_oracle(const RunConfig& run, const ModelParams& params,
                                              const ModelConfig& model_cfg,
                                              const GraphConfig& graph_cfg,
                                              const GroundTruth* sidecar) {
    if (run.backbone.oracle == "mrdan") {
        return std::make_unique<MrdanOracle>(params, model_cfg, graph_cfg);
    }
    if (run.backbone.oracle == "synthetic") {
        if (!sidecar)
            throw std::invalid_argument(
                "backbone.oracle=synthetic needs corpus.sidecar for ground truth");
        SyntheticOracleSpec spec;
        spec.confusion.assign(model_cfg.num_classes,
                              std::vector<double>(model_cfg.num_classes, 0.0));
        for (int c = 0; c < model_cfg.num_classes; ++c) spec.confusion[c][c] = 1.0;
        spec.confidence_concentration = run.backbone.synthetic_concentration;
        spec.seed = run.backbone.synthetic_seed;
        return std::make_unique<SyntheticOracle>(std::move(spec), *sidecar);
    }
    RemoteConfig remote;
    remote.endpoint = run.backbone.endpoint;
    remote.timeout_ms = run.backbone.timeout_ms;
    remote.bearer_token = run.backbone.bearer_token;
    remote.num_classes = model_cfg.num_classes;
    remote.max_in_flight = run.backbone.max_in_flight;
    return std::make_unique<RemoteOracle>(std::move(remote), run.backbone.prompt_template, params,
                                          model_cfg, graph_cfg);
}

std::string EpochRecord::to_json() const {
    json record;
    record["epoch"] = epoch;
    record["loss"] = loss;
    record["lr_last"] = lr_last;
    record["metrics"] = json::parse(metrics_to_json(metrics));
    record["labeled_pool"] = labeled_pool;
    record["unlabeled_pool"] = unlabeled_pool;
    return record.dump();
}

TrainOutcome run_training(const RunConfig& run, bool ssl_enabled) {
    if (run.corpus_train.empty())
        throw std::invalid_argument("corpus.train is not set (no training corpus path)");
    CorpusPools pools = load_corpus(run.corpus_train);

    TrainOutcome outcome;
    outcome.model_cfg = resolve_model_config(run, pools);
    run.graph.validate();
    run.train.validate();
    if (ssl_enabled) run.ssl.validate();

    std::optional<GroundTruth> train_sidecar;
    if (!run.sidecar_train.empty()) train_sidecar = load_sidecar(run.sidecar_train);
    EvalTarget eval_target = resolve_eval_target(run, pools);

    outcome.params = init_params(outcome.model_cfg, run.seed);

    TrainerState state;
    state.opt = OptimizerState::create(outcome.params);
    state.dropout_rng = Rng(mix_seed(run.seed, 0xd70));
    state.theta = run.graph.similarity_threshold;
    const auto batches = [&](size_t n) {
        return static_cast<long>((n + run.train.batch_size - 1) / run.train.batch_size);
    };

    std::optional<SslState> ssl_state;
    if (ssl_enabled) {
        std::vector<long> class_counts(outcome.model_cfg.num_classes, 0);
        for (const auto& d : pools.labeled) class_counts[*d.label - 1] += 1;
        ssl_state = SslState::create(run.ssl, outcome.model_cfg.num_classes, &class_counts);
    }

    GraphCache graphs;
    for (int epoch = 0; epoch < run.train.epochs; ++epoch) {
        // Re-horizon the schedule for the current pool size; identical to a
        // fixed horizon when no promotions happen, and keeps the cosine tail
        // aligned with the true end of training as the pool grows.
        state.total_steps = state.opt.step + static_cast<long>(run.train.epochs - epoch) *
                                                 batches(pools.labeled.size());
        rebuild_epoch_graphs(pools.labeled, outcome.params, outcome.model_cfg, run.graph, epoch,
                             state, graphs);
        EpochStats stats = train_epoch(pools, outcome.params, state, run.train, outcome.model_cfg,
                                       run.graph, epoch, graphs);

        GraphConfig live_graph = run.graph;
        live_graph.similarity_threshold = state.theta;
        Metrics metrics = evaluate(eval_target.dialogues,
                                   eval_target.sidecar ? &*eval_target.sidecar : nullptr,
                                   outcome.params, outcome.model_cfg, live_graph,
                                   outcome.model_cfg.num_classes, run.threads);
        outcome.final_metrics = metrics;

        EpochRecord record;
        record.epoch = epoch + 1;
        record.loss = stats.loss;
        record.lr_last = stats.lr_trace.empty() ? 0.0 : stats.lr_trace.back();
        record.metrics = std::move(metrics);
        record.labeled_pool = pools.labeled.size();
        record.unlabeled_pool = pools.unlabeled.size();
        outcome.epochs.push_back(std::move(record));

        if (ssl_enabled && (epoch + 1) % run.ssl.round_period == 0) {
            auto oracle = make_oracle(run, outcome.params, outcome.model_cfg, live_graph,
                                      train_sidecar ? &*train_sidecar : nullptr);
            RoundReport report =
                ssl_round(pools, *oracle, *ssl_state, run.ssl,
                          train_sidecar ? &*train_sidecar : nullptr, run.threads);
            outcome.rounds.push_back(std::move(report));
        }
    }
    return outcome;
}

} // namespace dialograph
