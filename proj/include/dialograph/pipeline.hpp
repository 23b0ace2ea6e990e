#pragma once

#include "dialograph/backbone.hpp"
#include "dialograph/config.hpp"
#include "dialograph/corpus.hpp"
#include "dialograph/mrdan.hpp"
#include "dialograph/ssl.hpp"
#include "dialograph/trainer.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dialograph {

struct EvalTarget {
    std::vector<Dialogue> dialogues;
    std::optional<GroundTruth> sidecar;
};

// Eval set: the eval corpus when configured, otherwise the labeled training
// pool. Unlabeled eval records need the sidecar for truth.
EvalTarget resolve_eval_target(const RunConfig& run, const CorpusPools& train_pools);

// Fills input_dim / num_classes from the corpus header when left at 0 and
// cross-checks them otherwise.
ModelConfig resolve_model_config(const RunConfig& run, const CorpusPools& pools);

std::unique_ptr<PredictionOracle> make_oracle(const RunConfig& run, const ModelParams& params,
                                              const ModelConfig& model_cfg,
                                              const GraphConfig& graph_cfg,
                                              const GroundTruth* sidecar);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double loss = 0.0;
    double lr_last = 0.0;
    Metrics metrics;
    size_t labeled_pool = 0;
    size_t unlabeled_pool = 0;

    std::string to_json() const;
};

struct TrainOutcome {
    ModelParams params;
    ModelConfig model_cfg;
    Metrics final_metrics;
    std::vector<EpochRecord> epochs;
    std::vector<RoundReport> rounds;  // ssl runs only
};

// The full supervised (and optionally semi-supervised) experiment: epoch
// loop with per-epoch graph rebuilds, plus a pseudo-labeling round every
// ssl.round_period epochs when ssl_enabled.
TrainOutcome run_training(const RunConfig& run, bool ssl_enabled);

} // namespace dialograph
