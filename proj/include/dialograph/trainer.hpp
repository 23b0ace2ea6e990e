#pragma once

#include "dialograph/corpus.hpp"
#include "dialograph/mrdan.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dialograph {

struct OptimizerState {
    ModelParams first_moment;
    ModelParams second_moment;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    static OptimizerState create(const ModelParams& params);
};

struct TrainConfig {
    double base_lr = 1e-3;  // sized for the small network; large backbones want ~2e-5
    int epochs = 20;
    int batch_size = 16;
    double warmup_fraction = 0.10;
    uint64_t seed = 0;
    double pseudo_label_weight = 1.0;

    void validate() const;
};

struct Metrics {
    double accuracy = 0.0;
    std::vector<double> precision;  // per class
    std::vector<double> recall;
    std::vector<double> f1;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::vector<std::vector<long>> confusion;  // [true][predicted]
    long total = 0;
};

// -log Q_c with Q_c clamped at 1e-12; label is 1-based.
double cross_entropy(const Eigen::VectorXd& probs, int label);

// dL/dQ for the clamped cross entropy above.
Eigen::VectorXd cross_entropy_grad(const Eigen::VectorXd& probs, int label);

// Linear ramp 0 -> base over ceil(warmup_fraction * total) steps, then cosine
// decay to 0 at total_steps.
double cosine_warmup_lr(long step, long total_steps, double base_lr, double warmup_fraction);

// Decoupled weight-decay adaptive update, applied in place. Throws
// std::runtime_error naming the tensor when a gradient is non-finite.
void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                    double lr);

// Per-dialogue graphs frozen for an epoch (keyed by dialogue id).
using GraphCache = std::map<std::string, DialogueGraph>;

struct EpochStats {
    double loss = 0.0;
    std::vector<double> lr_trace;  // one entry per optimizer step
};

struct TrainerState {
    OptimizerState opt;
    long total_steps = 0;  // schedule horizon
    Rng dropout_rng{0};
    double theta = 0.8;  // live threshold when theta adaptation is on
};

// Rebuilds epoch graphs from current params (honoring
// rebuild_cross_edges_each_epoch) and runs EMA-quantile theta adaptation when
// configured. Pass epoch 0 graphs in/out through `graphs`.
void rebuild_epoch_graphs(const std::vector<Dialogue>& dialogues, const ModelParams& params,
                          const ModelConfig& cfg, const GraphConfig& graph_cfg, int epoch,
                          TrainerState& state, GraphCache& graphs);

// One pass over the labeled pool in seeded-shuffled order; batch-mean loss,
// AdamW step per batch. Deterministic for a fixed seed.
EpochStats train_epoch(const CorpusPools& pools, ModelParams& params, TrainerState& state,
                       const TrainConfig& cfg, const ModelConfig& model_cfg,
                       const GraphConfig& graph_cfg, int epoch, const GraphCache& graphs);

// Pure aggregation over (truth, predicted) pairs, both 1-based.
Metrics metrics_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 int num_classes);

// Argmax predictions vs ground truth (dialogue label, else sidecar).
Metrics evaluate(const std::vector<Dialogue>& dialogues, const GroundTruth* sidecar,
                 const ModelParams& params, const ModelConfig& cfg, const GraphConfig& graph_cfg,
                 int num_classes, int threads = 1);

std::string metrics_to_json(const Metrics& m);

} // namespace dialograph
