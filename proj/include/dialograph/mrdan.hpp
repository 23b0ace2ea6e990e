#pragma once

#include "dialograph/corpus.hpp"
#include "dialograph/graph.hpp"
#include "dialograph/rng.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dialograph {

struct ModelConfig {
    int input_dim = 0;         // d_h, from the corpus
    int speaker_dim = 16;      // d_s
    int model_dim = 64;        // d
    int num_heads = 8;         // H, split evenly across the 4 edge types
    int num_layers = 3;        // L; 0 drops the attention layers entirely
    int num_classes = 0;       // K
    int num_speaker_roles = 2; // speaker embedding table size
    double dropout = 0.1;
    double layernorm_eps = 1e-5;

    int head_dim() const { return model_dim / num_heads; }
    int heads_per_type() const { return num_heads / kNumEdgeTypes; }
    void validate() const;
};

struct LayerParams {
    std::vector<Eigen::MatrixXd> w_query;  // per head, head_dim x model_dim
    std::vector<Eigen::MatrixXd> w_key;
    std::vector<Eigen::MatrixXd> w_value;
    Eigen::MatrixXd w_out;                 // model_dim x model_dim
    Eigen::VectorXd ln_gain;               // model_dim
    Eigen::VectorXd ln_bias;               // model_dim
};

struct ModelParams {
    Eigen::MatrixXd w_proj;        // (d_h + d_s) x model_dim
    Eigen::MatrixXd speaker_table; // num_speaker_roles x d_s
    std::vector<LayerParams> layers;
    Eigen::MatrixXd w_cls;         // K x model_dim
    Eigen::VectorXd b_cls;         // K
};

// Flat view over every tensor; drives init, the optimizer, checkpoints and
// finite-difference sweeps in one enumeration order.
struct TensorRef {
    std::string name;
    double* data;
    long rows;
    long cols;  // 1 for vectors
    long size() const { return rows * cols; }
};
std::vector<TensorRef> tensor_refs(ModelParams& params);

ModelParams init_params(const ModelConfig& cfg, uint64_t seed);
ModelParams zeros_like(const ModelParams& params);

enum class RunMode { Train, Eval };

struct LayerCache {
    Eigen::MatrixXd input;  // X^(l), M x d rows
    // alpha[i][t] is (heads_per_type x |N_t(i)|); empty when N_t(i) is empty
    std::vector<std::array<Eigen::MatrixXd, kNumEdgeTypes>> alpha;
    Eigen::MatrixXd concat;    // per-node concatenated head outputs, M x d
    Eigen::MatrixXd drop_mask; // inverted-dropout mask applied to W_O output
    Eigen::MatrixXd pre_norm;  // residual sums before layer norm, M x d
};

struct ForwardCache {
    DialogueGraph graph;
    Eigen::MatrixXd concat_input;  // M x (d_h + d_s), rows [h_i ; e_{s_i}]
    std::vector<LayerCache> layers;
    Eigen::MatrixXd final_nodes;   // X^(L)
    Eigen::VectorXd pooled;        // g
    Eigen::VectorXd probs;         // Q
};

struct ForwardResult {
    Eigen::VectorXd probs;
    Eigen::VectorXd pooled;  // g, the graph-level dialogue feature
    ForwardCache cache;      // populated in Train mode only
};

// Node feature initialization: row i is W_p^T [h_i ; e_{s_i}] (no bias).
Eigen::MatrixXd init_node_features(const Dialogue& dialogue, const std::vector<int>& speaker_idx,
                                   const ModelParams& params, const ModelConfig& cfg);

// Raw scaled dot-product scores (W_Q x_i)^T (W_K x_j) / sqrt(d_k) for one head.
Eigen::VectorXd attention_scores(const Eigen::VectorXd& x_i,
                                 const std::vector<Eigen::VectorXd>& neighbors,
                                 const Eigen::MatrixXd& w_query, const Eigen::MatrixXd& w_key);

// One MR-DAN layer over all nodes. cache may be null in Eval mode.
Eigen::MatrixXd layer_forward(const Eigen::MatrixXd& nodes, const DialogueGraph& graph,
                              const LayerParams& layer, const ModelConfig& cfg, RunMode mode,
                              Rng* rng, LayerCache* cache);

Eigen::VectorXd mean_pool(const Eigen::MatrixXd& nodes);

// softmax(W_cls g + b)
Eigen::VectorXd classify(const Eigen::VectorXd& pooled, const ModelParams& params);

// Full pipeline with a caller-supplied (typically epoch-frozen) graph.
ForwardResult forward_with_graph(const Dialogue& dialogue, const DialogueGraph& graph,
                                 const ModelParams& params, const ModelConfig& cfg, RunMode mode,
                                 Rng* rng = nullptr);

// Full pipeline; builds the graph from the projected node features.
ForwardResult forward(const Dialogue& dialogue, const ModelParams& params, const ModelConfig& cfg,
                      const GraphConfig& graph_cfg, RunMode mode, Rng* rng = nullptr);

// Exact reverse-mode gradients of a scalar loss given dL/dQ. Requires a
// Train-mode cache.
ModelParams backward(const ForwardCache& cache, const Eigen::VectorXd& grad_probs,
                     const ModelParams& params, const ModelConfig& cfg);

// In-place axpy over every tensor: dst += scale * src.
void accumulate(ModelParams& dst, const ModelParams& src, double scale);

} // namespace dialograph
