#pragma once

#include "dialograph/corpus.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dialograph {

// The four relation types of the dialogue multigraph. Codes are stable and
// index the per-type head partitions.
enum class EdgeType : int {
    Temporal = 0,
    Speaker = 1,
    CrossUtterance = 2,
    SelfLoop = 3,
};
inline constexpr int kNumEdgeTypes = 4;
const char* edge_type_name(EdgeType t);

// Directed edge source -> target, 0-based node indices. External dumps are
// 1-based to match utterance numbering.
struct Edge {
    int source = 0;
    int target = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct DialogueGraph {
    int num_nodes = 0;
    std::array<std::vector<Edge>, kNumEdgeTypes> edges;
    // typed_neighbors[t][i] = sorted list of sources j with (j -> i) of type t
    std::array<std::vector<std::vector<int>>, kNumEdgeTypes> typed_neighbors;
    std::vector<int> speaker_index;  // per-node index into the speaker embedding table
    double theta_used = 0.0;         // threshold applied when cross edges were built

    const std::vector<int>& neighbors(int node, EdgeType t) const {
        return typed_neighbors[static_cast<int>(t)][node];
    }
};

enum class ThetaMode { Fixed, EmaQuantile };

struct GraphConfig {
    int speaker_window = 3;          // k
    double similarity_threshold = 0.8;  // theta
    ThetaMode theta_mode = ThetaMode::Fixed;
    double theta_quantile = 0.5;     // q, ema-quantile mode only
    double theta_decay = 0.95;       // EMA decay, ema-quantile mode only
    bool rebuild_cross_edges_each_epoch = true;

    void validate() const;
};

// Speakers indexed by order of first appearance. Throws if the dialogue has
// more distinct speakers than table_size.
std::vector<int> assign_speaker_indices(const Dialogue& dialogue, int table_size);

// u.v / (|u||v|); 0 when either norm is below 1e-12.
double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

// Builds the typed multigraph from projected node features X (M x d rows).
DialogueGraph build_graph(const Dialogue& dialogue, const Eigen::MatrixXd& node_features,
                          const GraphConfig& cfg, int speaker_table_size);

// EMA-quantile threshold adaptation; no-op in Fixed mode or on an empty
// observation list. Returns the new theta clamped inside (-1, 1).
double update_theta(const GraphConfig& cfg, double theta,
                    const std::vector<double>& observed_similarities);

// External-interface JSON for `graph-dump` (1-based node indices).
std::string graph_to_json(const DialogueGraph& graph);

} // namespace dialograph
