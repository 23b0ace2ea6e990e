#include "dialograph/graph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace dialograph {

const char* edge_type_name(EdgeType t) {
    switch (t) {
        case EdgeType::Temporal: return "temporal";
        case EdgeType::Speaker: return "speaker";
        case EdgeType::CrossUtterance: return "cross";
        case EdgeType::SelfLoop: return "self";
    }
    return "?";
}

void GraphConfig::validate() const {
    if (speaker_window < 1) throw std::invalid_argument("graph: speaker_window must be >= 1");
    if (!std::isfinite(similarity_threshold))
        throw std::invalid_argument("graph: similarity_threshold must be finite");
    if (theta_mode == ThetaMode::EmaQuantile) {
        if (theta_quantile < 0.0 || theta_quantile > 1.0)
            throw std::invalid_argument("graph: theta_quantile must be in [0,1]");
        if (theta_decay < 0.0 || theta_decay > 1.0)
            throw std::invalid_argument("graph: theta_decay must be in [0,1]");
    }
}

std::vector<int> assign_speaker_indices(const Dialogue& dialogue, int table_size) {
    std::vector<int> idx;
    idx.reserve(dialogue.utterances.size());
    std::map<std::string, int> seen;
    for (const auto& u : dialogue.utterances) {
        auto [it, inserted] = seen.emplace(u.speaker, static_cast<int>(seen.size()));
        if (inserted && static_cast<int>(seen.size()) > table_size) {
            throw std::invalid_argument("dialogue '" + dialogue.id + "' has more than " +
                                        std::to_string(table_size) + " distinct speakers");
        }
        idx.push_back(it->second);
    }
    return idx;
}

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine_similarity: dimension mismatch");
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu < 1e-12 || nv < 1e-12) return 0.0;
    return u.dot(v) / (nu * nv);
}

DialogueGraph build_graph(const Dialogue& dialogue, const Eigen::MatrixXd& node_features,
                          const GraphConfig& cfg, int speaker_table_size) {
    cfg.validate();
    const int m = static_cast<int>(dialogue.utterances.size());
    if (node_features.rows() != m)
        throw std::invalid_argument("build_graph: node_features row count != utterance count");

    DialogueGraph g;
    g.num_nodes = m;
    g.speaker_index = assign_speaker_indices(dialogue, speaker_table_size);
    g.theta_used = cfg.similarity_threshold;
    for (auto& nb : g.typed_neighbors) nb.assign(m, {});

    auto add = [&](EdgeType t, int src, int dst) {
        g.edges[static_cast<int>(t)].push_back({src, dst});
        g.typed_neighbors[static_cast<int>(t)][dst].push_back(src);
    };

    for (int i = 0; i < m; ++i) {
        // self loop
        add(EdgeType::SelfLoop, i, i);
        // temporal: predecessor -> i
        if (i > 0) add(EdgeType::Temporal, i - 1, i);
        // speaker: up to k most recent earlier same-speaker nodes
        int found = 0;
        for (int j = i - 1; j >= 0 && found < cfg.speaker_window; --j) {
            if (dialogue.utterances[j].speaker == dialogue.utterances[i].speaker) {
                add(EdgeType::Speaker, j, i);
                ++found;
            }
        }
        // cross-utterance: immediate predecessor plus semantic similarity > theta
        if (i > 0) add(EdgeType::CrossUtterance, i - 1, i);
        for (int j = 0; j < i - 1; ++j) {
            double sim = cosine_similarity(node_features.row(j).transpose(),
                                           node_features.row(i).transpose());
            if (sim > cfg.similarity_threshold) add(EdgeType::CrossUtterance, j, i);
        }
    }

    for (auto& per_type : g.typed_neighbors)
        for (auto& nb : per_type) std::sort(nb.begin(), nb.end());
    for (auto& list : g.edges) std::sort(list.begin(), list.end());
    return g;
}

double update_theta(const GraphConfig& cfg, double theta,
                    const std::vector<double>& observed_similarities) {
    if (cfg.theta_mode != ThetaMode::EmaQuantile) return theta;
    if (observed_similarities.empty()) return theta;

    std::vector<double> sorted = observed_similarities;
    std::sort(sorted.begin(), sorted.end());
    // linear-interpolation quantile (type 7)
    const double pos = cfg.theta_quantile * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const auto hi = static_cast<size_t>(std::ceil(pos));
    const double q = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);

    double next = cfg.theta_decay * theta + (1.0 - cfg.theta_decay) * q;
    const double eps = 1e-9;
    return std::clamp(next, -1.0 + eps, 1.0 - eps);
}

std::string graph_to_json(const DialogueGraph& graph) {
    nlohmann::json out;
    out["M"] = graph.num_nodes;
    nlohmann::json edges;
    for (int t = 0; t < kNumEdgeTypes; ++t) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& e : graph.edges[t])
            list.push_back({e.source + 1, e.target + 1});
        edges[edge_type_name(static_cast<EdgeType>(t))] = std::move(list);
    }
    out["edges"] = std::move(edges);
    out["theta_used"] = graph.theta_used;
    return out.dump();
}

} // namespace dialograph
