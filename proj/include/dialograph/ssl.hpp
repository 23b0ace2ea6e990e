#pragma once

#include "dialograph/backbone.hpp"
#include "dialograph/corpus.hpp"

#include <Eigen/Dense>

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dialograph {

enum class ThresholdMode { ClassSpecific, GlobalOnly };
enum class ClassDistInit { Uniform, LabeledFrequency };

struct SslConfig {
    double ema_decay = 0.95;      // lambda
    double initial_tau = 0.9;
    double margin_epsilon = 0.06; // epsilon
    double delta = 1e-4;
    double top_percent = 0.10;    // P
    int min_count = 1;
    int round_period = 5;         // epochs between pseudo-labeling rounds
    int batch_size = 64;          // chunk of D_U per EMA update
    ThresholdMode threshold_mode = ThresholdMode::ClassSpecific;
    ClassDistInit class_dist_init = ClassDistInit::Uniform;
    bool rescore_promoted = false;  // promoted labels are permanent by default

    void validate() const;
};

struct RoundHistoryEntry {
    double tau;
    Eigen::VectorXd class_dist;
    std::vector<long> promoted_per_class;
};

struct SslState {
    double tau = 0.9;
    Eigen::VectorXd class_dist;  // p-tilde, length K
    double delta = 1e-4;
    long round = 0;
    std::vector<RoundHistoryEntry> history;
    std::set<std::string> promoted_ids;

    static SslState create(const SslConfig& cfg, int num_classes,
                           const std::vector<long>* labeled_class_counts = nullptr);
};

struct PseudoLabel {
    std::string dialogue_id;
    int label = 0;           // c*, 1-based
    double confidence = 0.0; // q_{u,c*}
    double margin = 0.0;     // q_{u,c*} - tau_{c*}
};

struct RoundReport {
    long round = 0;
    double tau = 0.0;
    std::vector<double> class_dist;
    std::vector<double> class_thresholds;
    std::vector<long> candidates_per_class;
    std::vector<long> promoted_per_class;
    std::optional<std::vector<double>> purity_per_class;  // needs a sidecar
    double mean_entropy = 0.0;  // diagnostic over this round's predictions
    long relabeled = 0;  // rescore_promoted mode only
    std::vector<std::pair<std::string, std::string>> skipped;  // (id, error)

    std::string to_json() const;
};

// EMA updates over a batch of predictions; both are no-ops on an
// empty batch and clamp/validate per the stability contract.
void ema_update_tau(SslState& state, const std::vector<Eigen::VectorXd>& batch, double ema_decay);
void ema_update_class_dist(SslState& state, const std::vector<Eigen::VectorXd>& batch,
                           double ema_decay);

// tau_c = tau * p_c / (max_k p_k + delta), clamped to [delta, 1-delta].
Eigen::VectorXd class_thresholds(const SslState& state);

// Conditions (a)-(c): threshold exceedance, maximum-margin class, margin
// tolerance. Ties on the argmax go to the smallest class index.
std::optional<PseudoLabel> delta_margin_filter(const Eigen::VectorXd& probs,
                                               const Eigen::VectorXd& tau_c, double epsilon);

// Per-class confidence ranking; k_c = max(floor(P * group), min(min_count,
// group)). Ties break by ascending dialogue id.
std::vector<PseudoLabel> class_balanced_topk(const std::vector<PseudoLabel>& candidates,
                                             int num_classes, double top_percent, int min_count);

// One full pseudo-labeling round: batched EMA pass over D_U in id order,
// thresholding, margin filter, balanced selection, promotion into D_L.
RoundReport ssl_round(CorpusPools& pools, const PredictionOracle& oracle, SslState& state,
                      const SslConfig& cfg, const GroundTruth* sidecar = nullptr,
                      int threads = 1);

} // namespace dialograph
