#pragma once

#include "dialograph/corpus.hpp"
#include "dialograph/graph.hpp"
#include "dialograph/mrdan.hpp"

#include <Eigen/Dense>

#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dialograph {

// Any predictor that emits a class distribution Q_u for a dialogue: the
// MR-DAN classifier, the synthetic test oracle, or a remote LLM service.
class PredictionOracle {
public:
    virtual ~PredictionOracle() = default;
    // Returns a distribution over K classes (sums to 1 within 1e-9). Throws
    // OracleError on failure.
    virtual Eigen::VectorXd predict(const Dialogue& dialogue) const = 0;
    virtual int num_classes() const = 0;
};

struct OracleError : std::runtime_error {
    enum class Kind { Timeout, MalformedResponse, NotADistribution, Transport, Other };
    Kind kind;
    OracleError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// --- prompt composition -------------------------------------------------

// Template text split around the <graph> and <audio> markers.
struct PromptSegment {
    enum class Kind { Text, GraphSlot, AudioSlot };
    Kind kind;
    std::string text;  // Kind::Text only
};

struct PromptInput {
    std::string instruction_text;            // full template with markers
    Eigen::VectorXd graph_feature_slot;      // g
    Eigen::VectorXd audio_feature_slot;      // G_i
    std::vector<PromptSegment> placeholder_layout;
};

// Splits the template around "<graph>" / "<audio>" (each required exactly
// once) and fills the slots. Throws std::invalid_argument otherwise.
PromptInput assemble_prompt(const std::string& template_text, const Eigen::VectorXd& graph_feature,
                            const Eigen::VectorXd& audio_feature);

// Re-renders the layout with slot placeholders; inverse of the split.
std::string render_prompt_template(const PromptInput& prompt);

// --- oracles --------------------------------------------------------------

class MrdanOracle : public PredictionOracle {
public:
    MrdanOracle(const ModelParams& params, ModelConfig cfg, GraphConfig graph_cfg)
        : params_(&params), cfg_(std::move(cfg)), graph_cfg_(std::move(graph_cfg)) {}
    Eigen::VectorXd predict(const Dialogue& dialogue) const override;
    int num_classes() const override { return cfg_.num_classes; }

private:
    const ModelParams* params_;  // not owned; callers keep params alive
    ModelConfig cfg_;
    GraphConfig graph_cfg_;
};

struct SyntheticOracleSpec {
    std::vector<std::vector<double>> confusion;  // K x K row-stochastic
    double confidence_concentration = 8.0;
    uint64_t seed = 0;

    void validate() const;
};

// Draws the emitted class from the confusion row of the dialogue's true
// label, then emits a distribution peaked there. Deterministic per
// (spec.seed, dialogue id) so call order and concurrency don't matter.
class SyntheticOracle : public PredictionOracle {
public:
    SyntheticOracle(SyntheticOracleSpec spec, GroundTruth truth);
    Eigen::VectorXd predict(const Dialogue& dialogue) const override;
    int num_classes() const override { return static_cast<int>(spec_.confusion.size()); }

private:
    SyntheticOracleSpec spec_;
    GroundTruth truth_;
};

struct RemoteConfig {
    std::string endpoint;  // e.g. http://127.0.0.1:8400/predict
    int timeout_ms = 5000;
    std::string bearer_token;  // optional Authorization passthrough
    int num_classes = 0;
    int max_in_flight = 4;  // concurrent request cap
};

// POSTs the serialized PromptInput, parses {"probs": [...]}, renormalizes
// when |sum-1| <= 1e-3 and rejects otherwise.
Eigen::VectorXd remote_predict(const RemoteConfig& remote, const PromptInput& prompt);

// Caps concurrent remote calls at a fixed limit.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int limit) : available_(limit < 1 ? 1 : limit) {}
    void acquire();
    void release();

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

// Remote oracle: assembles the prompt from the MR-DAN pooled feature and the
// dialogue-level feature, then calls remote_predict.
class RemoteOracle : public PredictionOracle {
public:
    RemoteOracle(RemoteConfig remote, std::string template_text, const ModelParams& params,
                 ModelConfig cfg, GraphConfig graph_cfg)
        : remote_(std::move(remote)),
          template_(std::move(template_text)),
          params_(&params),
          cfg_(std::move(cfg)),
          graph_cfg_(std::move(graph_cfg)),
          gate_(std::make_unique<ConcurrencyGate>(remote_.max_in_flight)) {}
    Eigen::VectorXd predict(const Dialogue& dialogue) const override;
    int num_classes() const override { return remote_.num_classes; }

private:
    RemoteConfig remote_;
    std::string template_;
    const ModelParams* params_;
    ModelConfig cfg_;
    GraphConfig graph_cfg_;
    std::unique_ptr<ConcurrencyGate> gate_;
};

} // namespace dialograph
