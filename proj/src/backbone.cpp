#include "dialograph/backbone.hpp"

#include "dialograph/rng.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dialograph {

namespace {

size_t count_occurrences(const std::string& text, const std::string& marker) {
    size_t count = 0;
    size_t pos = 0;
    while ((pos = text.find(marker, pos)) != std::string::npos) {
        ++count;
        pos += marker.size();
    }
    return count;
}

} // namespace

PromptInput assemble_prompt(const std::string& template_text, const Eigen::VectorXd& graph_feature,
                            const Eigen::VectorXd& audio_feature) {
    static const std::string kGraph = "<graph>";
    static const std::string kAudio = "<audio>";
    if (count_occurrences(template_text, kGraph) != 1)
        throw std::invalid_argument("prompt template must contain '<graph>' exactly once");
    if (count_occurrences(template_text, kAudio) != 1)
        throw std::invalid_argument("prompt template must contain '<audio>' exactly once");
    for (long i = 0; i < graph_feature.size(); ++i)
        if (!std::isfinite(graph_feature[i]))
            throw std::invalid_argument("graph feature has a non-finite entry");
    for (long i = 0; i < audio_feature.size(); ++i)
        if (!std::isfinite(audio_feature[i]))
            throw std::invalid_argument("audio feature has a non-finite entry");

    PromptInput prompt;
    prompt.instruction_text = template_text;
    prompt.graph_feature_slot = graph_feature;
    prompt.audio_feature_slot = audio_feature;

    size_t pos = 0;
    while (pos < template_text.size()) {
        const size_t g = template_text.find(kGraph, pos);
        const size_t a = template_text.find(kAudio, pos);
        const size_t next = std::min(g, a);
        if (next == std::string::npos) {
            prompt.placeholder_layout.push_back(
                {PromptSegment::Kind::Text, template_text.substr(pos)});
            break;
        }
        if (next > pos) {
            prompt.placeholder_layout.push_back(
                {PromptSegment::Kind::Text, template_text.substr(pos, next - pos)});
        }
        if (next == g) {
            prompt.placeholder_layout.push_back({PromptSegment::Kind::GraphSlot, ""});
            pos = next + kGraph.size();
        } else {
            prompt.placeholder_layout.push_back({PromptSegment::Kind::AudioSlot, ""});
            pos = next + kAudio.size();
        }
    }
    return prompt;
}

std::string render_prompt_template(const PromptInput& prompt) {
    std::string out;
    for (const auto& seg : prompt.placeholder_layout) {
        switch (seg.kind) {
            case PromptSegment::Kind::Text: out += seg.text; break;
            case PromptSegment::Kind::GraphSlot: out += "<graph>"; break;
            case PromptSegment::Kind::AudioSlot: out += "<audio>"; break;
        }
    }
    return out;
}

Eigen::VectorXd MrdanOracle::predict(const Dialogue& dialogue) const {
    return forward(dialogue, *params_, cfg_, graph_cfg_, RunMode::Eval).probs;
}

void SyntheticOracleSpec::validate() const {
    if (confusion.empty()) throw std::invalid_argument("synthetic oracle: empty confusion matrix");
    const size_t k = confusion.size();
    for (const auto& row : confusion) {
        if (row.size() != k)
            throw std::invalid_argument("synthetic oracle: confusion matrix must be square");
        double sum = 0.0;
        for (double p : row) {
            if (p < 0.0) throw std::invalid_argument("synthetic oracle: negative confusion entry");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("synthetic oracle: confusion row does not sum to 1");
    }
    if (!(confidence_concentration > 0.0) || !std::isfinite(confidence_concentration))
        throw std::invalid_argument("synthetic oracle: concentration must be finite and > 0");
}

SyntheticOracle::SyntheticOracle(SyntheticOracleSpec spec, GroundTruth truth)
    : spec_(std::move(spec)), truth_(std::move(truth)) {
    spec_.validate();
}

Eigen::VectorXd SyntheticOracle::predict(const Dialogue& dialogue) const {
    auto it = truth_.find(dialogue.id);
    if (it == truth_.end())
        throw OracleError(OracleError::Kind::Other,
                          "synthetic oracle: no ground truth for dialogue '" + dialogue.id + "'");
    const int k = num_classes();
    const int true_label = it->second;
    if (true_label < 1 || true_label > k)
        throw OracleError(OracleError::Kind::Other,
                          "synthetic oracle: ground-truth label out of range for '" + dialogue.id +
                              "'");

    Rng rng(mix_seed(spec_.seed, hash_str(dialogue.id)));

    // draw the emitted class from the confusion row of the true label
    const auto& row = spec_.confusion[static_cast<size_t>(true_label - 1)];
    double u = rng.uniform01();
    int emitted = k - 1;
    double cdf = 0.0;
    for (int c = 0; c < k; ++c) {
        cdf += row[static_cast<size_t>(c)];
        if (u < cdf) {
            emitted = c;
            break;
        }
    }

    // peaked distribution around the emitted class; jitter keeps the
    // non-argmax shape varied across dialogues
    Eigen::VectorXd logits(k);
    for (int c = 0; c < k; ++c)
        logits[c] = (c == emitted ? spec_.confidence_concentration : 0.0) + rng.uniform01();
    Eigen::VectorXd q = (logits.array() - logits.maxCoeff()).exp();
    q /= q.sum();
    return q;
}

namespace {

struct ParsedEndpoint {
    std::string base;  // scheme://host:port
    std::string path;
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw OracleError(OracleError::Kind::Transport,
                          "remote endpoint '" + endpoint + "' has no scheme");
    const auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

} // namespace

Eigen::VectorXd remote_predict(const RemoteConfig& remote, const PromptInput& prompt) {
    if (remote.endpoint.empty())
        throw OracleError(OracleError::Kind::Transport, "remote endpoint not configured");
    if (remote.num_classes < 2)
        throw OracleError(OracleError::Kind::Other, "remote oracle: num_classes not configured");

    nlohmann::json body;
    body["instruction"] = render_prompt_template(prompt);
    body["graph_feature"] = std::vector<double>(
        prompt.graph_feature_slot.data(),
        prompt.graph_feature_slot.data() + prompt.graph_feature_slot.size());
    body["audio_feature"] = std::vector<double>(
        prompt.audio_feature_slot.data(),
        prompt.audio_feature_slot.data() + prompt.audio_feature_slot.size());
    body["num_classes"] = remote.num_classes;

    const ParsedEndpoint ep = parse_endpoint(remote.endpoint);
    httplib::Client client(ep.base);
    client.set_connection_timeout(0, remote.timeout_ms * 1000);
    client.set_read_timeout(remote.timeout_ms / 1000, (remote.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!remote.bearer_token.empty())
        headers.emplace("Authorization", "Bearer " + remote.bearer_token);

    auto res = client.Post(ep.path, headers, body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
            throw OracleError(OracleError::Kind::Timeout,
                              "remote predict timed out after " +
                                  std::to_string(remote.timeout_ms) + " ms");
        throw OracleError(OracleError::Kind::Transport,
                          "remote predict transport failure: " + httplib::to_string(err));
    }
    if (res->status != 200)
        throw OracleError(OracleError::Kind::Transport,
                          "remote predict returned HTTP " + std::to_string(res->status));

    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw OracleError(OracleError::Kind::MalformedResponse,
                          std::string("remote response is not JSON: ") + e.what());
    }
    if (!parsed.contains("probs") || !parsed["probs"].is_array())
        throw OracleError(OracleError::Kind::MalformedResponse,
                          "remote response missing 'probs' array");
    if (static_cast<int>(parsed["probs"].size()) != remote.num_classes)
        throw OracleError(OracleError::Kind::MalformedResponse,
                          "remote response 'probs' has " + std::to_string(parsed["probs"].size()) +
                              " entries, expected " + std::to_string(remote.num_classes));

    Eigen::VectorXd q(remote.num_classes);
    for (int c = 0; c < remote.num_classes; ++c) {
        const auto& v = parsed["probs"][static_cast<size_t>(c)];
        if (!v.is_number())
            throw OracleError(OracleError::Kind::MalformedResponse,
                              "remote response 'probs' has a non-numeric entry");
        q[c] = v.get<double>();
        if (!std::isfinite(q[c]) || q[c] < 0.0)
            throw OracleError(OracleError::Kind::NotADistribution,
                              "remote response probability out of range");
    }
    const double sum = q.sum();
    if (std::abs(sum - 1.0) > 1e-3)
        throw OracleError(OracleError::Kind::NotADistribution,
                          "remote response sums to " + std::to_string(sum) +
                              ", outside the 1e-3 tolerance");
    return q / sum;
}

void ConcurrencyGate::acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [this] { return available_ > 0; });
    --available_;
}

void ConcurrencyGate::release() {
    {
        std::lock_guard lock(mutex_);
        ++available_;
    }
    cv_.notify_one();
}

Eigen::VectorXd RemoteOracle::predict(const Dialogue& dialogue) const {
    ForwardResult fr = forward(dialogue, *params_, cfg_, graph_cfg_, RunMode::Eval);
    Eigen::VectorXd audio =
        Eigen::Map<const Eigen::VectorXd>(dialogue.dialogue_feature.data(),
                                          static_cast<long>(dialogue.dialogue_feature.size()));
    PromptInput prompt = assemble_prompt(template_, fr.pooled, audio);

    gate_->acquire();
    try {
        Eigen::VectorXd q = remote_predict(remote_, prompt);
        gate_->release();
        return q;
    } catch (...) {
        gate_->release();
        throw;
    }
}

} // namespace dialograph
