#pragma once

#include "dialograph/corpus.hpp"
#include "dialograph/graph.hpp"
#include "dialograph/mrdan.hpp"
#include "dialograph/ssl.hpp"
#include "dialograph/trainer.hpp"

#include <string>
#include <vector>

namespace dialograph {

struct BackboneConfig {
    std::string oracle = "mrdan";  // mrdan | synthetic | remote
    std::string endpoint;
    int timeout_ms = 5000;
    std::string bearer_token;
    std::string prompt_template = "Classify the dialogue intent. <graph> <audio>";
    double synthetic_concentration = 8.0;
    uint64_t synthetic_seed = 0;
    int max_in_flight = 4;  // remote client concurrency cap
};

struct SweepSpec {
    std::string parameter;  // speaker_window | similarity_threshold | num_heads
    std::vector<double> values;
    int repetitions = 1;
    std::string mode = "train";  // train | ssl

    void validate(const ModelConfig& model) const;
};

struct RunConfig {
    ModelConfig model;
    GraphConfig graph;
    TrainConfig train;
    SslConfig ssl;
    BackboneConfig backbone;
    SynthSpec synth;
    SweepSpec sweep;

    std::string corpus_train;
    std::string corpus_eval;
    std::string sidecar_train;
    std::string sidecar_eval;
    std::string checkpoint;

    std::string out_dir = "out";
    uint64_t seed = 0;
    int threads = 1;
    bool model_keys_set = false;  // any explicit model.* key (drives checkpoint config checks)
};

// Applies one dotted key ("section.key = value"); throws std::invalid_argument
// on unknown keys or unparseable values.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat-nested key/value text: one `section.key = value` per line, '#'
// comments, blank lines ignored.
void load_config_file(RunConfig& cfg, const std::string& path);

// Resolution order: defaults, then --config file, then the file named by
// DIALOGRAPH_CONFIG, then individual overrides (flags) applied by the caller.
RunConfig resolve_config(const std::string& config_flag_path,
                         const std::vector<std::string>& set_overrides);

} // namespace dialograph
