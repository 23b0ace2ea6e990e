#include "dialograph/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dialograph {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

int to_int(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': cannot parse integer from '" +
                                    value + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return static_cast<uint64_t>(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': cannot parse integer from '" +
                                    value + "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': cannot parse number from '" +
                                    value + "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::invalid_argument("config key '" + key + "': cannot parse boolean from '" + value +
                                "'");
}

std::vector<double> to_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_double(key, item));
    }
    return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    for (double v : to_double_list(key, value)) out.push_back(static_cast<int>(v));
    return out;
}

} // namespace

void SweepSpec::validate(const ModelConfig& model) const {
    if (parameter != "speaker_window" && parameter != "similarity_threshold" &&
        parameter != "num_heads")
        throw std::invalid_argument("sweep: parameter must be one of speaker_window, "
                                    "similarity_threshold, num_heads (got '" +
                                    parameter + "')");
    if (values.empty()) throw std::invalid_argument("sweep: value list is empty");
    if (repetitions < 1) throw std::invalid_argument("sweep: repetitions must be >= 1");
    if (mode != "train" && mode != "ssl")
        throw std::invalid_argument("sweep: mode must be train or ssl");
    for (double v : values) {
        if (parameter == "speaker_window") {
            if (v < 1 || v != std::floor(v))
                throw std::invalid_argument("sweep: speaker_window values must be integers >= 1");
        } else if (parameter == "num_heads") {
            const int h = static_cast<int>(v);
            if (v != std::floor(v) || h < 1 || h % kNumEdgeTypes != 0)
                throw std::invalid_argument(
                    "sweep: num_heads values must be positive multiples of 4 (got " +
                    std::to_string(v) + ")");
            if (model.model_dim % h != 0)
                throw std::invalid_argument("sweep: num_heads value " + std::to_string(h) +
                                            " does not divide model_dim " +
                                            std::to_string(model.model_dim));
        } else {
            if (!std::isfinite(v))
                throw std::invalid_argument("sweep: similarity_threshold values must be finite");
        }
    }
}

void apply_config_kv(RunConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    if (key.rfind("model.", 0) == 0) cfg.model_keys_set = true;

    if (key == "model.input_dim") cfg.model.input_dim = to_int(key, value);
    else if (key == "model.speaker_dim") cfg.model.speaker_dim = to_int(key, value);
    else if (key == "model.model_dim") cfg.model.model_dim = to_int(key, value);
    else if (key == "model.num_heads") cfg.model.num_heads = to_int(key, value);
    else if (key == "model.num_layers") cfg.model.num_layers = to_int(key, value);
    else if (key == "model.num_classes") cfg.model.num_classes = to_int(key, value);
    else if (key == "model.num_speaker_roles") cfg.model.num_speaker_roles = to_int(key, value);
    else if (key == "model.dropout") cfg.model.dropout = to_double(key, value);
    else if (key == "model.layernorm_eps") cfg.model.layernorm_eps = to_double(key, value);

    else if (key == "graph.speaker_window") cfg.graph.speaker_window = to_int(key, value);
    else if (key == "graph.similarity_threshold")
        cfg.graph.similarity_threshold = to_double(key, value);
    else if (key == "graph.theta_mode") {
        if (value == "fixed") cfg.graph.theta_mode = ThetaMode::Fixed;
        else if (value == "ema_quantile") cfg.graph.theta_mode = ThetaMode::EmaQuantile;
        else throw std::invalid_argument("config key 'graph.theta_mode': expected fixed or "
                                         "ema_quantile, got '" + value + "'");
    }
    else if (key == "graph.theta_quantile") cfg.graph.theta_quantile = to_double(key, value);
    else if (key == "graph.theta_decay") cfg.graph.theta_decay = to_double(key, value);
    else if (key == "graph.rebuild_cross_edges")
        cfg.graph.rebuild_cross_edges_each_epoch = to_bool(key, value);

    else if (key == "train.base_lr") cfg.train.base_lr = to_double(key, value);
    else if (key == "train.epochs") cfg.train.epochs = to_int(key, value);
    else if (key == "train.batch_size") cfg.train.batch_size = to_int(key, value);
    else if (key == "train.warmup_fraction") cfg.train.warmup_fraction = to_double(key, value);
    else if (key == "train.pseudo_label_weight")
        cfg.train.pseudo_label_weight = to_double(key, value);

    else if (key == "ssl.ema_decay") cfg.ssl.ema_decay = to_double(key, value);
    else if (key == "ssl.initial_tau") cfg.ssl.initial_tau = to_double(key, value);
    else if (key == "ssl.margin_epsilon") cfg.ssl.margin_epsilon = to_double(key, value);
    else if (key == "ssl.delta") cfg.ssl.delta = to_double(key, value);
    else if (key == "ssl.top_percent") cfg.ssl.top_percent = to_double(key, value);
    else if (key == "ssl.min_count") cfg.ssl.min_count = to_int(key, value);
    else if (key == "ssl.round_period") cfg.ssl.round_period = to_int(key, value);
    else if (key == "ssl.batch_size") cfg.ssl.batch_size = to_int(key, value);
    else if (key == "ssl.threshold_mode") {
        if (value == "class_specific") cfg.ssl.threshold_mode = ThresholdMode::ClassSpecific;
        else if (value == "global_only") cfg.ssl.threshold_mode = ThresholdMode::GlobalOnly;
        else throw std::invalid_argument("config key 'ssl.threshold_mode': expected "
                                         "class_specific or global_only, got '" + value + "'");
    }
    else if (key == "ssl.class_dist_init") {
        if (value == "uniform") cfg.ssl.class_dist_init = ClassDistInit::Uniform;
        else if (value == "labeled_frequency")
            cfg.ssl.class_dist_init = ClassDistInit::LabeledFrequency;
        else throw std::invalid_argument("config key 'ssl.class_dist_init': expected uniform or "
                                         "labeled_frequency, got '" + value + "'");
    }
    else if (key == "ssl.rescore_promoted") cfg.ssl.rescore_promoted = to_bool(key, value);

    else if (key == "backbone.oracle") {
        if (value != "mrdan" && value != "synthetic" && value != "remote")
            throw std::invalid_argument("config key 'backbone.oracle': expected mrdan, synthetic "
                                        "or remote, got '" + value + "'");
        cfg.backbone.oracle = value;
    }
    else if (key == "backbone.endpoint") cfg.backbone.endpoint = value;
    else if (key == "backbone.timeout_ms") cfg.backbone.timeout_ms = to_int(key, value);
    else if (key == "backbone.bearer_token") cfg.backbone.bearer_token = value;
    else if (key == "backbone.template") cfg.backbone.prompt_template = value;
    else if (key == "backbone.synthetic_concentration")
        cfg.backbone.synthetic_concentration = to_double(key, value);
    else if (key == "backbone.synthetic_seed") cfg.backbone.synthetic_seed = to_u64(key, value);
    else if (key == "backbone.max_in_flight") cfg.backbone.max_in_flight = to_int(key, value);

    else if (key == "synth.num_classes") cfg.synth.num_classes = to_int(key, value);
    else if (key == "synth.feature_dim") cfg.synth.feature_dim = to_int(key, value);
    else if (key == "synth.dialogues_per_class")
        cfg.synth.dialogues_per_class = to_int(key, value);
    else if (key == "synth.class_counts") cfg.synth.class_counts = to_int_list(key, value);
    else if (key == "synth.utterance_min") cfg.synth.utterance_min = to_int(key, value);
    else if (key == "synth.utterance_max") cfg.synth.utterance_max = to_int(key, value);
    else if (key == "synth.speakers") cfg.synth.speakers = to_int(key, value);
    else if (key == "synth.class_separation") cfg.synth.class_separation = to_double(key, value);
    else if (key == "synth.noise_std") cfg.synth.noise_std = to_double(key, value);
    else if (key == "synth.unlabeled_fraction")
        cfg.synth.unlabeled_fraction = to_double(key, value);
    else if (key == "synth.seed") cfg.synth.seed = to_u64(key, value);

    else if (key == "sweep.parameter") cfg.sweep.parameter = value;
    else if (key == "sweep.values") cfg.sweep.values = to_double_list(key, value);
    else if (key == "sweep.repetitions") cfg.sweep.repetitions = to_int(key, value);
    else if (key == "sweep.mode") cfg.sweep.mode = value;

    else if (key == "corpus.train") cfg.corpus_train = value;
    else if (key == "corpus.eval") cfg.corpus_eval = value;
    else if (key == "corpus.sidecar") cfg.sidecar_train = value;
    else if (key == "corpus.eval_sidecar") cfg.sidecar_eval = value;

    else if (key == "run.checkpoint") cfg.checkpoint = value;
    else if (key == "run.out") cfg.out_dir = value;
    else if (key == "run.seed") cfg.seed = to_u64(key, value);
    else if (key == "run.threads") cfg.threads = to_int(key, value);

    else throw std::invalid_argument("unknown config key '" + key + "'");
}

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw std::invalid_argument("cannot open config file '" + path + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config file '" + path + "' line " +
                                        std::to_string(line_no) + ": expected 'key = value'");
        try {
            apply_config_kv(cfg, line.substr(0, eq), line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config file '" + path + "' line " +
                                        std::to_string(line_no) + ": " + e.what());
        }
    }
}

RunConfig resolve_config(const std::string& config_flag_path,
                         const std::vector<std::string>& set_overrides) {
    RunConfig cfg;
    if (!config_flag_path.empty()) load_config_file(cfg, config_flag_path);
    if (const char* env = std::getenv("DIALOGRAPH_CONFIG"); env && *env)
        load_config_file(cfg, env);
    for (const auto& kv : set_overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

} // namespace dialograph
