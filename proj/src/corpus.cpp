#include "dialograph/corpus.hpp"
#include "dialograph/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dialograph {

using nlohmann::json;

namespace {

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void require(bool cond, const std::string& msg) {
    if (!cond) throw CorpusError(msg);
}

std::vector<double> parse_feature_array(const json& arr, int d_h, int line_no,
                                        const std::string& field, const std::string& id) {
    require(arr.is_array(), "line " + std::to_string(line_no) + ": field '" + field +
                                "' of record '" + id + "' is not an array");
    require(static_cast<int>(arr.size()) == d_h,
            "line " + std::to_string(line_no) + ": record '" + id + "' field '" + field +
                "' has length " + std::to_string(arr.size()) + ", expected d_h=" +
                std::to_string(d_h));
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        require(v.is_number(), "line " + std::to_string(line_no) + ": record '" + id +
                                   "' field '" + field + "' has a non-numeric entry");
        double x = quantize_f32(v.get<double>());
        require(std::isfinite(x), "line " + std::to_string(line_no) + ": record '" + id +
                                      "' field '" + field + "' has a non-finite entry");
        out.push_back(x);
    }
    return out;
}

json feature_to_json(const std::vector<double>& f) {
    json arr = json::array();
    for (double v : f) arr.push_back(static_cast<float>(v));
    return arr;
}

} // namespace

void CorpusPools::validate() const {
    require(num_classes >= 2, "corpus declares K=" + std::to_string(num_classes) + ", need K >= 2");
    require(feature_dim >= 1, "corpus declares d_h=" + std::to_string(feature_dim) + ", need d_h >= 1");
    std::set<std::string> ids;
    auto check_dialogue = [&](const Dialogue& d, bool must_have_label) {
        require(ids.insert(d.id).second, "duplicate dialogue id '" + d.id + "'");
        require(!d.utterances.empty(), "dialogue '" + d.id + "' has no utterances");
        require(static_cast<int>(d.dialogue_feature.size()) == feature_dim,
                "dialogue '" + d.id + "' dialogue_feature length mismatch");
        for (size_t j = 0; j < d.utterances.size(); ++j) {
            const auto& u = d.utterances[j];
            require(u.index == static_cast<int>(j) + 1,
                    "dialogue '" + d.id + "' utterance indices are not 1..l without gaps");
            require(static_cast<int>(u.feature.size()) == feature_dim,
                    "dialogue '" + d.id + "' utterance " + std::to_string(u.index) +
                        " feature length mismatch");
            for (double v : u.feature)
                require(std::isfinite(v), "dialogue '" + d.id + "' has a non-finite feature");
        }
        if (must_have_label) {
            require(d.label.has_value(), "labeled pool dialogue '" + d.id + "' has no label");
        }
        if (d.label) {
            require(*d.label >= 1 && *d.label <= num_classes,
                    "dialogue '" + d.id + "' label " + std::to_string(*d.label) +
                        " out of range 1.." + std::to_string(num_classes));
        }
    };
    for (const auto& d : labeled) check_dialogue(d, true);
    for (const auto& d : unlabeled) check_dialogue(d, false);
}

void SynthSpec::validate() const {
    require(num_classes >= 2, "synth spec: K must be >= 2");
    require(feature_dim >= num_classes,
            "synth spec: feature_dim must be >= num_classes for simplex centroid placement");
    require(class_counts.empty() || static_cast<int>(class_counts.size()) == num_classes,
            "synth spec: class_counts must have one entry per class");
    require(dialogues_per_class >= 1 || !class_counts.empty(),
            "synth spec: dialogues_per_class must be >= 1");
    require(utterance_min >= 1 && utterance_min <= utterance_max,
            "synth spec: utterance count range invalid");
    require(speakers >= 1, "synth spec: speakers must be >= 1");
    require(std::isfinite(class_separation) && class_separation >= 0,
            "synth spec: class_separation must be finite and >= 0");
    require(std::isfinite(noise_std) && noise_std >= 0,
            "synth spec: noise_std must be finite and >= 0");
    require(unlabeled_fraction >= 0.0 && unlabeled_fraction <= 1.0,
            "synth spec: unlabeled_fraction must be in [0,1]");
}

CorpusPools load_corpus(const std::string& path, std::optional<std::pair<int, int>> expected_dims) {
    std::ifstream in(path);
    require(in.good(), "cannot open corpus file '" + path + "'");

    std::string line;
    int line_no = 0;

    // header
    require(static_cast<bool>(std::getline(in, line)), "corpus file '" + path + "' is empty");
    ++line_no;
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw CorpusError("line 1: malformed header: " + std::string(e.what()));
    }
    require(header.contains("d_h") && header.contains("K") && header.contains("version"),
            "line 1: header must declare d_h, K and version");
    require(header["version"].get<int>() == 1,
            "line 1: unsupported corpus version " + header["version"].dump());

    CorpusPools pools;
    pools.feature_dim = header["d_h"].get<int>();
    pools.num_classes = header["K"].get<int>();
    if (expected_dims) {
        require(pools.feature_dim == expected_dims->first,
                "corpus declares d_h=" + std::to_string(pools.feature_dim) + " but config expects " +
                    std::to_string(expected_dims->first));
        require(pools.num_classes == expected_dims->second,
                "corpus declares K=" + std::to_string(pools.num_classes) + " but config expects " +
                    std::to_string(expected_dims->second));
    }

    std::set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw CorpusError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
        }
        require(rec.contains("id") && rec["id"].is_string(),
                "line " + std::to_string(line_no) + ": missing string field 'id'");
        Dialogue d;
        d.id = rec["id"].get<std::string>();
        require(seen_ids.insert(d.id).second,
                "line " + std::to_string(line_no) + ": duplicate dialogue id '" + d.id + "'");
        require(rec.contains("utterances") && rec["utterances"].is_array() &&
                    !rec["utterances"].empty(),
                "line " + std::to_string(line_no) + ": record '" + d.id +
                    "' needs a non-empty 'utterances' array");
        int j = 0;
        for (const auto& u : rec["utterances"]) {
            require(u.contains("speaker") && u["speaker"].is_string(),
                    "line " + std::to_string(line_no) + ": record '" + d.id + "' utterance " +
                        std::to_string(j + 1) + " missing string field 'speaker'");
            require(u.contains("feature"), "line " + std::to_string(line_no) + ": record '" + d.id +
                                               "' utterance " + std::to_string(j + 1) +
                                               " missing field 'feature'");
            Utterance ut;
            ut.index = ++j;
            ut.speaker = u["speaker"].get<std::string>();
            ut.feature = parse_feature_array(u["feature"], pools.feature_dim, line_no, "feature", d.id);
            d.utterances.push_back(std::move(ut));
        }
        require(rec.contains("dialogue_feature"),
                "line " + std::to_string(line_no) + ": record '" + d.id +
                    "' missing field 'dialogue_feature'");
        d.dialogue_feature =
            parse_feature_array(rec["dialogue_feature"], pools.feature_dim, line_no,
                                "dialogue_feature", d.id);
        if (rec.contains("label") && !rec["label"].is_null()) {
            require(rec["label"].is_number_integer(),
                    "line " + std::to_string(line_no) + ": record '" + d.id +
                        "' field 'label' must be an integer");
            int label = rec["label"].get<int>();
            require(label >= 1 && label <= pools.num_classes,
                    "line " + std::to_string(line_no) + ": record '" + d.id + "' label " +
                        std::to_string(label) + " out of range 1.." +
                        std::to_string(pools.num_classes));
            d.label = label;
            pools.labeled.push_back(std::move(d));
        } else {
            pools.unlabeled.push_back(std::move(d));
        }
    }
    pools.validate();
    return pools;
}

void save_corpus(const CorpusPools& pools, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot open '" + path + "' for writing");
    json header = {{"d_h", pools.feature_dim}, {"K", pools.num_classes}, {"version", 1}};
    out << header.dump() << "\n";
    auto write_dialogue = [&](const Dialogue& d) {
        json rec;
        rec["id"] = d.id;
        json utts = json::array();
        for (const auto& u : d.utterances) {
            utts.push_back({{"speaker", u.speaker}, {"feature", feature_to_json(u.feature)}});
        }
        rec["utterances"] = std::move(utts);
        rec["dialogue_feature"] = feature_to_json(d.dialogue_feature);
        if (d.label) rec["label"] = *d.label;
        out << rec.dump() << "\n";
    };
    for (const auto& d : pools.labeled) write_dialogue(d);
    for (const auto& d : pools.unlabeled) write_dialogue(d);
    require(out.good(), "write to '" + path + "' failed");
}

GroundTruth load_sidecar(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open sidecar file '" + path + "'");
    GroundTruth truth;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw CorpusError("sidecar line " + std::to_string(line_no) + ": " + e.what());
        }
        require(rec.contains("id") && rec.contains("label"),
                "sidecar line " + std::to_string(line_no) + ": needs 'id' and 'label'");
        truth[rec["id"].get<std::string>()] = rec["label"].get<int>();
    }
    return truth;
}

void save_sidecar(const GroundTruth& truth, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot open '" + path + "' for writing");
    for (const auto& [id, label] : truth) {
        json rec = {{"id", id}, {"label", label}};
        out << rec.dump() << "\n";
    }
}

SynthResult generate_synthetic(const SynthSpec& spec) {
    spec.validate();

    SynthResult result;
    result.pools.num_classes = spec.num_classes;
    result.pools.feature_dim = spec.feature_dim;

    // Centroid for class c sits at (sep / sqrt(2)) * e_{c-1}; every pair of
    // centroids is then exactly class_separation apart.
    const double axis = spec.class_separation / std::sqrt(2.0);

    for (int c = 1; c <= spec.num_classes; ++c) {
        int count = spec.class_counts.empty() ? spec.dialogues_per_class
                                              : spec.class_counts[c - 1];
        int n_unlabeled = static_cast<int>(std::llround(spec.unlabeled_fraction * count));
        Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(c)));
        for (int n = 0; n < count; ++n) {
            Dialogue d;
            {
                std::ostringstream id;
                id << "c" << c << "_d";
                id.width(5);
                id.fill('0');
                id << n;
                d.id = id.str();
            }
            int len = spec.utterance_min +
                      static_cast<int>(rng.uniform_int(
                          static_cast<uint64_t>(spec.utterance_max - spec.utterance_min + 1)));
            std::vector<double> mean(spec.feature_dim, 0.0);
            for (int j = 0; j < len; ++j) {
                Utterance u;
                u.index = j + 1;
                u.speaker = "s" + std::to_string(rng.uniform_int(static_cast<uint64_t>(spec.speakers)));
                u.feature.resize(spec.feature_dim);
                for (int k = 0; k < spec.feature_dim; ++k) {
                    double centroid = (k == c - 1) ? axis : 0.0;
                    u.feature[k] = quantize_f32(centroid + spec.noise_std * rng.normal());
                    mean[k] += u.feature[k];
                }
                d.utterances.push_back(std::move(u));
            }
            d.dialogue_feature.resize(spec.feature_dim);
            for (int k = 0; k < spec.feature_dim; ++k)
                d.dialogue_feature[k] = quantize_f32(mean[k] / len);

            result.truth[d.id] = c;
            if (n < n_unlabeled) {
                result.pools.unlabeled.push_back(std::move(d));
            } else {
                d.label = c;
                result.pools.labeled.push_back(std::move(d));
            }
        }
    }
    result.pools.validate();
    return result;
}

SynthResult split_pools(const CorpusPools& pools, double labeled_fraction, uint64_t seed) {
    require(labeled_fraction > 0.0 && labeled_fraction <= 1.0,
            "labeled_fraction must be in (0, 1]");
    require(!pools.labeled.empty(), "split_pools requires a non-empty labeled pool");

    SynthResult result;
    result.pools.num_classes = pools.num_classes;
    result.pools.feature_dim = pools.feature_dim;
    result.pools.unlabeled = pools.unlabeled;

    // group labeled ids by class, sorted for determinism
    std::map<int, std::vector<const Dialogue*>> by_class;
    for (const auto& d : pools.labeled) by_class[*d.label].push_back(&d);
    for (auto& [c, group] : by_class) {
        std::sort(group.begin(), group.end(),
                  [](const Dialogue* a, const Dialogue* b) { return a->id < b->id; });
        Rng rng(mix_seed(seed, static_cast<uint64_t>(c)));
        rng.shuffle(group);
        auto keep = static_cast<size_t>(std::llround(labeled_fraction * group.size()));
        for (size_t i = 0; i < group.size(); ++i) {
            Dialogue d = *group[i];
            if (i < keep) {
                result.pools.labeled.push_back(std::move(d));
            } else {
                result.truth[d.id] = *d.label;
                d.label.reset();
                result.pools.unlabeled.push_back(std::move(d));
            }
        }
    }
    auto by_id = [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; };
    std::sort(result.pools.labeled.begin(), result.pools.labeled.end(), by_id);
    std::sort(result.pools.unlabeled.begin(), result.pools.unlabeled.end(), by_id);
    result.pools.validate();
    return result;
}

const Dialogue* find_dialogue(const CorpusPools& pools, const std::string& id) {
    for (const auto& d : pools.labeled)
        if (d.id == id) return &d;
    for (const auto& d : pools.unlabeled)
        if (d.id == id) return &d;
    return nullptr;
}

} // namespace dialograph
