#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dialograph {

// Thrown by ingestion/validation with a message naming the offending
// record/line/field.
struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Utterance {
    int index = 0;                // 1-based position within the dialogue
    std::string speaker;          // opaque speaker tag
    std::vector<double> feature;  // length d_h, values quantized to float32
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> utterances;
    std::vector<double> dialogue_feature;  // length d_h
    std::optional<int> label;              // intent class in 1..K
    bool pseudo_labeled = false;           // set when promoted by the SSL controller

    size_t length() const { return utterances.size(); }
};

struct CorpusPools {
    std::vector<Dialogue> labeled;    // D_L
    std::vector<Dialogue> unlabeled;  // D_U
    int num_classes = 0;              // K
    int feature_dim = 0;              // d_h

    void validate() const;  // throws CorpusError on invariant violation
};

// Hidden ground truth for withheld labels. Lives outside CorpusPools so SSL
// code cannot accidentally read it.
using GroundTruth = std::map<std::string, int>;

struct SynthSpec {
    int num_classes = 2;
    int feature_dim = 8;
    int dialogues_per_class = 10;
    std::vector<int> class_counts;  // optional per-class override of dialogues_per_class
    int utterance_min = 2;
    int utterance_max = 8;
    int speakers = 2;
    double class_separation = 4.0;  // pairwise centroid distance
    double noise_std = 1.0;
    double unlabeled_fraction = 0.0;  // stratified fraction emitted without label
    uint64_t seed = 0;

    void validate() const;
};

struct SynthResult {
    CorpusPools pools;
    GroundTruth truth;  // true label for every generated dialogue
};

// Reads a JSONL corpus (header line + one record per line). When
// expected_dims is supplied it is checked against the header declaration.
CorpusPools load_corpus(const std::string& path,
                        std::optional<std::pair<int, int>> expected_dims = std::nullopt);

void save_corpus(const CorpusPools& pools, const std::string& path);

GroundTruth load_sidecar(const std::string& path);
void save_sidecar(const GroundTruth& truth, const std::string& path);

// Deterministic synthetic corpus: per-class centroids at pairwise distance
// class_separation, utterance features = centroid + N(0, noise_std^2),
// dialogue_feature = mean of utterance features.
SynthResult generate_synthetic(const SynthSpec& spec);

// Stratified-by-class move of (1 - labeled_fraction) of labeled dialogues
// into the unlabeled pool; withheld labels are returned as ground truth.
SynthResult split_pools(const CorpusPools& pools, double labeled_fraction, uint64_t seed);

// Lookup helpers.
const Dialogue* find_dialogue(const CorpusPools& pools, const std::string& id);

} // namespace dialograph
