#include <doctest.h>

#include "dialograph/corpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace dialograph;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "dialograph_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

const char* kSmallCorpus =
    R"({"d_h": 4, "K": 2, "version": 1}
{"id":"a1","utterances":[{"speaker":"A","feature":[1,0,0,0]},{"speaker":"B","feature":[0,1,0,0]}],"dialogue_feature":[0.5,0.5,0,0],"label":1}
{"id":"a2","utterances":[{"speaker":"A","feature":[0,0,1,0]}],"dialogue_feature":[0,0,1,0],"label":2}
{"id":"u1","utterances":[{"speaker":"A","feature":[1,1,0,0]}],"dialogue_feature":[1,1,0,0]}
{"id":"u2","utterances":[{"speaker":"B","feature":[0,0,1,1]}],"dialogue_feature":[0,0,1,1]}
{"id":"u3","utterances":[{"speaker":"A","feature":[2,0,0,1]}],"dialogue_feature":[2,0,0,1]}
)";

} // namespace

TEST_CASE("load_corpus partitions labeled and unlabeled records") {
    auto path = temp_file("small.jsonl");
    write_file(path, kSmallCorpus);
    CorpusPools pools = load_corpus(path.string());
    CHECK(pools.labeled.size() == 2);
    CHECK(pools.unlabeled.size() == 3);
    CHECK(pools.feature_dim == 4);
    CHECK(pools.num_classes == 2);
    CHECK(pools.labeled[0].utterances[0].index == 1);
    CHECK(pools.labeled[0].utterances[1].index == 2);
}

TEST_CASE("load_corpus checks declared dims") {
    auto path = temp_file("small.jsonl");
    write_file(path, kSmallCorpus);
    CHECK_NOTHROW(load_corpus(path.string(), std::make_pair(4, 2)));
    CHECK_THROWS_AS(load_corpus(path.string(), std::make_pair(8, 2)), CorpusError);
}

TEST_CASE("load_corpus reports feature length mismatch with the record id") {
    auto path = temp_file("badlen.jsonl");
    write_file(path,
               "{\"d_h\": 4, \"K\": 2, \"version\": 1}\n"
               "{\"id\":\"bad\",\"utterances\":[{\"speaker\":\"A\",\"feature\":[1,2,3]}],"
               "\"dialogue_feature\":[0,0,0,0],\"label\":1}\n");
    try {
        load_corpus(path.string());
        FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad") != std::string::npos);
        CHECK(msg.find("line 2") != std::string::npos);
    }
}

TEST_CASE("load_corpus rejects duplicate ids") {
    auto path = temp_file("dup.jsonl");
    write_file(path,
               "{\"d_h\": 1, \"K\": 2, \"version\": 1}\n"
               "{\"id\":\"d1\",\"utterances\":[{\"speaker\":\"A\",\"feature\":[1]}],"
               "\"dialogue_feature\":[1],\"label\":1}\n"
               "{\"id\":\"d1\",\"utterances\":[{\"speaker\":\"A\",\"feature\":[2]}],"
               "\"dialogue_feature\":[2],\"label\":2}\n");
    try {
        load_corpus(path.string());
        FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
        CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
        CHECK(std::string(e.what()).find("d1") != std::string::npos);
    }
}

TEST_CASE("load_corpus rejects out-of-range labels") {
    auto path = temp_file("badlabel.jsonl");
    write_file(path,
               "{\"d_h\": 1, \"K\": 2, \"version\": 1}\n"
               "{\"id\":\"d1\",\"utterances\":[{\"speaker\":\"A\",\"feature\":[1]}],"
               "\"dialogue_feature\":[1],\"label\":3}\n");
    CHECK_THROWS_AS(load_corpus(path.string()), CorpusError);
}

TEST_CASE("save/load round-trip preserves the corpus at stored precision") {
    SynthSpec spec;
    spec.num_classes = 3;
    spec.feature_dim = 5;
    spec.dialogues_per_class = 4;
    spec.unlabeled_fraction = 0.5;
    spec.seed = 11;
    SynthResult gen = generate_synthetic(spec);

    auto p1 = temp_file("rt1.jsonl");
    auto p2 = temp_file("rt2.jsonl");
    save_corpus(gen.pools, p1.string());
    CorpusPools reloaded = load_corpus(p1.string());
    save_corpus(reloaded, p2.string());
    CHECK(read_file(p1) == read_file(p2));

    REQUIRE(reloaded.labeled.size() == gen.pools.labeled.size());
    REQUIRE(reloaded.unlabeled.size() == gen.pools.unlabeled.size());
    for (size_t i = 0; i < gen.pools.labeled.size(); ++i) {
        CHECK(reloaded.labeled[i].id == gen.pools.labeled[i].id);
        CHECK(reloaded.labeled[i].label == gen.pools.labeled[i].label);
        for (size_t j = 0; j < gen.pools.labeled[i].utterances.size(); ++j)
            CHECK(reloaded.labeled[i].utterances[j].feature ==
                  gen.pools.labeled[i].utterances[j].feature);
    }
}

TEST_CASE("generate_synthetic is a pure function of the spec") {
    SynthSpec spec;
    spec.num_classes = 4;
    spec.feature_dim = 6;
    spec.dialogues_per_class = 50;
    spec.seed = 7;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);

    auto pa = temp_file("det_a.jsonl");
    auto pb = temp_file("det_b.jsonl");
    save_corpus(a.pools, pa.string());
    save_corpus(b.pools, pb.string());
    CHECK(read_file(pa) == read_file(pb));
    CHECK(a.truth == b.truth);
}

TEST_CASE("degenerate geometry: zero separation and noise collapses all features") {
    SynthSpec spec;
    spec.num_classes = 2;
    spec.feature_dim = 3;
    spec.dialogues_per_class = 3;
    spec.class_separation = 0.0;
    spec.noise_std = 0.0;
    spec.seed = 1;
    auto gen = generate_synthetic(spec);
    for (const auto& d : gen.pools.labeled)
        for (const auto& u : d.utterances)
            for (double v : u.feature) CHECK(v == 0.0);
}

TEST_CASE("well-separated corpus is solved by a nearest-centroid oracle") {
    SynthSpec spec;
    spec.num_classes = 2;
    spec.feature_dim = 4;
    spec.dialogues_per_class = 30;
    spec.class_separation = 10.0;
    spec.noise_std = 0.1;
    spec.seed = 3;
    auto gen = generate_synthetic(spec);

    // centroid estimate per class from ground truth
    std::vector<std::vector<double>> centroid(spec.num_classes,
                                              std::vector<double>(spec.feature_dim, 0.0));
    std::vector<int> count(spec.num_classes, 0);
    for (const auto& d : gen.pools.labeled) {
        const int c = gen.truth.at(d.id) - 1;
        for (int k = 0; k < spec.feature_dim; ++k) centroid[c][k] += d.dialogue_feature[k];
        count[c] += 1;
    }
    for (int c = 0; c < spec.num_classes; ++c)
        for (int k = 0; k < spec.feature_dim; ++k) centroid[c][k] /= count[c];

    int correct = 0, total = 0;
    for (const auto& d : gen.pools.labeled) {
        int best = 0;
        double best_dist = 1e300;
        for (int c = 0; c < spec.num_classes; ++c) {
            double dist = 0;
            for (int k = 0; k < spec.feature_dim; ++k) {
                const double diff = d.dialogue_feature[k] - centroid[c][k];
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = c;
            }
        }
        correct += (best + 1 == gen.truth.at(d.id)) ? 1 : 0;
        total += 1;
    }
    CHECK(correct == total);
}

TEST_CASE("split_pools moves a stratified fraction and hides labels") {
    SynthSpec spec;
    spec.num_classes = 4;
    spec.feature_dim = 4;
    spec.dialogues_per_class = 25;
    spec.seed = 9;
    auto gen = generate_synthetic(spec);
    REQUIRE(gen.pools.labeled.size() == 100);

    SynthResult split = split_pools(gen.pools, 0.2, 42);
    CHECK(split.pools.labeled.size() == 20);
    CHECK(split.pools.unlabeled.size() == 80);
    CHECK(split.truth.size() == 80);

    std::vector<int> per_class(4, 0);
    for (const auto& d : split.pools.labeled) per_class[*d.label - 1] += 1;
    for (int c = 0; c < 4; ++c) CHECK(per_class[c] == 5);

    for (const auto& d : split.pools.unlabeled) CHECK(!d.label.has_value());

    // pool disjointness by id
    std::set<std::string> ids;
    for (const auto& d : split.pools.labeled) CHECK(ids.insert(d.id).second);
    for (const auto& d : split.pools.unlabeled) CHECK(ids.insert(d.id).second);
}

TEST_CASE("split_pools with fraction 1 is the identity") {
    SynthSpec spec;
    spec.num_classes = 2;
    spec.feature_dim = 2;
    spec.dialogues_per_class = 5;
    spec.seed = 2;
    auto gen = generate_synthetic(spec);
    auto split = split_pools(gen.pools, 1.0, 0);
    CHECK(split.pools.labeled.size() == gen.pools.labeled.size());
    CHECK(split.pools.unlabeled.empty());
    CHECK(split.truth.empty());
}

TEST_CASE("split_pools rejects fraction 0") {
    SynthSpec spec;
    spec.num_classes = 2;
    spec.feature_dim = 2;
    spec.dialogues_per_class = 2;
    auto gen = generate_synthetic(spec);
    CHECK_THROWS_AS(split_pools(gen.pools, 0.0, 0), CorpusError);
}

TEST_CASE("sidecar round-trip") {
    GroundTruth truth{{"a", 1}, {"b", 3}};
    auto path = temp_file("truth.jsonl");
    save_sidecar(truth, path.string());
    CHECK(load_sidecar(path.string()) == truth);
}

TEST_CASE("unlabeled fraction is stratified per class") {
    SynthSpec spec;
    spec.num_classes = 2;
    spec.feature_dim = 2;
    spec.dialogues_per_class = 10;
    spec.unlabeled_fraction = 0.3;
    spec.seed = 5;
    auto gen = generate_synthetic(spec);
    CHECK(gen.pools.labeled.size() == 14);
    CHECK(gen.pools.unlabeled.size() == 6);
    // truth covers everything, including withheld labels
    CHECK(gen.truth.size() == 20);
}
