#include <doctest.h>

#include "dialograph/backbone.hpp"
#include "dialograph/pipeline.hpp"
#include "dialograph/rng.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

using namespace dialograph;
using nlohmann::json;

namespace {

Dialogue make_dialogue(const std::string& id, int d_h) {
    Dialogue d;
    d.id = id;
    Utterance u;
    u.index = 1;
    u.speaker = "A";
    u.feature.assign(d_h, 0.5);
    d.utterances.push_back(u);
    d.dialogue_feature.assign(d_h, 0.5);
    return d;
}

} // namespace

TEST_CASE("assemble_prompt splits around the two markers") {
    Eigen::VectorXd g = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
    PromptInput p = assemble_prompt("Classify: <graph> <audio>", g, a);
    REQUIRE(p.placeholder_layout.size() == 4);
    CHECK(p.placeholder_layout[0].kind == PromptSegment::Kind::Text);
    CHECK(p.placeholder_layout[0].text == "Classify: ");
    CHECK(p.placeholder_layout[1].kind == PromptSegment::Kind::GraphSlot);
    CHECK(p.placeholder_layout[2].kind == PromptSegment::Kind::Text);
    CHECK(p.placeholder_layout[3].kind == PromptSegment::Kind::AudioSlot);
    CHECK(p.graph_feature_slot == g);
    CHECK(p.audio_feature_slot == a);
}

TEST_CASE("assemble_prompt requires each marker exactly once") {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(2);
    CHECK_THROWS_AS(assemble_prompt("no markers", v, v), std::invalid_argument);
    CHECK_THROWS_AS(assemble_prompt("only <graph>", v, v), std::invalid_argument);
    CHECK_THROWS_AS(assemble_prompt("<graph> <audio> <audio>", v, v), std::invalid_argument);
}

TEST_CASE("rendering the layout reproduces the template") {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(2);
    for (const char* tpl : {"Classify: <graph> <audio>", "<graph><audio>",
                            "a <audio> middle <graph> z", "<audio>end<graph>"}) {
        PromptInput p = assemble_prompt(tpl, v, v);
        CHECK(render_prompt_template(p) == tpl);
    }
}

TEST_CASE("synthetic oracle with identity confusion peaks at the true class") {
    SyntheticOracleSpec spec;
    spec.confusion = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    spec.confidence_concentration = 1e6;
    spec.seed = 4;
    GroundTruth truth{{"d1", 2}};
    SyntheticOracle oracle(spec, truth);
    Eigen::VectorXd q = oracle.predict(make_dialogue("d1", 3));
    CHECK(q[1] > 0.999999);
    CHECK(std::abs(q.sum() - 1.0) < 1e-9);
}

TEST_CASE("synthetic oracle is deterministic per dialogue id") {
    SyntheticOracleSpec spec;
    spec.confusion = {{0.5, 0.5}, {0.5, 0.5}};
    spec.confidence_concentration = 4.0;
    spec.seed = 11;
    GroundTruth truth{{"a", 1}, {"b", 1}};
    SyntheticOracle oracle(spec, truth);
    Eigen::VectorXd q1 = oracle.predict(make_dialogue("a", 2));
    Eigen::VectorXd q2 = oracle.predict(make_dialogue("a", 2));
    CHECK(q1 == q2);
    // different ids draw independently
    Eigen::VectorXd q3 = oracle.predict(make_dialogue("b", 2));
    CHECK(q1 != q3);
}

TEST_CASE("synthetic oracle argmax frequencies track the confusion rows") {
    SyntheticOracleSpec spec;
    spec.confusion = {{0.8, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.0, 0.3, 0.7}};
    spec.confidence_concentration = 8.0;
    spec.seed = 99;

    for (int row = 0; row < 3; ++row) {
        GroundTruth truth;
        for (int n = 0; n < 10000; ++n) truth["d" + std::to_string(n)] = row + 1;
        SyntheticOracle oracle(spec, truth);
        std::vector<double> freq(3, 0.0);
        for (int n = 0; n < 10000; ++n) {
            Eigen::VectorXd q = oracle.predict(make_dialogue("d" + std::to_string(n), 2));
            long arg = 0;
            q.maxCoeff(&arg);
            freq[static_cast<size_t>(arg)] += 1e-4;
        }
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(freq[static_cast<size_t>(c)] - spec.confusion[row][c]) < 0.02);
    }
}

TEST_CASE("synthetic oracle rejects malformed specs and unknown dialogues") {
    SyntheticOracleSpec bad;
    bad.confusion = {{0.5, 0.4}, {0.5, 0.5}};  // first row sums to 0.9
    CHECK_THROWS_AS(SyntheticOracle(bad, GroundTruth{}), std::invalid_argument);

    SyntheticOracleSpec ok;
    ok.confusion = {{1, 0}, {0, 1}};
    SyntheticOracle oracle(ok, GroundTruth{{"known", 1}});
    CHECK_THROWS_AS(oracle.predict(make_dialogue("unknown", 2)), OracleError);
}

TEST_CASE("mrdan oracle delegates to the eval forward pass") {
    ModelConfig cfg;
    cfg.input_dim = 4;
    cfg.speaker_dim = 4;
    cfg.model_dim = 8;
    cfg.num_heads = 4;
    cfg.num_layers = 1;
    cfg.num_classes = 2;
    ModelParams params = init_params(cfg, 3);
    GraphConfig gcfg;
    Dialogue d = make_dialogue("x", 4);

    MrdanOracle oracle(params, cfg, gcfg);
    Eigen::VectorXd via_oracle = oracle.predict(d);
    Eigen::VectorXd direct = forward(d, params, cfg, gcfg, RunMode::Eval).probs;
    CHECK(via_oracle == direct);
}

namespace {

// httplib test server bound to an ephemeral local port
class MockServer {
public:
    explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server_.Post("/predict", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }
    RemoteConfig config(int num_classes, int timeout_ms = 2000) const {
        RemoteConfig rc;
        rc.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/predict";
        rc.timeout_ms = timeout_ms;
        rc.num_classes = num_classes;
        return rc;
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

PromptInput test_prompt() {
    Eigen::VectorXd g = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
    return assemble_prompt("Intent: <graph> <audio>", g, a);
}

} // namespace

TEST_CASE("remote_predict round-trips a well-formed response") {
    std::string seen_body;
    MockServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        res.set_content(R"({"probs": [0.7, 0.3]})", "application/json");
    });
    Eigen::VectorXd q = remote_predict(server.config(2), test_prompt());
    CHECK(q[0] == doctest::Approx(0.7));
    CHECK(q[1] == doctest::Approx(0.3));

    json body = json::parse(seen_body);
    CHECK(body["instruction"] == "Intent: <graph> <audio>");
    CHECK(body["graph_feature"].size() == 3);
    CHECK(body["audio_feature"].size() == 2);
    CHECK(body["num_classes"] == 2);
}

TEST_CASE("remote_predict renormalizes sums within 1e-3") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"probs": [0.7, 0.3005]})", "application/json");
    });
    Eigen::VectorXd q = remote_predict(server.config(2), test_prompt());
    CHECK(std::abs(q.sum() - 1.0) < 1e-12);
    CHECK(q[0] == doctest::Approx(0.7 / 1.0005));
}

TEST_CASE("remote_predict rejects a response with the wrong arity") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"probs": [1.0]})", "application/json");
    });
    try {
        remote_predict(server.config(2), test_prompt());
        FAIL("expected OracleError");
    } catch (const OracleError& e) {
        CHECK(e.kind == OracleError::Kind::MalformedResponse);
    }
}

TEST_CASE("remote_predict rejects sums outside tolerance") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"probs": [0.3, 0.3]})", "application/json");
    });
    try {
        remote_predict(server.config(2), test_prompt());
        FAIL("expected OracleError");
    } catch (const OracleError& e) {
        CHECK(e.kind == OracleError::Kind::NotADistribution);
    }
}

TEST_CASE("remote_predict surfaces non-JSON bodies as malformed") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json", "text/plain");
    });
    try {
        remote_predict(server.config(2), test_prompt());
        FAIL("expected OracleError");
    } catch (const OracleError& e) {
        CHECK(e.kind == OracleError::Kind::MalformedResponse);
    }
}

TEST_CASE("remote_predict times out against a stalled server") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(500));
        res.set_content(R"({"probs": [0.5, 0.5]})", "application/json");
    });
    try {
        remote_predict(server.config(2, 50), test_prompt());
        FAIL("expected OracleError");
    } catch (const OracleError& e) {
        CHECK(e.kind == OracleError::Kind::Timeout);
    }
}

TEST_CASE("remote oracle bounds in-flight requests") {
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    MockServer server([&](const httplib::Request&, httplib::Response& res) {
        const int now = ++in_flight;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(25));
        --in_flight;
        res.set_content(R"({"probs": [0.5, 0.5]})", "application/json");
    });

    ModelConfig cfg;
    cfg.input_dim = 4;
    cfg.speaker_dim = 4;
    cfg.model_dim = 8;
    cfg.num_heads = 4;
    cfg.num_layers = 1;
    cfg.num_classes = 2;
    ModelParams params = init_params(cfg, 1);
    RemoteConfig rc = server.config(2);
    rc.max_in_flight = 2;
    RemoteOracle oracle(rc, "q <graph> <audio>", params, cfg, GraphConfig{});

    std::vector<std::thread> callers;
    for (int i = 0; i < 6; ++i)
        callers.emplace_back([&oracle, i] {
            Dialogue d = make_dialogue("d" + std::to_string(i), 4);
            oracle.predict(d);
        });
    for (auto& t : callers) t.join();
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);
}

TEST_CASE("remote_predict forwards the bearer token") {
    std::string auth_header;
    MockServer server([&](const httplib::Request& req, httplib::Response& res) {
        auth_header = req.get_header_value("Authorization");
        res.set_content(R"({"probs": [0.5, 0.5]})", "application/json");
    });
    RemoteConfig rc = server.config(2);
    rc.bearer_token = "sekrit";
    remote_predict(rc, test_prompt());
    CHECK(auth_header == "Bearer sekrit");
}

namespace {

RunConfig oracle_pipeline_config(const std::string& name, uint64_t seed) {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "dialograph_tests" / name;
    fs::create_directories(dir);

    SynthSpec spec;
    spec.num_classes = 2;
    spec.feature_dim = 4;
    spec.dialogues_per_class = 10;
    spec.unlabeled_fraction = 0.5;
    spec.class_separation = 6.0;
    spec.noise_std = 0.5;
    spec.seed = seed;
    SynthResult gen = generate_synthetic(spec);
    save_corpus(gen.pools, (dir / "corpus.jsonl").string());
    save_sidecar(gen.truth, (dir / "truth.jsonl").string());

    RunConfig run;
    run.model.speaker_dim = 4;
    run.model.model_dim = 8;
    run.model.num_heads = 4;
    run.model.num_layers = 1;
    run.train.epochs = 2;
    run.train.batch_size = 8;
    run.train.seed = seed;
    run.seed = seed;
    run.ssl.round_period = 1;
    run.corpus_train = (dir / "corpus.jsonl").string();
    run.sidecar_train = (dir / "truth.jsonl").string();
    return run;
}

} // namespace

TEST_CASE("ssl training round-trips through a remote oracle") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"probs": [0.97, 0.03]})", "application/json");
    });
    RunConfig run = oracle_pipeline_config("remote_pipeline", 3);
    run.backbone.oracle = "remote";
    run.backbone.endpoint = server.config(2).endpoint;

    TrainOutcome outcome = run_training(run, true);
    REQUIRE(outcome.rounds.size() == 2);
    CHECK(outcome.rounds[0].skipped.empty());
    // the mock always votes class 1 with high confidence
    CHECK(outcome.rounds[0].promoted_per_class[0] >= 1);
    CHECK(outcome.rounds[0].promoted_per_class[1] == 0);
}

TEST_CASE("ssl training with the synthetic oracle promotes pure labels") {
    RunConfig run = oracle_pipeline_config("synthetic_pipeline", 4);
    run.backbone.oracle = "synthetic";
    run.backbone.synthetic_concentration = 50.0;

    TrainOutcome outcome = run_training(run, true);
    REQUIRE(!outcome.rounds.empty());
    bool promoted_any = false;
    for (const auto& r : outcome.rounds) {
        REQUIRE(r.purity_per_class.has_value());
        for (int c = 0; c < 2; ++c) {
            if (r.promoted_per_class[c] > 0) {
                promoted_any = true;
                CHECK((*r.purity_per_class)[c] == 1.0);  // identity confusion
            }
        }
    }
    CHECK(promoted_any);
}
