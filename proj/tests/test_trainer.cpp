#include <doctest.h>

#include "dialograph/corpus.hpp"
#include "dialograph/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace dialograph;

namespace {

ModelConfig tiny_model(int d_h, int k) {
    ModelConfig cfg;
    cfg.input_dim = d_h;
    cfg.speaker_dim = 4;
    cfg.model_dim = 8;
    cfg.num_heads = 4;
    cfg.num_layers = 1;
    cfg.num_classes = k;
    cfg.num_speaker_roles = 2;
    cfg.dropout = 0.0;
    return cfg;
}

} // namespace

TEST_CASE("cross entropy of the exact class is zero") {
    Eigen::VectorXd q(3);
    q << 1.0, 0.0, 0.0;
    CHECK(cross_entropy(q, 1) == doctest::Approx(0.0));
}

TEST_CASE("cross entropy of the uniform distribution is ln K") {
    Eigen::VectorXd q = Eigen::VectorXd::Constant(4, 0.25);
    CHECK(cross_entropy(q, 3) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy clamps vanishing probabilities") {
    Eigen::VectorXd q(2);
    q << 1.0, 0.0;
    CHECK(cross_entropy(q, 2) == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
    CHECK_THROWS_AS(cross_entropy(q, 3), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(q, 0), std::invalid_argument);
}

TEST_CASE("loss is non-negative and zero only at certainty") {
    Eigen::VectorXd q(3);
    q << 0.2, 0.5, 0.3;
    for (int c = 1; c <= 3; ++c) CHECK(cross_entropy(q, c) > 0.0);
}

TEST_CASE("cosine warmup schedule endpoints and junction") {
    const long total = 100;
    const double base = 0.5;
    CHECK(cosine_warmup_lr(0, total, base, 0.1) == 0.0);
    CHECK(cosine_warmup_lr(10, total, base, 0.1) == doctest::Approx(base));  // ramp peak
    CHECK(cosine_warmup_lr(total, total, base, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
    // ramp is linear
    CHECK(cosine_warmup_lr(5, total, base, 0.1) == doctest::Approx(base * 0.5));
    // cosine midpoint
    CHECK(cosine_warmup_lr(55, total, base, 0.1) == doctest::Approx(base * 0.5));
    // monotone decay after warmup
    double prev = cosine_warmup_lr(10, total, base, 0.1);
    for (long s = 11; s <= total; ++s) {
        const double lr = cosine_warmup_lr(s, total, base, 0.1);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("optimizer leaves parameters alone with zero gradients and zero decay") {
    ModelConfig cfg = tiny_model(4, 2);
    ModelParams params = init_params(cfg, 1);
    ModelParams before = params;
    ModelParams grads = zeros_like(params);
    OptimizerState opt = OptimizerState::create(params);
    opt.weight_decay = 0.0;
    optimizer_step(params, grads, opt, 0.1);
    auto a = tensor_refs(params);
    auto b = tensor_refs(before);
    for (size_t i = 0; i < a.size(); ++i)
        for (long k = 0; k < a[i].size(); ++k) CHECK(a[i].data[k] == b[i].data[k]);
}

TEST_CASE("first optimizer step matches the hand-derived update") {
    ModelConfig cfg = tiny_model(4, 2);
    ModelParams params = init_params(cfg, 1);
    OptimizerState opt = OptimizerState::create(params);
    const double lr = 0.01;
    const double theta0 = params.w_proj(0, 0);

    ModelParams grads = zeros_like(params);
    grads.w_proj(0, 0) = 1.0;
    optimizer_step(params, grads, opt, lr);

    // bias-corrected m-hat = v-hat = 1 on the first step
    const double expected = theta0 - lr * (1.0 + opt.weight_decay * theta0);
    CHECK(params.w_proj(0, 0) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("weight decay is decoupled: zero-gradient parameters decay geometrically") {
    ModelConfig cfg = tiny_model(4, 2);
    ModelParams params = init_params(cfg, 2);
    OptimizerState opt = OptimizerState::create(params);
    const double lr = 0.05;
    const double theta0 = params.w_cls(0, 0);
    ModelParams grads = zeros_like(params);
    for (int step = 0; step < 7; ++step) optimizer_step(params, grads, opt, lr);
    const double factor = std::pow(1.0 - lr * opt.weight_decay, 7);
    CHECK(params.w_cls(0, 0) == doctest::Approx(theta0 * factor).epsilon(1e-12));
}

TEST_CASE("optimizer with lr 0 is the identity") {
    ModelConfig cfg = tiny_model(4, 2);
    ModelParams params = init_params(cfg, 3);
    ModelParams before = params;
    ModelParams grads = zeros_like(params);
    grads.w_proj.setConstant(0.7);
    OptimizerState opt = OptimizerState::create(params);
    optimizer_step(params, grads, opt, 0.0);
    CHECK(params.w_proj == before.w_proj);
}

TEST_CASE("non-finite gradients abort the step and name the tensor") {
    ModelConfig cfg = tiny_model(4, 2);
    ModelParams params = init_params(cfg, 4);
    ModelParams grads = zeros_like(params);
    grads.w_cls(0, 0) = std::numeric_limits<double>::quiet_NaN();
    OptimizerState opt = OptimizerState::create(params);
    try {
        optimizer_step(params, grads, opt, 0.1);
        FAIL("expected runtime_error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("w_cls") != std::string::npos);
    }
}

namespace {

struct TrainSetup {
    CorpusPools pools;
    ModelConfig model;
    TrainConfig train;
    GraphConfig graph;
};

TrainSetup make_setup(uint64_t seed, int epochs) {
    SynthSpec spec;
    spec.num_classes = 2;
    spec.feature_dim = 4;
    spec.dialogues_per_class = 20;
    spec.class_separation = 6.0;
    spec.noise_std = 0.5;
    spec.utterance_min = 2;
    spec.utterance_max = 5;
    spec.seed = seed;

    TrainSetup s;
    s.pools = generate_synthetic(spec).pools;
    s.model = tiny_model(4, 2);
    s.train.base_lr = 5e-3;
    s.train.epochs = epochs;
    s.train.batch_size = 8;
    s.train.seed = seed;
    return s;
}

std::vector<double> run_epoch_losses(TrainSetup s) {
    ModelParams params = init_params(s.model, s.train.seed);
    TrainerState state;
    state.opt = OptimizerState::create(params);
    state.dropout_rng = Rng(mix_seed(s.train.seed, 0xd70));
    state.theta = s.graph.similarity_threshold;
    const long batches =
        static_cast<long>((s.pools.labeled.size() + s.train.batch_size - 1) / s.train.batch_size);
    state.total_steps = batches * s.train.epochs;

    GraphCache graphs;
    std::vector<double> losses;
    for (int epoch = 0; epoch < s.train.epochs; ++epoch) {
        rebuild_epoch_graphs(s.pools.labeled, params, s.model, s.graph, epoch, state, graphs);
        EpochStats stats =
            train_epoch(s.pools, params, state, s.train, s.model, s.graph, epoch, graphs);
        losses.push_back(stats.loss);

        // the emitted lr trace is exactly the pure schedule function
        for (size_t b = 0; b < stats.lr_trace.size(); ++b) {
            const long step = static_cast<long>(epoch) * batches + static_cast<long>(b);
            CHECK(stats.lr_trace[b] ==
                  cosine_warmup_lr(step, state.total_steps, s.train.base_lr,
                                   s.train.warmup_fraction));
        }
    }
    return losses;
}

} // namespace

TEST_CASE("training is deterministic for a fixed seed") {
    TrainSetup s = make_setup(5, 2);

    auto run_params = [&](TrainSetup setup) {
        ModelParams params = init_params(setup.model, setup.train.seed);
        TrainerState state;
        state.opt = OptimizerState::create(params);
        state.dropout_rng = Rng(mix_seed(setup.train.seed, 0xd70));
        state.theta = setup.graph.similarity_threshold;
        state.total_steps = 100;
        GraphCache graphs;
        for (int epoch = 0; epoch < setup.train.epochs; ++epoch) {
            rebuild_epoch_graphs(setup.pools.labeled, params, setup.model, setup.graph, epoch,
                                 state, graphs);
            train_epoch(setup.pools, params, state, setup.train, setup.model, setup.graph, epoch,
                        graphs);
        }
        return params;
    };

    ModelParams a = run_params(s);
    ModelParams b = run_params(s);
    auto ra = tensor_refs(a);
    auto rb = tensor_refs(b);
    for (size_t i = 0; i < ra.size(); ++i)
        for (long k = 0; k < ra[i].size(); ++k) REQUIRE(ra[i].data[k] == rb[i].data[k]);
}

TEST_CASE("median epoch loss decreases on a separable corpus") {
    std::vector<std::vector<double>> losses_by_seed;
    for (uint64_t seed = 1; seed <= 5; ++seed)
        losses_by_seed.push_back(run_epoch_losses(make_setup(seed, 5)));

    auto median_at = [&](size_t epoch) {
        std::vector<double> v;
        for (const auto& run : losses_by_seed) v.push_back(run[epoch]);
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    for (size_t e = 1; e < 5; ++e) CHECK(median_at(e) < median_at(e - 1));
}

TEST_CASE("train_epoch refuses an empty labeled pool") {
    TrainSetup s = make_setup(1, 1);
    s.pools.labeled.clear();
    ModelParams params = init_params(s.model, 0);
    TrainerState state;
    state.opt = OptimizerState::create(params);
    GraphCache graphs;
    CHECK_THROWS_AS(
        train_epoch(s.pools, params, state, s.train, s.model, s.graph, 0, graphs),
        std::invalid_argument);
}

TEST_CASE("metrics arithmetic: perfect predictions") {
    std::vector<int> truth = {1, 2, 3, 4, 1, 2};
    Metrics m = metrics_from_predictions(truth, truth, 4);
    CHECK(m.accuracy == doctest::Approx(1.0));
    for (double f : m.f1) CHECK(f == doctest::Approx(1.0));
    CHECK(m.macro_f1 == doctest::Approx(1.0));
    CHECK(m.weighted_f1 == doctest::Approx(1.0));
}

TEST_CASE("metrics arithmetic: collapsed predictions on balanced truth") {
    std::vector<int> truth, predicted;
    for (int c = 1; c <= 4; ++c)
        for (int n = 0; n < 10; ++n) {
            truth.push_back(c);
            predicted.push_back(1);
        }
    Metrics m = metrics_from_predictions(truth, predicted, 4);
    CHECK(m.accuracy == doctest::Approx(0.25));
    CHECK(m.f1[0] == doctest::Approx(0.4));  // 2 * 0.25 * 1 / 1.25
    CHECK(m.f1[1] == doctest::Approx(0.0));
    CHECK(m.f1[2] == doctest::Approx(0.0));
    CHECK(m.f1[3] == doctest::Approx(0.0));
    CHECK(m.precision[0] == doctest::Approx(0.25));
    CHECK(m.recall[0] == doctest::Approx(1.0));
}

TEST_CASE("weighted F1 equals macro F1 on perfectly balanced classes") {
    std::vector<int> truth, predicted;
    Rng rng(77);
    for (int c = 1; c <= 3; ++c)
        for (int n = 0; n < 12; ++n) {
            truth.push_back(c);
            predicted.push_back(1 + static_cast<int>(rng.uniform_int(3)));
        }
    Metrics m = metrics_from_predictions(truth, predicted, 3);
    CHECK(m.weighted_f1 == doctest::Approx(m.macro_f1).epsilon(1e-12));
}

TEST_CASE("metrics are invariant to evaluation order") {
    std::vector<int> truth = {1, 2, 2, 3, 1, 3, 2};
    std::vector<int> predicted = {1, 2, 3, 3, 2, 3, 2};
    Metrics a = metrics_from_predictions(truth, predicted, 3);
    std::vector<size_t> perm = {6, 0, 4, 2, 5, 1, 3};
    std::vector<int> t2, p2;
    for (size_t i : perm) {
        t2.push_back(truth[i]);
        p2.push_back(predicted[i]);
    }
    Metrics b = metrics_from_predictions(t2, p2, 3);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.macro_f1 == b.macro_f1);
    CHECK(a.weighted_f1 == b.weighted_f1);
    CHECK(a.confusion == b.confusion);
}

TEST_CASE("accuracy equals the confusion trace over the total") {
    std::vector<int> truth = {1, 1, 2, 2, 2};
    std::vector<int> predicted = {1, 2, 2, 2, 1};
    Metrics m = metrics_from_predictions(truth, predicted, 2);
    long trace = m.confusion[0][0] + m.confusion[1][1];
    CHECK(m.accuracy == doctest::Approx(static_cast<double>(trace) / m.total));
}
