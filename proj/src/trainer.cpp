#include "dialograph/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace dialograph {

OptimizerState OptimizerState::create(const ModelParams& params) {
    OptimizerState s;
    s.first_moment = zeros_like(params);
    s.second_moment = zeros_like(params);
    return s;
}

void TrainConfig::validate() const {
    if (!(base_lr > 0.0) || !std::isfinite(base_lr))
        throw std::invalid_argument("train: base_lr must be positive");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw std::invalid_argument("train: warmup_fraction must be in [0,1)");
    if (pseudo_label_weight < 0.0)
        throw std::invalid_argument("train: pseudo_label_weight must be >= 0");
}

double cross_entropy(const Eigen::VectorXd& probs, int label) {
    if (label < 1 || label > probs.size())
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range 1.." + std::to_string(probs.size()));
    return -std::log(std::max(probs[label - 1], 1e-12));
}

Eigen::VectorXd cross_entropy_grad(const Eigen::VectorXd& probs, int label) {
    if (label < 1 || label > probs.size())
        throw std::invalid_argument("cross_entropy_grad: label out of range");
    Eigen::VectorXd g = Eigen::VectorXd::Zero(probs.size());
    const double q = probs[label - 1];
    if (q > 1e-12) g[label - 1] = -1.0 / q;  // clamped region has zero slope
    return g;
}

double cosine_warmup_lr(long step, long total_steps, double base_lr, double warmup_fraction) {
    if (total_steps <= 0) return 0.0;
    step = std::clamp(step, 0L, total_steps);
    long warm = static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
    if (total_steps == warm) return base_lr;
    const double progress =
        static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                    double lr) {
    auto p = tensor_refs(params);
    auto g = tensor_refs(const_cast<ModelParams&>(grads));
    auto m = tensor_refs(state.first_moment);
    auto v = tensor_refs(state.second_moment);
    if (p.size() != g.size() || p.size() != m.size())
        throw std::invalid_argument("optimizer_step: tensor layout mismatch");

    for (const auto& ref : g) {
        for (long k = 0; k < ref.size(); ++k) {
            if (!std::isfinite(ref.data[k]))
                throw std::runtime_error("optimizer_step: non-finite gradient in tensor '" +
                                         ref.name + "'");
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i].size() != g[i].size())
            throw std::invalid_argument("optimizer_step: shape mismatch on " + p[i].name);
        for (long k = 0; k < p[i].size(); ++k) {
            double& mm = m[i].data[k];
            double& vv = v[i].data[k];
            const double grad = g[i].data[k];
            mm = state.beta1 * mm + (1.0 - state.beta1) * grad;
            vv = state.beta2 * vv + (1.0 - state.beta2) * grad * grad;
            const double mhat = mm / bc1;
            const double vhat = vv / bc2;
            p[i].data[k] -=
                lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * p[i].data[k]);
        }
    }
}

void rebuild_epoch_graphs(const std::vector<Dialogue>& dialogues, const ModelParams& params,
                          const ModelConfig& cfg, const GraphConfig& graph_cfg, int epoch,
                          TrainerState& state, GraphCache& graphs) {
    std::vector<double> observed;
    GraphConfig live = graph_cfg;
    live.similarity_threshold = state.theta;

    for (const auto& d : dialogues) {
        const bool have = graphs.count(d.id) > 0;
        if (have && epoch > 0 && !graph_cfg.rebuild_cross_edges_each_epoch) continue;
        auto speaker_idx = assign_speaker_indices(d, cfg.num_speaker_roles);
        Eigen::MatrixXd x0 = init_node_features(d, speaker_idx, params, cfg);
        graphs[d.id] = build_graph(d, x0, live, cfg.num_speaker_roles);
        if (graph_cfg.theta_mode == ThetaMode::EmaQuantile) {
            for (int i = 0; i < x0.rows(); ++i)
                for (int j = 0; j < i; ++j)
                    observed.push_back(
                        cosine_similarity(x0.row(j).transpose(), x0.row(i).transpose()));
        }
    }
    state.theta = update_theta(graph_cfg, state.theta, observed);
}

EpochStats train_epoch(const CorpusPools& pools, ModelParams& params, TrainerState& state,
                       const TrainConfig& cfg, const ModelConfig& model_cfg,
                       const GraphConfig& /*graph_cfg: graphs arrive prebuilt*/, int epoch,
                       const GraphCache& graphs) {
    cfg.validate();
    if (pools.labeled.empty()) throw std::invalid_argument("train_epoch: labeled pool is empty");

    std::vector<const Dialogue*> order;
    order.reserve(pools.labeled.size());
    for (const auto& d : pools.labeled) order.push_back(&d);
    std::sort(order.begin(), order.end(),
              [](const Dialogue* a, const Dialogue* b) { return a->id < b->id; });
    Rng shuffle_rng(mix_seed(cfg.seed, 0x1000 + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    EpochStats stats;
    double loss_sum = 0.0;
    double weight_sum = 0.0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const size_t end = std::min(order.size(), start + cfg.batch_size);
        const double batch_n = static_cast<double>(end - start);

        ModelParams grads = zeros_like(params);
        for (size_t i = start; i < end; ++i) {
            const Dialogue& d = *order[i];
            auto it = graphs.find(d.id);
            if (it == graphs.end())
                throw std::runtime_error("train_epoch: no graph for dialogue '" + d.id +
                                         "' (rebuild_epoch_graphs not run?)");
            const double w = d.pseudo_labeled ? cfg.pseudo_label_weight : 1.0;
            ForwardResult fr = forward_with_graph(d, it->second, params, model_cfg, RunMode::Train,
                                                  &state.dropout_rng);
            loss_sum += w * cross_entropy(fr.probs, *d.label);
            weight_sum += 1.0;
            Eigen::VectorXd dq = cross_entropy_grad(fr.probs, *d.label) * (w / batch_n);
            ModelParams sample_grads = backward(fr.cache, dq, params, model_cfg);
            accumulate(grads, sample_grads, 1.0);
        }

        const double lr =
            cosine_warmup_lr(state.opt.step, state.total_steps, cfg.base_lr, cfg.warmup_fraction);
        stats.lr_trace.push_back(lr);
        optimizer_step(params, grads, state.opt, lr);
    }

    stats.loss = weight_sum > 0 ? loss_sum / weight_sum : 0.0;
    return stats;
}

Metrics metrics_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 int num_classes) {
    if (truth.size() != predicted.size())
        throw std::invalid_argument("metrics: truth/prediction count mismatch");
    Metrics m;
    m.confusion.assign(num_classes, std::vector<long>(num_classes, 0));
    m.precision.assign(num_classes, 0.0);
    m.recall.assign(num_classes, 0.0);
    m.f1.assign(num_classes, 0.0);

    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 1 || truth[i] > num_classes || predicted[i] < 1 ||
            predicted[i] > num_classes)
            throw std::invalid_argument("metrics: class index out of range");
        m.confusion[truth[i] - 1][predicted[i] - 1] += 1;
    }
    m.total = static_cast<long>(truth.size());

    long correct = 0;
    for (int c = 0; c < num_classes; ++c) correct += m.confusion[c][c];
    m.accuracy = m.total > 0 ? static_cast<double>(correct) / static_cast<double>(m.total) : 0.0;

    double weighted = 0.0;
    double macro = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        long support = 0, predicted_c = 0;
        for (int k = 0; k < num_classes; ++k) {
            support += m.confusion[c][k];
            predicted_c += m.confusion[k][c];
        }
        const long tp = m.confusion[c][c];
        m.precision[c] = predicted_c > 0 ? static_cast<double>(tp) / predicted_c : 0.0;
        m.recall[c] = support > 0 ? static_cast<double>(tp) / support : 0.0;
        m.f1[c] = (m.precision[c] + m.recall[c]) > 0
                      ? 2.0 * m.precision[c] * m.recall[c] / (m.precision[c] + m.recall[c])
                      : 0.0;
        macro += m.f1[c];
        if (m.total > 0)
            weighted += (static_cast<double>(support) / static_cast<double>(m.total)) * m.f1[c];
    }
    m.macro_f1 = macro / num_classes;
    m.weighted_f1 = weighted;
    return m;
}

Metrics evaluate(const std::vector<Dialogue>& dialogues, const GroundTruth* sidecar,
                 const ModelParams& params, const ModelConfig& cfg, const GraphConfig& graph_cfg,
                 int num_classes, int threads) {
    std::vector<int> truth(dialogues.size());
    for (size_t i = 0; i < dialogues.size(); ++i) {
        if (dialogues[i].label) {
            truth[i] = *dialogues[i].label;
        } else if (sidecar) {
            auto it = sidecar->find(dialogues[i].id);
            if (it == sidecar->end())
                throw std::invalid_argument("evaluate: dialogue '" + dialogues[i].id +
                                            "' has no label and no sidecar entry");
            truth[i] = it->second;
        } else {
            throw std::invalid_argument("evaluate: dialogue '" + dialogues[i].id +
                                        "' has no ground-truth label");
        }
    }

    std::vector<int> predicted(dialogues.size(), 0);
    auto predict_range = [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            ForwardResult fr = forward(dialogues[i], params, cfg, graph_cfg, RunMode::Eval);
            int best = 0;
            for (int c = 1; c < num_classes; ++c)
                if (fr.probs[c] > fr.probs[best]) best = c;  // ties keep the smaller index
            predicted[i] = best + 1;
        }
    };
    if (threads <= 1 || dialogues.size() < 2) {
        predict_range(0, dialogues.size());
    } else {
        const size_t n_workers = std::min<size_t>(threads, dialogues.size());
        std::vector<std::thread> workers;
        const size_t chunk = (dialogues.size() + n_workers - 1) / n_workers;
        for (size_t w = 0; w < n_workers; ++w) {
            const size_t lo = w * chunk;
            const size_t hi = std::min(dialogues.size(), lo + chunk);
            if (lo < hi) workers.emplace_back(predict_range, lo, hi);
        }
        for (auto& t : workers) t.join();
    }

    return metrics_from_predictions(truth, predicted, num_classes);
}

std::string metrics_to_json(const Metrics& m) {
    nlohmann::json j;
    j["accuracy"] = m.accuracy;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["macro_f1"] = m.macro_f1;
    j["weighted_f1"] = m.weighted_f1;
    j["confusion"] = m.confusion;
    j["total"] = m.total;
    return j.dump();
}

} // namespace dialograph
