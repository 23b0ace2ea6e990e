#include "dialograph/ssl.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <thread>

namespace dialograph {

void SslConfig::validate() const {
    if (!(ema_decay > 0.0 && ema_decay < 1.0))
        throw std::invalid_argument("ssl: ema_decay must be in (0,1)");
    if (!(margin_epsilon > 0.0)) throw std::invalid_argument("ssl: margin_epsilon must be > 0");
    if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("ssl: delta must be in (0,0.5)");
    if (!(top_percent > 0.0 && top_percent <= 1.0))
        throw std::invalid_argument("ssl: top_percent must be in (0,1]");
    if (min_count < 0) throw std::invalid_argument("ssl: min_count must be >= 0");
    if (round_period < 1) throw std::invalid_argument("ssl: round_period must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("ssl: batch_size must be >= 1");
    if (initial_tau < 0.0 || initial_tau > 1.0)
        throw std::invalid_argument("ssl: initial_tau must be in [0,1]");
}

SslState SslState::create(const SslConfig& cfg, int num_classes,
                          const std::vector<long>* labeled_class_counts) {
    cfg.validate();
    if (num_classes < 2) throw std::invalid_argument("ssl: num_classes must be >= 2");
    SslState s;
    s.delta = cfg.delta;
    s.tau = std::clamp(cfg.initial_tau, cfg.delta, 1.0 - cfg.delta);
    if (cfg.class_dist_init == ClassDistInit::LabeledFrequency && labeled_class_counts) {
        if (static_cast<int>(labeled_class_counts->size()) != num_classes)
            throw std::invalid_argument("ssl: labeled class count vector has wrong length");
        long total = 0;
        for (long c : *labeled_class_counts) total += c;
        if (total <= 0) throw std::invalid_argument("ssl: labeled pool has no class counts");
        s.class_dist.resize(num_classes);
        for (int c = 0; c < num_classes; ++c)
            s.class_dist[c] = static_cast<double>((*labeled_class_counts)[c]) / total;
    } else {
        s.class_dist = Eigen::VectorXd::Constant(num_classes, 1.0 / num_classes);
    }
    return s;
}

namespace {

void check_distribution(const Eigen::VectorXd& q, double tol) {
    if (q.minCoeff() < 0.0)
        throw std::invalid_argument("ssl: prediction has a negative component");
    if (std::abs(q.sum() - 1.0) > tol)
        throw std::invalid_argument("ssl: prediction does not sum to 1 (sum=" +
                                    std::to_string(q.sum()) + ")");
}

} // namespace

void ema_update_tau(SslState& state, const std::vector<Eigen::VectorXd>& batch, double ema_decay) {
    if (batch.empty()) return;
    double mean_max = 0.0;
    for (const auto& q : batch) mean_max += q.maxCoeff();
    mean_max /= static_cast<double>(batch.size());
    state.tau = ema_decay * state.tau + (1.0 - ema_decay) * mean_max;
    state.tau = std::clamp(state.tau, state.delta, 1.0 - state.delta);
}

void ema_update_class_dist(SslState& state, const std::vector<Eigen::VectorXd>& batch,
                           double ema_decay) {
    if (batch.empty()) return;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(state.class_dist.size());
    for (const auto& q : batch) {
        if (q.size() != state.class_dist.size())
            throw std::invalid_argument("ssl: prediction has wrong class count");
        check_distribution(q, 1e-6);
        mean += q;
    }
    mean /= static_cast<double>(batch.size());
    state.class_dist = ema_decay * state.class_dist + (1.0 - ema_decay) * mean;
    if (std::abs(state.class_dist.sum() - 1.0) > 1e-6)
        throw std::logic_error("ssl: class distribution drifted away from a distribution");
}

Eigen::VectorXd class_thresholds(const SslState& state) {
    const double max_p = state.class_dist.maxCoeff();
    Eigen::VectorXd tau_c(state.class_dist.size());
    for (long c = 0; c < state.class_dist.size(); ++c) {
        const double t = state.tau * state.class_dist[c] / (max_p + state.delta);
        tau_c[c] = std::clamp(t, state.delta, 1.0 - state.delta);
    }
    return tau_c;
}

std::optional<PseudoLabel> delta_margin_filter(const Eigen::VectorXd& probs,
                                               const Eigen::VectorXd& tau_c, double epsilon) {
    if (probs.size() != tau_c.size())
        throw std::invalid_argument("delta_margin_filter: size mismatch");
    int best = -1;
    double best_margin = 0.0;
    for (long c = 0; c < probs.size(); ++c) {
        if (probs[c] > tau_c[c]) {  // condition (a): threshold exceedance
            const double margin = probs[c] - tau_c[c];
            if (best < 0 || margin > best_margin) {  // (b): strict improvement keeps smallest index on ties
                best = static_cast<int>(c);
                best_margin = margin;
            }
        }
    }
    if (best < 0) return std::nullopt;
    if (!(best_margin > epsilon)) return std::nullopt;  // condition (c)
    PseudoLabel pl;
    pl.label = best + 1;
    pl.confidence = probs[best];
    pl.margin = best_margin;
    return pl;
}

std::vector<PseudoLabel> class_balanced_topk(const std::vector<PseudoLabel>& candidates,
                                             int num_classes, double top_percent, int min_count) {
    std::map<int, std::vector<PseudoLabel>> groups;
    for (const auto& c : candidates) {
        if (c.label < 1 || c.label > num_classes)
            throw std::invalid_argument("class_balanced_topk: label out of range");
        groups[c.label].push_back(c);
    }
    std::vector<PseudoLabel> selected;
    for (auto& [label, group] : groups) {
        std::sort(group.begin(), group.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            return a.dialogue_id < b.dialogue_id;
        });
        const auto size = static_cast<long>(group.size());
        const long floor_k =
            static_cast<long>(std::floor(top_percent * static_cast<double>(size)));
        const long k = std::max(floor_k, std::min<long>(min_count, size));
        for (long i = 0; i < k; ++i) selected.push_back(group[static_cast<size_t>(i)]);
    }
    return selected;
}

std::string RoundReport::to_json() const {
    nlohmann::json j;
    j["round"] = round;
    j["tau"] = tau;
    j["class_dist"] = class_dist;
    j["class_thresholds"] = class_thresholds;
    j["candidates_per_class"] = candidates_per_class;
    j["promoted_per_class"] = promoted_per_class;
    if (purity_per_class) {
        j["purity_per_class"] = *purity_per_class;
    } else {
        j["purity_per_class"] = nullptr;
    }
    j["mean_entropy"] = mean_entropy;
    j["relabeled"] = relabeled;
    nlohmann::json skipped_json = nlohmann::json::array();
    for (const auto& [id, err] : skipped) skipped_json.push_back({{"id", id}, {"error", err}});
    j["skipped"] = std::move(skipped_json);
    return j.dump();
}

RoundReport ssl_round(CorpusPools& pools, const PredictionOracle& oracle, SslState& state,
                      const SslConfig& cfg, const GroundTruth* sidecar, int threads) {
    cfg.validate();
    const int k_classes = pools.num_classes;
    RoundReport report;
    report.round = state.round;
    report.candidates_per_class.assign(k_classes, 0);
    report.promoted_per_class.assign(k_classes, 0);

    // (1) predict over D_U in deterministic id order, EMA-updating per batch
    std::vector<const Dialogue*> order;
    order.reserve(pools.unlabeled.size());
    for (const auto& d : pools.unlabeled) order.push_back(&d);
    std::sort(order.begin(), order.end(),
              [](const Dialogue* a, const Dialogue* b) { return a->id < b->id; });

    std::map<std::string, Eigen::VectorXd> predictions;
    double entropy_sum = 0.0;
    long entropy_n = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const size_t end = std::min(order.size(), start + cfg.batch_size);
        std::vector<std::optional<Eigen::VectorXd>> slot(end - start);
        std::vector<std::string> errors(end - start);
        auto predict_range = [&](size_t lo, size_t hi) {
            for (size_t i = lo; i < hi; ++i) {
                try {
                    slot[i] = oracle.predict(*order[start + i]);
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            }
        };
        if (threads <= 1 || end - start < 2) {
            predict_range(0, end - start);
        } else {
            const size_t n_workers = std::min<size_t>(threads, end - start);
            const size_t chunk = (end - start + n_workers - 1) / n_workers;
            std::vector<std::thread> workers;
            for (size_t w = 0; w < n_workers; ++w) {
                const size_t lo = w * chunk;
                const size_t hi = std::min(end - start, lo + chunk);
                if (lo < hi) workers.emplace_back(predict_range, lo, hi);
            }
            for (auto& t : workers) t.join();
        }

        std::vector<Eigen::VectorXd> batch;
        for (size_t i = 0; i < slot.size(); ++i) {
            const std::string& id = order[start + i]->id;
            if (!slot[i]) {
                report.skipped.emplace_back(id, errors[i]);
                continue;
            }
            try {
                check_distribution(*slot[i], 1e-6);
            } catch (const std::exception& e) {
                report.skipped.emplace_back(id, e.what());
                continue;
            }
            for (long c = 0; c < slot[i]->size(); ++c) {
                const double q = (*slot[i])[c];
                if (q > 0) entropy_sum -= q * std::log(q);
            }
            ++entropy_n;
            batch.push_back(*slot[i]);
            predictions.emplace(id, std::move(*slot[i]));
        }
        ema_update_tau(state, batch, cfg.ema_decay);
        ema_update_class_dist(state, batch, cfg.ema_decay);
    }

    // (2) thresholds for this round
    Eigen::VectorXd tau_c;
    if (cfg.threshold_mode == ThresholdMode::GlobalOnly) {
        tau_c = Eigen::VectorXd::Constant(k_classes, state.tau);
    } else {
        tau_c = class_thresholds(state);
    }

    // (3) delta-margin filter
    std::vector<PseudoLabel> candidates;
    for (const auto* d : order) {
        auto it = predictions.find(d->id);
        if (it == predictions.end()) continue;
        auto accepted = delta_margin_filter(it->second, tau_c, cfg.margin_epsilon);
        if (accepted) {
            accepted->dialogue_id = d->id;
            report.candidates_per_class[accepted->label - 1] += 1;
            candidates.push_back(std::move(*accepted));
        }
    }

    // (4) class-balanced top-K
    std::vector<PseudoLabel> selected =
        class_balanced_topk(candidates, k_classes, cfg.top_percent, cfg.min_count);

    // (5) promotion
    std::vector<std::vector<long>> purity_counts(k_classes, std::vector<long>(2, 0));
    bool purity_known = sidecar != nullptr;
    std::set<std::string> promoted_this_round;
    for (const auto& pl : selected) promoted_this_round.insert(pl.dialogue_id);
    for (const auto& pl : selected) {
        if (state.promoted_ids.count(pl.dialogue_id))
            throw std::logic_error("ssl_round: dialogue '" + pl.dialogue_id +
                                   "' promoted twice");
        auto it = std::find_if(pools.unlabeled.begin(), pools.unlabeled.end(),
                               [&](const Dialogue& d) { return d.id == pl.dialogue_id; });
        if (it == pools.unlabeled.end())
            throw std::logic_error("ssl_round: selected id not in unlabeled pool");
        Dialogue promoted = std::move(*it);
        pools.unlabeled.erase(it);
        promoted.label = pl.label;
        promoted.pseudo_labeled = true;
        pools.labeled.push_back(std::move(promoted));
        state.promoted_ids.insert(pl.dialogue_id);
        report.promoted_per_class[pl.label - 1] += 1;
        if (sidecar) {
            auto truth_it = sidecar->find(pl.dialogue_id);
            if (truth_it == sidecar->end()) {
                purity_known = false;
            } else {
                purity_counts[pl.label - 1][0] += 1;
                if (truth_it->second == pl.label) purity_counts[pl.label - 1][1] += 1;
            }
        }
    }

    // optional re-scoring of earlier promotions (permanent labels by default)
    if (cfg.rescore_promoted) {
        std::vector<Dialogue*> promoted;
        for (auto& d : pools.labeled)
            if (d.pseudo_labeled && !promoted_this_round.count(d.id)) promoted.push_back(&d);
        std::sort(promoted.begin(), promoted.end(),
                  [](const Dialogue* a, const Dialogue* b) { return a->id < b->id; });
        for (Dialogue* d : promoted) {
            Eigen::VectorXd q;
            try {
                q = oracle.predict(*d);
                check_distribution(q, 1e-6);
            } catch (const std::exception& e) {
                report.skipped.emplace_back(d->id, e.what());
                continue;
            }
            auto accepted = delta_margin_filter(q, tau_c, cfg.margin_epsilon);
            if (accepted && accepted->label != *d->label) {
                d->label = accepted->label;
                report.relabeled += 1;
            }
        }
    }

    report.tau = state.tau;
    report.class_dist.assign(state.class_dist.data(),
                             state.class_dist.data() + state.class_dist.size());
    report.class_thresholds.assign(tau_c.data(), tau_c.data() + tau_c.size());
    report.mean_entropy = entropy_n > 0 ? entropy_sum / static_cast<double>(entropy_n) : 0.0;
    if (purity_known) {
        std::vector<double> purity(k_classes, 0.0);
        for (int c = 0; c < k_classes; ++c)
            purity[c] = purity_counts[c][0] > 0 ? static_cast<double>(purity_counts[c][1]) /
                                                      static_cast<double>(purity_counts[c][0])
                                                : 0.0;
        report.purity_per_class = std::move(purity);
    }

    RoundHistoryEntry entry;
    entry.tau = state.tau;
    entry.class_dist = state.class_dist;
    entry.promoted_per_class = report.promoted_per_class;
    state.history.push_back(std::move(entry));
    state.round += 1;
    report.round = state.round;
    return report;
}

} // namespace dialograph
