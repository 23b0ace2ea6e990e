#include "dialograph/mrdan.hpp"

#include <cmath>
#include <stdexcept>

namespace dialograph {

void ModelConfig::validate() const {
    if (input_dim < 1) throw std::invalid_argument("model: input_dim must be >= 1");
    if (speaker_dim < 1) throw std::invalid_argument("model: speaker_dim must be >= 1");
    if (model_dim < 1) throw std::invalid_argument("model: model_dim must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
    if (num_speaker_roles < 1) throw std::invalid_argument("model: num_speaker_roles must be >= 1");
    if (num_layers < 0) throw std::invalid_argument("model: num_layers must be >= 0");
    if (num_heads < 1 || num_heads % kNumEdgeTypes != 0)
        throw std::invalid_argument("model: num_heads must be a positive multiple of 4");
    if (model_dim % num_heads != 0)
        throw std::invalid_argument("model: model_dim must be divisible by num_heads");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("model: dropout must be in [0,1)");
    if (layernorm_eps <= 0.0) throw std::invalid_argument("model: layernorm_eps must be > 0");
}

std::vector<TensorRef> tensor_refs(ModelParams& p) {
    std::vector<TensorRef> refs;
    auto add_mat = [&](const std::string& name, Eigen::MatrixXd& m) {
        refs.push_back({name, m.data(), m.rows(), m.cols()});
    };
    auto add_vec = [&](const std::string& name, Eigen::VectorXd& v) {
        refs.push_back({name, v.data(), v.size(), 1});
    };
    add_mat("w_proj", p.w_proj);
    add_mat("speaker_table", p.speaker_table);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        for (size_t h = 0; h < layer.w_query.size(); ++h)
            add_mat(prefix + "head" + std::to_string(h) + ".w_query", layer.w_query[h]);
        for (size_t h = 0; h < layer.w_key.size(); ++h)
            add_mat(prefix + "head" + std::to_string(h) + ".w_key", layer.w_key[h]);
        for (size_t h = 0; h < layer.w_value.size(); ++h)
            add_mat(prefix + "head" + std::to_string(h) + ".w_value", layer.w_value[h]);
        add_mat(prefix + "w_out", layer.w_out);
        add_vec(prefix + "ln_gain", layer.ln_gain);
        add_vec(prefix + "ln_bias", layer.ln_bias);
    }
    add_mat("w_cls", p.w_cls);
    add_vec("b_cls", p.b_cls);
    return refs;
}

namespace {

ModelParams allocate_params(const ModelConfig& cfg) {
    ModelParams p;
    p.w_proj.setZero(cfg.input_dim + cfg.speaker_dim, cfg.model_dim);
    p.speaker_table.setZero(cfg.num_speaker_roles, cfg.speaker_dim);
    p.layers.resize(cfg.num_layers);
    for (auto& layer : p.layers) {
        layer.w_query.assign(cfg.num_heads, Eigen::MatrixXd::Zero(cfg.head_dim(), cfg.model_dim));
        layer.w_key.assign(cfg.num_heads, Eigen::MatrixXd::Zero(cfg.head_dim(), cfg.model_dim));
        layer.w_value.assign(cfg.num_heads, Eigen::MatrixXd::Zero(cfg.head_dim(), cfg.model_dim));
        layer.w_out.setZero(cfg.model_dim, cfg.model_dim);
        layer.ln_gain.setZero(cfg.model_dim);
        layer.ln_bias.setZero(cfg.model_dim);
    }
    p.w_cls.setZero(cfg.num_classes, cfg.model_dim);
    p.b_cls.setZero(cfg.num_classes);
    return p;
}

// Glorot-uniform fill in row-major element order, independent of Eigen's
// storage layout so checkpoints stay reproducible.
void fill_uniform(Eigen::MatrixXd& m, double fan_in, double fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-bound, bound);
}

} // namespace

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams p = allocate_params(cfg);
    Rng rng(mix_seed(seed, 0x6d7264616eULL));

    fill_uniform(p.w_proj, cfg.input_dim + cfg.speaker_dim, cfg.model_dim, rng);
    for (long i = 0; i < p.speaker_table.rows(); ++i)
        for (long j = 0; j < p.speaker_table.cols(); ++j)
            p.speaker_table(i, j) = rng.normal(0.0, 0.02);
    for (auto& layer : p.layers) {
        for (auto& w : layer.w_query) fill_uniform(w, cfg.model_dim, cfg.head_dim(), rng);
        for (auto& w : layer.w_key) fill_uniform(w, cfg.model_dim, cfg.head_dim(), rng);
        for (auto& w : layer.w_value) fill_uniform(w, cfg.model_dim, cfg.head_dim(), rng);
        fill_uniform(layer.w_out, cfg.model_dim, cfg.model_dim, rng);
        layer.ln_gain.setOnes();
        layer.ln_bias.setZero();
    }
    fill_uniform(p.w_cls, cfg.model_dim, cfg.num_classes, rng);
    p.b_cls.setZero();
    return p;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    for (auto& ref : tensor_refs(z)) std::fill(ref.data, ref.data + ref.size(), 0.0);
    return z;
}

void accumulate(ModelParams& dst, const ModelParams& src, double scale) {
    auto d = tensor_refs(dst);
    auto s = tensor_refs(const_cast<ModelParams&>(src));
    if (d.size() != s.size()) throw std::invalid_argument("accumulate: tensor count mismatch");
    for (size_t i = 0; i < d.size(); ++i) {
        if (d[i].size() != s[i].size())
            throw std::invalid_argument("accumulate: shape mismatch on " + d[i].name);
        for (long k = 0; k < d[i].size(); ++k) d[i].data[k] += scale * s[i].data[k];
    }
}

Eigen::MatrixXd init_node_features(const Dialogue& dialogue, const std::vector<int>& speaker_idx,
                                   const ModelParams& params, const ModelConfig& cfg) {
    const int m = static_cast<int>(dialogue.utterances.size());
    if (static_cast<int>(speaker_idx.size()) != m)
        throw std::invalid_argument("init_node_features: speaker index count mismatch");
    Eigen::MatrixXd concat(m, cfg.input_dim + cfg.speaker_dim);
    for (int i = 0; i < m; ++i) {
        const auto& f = dialogue.utterances[i].feature;
        if (static_cast<int>(f.size()) != cfg.input_dim)
            throw std::invalid_argument("dialogue '" + dialogue.id + "' utterance feature dim " +
                                        std::to_string(f.size()) + " != configured d_h " +
                                        std::to_string(cfg.input_dim));
        for (int k = 0; k < cfg.input_dim; ++k) concat(i, k) = f[k];
        concat.row(i).tail(cfg.speaker_dim) = params.speaker_table.row(speaker_idx[i]);
    }
    return concat * params.w_proj;
}

Eigen::VectorXd attention_scores(const Eigen::VectorXd& x_i,
                                 const std::vector<Eigen::VectorXd>& neighbors,
                                 const Eigen::MatrixXd& w_query, const Eigen::MatrixXd& w_key) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(w_query.rows()));
    const Eigen::VectorXd q = w_query * x_i;
    Eigen::VectorXd scores(neighbors.size());
    for (size_t j = 0; j < neighbors.size(); ++j)
        scores[static_cast<long>(j)] = q.dot(w_key * neighbors[j]) * scale;
    return scores;
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
    Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp();
    return e / e.sum();
}

} // namespace

Eigen::MatrixXd layer_forward(const Eigen::MatrixXd& nodes, const DialogueGraph& graph,
                              const LayerParams& layer, const ModelConfig& cfg, RunMode mode,
                              Rng* rng, LayerCache* cache) {
    const int m = static_cast<int>(nodes.rows());
    if (graph.num_nodes != m)
        throw std::invalid_argument("layer_forward: graph/node-count mismatch");
    const int d = cfg.model_dim;
    const int d_k = cfg.head_dim();
    const int heads_per_type = cfg.heads_per_type();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));

    if (cache) {
        cache->input = nodes;
        cache->alpha.assign(m, {});
    }

    Eigen::MatrixXd concat = Eigen::MatrixXd::Zero(m, d);
    for (int i = 0; i < m; ++i) {
        for (int t = 0; t < kNumEdgeTypes; ++t) {
            const auto& nbrs = graph.typed_neighbors[t][i];
            if (nbrs.empty()) continue;  // z_{i,t} stays zero
            Eigen::MatrixXd alpha_block(heads_per_type, static_cast<long>(nbrs.size()));
            for (int hl = 0; hl < heads_per_type; ++hl) {
                const int h = t * heads_per_type + hl;
                const Eigen::VectorXd q = layer.w_query[h] * nodes.row(i).transpose();
                Eigen::VectorXd scores(static_cast<long>(nbrs.size()));
                for (size_t jn = 0; jn < nbrs.size(); ++jn)
                    scores[static_cast<long>(jn)] =
                        q.dot(layer.w_key[h] * nodes.row(nbrs[jn]).transpose()) * scale;
                const Eigen::VectorXd alpha = softmax(scores);
                alpha_block.row(hl) = alpha.transpose();
                Eigen::VectorXd z = Eigen::VectorXd::Zero(d_k);
                for (size_t jn = 0; jn < nbrs.size(); ++jn)
                    z += alpha[static_cast<long>(jn)] *
                         (layer.w_value[h] * nodes.row(nbrs[jn]).transpose());
                concat.row(i).segment(h * d_k, d_k) = z.transpose();
            }
            if (cache) cache->alpha[i][t] = std::move(alpha_block);
        }
    }

    Eigen::MatrixXd projected = concat * layer.w_out.transpose();

    Eigen::MatrixXd drop_mask;
    if (mode == RunMode::Train && cfg.dropout > 0.0) {
        if (!rng) throw std::invalid_argument("layer_forward: train-mode dropout needs an rng");
        drop_mask.resize(m, d);
        const double keep = 1.0 - cfg.dropout;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j)
                drop_mask(i, j) = (rng->uniform01() < keep) ? 1.0 / keep : 0.0;
        projected = projected.cwiseProduct(drop_mask);
    } else {
        drop_mask = Eigen::MatrixXd::Ones(m, d);
    }

    Eigen::MatrixXd pre_norm = nodes + projected;
    Eigen::MatrixXd out(m, d);
    for (int i = 0; i < m; ++i) {
        const Eigen::RowVectorXd r = pre_norm.row(i);
        const double mean = r.mean();
        const double var = (r.array() - mean).square().mean();
        const Eigen::RowVectorXd normed = (r.array() - mean) / std::sqrt(var + cfg.layernorm_eps);
        out.row(i) =
            normed.cwiseProduct(layer.ln_gain.transpose()) + layer.ln_bias.transpose();
    }

    if (cache) {
        cache->concat = std::move(concat);
        cache->drop_mask = std::move(drop_mask);
        cache->pre_norm = std::move(pre_norm);
    }
    return out;
}

Eigen::VectorXd mean_pool(const Eigen::MatrixXd& nodes) {
    if (nodes.rows() < 1) throw std::invalid_argument("mean_pool: empty node matrix");
    return nodes.colwise().mean().transpose();
}

Eigen::VectorXd classify(const Eigen::VectorXd& pooled, const ModelParams& params) {
    Eigen::VectorXd probs = softmax(params.w_cls * pooled + params.b_cls);
    return probs / probs.sum();
}

ForwardResult forward_with_graph(const Dialogue& dialogue, const DialogueGraph& graph,
                                 const ModelParams& params, const ModelConfig& cfg, RunMode mode,
                                 Rng* rng) {
    ForwardResult result;
    const bool caching = (mode == RunMode::Train);

    Eigen::MatrixXd nodes = init_node_features(dialogue, graph.speaker_index, params, cfg);
    if (caching) {
        result.cache.graph = graph;
        const int m = static_cast<int>(nodes.rows());
        result.cache.concat_input.resize(m, cfg.input_dim + cfg.speaker_dim);
        for (int i = 0; i < m; ++i) {
            for (int k = 0; k < cfg.input_dim; ++k)
                result.cache.concat_input(i, k) = dialogue.utterances[i].feature[k];
            result.cache.concat_input.row(i).tail(cfg.speaker_dim) =
                params.speaker_table.row(graph.speaker_index[i]);
        }
        result.cache.layers.resize(cfg.num_layers);
    }

    for (int l = 0; l < cfg.num_layers; ++l) {
        nodes = layer_forward(nodes, graph, params.layers[l], cfg, mode, rng,
                              caching ? &result.cache.layers[l] : nullptr);
    }

    result.pooled = mean_pool(nodes);
    result.probs = classify(result.pooled, params);
    if (caching) {
        result.cache.final_nodes = std::move(nodes);
        result.cache.pooled = result.pooled;
        result.cache.probs = result.probs;
    }
    return result;
}

ForwardResult forward(const Dialogue& dialogue, const ModelParams& params, const ModelConfig& cfg,
                      const GraphConfig& graph_cfg, RunMode mode, Rng* rng) {
    auto speaker_idx = assign_speaker_indices(dialogue, cfg.num_speaker_roles);
    Eigen::MatrixXd x0 = init_node_features(dialogue, speaker_idx, params, cfg);
    DialogueGraph graph = build_graph(dialogue, x0, graph_cfg, cfg.num_speaker_roles);
    return forward_with_graph(dialogue, graph, params, cfg, mode, rng);
}

ModelParams backward(const ForwardCache& cache, const Eigen::VectorXd& grad_probs,
                     const ModelParams& params, const ModelConfig& cfg) {
    if (cache.probs.size() == 0)
        throw std::invalid_argument("backward: cache missing (forward must run in Train mode)");

    ModelParams grads = zeros_like(params);
    const int m = cache.graph.num_nodes;
    const int d = cfg.model_dim;
    const int d_k = cfg.head_dim();
    const int heads_per_type = cfg.heads_per_type();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));

    // softmax head: dlogits_k = Q_k (dQ_k - sum_j Q_j dQ_j)
    const Eigen::VectorXd& q_probs = cache.probs;
    const double dot = q_probs.dot(grad_probs);
    Eigen::VectorXd dlogits =
        q_probs.cwiseProduct(grad_probs - Eigen::VectorXd::Constant(q_probs.size(), dot));

    grads.w_cls += dlogits * cache.pooled.transpose();
    grads.b_cls += dlogits;
    Eigen::VectorXd dpooled = params.w_cls.transpose() * dlogits;

    // mean pool
    Eigen::MatrixXd dnodes =
        (Eigen::VectorXd::Ones(m) * dpooled.transpose()) / static_cast<double>(m);

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[l];
        const LayerParams& layer = params.layers[l];
        LayerParams& glayer = grads.layers[l];

        Eigen::MatrixXd dpre_norm(m, d);
        for (int i = 0; i < m; ++i) {
            const Eigen::RowVectorXd r = lc.pre_norm.row(i);
            const double mean = r.mean();
            const double var = (r.array() - mean).square().mean();
            const double inv_std = 1.0 / std::sqrt(var + cfg.layernorm_eps);
            const Eigen::RowVectorXd normed = (r.array() - mean) * inv_std;

            const Eigen::RowVectorXd dy = dnodes.row(i);
            glayer.ln_gain += dy.cwiseProduct(normed).transpose();
            glayer.ln_bias += dy.transpose();
            const Eigen::RowVectorXd dn = dy.cwiseProduct(layer.ln_gain.transpose());
            const double dn_mean = dn.mean();
            const double dn_dot_n = dn.cwiseProduct(normed).mean();
            dpre_norm.row(i) =
                (dn.array() - dn_mean - normed.array() * dn_dot_n).matrix() * inv_std;
        }

        // residual: dX gets dpre_norm directly; attention path continues below
        Eigen::MatrixXd dinput = dpre_norm;

        Eigen::MatrixXd dprojected = dpre_norm.cwiseProduct(lc.drop_mask);
        // projected = concat * W_O^T
        glayer.w_out += dprojected.transpose() * lc.concat;
        Eigen::MatrixXd dconcat = dprojected * layer.w_out;

        const Eigen::MatrixXd& x_in = lc.input;
        for (int i = 0; i < m; ++i) {
            for (int t = 0; t < kNumEdgeTypes; ++t) {
                const auto& nbrs = cache.graph.typed_neighbors[t][i];
                if (nbrs.empty()) continue;
                const Eigen::MatrixXd& alpha_block = lc.alpha[i][t];
                for (int hl = 0; hl < heads_per_type; ++hl) {
                    const int h = t * heads_per_type + hl;
                    const Eigen::VectorXd dz = dconcat.row(i).segment(h * d_k, d_k).transpose();
                    if (dz.isZero(0.0)) continue;

                    const Eigen::VectorXd x_i = x_in.row(i).transpose();
                    const Eigen::VectorXd q = layer.w_query[h] * x_i;
                    const long n = static_cast<long>(nbrs.size());

                    Eigen::VectorXd dalpha(n);
                    for (long jn = 0; jn < n; ++jn) {
                        const Eigen::VectorXd v_j =
                            layer.w_value[h] * x_in.row(nbrs[jn]).transpose();
                        dalpha[jn] = dz.dot(v_j);
                        // value path
                        const double a = alpha_block(hl, jn);
                        const Eigen::VectorXd dv = a * dz;
                        glayer.w_value[h] += dv * x_in.row(nbrs[jn]);
                        dinput.row(nbrs[jn]) += (layer.w_value[h].transpose() * dv).transpose();
                    }
                    // softmax over the typed neighborhood
                    const Eigen::VectorXd alpha = alpha_block.row(hl).transpose();
                    const double adot = alpha.dot(dalpha);
                    Eigen::VectorXd dscores =
                        alpha.cwiseProduct(dalpha - Eigen::VectorXd::Constant(n, adot));

                    Eigen::VectorXd dq = Eigen::VectorXd::Zero(d_k);
                    for (long jn = 0; jn < n; ++jn) {
                        const Eigen::VectorXd x_j = x_in.row(nbrs[jn]).transpose();
                        const Eigen::VectorXd k_j = layer.w_key[h] * x_j;
                        dq += dscores[jn] * k_j * scale;
                        const Eigen::VectorXd dk = dscores[jn] * q * scale;
                        glayer.w_key[h] += dk * x_j.transpose();
                        dinput.row(nbrs[jn]) += (layer.w_key[h].transpose() * dk).transpose();
                    }
                    glayer.w_query[h] += dq * x_i.transpose();
                    dinput.row(i) += (layer.w_query[h].transpose() * dq).transpose();
                }
            }
        }
        dnodes = std::move(dinput);
    }

    // input projection: X0 = C * W_p
    grads.w_proj += cache.concat_input.transpose() * dnodes;
    Eigen::MatrixXd dconcat_input = dnodes * params.w_proj.transpose();
    for (int i = 0; i < m; ++i) {
        grads.speaker_table.row(cache.graph.speaker_index[i]) +=
            dconcat_input.row(i).tail(cfg.speaker_dim);
    }
    return grads;
}

} // namespace dialograph
