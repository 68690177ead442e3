#include "xvad/mcpm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"
#include "xvad/rng.hpp"

namespace xvad {

Tensor build_semantic_edges(const Tensor& z, int k) {
    if (z.shape.size() != 2) throw data_error("build_semantic_edges: features must be [L,d]");
    const int64_t L = z.shape[0], D = z.shape[1];
    if (L < 1 || k < 0) throw data_error("build_semantic_edges: bad arguments");
    Tensor a({L, L});
    const int64_t kk = std::min<int64_t>(k, L - 1);
    if (kk == 0) return a;
    std::vector<std::pair<real, int64_t>> cand;
    cand.reserve(static_cast<size_t>(L - 1));
    for (int64_t i = 0; i < L; ++i) {
        cand.clear();
        for (int64_t j = 0; j < L; ++j) {
            if (j == i) continue;
            cand.emplace_back(kern::sqdist(&z[idx2(i, 0, D)], &z[idx2(j, 0, D)],
                                           static_cast<size_t>(D)),
                              j);
        }
        // Ties resolved toward the lower index via the pair ordering.
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        for (int64_t n = 0; n < kk; ++n) a[idx2(i, cand[static_cast<size_t>(n)].second, L)] = 1;
    }
    return a;
}

std::vector<std::pair<int64_t, int64_t>> build_temporal_edges(int64_t node_count) {
    if (node_count < 1) throw data_error("build_temporal_edges: need at least one node");
    std::vector<std::pair<int64_t, int64_t>> edges;
    edges.reserve(static_cast<size_t>(std::max<int64_t>(0, 2 * (node_count - 1))));
    for (int64_t i = 0; i + 1 < node_count; ++i) {
        edges.emplace_back(i, i + 1);  // forward
        edges.emplace_back(i + 1, i);  // backward
    }
    return edges;
}

VideoGraph build_video_graph(const Tensor& node_features, int k) {
    VideoGraph g;
    g.z = node_features;
    g.node_count = node_features.shape[0];
    g.adjacency = build_semantic_edges(node_features, k);
    g.temporal_edges = build_temporal_edges(g.node_count);
    return g;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

GraphParams GraphParams::zeros(int d_in, int d_g) {
    GraphParams p;
    p.lift_w = Tensor({1, d_in, d_g});
    p.lift_b = Tensor({d_g});
    for (Tensor* w : {&p.t1_w, &p.t2_w, &p.t3_w}) *w = Tensor({3, d_g, d_g});
    for (Tensor* b : {&p.t1_b, &p.t2_b, &p.t3_b}) *b = Tensor({d_g});
    p.edge_w = Tensor({2 * d_g, d_g});
    return p;
}

GraphParams GraphParams::init(int d_in, int d_g, uint64_t seed) {
    GraphParams p = zeros(d_in, d_g);
    Rng rng(seed);
    auto fill = [&](Tensor& t, real stddev) {
        for (real& x : t.v) x = static_cast<real>(rng.normal()) * stddev;
    };
    fill(p.lift_w, std::sqrt(real(2) / static_cast<real>(d_in)));
    const real t_std = std::sqrt(real(2) / static_cast<real>(3 * d_g));
    fill(p.t1_w, t_std);
    fill(p.t2_w, t_std);
    fill(p.t3_w, t_std);
    fill(p.edge_w, std::sqrt(real(1) / static_cast<real>(2 * d_g)));
    return p;
}

std::vector<std::pair<std::string, Tensor*>> GraphParams::named_params() {
    return {{"lift_w", &lift_w}, {"lift_b", &lift_b}, {"t1_w", &t1_w}, {"t1_b", &t1_b},
            {"t2_w", &t2_w},     {"t2_b", &t2_b},     {"t3_w", &t3_w}, {"t3_b", &t3_b},
            {"edge_w", &edge_w}};
}

std::vector<std::pair<std::string, const Tensor*>> GraphParams::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<GraphParams*>(this)->named_params()) {
        out.emplace_back(name, t);
    }
    return out;
}

GraphParams zeros_like(const GraphParams& p) {
    return GraphParams::zeros(p.d_in(), p.d_g());
}

void accumulate(GraphParams& into, const GraphParams& grads) {
    auto dst = into.named_params();
    auto src = grads.named_params();
    for (size_t i = 0; i < dst.size(); ++i) {
        kern::axpy(1, src[i].second->data(), dst[i].second->data(), src[i].second->v.size());
    }
}

void scale_params(GraphParams& p, real factor) {
    for (auto& [name, t] : p.named_params()) kern::scale(factor, t->data(), t->v.size());
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

Tensor temporal_update(const Tensor& z, const GraphParams& p) {
    const Tensor h1 = conv1d_nodes_fwd(z, p.t1_w, p.t1_b);
    const Tensor r1 = relu_fwd(h1);
    const Tensor h2 = conv1d_nodes_fwd(r1, p.t2_w, p.t2_b);
    const Tensor r2 = relu_fwd(h2);
    return conv1d_nodes_fwd(r2, p.t3_w, p.t3_b);
}

Tensor semantic_update(const Tensor& z, const Tensor& adjacency, const Tensor& w) {
    if (z.shape.size() != 2) throw data_error("semantic_update: features must be [L,d]");
    const int64_t L = z.shape[0], D = z.shape[1];
    if (adjacency.shape != std::vector<int64_t>{L, L} ||
        w.shape.size() != 2 || w.shape[0] != 2 * D) {
        throw data_error("semantic_update: shape mismatch");
    }
    const int64_t Do = w.shape[1];
    Tensor out({L, Do});
    std::vector<real> agg(static_cast<size_t>(D));
    for (int64_t i = 0; i < L; ++i) {
        // agg = sum of neighbor features minus own feature (AZ - Z row).
        std::fill(agg.begin(), agg.end(), real(0));
        const real* arow = &adjacency[idx2(i, 0, L)];
        for (int64_t j = 0; j < L; ++j) {
            if (arow[j] != 0) {
                kern::axpy(arow[j], &z[idx2(j, 0, D)], agg.data(), static_cast<size_t>(D));
            }
        }
        kern::axpy(-1, &z[idx2(i, 0, D)], agg.data(), static_cast<size_t>(D));

        real* orow = &out[idx2(i, 0, Do)];
        const real* zrow = &z[idx2(i, 0, D)];
        for (int64_t c = 0; c < D; ++c) {
            kern::axpy(zrow[c], &w[idx2(c, 0, Do)], orow, static_cast<size_t>(Do));
            kern::axpy(agg[static_cast<size_t>(c)], &w[idx2(D + c, 0, Do)], orow,
                       static_cast<size_t>(Do));
        }
    }
    return out;
}

namespace {

// Backward of semantic_update; accumulates into gz and gw.
void semantic_update_bwd(const Tensor& z, const Tensor& adjacency, const Tensor& w,
                         const Tensor& dout, Tensor& gz, Tensor& gw) {
    const int64_t L = z.shape[0], D = z.shape[1], Do = w.shape[1];
    std::vector<real> agg(static_cast<size_t>(D));
    std::vector<real> dcat(static_cast<size_t>(2 * D));
    for (int64_t i = 0; i < L; ++i) {
        std::fill(agg.begin(), agg.end(), real(0));
        const real* arow = &adjacency[idx2(i, 0, L)];
        for (int64_t j = 0; j < L; ++j) {
            if (arow[j] != 0) {
                kern::axpy(arow[j], &z[idx2(j, 0, D)], agg.data(), static_cast<size_t>(D));
            }
        }
        kern::axpy(-1, &z[idx2(i, 0, D)], agg.data(), static_cast<size_t>(D));

        const real* drow = &dout[idx2(i, 0, Do)];
        const real* zrow = &z[idx2(i, 0, D)];
        for (int64_t c = 0; c < D; ++c) {
            // gw rows: top block from z, bottom block from the aggregate.
            kern::axpy(zrow[c], drow, &gw[idx2(c, 0, Do)], static_cast<size_t>(Do));
            kern::axpy(agg[static_cast<size_t>(c)], drow, &gw[idx2(D + c, 0, Do)],
                       static_cast<size_t>(Do));
            dcat[static_cast<size_t>(c)] = kern::dot(&w[idx2(c, 0, Do)], drow,
                                                     static_cast<size_t>(Do));
            dcat[static_cast<size_t>(D + c)] = kern::dot(&w[idx2(D + c, 0, Do)], drow,
                                                         static_cast<size_t>(Do));
        }
        // d(z_i) from the [Z] block and the -Z term of the aggregate.
        real* gzi = &gz[idx2(i, 0, D)];
        for (int64_t c = 0; c < D; ++c) {
            gzi[c] += dcat[static_cast<size_t>(c)] - dcat[static_cast<size_t>(D + c)];
        }
        // d(z_j) for neighbors via the A Z term (A^T routing).
        for (int64_t j = 0; j < L; ++j) {
            if (arow[j] != 0) {
                kern::axpy(arow[j], dcat.data() + D, &gz[idx2(j, 0, D)],
                           static_cast<size_t>(D));
            }
        }
    }
}

}  // namespace

Tensor fuse(const Tensor& z, const Tensor& zt, const Tensor& zs) {
    if (z.shape != zt.shape || z.shape != zs.shape) throw data_error("fuse: shape mismatch");
    Tensor pre(z.shape);
    kern::add(z.data(), zt.data(), pre.data(), pre.v.size());
    kern::add(pre.data(), zs.data(), pre.data(), pre.v.size());
    return relu_fwd(pre);
}

Tensor readout_max(const Tensor& z_prime) {
    if (z_prime.shape.size() != 2 || z_prime.shape[0] < 1) {
        throw data_error("readout: empty graph");
    }
    const int64_t L = z_prime.shape[0], D = z_prime.shape[1];
    Tensor out({D});
    for (int64_t c = 0; c < D; ++c) {
        real m = z_prime[idx2(0, c, D)];
        for (int64_t i = 1; i < L; ++i) {
            const real v = z_prime[idx2(i, c, D)];
            if (v > m) m = v;
        }
        out[static_cast<size_t>(c)] = m;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

Classification graph_forward(const GraphParams& p, const ClassifierHead& head, int k,
                             const Tensor& node_features, GraphTape& tape) {
    tape.nodes = node_features;
    tape.lift_pre = conv1d_nodes_fwd(tape.nodes, p.lift_w, p.lift_b);
    tape.lifted = relu_fwd(tape.lift_pre);
    tape.adjacency = build_semantic_edges(tape.lifted, k);

    tape.t1_pre = conv1d_nodes_fwd(tape.lifted, p.t1_w, p.t1_b);
    tape.t1_out = relu_fwd(tape.t1_pre);
    tape.t2_pre = conv1d_nodes_fwd(tape.t1_out, p.t2_w, p.t2_b);
    tape.t2_out = relu_fwd(tape.t2_pre);
    tape.zt = conv1d_nodes_fwd(tape.t2_out, p.t3_w, p.t3_b);

    tape.zs = semantic_update(tape.lifted, tape.adjacency, p.edge_w);

    tape.fuse_pre = Tensor(tape.lifted.shape);
    kern::add(tape.lifted.data(), tape.zt.data(), tape.fuse_pre.data(), tape.fuse_pre.v.size());
    kern::add(tape.fuse_pre.data(), tape.zs.data(), tape.fuse_pre.data(), tape.fuse_pre.v.size());
    tape.z_prime = relu_fwd(tape.fuse_pre);

    const int64_t L = tape.z_prime.shape[0], D = tape.z_prime.shape[1];
    tape.video_feature = Tensor({D});
    tape.argmax.assign(static_cast<size_t>(D), 0);
    for (int64_t c = 0; c < D; ++c) {
        real m = tape.z_prime[idx2(0, c, D)];
        size_t mi = 0;
        for (int64_t i = 1; i < L; ++i) {
            const real v = tape.z_prime[idx2(i, c, D)];
            if (v > m) {
                m = v;
                mi = static_cast<size_t>(i);
            }
        }
        tape.video_feature[static_cast<size_t>(c)] = m;
        tape.argmax[static_cast<size_t>(c)] = mi;
    }
    return classify(head, tape.video_feature);
}

void graph_backward(const GraphParams& p, const ClassifierHead& head, const GraphTape& tape,
                    const Tensor& dlogits, GraphParams& grads, Tensor& head_gw,
                    Tensor& head_gb) {
    const Tensor dvfeat = classify_bwd(head, tape.video_feature, dlogits, head_gw, head_gb);

    // Max readout routes each dimension's gradient to its (first) argmax node.
    Tensor dzp(tape.z_prime.shape);
    const int64_t D = tape.z_prime.shape[1];
    for (int64_t c = 0; c < D; ++c) {
        dzp[idx2(static_cast<int64_t>(tape.argmax[static_cast<size_t>(c)]), c, D)] =
            dvfeat[static_cast<size_t>(c)];
    }

    const Tensor dfuse = relu_bwd(tape.fuse_pre, dzp);
    // dfuse feeds all three fusion inputs.
    Tensor dlifted = dfuse;

    // Semantic path.
    semantic_update_bwd(tape.lifted, tape.adjacency, p.edge_w, dfuse, dlifted, grads.edge_w);

    // Temporal path.
    Tensor d_t2out = conv1d_nodes_bwd(tape.t2_out, p.t3_w, dfuse, grads.t3_w, grads.t3_b);
    Tensor d_t2pre = relu_bwd(tape.t2_pre, d_t2out);
    Tensor d_t1out = conv1d_nodes_bwd(tape.t1_out, p.t2_w, d_t2pre, grads.t2_w, grads.t2_b);
    Tensor d_t1pre = relu_bwd(tape.t1_pre, d_t1out);
    Tensor d_from_temporal = conv1d_nodes_bwd(tape.lifted, p.t1_w, d_t1pre, grads.t1_w,
                                              grads.t1_b);
    kern::axpy(1, d_from_temporal.data(), dlifted.data(), dlifted.v.size());

    // Lift.
    Tensor d_lift_pre = relu_bwd(tape.lift_pre, dlifted);
    conv1d_nodes_bwd(tape.nodes, p.lift_w, d_lift_pre, grads.lift_w, grads.lift_b);
}

Classification graph_classify(const GraphParams& p, const ClassifierHead& head, int k,
                              const Tensor& node_features) {
    GraphTape tape;
    return graph_forward(p, head, k, node_features, tape);
}

Tensor video_node_features(const Encoder& enc, const TensorU8& frames, const McpmConfig& cfg) {
    const std::vector<Tensor> clips =
        sample_clip_sequence(frames, cfg.clip_len, cfg.stride, cfg.min_len, cfg.max_len);
    const int64_t L = static_cast<int64_t>(clips.size());
    const int64_t D = enc.cfg.feature_dim;
    Tensor nodes({L, D});
    for (int64_t l = 0; l < L; ++l) {
        const Tensor f = encode_clip(enc, clips[static_cast<size_t>(l)]);
        std::copy(f.v.begin(), f.v.end(), nodes.data() + l * D);
    }
    return nodes;
}

Classification forward_video(const Encoder& enc, const GraphParams& p, const ClassifierHead& head,
                             const VideoSample& video, const McpmConfig& cfg) {
    const Tensor nodes = video_node_features(enc, video.frames, cfg);
    return graph_classify(p, head, cfg.k, nodes);
}

// ---------------------------------------------------------------------------
// Support-set training
// ---------------------------------------------------------------------------

TrainedGraph train_mcpm(const std::vector<SupportSample>& support, int d_in,
                        const McpmConfig& cfg, uint64_t seed) {
    if (support.empty()) throw data_error("train_mcpm: empty support set");
    std::set<int64_t> labels;
    for (const auto& s : support) labels.insert(s.label);
    if (labels.size() < 2) throw data_error("train_mcpm: support set has fewer than two classes");
    const int64_t n_classes = static_cast<int64_t>(labels.size());

    TrainedGraph out;
    out.params = GraphParams::init(d_in, cfg.d_g, derive_seed(seed, 0x6a));
    out.head = ClassifierHead::init(cfg.head_kind, cfg.d_g, static_cast<int>(n_classes),
                                    derive_seed(seed, 0x6b));
    out.head.temperature = cfg.head_temperature;

    Sgd opt({cfg.lr, cfg.momentum});
    const size_t n = support.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(seed, 0x6c, static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        rng.shuffle(order);

        real epoch_loss = 0;
        for (size_t begin = 0; begin < n; begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(n, begin + static_cast<size_t>(cfg.batch_size));
            const size_t bs = end - begin;
            GraphParams grads = zeros_like(out.params);
            Tensor gw(out.head.w.shape), gb(out.head.b.shape);
            real batch_loss = 0;
            for (size_t s = begin; s < end; ++s) {
                const SupportSample& sample = support[order[s]];
                GraphTape tape;
                const Classification cls =
                    graph_forward(out.params, out.head, cfg.k, sample.node_features, tape);
                const CrossEntropy ce = softmax_cross_entropy(cls.logits, sample.label);
                batch_loss += ce.loss;
                Tensor dlogits = softmax_cross_entropy_bwd(ce.probs, sample.label);
                kern::scale(real(1) / static_cast<real>(bs), dlogits.data(), dlogits.v.size());
                graph_backward(out.params, out.head, tape, dlogits, grads, gw, gb);
            }
            batch_loss /= static_cast<real>(bs);
            if (!std::isfinite(batch_loss)) {
                throw numeric_error("train_mcpm: non-finite loss at epoch " +
                                    std::to_string(epoch));
            }
            epoch_loss += batch_loss * static_cast<real>(bs);

            std::vector<Tensor*> params;
            std::vector<const Tensor*> gptrs;
            for (auto& [name, t] : out.params.named_params()) params.push_back(t);
            for (auto& [name, t] : grads.named_params()) gptrs.push_back(t);
            params.push_back(&out.head.w);
            params.push_back(&out.head.b);
            gptrs.push_back(&gw);
            gptrs.push_back(&gb);
            opt.step(params, gptrs);
        }
        out.log.epoch_loss.push_back(epoch_loss / static_cast<real>(n));
    }
    return out;
}

TrainedGraph train_mcpm(const Encoder& enc,
                        const std::vector<std::pair<const VideoSample*, int64_t>>& support,
                        const McpmConfig& cfg, uint64_t seed) {
    std::vector<SupportSample> samples;
    samples.reserve(support.size());
    for (const auto& [video, label] : support) {
        samples.push_back({video_node_features(enc, video->frames, cfg), label});
    }
    return train_mcpm(samples, enc.cfg.feature_dim, cfg, seed);
}

}  // namespace xvad
