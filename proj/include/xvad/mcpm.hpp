// mcpm.hpp - Semantic-temporal graph over clip features.
//
// Clip features become graph nodes. A directed kNN adjacency in feature
// space provides semantic edges; consecutive clips are linked by temporal
// edges. Node features are updated along a temporal path (three 1-D
// convolutions over the node axis) and a semantic path (single-layer edge
// convolution [Z, AZ-Z] W), fused by ReLU(Z + Zt + Zs), and read out as the
// per-dimension maximum over nodes to give one video feature.
#pragma once

#include "xvad/encoder.hpp"
#include "xvad/synthdata.hpp"

namespace xvad {

struct VideoGraph {
    Tensor z;  // [L, d] node features
    Tensor adjacency;  // [L, L] binary, zero diagonal, row i marks i's neighbors
    std::vector<std::pair<int64_t, int64_t>> temporal_edges;
    int64_t node_count = 0;
};

// Directed kNN by Euclidean distance; ties broken toward the lower index.
// Row sums equal min(k, L-1); no self-loops; not symmetrized.
Tensor build_semantic_edges(const Tensor& z, int k);

// (i,i+1) and (i+1,i) for consecutive nodes.
std::vector<std::pair<int64_t, int64_t>> build_temporal_edges(int64_t node_count);

VideoGraph build_video_graph(const Tensor& node_features, int k);

// ---------------------------------------------------------------------------
// Trainable parameters
// ---------------------------------------------------------------------------
struct GraphParams {
    Tensor lift_w, lift_b;  // [1, d_in, d_g], [d_g]: pointwise lift + ReLU
    Tensor t1_w, t1_b;      // [3, d_g, d_g] temporal path, ReLU between layers
    Tensor t2_w, t2_b;
    Tensor t3_w, t3_b;
    Tensor edge_w;  // [2*d_g, d_g] semantic edge-convolution weight

    static GraphParams zeros(int d_in, int d_g);
    static GraphParams init(int d_in, int d_g, uint64_t seed);

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
    int d_in() const { return static_cast<int>(lift_w.shape[1]); }
    int d_g() const { return static_cast<int>(lift_w.shape[2]); }
};

GraphParams zeros_like(const GraphParams& p);
void accumulate(GraphParams& into, const GraphParams& grads);
void scale_params(GraphParams& p, real factor);

// ---------------------------------------------------------------------------
// Node feature updates
// ---------------------------------------------------------------------------

// Z^t = conv3(ReLU(conv2(ReLU(conv1(Z))))) along the node axis.
Tensor temporal_update(const Tensor& z, const GraphParams& p);

// Z^s = [Z, AZ - Z] W; row i sees [z_i, sum_{j in N(i)} z_j - z_i].
Tensor semantic_update(const Tensor& z, const Tensor& adjacency, const Tensor& w);

// Elementwise ReLU(z + zt + zs); shapes must match.
Tensor fuse(const Tensor& z, const Tensor& zt, const Tensor& zs);

// Per-dimension maximum over nodes -> [d]. Throws on an empty graph.
Tensor readout_max(const Tensor& z_prime);

// ---------------------------------------------------------------------------
// Full module
// ---------------------------------------------------------------------------
struct McpmConfig {
    int d_g = 32;  // graph feature dimension
    int k = 3;     // semantic neighbors per node
    // Clip sequence protocol.
    int clip_len = 8;
    int stride = 4;
    int min_len = 20;
    int max_len = 124;
    // Support-set training.
    real lr = 0.001;
    int batch_size = 4;
    int epochs = 60;
    real momentum = 0.9;
    HeadKind head_kind = HeadKind::cosine;
    real head_temperature = 10;
};

// Encoder features for one video: one row per clip of the stride cover.
Tensor video_node_features(const Encoder& enc, const TensorU8& frames, const McpmConfig& cfg);

// Forward pass on precomputed node features.
Classification graph_classify(const GraphParams& p, const ClassifierHead& head, int k,
                              const Tensor& node_features);

// Composition: clip sequence -> encode -> lift -> edges -> updates -> fuse ->
// readout -> head probabilities.
Classification forward_video(const Encoder& enc, const GraphParams& p, const ClassifierHead& head,
                             const VideoSample& video, const McpmConfig& cfg);

// Cached intermediates for the training backward pass.
struct GraphTape {
    Tensor nodes;      // [L, d_in]
    Tensor lift_pre, lifted;
    Tensor adjacency;
    Tensor t1_pre, t1_out, t2_pre, t2_out, zt;
    Tensor zs;
    Tensor fuse_pre, z_prime;
    Tensor video_feature;
    std::vector<size_t> argmax;  // per output dimension
};

Classification graph_forward(const GraphParams& p, const ClassifierHead& head, int k,
                             const Tensor& node_features, GraphTape& tape);
void graph_backward(const GraphParams& p, const ClassifierHead& head, const GraphTape& tape,
                    const Tensor& dlogits, GraphParams& grads, Tensor& head_gw, Tensor& head_gb);

// ---------------------------------------------------------------------------
// Support-set training (meta-test inner loop)
// ---------------------------------------------------------------------------
struct SupportSample {
    Tensor node_features;  // [L, d_in]
    int64_t label;
};

struct TrainedGraph {
    GraphParams params;
    ClassifierHead head;
    TrainLog log;
};

// Fresh seed-derived initialization, cross-entropy over the support set only.
// Throws data_error when the support set has fewer than two classes.
TrainedGraph train_mcpm(const std::vector<SupportSample>& support, int d_in,
                        const McpmConfig& cfg, uint64_t seed);

// Convenience overload that extracts node features with the (frozen) encoder.
TrainedGraph train_mcpm(const Encoder& enc,
                        const std::vector<std::pair<const VideoSample*, int64_t>>& support,
                        const McpmConfig& cfg, uint64_t seed);

}  // namespace xvad
