// encoder.hpp - Factorized spatiotemporal clip encoder, classifier heads,
// SGD, checkpointing, and supervised source-domain pretraining.
//
// Architecture: per-channel standardization of the clip, then per block a
// 3x3 spatial convolution (stride 2, pad 1), ReLU, and a kernel-3 temporal
// convolution, ReLU; after the blocks a global average pool and a linear
// projection to the feature dimension. The standardization strips DC
// brightness and contrast so features respond to structure and motion.
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "xvad/layers.hpp"
#include "xvad/tensor.hpp"
#include "xvad/tensorio.hpp"

namespace xvad {

struct EncoderConfig {
    int clip_len = 8;
    int height = 32;
    int width = 32;
    int channels = 3;
    std::vector<int> widths = {8, 16, 32};  // per-block channel counts
    int feature_dim = 64;

    bool operator==(const EncoderConfig&) const = default;
};

struct Encoder {
    struct Block {
        Tensor spatial_w;   // [3,3,Cin,Cout]
        Tensor spatial_b;   // [Cout]
        Tensor temporal_w;  // [3,Cout,Cout]
        Tensor temporal_b;  // [Cout]
    };

    EncoderConfig cfg;
    std::vector<Block> blocks;
    Tensor proj_w;  // [C_last, feature_dim]
    Tensor proj_b;  // [feature_dim]

    static Encoder zeros(const EncoderConfig& cfg);
    static Encoder init(const EncoderConfig& cfg, uint64_t seed);  // He-style

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
    bool same_values(const Encoder& other) const;
};

// Zeroed gradient buffers with the same structure as the encoder.
Encoder zeros_like(const Encoder& enc);
void accumulate(Encoder& into, const Encoder& grads);
void scale_params(Encoder& enc, real factor);

// Cached activations for one encode, owned by the training caller so that
// concurrent read-only encodes never share mutable state.
struct EncoderTape {
    Tensor raw;    // clip as given
    Tensor input;  // standardized clip, input to block 0
    struct BlockTape {
        Tensor spatial_pre;   // conv output before ReLU
        Tensor relu1;         // spatial ReLU output (temporal conv input)
        Tensor temporal_pre;  // temporal conv output before ReLU
        Tensor relu2;         // block output
    };
    std::vector<BlockTape> blocks;
    Tensor pooled;  // GAP output
};

// Inference path; pure in (enc, clip). Throws data_error on shape mismatch.
Tensor encode_clip(const Encoder& enc, const Tensor& clip);

Tensor encode_clip_fwd(const Encoder& enc, const Tensor& clip, EncoderTape& tape);
// Accumulates parameter gradients into `grads`, returns d(loss)/d(clip).
Tensor encode_clip_bwd(const Encoder& enc, const EncoderTape& tape, const Tensor& dfeat,
                       Encoder& grads);

// ---------------------------------------------------------------------------
// Classifier heads
// ---------------------------------------------------------------------------

enum class HeadKind { fc, cosine };

struct ClassifierHead {
    HeadKind kind = HeadKind::fc;
    Tensor w;  // [feature_dim, n_classes]
    Tensor b;  // [n_classes], fc only
    real temperature = 10;  // cosine only

    static ClassifierHead init(HeadKind kind, int feature_dim, int n_classes, uint64_t seed);
    int64_t n_classes() const { return w.shape[1]; }
};

struct Classification {
    Tensor logits;
    Tensor probs;
};

// Cosine logits are temperature * cos(z, w_k); a zero-norm feature or weight
// column yields a zero logit (and a zero gradient).
Classification classify(const ClassifierHead& head, const Tensor& z);

// Backward through the logits; accumulates head gradients, returns dz.
Tensor classify_bwd(const ClassifierHead& head, const Tensor& z, const Tensor& dlogits,
                    Tensor& gw, Tensor& gb);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct SgdConfig {
    real lr = 0.01;
    real momentum = 0.9;
};

struct Sgd {
    SgdConfig cfg;
    std::vector<Tensor> velocity;

    explicit Sgd(SgdConfig c) : cfg(c) {}
    // params and grads are parallel lists; velocity buffers are created lazily.
    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
};

// ---------------------------------------------------------------------------
// Checkpoints: a directory of tensor files plus a JSON index.
// ---------------------------------------------------------------------------

void save_encoder(const std::filesystem::path& dir, const Encoder& enc);
Encoder load_encoder(const std::filesystem::path& dir);
void save_head(const std::filesystem::path& dir, const ClassifierHead& head);
ClassifierHead load_head(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Source-domain pretraining
// ---------------------------------------------------------------------------

struct PretrainConfig {
    int epochs = 30;
    int batch_size = 8;
    real lr = 0.01;
    real momentum = 0.9;
    int clip_len = 8;
    int frame_rate = 1;
    uint64_t seed = 0;
    int jobs = 1;
};

struct TrainLog {
    std::vector<real> epoch_loss;
    std::vector<real> epoch_accuracy;
};

// Minimizes cross-entropy over (random clip, label) pairs, one clip per video
// per epoch. Deterministic in cfg.seed for any job count. Throws data_error
// if the manifest holds fewer than two classes, numeric_error on non-finite
// loss.
TrainLog pretrain_source(Encoder& enc, ClassifierHead& head, const DatasetManifest& source,
                         const PretrainConfig& cfg);

}  // namespace xvad
