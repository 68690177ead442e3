#include "xvad/encoder.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"
#include "xvad/parallel.hpp"
#include "xvad/rng.hpp"
#include "xvad/synthdata.hpp"

namespace fs = std::filesystem;

namespace xvad {

namespace {

void fill_normal(Tensor& t, Rng& rng, real stddev) {
    for (real& x : t.v) x = static_cast<real>(rng.normal()) * stddev;
}

}  // namespace

Encoder Encoder::zeros(const EncoderConfig& cfg) {
    Encoder e;
    e.cfg = cfg;
    int cin = cfg.channels;
    for (int cout : cfg.widths) {
        Block b;
        b.spatial_w = Tensor({3, 3, cin, cout});
        b.spatial_b = Tensor({cout});
        b.temporal_w = Tensor({3, cout, cout});
        b.temporal_b = Tensor({cout});
        e.blocks.push_back(std::move(b));
        cin = cout;
    }
    e.proj_w = Tensor({cin, cfg.feature_dim});
    e.proj_b = Tensor({cfg.feature_dim});
    return e;
}

Encoder Encoder::init(const EncoderConfig& cfg, uint64_t seed) {
    Encoder e = zeros(cfg);
    Rng rng(seed);
    for (auto& b : e.blocks) {
        const real s_fan = static_cast<real>(b.spatial_w.shape[0] * b.spatial_w.shape[1] *
                                             b.spatial_w.shape[2]);
        fill_normal(b.spatial_w, rng, std::sqrt(real(2) / s_fan));
        const real t_fan = static_cast<real>(b.temporal_w.shape[0] * b.temporal_w.shape[1]);
        fill_normal(b.temporal_w, rng, std::sqrt(real(2) / t_fan));
    }
    fill_normal(e.proj_w, rng, std::sqrt(real(1) / static_cast<real>(e.proj_w.shape[0])));
    return e;
}

std::vector<std::pair<std::string, Tensor*>> Encoder::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        out.emplace_back(p + "spatial_w", &blocks[i].spatial_w);
        out.emplace_back(p + "spatial_b", &blocks[i].spatial_b);
        out.emplace_back(p + "temporal_w", &blocks[i].temporal_w);
        out.emplace_back(p + "temporal_b", &blocks[i].temporal_b);
    }
    out.emplace_back("proj_w", &proj_w);
    out.emplace_back("proj_b", &proj_b);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Encoder::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    auto mutable_list = const_cast<Encoder*>(this)->named_params();
    out.reserve(mutable_list.size());
    for (auto& [name, t] : mutable_list) out.emplace_back(name, t);
    return out;
}

bool Encoder::same_values(const Encoder& other) const {
    auto a = named_params();
    auto b = other.named_params();
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].second->shape != b[i].second->shape || a[i].second->v != b[i].second->v) {
            return false;
        }
    }
    return true;
}

Encoder zeros_like(const Encoder& enc) { return Encoder::zeros(enc.cfg); }

void accumulate(Encoder& into, const Encoder& grads) {
    auto dst = into.named_params();
    auto src = grads.named_params();
    for (size_t i = 0; i < dst.size(); ++i) {
        kern::axpy(1, src[i].second->data(), dst[i].second->data(), src[i].second->v.size());
    }
}

void scale_params(Encoder& enc, real factor) {
    for (auto& [name, t] : enc.named_params()) kern::scale(factor, t->data(), t->v.size());
}

Tensor encode_clip_fwd(const Encoder& enc, const Tensor& clip, EncoderTape& tape) {
    const auto& cfg = enc.cfg;
    const std::vector<int64_t> expected = {cfg.clip_len, cfg.height, cfg.width, cfg.channels};
    if (clip.shape != expected) throw data_error("encode_clip: clip shape mismatch");

    tape.raw = clip;
    tape.input = standardize_channels_fwd(clip);
    tape.blocks.clear();
    tape.blocks.resize(enc.blocks.size());
    const Tensor* x = &tape.input;
    for (size_t i = 0; i < enc.blocks.size(); ++i) {
        auto& bt = tape.blocks[i];
        const auto& b = enc.blocks[i];
        bt.spatial_pre = conv2d_spatial_fwd(*x, b.spatial_w, b.spatial_b, /*stride=*/2);
        bt.relu1 = relu_fwd(bt.spatial_pre);
        bt.temporal_pre = conv1d_temporal_fwd(bt.relu1, b.temporal_w, b.temporal_b);
        bt.relu2 = relu_fwd(bt.temporal_pre);
        x = &bt.relu2;
    }
    tape.pooled = gap_fwd(*x);
    return linear_fwd(tape.pooled, enc.proj_w, enc.proj_b);
}

Tensor encode_clip(const Encoder& enc, const Tensor& clip) {
    EncoderTape tape;
    return encode_clip_fwd(enc, clip, tape);
}

Tensor encode_clip_bwd(const Encoder& enc, const EncoderTape& tape, const Tensor& dfeat,
                       Encoder& grads) {
    Tensor dpooled = linear_bwd(tape.pooled, enc.proj_w, dfeat, grads.proj_w, grads.proj_b);
    const Tensor& last = tape.blocks.back().relu2;
    Tensor d = gap_bwd(last.shape, dpooled);
    for (size_t i = enc.blocks.size(); i-- > 0;) {
        const auto& bt = tape.blocks[i];
        const auto& b = enc.blocks[i];
        auto& gb = grads.blocks[i];
        Tensor d_tpre = relu_bwd(bt.temporal_pre, d);
        Tensor d_relu1 = conv1d_temporal_bwd(bt.relu1, b.temporal_w, d_tpre, gb.temporal_w,
                                             gb.temporal_b);
        Tensor d_spre = relu_bwd(bt.spatial_pre, d_relu1);
        const Tensor& block_in = i == 0 ? tape.input : tape.blocks[i - 1].relu2;
        d = conv2d_spatial_bwd(block_in, b.spatial_w, d_spre, /*stride=*/2, gb.spatial_w,
                               gb.spatial_b);
    }
    return standardize_channels_bwd(tape.raw, d);
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

ClassifierHead ClassifierHead::init(HeadKind kind, int feature_dim, int n_classes,
                                    uint64_t seed) {
    ClassifierHead h;
    h.kind = kind;
    h.w = Tensor({feature_dim, n_classes});
    h.b = Tensor({n_classes});
    Rng rng(seed);
    fill_normal(h.w, rng, std::sqrt(real(1) / static_cast<real>(feature_dim)));
    return h;
}

Classification classify(const ClassifierHead& head, const Tensor& z) {
    const int64_t D = head.w.shape[0], K = head.w.shape[1];
    if (z.shape.size() != 1 || z.shape[0] != D) throw data_error("classify: feature dim mismatch");
    Classification out;
    if (head.kind == HeadKind::fc) {
        out.logits = linear_fwd(z, head.w, head.b);
    } else {
        out.logits = Tensor({K});
        const real zn = std::sqrt(kern::dot(z.data(), z.data(), z.v.size()));
        if (zn > 0) {
            for (int64_t k = 0; k < K; ++k) {
                real wd = 0, wn = 0;
                for (int64_t i = 0; i < D; ++i) {
                    const real wv = head.w[idx2(i, k, K)];
                    wd += wv * z[static_cast<size_t>(i)];
                    wn += wv * wv;
                }
                wn = std::sqrt(wn);
                out.logits[static_cast<size_t>(k)] =
                    wn > 0 ? head.temperature * wd / (zn * wn) : real(0);
            }
        }
    }
    out.probs = softmax(out.logits);
    return out;
}

Tensor classify_bwd(const ClassifierHead& head, const Tensor& z, const Tensor& dlogits,
                    Tensor& gw, Tensor& gb) {
    const int64_t D = head.w.shape[0], K = head.w.shape[1];
    if (head.kind == HeadKind::fc) {
        return linear_bwd(z, head.w, dlogits, gw, gb);
    }
    Tensor dz({D});
    const real zn = std::sqrt(kern::dot(z.data(), z.data(), z.v.size()));
    if (zn == 0) return dz;  // zero-norm feature: logits pinned to zero
    for (int64_t k = 0; k < K; ++k) {
        real wd = 0, wn2 = 0;
        for (int64_t i = 0; i < D; ++i) {
            const real wv = head.w[idx2(i, k, K)];
            wd += wv * z[static_cast<size_t>(i)];
            wn2 += wv * wv;
        }
        const real wn = std::sqrt(wn2);
        if (wn == 0) continue;
        const real g = dlogits[static_cast<size_t>(k)] * head.temperature;
        const real cosv = wd / (zn * wn);
        // d(cos)/dz_i = w_i/(|z||w|) - cos * z_i/|z|^2
        // d(cos)/dw_i = z_i/(|z||w|) - cos * w_i/|w|^2
        for (int64_t i = 0; i < D; ++i) {
            const real wv = head.w[idx2(i, k, K)];
            const real zv = z[static_cast<size_t>(i)];
            dz[static_cast<size_t>(i)] += g * (wv / (zn * wn) - cosv * zv / (zn * zn));
            gw[idx2(i, k, K)] += g * (zv / (zn * wn) - cosv * wv / wn2);
        }
    }
    return dz;
}

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

void Sgd::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (velocity.empty()) {
        velocity.reserve(params.size());
        for (Tensor* p : params) velocity.emplace_back(p->shape);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& v = velocity[i];
        kern::scale(cfg.momentum, v.data(), v.v.size());
        kern::axpy(-cfg.lr, grads[i]->data(), v.data(), v.v.size());
        kern::axpy(1, v.data(), params[i]->data(), v.v.size());
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_encoder(const fs::path& dir, const Encoder& enc) {
    fs::create_directories(dir);
    nlohmann::json index;
    index["format"] = "xvad-encoder";
    index["config"] = {{"clip_len", enc.cfg.clip_len}, {"height", enc.cfg.height},
                       {"width", enc.cfg.width},       {"channels", enc.cfg.channels},
                       {"widths", enc.cfg.widths},     {"feature_dim", enc.cfg.feature_dim}};
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : enc.named_params()) {
        const std::string file = name + ".actf";
        write_tensor_real(dir / file, *t);
        tensors[name] = file;
    }
    index["tensors"] = std::move(tensors);
    std::ofstream out(dir / "index.json", std::ios::trunc);
    if (!out) throw data_error("cannot write checkpoint index: " + dir.string());
    out << index.dump(2) << "\n";
}

Encoder load_encoder(const fs::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw data_error("cannot open checkpoint index: " + (dir / "index.json").string());
    nlohmann::json index;
    try {
        in >> index;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("checkpoint index is not valid JSON: " + std::string(e.what()));
    }
    if (index.value("format", "") != "xvad-encoder") {
        throw data_error("not an encoder checkpoint: " + dir.string());
    }
    EncoderConfig cfg;
    const auto& jc = index.at("config");
    cfg.clip_len = jc.at("clip_len").get<int>();
    cfg.height = jc.at("height").get<int>();
    cfg.width = jc.at("width").get<int>();
    cfg.channels = jc.at("channels").get<int>();
    cfg.widths = jc.at("widths").get<std::vector<int>>();
    cfg.feature_dim = jc.at("feature_dim").get<int>();
    Encoder enc = Encoder::zeros(cfg);
    for (auto& [name, t] : enc.named_params()) {
        const std::string file = index.at("tensors").at(name).get<std::string>();
        Tensor loaded = read_tensor_real(dir / file);
        if (loaded.shape != t->shape) {
            throw data_error("checkpoint tensor shape mismatch for " + name);
        }
        *t = std::move(loaded);
    }
    return enc;
}

void save_head(const fs::path& dir, const ClassifierHead& head) {
    fs::create_directories(dir);
    nlohmann::json index;
    index["format"] = "xvad-head";
    index["kind"] = head.kind == HeadKind::fc ? "fc" : "cosine";
    index["temperature"] = head.temperature;
    index["tensors"] = {{"w", "head_w.actf"}, {"b", "head_b.actf"}};
    write_tensor_real(dir / "head_w.actf", head.w);
    write_tensor_real(dir / "head_b.actf", head.b);
    std::ofstream out(dir / "head.json", std::ios::trunc);
    if (!out) throw data_error("cannot write head index: " + dir.string());
    out << index.dump(2) << "\n";
}

ClassifierHead load_head(const fs::path& dir) {
    std::ifstream in(dir / "head.json");
    if (!in) throw data_error("cannot open head index: " + (dir / "head.json").string());
    nlohmann::json index;
    in >> index;
    if (index.value("format", "") != "xvad-head") {
        throw data_error("not a head checkpoint: " + dir.string());
    }
    ClassifierHead head;
    head.kind = index.at("kind").get<std::string>() == "fc" ? HeadKind::fc : HeadKind::cosine;
    head.temperature = index.at("temperature").get<real>();
    head.w = read_tensor_real(dir / "head_w.actf");
    head.b = read_tensor_real(dir / "head_b.actf");
    return head;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

TrainLog pretrain_source(Encoder& enc, ClassifierHead& head, const DatasetManifest& source,
                         const PretrainConfig& cfg) {
    if (source.entries.empty()) throw data_error("pretrain: empty dataset");
    std::set<int64_t> labels;
    for (const auto& e : source.entries) labels.insert(e.label);
    if (labels.size() < 2) throw data_error("pretrain: dataset has fewer than two classes");

    // Preload frames once; clips are cut per epoch.
    std::vector<VideoSample> videos;
    videos.reserve(source.entries.size());
    for (const auto& e : source.entries) videos.push_back(load_video(e, source.domain_tag));

    TrainLog log;
    Sgd opt({cfg.lr, cfg.momentum});
    const size_t n = videos.size();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 0xe9, static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);

        real epoch_loss = 0;
        int64_t correct = 0;
        for (size_t begin = 0; begin < n; begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(n, begin + static_cast<size_t>(cfg.batch_size));
            const size_t bs = end - begin;

            // Draw clip starts up front so parallel encoding cannot affect
            // the random stream.
            std::vector<int64_t> starts(bs);
            for (size_t s = 0; s < bs; ++s) {
                const auto& v = videos[order[begin + s]];
                const int64_t ns = n_valid_clip_starts(v.n_frames(), cfg.clip_len, cfg.frame_rate);
                if (ns <= 0) throw data_error("pretrain: video too short for one clip");
                starts[s] = rng.uniform_int(0, ns - 1);
            }

            std::vector<Encoder> sample_grads(bs, zeros_like(enc));
            std::vector<Tensor> head_gw(bs), head_gb(bs);
            std::vector<real> sample_loss(bs);
            std::vector<int> sample_correct(bs);
            parallel_for(bs, cfg.jobs, [&](size_t s) {
                const auto& v = videos[order[begin + s]];
                const Tensor clip =
                    clip_from_frames(v.frames, starts[s], cfg.clip_len, cfg.frame_rate);
                EncoderTape tape;
                const Tensor feat = encode_clip_fwd(enc, clip, tape);
                const Classification cls = classify(head, feat);
                const CrossEntropy ce = softmax_cross_entropy(cls.logits, v.label);
                sample_loss[s] = ce.loss;
                size_t arg = 0;
                kern::max_value(cls.probs.data(), cls.probs.v.size(), &arg);
                sample_correct[s] = static_cast<int64_t>(arg) == v.label ? 1 : 0;
                Tensor dlogits = softmax_cross_entropy_bwd(ce.probs, v.label);
                head_gw[s] = Tensor(head.w.shape);
                head_gb[s] = Tensor(head.b.shape);
                const Tensor dfeat = classify_bwd(head, feat, dlogits, head_gw[s], head_gb[s]);
                encode_clip_bwd(enc, tape, dfeat, sample_grads[s]);
            });

            // Fixed-order reduction keeps results independent of the job count.
            Encoder grads = zeros_like(enc);
            Tensor gw(head.w.shape), gb(head.b.shape);
            real batch_loss = 0;
            for (size_t s = 0; s < bs; ++s) {
                accumulate(grads, sample_grads[s]);
                kern::axpy(1, head_gw[s].data(), gw.data(), gw.v.size());
                kern::axpy(1, head_gb[s].data(), gb.data(), gb.v.size());
                batch_loss += sample_loss[s];
                correct += sample_correct[s];
            }
            const real inv = real(1) / static_cast<real>(bs);
            scale_params(grads, inv);
            kern::scale(inv, gw.data(), gw.v.size());
            kern::scale(inv, gb.data(), gb.v.size());
            batch_loss *= inv;
            if (!std::isfinite(batch_loss)) {
                throw numeric_error("pretrain: non-finite loss at epoch " + std::to_string(epoch));
            }
            epoch_loss += batch_loss * static_cast<real>(bs);

            std::vector<Tensor*> params;
            std::vector<const Tensor*> gptrs;
            for (auto& [name, t] : enc.named_params()) params.push_back(t);
            for (auto& [name, t] : grads.named_params()) gptrs.push_back(t);
            params.push_back(&head.w);
            params.push_back(&head.b);
            gptrs.push_back(&gw);
            gptrs.push_back(&gb);
            opt.step(params, gptrs);
        }
        log.epoch_loss.push_back(epoch_loss / static_cast<real>(n));
        log.epoch_accuracy.push_back(static_cast<real>(correct) / static_cast<real>(n));
    }
    return log;
}

}  // namespace xvad
