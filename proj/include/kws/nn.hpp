#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/common.hpp"
#include "kws/dsp.hpp"
#include "kws/tensor.hpp"

namespace kws {

// Separable-conv ResNet trunk: 6 conv blocks (depthwise+pointwise, layer
// norm, relu) with a residual add joining every 2 blocks, then flatten and
// two dense layers ending in a 128-d embedding. Strides and widths are
// configurable; the defaults downsample enough to keep the flatten (and the
// first dense layer) small.
struct TrunkConfig {
    std::vector<int> channels = {24, 24, 32, 32, 48, 48};
    std::vector<int> strides = {2, 2, 2, 1, 2, 1};
    int kernel = 3;
    int dense_hidden = 256;
    int embedding_dim = 128;
    int input_frames = 98;
    int input_coeffs = 40;

    void validate() const {
        require(channels.size() == 6 && strides.size() == 6, "TrunkConfig: exactly 6 conv blocks");
        require(kernel % 2 == 1, "TrunkConfig: kernel must be odd");
        require(dense_hidden > 0 && embedding_dim > 0, "TrunkConfig: bad dense widths");
    }

    bool operator==(const TrunkConfig&) const = default;

    // Small config for gradient checks and toy runs.
    static TrunkConfig tiny(int frames = 12, int coeffs = 10) {
        TrunkConfig c;
        c.channels = {2, 2, 3, 3, 3, 3};
        c.strides = {2, 1, 2, 1, 1, 1};
        c.dense_hidden = 8;
        c.embedding_dim = 6;
        c.input_frames = frames;
        c.input_coeffs = coeffs;
        return c;
    }
};

// Label polarity for the contrastive loss. The gradient-sane default gives
// positive pairs target 1 (D near 1 for similar inputs); paper_stated swaps
// the targets.
enum class LabelConvention { SimilarIs1, PaperStated };

inline double contrastive_target(bool positive, LabelConvention conv) {
    const bool flip = (conv == LabelConvention::PaperStated);
    return (positive != flip) ? 1.0 : 0.0;
}

inline Node contrastive_bce(Tape& tape, const Node& d, bool positive,
                            LabelConvention conv = LabelConvention::SimilarIs1) {
    return op_bce(tape, d, contrastive_target(positive, conv));
}

struct NamedParam {
    std::string name;
    Node node;
};

// Trunk + optional softmax head. Trunk parameters are prefixed "conv.",
// the two dense layers "dense.", the head "head."; freeze_base freezes the
// "conv." group.
class Model {
public:
    Model() = default;

    Model(const TrunkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "model_init"));
        int c_in = 1;
        for (int b = 0; b < 6; ++b) {
            const int c_out = cfg_.channels[b];
            add_param("conv.block" + std::to_string(b) + ".dw",
                      init_uniform({cfg_.kernel, cfg_.kernel, c_in},
                                   cfg_.kernel * cfg_.kernel, rng));
            add_param("conv.block" + std::to_string(b) + ".pw",
                      init_uniform({c_in, c_out}, c_in, rng));
            Tensor gain({c_out});
            gain.fill(1.0);
            add_param("conv.block" + std::to_string(b) + ".ln_gain", gain);
            add_param("conv.block" + std::to_string(b) + ".ln_bias", Tensor({c_out}));
            c_in = c_out;
        }
        // Residual projections where a pair changes shape.
        int h = cfg_.input_frames, w = cfg_.input_coeffs;
        int pair_cin = 1;
        for (int pair = 0; pair < 3; ++pair) {
            const int s = cfg_.strides[2 * pair] * cfg_.strides[2 * pair + 1];
            const int c_out_pair = cfg_.channels[2 * pair + 1];
            if (s != 1 || pair_cin != c_out_pair)
                add_param("conv.proj" + std::to_string(pair) + ".w",
                          init_uniform({pair_cin, c_out_pair}, pair_cin, rng));
            h = detail::ceil_div(h, s);
            w = detail::ceil_div(w, s);
            pair_cin = c_out_pair;
        }
        flat_dim_ = h * w * pair_cin;
        add_param("dense.hidden.w", init_uniform({cfg_.dense_hidden, flat_dim_}, flat_dim_, rng));
        add_param("dense.hidden.b", Tensor({cfg_.dense_hidden}));
        add_param("dense.embed.w",
                  init_uniform({cfg_.embedding_dim, cfg_.dense_hidden}, cfg_.dense_hidden, rng));
        add_param("dense.embed.b", Tensor({cfg_.embedding_dim}));
    }

    const TrunkConfig& config() const { return cfg_; }
    int flat_dim() const { return flat_dim_; }

    // Replaces any existing head with a fresh softmax layer of num_classes
    // outputs. Trunk parameters are untouched.
    void attach_head(int num_classes, std::uint64_t seed) {
        require(num_classes >= 2, "attach_head: need at least two classes");
        drop_head();
        Rng rng(derive_seed(seed, "head_init"));
        add_param("head.w", init_uniform({num_classes, cfg_.embedding_dim}, cfg_.embedding_dim, rng));
        add_param("head.b", Tensor({num_classes}));
        num_classes_ = num_classes;
    }

    void drop_head() {
        std::erase_if(params_, [](const NamedParam& p) { return p.name.rfind("head.", 0) == 0; });
        num_classes_ = 0;
    }

    bool has_head() const { return num_classes_ > 0; }
    int num_classes() const { return num_classes_; }

    Node param(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return p.node;
        throw Error("Model: no parameter '" + name + "'");
    }

    const std::vector<NamedParam>& params() const { return params_; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.node->val.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.node->grad.fill(0.0);
    }

    Node input_from_features(const FeatureMatrix& fm) const {
        require(fm.num_frames == cfg_.input_frames && fm.num_coeffs == cfg_.input_coeffs,
                "Model: feature shape mismatch");
        return make_node(Tensor({cfg_.input_frames, cfg_.input_coeffs, 1}, fm.data));
    }

    // 6 blocks with residual adds every 2, flatten, dense+relu, dense.
    Node trunk_forward(Tape& tape, const Node& input) const {
        Node x = input;
        for (int pair = 0; pair < 3; ++pair) {
            Node pair_in = x;
            for (int b = 2 * pair; b < 2 * pair + 2; ++b) {
                x = op_separable_conv2d(tape, x, param("conv.block" + std::to_string(b) + ".dw"),
                                        param("conv.block" + std::to_string(b) + ".pw"),
                                        cfg_.strides[b]);
                x = op_layer_norm(tape, x, param("conv.block" + std::to_string(b) + ".ln_gain"),
                                  param("conv.block" + std::to_string(b) + ".ln_bias"));
                x = op_relu(tape, x);
            }
            Node skip = pair_in;
            if (has_param("conv.proj" + std::to_string(pair) + ".w")) {
                const int s = cfg_.strides[2 * pair] * cfg_.strides[2 * pair + 1];
                skip = op_pointwise_conv(tape, pair_in,
                                         param("conv.proj" + std::to_string(pair) + ".w"), s);
            }
            x = op_add(tape, x, skip);
        }
        x = op_flatten(tape, x);
        x = op_relu(tape, op_dense(tape, x, param("dense.hidden.w"), param("dense.hidden.b")));
        return op_dense(tape, x, param("dense.embed.w"), param("dense.embed.b"));
    }

    Node head_forward(Tape& tape, const Node& embedding) const {
        require(has_head(), "Model: no head attached");
        return op_dense(tape, embedding, param("head.w"), param("head.b"));
    }

    // Deep copy: parameter tensors are duplicated so trained variants do not
    // share state with their initialization.
    Model clone() const {
        Model m = *this;
        m.params_.clear();
        for (const auto& p : params_) m.params_.push_back({p.name, make_param(p.node->val)});
        return m;
    }

    bool has_param(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return true;
        return false;
    }

private:
    static Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
        Tensor t(std::move(shape));
        const double limit = std::sqrt(6.0 / fan_in);
        for (auto& v : t.data) v = rng.uniform(-limit, limit);
        return t;
    }

    void add_param(std::string name, Tensor t) {
        params_.push_back({std::move(name), make_param(std::move(t))});
    }

    TrunkConfig cfg_;
    std::vector<NamedParam> params_;
    int flat_dim_ = 0;
    int num_classes_ = 0;
};

// ---- checkpoint ------------------------------------------------------------
// Versioned binary: magic, version, TrunkConfig, then named float32 blobs.
// A JSON sidecar at <path>.json carries training metadata.

inline constexpr char kCkptMagic[8] = {'K', 'W', 'S', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const Model& model, const std::string& path,
                            const nlohmann::json& metadata = {}) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_checkpoint: cannot open " + path);
    auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write(kCkptMagic, 8);
    w32(1);  // version
    const TrunkConfig& c = model.config();
    for (int i = 0; i < 6; ++i) w32(static_cast<std::uint32_t>(c.channels[i]));
    for (int i = 0; i < 6; ++i) w32(static_cast<std::uint32_t>(c.strides[i]));
    w32(static_cast<std::uint32_t>(c.kernel));
    w32(static_cast<std::uint32_t>(c.dense_hidden));
    w32(static_cast<std::uint32_t>(c.embedding_dim));
    w32(static_cast<std::uint32_t>(c.input_frames));
    w32(static_cast<std::uint32_t>(c.input_coeffs));
    w32(static_cast<std::uint32_t>(model.num_classes()));
    w32(static_cast<std::uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        w32(static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        w32(static_cast<std::uint32_t>(p.node->val.shape.size()));
        for (int d : p.node->val.shape) w32(static_cast<std::uint32_t>(d));
        for (double v : p.node->val.data) {
            float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    require(out.good(), "save_checkpoint: write failed: " + path);
    if (!metadata.is_null()) {
        std::ofstream meta(path + ".json");
        meta << metadata.dump(2) << '\n';
    }
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    require(in.good() && std::memcmp(magic, kCkptMagic, 8) == 0,
            "load_checkpoint: bad magic: " + path);
    auto r32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    require(r32() == 1, "load_checkpoint: unsupported version: " + path);
    TrunkConfig cfg;
    for (int i = 0; i < 6; ++i) cfg.channels[i] = static_cast<int>(r32());
    for (int i = 0; i < 6; ++i) cfg.strides[i] = static_cast<int>(r32());
    cfg.kernel = static_cast<int>(r32());
    cfg.dense_hidden = static_cast<int>(r32());
    cfg.embedding_dim = static_cast<int>(r32());
    cfg.input_frames = static_cast<int>(r32());
    cfg.input_coeffs = static_cast<int>(r32());
    const int num_classes = static_cast<int>(r32());
    const std::uint32_t n_params = r32();

    Model model(cfg, 0);
    if (num_classes > 0) model.attach_head(num_classes, 0);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::uint32_t name_len = r32();
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t ndim = r32();
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(r32());
        Node p = model.param(name);
        require(p->val.shape == shape,
                "load_checkpoint: shape mismatch for parameter '" + name + "'");
        for (auto& v : p->val.data) {
            float f = 0;
            in.read(reinterpret_cast<char*>(&f), 4);
            v = f;
        }
    }
    require(in.good(), "load_checkpoint: truncated file: " + path);
    return model;
}

}  // namespace kws
