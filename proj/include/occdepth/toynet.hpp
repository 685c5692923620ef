#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "occdepth/lifting.hpp"
#include "occdepth/nn.hpp"
#include "occdepth/oad.hpp"
#include "occdepth/rng.hpp"
#include "occdepth/tensor_io.hpp"

namespace occdepth {

/// Sizes of the small stand-in networks. All counts must be positive.
struct ModelConfig {
    int channels = 8;         ///< C, pyramid / lifted feature channels
    int depth_bins = 16;      ///< D
    int n_classes = 8;        ///< N semantic classes (plus empty)
    int encoder_width = 16;   ///< hidden width of the 2D encoder and depth head
    int refiner_width = 16;   ///< hidden width of the 3D refiner
    int refiner_depth = 2;    ///< number of 3x3x3 refiner layers
    std::uint64_t seed = 0;
    bool zero_init_heads = false;

    void validate() const {
        require(channels > 0 && depth_bins >= 2 && n_classes > 0 && encoder_width > 0 && refiner_width > 0 &&
                    refiner_depth > 0,
                "ModelConfig: all sizes must be positive (depth_bins >= 2)");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"channels", c.channels},           {"depth_bins", c.depth_bins},
            {"n_classes", c.n_classes},         {"encoder_width", c.encoder_width},
            {"refiner_width", c.refiner_width}, {"refiner_depth", c.refiner_depth},
            {"seed", c.seed},                   {"zero_init_heads", c.zero_init_heads}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.channels = j.at("channels");
    c.depth_bins = j.at("depth_bins");
    c.n_classes = j.at("n_classes");
    c.encoder_width = j.at("encoder_width");
    c.refiner_width = j.at("refiner_width");
    c.refiner_depth = j.at("refiner_depth");
    c.seed = j.at("seed");
    c.zero_init_heads = j.value("zero_init_heads", false);
    c.validate();
    return c;
}

/// Minimal 2D encoder, depth head and 3D refiner with two prediction heads.
///
/// Encoder: a 3x3 conv at full resolution followed by three stride-2 3x3
/// convs (all ReLU); each level is projected by a 1x1 conv to C channels,
/// giving the pyramid at scales 1, 2, 4, 8.
/// Depth head: 3x3 conv + ReLU, then 1x1 conv to D logits, on the scale-8 map.
/// Refiner: the volume plus three normalised coordinate channels through
/// `refiner_depth` 3x3x3 conv + ReLU layers. The 2-class head is a 1x1x1 conv
/// of the refined features; the (N+1)-class head is a 1x1x1 conv of the
/// concatenation [refined features | 2-class logits].
template <typename T>
class Model {
public:
    struct EncoderCache {
        std::array<typename nn::Conv2d<T>::Cache, 4> conv;
        std::array<typename nn::Conv2d<T>::Cache, 4> proj;
        std::array<Tensor<T>, 4> hidden;
        std::array<std::array<int, 2>, 4> dims{};
    };
    struct DepthCache {
        typename nn::Conv2d<T>::Cache conv, out;
        Tensor<T> hidden;
    };
    struct RefineCache {
        std::vector<typename nn::Conv3d<T>::Cache> conv;
        std::vector<Tensor<T>> hidden;
        typename nn::Conv3d<T>::Cache head2, headn;
    };
    struct RefineOutput {
        FeatureVolume<T> features;
        Tensor<T> logits_2class;
        Tensor<T> logits_nclass;
    };

    explicit Model(const ModelConfig& config) : config_(config) {
        config.validate();
        const int w = config.encoder_width;
        const int c = config.channels;
        for (int l = 0; l < 4; ++l) {
            const std::string tag = "encoder.s" + std::to_string(kPyramidScales[l]);
            encoder_conv_[l] = nn::Conv2d<T>(params_, tag + ".conv", l == 0 ? 3 : w, w, 3, l == 0 ? 1 : 2, 1);
            encoder_proj_[l] = nn::Conv2d<T>(params_, tag + ".proj", w, c, 1, 1, 0);
        }
        depth_conv_ = nn::Conv2d<T>(params_, "depth_head.conv", c, w, 3, 1, 1);
        depth_out_ = nn::Conv2d<T>(params_, "depth_head.out", w, config.depth_bins, 1, 1, 0);
        const int r = config.refiner_width;
        for (int l = 0; l < config.refiner_depth; ++l)
            refiner_.emplace_back(params_, "refiner.conv" + std::to_string(l), l == 0 ? c + 3 : r, r, 3, 1, 1);
        head2_ = nn::Conv3d<T>(params_, "head.occupancy", r, 2, 1, 1, 0);
        headn_ = nn::Conv3d<T>(params_, "head.semantic", r + 2, config.n_classes + 1, 1, 1, 0);

        Rng rng(derive_seed(config.seed, "model-init"));
        for (auto& conv : encoder_conv_) conv.initialize(params_, rng);
        for (auto& conv : encoder_proj_) conv.initialize(params_, rng);
        depth_conv_.initialize(params_, rng);
        depth_out_.initialize(params_, rng);
        for (auto& conv : refiner_) conv.initialize(params_, rng);
        head2_.initialize(params_, rng, config.zero_init_heads ? 0.0 : 1.0);
        headn_.initialize(params_, rng, config.zero_init_heads ? 0.0 : 1.0);
    }

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] nn::ParamStore<T>& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParamStore<T>& params() const noexcept { return params_; }

    /// Image H x W x 3 (H, W divisible by 8) -> pyramid at scales 1, 2, 4, 8.
    FeaturePyramid<T> encode_2d(const Tensor<T>& image, EncoderCache* cache = nullptr) const {
        require(image.rank() == 3 && image.dim(2) == 3, "encode_2d: image must be H x W x 3");
        const int h = static_cast<int>(image.dim(0));
        const int w = static_cast<int>(image.dim(1));
        require(h % 8 == 0 && w % 8 == 0 && h > 0 && w > 0, "encode_2d: image dimensions must be divisible by 8");
        FeaturePyramid<T> pyramid;
        const Tensor<T>* input = &image;
        std::array<int, 2> dims{h, w};
        Tensor<T> hidden;
        for (int l = 0; l < 4; ++l) {
            typename nn::Conv2d<T>::Cache conv_cache, proj_cache;
            Tensor<T> next = encoder_conv_[l].forward(params_, *input, dims, cache ? &conv_cache : nullptr);
            dims = encoder_conv_[l].output_dims(dims);
            nn::relu_inplace(next);
            pyramid.levels[l] = encoder_proj_[l].forward(params_, next, dims, cache ? &proj_cache : nullptr);
            if (cache) {
                cache->conv[l] = std::move(conv_cache);
                cache->proj[l] = std::move(proj_cache);
                cache->dims[l] = dims;
                cache->hidden[l] = next;
            }
            hidden = std::move(next);
            input = &hidden;
        }
        return pyramid;
    }

    /// Accumulates encoder parameter gradients from pyramid gradients.
    void encode_2d_backward(const EncoderCache& cache, const FeaturePyramid<T>& grad) {
        Tensor<T> grad_hidden;
        for (int l = 3; l >= 0; --l) {
            Tensor<T> g = encoder_proj_[l].backward(params_, cache.proj[l], grad.levels[l]);
            if (!grad_hidden.empty()) add_into(g, grad_hidden);
            nn::relu_backward_inplace(cache.hidden[l], g);
            grad_hidden = encoder_conv_[l].backward(params_, cache.conv[l], g, l > 0);
        }
    }

    /// Scale-8 features h x w x C -> depth logits h x w x D.
    DepthLogits<T> depth_head(const Tensor<T>& scale8, DepthCache* cache = nullptr) const {
        require(scale8.rank() == 3 && static_cast<int>(scale8.dim(2)) == config_.channels,
                "depth_head: input must be h x w x C");
        const std::array<int, 2> dims{static_cast<int>(scale8.dim(0)), static_cast<int>(scale8.dim(1))};
        typename nn::Conv2d<T>::Cache c1, c2;
        Tensor<T> hidden = depth_conv_.forward(params_, scale8, dims, cache ? &c1 : nullptr);
        nn::relu_inplace(hidden);
        DepthLogits<T> out{depth_out_.forward(params_, hidden, dims, cache ? &c2 : nullptr)};
        if (cache) {
            cache->conv = std::move(c1);
            cache->out = std::move(c2);
            cache->hidden = std::move(hidden);
        }
        return out;
    }

    /// Returns the gradient with respect to the scale-8 features.
    Tensor<T> depth_head_backward(const DepthCache& cache, const Tensor<T>& grad_logits) {
        Tensor<T> g = depth_out_.backward(params_, cache.out, grad_logits);
        nn::relu_backward_inplace(cache.hidden, g);
        return depth_conv_.backward(params_, cache.conv, g);
    }

    RefineOutput refine_3d(const FeatureVolume<T>& volume, RefineCache* cache = nullptr) const {
        require(volume.channels() == config_.channels, "refine_3d: volume channel count does not match the model");
        const std::array<int, 3> dims = volume.grid.dims();
        const std::size_t c = volume.channels();
        const std::size_t n = volume.voxels();
        Tensor<T> input(Shape{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                              static_cast<std::size_t>(dims[2]), c + 3});
        for (std::size_t v = 0; v < n; ++v) {
            const auto ijk = volume.grid.coords(v);
            T* dst = input.data() + v * (c + 3);
            std::copy(volume.voxel(v), volume.voxel(v) + c, dst);
            for (int a = 0; a < 3; ++a) dst[c + a] = static_cast<T>(2.0 * (ijk[a] + 0.5) / dims[a] - 1.0);
        }
        if (cache) {
            cache->conv.assign(refiner_.size(), {});
            cache->hidden.assign(refiner_.size(), {});
        }
        Tensor<T> x = std::move(input);
        for (std::size_t l = 0; l < refiner_.size(); ++l) {
            Tensor<T> y = refiner_[l].forward(params_, x, dims, cache ? &cache->conv[l] : nullptr);
            nn::relu_inplace(y);
            if (cache) cache->hidden[l] = y;
            x = std::move(y);
        }
        Tensor<T> logits2 = head2_.forward(params_, x, dims, cache ? &cache->head2 : nullptr);
        const std::size_t r = x.dim(3);
        Tensor<T> concat(Shape{x.dim(0), x.dim(1), x.dim(2), r + 2});
        for (std::size_t v = 0; v < n; ++v) {
            std::copy(x.data() + v * r, x.data() + (v + 1) * r, concat.data() + v * (r + 2));
            concat[v * (r + 2) + r] = logits2[2 * v];
            concat[v * (r + 2) + r + 1] = logits2[2 * v + 1];
        }
        Tensor<T> logitsn = headn_.forward(params_, concat, dims, cache ? &cache->headn : nullptr);
        return {FeatureVolume<T>(volume.grid, std::move(x)), std::move(logits2), std::move(logitsn)};
    }

    /// Returns the gradient with respect to the refiner's input volume.
    Tensor<T> refine_3d_backward(const RefineCache& cache, const Tensor<T>& grad_logits2,
                                 const Tensor<T>& grad_logitsn) {
        Tensor<T> grad_concat = headn_.backward(params_, cache.headn, grad_logitsn);
        const std::size_t r = static_cast<std::size_t>(config_.refiner_width);
        const std::size_t n = grad_logits2.size() / 2;
        Tensor<T> g2 = grad_logits2;
        Tensor<T> grad_features(cache.hidden.back().shape());
        for (std::size_t v = 0; v < n; ++v) {
            const T* src = grad_concat.data() + v * (r + 2);
            std::copy(src, src + r, grad_features.data() + v * r);
            g2[2 * v] += src[r];
            g2[2 * v + 1] += src[r + 1];
        }
        add_into(grad_features, head2_.backward(params_, cache.head2, g2));
        Tensor<T> g = std::move(grad_features);
        for (std::size_t l = refiner_.size(); l-- > 0;) {
            nn::relu_backward_inplace(cache.hidden[l], g);
            g = refiner_[l].backward(params_, cache.conv[l], g);
        }
        // drop the coordinate channels
        const std::size_t c = static_cast<std::size_t>(config_.channels);
        Tensor<T> grad_volume(Shape{g.dim(0), g.dim(1), g.dim(2), c});
        for (std::size_t v = 0; v < n; ++v)
            std::copy(g.data() + v * (c + 3), g.data() + v * (c + 3) + c, grad_volume.data() + v * c);
        return grad_volume;
    }

    /// Parameter index of the semantic head weight (Cout x (R + 2)); columns
    /// [0, R) read refined features, [R, R + 2) read the 2-class logits.
    [[nodiscard]] std::size_t semantic_head_weight() const noexcept { return headn_.weight_index(); }

private:
    ModelConfig config_;
    nn::ParamStore<T> params_;
    std::array<nn::Conv2d<T>, 4> encoder_conv_;
    std::array<nn::Conv2d<T>, 4> encoder_proj_;
    nn::Conv2d<T> depth_conv_;
    nn::Conv2d<T> depth_out_;
    std::vector<nn::Conv3d<T>> refiner_;
    nn::Conv3d<T> head2_;
    nn::Conv3d<T> headn_;
};

// ---------------------------------------------------------------------------
// Checkpoint archive (.odck), little-endian:
//
//   char[4] "ODCK" | u32 format version (1) | u32 metadata length | metadata
//   JSON (model config under "model", plus free-form run metadata) | u32 param
//   count | per param: u32 name length, name, u64 blob length, .odt tensor blob
//   | u32 CRC-32 of all preceding bytes.
//
// Parameters are stored as float64 so float and double models share a format.

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::string encode_checkpoint(const Model<T>& model, const nlohmann::json& metadata = nlohmann::json::object()) {
    std::string out = "ODCK";
    io::put_le(out, kCheckpointVersion);
    nlohmann::json meta = metadata;
    meta["model"] = to_json(model.config());
    const std::string meta_text = meta.dump();
    io::put_le(out, static_cast<std::uint32_t>(meta_text.size()));
    out += meta_text;
    io::put_le(out, static_cast<std::uint32_t>(model.params().size()));
    for (const auto& p : model.params().all()) {
        io::put_le(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        const std::string blob = io::encode_tensor(p.value.template cast<double>());
        io::put_le(out, static_cast<std::uint64_t>(blob.size()));
        out += blob;
    }
    io::put_le(out, io::crc32_of(out));
    return out;
}

struct CheckpointContents {
    nlohmann::json metadata;
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor<double>>> params;
};

inline CheckpointContents decode_checkpoint(std::string_view bytes) {
    io::Reader r(io::checked_body(bytes, "checkpoint"));
    if (r.take(4) != "ODCK") throw DataError("checkpoint: bad magic bytes");
    if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(v));
    CheckpointContents out;
    const auto meta_len = r.get<std::uint32_t>();
    try {
        out.metadata = nlohmann::json::parse(r.take(meta_len));
        out.config = model_config_from_json(out.metadata.at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>();
        std::string name(r.take(name_len));
        const auto blob_len = r.get<std::uint64_t>();
        out.params.emplace_back(std::move(name), io::decode_tensor<double>(r.take(blob_len), "checkpoint parameter"));
    }
    if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
    return out;
}

/// Copies checkpoint parameters into a model built from the stored config.
template <typename T>
Model<T> model_from_checkpoint(const CheckpointContents& ck) {
    Model<T> model(ck.config);
    auto& params = model.params().all();
    if (params.size() != ck.params.size()) throw DataError("checkpoint: parameter count does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, value] = ck.params[i];
        if (name != params[i].name || value.shape() != params[i].value.shape())
            throw DataError("checkpoint: parameter '" + name + "' does not match the model");
        params[i].value = value.template cast<T>();
    }
    return model;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
    io::write_file_atomic(path, encode_checkpoint(model, metadata));
}

inline CheckpointContents load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("missing checkpoint: " + path.string());
    return decode_checkpoint(io::read_file(path));
}

}  // namespace occdepth
