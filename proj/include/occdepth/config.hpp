#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "occdepth/camera_geometry.hpp"
#include "occdepth/error.hpp"
#include "occdepth/tensor_io.hpp"
#include "occdepth/toynet.hpp"

namespace occdepth {

inline constexpr int kConfigVersion = 1;

/// Training / evaluation settings. Serialized as a flat JSON object of scalars
/// with a "version" key; unknown keys are rejected.
struct TrainConfig {
    std::uint64_t seed = 0;
    long long steps = 1000;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double lr_drop_at = 2.0 / 3.0;  ///< fraction of `steps` after which lr is scaled
    double lr_drop_factor = 0.1;
    long long checkpoint_every = 0; ///< 0 = final checkpoint only
    long long train_scenes = 0;     ///< use the first K training scenes; 0 = all

    double depth_min = 0.5;
    double depth_max = 12.0;
    int depth_bins = 16;
    std::string depth_mode = "LID";

    int channels = 8;
    int encoder_width = 16;
    int refiner_width = 16;
    int refiner_depth = 2;

    bool stereo_sfa = true;  ///< cosine-weighted stereo fusion; false = plain mean
    bool oad = true;         ///< occupancy-aware feature weighting
    bool distill = true;     ///< depth supervision of the depth head
    double teacher_noise = 0.0;  ///< relative std of the noise on teacher depths
    bool augment = false;
    double augment_probability = 0.5;
    bool sem_mask_empty = false;
    bool double_precision = false;
    std::string eval_split = "test";

    [[nodiscard]] DepthBinSpec depth_spec() const {
        return DepthBinSpec(depth_min, depth_max, depth_bins, parse_depth_binning(depth_mode));
    }

    [[nodiscard]] ModelConfig model_config(int n_classes) const {
        ModelConfig m;
        m.channels = channels;
        m.depth_bins = depth_bins;
        m.n_classes = n_classes;
        m.encoder_width = encoder_width;
        m.refiner_width = refiner_width;
        m.refiner_depth = refiner_depth;
        m.seed = derive_seed(seed, "model");
        return m;
    }

    void validate() const {
        require(steps >= 0, "config: steps must be nonnegative");
        require(lr > 0.0 && weight_decay >= 0.0, "config: lr must be positive and weight_decay nonnegative");
        require(lr_drop_at >= 0.0 && lr_drop_at <= 1.0 && lr_drop_factor > 0.0,
                "config: lr_drop_at must be in [0, 1] and lr_drop_factor positive");
        require(checkpoint_every >= 0 && train_scenes >= 0, "config: checkpoint_every and train_scenes must be >= 0");
        require(teacher_noise >= 0.0, "config: teacher_noise must be nonnegative");
        require(augment_probability >= 0.0 && augment_probability <= 1.0, "config: augment_probability must be in [0, 1]");
        require(eval_split == "train" || eval_split == "val" || eval_split == "test",
                "config: eval_split must be train, val or test");
        (void)depth_spec();
        model_config(1).validate();
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

#define OCCDEPTH_CONFIG_FIELDS(X)                                                                            \
    X(seed) X(steps) X(lr) X(weight_decay) X(lr_drop_at) X(lr_drop_factor) X(checkpoint_every) X(train_scenes) \
    X(depth_min) X(depth_max) X(depth_bins) X(depth_mode) X(channels) X(encoder_width) X(refiner_width)      \
    X(refiner_depth) X(stereo_sfa) X(oad) X(distill) X(teacher_noise) X(augment) X(augment_probability)        \
    X(sem_mask_empty) X(double_precision) X(eval_split)

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j{{"version", kConfigVersion}};
#define OCCDEPTH_PUT(name) j[#name] = c.name;
    OCCDEPTH_CONFIG_FIELDS(OCCDEPTH_PUT)
#undef OCCDEPTH_PUT
    return j;
}

namespace detail {

template <typename V>
void read_config_value(const nlohmann::json& value, const std::string& key, V& out) {
    using nlohmann::json;
    const bool ok = [&] {
        if constexpr (std::is_same_v<V, bool>) return value.is_boolean();
        else if constexpr (std::is_same_v<V, std::string>) return value.is_string();
        else if constexpr (std::is_integral_v<V>) return value.is_number_integer() && (std::is_signed_v<V> || value >= 0);
        else return value.is_number();
    }();
    if (!ok) throw ContractError("config: key '" + key + "' has the wrong type");
    out = value.get<V>();
}

}  // namespace detail

/// Applies the keys of `j` on top of `base`. The version key is optional here
/// so that override sets can be partial.
inline TrainConfig apply_config(TrainConfig base, const nlohmann::json& j) {
    if (!j.is_object()) throw ContractError("config: expected a flat JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "version") {
            if (!value.is_number_integer() || value.get<int>() != kConfigVersion)
                throw ContractError("config: unsupported version (expected " + std::to_string(kConfigVersion) + ")");
            continue;
        }
        bool known = false;
#define OCCDEPTH_GET(name)                                      \
    if (key == #name) {                                         \
        detail::read_config_value(value, key, base.name);       \
        known = true;                                           \
    }
        OCCDEPTH_CONFIG_FIELDS(OCCDEPTH_GET)
#undef OCCDEPTH_GET
        if (!known) throw ContractError("config: unknown key '" + key + "'");
    }
    base.validate();
    return base;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ContractError("config file not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ContractError("config: " + path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("version")) throw ContractError("config: missing 'version' key in " + path.string());
    return apply_config(TrainConfig{}, j);
}

/// Parses "key=value" into a one-entry JSON object, typing the value by the
/// default config's field type.
inline nlohmann::json parse_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ContractError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    const nlohmann::json defaults = to_json(TrainConfig{});
    if (!defaults.contains(key) || key == "version") throw ContractError("config: unknown key '" + key + "'");
    const auto& proto = defaults.at(key);
    nlohmann::json value;
    if (proto.is_string()) {
        value = text;
    } else {
        try {
            value = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception&) {
            throw ContractError("config: cannot parse value for '" + key + "': " + text);
        }
    }
    return nlohmann::json{{key, value}};
}

}  // namespace occdepth
