#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "occdepth/scenes.hpp"
#include "occdepth/tensor_io.hpp"

// Dataset directory layout:
//
//   manifest.json               format, class names, scene params, grid, rig, splits
//   samples/<sample_id>/
//     left_image.odt  right_image.odt     f32 H x W x 3, values in [0, 1]
//     left_depth.odt  right_depth.odt     f32 H x W, camera z in meters, 0 = invalid
//     labels.odt                          u8 X x Y x Z, 0 empty, 1..N classes, 255 ignored
//     meta.json                           sample id, class count, grid and both cameras

namespace occdepth {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr const char* kDatasetFormat = "occdepth-dataset";

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

template <int R, int C>
Eigen::Matrix<double, R, C> matrix_from_json(const nlohmann::json& j) {
    Eigen::Matrix<double, R, C> m;
    if (!j.is_array() || j.size() != R) throw DataError("meta: matrix has wrong row count");
    for (int r = 0; r < R; ++r) {
        if (!j[r].is_array() || j[r].size() != C) throw DataError("meta: matrix has wrong column count");
        for (int c = 0; c < C; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

}  // namespace detail

inline nlohmann::json to_json(const VoxelGridSpec& g) {
    return {{"origin", {g.origin().x(), g.origin().y(), g.origin().z()}},
            {"dims", {g.dims()[0], g.dims()[1], g.dims()[2]}},
            {"voxel_size", g.voxel_size()}};
}

inline VoxelGridSpec grid_from_json(const nlohmann::json& j) {
    const auto o = j.at("origin").get<std::vector<double>>();
    const auto d = j.at("dims").get<std::vector<int>>();
    if (o.size() != 3 || d.size() != 3) throw DataError("grid: origin and dims need three entries");
    return VoxelGridSpec(Eigen::Vector3d(o[0], o[1], o[2]), {d[0], d[1], d[2]}, j.at("voxel_size").get<double>());
}

inline nlohmann::json to_json(const CameraModel& cam) {
    return {{"K", detail::matrix_json(cam.intrinsics())},
            {"cam_from_world", detail::matrix_json(cam.cam_from_world())},
            {"width", cam.width()},
            {"height", cam.height()}};
}

inline CameraModel camera_from_json(const nlohmann::json& j) {
    return CameraModel(detail::matrix_from_json<3, 3>(j.at("K")), detail::matrix_from_json<4, 4>(j.at("cam_from_world")),
                       j.at("width").get<int>(), j.at("height").get<int>());
}

inline nlohmann::json to_json(const CameraRig& rig) { return {{"left", to_json(rig.left)}, {"right", to_json(rig.right)}}; }

inline CameraRig rig_from_json(const nlohmann::json& j) {
    return CameraRig(camera_from_json(j.at("left")), camera_from_json(j.at("right")));
}

inline nlohmann::json to_json(const SceneParams& p) {
    return {{"grid_dims", p.grid_dims},
            {"voxel_size", p.voxel_size},
            {"image_width", p.image_width},
            {"image_height", p.image_height},
            {"horizontal_fov_deg", p.horizontal_fov_deg},
            {"baseline", p.baseline},
            {"camera_height", p.camera_height},
            {"camera_z", p.camera_z},
            {"pitch_deg", p.pitch_deg},
            {"n_classes", p.n_classes},
            {"min_objects", p.min_objects},
            {"max_objects", p.max_objects},
            {"min_object_extent", p.min_object_extent},
            {"max_object_extent", p.max_object_extent},
            {"texture_amplitude", p.texture_amplitude},
            {"texture_cell", p.texture_cell},
            {"color_noise", p.color_noise}};
}

inline SceneParams scene_params_from_json(const nlohmann::json& j) {
    SceneParams p;
    p.grid_dims = j.at("grid_dims").get<std::array<int, 3>>();
    p.voxel_size = j.at("voxel_size");
    p.image_width = j.at("image_width");
    p.image_height = j.at("image_height");
    p.horizontal_fov_deg = j.at("horizontal_fov_deg");
    p.baseline = j.at("baseline");
    p.camera_height = j.at("camera_height");
    p.camera_z = j.at("camera_z");
    p.pitch_deg = j.at("pitch_deg");
    p.n_classes = j.at("n_classes");
    p.min_objects = j.at("min_objects");
    p.max_objects = j.at("max_objects");
    p.min_object_extent = j.at("min_object_extent");
    p.max_object_extent = j.at("max_object_extent");
    p.texture_amplitude = j.at("texture_amplitude");
    p.texture_cell = j.at("texture_cell");
    p.color_noise = j.at("color_noise");
    return p;
}

inline void write_sample(const std::filesystem::path& dir, const SceneSample& s) {
    std::filesystem::create_directories(dir);
    io::write_tensor_file(dir / "left_image.odt", s.left_image);
    io::write_tensor_file(dir / "right_image.odt", s.right_image);
    io::write_tensor_file(dir / "left_depth.odt", s.left_depth);
    io::write_tensor_file(dir / "right_depth.odt", s.right_depth);
    const auto& d = s.labels.dims;
    io::write_tensor_file(dir / "labels.odt",
                          Tensor<std::uint8_t>(Shape{static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]),
                                                     static_cast<std::size_t>(d[2])},
                                               s.labels.semantic));
    const nlohmann::json meta{{"sample_id", s.sample_id},
                              {"n_classes", s.labels.n_classes},
                              {"grid", to_json(s.grid)},
                              {"rig", to_json(s.rig)}};
    io::write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

inline SceneSample read_sample(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DataError("missing sample directory: " + dir.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(io::read_file(dir / "meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir.string() + "/meta.json: " + e.what());
    }
    try {
        VoxelGridSpec grid = grid_from_json(meta.at("grid"));
        CameraRig rig = rig_from_json(meta.at("rig"));
        auto labels_tensor = io::read_tensor_file<std::uint8_t>(dir / "labels.odt");
        if (labels_tensor.rank() != 3 || static_cast<int>(labels_tensor.dim(0)) != grid.dims()[0] ||
            static_cast<int>(labels_tensor.dim(1)) != grid.dims()[1] ||
            static_cast<int>(labels_tensor.dim(2)) != grid.dims()[2])
            throw DataError(dir.string() + ": labels shape does not match the grid");
        VoxelLabels labels(grid.dims(), meta.at("n_classes").get<int>());
        labels.semantic = labels_tensor.storage();
        labels.validate();
        SceneSample s{meta.at("sample_id").get<std::string>(),
                      io::read_tensor_file<float>(dir / "left_image.odt"),
                      io::read_tensor_file<float>(dir / "right_image.odt"),
                      io::read_tensor_file<float>(dir / "left_depth.odt"),
                      io::read_tensor_file<float>(dir / "right_depth.odt"),
                      std::move(labels),
                      rig,
                      grid};
        const Shape image{static_cast<std::size_t>(rig.left.height()), static_cast<std::size_t>(rig.left.width()), 3};
        const Shape depth{image[0], image[1]};
        if (s.left_image.shape() != image || s.right_image.shape() != image || s.left_depth.shape() != depth ||
            s.right_depth.shape() != depth)
            throw DataError(dir.string() + ": image or depth shape does not match the cameras");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir.string() + "/meta.json: " + e.what());
    } catch (const ContractError& e) {
        throw DataError(dir.string() + ": " + e.what());
    }
}

struct Splits {
    std::vector<std::string> train, val, test;

    [[nodiscard]] const std::vector<std::string>& get(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw DomainError("unknown split '" + name + "' (expected train, val or test)");
    }
    [[nodiscard]] std::size_t total() const { return train.size() + val.size() + test.size(); }
};

struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    std::uint64_t master_seed = 0;
    SceneParams params;
    std::vector<std::string> class_names;
    Splits splits;
    VoxelGridSpec grid{Eigen::Vector3d::Zero(), {1, 1, 1}, 1.0};
    CameraRig rig = make_rig(SceneParams{});
};

inline nlohmann::json to_json(const DatasetManifest& m) {
    return {{"format", kDatasetFormat},
            {"format_version", m.format_version},
            {"master_seed", m.master_seed},
            {"n_classes", m.params.n_classes},
            {"class_names", m.class_names},
            {"scene_params", to_json(m.params)},
            {"grid", to_json(m.grid)},
            {"rig", to_json(m.rig)},
            {"splits", {{"train", m.splits.train}, {"val", m.splits.val}, {"test", m.splits.test}}}};
}

inline DatasetManifest read_manifest(const std::filesystem::path& root) {
    const auto path = root / "manifest.json";
    if (!std::filesystem::exists(path)) throw DataError("missing dataset manifest: " + path.string());
    try {
        const auto j = nlohmann::json::parse(io::read_file(path));
        if (j.at("format").get<std::string>() != kDatasetFormat) throw DataError(path.string() + ": not a dataset manifest");
        DatasetManifest m;
        m.format_version = j.at("format_version");
        if (m.format_version != kDatasetFormatVersion)
            throw DataError(path.string() + ": unsupported format_version " + std::to_string(m.format_version));
        m.master_seed = j.at("master_seed");
        m.params = scene_params_from_json(j.at("scene_params"));
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        m.grid = grid_from_json(j.at("grid"));
        m.rig = rig_from_json(j.at("rig"));
        const auto& s = j.at("splits");
        m.splits = {s.at("train").get<std::vector<std::string>>(), s.at("val").get<std::vector<std::string>>(),
                    s.at("test").get<std::vector<std::string>>()};
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline std::string sample_id_for(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04zu", index);
    return buf;
}

/// Default assignment: the last K/6 scenes are test, the K/6 before them val.
inline Splits default_splits(std::size_t count) {
    const std::size_t held = count / 6;
    Splits s;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string id = sample_id_for(i);
        if (i < count - 2 * held) s.train.push_back(id);
        else if (i < count - held) s.val.push_back(id);
        else s.test.push_back(id);
    }
    return s;
}

class Dataset {
public:
    explicit Dataset(std::filesystem::path root) : root_(std::move(root)), manifest_(read_manifest(root_)) {}

    [[nodiscard]] const DatasetManifest& manifest() const noexcept { return manifest_; }
    [[nodiscard]] const std::filesystem::path& root() const noexcept { return root_; }
    [[nodiscard]] const std::vector<std::string>& split(const std::string& name) const {
        return manifest_.splits.get(name);
    }
    [[nodiscard]] SceneSample load(const std::string& sample_id) const {
        return read_sample(root_ / "samples" / sample_id);
    }
    [[nodiscard]] std::vector<SceneSample> load_split(const std::string& name) const {
        std::vector<SceneSample> out;
        for (const auto& id : split(name)) out.push_back(load(id));
        return out;
    }

private:
    std::filesystem::path root_;
    DatasetManifest manifest_;
};

struct GenerateOptions {
    std::uint64_t master_seed = 0;
    std::size_t scenes = 96;
    SceneParams params;
    std::optional<Splits> splits;  ///< overrides the default assignment when set
    unsigned workers = 0;          ///< 0 = hardware concurrency
};

/// Generates every scene (seed = derive_seed(master, sample_id)) into a
/// temporary sibling directory, then renames it to `root`.
inline DatasetManifest generate_dataset(const std::filesystem::path& root, const GenerateOptions& options) {
    options.params.validate();
    if (std::filesystem::exists(root)) throw DataError("output already exists: " + root.string());
    DatasetManifest m;
    m.master_seed = options.master_seed;
    m.params = options.params;
    m.class_names = class_names(options.params.n_classes);
    m.grid = make_grid(options.params);
    m.rig = make_rig(options.params);
    m.splits = options.splits ? *options.splits : default_splits(options.scenes);
    if (m.splits.total() != options.scenes) throw DomainError("split assignment does not cover every scene");
    {
        std::vector<std::string> ids;
        for (const auto* part : {&m.splits.train, &m.splits.val, &m.splits.test}) ids.insert(ids.end(), part->begin(), part->end());
        std::sort(ids.begin(), ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] != sample_id_for(i)) throw DomainError("split assignment must list each generated sample id once");
    }

    std::filesystem::path tmp = root;
    tmp += ".partial";
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp / "samples");
    unsigned workers = options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(1, options.scenes)));
    std::vector<std::exception_ptr> failures(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < options.scenes; i += workers) {
                    const std::string id = sample_id_for(i);
                    write_sample(tmp / "samples" / id,
                                 generate_scene(derive_seed(options.master_seed, id), options.params, id));
                }
            } catch (...) {
                failures[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (const auto& f : failures)
        if (f) {
            std::filesystem::remove_all(tmp);
            std::rethrow_exception(f);
        }
    io::write_file_atomic(tmp / "manifest.json", to_json(m).dump(2) + "\n");
    std::filesystem::rename(tmp, root);
    return m;
}

}  // namespace occdepth
