#include <bit>
#include <cstring>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "layerav/image_io.hpp"
#include "layerav/wardrobe.hpp"

namespace layerav {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'L', 'A', 'Y', 'E', 'R', 'G', 'W', 'A'};
constexpr std::size_t kHeaderSize = 16;
constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

template <typename T>
T read_le(const std::uint8_t* p) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(p[b]) << (8 * b);
    return std::bit_cast<T>(bits);
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32" || dtype == "i32") return 4;
    if (dtype == "u8") return 1;
    return 0;
}

class SectionWriter {
public:
    template <typename T>
    void add(const std::string& name, const char* dtype, std::vector<std::uint64_t> shape, std::span<const T> values) {
        data_.resize(align_up(data_.size()), 0);
        const std::size_t begin = data_.size();
        for (const T& v : values) append_le(data_, v);
        const std::size_t size = data_.size() - begin;
        sections_.push_back({{"name", name},
                             {"dtype", dtype},
                             {"shape", shape},
                             {"offset", begin},
                             {"size", size},
                             {"crc32", crc_of(data_.data() + begin, size)}});
    }
    json sections() const { return sections_; }
    const std::vector<std::uint8_t>& data() const { return data_; }

private:
    json sections_ = json::array();
    std::vector<std::uint8_t> data_;
};

std::vector<double> flatten(std::span<const Vec3> v) {
    std::vector<double> out;
    out.reserve(v.size() * 3);
    for (const Vec3& p : v) out.insert(out.end(), {p.x(), p.y(), p.z()});
    return out;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

constexpr int kCellChannels = 14;

void pack_cell(std::vector<double>& out, const GaussianAttributes& a) {
    out.insert(out.end(), {a.offset.x(), a.offset.y(), a.offset.z(), a.rotation.w(), a.rotation.x(), a.rotation.y(),
                           a.rotation.z(), a.opacity, a.scale.x(), a.scale.y(), a.scale.z(), a.color.x(),
                           a.color.y(), a.color.z()});
}

GaussianAttributes unpack_cell(const double* c) {
    GaussianAttributes a;
    a.offset = {c[0], c[1], c[2]};
    a.rotation = Quat(c[3], c[4], c[5], c[6]);
    a.opacity = c[7];
    a.scale = {c[8], c[9], c[10]};
    a.color = {c[11], c[12], c[13]};
    return a;
}

struct SectionView {
    std::string dtype;
    std::vector<std::uint64_t> shape;
    const std::uint8_t* data = nullptr;
    std::size_t size = 0;

    std::size_t count() const { return size / dtype_size(dtype); }
};

class SectionReader {
public:
    SectionReader(const json& manifest, std::span<const std::uint8_t> bytes, std::size_t data_start) {
        const json& list = manifest.at("sections");
        // Truncation is checked for every section up front so that no partial
        // asset is ever produced.
        for (const json& s : list) {
            const std::string name = s.at("name").get<std::string>();
            SectionView v;
            v.dtype = s.at("dtype").get<std::string>();
            v.shape = s.at("shape").get<std::vector<std::uint64_t>>();
            const std::uint64_t offset = s.at("offset").get<std::uint64_t>();
            v.size = s.at("size").get<std::uint64_t>();
            const std::size_t elem = dtype_size(v.dtype);
            if (elem == 0) throw AssetError(AssetErrorKind::format, name, "section " + name + ": unknown dtype");
            std::uint64_t expected = elem;
            for (std::uint64_t d : v.shape) expected *= d;
            if (expected != v.size)
                throw AssetError(AssetErrorKind::format, name, "section " + name + ": size does not match shape");
            if (data_start + offset + v.size > bytes.size())
                throw AssetError(AssetErrorKind::truncated, name, "truncated payload: section " + name + " is incomplete");
            v.data = bytes.data() + data_start + offset;
            views_.emplace(name, v);
            crcs_.emplace(name, s.at("crc32").get<std::uint32_t>());
        }
        for (const auto& [name, v] : views_) {
            if (crc_of(v.data, v.size) != crcs_.at(name))
                throw AssetError(AssetErrorKind::checksum, name, "checksum mismatch in section " + name);
        }
    }

    bool has(const std::string& name) const { return views_.count(name) != 0; }

    template <typename T>
    std::vector<T> get(const std::string& name, const char* dtype, std::vector<std::uint64_t> shape) const {
        auto it = views_.find(name);
        if (it == views_.end()) throw AssetError(AssetErrorKind::format, name, "missing section " + name);
        const SectionView& v = it->second;
        if (v.dtype != dtype || v.shape != shape)
            throw AssetError(AssetErrorKind::format, name, "section " + name + " has an unexpected dtype or shape");
        std::vector<T> out(v.count());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_le<T>(v.data + i * sizeof(T));
        return out;
    }

private:
    std::map<std::string, SectionView> views_;
    std::map<std::string, std::uint32_t> crcs_;
};

std::vector<Vec3> unflatten(const std::vector<double>& v) {
    std::vector<Vec3> out(v.size() / 3);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
    return out;
}

struct Parsed {
    json manifest;
    std::size_t data_start = 0;
};

Parsed parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize) throw AssetError(AssetErrorKind::truncated, "header", "truncated payload: header");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw AssetError(AssetErrorKind::format, "header", "not a .gwa file (bad magic)");
    const std::uint64_t len = read_le<std::uint64_t>(bytes.data() + 8);
    if (len > bytes.size() - kHeaderSize)
        throw AssetError(AssetErrorKind::truncated, "manifest", "truncated payload: manifest");
    Parsed p;
    try {
        p.manifest = json::parse(bytes.begin() + kHeaderSize, bytes.begin() + kHeaderSize + static_cast<std::ptrdiff_t>(len));
    } catch (const json::exception& e) {
        throw AssetError(AssetErrorKind::format, "manifest", std::string("manifest is not valid JSON: ") + e.what());
    }
    p.data_start = align_up(kHeaderSize + len);
    return p;
}

}  // namespace

std::vector<std::uint8_t> serialize_asset(const WardrobeAsset& a) {
    SectionWriter w;
    const TemplateMesh& t = a.template_mesh;
    const std::vector<double> verts = flatten(t.vertices);
    w.add<double>("template.vertices", "f64", {t.vertices.size(), 3}, verts);
    std::vector<std::int32_t> faces;
    faces.reserve(t.faces.size() * 3);
    for (const auto& f : t.faces) faces.insert(faces.end(), f.begin(), f.end());
    w.add<std::int32_t>("template.faces", "i32", {t.faces.size(), 3}, faces);
    std::vector<std::uint8_t> labels(t.layer_label.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(t.layer_label[i]);
    w.add<std::uint8_t>("template.layers", "u8", {labels.size()}, labels);

    const CoordinateMaps& m = a.coordinate_maps;
    const std::uint64_t h = m.height, wd = m.width;
    for (int s = 0; s < 2; ++s) {
        const std::string side = s == 0 ? "front" : "back";
        const std::vector<double> pos = flatten(m.positions[s]);
        w.add<double>("maps." + side + ".positions", "f64", {h, wd, 3}, pos);
        w.add<std::uint8_t>("maps." + side + ".valid", "u8", {h, wd}, m.valid[s]);
    }

    const ExemplarDeformationModel& model = a.deformation_model;
    const std::uint64_t e = model.exemplars.size();
    const std::uint64_t j = a.joint_count;
    const std::uint64_t n = model.cell_count();
    std::vector<double> poses, cells;
    for (const PoseExemplar& ex : model.exemplars) {
        for (const Vec3& r : ex.pose.joint_rotations) poses.insert(poses.end(), {r.x(), r.y(), r.z()});
        for (const Vec3* v : {&ex.pose.global_orientation, &ex.pose.global_translation})
            poses.insert(poses.end(), {v->x(), v->y(), v->z()});
        for (const GaussianAttributes& c : ex.cells) pack_cell(cells, c);
    }
    w.add<double>("model.poses", "f64", {e, j + 2, 3}, poses);
    w.add<double>("model.cells", "f64", {e, n, kCellChannels}, cells);

    if (a.skeleton.joint_count() > 0) {
        const std::uint64_t sj = a.skeleton.joint_count();
        const std::vector<double> joints = flatten(a.skeleton.rest_joints);
        w.add<double>("skeleton.joints", "f64", {sj, 3}, joints);
        std::vector<std::int32_t> parents(a.skeleton.parents.begin(), a.skeleton.parents.end());
        w.add<std::int32_t>("skeleton.parents", "i32", {parents.size()}, parents);
    }

    json field;
    if (a.skinning_field) {
        const SkinningField& f = *a.skinning_field;
        const std::uint64_t rx = f.resolution[0], ry = f.resolution[1], rz = f.resolution[2];
        w.add<float>("field.weights", "f32", {rz, ry, rx, static_cast<std::uint64_t>(f.joint_count)}, f.weights);
        w.add<float>("field.offsets", "f32", {rz, ry, rx, static_cast<std::uint64_t>(f.blendshape_count) * 3},
                     f.offsets);
        w.add<std::uint8_t>("field.valid", "u8", {rz, ry, rx}, f.valid);
        field = {{"embedded", true},
                 {"resolution", f.resolution},
                 {"bbox_min", vec_json(f.bbox.min)},
                 {"bbox_max", vec_json(f.bbox.max)},
                 {"joint_count", f.joint_count},
                 {"blendshape_count", f.blendshape_count}};
    } else {
        field = {{"embedded", false}, {"ref", a.skinning_field_ref}};
    }

    json manifest = {
        {"format_version", a.format_version},
        {"asset_id", a.asset_id},
        {"layer", std::string(layer_name(a.layer_id))},
        {"category", a.category},
        {"joint_count", a.joint_count},
        {"blendshape_count", a.blendshape_count},
        {"primitive_count", a.primitive_count()},
        {"coordinate_maps",
         {{"height", m.height},
          {"width", m.width},
          {"window", {m.window.x_min, m.window.x_max, m.window.y_min, m.window.y_max}}}},
        {"deformation_model", {{"exemplars", e}, {"cells", n}, {"kernel_bandwidth", model.kernel_bandwidth}}},
        {"skinning_field", field},
        {"sections", w.sections()},
    };
    const std::string text = manifest.dump(2);

    std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
    append_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.resize(align_up(out.size()), 0);
    out.insert(out.end(), w.data().begin(), w.data().end());
    return out;
}

std::string read_manifest(std::span<const std::uint8_t> bytes) { return parse_header(bytes).manifest.dump(2); }

WardrobeAsset deserialize_asset(std::span<const std::uint8_t> bytes) {
    const Parsed p = parse_header(bytes);
    const json& mf = p.manifest;
    try {
        const int version = mf.at("format_version").get<int>();
        if (version != kAssetFormatVersion) {
            throw AssetError(AssetErrorKind::version, "",
                             "unsupported format_version " + std::to_string(version) + " (expected " +
                                 std::to_string(kAssetFormatVersion) + ")");
        }
        const SectionReader r(mf, bytes, p.data_start);

        WardrobeAsset a;
        a.format_version = version;
        a.asset_id = mf.at("asset_id").get<std::string>();
        const auto layer = parse_layer(mf.at("layer").get<std::string>());
        if (!layer) throw AssetError(AssetErrorKind::format, "", "unknown layer in manifest");
        a.layer_id = *layer;
        a.category = mf.at("category").get<std::string>();
        a.joint_count = mf.at("joint_count").get<int>();
        a.blendshape_count = mf.at("blendshape_count").get<int>();

        const json& sections = mf.at("sections");
        auto shape_of = [&](const std::string& name) {
            for (const json& s : sections)
                if (s.at("name") == name) return s.at("shape").get<std::vector<std::uint64_t>>();
            throw AssetError(AssetErrorKind::format, name, "missing section " + name);
        };

        const auto vs = shape_of("template.vertices");
        a.template_mesh.vertices = unflatten(r.get<double>("template.vertices", "f64", vs));
        const auto fs = shape_of("template.faces");
        const auto faces = r.get<std::int32_t>("template.faces", "i32", fs);
        a.template_mesh.faces.resize(faces.size() / 3);
        for (std::size_t i = 0; i < a.template_mesh.faces.size(); ++i)
            a.template_mesh.faces[i] = {faces[3 * i], faces[3 * i + 1], faces[3 * i + 2]};
        const auto labels = r.get<std::uint8_t>("template.layers", "u8", {a.template_mesh.vertices.size()});
        a.template_mesh.layer_label.resize(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= kLayerCount)
                throw AssetError(AssetErrorKind::format, "template.layers", "vertex layer label out of range");
            a.template_mesh.layer_label[i] = static_cast<LayerId>(labels[i]);
        }

        const json& cm = mf.at("coordinate_maps");
        CoordinateMaps& m = a.coordinate_maps;
        m.height = cm.at("height").get<int>();
        m.width = cm.at("width").get<int>();
        const json& win = cm.at("window");
        m.window = {win.at(0).get<double>(), win.at(1).get<double>(), win.at(2).get<double>(), win.at(3).get<double>()};
        const std::uint64_t h = m.height, wd = m.width;
        for (int s = 0; s < 2; ++s) {
            const std::string side = s == 0 ? "front" : "back";
            m.positions[s] = unflatten(r.get<double>("maps." + side + ".positions", "f64", {h, wd, 3}));
            m.valid[s] = r.get<std::uint8_t>("maps." + side + ".valid", "u8", {h, wd});
        }

        const json& dm = mf.at("deformation_model");
        const std::uint64_t e = dm.at("exemplars").get<std::uint64_t>();
        const std::uint64_t n = dm.at("cells").get<std::uint64_t>();
        const std::uint64_t j = a.joint_count;
        a.deformation_model.kernel_bandwidth = dm.at("kernel_bandwidth").get<double>();
        const auto poses = r.get<double>("model.poses", "f64", {e, j + 2, 3});
        const auto cells = r.get<double>("model.cells", "f64", {e, n, kCellChannels});
        a.deformation_model.exemplars.resize(e);
        for (std::uint64_t x = 0; x < e; ++x) {
            PoseExemplar& ex = a.deformation_model.exemplars[x];
            const double* pp = poses.data() + x * (j + 2) * 3;
            ex.pose.joint_rotations.resize(j);
            for (std::uint64_t k = 0; k < j; ++k) ex.pose.joint_rotations[k] = {pp[3 * k], pp[3 * k + 1], pp[3 * k + 2]};
            ex.pose.global_orientation = {pp[3 * j], pp[3 * j + 1], pp[3 * j + 2]};
            ex.pose.global_translation = {pp[3 * j + 3], pp[3 * j + 4], pp[3 * j + 5]};
            ex.cells.resize(n);
            for (std::uint64_t c = 0; c < n; ++c) ex.cells[c] = unpack_cell(cells.data() + (x * n + c) * kCellChannels);
        }

        if (r.has("skeleton.joints")) {
            const auto js = shape_of("skeleton.joints");
            a.skeleton.rest_joints = unflatten(r.get<double>("skeleton.joints", "f64", js));
            const auto parents = r.get<std::int32_t>("skeleton.parents", "i32", {a.skeleton.rest_joints.size()});
            a.skeleton.parents.assign(parents.begin(), parents.end());
        }

        const json& fj = mf.at("skinning_field");
        if (fj.at("embedded").get<bool>()) {
            auto f = std::make_shared<SkinningField>();
            f->resolution = fj.at("resolution").get<std::array<int, 3>>();
            f->bbox.min = json_vec(fj.at("bbox_min"));
            f->bbox.max = json_vec(fj.at("bbox_max"));
            f->joint_count = fj.at("joint_count").get<int>();
            f->blendshape_count = fj.at("blendshape_count").get<int>();
            const std::uint64_t rx = f->resolution[0], ry = f->resolution[1], rz = f->resolution[2];
            f->weights = r.get<float>("field.weights", "f32", {rz, ry, rx, static_cast<std::uint64_t>(f->joint_count)});
            f->offsets = r.get<float>("field.offsets", "f32",
                                      {rz, ry, rx, static_cast<std::uint64_t>(f->blendshape_count) * 3});
            f->valid = r.get<std::uint8_t>("field.valid", "u8", {rz, ry, rx});
            a.skinning_field = std::move(f);
        } else {
            a.skinning_field_ref = fj.at("ref").get<std::string>();
        }
        return a;
    } catch (const json::exception& e) {
        throw AssetError(AssetErrorKind::format, "manifest", std::string("malformed manifest: ") + e.what());
    }
}

StorageReceipt save_asset(const WardrobeAsset& asset, const std::filesystem::path& destination) {
    const auto violations = validate_asset(asset);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "save_asset: asset '" << asset.asset_id << "' is invalid:";
        for (const Violation& v : violations) msg << "\n  [" << v.index << "] " << v.invariant << ": " << v.detail;
        throw std::invalid_argument(msg.str());
    }
    const std::vector<std::uint8_t> bytes = serialize_asset(asset);
    write_file_atomic(destination, bytes);
    return {destination, bytes.size(), crc_of(bytes.data(), bytes.size())};
}

WardrobeAsset load_asset(const std::filesystem::path& source) {
    if (!std::filesystem::exists(source)) throw NotFoundError("asset file not found: " + source.string());
    const std::vector<std::uint8_t> bytes = read_file(source);
    return deserialize_asset(bytes);
}

}  // namespace layerav
