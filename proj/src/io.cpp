// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace uars {

namespace {

using json = nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

// ---------------------------------------------------------------- PLY

constexpr std::array<const char*, 14> kPlyProperties = {
    "x",       "y",       "z",       "f_dc_0",  "f_dc_1",  "f_dc_2", "opacity",
    "scale_0", "scale_1", "scale_2", "rot_0",   "rot_1",   "rot_2",  "rot_3"};

int ply_type_size(const std::string& type) {
    static const std::map<std::string, int> sizes = {
        {"char", 1},  {"uchar", 1},   {"int8", 1},   {"uint8", 1},  {"short", 2},
        {"ushort", 2}, {"int16", 2},  {"uint16", 2}, {"int", 4},    {"uint", 4},
        {"int32", 4}, {"uint32", 4},  {"float", 4},  {"float32", 4}, {"double", 8},
        {"float64", 8}};
    const auto it = sizes.find(type);
    if (it == sizes.end()) throw Error(ErrorCode::kPlyBadHeader, "unknown property type '" + type + "'");
    return it->second;
}

struct PlyProperty {
    std::string name;
    std::string type;
    std::size_t offset;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::size_t stride = 0;
    bool has_list = false;
    std::vector<PlyProperty> properties;
};

// Quaternions already unit length to float precision are kept as stored so
// that save/load cycles are byte-stable.
Vec4 settle_quaternion(const Vec4& q) {
    if (std::abs(q.squaredNorm() - 1.0) > 1e-6) return normalize_quaternion(q);
    return q;
}

// ---------------------------------------------------------------- PNG

struct PngImage {
    png_image image{};
    PngImage() {
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

// ---------------------------------------------------------------- JSON

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
    throw Error(ErrorCode::kManifestSchema, where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object()) schema_error(where, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) schema_error(where + "." + key, "missing");
    return *it;
}

double number_field(const json& obj, const char* key, const std::string& where) {
    const json& v = require(obj, key, where);
    if (!v.is_number()) schema_error(where + "." + key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) schema_error(where + "." + key, "expected a finite number");
    return d;
}

int dimension_field(const json& obj, const char* key, const std::string& where) {
    const json& v = require(obj, key, where);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1 ||
        v.get<std::int64_t>() > std::numeric_limits<int>::max())
        schema_error(where + "." + key, "expected a positive integer");
    return v.get<int>();
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
    const json& v = require(obj, key, where);
    if (!v.is_string() || v.get<std::string>().empty())
        schema_error(where + "." + key, "expected a non-empty string");
    return v.get<std::string>();
}

CameraView camera_from_json(const json& obj, const std::string& where, double tolerance) {
    CameraView cam;
    cam.fx = number_field(obj, "fx", where);
    cam.fy = number_field(obj, "fy", where);
    cam.cx = number_field(obj, "cx", where);
    cam.cy = number_field(obj, "cy", where);
    cam.width = dimension_field(obj, "width", where);
    cam.height = dimension_field(obj, "height", where);
    const json& m = require(obj, "world_to_camera", where);
    const std::string mwhere = where + ".world_to_camera";
    if (!m.is_array() || m.size() != 16) schema_error(mwhere, "expected 16 numbers (row-major 4x4)");
    for (int i = 0; i < 16; ++i) {
        if (!m[i].is_number()) schema_error(mwhere + "[" + std::to_string(i) + "]", "expected a number");
        cam.world_to_camera(i / 4, i % 4) = m[i].get<double>();
    }
    try {
        cam.validate(tolerance);
    } catch (const Error& e) {
        throw Error(e.code(), where + ": " + e.what());
    }
    return cam;
}

json parse_json_text(const std::string& text, const std::string& where) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        schema_error(where, std::string("invalid JSON: ") + e.what());
    }
}

} // namespace

// ---------------------------------------------------------------- files

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

// ---------------------------------------------------------------- PLY

GaussianScene parse_ply(std::span<const std::uint8_t> bytes) {
    static constexpr std::string_view kEnd = "end_header\n";
    const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    if (!text.starts_with("ply\n") && !text.starts_with("ply\r\n"))
        throw Error(ErrorCode::kPlyBadHeader, "missing 'ply' magic line");
    std::size_t end = text.find(kEnd);
    std::size_t body = end + kEnd.size();
    if (end == std::string_view::npos) {
        end = text.find("end_header\r\n");
        if (end == std::string_view::npos) throw Error(ErrorCode::kPlyBadHeader, "missing end_header");
        body = end + 12;
    }

    std::istringstream header{std::string(text.substr(0, end))};
    std::vector<PlyElement> elements;
    bool saw_format = false;
    std::string line;
    std::getline(header, line); // "ply"
    while (std::getline(header, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string keyword;
        ls >> keyword;
        if (keyword.empty() || keyword == "comment" || keyword == "obj_info") continue;
        if (keyword == "format") {
            std::string format;
            ls >> format;
            if (format != "binary_little_endian")
                throw Error(ErrorCode::kPlyNotBinary, "binary_little_endian required, got '" + format + "'");
            saw_format = true;
        } else if (keyword == "element") {
            PlyElement e;
            long long count = -1;
            ls >> e.name >> count;
            if (e.name.empty() || count < 0) throw Error(ErrorCode::kPlyBadHeader, "malformed element line");
            e.count = static_cast<std::size_t>(count);
            elements.push_back(std::move(e));
        } else if (keyword == "property") {
            if (elements.empty()) throw Error(ErrorCode::kPlyBadHeader, "property before any element");
            PlyElement& e = elements.back();
            std::string type, name;
            ls >> type;
            if (type == "list") {
                e.has_list = true;
                continue;
            }
            ls >> name;
            if (name.empty()) throw Error(ErrorCode::kPlyBadHeader, "malformed property line");
            e.properties.push_back({name, type, e.stride});
            e.stride += static_cast<std::size_t>(ply_type_size(type));
        } else {
            throw Error(ErrorCode::kPlyBadHeader, "unexpected header line '" + line + "'");
        }
    }
    if (!saw_format) throw Error(ErrorCode::kPlyBadHeader, "missing format line");

    std::size_t offset = body;
    const PlyElement* vertex = nullptr;
    for (const PlyElement& e : elements) {
        if (e.name == "vertex") {
            vertex = &e;
            break;
        }
        if (e.has_list)
            throw Error(ErrorCode::kPlyBadHeader, "list properties before the vertex element are unsupported");
        offset += e.count * e.stride;
    }
    if (!vertex) throw Error(ErrorCode::kPlyBadHeader, "no vertex element");
    if (vertex->has_list) throw Error(ErrorCode::kPlyBadHeader, "vertex element has a list property");

    std::array<std::size_t, kPlyProperties.size()> at{};
    for (std::size_t k = 0; k < kPlyProperties.size(); ++k) {
        const auto it = std::find_if(vertex->properties.begin(), vertex->properties.end(),
                                     [&](const PlyProperty& p) { return p.name == kPlyProperties[k]; });
        if (it == vertex->properties.end())
            throw Error(ErrorCode::kPlyMissingProperty, std::string("missing vertex property '") +
                                                            kPlyProperties[k] + "'");
        if (it->type != "float" && it->type != "float32")
            throw Error(ErrorCode::kPlyBadHeader, "vertex property '" + it->name + "' must be float");
        at[k] = it->offset;
    }

    const std::size_t need = vertex->count * vertex->stride;
    if (offset > bytes.size() || bytes.size() - offset < need)
        throw Error(ErrorCode::kPlyTruncated, "vertex data truncated: expected " + std::to_string(need) +
                                                  " bytes, have " +
                                                  std::to_string(bytes.size() > offset ? bytes.size() - offset : 0));

    std::vector<Gaussian3D> gaussians(vertex->count);
    for (std::size_t i = 0; i < vertex->count; ++i) {
        const std::uint8_t* row = bytes.data() + offset + i * vertex->stride;
        std::array<double, kPlyProperties.size()> v;
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = get_f32(row + at[k]);
            if (!std::isfinite(v[k]))
                throw Error(ErrorCode::kPlyBadHeader, "non-finite '" + std::string(kPlyProperties[k]) +
                                                          "' in vertex " + std::to_string(i));
        }
        Gaussian3D& g = gaussians[i];
        g.position = Vec3(v[0], v[1], v[2]);
        for (int c = 0; c < 3; ++c) g.color[c] = std::clamp(v[3 + c] * kShC0 + 0.5, 0.0, 1.0);
        g.opacity_logit = v[6];
        g.log_scale = Vec3(v[7], v[8], v[9]);
        g.rotation = settle_quaternion(Vec4(v[10], v[11], v[12], v[13]));
    }
    return GaussianScene(std::move(gaussians));
}

std::vector<std::uint8_t> encode_ply(const GaussianScene& scene) {
    std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                         std::to_string(scene.size()) + "\n";
    for (const char* name : kPlyProperties) header += std::string("property float ") + name + "\n";
    header += "end_header\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + scene.size() * kPlyProperties.size() * 4);
    for (const Gaussian3D& g : scene.gaussians()) {
        for (int k = 0; k < 3; ++k) put_f32(out, g.position[k]);
        for (int k = 0; k < 3; ++k) put_f32(out, (g.color[k] - 0.5) / kShC0);
        put_f32(out, g.opacity_logit);
        for (int k = 0; k < 3; ++k) put_f32(out, g.log_scale[k]);
        const Vec4 q = settle_quaternion(g.rotation);
        for (int k = 0; k < 4; ++k) put_f32(out, q[k]);
    }
    return out;
}

GaussianScene load_ply(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_ply(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

void save_ply(const GaussianScene& scene, const std::filesystem::path& path) {
    write_file(path, encode_ply(scene));
}

// ---------------------------------------------------------------- tensor

DenseMap parse_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "UARS", 4) != 0)
        throw Error(ErrorCode::kTensorBadMagic, "bad magic, expected 'UARS'");
    if (bytes.size() < 12) throw Error(ErrorCode::kTensorTruncated, "truncated tensor header");
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != 1)
        throw Error(ErrorCode::kTensorBadVersion, "unsupported tensor version " + std::to_string(version));
    const std::uint32_t ndim = get_u32(bytes.data() + 8);
    if (ndim != 2 && ndim != 3)
        throw Error(ErrorCode::kTensorBadRank, "tensor rank must be 2 or 3, got " + std::to_string(ndim));
    const std::size_t header = 12 + 4 * static_cast<std::size_t>(ndim);
    if (bytes.size() < header) throw Error(ErrorCode::kTensorTruncated, "truncated tensor header");
    std::array<std::uint32_t, 3> dims = {0, 0, 1};
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        dims[i] = get_u32(bytes.data() + 12 + 4 * i);
        if (dims[i] == 0 || dims[i] > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
            throw Error(ErrorCode::kTensorBadRank, "tensor dimension " + std::to_string(i) + " out of range");
        count *= dims[i];
        if (count > (std::uint64_t{1} << 40)) throw Error(ErrorCode::kTensorBadRank, "tensor too large");
    }
    const std::uint64_t payload = bytes.size() - header;
    if (payload != count * 4)
        throw Error(ErrorCode::kTensorTruncated, "truncated tensor: dims need " + std::to_string(count * 4) +
                                                     " payload bytes, file has " + std::to_string(payload));
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        const float v = get_f32(bytes.data() + header + 4 * i);
        if (!std::isfinite(v))
            throw Error(ErrorCode::kTensorNonFinite, "non-finite value at flat index " + std::to_string(i));
        data[i] = v;
    }
    return DenseMap(static_cast<int>(dims[1]), static_cast<int>(dims[0]), static_cast<int>(dims[2]),
                    std::move(data));
}

std::vector<std::uint8_t> encode_tensor(const DenseMap& map, int ndim) {
    if (ndim != 2 && ndim != 3) throw Error(ErrorCode::kTensorBadRank, "tensor rank must be 2 or 3");
    if (ndim == 2 && map.channels() != 1)
        throw Error(ErrorCode::kTensorBadRank, "rank-2 tensors hold a single channel");
    std::vector<std::uint8_t> out = {'U', 'A', 'R', 'S'};
    out.reserve(12 + 4 * ndim + 4 * map.size());
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(ndim));
    put_u32(out, static_cast<std::uint32_t>(map.height()));
    put_u32(out, static_cast<std::uint32_t>(map.width()));
    if (ndim == 3) put_u32(out, static_cast<std::uint32_t>(map.channels()));
    for (double v : map.data()) {
        if (!std::isfinite(v)) throw Error(ErrorCode::kTensorNonFinite, "cannot store a non-finite value");
        put_f32(out, v);
    }
    return out;
}

DenseMap load_tensor(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_tensor(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

void save_tensor(const DenseMap& map, const std::filesystem::path& path, int ndim) {
    write_file(path, encode_tensor(map, ndim));
}

// ---------------------------------------------------------------- PNG

ImageBuffer load_png(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    PngImage png;
    if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size()))
        throw Error(ErrorCode::kImageDecode, path.string() + ": " + png.image.message);
    png.image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png.image));
    if (!png_image_finish_read(&png.image, nullptr, pixels.data(), 0, nullptr))
        throw Error(ErrorCode::kImageDecode, path.string() + ": " + png.image.message);
    ImageBuffer out(static_cast<int>(png.image.width), static_cast<int>(png.image.height), 3);
    auto data = out.data();
    for (std::size_t i = 0; i < pixels.size(); ++i) data[i] = pixels[i] / 255.0;
    return out;
}

void save_png(const ImageBuffer& image, const std::filesystem::path& path) {
    if (image.channels() != 1 && image.channels() != 3)
        throw Error(ErrorCode::kInvalidArgument, "PNG output needs 1 or 3 channels");
    std::vector<std::uint8_t> pixels(image.size());
    const auto data = image.data();
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        if (!std::isfinite(data[i])) throw Error(ErrorCode::kInvalidArgument, "non-finite pixel value");
        pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(data[i], 0.0, 1.0) * 255.0));
    }
    PngImage png;
    png.image.width = static_cast<png_uint_32>(image.width());
    png.image.height = static_cast<png_uint_32>(image.height());
    png.image.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png.image, path.c_str(), 0, pixels.data(), 0, nullptr))
        throw Error(ErrorCode::kIo, "cannot write " + path.string() + ": " + png.image.message);
}

ImageBuffer load_image(const std::filesystem::path& path) {
    static constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::array<std::uint8_t, 8> lead{};
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
        in.read(reinterpret_cast<char*>(lead.data()), lead.size());
    }
    if (lead == kPngSignature) return load_png(path);
    if (std::memcmp(lead.data(), "UARS", 4) == 0) {
        const DenseMap t = load_tensor(path);
        if (t.channels() != 3)
            throw Error(ErrorCode::kImageDecode, path.string() + ": image tensors must be [H, W, 3]");
        return grid_cast<ImageTag>(t);
    }
    throw Error(ErrorCode::kImageDecode, path.string() + ": neither a PNG nor a UARS tensor");
}

// ---------------------------------------------------------------- cameras

CameraView parse_camera_json(const std::string& text) {
    return camera_from_json(parse_json_text(text, "camera"), "camera", kManifestOrthonormalTolerance);
}

std::string camera_to_json(const CameraView& camera) {
    json m = json::array();
    for (int i = 0; i < 16; ++i) m.push_back(camera.world_to_camera(i / 4, i % 4));
    const json j = {{"fx", camera.fx},         {"fy", camera.fy},       {"cx", camera.cx},
                    {"cy", camera.cy},         {"width", camera.width}, {"height", camera.height},
                    {"world_to_camera", m}};
    return j.dump(2) + "\n";
}

CameraView load_camera(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_camera_json(std::string(bytes.begin(), bytes.end()));
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- manifest

ViewManifest load_manifest(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const json root = parse_json_text(std::string(bytes.begin(), bytes.end()), "manifest");
    if (!root.is_object()) schema_error("manifest", "expected an object");
    const std::filesystem::path base = path.parent_path();

    auto resolve = [&](const std::string& rel, const std::string& where) {
        std::filesystem::path p(rel);
        if (p.is_relative()) p = base / p;
        if (!std::filesystem::is_regular_file(p))
            throw Error(ErrorCode::kManifestMissingFile, where + ": file not found: " + p.string());
        return p;
    };
    auto parse_views = [&](const json& list, const std::string& where, bool allow_logits) {
        if (!list.is_array()) schema_error(where, "expected an array");
        std::vector<ManifestView> views;
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string at = where + "[" + std::to_string(i) + "]";
            const json& v = list[i];
            ManifestView mv;
            mv.image = resolve(string_field(v, "image", at), at + ".image");
            mv.camera = camera_from_json(require(v, "camera", at), at + ".camera",
                                         kManifestOrthonormalTolerance);
            if (v.contains("logits") && !v["logits"].is_null()) {
                if (!allow_logits) schema_error(at + ".logits", "not allowed on evaluation views");
                mv.logits = resolve(string_field(v, "logits", at), at + ".logits");
            }
            views.push_back(std::move(mv));
        }
        return views;
    };

    ViewManifest m;
    m.input_image = resolve(string_field(root, "input_image", "manifest"), "manifest.input_image");
    m.views = parse_views(require(root, "views", "manifest"), "manifest.views", true);
    if (m.views.empty()) schema_error("manifest.views", "at least one view required");
    if (root.contains("eval_views") && !root["eval_views"].is_null())
        m.eval_views = parse_views(root["eval_views"], "manifest.eval_views", false);
    return m;
}

LoadedViews load_views(const ViewManifest& manifest, bool logits_are_probs) {
    LoadedViews out;
    out.input_image = load_image(manifest.input_image);
    std::optional<std::pair<int, int>> shared;
    auto load_list = [&](const std::vector<ManifestView>& list, std::vector<PseudoView>& dest) {
        for (const ManifestView& mv : list) {
            PseudoView pv;
            pv.image = load_image(mv.image);
            pv.camera = mv.camera;
            const auto dims = std::make_pair(pv.image.width(), pv.image.height());
            if (dims != std::make_pair(mv.camera.width, mv.camera.height))
                throw Error(ErrorCode::kImageResolution,
                            mv.image.string() + ": image is " + std::to_string(dims.first) + "x" +
                                std::to_string(dims.second) + " but its camera is " +
                                std::to_string(mv.camera.width) + "x" + std::to_string(mv.camera.height));
            if (!shared) shared = dims;
            if (dims != *shared)
                throw Error(ErrorCode::kImageResolution, mv.image.string() + ": views differ in resolution");
            if (mv.logits) {
                DenseMap logits = load_tensor(*mv.logits);
                if (logits.width() != dims.first || logits.height() != dims.second)
                    throw Error(ErrorCode::kLogitsResolution,
                                mv.logits->string() + ": logits are " + std::to_string(logits.width()) + "x" +
                                    std::to_string(logits.height()) + " but the image is " +
                                    std::to_string(dims.first) + "x" + std::to_string(dims.second));
                pv.logits = std::move(logits);
                pv.logits_are_probs = logits_are_probs;
            }
            dest.push_back(std::move(pv));
        }
    };
    load_list(manifest.views, out.views);
    load_list(manifest.eval_views, out.eval_views);
    return out;
}

} // namespace uars
