#include "volformer/checkpoint.hpp"

#include "volformer/error.hpp"
#include "volformer/kernels.hpp"
#include "volformer/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

namespace volformer {

namespace {

using nlohmann::json;

void store_u64_le(std::uint64_t v, std::uint8_t* p) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

std::uint64_t load_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void store_f32_le(float f, std::uint8_t* p) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>((u >> (8 * i)) & 0xff);
}

float load_f32_le(const std::uint8_t* p) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

} // namespace

std::vector<std::uint8_t> serialize_archive(const NamedTensorList& tensors) {
    std::vector<std::pair<std::string, const Tensor*>> sorted;
    sorted.reserve(tensors.size());
    for (const auto& [name, t] : tensors) sorted.emplace_back(name, &t);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].first == sorted[i - 1].first) {
            fail(ErrorKind::duplicate_name, "duplicate tensor name '" + sorted[i].first + "'");
        }
    }
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : sorted) {
        if (name.empty()) fail(ErrorKind::value, "tensor name must not be empty");
        if (t->shape.empty()) fail(ErrorKind::value, "tensor '" + name + "' has no shape");
        const std::int64_t n = t->numel();
        if (n <= 0) fail(ErrorKind::value, "tensor '" + name + "' is empty");
        if (static_cast<std::size_t>(n) != t->data.size()) {
            fail(ErrorKind::value, "tensor '" + name + "' data does not match its shape");
        }
        if (!kern::all_finite(t->data.data(), n)) {
            fail(ErrorKind::numeric, "tensor '" + name + "' has non-finite values");
        }
        const std::uint64_t nbytes = static_cast<std::uint64_t>(n) * 4;
        header[name] = {{"dtype", "f32"}, {"nbytes", nbytes}, {"offset", offset},
                        {"shape", t->shape}};
        offset += nbytes;
    }
    const std::string htext = header.dump();
    std::vector<std::uint8_t> out(12 + htext.size() + offset);
    std::memcpy(out.data(), "NTA1", 4);
    store_u64_le(htext.size(), out.data() + 4);
    std::memcpy(out.data() + 12, htext.data(), htext.size());
    std::uint8_t* payload = out.data() + 12 + htext.size();
    std::uint64_t pos = 0;
    for (const auto& [name, t] : sorted) {
        for (std::int64_t i = 0; i < t->numel(); ++i, pos += 4) {
            store_f32_le(t->data[static_cast<std::size_t>(i)], payload + pos);
        }
    }
    return out;
}

std::vector<std::uint8_t> serialize_archive(const NamedTensors& tensors) {
    NamedTensorList list(tensors.begin(), tensors.end());
    return serialize_archive(list);
}

NamedTensors deserialize_archive(const std::uint8_t* bytes, std::size_t size) {
    if (size < 12) fail(ErrorKind::truncated, "archive shorter than the 12-byte preamble");
    if (std::memcmp(bytes, "NTA1", 4) != 0) {
        fail(ErrorKind::format, "bad magic (expected \"NTA1\")");
    }
    const std::uint64_t hlen = load_u64_le(bytes + 4);
    if (12 + hlen > size) fail(ErrorKind::truncated, "header extends past end of file");
    // Detect duplicate top-level keys during the parse; json objects collapse
    // them silently otherwise.
    std::set<std::string> seen;
    auto cb = [&](int depth, json::parse_event_t event, json& value) {
        if (depth == 1 && event == json::parse_event_t::key) {
            if (!seen.insert(value.get<std::string>()).second) {
                fail(ErrorKind::duplicate_name,
                     "duplicate tensor name '" + value.get<std::string>() + "' in header");
            }
        }
        return true;
    };
    json header;
    try {
        header = json::parse(bytes + 12, bytes + 12 + hlen, cb);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(ErrorKind::format, std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) fail(ErrorKind::format, "header must be a JSON object");
    const std::uint8_t* payload = bytes + 12 + hlen;
    const std::uint64_t payload_size = size - 12 - hlen;
    NamedTensors out;
    std::vector<std::pair<std::uint64_t, std::pair<std::uint64_t, std::string>>> ranges;
    for (const auto& [name, entry] : header.items()) {
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("offset") || !entry.contains("nbytes")) {
            fail(ErrorKind::format, "tensor '" + name + "' entry missing required fields");
        }
        if (entry["dtype"] != "f32") {
            fail(ErrorKind::dtype, "tensor '" + name + "' has unsupported dtype " +
                                       entry["dtype"].dump() + " (only \"f32\")");
        }
        std::vector<std::int64_t> shape;
        std::int64_t numel = 1;
        for (const auto& s : entry["shape"]) {
            if (!s.is_number_integer() || s.get<std::int64_t>() < 1) {
                fail(ErrorKind::format, "tensor '" + name + "' has a non-positive dimension");
            }
            shape.push_back(s.get<std::int64_t>());
            numel *= shape.back();
        }
        if (shape.empty()) fail(ErrorKind::format, "tensor '" + name + "' has an empty shape");
        const std::uint64_t nbytes = entry["nbytes"].get<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(numel) * 4) {
            fail(ErrorKind::consistency,
                 "tensor '" + name + "' nbytes " + std::to_string(nbytes) + " != 4*prod(shape) = " +
                     std::to_string(numel * 4));
        }
        const std::uint64_t offset = entry["offset"].get<std::uint64_t>();
        if (offset > payload_size || nbytes > payload_size - offset) {
            fail(ErrorKind::truncated, "tensor '" + name + "' payload [" + std::to_string(offset) +
                                           ", " + std::to_string(offset + nbytes) +
                                           ") exceeds payload size " + std::to_string(payload_size));
        }
        ranges.push_back({offset, {nbytes, name}});
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(static_cast<std::size_t>(numel));
        for (std::int64_t i = 0; i < numel; ++i) {
            t.data[static_cast<std::size_t>(i)] = load_f32_le(payload + offset + 4 * i);
        }
        out.emplace(name, std::move(t));
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].first + ranges[i - 1].second.first) {
            fail(ErrorKind::overlap, "tensors '" + ranges[i - 1].second.second + "' and '" +
                                         ranges[i].second.second + "' overlap in the payload");
        }
    }
    return out;
}

void write_archive(const std::string& path, const NamedTensorList& tensors) {
    const auto bytes = serialize_archive(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorKind::io, "write to '" + path + "' failed");
}

void write_archive(const std::string& path, const NamedTensors& tensors) {
    write_archive(path, NamedTensorList(tensors.begin(), tensors.end()));
}

NamedTensors read_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for reading");
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) fail(ErrorKind::io, "read from '" + path + "' failed");
    return deserialize_archive(bytes.data(), bytes.size());
}

namespace {

// Fetches a required tensor and validates its shape, naming the tensor in
// every failure.
const Tensor& expect(const NamedTensors& a, const std::string& name,
                     const std::vector<std::int64_t>& shape) {
    auto it = a.find(name);
    if (it == a.end()) fail(ErrorKind::missing_tensor, "archive is missing tensor '" + name + "'");
    if (it->second.shape != shape) {
        fail(ErrorKind::shape, "tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                                   ", expected " + shape_str(shape));
    }
    return it->second;
}

// The 2D source position grid: rank-3 Gh0 x Gw0 x E, or rank-4 with a leading
// depth of 1 (the schema a depth-1 3D model writes).
Tensor source_grid(const NamedTensors& a, std::int64_t dim) {
    auto it = a.find("pos.grid");
    if (it == a.end()) fail(ErrorKind::missing_tensor, "archive is missing tensor 'pos.grid'");
    const Tensor& g = it->second;
    if (g.rank() == 4 && g.shape[0] == 1 && g.shape[3] == dim) {
        return Tensor({g.shape[1], g.shape[2], g.shape[3]}, g.data);
    }
    if (g.rank() == 3 && g.shape[2] == dim) return g;
    fail(ErrorKind::shape, "tensor 'pos.grid' has shape " + shape_str(g.shape) +
                               ", expected Gh0 x Gw0 x " + std::to_string(dim) +
                               " (optionally with a leading depth of 1)");
}

} // namespace

std::pair<ModelParams, ImportReport> import_2d_vit(const NamedTensors& archive,
                                                   std::int64_t depth, std::int64_t grid_h,
                                                   std::int64_t grid_w, const ViTConfig& cfg,
                                                   std::uint64_t seed) {
    cfg.validate();
    if (depth < 1 || grid_h < 1 || grid_w < 1) {
        fail(ErrorKind::value, "target geometry must be at least 1x1x1");
    }
    const std::int64_t dim = cfg.dim;
    const Tensor grid2d = source_grid(archive, dim);
    ModelParams p = make_zero_params<float>(cfg, depth, grid_h, grid_w);
    ImportReport report;
    report.src_grid_h = grid2d.shape[0];
    report.src_grid_w = grid2d.shape[1];
    report.dst_depth = depth;
    report.dst_grid_h = grid_h;
    report.dst_grid_w = grid_w;

    visit_params(p, [&](const std::string& name, std::vector<float>& buf,
                        const std::vector<std::int64_t>& shape) {
        if (name == "head.w" || name == "head.b") {
            report.reinitialized.push_back(name);
            return;
        }
        if (name == "pos.grid") {
            report.adapted.push_back(name);
            return;
        }
        const Tensor& src = expect(archive, name, shape);
        std::copy(src.data.begin(), src.data.end(), buf.begin());
        report.copied.push_back(name);
    });

    const Tensor& cls_pe = expect(archive, "pos.cls", {1, dim});
    PositionTable pt = build_position_table(cls_pe, grid2d, depth, grid_h, grid_w);
    p.pos_cls = std::move(pt.class_pe.data);
    p.pos_grid = std::move(pt.patch_pe.data);
    if (grid_h != report.src_grid_h || grid_w != report.src_grid_w) {
        report.adapted_with_resize = report.adapted;
    }

    SeededRng rng(seed);
    for (auto& w : p.head_w) w = static_cast<float>(rng.next_trunc_normal(0.02));
    p.head_b.assign(p.head_b.size(), 0.0f);
    return {std::move(p), std::move(report)};
}

NamedTensors synthetic_pretrained_2d(const ViTConfig& cfg, std::int64_t grid_h0,
                                     std::int64_t grid_w0, std::uint64_t seed) {
    cfg.validate();
    if (grid_h0 < 1 || grid_w0 < 1) fail(ErrorKind::value, "source grid must be at least 1x1");
    // Shape the weights like a depth-1 model so the name/shape schema matches
    // visit_params exactly; pos.grid carries a leading depth of 1.
    ModelParams p = make_zero_params<float>(cfg, 1, grid_h0, grid_w0);
    SeededRng rng(seed);
    NamedTensors out;
    visit_params(p, [&](const std::string& name, std::vector<float>& buf,
                        const std::vector<std::int64_t>& shape) {
        const bool gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
        const bool bias = !gain && name.back() == 'b' &&
                          (name == "proj.b" || name.find(".b") != std::string::npos);
        if (gain) {
            std::fill(buf.begin(), buf.end(), 1.0f);
        } else if (bias) {
            std::fill(buf.begin(), buf.end(), 0.0f);
        } else {
            for (auto& v : buf) v = static_cast<float>(rng.next_trunc_normal(0.02));
        }
        out.emplace(name, Tensor(shape, buf));
    });
    return out;
}

NamedTensorList params_to_tensors(const ModelParams& params) {
    NamedTensorList out;
    visit_params(params, [&](const std::string& name, const std::vector<float>& buf,
                             const std::vector<std::int64_t>& shape) {
        out.emplace_back(name, Tensor(shape, buf));
    });
    return out;
}

ModelParams tensors_to_params(const NamedTensors& tensors, const ViTConfig& cfg) {
    cfg.validate();
    auto it = tensors.find("pos.grid");
    if (it == tensors.end()) fail(ErrorKind::missing_tensor, "archive is missing tensor 'pos.grid'");
    if (it->second.rank() != 4) {
        fail(ErrorKind::shape, "tensor 'pos.grid' must be D x Gh x Gw x E, got " +
                                   shape_str(it->second.shape));
    }
    const auto& gs = it->second.shape;
    ModelParams p = make_zero_params<float>(cfg, gs[0], gs[1], gs[2]);
    visit_params(p, [&](const std::string& name, std::vector<float>& buf,
                        const std::vector<std::int64_t>& shape) {
        const Tensor& src = expect(tensors, name, shape);
        std::copy(src.data.begin(), src.data.end(), buf.begin());
    });
    return p;
}

void save_model(const std::string& path, const ModelParams& params) {
    write_archive(path, params_to_tensors(params));
}

ModelParams load_model(const std::string& path, const ViTConfig& cfg) {
    return tensors_to_params(read_archive(path), cfg);
}

void save_volume(const std::string& path, const Volume& v) {
    NamedTensorList list;
    list.emplace_back("volume", v.voxels);
    write_archive(path, list);
}

Volume load_volume(const std::string& path) {
    NamedTensors t = read_archive(path);
    auto it = t.find("volume");
    if (it == t.end()) fail(ErrorKind::missing_tensor, "archive is missing tensor 'volume'");
    if (it->second.rank() != 3) {
        fail(ErrorKind::shape, "tensor 'volume' must be D x H x W, got " + shape_str(it->second.shape));
    }
    const auto& s = it->second.shape;
    return make_volume(s[0], s[1], s[2], std::move(it->second.data));
}

} // namespace volformer
