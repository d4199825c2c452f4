#include "simcvd/dataset_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <boost/crc.hpp>

namespace simcvd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic{'S', 'C', 'V', 'G'};
constexpr std::size_t kHeaderBytes = 48;

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.insert(out.end(), bytes.begin(), bytes.end());
}

template <class T>
T get_le(const unsigned char* p) {
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

std::vector<unsigned char> header(std::uint8_t dtype, const Shape3& shape, const Spacing& spacing) {
    std::vector<unsigned char> h(kMagic.begin(), kMagic.end());
    put_le<std::uint32_t>(h, kGridFormatVersion);
    h.push_back(dtype);
    h.insert(h.end(), 3, 0);
    put_le<std::uint32_t>(h, static_cast<std::uint32_t>(shape.nx));
    put_le<std::uint32_t>(h, static_cast<std::uint32_t>(shape.ny));
    put_le<std::uint32_t>(h, static_cast<std::uint32_t>(shape.nz));
    for (double s : spacing) put_le<double>(h, s);
    return h;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path.string());
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct Parsed {
    std::uint8_t dtype;
    Shape3 shape;
    Spacing spacing;
    const unsigned char* payload;
    std::size_t payload_bytes;
};

Parsed parse(const std::vector<unsigned char>& bytes, const fs::path& path) {
    if (bytes.size() < kHeaderBytes || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw IoError(path.string() + ": not a grid file");
    }
    if (get_le<std::uint32_t>(bytes.data() + 4) != kGridFormatVersion) {
        throw IoError(path.string() + ": unsupported grid format version");
    }
    Parsed p{};
    p.dtype = bytes[8];
    p.shape = Shape3{static_cast<int>(get_le<std::uint32_t>(bytes.data() + 12)),
                     static_cast<int>(get_le<std::uint32_t>(bytes.data() + 16)),
                     static_cast<int>(get_le<std::uint32_t>(bytes.data() + 20))};
    for (int a = 0; a < 3; ++a) p.spacing[a] = get_le<double>(bytes.data() + 24 + 8 * a);
    p.payload = bytes.data() + kHeaderBytes;
    p.payload_bytes = bytes.size() - kHeaderBytes;
    return p;
}

json file_entry(const fs::path& root, const fs::path& rel) {
    return json{{"path", rel.generic_string()}, {"crc32", file_crc32(root / rel)}};
}

json write_case(const fs::path& root, const std::string& sub, const std::string& id, const Volume& vol,
                const MaskGrid* mask, const RealGrid* sdm) {
    json files;
    const fs::path base = fs::path(sub) / id;
    write_real_grid(root / (base.string() + ".vol"), vol.voxels, vol.spacing);
    files["volume"] = file_entry(root, base.string() + ".vol");
    if (mask != nullptr) {
        write_mask_grid(root / (base.string() + ".mask"), *mask, vol.spacing);
        files["mask"] = file_entry(root, base.string() + ".mask");
    }
    if (sdm != nullptr) {
        write_real_grid(root / (base.string() + ".sdm"), *sdm, vol.spacing);
        files["sdm"] = file_entry(root, base.string() + ".sdm");
    }
    return files;
}

}  // namespace

void write_real_grid(const fs::path& path, const RealGrid& grid, const Spacing& spacing) {
    auto bytes = header(kDtypeFloat32, grid.shape(), spacing);
    bytes.reserve(bytes.size() + 4 * grid.size());
    for (double v : grid) put_le<float>(bytes, static_cast<float>(v));
    write_bytes(path, bytes);
}

void write_mask_grid(const fs::path& path, const MaskGrid& grid, const Spacing& spacing) {
    auto bytes = header(kDtypeUint8, grid.shape(), spacing);
    bytes.insert(bytes.end(), grid.begin(), grid.end());
    write_bytes(path, bytes);
}

RealGrid read_real_grid(const fs::path& path, Spacing* spacing) {
    const auto bytes = read_bytes(path);
    const Parsed p = parse(bytes, path);
    if (p.dtype != kDtypeFloat32) throw IoError(path.string() + ": expected float32 grid");
    if (p.payload_bytes != 4 * p.shape.voxels()) throw IoError(path.string() + ": truncated payload");
    RealGrid g(p.shape);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = get_le<float>(p.payload + 4 * i);
    if (spacing != nullptr) *spacing = p.spacing;
    return g;
}

MaskGrid read_mask_grid(const fs::path& path, Spacing* spacing) {
    const auto bytes = read_bytes(path);
    const Parsed p = parse(bytes, path);
    if (p.dtype != kDtypeUint8) throw IoError(path.string() + ": expected uint8 grid");
    if (p.payload_bytes != p.shape.voxels()) throw IoError(path.string() + ": truncated payload");
    MaskGrid g(p.shape, std::vector<std::uint8_t>(p.payload, p.payload + p.payload_bytes));
    if (spacing != nullptr) *spacing = p.spacing;
    return g;
}

std::uint32_t file_crc32(const fs::path& path) {
    const auto bytes = read_bytes(path);
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

json save_split(const fs::path& dir, const DatasetSplit& split, const json& extra) {
    for (const char* sub : {"labeled", "unlabeled", "test"}) fs::create_directories(dir / sub);
    json cases = json::array();
    for (const auto& c : split.labeled) {
        cases.push_back({{"id", c.id}, {"split", "labeled"}, {"seed", c.seed},
                         {"shape", {c.volume.shape().nx, c.volume.shape().ny, c.volume.shape().nz}},
                         {"spacing", c.volume.spacing},
                         {"files", write_case(dir, "labeled", c.id, c.volume, &c.mask, &c.sdm)}});
    }
    for (const auto& c : split.unlabeled) {
        cases.push_back({{"id", c.id}, {"split", "unlabeled"},
                         {"shape", {c.volume.shape().nx, c.volume.shape().ny, c.volume.shape().nz}},
                         {"spacing", c.volume.spacing},
                         {"files", write_case(dir, "unlabeled", c.id, c.volume, nullptr, nullptr)}});
    }
    for (const auto& c : split.test) {
        cases.push_back({{"id", c.id}, {"split", "test"}, {"seed", c.seed},
                         {"shape", {c.volume.shape().nx, c.volume.shape().ny, c.volume.shape().nz}},
                         {"spacing", c.volume.spacing},
                         {"files", write_case(dir, "test", c.id, c.volume, &c.mask, &c.sdm)}});
    }
    json manifest{{"format", "simcvd-dataset"},
                  {"version", kGridFormatVersion},
                  {"seed", split.seed},
                  {"counts",
                   {{"labeled", split.labeled.size()}, {"unlabeled", split.unlabeled.size()}, {"test", split.test.size()}}},
                  {"generator", extra},
                  {"cases", cases}};
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + dir.string());
    f << manifest.dump(2) << '\n';
    return manifest;
}

namespace {
json read_manifest(const fs::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("missing manifest.json in " + dir.string());
    json m;
    try {
        f >> m;
    } catch (const json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    if (m.value("format", "") != "simcvd-dataset") throw IoError(dir.string() + ": not a simcvd dataset manifest");
    return m;
}
}  // namespace

DatasetSplit load_split(const fs::path& dir) {
    const json m = read_manifest(dir);
    DatasetSplit split;
    split.seed = m.at("seed").get<std::uint64_t>();
    for (const auto& c : m.at("cases")) {
        const std::string kind = c.at("split");
        const auto& files = c.at("files");
        Volume vol;
        vol.voxels = read_real_grid(dir / files.at("volume").at("path").get<std::string>(), &vol.spacing);
        if (kind == "unlabeled") {
            split.unlabeled.push_back(UnlabeledCase{c.at("id"), std::move(vol)});
            continue;
        }
        AnnotatedCase a;
        a.id = c.at("id");
        a.seed = c.at("seed").get<std::uint64_t>();
        a.volume = std::move(vol);
        a.mask = read_mask_grid(dir / files.at("mask").at("path").get<std::string>());
        a.sdm = read_real_grid(dir / files.at("sdm").at("path").get<std::string>());
        (kind == "labeled" ? split.labeled : split.test).push_back(std::move(a));
    }
    return split;
}

bool verify_split(const fs::path& dir) {
    const json m = read_manifest(dir);
    for (const auto& c : m.at("cases")) {
        for (const auto& [kind, entry] : c.at("files").items()) {
            const fs::path p = dir / entry.at("path").get<std::string>();
            if (!fs::exists(p) || file_crc32(p) != entry.at("crc32").get<std::uint32_t>()) return false;
        }
    }
    return true;
}

}  // namespace simcvd
