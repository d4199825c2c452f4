#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "simcvd/model.hpp"

namespace simcvd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'S', 'I', 'M', 'C', 'V', 'D', 'C', 'K'};

template <class T>
void write_le(std::ostream& os, T v) {
    std::array<char, sizeof(T)> b{};
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    os.write(b.data(), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const fs::path& path) {
    std::array<char, sizeof(T)> b{};
    if (!is.read(b.data(), sizeof(T))) throw IoError(path.string() + ": truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

json directory(const ParamSet& p) {
    json d = json::array();
    for (const auto& t : p.tensors()) d.push_back({{"name", t.name}, {"shape", t.shape}});
    return d;
}

void check_directory(const ParamSet& p, const json& d, const std::string& which) {
    if (d.size() != p.tensors().size()) throw StateError("checkpoint " + which + ": tensor count mismatch");
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& t = p.tensors()[i];
        if (d[i].at("name") != t.name || d[i].at("shape").get<std::vector<int>>() != t.shape) {
            throw StateError("checkpoint " + which + ": tensor mismatch at " + t.name);
        }
    }
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    require_compatible(ckpt.student, ckpt.teacher, "save_checkpoint teacher");
    require_compatible(ckpt.student, ckpt.momentum, "save_checkpoint momentum");
    const json header{{"arch", ckpt.student.arch()}, {"state", ckpt.state}, {"tensors", directory(ckpt.student)}};
    const std::string text = header.dump();
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint " + tmp.string());
        f.write(kMagic.data(), kMagic.size());
        write_le<std::uint32_t>(f, kCheckpointVersion);
        write_le<std::uint64_t>(f, text.size());
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const ParamSet* p : {&ckpt.student, &ckpt.teacher, &ckpt.momentum})
            for (const auto& t : p->tensors())
                for (double v : t.values) write_le<double>(f, v);
        if (!f) throw IoError("failed writing checkpoint " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing checkpoint " + path.string());
    std::array<char, 8> magic{};
    if (!f.read(magic.data(), magic.size()) || magic != kMagic) throw IoError(path.string() + ": not a checkpoint");
    if (read_le<std::uint32_t>(f, path) != kCheckpointVersion) {
        throw IoError(path.string() + ": unsupported checkpoint version");
    }
    const auto len = read_le<std::uint64_t>(f, path);
    std::string text(len, '\0');
    if (!f.read(text.data(), static_cast<std::streamsize>(len))) throw IoError(path.string() + ": truncated header");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed header: " + e.what());
    }
    const ArchDescriptor arch = header.at("arch").get<ArchDescriptor>();
    Checkpoint ck;
    ck.student = ParamSet(arch);
    check_directory(ck.student, header.at("tensors"), "layout");
    ck.teacher = ParamSet(arch);
    ck.momentum = ParamSet(arch);
    for (ParamSet* p : {&ck.student, &ck.teacher, &ck.momentum})
        for (auto& t : p->tensors())
            for (double& v : t.values) v = read_le<double>(f, path);
    ck.state = header.at("state");
    return ck;
}

Checkpoint load_checkpoint(const fs::path& path, const ArchDescriptor& expected) {
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.student.arch() == expected)) {
        throw StateError(path.string() + ": checkpoint architecture " + json(ck.student.arch()).dump() +
                         " does not match expected " + json(expected).dump());
    }
    return ck;
}

}  // namespace simcvd
