#include "textseg/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "textseg/errors.hpp"
#include "textseg/rng.hpp"

namespace textseg {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'C', 'P'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

uint64_t get_u64(const std::string& s, size_t pos) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[pos + i]);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    nlohmann::json header;
    try {
        header["config"] = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::parse_error&) {
        throw UsageError("save_checkpoint: config_json is not valid JSON");
    }
    uint64_t offset = 0;
    auto& tl = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        tl.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"offset", offset},
                      {"count", static_cast<uint64_t>(t.numel())}});
        offset += static_cast<uint64_t>(t.numel());
    }
    std::string hj = header.dump();

    std::string out;
    out.reserve(16 + hj.size() + offset * 8);
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, hj.size());
    out += hj;
    for (const auto& [name, t] : tensors)
        for (double v : t.data()) put_f64(out, v);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("save_checkpoint: short write to " + path);
}

CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    auto fail = [&path](const std::string& msg) -> void {
        throw FormatError("load_checkpoint: " + path + ": " + msg);
    };
    if (all.size() < 16 || std::memcmp(all.data(), kMagic, 4) != 0) fail("bad magic");
    uint32_t version = 0;
    for (int i = 3; i >= 0; --i)
        version = (version << 8) | static_cast<unsigned char>(all[4 + i]);
    if (version != kVersion) fail("unsupported version " + std::to_string(version));
    uint64_t hlen = get_u64(all, 8);
    if (16 + hlen > all.size()) fail("truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(all.substr(16, hlen));
    } catch (const nlohmann::json::parse_error&) {
        fail("header is not valid JSON");
    }
    if (!header.contains("config") || !header.contains("tensors") ||
        !header["tensors"].is_array())
        fail("header missing config/tensors");

    size_t payload = 16 + hlen;
    uint64_t payload_elems = (all.size() - payload) / 8;
    if ((all.size() - payload) % 8 != 0) fail("payload not a whole number of f64s");

    CheckpointData data;
    data.config_json = header["config"].dump();
    for (const auto& te : header["tensors"]) {
        if (!te.contains("name") || !te.contains("shape") || !te.contains("offset") ||
            !te.contains("count"))
            fail("tensor entry missing a field");
        std::string name = te["name"].get<std::string>();
        Shape shape = te["shape"].get<Shape>();
        uint64_t off = te["offset"].get<uint64_t>();
        uint64_t count = te["count"].get<uint64_t>();
        if (static_cast<uint64_t>(shape_numel(shape)) != count)
            fail("tensor " + name + ": shape/count mismatch");
        if (off + count > payload_elems) fail("tensor " + name + ": data out of range");
        std::vector<double> v(count);
        for (uint64_t i = 0; i < count; ++i) {
            uint64_t bits = get_u64(all, payload + (off + i) * 8);
            double d;
            std::memcpy(&d, &bits, 8);
            v[i] = d;
        }
        data.tensors.emplace_back(name, Tensor::from_data(std::move(shape), std::move(v), true));
    }
    return data;
}

std::string file_fnv1a_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("file_fnv1a_hex: cannot open " + path);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(all)));
    return buf;
}

}  // namespace textseg
