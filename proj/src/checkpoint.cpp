#include "vot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace vot {

namespace {

constexpr char kMagic[4] = {'V', 'O', 'T', 'C'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32_le(std::string& out, const float* data, std::int64_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(data), static_cast<size_t>(n) * 4);
    } else {
        for (std::int64_t i = 0; i < n; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &data[i], 4);
            for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
    }
}

}  // namespace

nlohmann::json RunMeta::to_json() const {
    return {{"seed", seed}, {"epochs", epochs}, {"dataset_id", dataset_id}};
}

RunMeta RunMeta::from_json(const nlohmann::json& j) {
    RunMeta m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.epochs = j.at("epochs").get<int>();
    m.dataset_id = j.at("dataset_id").get<std::string>();
    return m;
}

void save_checkpoint(const std::string& path, const VOTConfig& config,
                     const ParameterStore<float>& params, const RunMeta& meta) {
    nlohmann::json manifest;
    manifest["config"] = config.to_json();
    manifest["meta"] = meta.to_json();
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, entry] : params) {
        nlohmann::json t;
        t["name"] = name;
        t["dtype"] = "f32";
        t["shape"] = entry.value.shape();
        t["offset"] = offset;
        offset += static_cast<std::uint64_t>(entry.value.numel()) * 4;
        tensors.push_back(std::move(t));
    }
    manifest["tensors"] = std::move(tensors);
    const std::string mjson = manifest.dump();

    std::string out;
    out.reserve(15 + mjson.size() + offset);
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(mjson.size()));
    out += mjson;
    for (const auto& [name, entry] : params)
        append_f32_le(out, entry.value.data(), entry.value.numel());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("bad checkpoint magic in " + path + " (byte offset 0)");
    const std::uint16_t version =
        static_cast<std::uint8_t>(bytes[4]) | (static_cast<std::uint8_t>(bytes[5]) << 8);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    std::uint32_t mlen = 0;
    for (int i = 0; i < 4; ++i) mlen |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[6 + i])) << (8 * i);
    if (bytes.size() < 10 + mlen)
        throw FormatError("truncated checkpoint manifest in " + path + " (byte offset " +
                          std::to_string(bytes.size()) + ", expected " +
                          std::to_string(10 + mlen) + "+)");
    nlohmann::json manifest = nlohmann::json::parse(bytes.substr(10, mlen));

    Checkpoint ck;
    ck.config = VOTConfig::from_json(manifest.at("config"));
    ck.meta = RunMeta::from_json(manifest.at("meta"));
    const size_t data_start = 10 + mlen;
    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        if (t.at("dtype").get<std::string>() != "f32")
            throw FormatError("unsupported tensor dtype for " + name);
        Shape shape = t.at("shape").get<Shape>();
        const std::uint64_t off = t.at("offset").get<std::uint64_t>();
        const std::int64_t n = shape_numel(shape);
        if (data_start + off + static_cast<std::uint64_t>(n) * 4 > bytes.size())
            throw FormatError("truncated checkpoint data for " + name + " (byte offset " +
                              std::to_string(data_start + off) + ")");
        Tensor<float> value(shape);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(value.data(), bytes.data() + data_start + off,
                        static_cast<size_t>(n) * 4);
        } else {
            for (std::int64_t i = 0; i < n; ++i) {
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b)
                    bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(
                                bytes[data_start + off + static_cast<size_t>(i) * 4 + b]))
                            << (8 * b);
                float v;
                std::memcpy(&v, &bits, 4);
                value[i] = v;
            }
        }
        ck.params.add(name, std::move(value));
    }
    return ck;
}

std::string params_hash(const ParameterStore<float>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, entry] : params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(entry.value.data(), static_cast<size_t>(entry.value.numel()) * 4, h);
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace vot
