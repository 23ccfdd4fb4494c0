#include "vot/clipfile.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace vot {

namespace {

constexpr char kMagic[4] = {'C', 'G', 'P', 'V'};
constexpr std::uint16_t kVersion = 1;
constexpr size_t kHeaderSize = 15;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint16_t get_u16(const std::string& bytes, size_t off) {
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[off]) |
                                      (static_cast<std::uint8_t>(bytes[off + 1]) << 8));
}

}  // namespace

void write_clip(const Tensor<std::uint8_t>& clip, std::uint8_t role, const std::string& path) {
    if (clip.dim() != 4) throw ShapeError("write_clip: expects [T,H,W,C]");
    for (int i = 0; i < 4; ++i)
        if (clip.size(i) > 0xffff) throw FormatError("write_clip: dimension exceeds u16");
    std::string out;
    out.reserve(kHeaderSize + static_cast<size_t>(clip.numel()));
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    out.push_back(static_cast<char>(role));
    for (int i = 0; i < 4; ++i) put_u16(out, static_cast<std::uint16_t>(clip.size(i)));
    out.append(reinterpret_cast<const char*>(clip.data()), static_cast<size_t>(clip.numel()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open clip file for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to clip file: " + path);
}

Tensor<std::uint8_t> read_clip(const std::string& path, std::uint8_t* role_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open clip file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < kHeaderSize)
        throw FormatError("clip file too short: " + path + " (" + std::to_string(bytes.size()) +
                          " bytes, header needs " + std::to_string(kHeaderSize) + ")");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("bad clip magic in " + path + " (byte offset 0)");
    const std::uint16_t version = get_u16(bytes, 4);
    if (version != kVersion)
        throw FormatError("unsupported clip version " + std::to_string(version) + " in " + path);
    const std::uint8_t role = static_cast<std::uint8_t>(bytes[6]);
    const int t = get_u16(bytes, 7), h = get_u16(bytes, 9), w = get_u16(bytes, 11),
              c = get_u16(bytes, 13);
    const std::int64_t expect =
        static_cast<std::int64_t>(t) * h * w * c + static_cast<std::int64_t>(kHeaderSize);
    if (static_cast<std::int64_t>(bytes.size()) != expect)
        throw FormatError("clip size mismatch in " + path + ": expected " +
                          std::to_string(expect) + " bytes, got " + std::to_string(bytes.size()) +
                          " (byte offset " + std::to_string(kHeaderSize) + ")");
    Tensor<std::uint8_t> clip(Shape{t, h, w, c});
    std::memcpy(clip.data(), bytes.data() + kHeaderSize, static_cast<size_t>(clip.numel()));
    if (role_out) *role_out = role;
    return clip;
}

void write_traj_csv(const TrajectoryLabel& label, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open trajectory file for writing: " + path);
    f << "i,x,y\n";
    for (const TrajPoint& p : label) f << p.i << "," << p.x << "," << p.y << "\n";
    if (!f) throw IoError("short write to trajectory file: " + path);
}

TrajectoryLabel read_traj_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open trajectory file: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "i,x,y")
        throw FormatError("trajectory file missing 'i,x,y' header: " + path);
    TrajectoryLabel label;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        TrajPoint p;
        char c1 = 0, c2 = 0;
        std::istringstream is(line);
        if (!(is >> p.i >> c1 >> p.x >> c2 >> p.y) || c1 != ',' || c2 != ',')
            throw FormatError("malformed trajectory row '" + line + "' in " + path);
        label.push_back(p);
    }
    return label;
}

}  // namespace vot
