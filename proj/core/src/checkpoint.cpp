#include "petdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "petdiff/errors.hpp"

namespace petdiff {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& f, const char* field) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw FormatError(std::string("load_checkpoint: truncated header at ") + field);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, CheckpointKind kind, int n_slices,
                     const TinyNetConfig& net, double intensity_scale,
                     std::span<const double> params) {
    TinyNet shape(net);
    if (params.size() != shape.param_count())
        throw ArgumentError("save_checkpoint: parameter count does not match architecture");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_checkpoint: cannot open " + path);
    f.write(kMagic, 4);
    put<std::uint8_t>(f, kVersion);
    put<std::uint8_t>(f, static_cast<std::uint8_t>(kind));
    put<std::uint8_t>(f, static_cast<std::uint8_t>(net.emb_mode));
    put<std::uint8_t>(f, 0);  // reserved
    put<std::int32_t>(f, n_slices);
    put<std::int32_t>(f, net.in_channels);
    put<std::int32_t>(f, net.out_channels);
    put<std::int32_t>(f, net.base_width);
    put<std::int32_t>(f, net.emb_len);
    put<double>(f, intensity_scale);
    put<std::uint64_t>(f, params.size());
    for (double p : params) put<float>(f, static_cast<float>(p));
    if (!f) throw FormatError("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_checkpoint: cannot open " + path);

    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("load_checkpoint: bad magic in " + path);
    const auto version = get<std::uint8_t>(f, "version");
    if (version != kVersion)
        throw FormatError("load_checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    const auto kind = get<std::uint8_t>(f, "kind");
    if (kind > 1) throw FormatError("load_checkpoint: unknown kind tag");
    ck.kind = static_cast<CheckpointKind>(kind);
    const auto mode = get<std::uint8_t>(f, "emb_mode");
    if (mode > 1) throw FormatError("load_checkpoint: unknown embedding mode");
    ck.net.emb_mode = static_cast<EmbeddingMode>(mode);
    (void)get<std::uint8_t>(f, "reserved");
    ck.n_slices = get<std::int32_t>(f, "n_slices");
    ck.net.in_channels = get<std::int32_t>(f, "in_channels");
    ck.net.out_channels = get<std::int32_t>(f, "out_channels");
    ck.net.base_width = get<std::int32_t>(f, "base_width");
    ck.net.emb_len = get<std::int32_t>(f, "emb_len");
    ck.intensity_scale = get<double>(f, "intensity_scale");
    const auto count = get<std::uint64_t>(f, "param_count");

    TinyNet shape(ck.net);
    if (count != shape.param_count())
        throw FormatError("load_checkpoint: parameter count " + std::to_string(count) +
                          " does not match architecture (expected " +
                          std::to_string(shape.param_count()) + ")");

    ck.params.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        float v;
        f.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!f)
            throw FormatError("load_checkpoint: truncated payload at parameter " +
                              std::to_string(i) + " of " + std::to_string(count));
        ck.params[i] = v;
    }
    return ck;
}

}  // namespace petdiff
