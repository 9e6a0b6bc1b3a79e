#include "admc/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace admc::io {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'M', 'C'};
constexpr uint8_t kDtypeF32 = 1;

void put_u16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
    raise(ErrorCategory::Format, "tensor file '" + path.string() + "': " + why);
}

} // namespace

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
    if (!t.defined()) raise(ErrorCategory::Usage, "write_tensor: undefined tensor");
    std::vector<unsigned char> buf;
    buf.reserve(16 + static_cast<size_t>(t.numel()) * 4);
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u16(buf, kTensorFileVersion);
    buf.push_back(kDtypeF32);
    if (t.rank() > 255) raise(ErrorCategory::Shape, "write_tensor: rank exceeds 255");
    buf.push_back(static_cast<uint8_t>(t.rank()));
    for (int64_t d : t.dims()) {
        if (d < 0 || d > std::numeric_limits<uint32_t>::max())
            raise(ErrorCategory::Shape, "write_tensor: dim does not fit u32");
        put_u32(buf, static_cast<uint32_t>(d));
    }
    for (int64_t i = 0; i < t.numel(); ++i)
        put_u32(buf, std::bit_cast<uint32_t>(t.data()[i]));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) raise(ErrorCategory::Io, "cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    f.flush();
    if (!f) raise(ErrorCategory::Io, "short write to '" + path.string() + "'");
}

Tensor<float> read_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(ErrorCategory::Io, "cannot open '" + path.string() + "' for reading");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 8) corrupt(path, "header truncated");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) corrupt(path, "bad magic");
    const uint16_t version = get_u16(buf.data() + 4);
    if (version != kTensorFileVersion)
        corrupt(path, "unsupported version " + std::to_string(version));
    if (buf[6] != kDtypeF32) corrupt(path, "unsupported dtype code " + std::to_string(buf[6]));
    const size_t rank = buf[7];
    if (buf.size() < 8 + rank * 4) corrupt(path, "dims truncated");

    Shape dims(rank);
    int64_t numel = 1;
    for (size_t i = 0; i < rank; ++i) {
        dims[i] = get_u32(buf.data() + 8 + i * 4);
        numel *= dims[i];
    }
    const size_t payload_at = 8 + rank * 4;
    const size_t expect = payload_at + static_cast<size_t>(numel) * 4;
    if (buf.size() < expect) corrupt(path, "payload truncated");
    if (buf.size() > expect) corrupt(path, "trailing bytes after payload");

    std::vector<float> values(static_cast<size_t>(numel));
    for (size_t i = 0; i < values.size(); ++i)
        values[i] = std::bit_cast<float>(get_u32(buf.data() + payload_at + i * 4));
    return Tensor<float>::from(std::move(dims), std::move(values));
}

} // namespace admc::io
