#include <doctest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "admc/rng.hpp"
#include "admc/tensor_io.hpp"

using namespace admc;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    auto dir = fs::temp_directory_path() / "admc_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("round-trip is bit-exact across random shapes and special values") {
    rng::Stream s(rng::Key(77).child("io").value());
    for (int trial = 0; trial < 20; ++trial) {
        const size_t rank = 1 + s.next_below(4);
        Shape dims;
        for (size_t i = 0; i < rank; ++i) dims.push_back(1 + static_cast<int64_t>(s.next_below(7)));
        Tensor<float> t = Tensor<float>::zeros(dims);
        float* d = t.mutable_data();
        for (int64_t i = 0; i < t.numel(); ++i)
            d[i] = static_cast<float>(s.next_normal() * 1e3);
        if (t.numel() >= 4) {
            d[0] = -0.0f;
            d[1] = 1e-42f; // denormal
            d[2] = -3.4e38f;
            d[3] = std::bit_cast<float>(0x7fc00123u); // NaN with payload bits
        }
        auto path = temp_file("roundtrip.admc");
        io::write_tensor(path, t);
        Tensor<float> back = io::read_tensor(path);
        REQUIRE(back.dims() == t.dims());
        for (int64_t i = 0; i < t.numel(); ++i)
            CHECK(std::bit_cast<uint32_t>(back.data()[i]) == std::bit_cast<uint32_t>(t.data()[i]));
    }
}

TEST_CASE("header layout is exactly as documented") {
    Tensor<float> t = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto path = temp_file("layout.admc");
    io::write_tensor(path, t);
    auto bytes = slurp(path);
    REQUIRE(bytes.size() == 8 + 2 * 4 + 6 * 4);
    CHECK(bytes[0] == 'A');
    CHECK(bytes[1] == 'D');
    CHECK(bytes[2] == 'M');
    CHECK(bytes[3] == 'C');
    CHECK(bytes[4] == 1); // version lo
    CHECK(bytes[5] == 0); // version hi
    CHECK(bytes[6] == 1); // f32 dtype
    CHECK(bytes[7] == 2); // rank
    CHECK(bytes[8] == 2); // dim0 = 2 LE
    CHECK(bytes[12] == 3); // dim1 = 3 LE
    // First payload float: 1.0f = 0x3f800000 little-endian.
    CHECK(bytes[16] == 0x00);
    CHECK(bytes[19] == 0x3f);
}

TEST_CASE("corrupted files are rejected with format errors") {
    Tensor<float> t = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
    auto path = temp_file("corrupt.admc");
    io::write_tensor(path, t);
    auto good = slurp(path);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    bad_magic[1] = 'X';
    dump(path, bad_magic);
    CHECK_THROWS_WITH_AS(io::read_tensor(path), doctest::Contains("bad magic"), Error);

    auto bad_version = good;
    bad_version[4] = 9;
    dump(path, bad_version);
    CHECK_THROWS_WITH_AS(io::read_tensor(path), doctest::Contains("version"), Error);

    auto bad_dtype = good;
    bad_dtype[6] = 7;
    dump(path, bad_dtype);
    CHECK_THROWS_WITH_AS(io::read_tensor(path), doctest::Contains("dtype"), Error);

    auto truncated = good;
    truncated.resize(truncated.size() - 4);
    dump(path, truncated);
    CHECK_THROWS_WITH_AS(io::read_tensor(path), doctest::Contains("truncated"), Error);

    auto trailing = good;
    trailing.push_back(0);
    dump(path, trailing);
    CHECK_THROWS_WITH_AS(io::read_tensor(path), doctest::Contains("trailing"), Error);

    auto header_only = std::vector<unsigned char>(good.begin(), good.begin() + 5);
    dump(path, header_only);
    CHECK_THROWS_AS(io::read_tensor(path), Error);
}

TEST_CASE("error categories: missing file is Io, bad content is Format") {
    try {
        io::read_tensor(temp_file("does_not_exist.admc"));
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Io);
    }
    auto path = temp_file("fmt.admc");
    dump(path, {'A', 'D', 'M', 'C', 1, 0, 1, 0, 9});
    try {
        io::read_tensor(path);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Format);
    }
}

TEST_CASE("scalar-rank and empty tensors round-trip") {
    auto path = temp_file("rank0.admc");
    Tensor<float> t1 = Tensor<float>::from({1}, {42.5f});
    io::write_tensor(path, t1);
    CHECK(io::read_tensor(path).item() == 42.5f);

    Tensor<float> t0 = Tensor<float>::zeros({0});
    io::write_tensor(path, t0);
    Tensor<float> back = io::read_tensor(path);
    CHECK(back.dims() == Shape{0});
    CHECK(back.numel() == 0);
}
