#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>

#include "lifmixer/rng.hpp"
#include "lifmixer/tensor.hpp"
#include "lifmixer/tensor_io.hpp"

using namespace lifmixer;

namespace {

template <typename T>
Tensor4<T> random_tensor(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed) {
    Tensor4<T> t(n, c, h, w);
    Rng r(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(r.uniform(-4.0, 4.0));
    return t;
}

} // namespace

TEST_CASE("tensor round-trips through the binary format bit for bit") {
    auto f = random_tensor<float>(2, 3, 5, 7, 11);
    std::stringstream buf;
    write_lift(buf, f);
    AnyTensor back = read_lift(buf);
    REQUIRE(any_dtype(back) == Dtype::f32);
    const auto& g = std::get<Tensor4<float>>(back);
    REQUIRE(g.same_shape(f));
    for (int64_t i = 0; i < f.numel(); ++i) CHECK(g[i] == f[i]);

    auto d = random_tensor<double>(1, 2, 3, 4, 13);
    std::stringstream buf2;
    write_lift(buf2, d);
    AnyTensor back2 = read_lift(buf2);
    const auto& g2 = std::get<Tensor4<double>>(back2);
    for (int64_t i = 0; i < d.numel(); ++i) CHECK(g2[i] == d[i]);
}

TEST_CASE("header is magic plus five little-endian u32 words") {
    Tensor4<float> t(1, 2, 3, 4);
    std::stringstream buf;
    write_lift(buf, t);
    const std::string s = buf.str();
    REQUIRE(s.size() == 4 + 5 * 4 + size_t(t.numel()) * 4);
    CHECK(s.compare(0, 4, "LIFT") == 0);
    auto word = [&](size_t idx) {
        uint32_t v = 0;
        for (int b = 0; b < 4; ++b)
            v |= uint32_t(uint8_t(s[4 + idx * 4 + size_t(b)])) << (8 * b);
        return v;
    };
    CHECK(word(0) == 0); // f32 code
    CHECK(word(1) == 1);
    CHECK(word(2) == 2);
    CHECK(word(3) == 3);
    CHECK(word(4) == 4);
}

TEST_CASE("corrupt and truncated streams are rejected with context") {
    Tensor4<float> t(1, 1, 1, 1);
    std::stringstream buf;
    write_lift(buf, t);
    std::string s = buf.str();

    std::string bad_magic = s;
    bad_magic[0] = 'X';
    std::stringstream b1(bad_magic);
    CHECK_THROWS_WITH_AS(read_lift(b1), doctest::Contains("magic"), std::runtime_error);

    std::stringstream b2(s.substr(0, 10));
    CHECK_THROWS_AS(read_lift(b2), std::runtime_error);

    std::string bad_dtype = s;
    bad_dtype[4] = 9;
    std::stringstream b3(bad_dtype);
    CHECK_THROWS_WITH_AS(read_lift(b3), doctest::Contains("dtype"), std::runtime_error);

    std::stringstream b4(s.substr(0, s.size() - 2));
    CHECK_THROWS_AS(read_lift(b4), std::runtime_error);
}

TEST_CASE("file helpers enforce the requested element type") {
    const std::string path = "lift_io_test.bin";
    auto d = random_tensor<double>(1, 1, 2, 2, 3);
    write_lift_file(path, d);
    auto back = read_lift_file_as<double>(path);
    CHECK(max_abs_diff(back, d) == 0.0);
    CHECK_THROWS_AS(read_lift_file_as<float>(path), std::runtime_error);
    CHECK_THROWS_WITH_AS(read_lift_file("no_such_file.bin"), doctest::Contains("no_such_file"),
                         std::runtime_error);
    std::remove(path.c_str());
}
