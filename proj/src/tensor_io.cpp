#include "lifmixer/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace lifmixer {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("tensor dump: truncated header");
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

template <typename T>
void write_impl(std::ostream& os, const Tensor4<T>& t) {
    for (int64_t e : {t.n(), t.c(), t.h(), t.w()}) {
        if (e > std::numeric_limits<uint32_t>::max()) {
            throw std::runtime_error("tensor dump: extent exceeds uint32 in " + t.shape_str());
        }
    }
    os.write("LIFT", 4);
    put_u32(os, static_cast<uint32_t>(dtype_of<T>()));
    put_u32(os, static_cast<uint32_t>(t.n()));
    put_u32(os, static_cast<uint32_t>(t.c()));
    put_u32(os, static_cast<uint32_t>(t.h()));
    put_u32(os, static_cast<uint32_t>(t.w()));
    // Little-endian host assumed for the payload; asserted at build targets.
    static_assert(std::endian::native == std::endian::little, "element payload is little-endian");
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    if (!os) throw std::runtime_error("tensor dump: write failed");
}

template <typename T>
Tensor4<T> read_payload(std::istream& is, int64_t n, int64_t c, int64_t h, int64_t w) {
    Tensor4<T> t(n, c, h, w);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    if (!is) throw std::runtime_error("tensor dump: truncated payload");
    return t;
}

} // namespace

void write_lift(std::ostream& os, const Tensor4<float>& t) { write_impl(os, t); }
void write_lift(std::ostream& os, const Tensor4<double>& t) { write_impl(os, t); }

void write_lift_file(const std::string& path, const Tensor4<float>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    write_lift(f, t);
}

void write_lift_file(const std::string& path, const Tensor4<double>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    write_lift(f, t);
}

AnyTensor read_lift(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "LIFT", 4) != 0) {
        throw std::runtime_error("tensor dump: bad magic, expected LIFT");
    }
    const uint32_t code = get_u32(is);
    const int64_t n = get_u32(is);
    const int64_t c = get_u32(is);
    const int64_t h = get_u32(is);
    const int64_t w = get_u32(is);
    if (code == static_cast<uint32_t>(Dtype::f32)) return read_payload<float>(is, n, c, h, w);
    if (code == static_cast<uint32_t>(Dtype::f64)) return read_payload<double>(is, n, c, h, w);
    throw std::runtime_error("tensor dump: unknown dtype code " + std::to_string(code));
}

AnyTensor read_lift_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    return read_lift(f);
}

Dtype any_dtype(const AnyTensor& t) {
    return std::holds_alternative<Tensor4<float>>(t) ? Dtype::f32 : Dtype::f64;
}

int64_t any_numel(const AnyTensor& t) {
    return std::visit([](const auto& x) { return x.numel(); }, t);
}

} // namespace lifmixer
