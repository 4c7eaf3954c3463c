#pragma once

#include <iosfwd>
#include <string>
#include <variant>

#include "lifmixer/tensor.hpp"

namespace lifmixer {

// "LIFT" tensor dump: magic bytes "LIFT", five little-endian uint32
// values (dtype code 0=f32 / 1=f64, n, c, h, w), then the raw
// little-endian elements in flat order.

using AnyTensor = std::variant<Tensor4<float>, Tensor4<double>>;

void write_lift(std::ostream& os, const Tensor4<float>& t);
void write_lift(std::ostream& os, const Tensor4<double>& t);
void write_lift_file(const std::string& path, const Tensor4<float>& t);
void write_lift_file(const std::string& path, const Tensor4<double>& t);

AnyTensor read_lift(std::istream& is);
AnyTensor read_lift_file(const std::string& path);

Dtype any_dtype(const AnyTensor& t);
int64_t any_numel(const AnyTensor& t);

// Strict-typed read; throws if the stored dtype differs.
template <typename T>
Tensor4<T> read_lift_file_as(const std::string& path) {
    AnyTensor t = read_lift_file(path);
    if (!std::holds_alternative<Tensor4<T>>(t)) {
        throw std::runtime_error("tensor file " + path + " holds " +
                                 dtype_name(any_dtype(t)) + ", expected " +
                                 dtype_name(dtype_of<T>()));
    }
    return std::move(std::get<Tensor4<T>>(t));
}

} // namespace lifmixer
