#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lifmixer/model.hpp"
#include "lifmixer/tensor_io.hpp"

namespace lifmixer {

// On-disk snapshot: a human-readable key=value config block, a manifest of
// named tensors (dtype, shape, byte offset), then the concatenated binary
// tensor dumps. Everything round-trips bit-exactly.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, AnyTensor>> tensors;

    bool has_config(const std::string& key) const;
    // Throws if the key is absent.
    const std::string& config_at(const std::string& key) const;
    void set_config(const std::string& key, const std::string& value);
    const AnyTensor* find_tensor(const std::string& name) const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& is);
void write_checkpoint_file(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint_file(const std::string& path);

// Decimal text that parses back to the identical double.
std::string format_real(double v);
double parse_real(const std::string& text, const std::string& what);
int64_t parse_int(const std::string& text, const std::string& what);

std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& cfg);
ModelConfig model_config_from(const Checkpoint& ck);

// Serializes every parameter under its bank name plus the config block.
template <typename T>
Checkpoint snapshot_model(ModelParams<T>& m) {
    Checkpoint ck;
    ck.config = model_config_kv(m.cfg);
    ck.set_config("dtype", dtype_name(dtype_of<T>()));
    // Bank over (m, m): grad pointers alias the values and are unused here.
    for (const BankEntry<T>& e : make_bank(m, m)) {
        ck.tensors.emplace_back(e.name, *e.value);
    }
    return ck;
}

// Copies every bank-named tensor out of the checkpoint; extra tensors (for
// example optimizer moments) are ignored, absent or mismatched ones throw.
template <typename T>
void load_model(const Checkpoint& ck, ModelParams<T>& m) {
    const std::string& dt = ck.config_at("dtype");
    if (dt != dtype_name(dtype_of<T>())) {
        throw std::runtime_error("checkpoint holds " + dt + " parameters, expected " +
                                 dtype_name(dtype_of<T>()));
    }
    for (const BankEntry<T>& e : make_bank(m, m)) {
        const AnyTensor* stored = ck.find_tensor(e.name);
        if (!stored) throw std::runtime_error("checkpoint is missing tensor " + e.name);
        if (!std::holds_alternative<Tensor4<T>>(*stored)) {
            throw std::runtime_error("checkpoint tensor " + e.name + " has dtype " +
                                     dtype_name(any_dtype(*stored)));
        }
        const Tensor4<T>& src = std::get<Tensor4<T>>(*stored);
        if (!src.same_shape(*e.value)) {
            throw std::runtime_error("checkpoint tensor " + e.name + " has shape " +
                                     src.shape_str() + ", model expects " + e.value->shape_str());
        }
        *e.value = src;
    }
}

} // namespace lifmixer
