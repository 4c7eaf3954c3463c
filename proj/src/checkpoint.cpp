#include "lifmixer/checkpoint.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace lifmixer {

namespace {

constexpr const char* magic_line = "LIFCKPT 1";

Dtype dtype_from_name(const std::string& s, const std::string& what) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    throw std::runtime_error("checkpoint: unknown dtype '" + s + "' in " + what);
}

} // namespace

bool Checkpoint::has_config(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return true;
    return false;
}

const std::string& Checkpoint::config_at(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return v;
    throw std::runtime_error("checkpoint config is missing key '" + key + "'");
}

void Checkpoint::set_config(const std::string& key, const std::string& value) {
    for (auto& [k, v] : config) {
        if (k == key) {
            v = value;
            return;
        }
    }
    config.emplace_back(key, value);
}

const AnyTensor* Checkpoint::find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

std::string format_real(double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

double parse_real(const std::string& text, const std::string& what) {
    try {
        size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("cannot parse '" + text + "' as a number for " + what);
    }
}

int64_t parse_int(const std::string& text, const std::string& what) {
    try {
        size_t used = 0;
        long long v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing junk");
        return int64_t(v);
    } catch (const std::exception&) {
        throw std::runtime_error("cannot parse '" + text + "' as an integer for " + what);
    }
}

void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    // Serialize tensor dumps first so the manifest can carry byte offsets.
    std::ostringstream data(std::ios::binary);
    std::vector<uint64_t> offsets;
    offsets.reserve(ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
            throw std::runtime_error("checkpoint tensor name '" + name +
                                     "' is empty or contains whitespace");
        }
        offsets.push_back(uint64_t(data.tellp()));
        std::visit([&](const auto& tt) { write_lift(data, tt); }, t);
    }

    os << magic_line << "\n[config]\n";
    for (const auto& [k, v] : ck.config) os << k << "=" << v << "\n";
    os << "[manifest]\n";
    for (size_t i = 0; i < ck.tensors.size(); ++i) {
        const auto& [name, t] = ck.tensors[i];
        std::visit(
            [&](const auto& tt) {
                os << name << " " << dtype_name(any_dtype(t)) << " " << tt.n() << " " << tt.c()
                   << " " << tt.h() << " " << tt.w() << " " << offsets[i] << "\n";
            },
            t);
    }
    os << "[data]\n";
    const std::string blob = data.str();
    os.write(blob.data(), std::streamsize(blob.size()));
    if (!os) throw std::runtime_error("checkpoint: stream write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
    std::ostringstream buf(std::ios::binary);
    buf << is.rdbuf();
    const std::string all = buf.str();

    const std::string data_marker = "[data]\n";
    const size_t data_at = all.find(data_marker);
    if (data_at == std::string::npos) {
        throw std::runtime_error("checkpoint: missing [data] section");
    }
    const std::string text = all.substr(0, data_at);
    const size_t data_begin = data_at + data_marker.size();

    std::istringstream ts(text);
    std::string line;
    if (!std::getline(ts, line) || line != magic_line) {
        throw std::runtime_error("checkpoint: bad magic line '" + line + "'");
    }
    if (!std::getline(ts, line) || line != "[config]") {
        throw std::runtime_error("checkpoint: expected [config], got '" + line + "'");
    }

    Checkpoint ck;
    bool in_manifest = false;
    struct Row {
        std::string name;
        Dtype dtype;
        int64_t n, c, h, w;
        uint64_t offset;
    };
    std::vector<Row> rows;
    while (std::getline(ts, line)) {
        if (line.empty()) continue;
        if (line == "[manifest]") {
            in_manifest = true;
            continue;
        }
        if (!in_manifest) {
            const size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error("checkpoint: config line without '=': '" + line + "'");
            }
            ck.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
        } else {
            std::istringstream ls(line);
            Row r;
            std::string dt;
            if (!(ls >> r.name >> dt >> r.n >> r.c >> r.h >> r.w >> r.offset)) {
                throw std::runtime_error("checkpoint: malformed manifest line '" + line + "'");
            }
            r.dtype = dtype_from_name(dt, "manifest line '" + line + "'");
            rows.push_back(std::move(r));
        }
    }
    if (!in_manifest) throw std::runtime_error("checkpoint: missing [manifest] section");

    std::istringstream ds(all.substr(data_begin), std::ios::binary);
    for (const Row& r : rows) {
        ds.clear();
        ds.seekg(std::streamoff(r.offset));
        if (!ds) {
            throw std::runtime_error("checkpoint: offset " + std::to_string(r.offset) +
                                     " for tensor " + r.name + " is out of range");
        }
        AnyTensor t = read_lift(ds);
        const bool shape_ok = std::visit(
            [&](const auto& tt) {
                return tt.n() == r.n && tt.c() == r.c && tt.h() == r.h && tt.w() == r.w;
            },
            t);
        if (any_dtype(t) != r.dtype || !shape_ok) {
            throw std::runtime_error("checkpoint: stored tensor " + r.name +
                                     " disagrees with its manifest entry");
        }
        ck.tensors.emplace_back(r.name, std::move(t));
    }
    return ck;
}

void write_checkpoint_file(const std::string& path, const Checkpoint& ck) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    write_checkpoint(f, ck);
    if (!f) throw std::runtime_error("write to " + path + " failed");
}

Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for reading");
    try {
        return read_checkpoint(f);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " (file " + path + ")");
    }
}

std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("patch", std::to_string(cfg.patch));
    kv.emplace_back("embed_dim", std::to_string(cfg.embed_dim));
    std::string depths;
    for (size_t i = 0; i < cfg.depths.size(); ++i) {
        if (i) depths += ",";
        depths += std::to_string(cfg.depths[i]);
    }
    kv.emplace_back("depths", depths);
    kv.emplace_back("groups", std::to_string(cfg.groups));
    kv.emplace_back("mlp_ratio", format_real(cfg.mlp_ratio));
    kv.emplace_back("num_classes", std::to_string(cfg.num_classes));
    kv.emplace_back("drop_path", format_real(cfg.drop_path));
    kv.emplace_back("dropout", format_real(cfg.dropout));
    kv.emplace_back("norm_groups", std::to_string(cfg.norm_groups));
    kv.emplace_back("tau_init", format_real(cfg.tau_init));
    kv.emplace_back("vth_init", format_real(cfg.vth_init));
    return kv;
}

ModelConfig model_config_from(const Checkpoint& ck) {
    ModelConfig cfg;
    cfg.patch = parse_int(ck.config_at("patch"), "patch");
    cfg.embed_dim = parse_int(ck.config_at("embed_dim"), "embed_dim");
    const std::string depths = ck.config_at("depths");
    std::istringstream ds(depths);
    std::string part;
    size_t idx = 0;
    while (std::getline(ds, part, ',')) {
        if (idx >= cfg.depths.size()) break;
        cfg.depths[idx++] = parse_int(part, "depths");
    }
    if (idx != cfg.depths.size()) {
        throw std::runtime_error("checkpoint: depths '" + depths + "' must list 4 values");
    }
    cfg.groups = parse_int(ck.config_at("groups"), "groups");
    cfg.mlp_ratio = parse_real(ck.config_at("mlp_ratio"), "mlp_ratio");
    cfg.num_classes = parse_int(ck.config_at("num_classes"), "num_classes");
    cfg.drop_path = parse_real(ck.config_at("drop_path"), "drop_path");
    cfg.dropout = parse_real(ck.config_at("dropout"), "dropout");
    cfg.norm_groups = parse_int(ck.config_at("norm_groups"), "norm_groups");
    cfg.tau_init = parse_real(ck.config_at("tau_init"), "tau_init");
    cfg.vth_init = parse_real(ck.config_at("vth_init"), "vth_init");
    return cfg;
}

} // namespace lifmixer
