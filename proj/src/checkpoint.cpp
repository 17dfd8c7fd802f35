#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cfmn {

namespace {

constexpr char kMagic[5] = {'C', 'F', 'M', 'N', '1'};

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw IoError(path + ": truncated checkpoint");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_record(std::ofstream& f, const std::string& name, const Tensor& t) {
    put_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<uint32_t>(t.rank()));
    for (int e : t.shape) put_u32(f, static_cast<uint32_t>(e));
    for (real v : t.data) {
        const float fv = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &fv, 4);
        put_u32(f, bits);
    }
}

struct Record {
    std::string name;
    Tensor tensor;
};

Record get_record(std::ifstream& f, const std::string& path) {
    Record r;
    const uint32_t name_len = get_u32(f, path);
    if (name_len > 4096) throw IoError(path + ": implausible name length");
    r.name.resize(name_len);
    if (!f.read(r.name.data(), name_len)) throw IoError(path + ": truncated checkpoint");
    const uint32_t rank = get_u32(f, path);
    if (rank > 8) throw IoError(path + ": implausible tensor rank");
    std::vector<int> shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(get_u32(f, path)));
    r.tensor = Tensor(shape);
    for (auto& v : r.tensor.data) {
        const uint32_t bits = get_u32(f, path);
        float fv;
        std::memcpy(&fv, &bits, 4);
        v = static_cast<real>(fv);
    }
    return r;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(kMagic, 5);
    uint32_t count = static_cast<uint32_t>(params.all().size());
    for (const auto& [block, state] : params.bn_all())
        if (state.initialized) count += 2;
    put_u32(f, count);
    for (const auto& [name, p] : params.all()) put_record(f, name, p.value);
    for (const auto& [block, state] : params.bn_all()) {
        if (!state.initialized) continue;
        put_record(f, "state:" + block + ".running_mean", state.running_mean);
        put_record(f, "state:" + block + ".running_var", state.running_var);
    }
    if (!f) throw IoError("short write to checkpoint " + path);
}

void load_checkpoint(ModelParams& params, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    char magic[5];
    if (!f.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
        throw IoError(path + ": not a CFMN1 checkpoint");
    const uint32_t count = get_u32(f, path);

    for (auto& [block, state] : params.bn_all()) state.initialized = false;
    size_t params_seen = 0;
    for (uint32_t i = 0; i < count; ++i) {
        Record r = get_record(f, path);
        if (r.name.rfind("state:", 0) == 0) {
            std::string rest = r.name.substr(6);
            bool is_mean = false;
            std::string block;
            if (rest.size() > 13 && rest.rfind(".running_mean") == rest.size() - 13) {
                is_mean = true;
                block = rest.substr(0, rest.size() - 13);
            } else if (rest.size() > 12 && rest.rfind(".running_var") == rest.size() - 12) {
                block = rest.substr(0, rest.size() - 12);
            } else {
                throw ConfigError(path + ": unknown state record '" + r.name + "'");
            }
            BatchNormState& state = params.bn(block);
            Tensor& dst = is_mean ? state.running_mean : state.running_var;
            if (!dst.same_shape(r.tensor))
                throw ConfigError(path + ": state '" + r.name + "' has shape " +
                                  r.tensor.shape_str() + ", model expects " + dst.shape_str());
            dst = std::move(r.tensor);
            state.initialized = true;
        } else {
            if (!params.has(r.name))
                throw ConfigError(path + ": checkpoint parameter '" + r.name +
                                  "' is not in the model");
            Parameter& p = params.at(r.name);
            if (!p.value.same_shape(r.tensor))
                throw ConfigError(path + ": parameter '" + r.name + "' has shape " +
                                  r.tensor.shape_str() + ", model expects " +
                                  p.value.shape_str());
            p.value = std::move(r.tensor);
            ++params_seen;
        }
    }
    if (params_seen != params.all().size())
        throw ConfigError(path + ": checkpoint holds " + std::to_string(params_seen) +
                          " parameters, model has " + std::to_string(params.all().size()));
}

ParamSnapshot snapshot(const ModelParams& params) {
    ParamSnapshot s;
    for (const auto& [name, p] : params.all()) s.values.emplace(name, p.value);
    s.bn.insert(params.bn_all().begin(), params.bn_all().end());
    return s;
}

void restore(ModelParams& params, const ParamSnapshot& snap) {
    if (snap.empty()) throw ConfigError("restore: empty snapshot");
    for (auto& [name, p] : params.all()) {
        auto it = snap.values.find(name);
        if (it == snap.values.end()) throw ConfigError("restore: snapshot misses " + name);
        p.value = it->second;
    }
    for (auto& [block, state] : params.bn_all()) {
        auto it = snap.bn.find(block);
        if (it == snap.bn.end()) throw ConfigError("restore: snapshot misses bn state " + block);
        state = it->second;
    }
}

}  // namespace cfmn
