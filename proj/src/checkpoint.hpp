#pragma once

#include "model.hpp"

namespace cfmn {

// Sectioned binary format: magic "CFMN1", u32 record count, then records of
// (u32 name length, name bytes, u32 rank, u32 extents, little-endian f32
// data). Parameters come first in name order, then batch-norm running
// statistics under reserved "state:" names. save(load(f)) is byte-exact.
void save_checkpoint(const ModelParams& params, const std::string& path);
void load_checkpoint(ModelParams& params, const std::string& path);

// In-memory copy of values + batch-norm state; restoring is bit-identical
// regardless of the element type of the build.
struct ParamSnapshot {
    std::map<std::string, Tensor> values;
    std::map<std::string, BatchNormState> bn;
    bool empty() const { return values.empty(); }
};

ParamSnapshot snapshot(const ModelParams& params);
void restore(ModelParams& params, const ParamSnapshot& snap);

}  // namespace cfmn
