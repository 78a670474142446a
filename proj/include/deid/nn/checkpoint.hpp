#pragma once

#include "deid/nn/core.hpp"

namespace deid::nn {

struct CheckpointBlock {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Binary container: magic "DEIDNNC1", u32 version, u32 block count, then per
// block u32 name length + bytes, u32 ndims, u32 dims[], float64 payload.
void save_checkpoint(const std::string& path, const ParamSet& params);
std::vector<CheckpointBlock> load_checkpoint(const std::string& path);

// shape-checked, by name; every parameter in the set must be present
void load_into(ParamSet& params, const std::vector<CheckpointBlock>& blocks);

}  // namespace deid::nn
