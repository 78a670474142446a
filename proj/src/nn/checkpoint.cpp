#include "deid/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace deid::nn {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'I', 'D', 'N', 'N', 'C', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw CheckpointError("truncated checkpoint: " + path);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(params.count()));
  for (const Param& p : params) {
    write_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(os, static_cast<uint32_t>(p.shape.size()));
    for (int d : p.shape) write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("write failed: " + path);
}

std::vector<CheckpointBlock> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path);
  }
  const uint32_t version = read_u32(is, path);
  if (version != kVersion) {
    throw CheckpointError(cat("unsupported checkpoint version ", version, ": ", path));
  }
  const uint32_t count = read_u32(is, path);
  std::vector<CheckpointBlock> blocks;
  blocks.reserve(count);
  for (uint32_t b = 0; b < count; ++b) {
    CheckpointBlock block;
    const uint32_t name_len = read_u32(is, path);
    block.name.resize(name_len);
    if (!is.read(block.name.data(), name_len)) throw CheckpointError("truncated checkpoint: " + path);
    const uint32_t ndims = read_u32(is, path);
    size_t n = 1;
    for (uint32_t d = 0; d < ndims; ++d) {
      const uint32_t dim = read_u32(is, path);
      block.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    block.data.resize(n);
    if (!is.read(reinterpret_cast<char*>(block.data.data()),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
      throw CheckpointError("truncated checkpoint: " + path);
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

void load_into(ParamSet& params, const std::vector<CheckpointBlock>& blocks) {
  for (Param& p : params) {
    const CheckpointBlock* found = nullptr;
    for (const auto& b : blocks) {
      if (b.name == p.name) {
        found = &b;
        break;
      }
    }
    if (!found) throw CheckpointError("checkpoint is missing block '" + p.name + "'");
    if (found->shape != p.shape || found->data.size() != p.size()) {
      throw CheckpointError("checkpoint shape mismatch for block '" + p.name + "'");
    }
    p.value = found->data;
  }
}

}  // namespace deid::nn
