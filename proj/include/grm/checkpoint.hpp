#pragma once

// Binary checkpoint:
//   bytes 0..3   magic "GRMC"
//   u32 LE       format version (1)
//   u64 LE       length L of the architecture JSON
//   L bytes      architecture JSON (UTF-8)
//   f64 LE ...   per layer: weight (row-major, fan_in x fan_out), then bias

#include "grm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace grm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<unsigned char> checkpoint_bytes(const ModelParams& params);
ModelParams parse_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace grm
