#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "dstu/params.hpp"

namespace dstu {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "DSTU", version u32, count u32, then per parameter: name length u32,
/// name bytes, rank u32, extents u32[rank], float32 values. Little-endian.
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store);
/// Loads values by name. Every parameter of `store` must be present with an
/// identical shape; otherwise throws CheckpointError naming the parameter.
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, ParamStore& store);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

/// Rounds every parameter to float32, the precision a checkpoint stores.
void round_to_checkpoint_precision(ParamStore& store);

}  // namespace dstu
