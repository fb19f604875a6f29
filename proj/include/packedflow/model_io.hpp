#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "packedflow/packed_net.hpp"

namespace packedflow {

// A trained network as persisted on disk. The byte layout is documented in
// docs/model_format.md.
struct ModelFile {
  PackedSpec spec;
  std::vector<LayerPlan> plans;
  Params params;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> encode_model(const PackedSpec& spec, const Params& params);
ModelFile decode_model(std::span<const std::uint8_t> bytes);

void save_model(const std::filesystem::path& path, const PackedSpec& spec, const Params& params);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace packedflow
