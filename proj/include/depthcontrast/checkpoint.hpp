#pragma once

#include <filesystem>

#include "depthcontrast/model.hpp"

namespace dc {

/// Binary parameter checkpoint:
///   "DCKP" | u32 version | u32 scalar bits (32/64) | u32 n + n bytes of
///   UTF-8 JSON config snapshot | u32 tensor count | per tensor:
///   u32 name length, name, u32 rank, rank x u32 dims, payload.
/// All integers and payload values are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
struct Checkpoint {
  ModelParams<Scalar> params;
  nlohmann::ordered_json snapshot;  // always holds "model" and "seed"
  std::uint32_t scalar_bits = 0;    // width stored in the file
};

/// `extra` keys are merged into the snapshot next to "model" and "seed".
template <typename Scalar>
std::string encode_checkpoint(const ModelParams<Scalar>& params, const nlohmann::ordered_json& extra = {});
template <typename Scalar>
void write_checkpoint(const std::filesystem::path& path, const ModelParams<Scalar>& params,
                      const nlohmann::ordered_json& extra = {});

/// Payloads of either width are converted to Scalar.
template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint");
template <typename Scalar>
Checkpoint<Scalar> read_checkpoint(const std::filesystem::path& path);

/// Copies every tensor of `from` into `into`; names and shapes must agree.
template <typename Scalar>
void load_weights(ModelParams<Scalar>& into, const ModelParams<Scalar>& from);

}  // namespace dc
