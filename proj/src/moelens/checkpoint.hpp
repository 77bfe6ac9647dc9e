// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "moelens/model.hpp"

namespace moelens {

inline constexpr std::uint8_t kCheckpointVersion = 1;

// Binary layout (little endian), see docs/checkpoint-format.md:
//   u8 version | 8-byte magic "MOELENS\0" | u32 n_layers, n_experts, top_k,
//   d_model, d_ff, vocab_size | u64 seed | u32 len + nonlinearity name |
//   f32 matrices row-major: embed, per layer (gate, per expert (w1, w2)),
//   unembed.
void save_checkpoint(const MoEModel& model, std::ostream& out);
void save_checkpoint(const MoEModel& model, const std::string& path);

/// Throws Schema on an unknown version byte and Malformed on a bad magic,
/// truncation, trailing bytes or an unknown nonlinearity.
MoEModel load_checkpoint(std::istream& in);
MoEModel load_checkpoint(const std::string& path);

}  // namespace moelens
