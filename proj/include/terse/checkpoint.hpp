#pragma once

#include <string>
#include <vector>

#include "terse/nets.hpp"
#include "terse/tensor.hpp"

namespace terse {

// Versioned binary container: magic "TERSEckpt", u32 version, u8 net kind,
// u32 entry count, then per entry a length-prefixed name, a u32 dim-count
// shape preamble and the raw little-endian f32 payload. Round trips are
// bit-exact.
void save_checkpoint(const std::string& path, NetKind kind,
                     const std::vector<NamedTensor<float>>& tensors);

// Loads into the given tensors; every name must be present with a matching
// shape, extra entries in the file are an error.
void load_checkpoint(const std::string& path, NetKind expected_kind,
                     const std::vector<NamedTensor<float>>& tensors);

NetKind peek_checkpoint_kind(const std::string& path);

}  // namespace terse
