#pragma once

#include <cstdint>
#include <string>

#include "miml/model.hpp"

namespace miml {

struct Checkpoint {
  ModelConfig config;
  std::uint64_t vocab_hash = 0;
  Parameters params;
};

// Versioned binary container; round-trips parameters bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
// Load and reject a vocabulary mismatch.
Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_vocab_hash);

}  // namespace miml
