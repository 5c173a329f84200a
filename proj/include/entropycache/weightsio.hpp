#pragma once

#include "entropycache/model.hpp"

#include <filesystem>

namespace entropycache {

// Container format "ECW1"; the byte layout is documented in
// docs/weights_format.md. Tensors are raw little-endian float32, guarded by
// a 64-bit FNV-1a checksum over the payload.

/// Serializes weights atomically (temp file, then rename).
/// Throws EngineError("WriteFailed") on any I/O failure.
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);

/// Reads a weights file back, verifying magic, size and checksum.
/// Throws EngineError codes NotAWeightsFile, Truncated, ChecksumMismatch.
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace entropycache
