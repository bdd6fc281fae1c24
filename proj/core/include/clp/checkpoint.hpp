#pragma once

#include <optional>
#include <string>

#include "clp/model.hpp"
#include "clp/prune.hpp"

namespace clp {

// Sidecar metadata stored in the checkpoint header alongside the tensor
// manifest.
struct CheckpointInfo {
    std::string config_hash;  // fingerprint of the producing configuration
    std::optional<PrunedMeta> pruned;
};

// On-disk format: magic "CLPCKPT1", a little-endian u64 header length, a
// canonical JSON header (spec, dtype, manifest of name/dtype/shape/offset,
// blob checksum, info above), then the raw little-endian value blobs in
// registry order. save(load(f)) reproduces f byte for byte.
void save_checkpoint(const std::string& path, const TransformerLM& model,
                     const CheckpointInfo& info);

TransformerLM load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

}  // namespace clp
