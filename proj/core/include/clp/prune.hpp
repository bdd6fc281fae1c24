#pragma once

#include <optional>
#include <utility>

#include "clp/gate.hpp"
#include "clp/model.hpp"

namespace clp {

// Provenance of a structural excision. Layer indices are in the PARENT
// model's numbering; endpoints are absent when the window touches the
// corresponding boundary.
struct PrunedMeta {
    uint64_t parent_checksum = 0;
    PruneWindow window;
    int resulting_layers = 0;
    std::optional<int> prev_layer;  // start - 1
    std::optional<int> next_layer;  // start + length

    bool operator==(const PrunedMeta&) const = default;
};

// Removes layers [start, start+length), reindexing the survivors
// contiguously. Surviving parameters (embeddings, head, norms, remaining
// layers, adapters) are copied bit-identically; position embeddings are not
// touched (layers are removed, not positions). An empty window returns an
// identical copy.
std::pair<TransformerLM, PrunedMeta> prune_window(const TransformerLM& model,
                                                  const PruneWindow& w);

}  // namespace clp
