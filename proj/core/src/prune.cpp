#include "clp/prune.hpp"

#include <string>

namespace clp {

namespace {

// Splits "layers.<idx>.<rest>" into its index and rest; returns false for
// non-layer parameter names.
bool parse_layer_param(const std::string& name, int* idx, std::string* rest) {
    constexpr const char* kPrefix = "layers.";
    if (name.rfind(kPrefix, 0) != 0) return false;
    size_t dot = name.find('.', 7);
    if (dot == std::string::npos) return false;
    *idx = std::stoi(name.substr(7, dot - 7));
    *rest = name.substr(dot + 1);
    return true;
}

}  // namespace

std::pair<TransformerLM, PrunedMeta> prune_window(const TransformerLM& model,
                                                  const PruneWindow& w) {
    int L = model.num_layers();
    if (w.start < 0 || w.length < 0 || w.start + w.length > L) {
        throw ConfigError("prune: window [" + std::to_string(w.start) + ", " +
                          std::to_string(w.start + w.length) + ") outside " +
                          std::to_string(L) + " layers");
    }
    int remaining = L - w.length;
    if (remaining < 2) {
        throw ConfigError("prune: removing " + std::to_string(w.length) + " of " +
                          std::to_string(L) + " layers leaves fewer than 2");
    }

    PrunedMeta meta;
    meta.parent_checksum = model.values_checksum();
    meta.window = w;
    meta.resulting_layers = remaining;
    if (w.length > 0) {
        if (w.start > 0) meta.prev_layer = w.start - 1;
        if (w.start + w.length < L) meta.next_layer = w.start + w.length;
    }

    ModelSpec child_spec = model.spec();
    child_spec.num_layers = remaining;
    TransformerLM child = TransformerLM::with_zeros(child_spec);
    if (model.has_adapters()) child.add_adapters(model.adapter_rank(), 0);

    for (const NamedParam& p : model.params()) {
        int idx = 0;
        std::string rest;
        if (!parse_layer_param(p.name, &idx, &rest)) {
            child.param_mut(p.name) = p.tensor.clone();
            continue;
        }
        if (idx >= w.start && idx < w.start + w.length) continue;  // excised
        int new_idx = idx < w.start ? idx : idx - w.length;
        child.param_mut("layers." + std::to_string(new_idx) + "." + rest) = p.tensor.clone();
    }
    return {std::move(child), meta};
}

}  // namespace clp
