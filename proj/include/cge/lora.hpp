#pragma once

#include "cge/model.hpp"

namespace cge {

// Attaches low-rank adapter pairs to the attention q/k/v/o projections.
// Base weights freeze; the adapter buffer becomes the trainable set.
// A is initialized small-random from seed, B zero, so the forward function
// is unchanged until training moves B.
void lora_attach(Model& m, const LoraConfig& cfg, uint64_t seed);

// Folds the adapter deltas into the base weights and removes the adapters.
void lora_merge(Model& m);

} // namespace cge
