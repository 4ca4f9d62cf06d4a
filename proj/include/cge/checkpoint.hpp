#pragma once

#include <string>

#include "cge/model.hpp"

namespace cge {

// Binary checkpoint: magic "CGELM\0", u32 format version, config block,
// vocab block, then named arrays (u32 name length, name bytes, u32 ndim,
// u32 dims, row-major little-endian f64). Adapters are not serialized;
// merge before saving.
void save_checkpoint(const Model& m, const std::string& path);

Model load_checkpoint(const std::string& path);

} // namespace cge
