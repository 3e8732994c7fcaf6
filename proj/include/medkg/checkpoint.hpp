#pragma once

// Parameter persistence: every named parameter is written as a binary block
// `name | rows | cols | row-major float64`, little-endian, with a text index
// sidecar listing `name<TAB>rows<TAB>cols` per line for inspection.

#include <string>

#include "medkg/tensor.hpp"

namespace medkg {

void save_checkpoint(const ag::ParamStore& store, const std::string& path);

// Overwrites the values of an already-constructed store. The file must carry
// exactly the store's parameter names with matching shapes.
void load_checkpoint(ag::ParamStore& store, const std::string& path);

std::string checkpoint_index_path(const std::string& path);

}  // namespace medkg
