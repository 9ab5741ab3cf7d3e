#pragma once

#include <string>

#include "owvis/model.hpp"

namespace owvis {

// Binary model file: magic "OWCK", version, tensor table (name, rank, dims,
// little-endian 32-bit float data), then the effective config echo and the
// vocabulary. Saving from the 32-bit precision mode and loading back is a
// bitwise identity on every parameter.
void save_checkpoint(const std::string& path, const Model& model);

// Rebuilds the model from the stored config (the global precision mode is
// set from it) and overwrites every parameter with the stored values. The
// stored tensor names and shapes must match the architecture the config
// implies exactly.
// Errors (DataError): "missing-file", "bad-magic", "bad-version",
// "truncated-file", "bad-checkpoint".
Model load_checkpoint(const std::string& path);

}  // namespace owvis
