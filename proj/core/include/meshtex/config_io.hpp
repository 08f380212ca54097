#pragma once

// FitConfig / TrainConfig <-> key-value sections. Keys are the field names.

#include <string>

#include "meshtex/gan.hpp"
#include "meshtex/kv_file.hpp"
#include "meshtex/remesh.hpp"

namespace meshtex {

void store_fit_config(KeyValueFile& file, const std::string& section, const FitConfig& config);
// Keys present in `section` override `base`; unknown keys throw ValidationError.
FitConfig read_fit_config(const KeyValueFile& file, const std::string& section, FitConfig base = {});

void store_train_config(KeyValueFile& file, const std::string& section, const TrainConfig& config);
TrainConfig read_train_config(const KeyValueFile& file, const std::string& section, TrainConfig base = {});

}  // namespace meshtex
