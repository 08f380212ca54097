#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>

#include "meshtex/mesh.hpp"

namespace meshtex {

// Reads `v x y z` and triangular `f i j k` records (1-based; `i/t/n` forms
// keep the position index). Comments and blank lines are skipped; other
// record types are ignored with a warning. Throws ParseError on malformed
// lines and TopologyError when the result is not a closed oriented manifold.
Mesh load_obj(const std::filesystem::path& path);
Mesh read_obj(std::istream& in, const std::string& source_name = "<stream>");

// Vertices then faces, in index order, positions with 9 significant digits.
void write_obj(std::ostream& out, const Mesh& mesh);
// Writes through a temporary file and renames it into place.
void save_obj(const std::filesystem::path& path, const Mesh& mesh);

// Temp-file + rename write used by every file the tools emit.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace meshtex
