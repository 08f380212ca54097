#include "meshtex/obj_io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "meshtex/errors.hpp"

namespace meshtex {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

double parse_double(std::string_view token, const std::string& where) {
  double value = 0.0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ParseError(fmt::format("{}: bad number '{}'", where, token));
  return value;
}

long parse_index(std::string_view token, const std::string& where) {
  const std::string_view head = token.substr(0, token.find('/'));
  long value = 0;
  const char* end = head.data() + head.size();
  auto [ptr, ec] = std::from_chars(head.data(), end, value);
  if (ec != std::errc() || ptr != end || head.empty()) {
    throw ParseError(fmt::format("{}: bad face index '{}'", where, token));
  }
  return value;
}

}  // namespace

Mesh read_obj(std::istream& in, const std::string& source_name) {
  std::vector<Vec3> vertices;
  std::vector<std::array<long, 3>> raw_faces;
  std::set<std::string, std::less<>> warned;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    std::string_view body(line.data(), hash == std::string::npos ? line.size() : hash);
    const auto tokens = split_ws(body);
    if (tokens.empty()) continue;
    const std::string where = fmt::format("{}:{}", source_name, line_no);
    if (tokens[0] == "v") {
      if (tokens.size() < 4 || tokens.size() > 5) throw ParseError(where + ": vertex needs 3 coordinates");
      vertices.push_back({parse_double(tokens[1], where), parse_double(tokens[2], where),
                          parse_double(tokens[3], where)});
    } else if (tokens[0] == "f") {
      if (tokens.size() != 4) {
        throw TopologyError(fmt::format("{}: face with {} vertices; only triangles are supported", where,
                                        tokens.size() - 1));
      }
      raw_faces.push_back({parse_index(tokens[1], where), parse_index(tokens[2], where),
                           parse_index(tokens[3], where)});
    } else if (warned.emplace(tokens[0]).second) {
      spdlog::warn("{}: ignoring unsupported OBJ record '{}'", where, tokens[0]);
    }
  }

  std::vector<Face> faces;
  faces.reserve(raw_faces.size());
  for (std::size_t f = 0; f < raw_faces.size(); ++f) {
    Face face{};
    for (int k = 0; k < 3; ++k) {
      const long idx = raw_faces[f][k];
      if (idx < 1 || idx > static_cast<long>(vertices.size())) {
        throw TopologyError(fmt::format("{}: face {} index {} out of range 1..{}", source_name, f, idx,
                                        vertices.size()));
      }
      face[k] = static_cast<Index>(idx - 1);
    }
    faces.push_back(face);
  }
  return Mesh(std::move(vertices), std::move(faces));
}

Mesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()));
  return read_obj(in, path.string());
}

void write_obj(std::ostream& out, const Mesh& mesh) {
  std::string buffer;
  auto it = std::back_inserter(buffer);
  for (const Vec3& v : mesh.vertices()) fmt::format_to(it, "v {:.9g} {:.9g} {:.9g}\n", v.x, v.y, v.z);
  for (const Face& f : mesh.faces()) fmt::format_to(it, "f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1);
  out << buffer;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ParseError(fmt::format("short write to '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

void save_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ostringstream out;
  write_obj(out, mesh);
  write_file_atomic(path, out.str());
}

}  // namespace meshtex
