#include "meshtex_cli/app.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "meshtex/autodiff.hpp"
#include "meshtex/checkpoint.hpp"
#include "meshtex/config_io.hpp"
#include "meshtex/errors.hpp"
#include "meshtex/gan.hpp"
#include "meshtex/kv_file.hpp"
#include "meshtex/obj_io.hpp"
#include "meshtex/remesh.hpp"
#include "meshtex/shapes.hpp"
#include "meshtex/subdivision.hpp"
#include "meshtex/synthesis.hpp"

namespace meshtex::cli {

namespace fs = std::filesystem;

namespace {

// Everything that determines a command's outputs. Filled from defaults, then
// the --config file, then flags.
struct RunSpec {
  std::string command;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out;
  std::string log_csv;
  std::string template_spec = "icosahedron";
  int levels = 0;  // 0: command default
  int start_level = 2;
  int steps = 5;
  std::optional<std::uint64_t> seed_b;
  std::vector<std::string> inputs;
  FitConfig fit;
  TrainConfig train;
};

struct CommandResult {
  std::vector<std::string> outputs;  // relative to --out
  KeyValueFile metrics;              // section "metrics"
};

const std::set<std::string> kConfigSections{"", "run", "fit", "train", "outputs", "metrics", "environment"};
const std::set<std::string> kRunKeys{"command", "seed",        "deterministic", "out",   "log_csv", "template",
                                     "levels",  "start_level", "steps",         "seed_b"};

int checked_int(std::int64_t v, const std::string& key) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ValidationError(fmt::format("{} is out of range", key));
  }
  return static_cast<int>(v);
}

void apply_config_file(RunSpec& spec, const fs::path& path) {
  const KeyValueFile kv = KeyValueFile::load(path);
  std::map<std::size_t, std::string> inputs;
  for (const auto& [section, entries] : kv.sections()) {
    if (!kConfigSections.contains(section)) {
      throw ValidationError(fmt::format("{}: unknown section [{}]", path.string(), section));
    }
    if (section != "run") continue;
    for (const auto& [key, value] : entries) {
      if (key.starts_with("input_")) {
        std::size_t index = 0;
        try {
          index = std::stoul(key.substr(6));
        } catch (const std::exception&) {
          throw ValidationError(fmt::format("{}: bad input key '{}'", path.string(), key));
        }
        inputs[index] = value;
      } else if (!kRunKeys.contains(key)) {
        throw ValidationError(fmt::format("{}: unknown key '{}' in [run]", path.string(), key));
      }
    }
  }
  if (auto c = kv.get("run", "command"); c && *c != spec.command) {
    throw ValidationError(fmt::format("{} was written by '{}', not '{}'", path.string(), *c, spec.command));
  }
  if (kv.get("run", "seed")) spec.seed = kv.require_uint("run", "seed");
  if (kv.get("run", "seed_b")) spec.seed_b = kv.require_uint("run", "seed_b");
  if (kv.get("run", "deterministic")) spec.deterministic = kv.require_bool("run", "deterministic");
  if (auto v = kv.get("run", "out")) spec.out = *v;
  if (auto v = kv.get("run", "log_csv")) spec.log_csv = *v;
  if (auto v = kv.get("run", "template")) spec.template_spec = *v;
  if (kv.get("run", "levels")) spec.levels = checked_int(kv.require_int("run", "levels"), "levels");
  if (kv.get("run", "start_level")) spec.start_level = checked_int(kv.require_int("run", "start_level"), "start_level");
  if (kv.get("run", "steps")) spec.steps = checked_int(kv.require_int("run", "steps"), "steps");
  if (!inputs.empty()) {
    spec.inputs.clear();
    for (const auto& [index, value] : inputs) {
      if (index != spec.inputs.size()) throw ValidationError(fmt::format("{}: input keys are not contiguous", path.string()));
      spec.inputs.push_back(value);
    }
  }
  spec.fit = read_fit_config(kv, "fit", spec.fit);
  spec.train = read_train_config(kv, "train", spec.train);
}

KeyValueFile manifest_for(const RunSpec& spec) {
  KeyValueFile m;
  m.set("run", "command", spec.command);
  m.set("run", "seed", spec.seed);
  m.set("run", "deterministic", spec.deterministic);
  if (!spec.out.empty()) m.set("run", "out", fs::absolute(spec.out).lexically_normal().string());
  if (!spec.log_csv.empty()) m.set("run", "log_csv", fs::absolute(spec.log_csv).lexically_normal().string());
  for (std::size_t i = 0; i < spec.inputs.size(); ++i) {
    m.set("run", fmt::format("input_{}", i), fs::absolute(spec.inputs[i]).lexically_normal().string());
  }
  if (spec.command == "remesh") {
    m.set("run", "template", spec.template_spec);
    m.set("run", "levels", spec.fit.levels);
    store_fit_config(m, "fit", spec.fit);
  } else if (spec.command == "train") {
    m.set("run", "levels", spec.levels);
    store_train_config(m, "train", spec.train);
  } else if (spec.command == "synthesize" || spec.command == "interpolate") {
    m.set("run", "levels", spec.levels);
    m.set("run", "start_level", spec.start_level);
    if (spec.command == "interpolate") {
      m.set("run", "seed_b", spec.seed_b.value_or(spec.seed + 1));
      m.set("run", "steps", spec.steps);
    }
  } else if (spec.command == "subdivide") {
    m.set("run", "levels", spec.levels);
  }
  return m;
}

void write_manifest(const RunSpec& spec, const CommandResult& result, double wall_seconds) {
  KeyValueFile m = manifest_for(spec);
  std::string files;
  for (const auto& f : result.outputs) files += (files.empty() ? "" : ",") + f;
  m.set("outputs", "files", files);
  m.set("metrics", "wall_time_s", wall_seconds);
  for (const auto& [section, entries] : result.metrics.sections()) {
    for (const auto& [key, value] : entries) m.set("metrics", key, value);
  }
  m.set("environment", "threads", ad::num_threads());
  m.save(fs::path(spec.out) / kRunManifestName);
}

const std::string& input(const RunSpec& spec, std::size_t i, const char* what) {
  if (spec.inputs.size() <= i) throw ValidationError(fmt::format("{}: missing {}", spec.command, what));
  return spec.inputs[i];
}

fs::path require_out(const RunSpec& spec) {
  if (spec.out.empty()) throw ValidationError(fmt::format("{}: --out is required", spec.command));
  fs::create_directories(spec.out);
  return spec.out;
}

Mesh template_mesh(const std::string& spec) {
  if (spec == "icosahedron") return shapes::icosahedron();
  if (spec == "torus") return shapes::torus(1.0, 0.4, 12, 6);
  if (spec.starts_with("obj:")) return load_obj(spec.substr(4));
  throw ValidationError(fmt::format("unknown template '{}' (icosahedron, torus or obj:PATH)", spec));
}

// CSV with a header row; rows are flushed as they arrive.
class CsvLog {
 public:
  CsvLog(const std::string& path, const std::string& header) {
    if (path.empty()) return;
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    file_.open(path, std::ios::trunc);
    if (!file_) throw ValidationError(fmt::format("cannot write {}", path));
    file_ << header << '\n';
  }
  void row(std::initializer_list<std::string> cells) {
    if (!file_.is_open()) return;
    bool first = true;
    for (const auto& c : cells) {
      file_ << (first ? "" : ",") << c;
      first = false;
    }
    file_ << '\n';
  }

 private:
  std::ofstream file_;
};

std::string num(double v) { return format_double(v); }
std::string num(std::int64_t v) { return std::to_string(v); }

CommandResult cmd_remesh(RunSpec& spec, std::ostream& out) {
  const Mesh reference = load_obj(input(spec, 0, "reference mesh"));
  const fs::path dir = require_out(spec);
  if (spec.levels > 0) spec.fit.levels = spec.levels;
  spec.fit.validate();
  CsvLog log(spec.log_csv, "level,iter,loss,chamfer,normal,uniform,smooth");
  const auto sink = [&](int level, const FitLogEntry& e) {
    log.row({num(std::int64_t{level}), num(std::int64_t{e.iter}), num(e.loss), num(e.chamfer), num(e.normal),
             num(e.uniform), num(e.smooth)});
  };
  const MultiscalePyramid pyramid = build_multiscale(template_mesh(spec.template_spec), reference, spec.fit.levels,
                                                     spec.fit, spec.seed, spec.template_spec, sink);
  save_pyramid(dir, pyramid);
  CommandResult r;
  r.outputs.push_back("pyramid.manifest");
  r.outputs.push_back("template.obj");
  std::vector<double> chamfer;
  for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
    r.outputs.push_back(fmt::format("level_{}.obj", l));
    chamfer.push_back(pyramid.final_evaluations[l].chamfer.distance);
    out << fmt::format("level {}: {} faces, chamfer {:.6g}\n", l, pyramid.levels[l].num_faces(), chamfer.back());
  }
  r.metrics.set("", "final_chamfer", join_csv(chamfer));
  return r;
}

CommandResult cmd_train(RunSpec& spec, std::ostream& out) {
  MultiscalePyramid pyramid = load_pyramid(input(spec, 0, "pyramid directory"));
  const fs::path dir = require_out(spec);
  if (spec.levels < 0 || spec.levels > static_cast<int>(pyramid.levels.size())) {
    throw ValidationError(fmt::format("--levels {} but the pyramid has {}", spec.levels, pyramid.levels.size()));
  }
  if (spec.levels > 0) {
    pyramid.levels.erase(pyramid.levels.begin() + spec.levels, pyramid.levels.end());
    pyramid.final_evaluations.resize(std::min(pyramid.final_evaluations.size(), pyramid.levels.size()));
  }
  spec.train.seed = spec.seed;
  CsvLog log(spec.log_csv, "iter,level,d_loss,g_loss,gp,recon_mse");
  const auto sink = [&](const TrainLogRow& row) {
    log.row({num(std::int64_t{row.iter}), num(std::int64_t{row.level}), num(row.d_loss), num(row.g_loss), num(row.gp),
             num(row.recon_mse)});
  };
  const HierarchyResult trained = train_hierarchy(pyramid, spec.train, sink);
  const auto checkpoints = trained.checkpoints();
  save_checkpoints(dir, checkpoints, &spec.train);
  CommandResult r;
  std::vector<double> mse;
  for (const auto& level : trained.levels) {
    const int l = level.checkpoint.level;
    r.outputs.push_back(checkpoint_file("", l).string());
    r.outputs.push_back(checkpoint_manifest_path(checkpoint_file("", l)).string());
    mse.push_back(level.final_recon_mse);
    out << fmt::format("level {}: recon mse {:.6g}{}\n", l, level.final_recon_mse,
                       level.inherited ? " (inherited init)" : "");
  }
  r.metrics.set("", "final_recon_mse", join_csv(mse));
  return r;
}

std::vector<LevelCheckpoint> load_chain(const RunSpec& spec) {
  auto chain = load_checkpoints(input(spec, 0, "checkpoint directory"));
  if (spec.levels < 0 || spec.levels > static_cast<int>(chain.size())) {
    throw ValidationError(fmt::format("--levels {} but {} levels are trained", spec.levels, chain.size()));
  }
  if (spec.levels > 0) chain.erase(chain.begin() + spec.levels, chain.end());
  return chain;
}

void describe(std::ostream& out, const std::string& label, const Mesh& mesh) {
  const MeshStats s = mesh_stats(mesh);
  out << fmt::format("{}: {} vertices, {} faces, genus {}\n", label, s.vertices, s.faces, s.genus);
}

CommandResult cmd_synthesize(RunSpec& spec, std::ostream& out) {
  const auto chain = load_chain(spec);
  const Mesh target = load_obj(input(spec, 1, "target mesh"));
  const fs::path dir = require_out(spec);
  const Mesh result = synthesize(chain, target, spec.start_level, spec.seed);
  save_obj(dir / "synthesized.obj", result);
  describe(out, "synthesized.obj", result);
  CommandResult r;
  r.outputs.push_back("synthesized.obj");
  r.metrics.set("", "faces", static_cast<std::uint64_t>(result.num_faces()));
  r.metrics.set("", "genus", static_cast<std::int64_t>(mesh_stats(result).genus));
  return r;
}

CommandResult cmd_interpolate(RunSpec& spec, std::ostream& out) {
  const auto chain = load_chain(spec);
  const Mesh target = load_obj(input(spec, 1, "target mesh"));
  const fs::path dir = require_out(spec);
  if (!spec.seed_b) spec.seed_b = spec.seed + 1;
  const auto meshes = interpolate_latents(chain, target, spec.start_level, spec.seed, *spec.seed_b, spec.steps);
  CommandResult r;
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    const std::string name = fmt::format("interp_{:03}.obj", i);
    save_obj(dir / name, meshes[i]);
    r.outputs.push_back(name);
  }
  describe(out, fmt::format("{} frames", meshes.size()), meshes.front());
  return r;
}

CommandResult cmd_subdivide(RunSpec& spec, std::ostream& out) {
  Mesh mesh = load_obj(input(spec, 0, "mesh"));
  const fs::path dir = require_out(spec);
  if (spec.levels == 0) spec.levels = 1;
  if (spec.levels < 0) throw ValidationError("--levels must be positive");
  for (int i = 0; i < spec.levels; ++i) mesh = uniform_subdivide(mesh, false).mesh;
  save_obj(dir / "subdivided.obj", mesh);
  describe(out, "subdivided.obj", mesh);
  CommandResult r;
  r.outputs.push_back("subdivided.obj");
  r.metrics.set("", "faces", static_cast<std::uint64_t>(mesh.num_faces()));
  return r;
}

std::string stats_report(const Mesh& mesh) {
  const MeshStats s = mesh_stats(mesh);
  Vec3 lo = mesh.vertices().front(), hi = lo;
  for (const Vec3& p : mesh.vertices()) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  double area = 0.0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) area += face_area(mesh, static_cast<Index>(f));
  std::string report;
  report += fmt::format("vertices = {}\nedges = {}\nfaces = {}\n", s.vertices, s.edges, s.faces);
  report += fmt::format("euler_characteristic = {}\ngenus = {}\n", s.euler_characteristic, s.genus);
  report += fmt::format("mean_edge_length = {}\nsurface_area = {}\n", format_double(mean_edge_length(mesh)),
                        format_double(area));
  report += fmt::format("bbox_min = {},{},{}\nbbox_max = {},{},{}\n", format_double(lo.x), format_double(lo.y),
                        format_double(lo.z), format_double(hi.x), format_double(hi.y), format_double(hi.z));
  return report;
}

CommandResult cmd_stats(RunSpec& spec, std::ostream& out) {
  const std::string report = stats_report(load_obj(input(spec, 0, "mesh")));
  out << report;
  CommandResult r;
  if (!spec.out.empty()) {
    write_file_atomic(require_out(spec) / "stats.txt", report);
    r.outputs.push_back("stats.txt");
  }
  return r;
}

// Accepts a mesh, a checkpoint file or directory, a pyramid directory or a
// config/manifest file.
std::string validate_path(const fs::path& path) {
  if (fs::is_directory(path)) {
    if (fs::exists(path / "pyramid.manifest")) {
      const auto p = load_pyramid(path);
      return fmt::format("pyramid with {} levels", p.levels.size());
    }
    const auto chain = load_checkpoints(path);
    return fmt::format("checkpoint chain with {} levels", chain.size());
  }
  if (!fs::exists(path)) throw ValidationError(fmt::format("{} does not exist", path.string()));
  const std::string ext = path.extension().string();
  if (ext == ".obj") {
    const auto s = mesh_stats(load_obj(path));
    return fmt::format("closed manifold mesh, {} faces, genus {}", s.faces, s.genus);
  }
  if (ext == ".mtex") {
    const auto ck = load_checkpoint(path);
    return fmt::format("level {} checkpoint, {} vertices", ck.level, ck.num_vertices());
  }
  const KeyValueFile kv = KeyValueFile::load(path);
  for (const auto& [section, entries] : kv.sections()) {
    if (!kConfigSections.contains(section)) throw ValidationError(fmt::format("unknown section [{}]", section));
  }
  read_fit_config(kv, "fit").validate();
  read_train_config(kv, "train").validate();
  return "config";
}

CommandResult cmd_validate(RunSpec& spec, std::ostream& out) {
  const std::string& path = input(spec, 0, "path");
  const std::string what = validate_path(path);
  out << fmt::format("valid: {} ({})\n", path, what);
  CommandResult r;
  if (!spec.out.empty()) {
    write_file_atomic(require_out(spec) / "validate.txt", fmt::format("path = {}\nresult = {}\n", path, what));
    r.outputs.push_back("validate.txt");
  }
  return r;
}

using Handler = std::function<CommandResult(RunSpec&, std::ostream&)>;

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::uint64_t seed_b = 0;
  std::string out;
  std::string log_csv;
  std::string template_spec;
  int levels = 0;
  int start_level = 0;
  int steps = 0;
  std::vector<std::string> inputs;
};

struct Command {
  CLI::App* app = nullptr;
  Handler handler;
  std::map<std::string, CLI::Option*> options;
  CLI::Option* deterministic = nullptr;
};

int execute(const Command& cmd, const Flags& flags, std::ostream& out) {
  RunSpec spec;
  spec.command = cmd.app->get_name();
  if (cmd.options.at("config")->count()) apply_config_file(spec, flags.config);
  const auto given = [&](const char* name) {
    const auto it = cmd.options.find(name);
    return it != cmd.options.end() && it->second->count() > 0;
  };
  if (given("seed")) spec.seed = flags.seed;
  if (given("seed-b")) spec.seed_b = flags.seed_b;
  if (given("out")) spec.out = flags.out;
  if (given("log-csv")) spec.log_csv = flags.log_csv;
  if (given("template")) spec.template_spec = flags.template_spec;
  if (given("levels")) spec.levels = flags.levels;
  if (given("start-level")) spec.start_level = flags.start_level;
  if (given("steps")) spec.steps = flags.steps;
  if (given("inputs")) spec.inputs = flags.inputs;
  if (cmd.deterministic->count()) spec.deterministic = true;

  ad::configure_threads_from_env();
  if (spec.deterministic) ad::set_num_threads(1);

  const auto start = std::chrono::steady_clock::now();
  const CommandResult result = cmd.handler(spec, out);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!spec.out.empty()) write_manifest(spec, result, wall);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learn geometric texture from one mesh and transfer it to others."};
  app.name("meshtex");
  app.require_subcommand(1);

  Flags flags;
  std::vector<Command> commands;
  const auto add = [&](const char* name, const char* help, const std::vector<std::string>& positional,
                       std::set<std::string> extra, Handler handler) {
    Command cmd;
    cmd.app = app.add_subcommand(name, help);
    cmd.handler = std::move(handler);
    std::string input_names;
    for (const auto& p : positional) input_names += (input_names.empty() ? "" : " ") + p;
    cmd.options["inputs"] = cmd.app->add_option("inputs", flags.inputs, input_names)->expected(0, static_cast<int>(positional.size()));
    cmd.options["config"] = cmd.app->add_option("--config", flags.config, "key = value config or run.manifest to replay");
    cmd.options["seed"] = cmd.app->add_option("--seed", flags.seed, "random seed");
    cmd.deterministic = cmd.app->add_flag("--deterministic", "single-threaded, bitwise reproducible run");
    cmd.options["out"] = cmd.app->add_option("--out", flags.out, "output directory");
    if (extra.contains("levels")) cmd.options["levels"] = cmd.app->add_option("--levels", flags.levels, "number of levels");
    if (extra.contains("start-level")) {
      cmd.options["start-level"] = cmd.app->add_option("--start-level", flags.start_level, "first generator level (1-based)");
    }
    if (extra.contains("template")) {
      cmd.options["template"] = cmd.app->add_option("--template", flags.template_spec, "icosahedron, torus or obj:PATH");
    }
    if (extra.contains("log-csv")) cmd.options["log-csv"] = cmd.app->add_option("--log-csv", flags.log_csv, "per-iteration CSV log");
    if (extra.contains("steps")) cmd.options["steps"] = cmd.app->add_option("--steps", flags.steps, "number of frames");
    if (extra.contains("seed-b")) cmd.options["seed-b"] = cmd.app->add_option("--seed-b", flags.seed_b, "second noise seed");
    commands.push_back(std::move(cmd));
  };
  add("remesh", "fit a template to a reference mesh at every level", {"REFERENCE"}, {"levels", "template", "log-csv"},
      cmd_remesh);
  add("train", "train the generator hierarchy on a remeshed pyramid", {"PYRAMID_DIR"}, {"levels", "log-csv"}, cmd_train);
  add("synthesize", "transfer the learned texture onto a target mesh", {"CHECKPOINT_DIR", "TARGET"},
      {"levels", "start-level"}, cmd_synthesize);
  add("interpolate", "synthesize along a line between two noise seeds", {"CHECKPOINT_DIR", "TARGET"},
      {"levels", "start-level", "steps", "seed-b"}, cmd_interpolate);
  add("subdivide", "1-to-4 midpoint subdivision", {"MESH"}, {"levels"}, cmd_subdivide);
  add("validate", "check a mesh, config, pyramid or checkpoint directory", {"PATH"}, {}, cmd_validate);
  add("stats", "print mesh statistics", {"MESH"}, {}, cmd_stats);

  std::vector<std::string> argv_storage{"meshtex"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    for (const auto& cmd : commands) {
      if (cmd.app->parsed()) return execute(cmd, flags, out);
    }
    return kExitInternal;
  } catch (const DivergenceError& e) {
    err << "error: numeric divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace meshtex::cli
