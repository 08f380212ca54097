#include "meshtex/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "meshtex/config_io.hpp"
#include "meshtex/errors.hpp"
#include "meshtex/kv_file.hpp"
#include "meshtex/obj_io.hpp"

namespace meshtex {

using ad::Matrix;
using ad::Var;

namespace {

static_assert(std::numeric_limits<float>::is_iec559 && std::numeric_limits<double>::is_iec559);

template <typename U>
U to_little(U value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return value;
}

class Writer {
 public:
  void bytes(std::string_view b) { out_.append(b); }
  template <typename U>
  void scalar(U value) {
    const U le = to_little(value);
    out_.append(reinterpret_cast<const char*>(&le), sizeof(U));
  }
  void u32(std::size_t v) { scalar(static_cast<std::uint32_t>(v)); }
  void tensor(const Matrix<float>& m) {
    u32(m.rows());
    u32(m.cols());
    for (float x : m.data()) scalar(std::bit_cast<std::uint32_t>(x));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data, const std::string& name) : data_(data), name_(name) {}

  std::string_view bytes(std::size_t n) {
    if (data_.size() - pos_ < n) fail(fmt::format("truncated at byte {}", pos_));
    const auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename U>
  U scalar() {
    U v;
    std::memcpy(&v, bytes(sizeof(U)).data(), sizeof(U));
    return to_little(v);
  }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  Matrix<float> tensor() {
    const std::size_t rows = u32(), cols = u32();
    if (rows != 0 && cols > (data_.size() - pos_) / 4 / rows) fail("tensor larger than the file");
    Matrix<float> m(rows, cols);
    for (float& x : m.data()) x = std::bit_cast<float>(scalar<std::uint32_t>());
    return m;
  }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(fmt::format("{}: {}", name_, what)); }

 private:
  std::string_view data_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::vector<Var<float>> generator_tensors(const Generator<float>& g) {
  std::vector<Var<float>> out;
  for (const auto& layer : g.net().layers()) {
    for (auto& t : layer.tensors()) out.push_back(t);
  }
  out.push_back(g.output_scale());
  return out;
}

// Rebuilds the layer list from tensors in serialization order.
std::vector<LayerParams<float>> take_layers(std::vector<Matrix<float>>& tensors, std::size_t& next, int num_layers,
                                            const Reader& reader) {
  auto take = [&] {
    if (next >= tensors.size()) reader.fail("too few tensors for the layer schedule");
    return Var<float>::parameter(std::move(tensors[next++]));
  };
  std::vector<LayerParams<float>> layers;
  for (int l = 0; l < num_layers; ++l) {
    const bool head = l + 1 == num_layers;
    LayerParams<float> p;
    p.w_neighbors = take();
    if (l > 0) p.w_self = take();
    p.bias = take();
    if (!head) {
      p.norm_gain = take();
      p.norm_shift = take();
    }
    layers.push_back(std::move(p));
  }
  return layers;
}

}  // namespace

std::string serialize_checkpoint(const LevelCheckpoint& ck) {
  Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(static_cast<std::size_t>(ck.level));
  w.u32(static_cast<std::size_t>(ck.embed_dim));
  w.u32(static_cast<std::size_t>(ck.num_layers));
  w.u32(ck.fixed_noise.rows());
  w.scalar(std::bit_cast<std::uint64_t>(ck.noise_sigma));
  std::vector<Var<float>> tensors = generator_tensors(ck.generator);
  for (auto& t : ck.discriminator.parameters()) tensors.push_back(t);
  w.u32(tensors.size() + 1);
  for (const auto& t : tensors) w.tensor(t.value());
  w.tensor(ck.fixed_noise);
  w.u32(ck.rng_state.size());
  w.bytes(ck.rng_state);
  return w.take();
}

LevelCheckpoint deserialize_checkpoint(std::string_view bytes, const std::string& source_name) {
  Reader r(bytes, source_name);
  if (bytes.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    r.fail("not a checkpoint (bad magic)");
  }
  LevelCheckpoint ck;
  ck.level = static_cast<int>(r.u32());
  ck.embed_dim = static_cast<int>(r.u32());
  ck.num_layers = static_cast<int>(r.u32());
  const std::size_t num_vertices = r.u32();
  ck.noise_sigma = std::bit_cast<double>(r.scalar<std::uint64_t>());
  if (ck.num_layers < 2 || ck.embed_dim <= 0) r.fail("invalid header");
  const std::size_t count = r.u32();
  if (count > bytes.size()) r.fail("invalid tensor count");
  std::vector<Matrix<float>> tensors;
  tensors.reserve(count);
  for (std::size_t i = 0; i < count; ++i) tensors.push_back(r.tensor());

  std::size_t next = 0;
  try {
    auto g_layers = take_layers(tensors, next, ck.num_layers, r);
    if (next >= tensors.size()) r.fail("missing generator output scale");
    Var<float> scale = Var<float>::parameter(std::move(tensors[next++]));
    ck.generator = Generator<float>(FaceConvNet<float>({ck.num_layers, ck.embed_dim, 3}, std::move(g_layers)),
                                    std::move(scale));
    auto d_layers = take_layers(tensors, next, ck.num_layers, r);
    ck.discriminator = Discriminator<float>(FaceConvNet<float>({ck.num_layers, ck.embed_dim, 1}, std::move(d_layers)));
  } catch (const ShapeError& e) {
    r.fail(e.what());
  }
  if (next + 1 != tensors.size()) r.fail(fmt::format("expected {} tensors, found {}", next + 1, tensors.size()));
  ck.fixed_noise = std::move(tensors[next]);
  if (ck.fixed_noise.rows() != num_vertices || ck.fixed_noise.cols() != 3) r.fail("noise tensor shape mismatch");
  const std::size_t state_size = r.u32();
  ck.rng_state = std::string(r.bytes(state_size));
  if (!r.done()) r.fail("trailing bytes");
  return ck;
}

std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& file) {
  return std::filesystem::path(file.string() + ".manifest");
}

void save_checkpoint(const std::filesystem::path& file, const LevelCheckpoint& ck, const TrainConfig* config) {
  write_file_atomic(file, serialize_checkpoint(ck));
  KeyValueFile m;
  m.set("", "format", std::string(kCheckpointMagic));
  m.set("", "level", ck.level);
  m.set("", "embed_dim", ck.embed_dim);
  m.set("", "num_layers", ck.num_layers);
  m.set("", "num_vertices", static_cast<std::uint64_t>(ck.num_vertices()));
  m.set("", "noise_sigma", ck.noise_sigma);
  if (config) store_train_config(m, "train", *config);
  m.save(checkpoint_manifest_path(file));
}

LevelCheckpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open checkpoint {}", file.string()));
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, file.string());
}

std::filesystem::path checkpoint_file(const std::filesystem::path& dir, int level) {
  return dir / fmt::format("level_{}.mtex", level);
}

void save_checkpoints(const std::filesystem::path& dir, const std::vector<LevelCheckpoint>& checkpoints,
                      const TrainConfig* config) {
  std::filesystem::create_directories(dir);
  for (const auto& ck : checkpoints) save_checkpoint(checkpoint_file(dir, ck.level), ck, config);
}

std::vector<LevelCheckpoint> load_checkpoints(const std::filesystem::path& dir) {
  std::vector<LevelCheckpoint> out;
  for (int level = 0; std::filesystem::exists(checkpoint_file(dir, level)); ++level) {
    out.push_back(load_checkpoint(checkpoint_file(dir, level)));
  }
  if (out.empty()) throw ValidationError(fmt::format("no checkpoints (level_0.mtex) in {}", dir.string()));
  validate_checkpoint_chain(out);
  return out;
}

void validate_checkpoint_chain(const std::vector<LevelCheckpoint>& checkpoints) {
  if (checkpoints.empty()) throw ValidationError("empty checkpoint chain");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto& ck = checkpoints[i];
    if (ck.level != static_cast<int>(i)) {
      throw ValidationError(fmt::format("checkpoint chain: position {} holds level {}", i, ck.level));
    }
    if (ck.generator.net().layers().size() != static_cast<std::size_t>(ck.num_layers)) {
      throw ValidationError(fmt::format("checkpoint chain: level {} generator has the wrong layer count", i));
    }
    if (!(ck.noise_sigma >= 0.0) || !std::isfinite(ck.noise_sigma)) {
      throw ValidationError(fmt::format("checkpoint chain: level {} noise sigma is invalid", i));
    }
    if (i > 0 && ck.num_vertices() < checkpoints[i - 1].num_vertices()) {
      throw ValidationError(fmt::format("checkpoint chain: level {} is coarser than level {}", i, i - 1));
    }
  }
}

}  // namespace meshtex
