#include "meshtex/gan.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "meshtex/adam.hpp"
#include "meshtex/errors.hpp"
#include "meshtex/seeding.hpp"
#include "meshtex/subdivision.hpp"

namespace meshtex {

using ad::Matrix;
using ad::Var;

namespace {

constexpr std::uint64_t kStreamLevelInit = 11;

bool same_connectivity(const Mesh& a, const Mesh& b) {
  return a.num_vertices() == b.num_vertices() && a.connectivity().same_faces(b.connectivity());
}

void require_same_connectivity(const Mesh& a, const Mesh& b, const char* what) {
  if (!same_connectivity(a, b)) {
    throw TopologyError(fmt::format("{}: meshes do not share connectivity ({} V / {} F vs {} V / {} F)", what,
                                    a.num_vertices(), a.num_faces(), b.num_vertices(), b.num_faces()));
  }
}

// Marks leaves as constants for the lifetime of the guard.
class Freeze {
 public:
  explicit Freeze(std::vector<Var<float>> params) : params_(std::move(params)) {
    for (auto& p : params_) p.set_requires_grad(false);
  }
  ~Freeze() {
    for (auto& p : params_) p.set_requires_grad(true);
  }
  Freeze(const Freeze&) = delete;
  Freeze& operator=(const Freeze&) = delete;

 private:
  std::vector<Var<float>> params_;
};

Matrix<float> gaussian(std::size_t rows, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<float> m(rows, 3);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<float>(sigma * normal(rng));
  return m;
}

void require_finite(double value, int level, int iter, const char* what, const TrainLogRow& row) {
  if (std::isfinite(value)) return;
  const std::string message =
      fmt::format("level {} iteration {}: {} is {} (d_loss {}, g_loss {}, gp {}, recon_mse {})", level, iter, what,
                  value, row.d_loss, row.g_loss, row.gp, row.recon_mse);
  spdlog::error("training diverged: {}", message);
  throw DivergenceError(message);
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  std::string bad;
  if (iters_per_level <= 0) bad = "iters_per_level";
  else if (!positive(learning_rate)) bad = "learning_rate";
  else if (!positive(lr_decay) || lr_decay > 1.0) bad = "lr_decay";
  else if (decay_interval <= 0) bad = "decay_interval";
  else if (!std::isfinite(gamma) || gamma < 0.0) bad = "gamma";
  else if (!std::isfinite(gp_lambda) || gp_lambda < 0.0) bad = "gp_lambda";
  else if (d_steps <= 0) bad = "d_steps";
  else if (g_steps <= 0) bad = "g_steps";
  else if (!positive(noise_sigma)) bad = "noise_sigma";
  else if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) bad = "adam_beta1";
  else if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) bad = "adam_beta2";
  else if (num_layers < 2) bad = "num_layers";
  else if (inherit_from_level < 1) bad = "inherit_from_level";
  if (!bad.empty()) throw ValidationError(fmt::format("invalid training config: {}", bad));
}

double TrainConfig::sigma_for_level(int level) const { return noise_sigma * std::pow(0.5, level); }

double TrainConfig::learning_rate_at(int iter) const {
  return learning_rate * std::pow(lr_decay, iter / decay_interval);
}

template <typename T>
Var<T> gradient_penalty(const std::function<Var<T>(const Var<T>&)>& critic, const Matrix<T>& real,
                        const Matrix<T>& fake, T lambda, T epsilon) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols()) {
    throw ShapeError(fmt::format("gradient_penalty: real {}x{} vs fake {}x{}", real.rows(), real.cols(), fake.rows(),
                                 fake.cols()));
  }
  Matrix<T> mix(real.rows(), real.cols());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = epsilon * real[i] + (T(1) - epsilon) * fake[i];
  const Var<T> x = Var<T>::parameter(std::move(mix));
  const Var<T> g = ad::grad(critic(x), std::vector<Var<T>>{x}, true).front();
  return scale(square(add_scalar(l2_norm(g), T(-1))), lambda);
}

template <typename T>
Var<T> gradient_penalty(const Discriminator<T>& critic, const Mesh& real, const Mesh& fake, double lambda,
                        std::uint64_t seed) {
  require_same_connectivity(real, fake, "gradient_penalty");
  std::mt19937_64 rng(seed);
  const T epsilon = static_cast<T>(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  const FaceTopology topology = FaceTopology::from(real.connectivity());
  return gradient_penalty<T>([&](const Var<T>& x) { return critic.critic(x, topology); }, vertex_matrix<T>(real),
                             vertex_matrix<T>(fake), static_cast<T>(lambda), epsilon);
}

double reconstruction_mse(const Mesh& a, const Mesh& b) {
  if (a.num_vertices() != b.num_vertices()) throw ShapeError("reconstruction_mse: vertex counts differ");
  double s = 0.0;
  for (std::size_t v = 0; v < a.num_vertices(); ++v) {
    const Vec3 d = a.vertices()[v] - b.vertices()[v];
    s += dot(d, d);
  }
  return s / static_cast<double>(a.num_vertices());
}

LevelTrainResult train_level(int level, const Mesh& input, const Mesh& real, const LevelCheckpoint* init,
                             const TrainConfig& config, const TrainLogSink& sink) {
  config.validate();
  if (level < 0) throw ValidationError("level must be non-negative");
  require_same_connectivity(input, real, fmt::format("level {}", level).c_str());

  std::mt19937_64 rng(derive_seed(config.seed, kStreamLevelInit, static_cast<std::uint64_t>(level)));
  LevelTrainResult result;
  LevelCheckpoint& ck = result.checkpoint;
  ck.level = level;
  ck.num_layers = config.num_layers;
  ck.noise_sigma = config.sigma_for_level(level);
  if (init) {
    if (init->num_layers != config.num_layers) {
      throw ValidationError(fmt::format("cannot inherit a {}-layer checkpoint into a {}-layer level",
                                        init->num_layers, config.num_layers));
    }
    ck.embed_dim = init->embed_dim;
    ck.generator = init->generator.clone();
    ck.discriminator = init->discriminator.clone();
    result.inherited = true;
  } else {
    ck.embed_dim = embed_dim_for_level(level);
    ck.generator = Generator<float>::random(ck.embed_dim, rng, config.num_layers);
    ck.discriminator = Discriminator<float>::random(ck.embed_dim, rng, config.num_layers);
  }
  const std::size_t nv = input.num_vertices();
  ck.fixed_noise = level == 0 ? gaussian(nv, ck.noise_sigma, rng) : Matrix<float>(nv, 3);

  Generator<float>& gen = ck.generator;
  Discriminator<float>& disc = ck.discriminator;
  const FaceTopology topology = FaceTopology::from(input.connectivity());
  const Var<float> real_v = Var<float>::constant(vertex_matrix<float>(real));
  const AdamOptions adam{.learning_rate = config.learning_rate,
                         .beta1 = config.adam_beta1,
                         .beta2 = config.adam_beta2,
                         .epsilon = 1e-8};
  Adam<float> g_opt(gen.parameters(), adam);
  Adam<float> d_opt(disc.parameters(), adam);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto critic = [&](const Var<float>& x) { return disc.critic(x, topology); };
  const auto gamma = static_cast<float>(config.gamma);

  for (int it = 0; it < config.iters_per_level; ++it) {
    const double lr = config.learning_rate_at(it);
    g_opt.set_learning_rate(lr);
    d_opt.set_learning_rate(lr);
    TrainLogRow row{.iter = it, .level = level};

    if (config.adversarial) {
      const Freeze frozen(gen.parameters());
      for (int s = 0; s < config.d_steps; ++s) {
        const Var<float> fake = gen.displace(input, topology, gaussian(nv, ck.noise_sigma, rng));
        const Var<float> gp = gradient_penalty<float>(critic, real_v.value(), fake.value(),
                                                      static_cast<float>(config.gp_lambda),
                                                      static_cast<float>(unit(rng)));
        const Var<float> loss = add(sub(disc.critic(fake, topology), disc.critic(real_v, topology)), gp);
        row.d_loss = loss.item();
        row.gp = gp.item();
        require_finite(row.d_loss, level, it, "critic loss", row);
        d_opt.step(ad::grad(loss, disc.parameters()));
      }
    }

    {
      const Freeze frozen(disc.parameters());
      for (int s = 0; s < config.g_steps; ++s) {
        const Var<float> recon =
            scale(squared_error(gen.displace(input, topology, ck.fixed_noise), real_v), 3.0f);
        Var<float> loss = scale(recon, gamma);
        if (config.adversarial) {
          const Var<float> fake = gen.displace(input, topology, gaussian(nv, ck.noise_sigma, rng));
          loss = sub(loss, disc.critic(fake, topology));
        }
        if (s == 0) row.recon_mse = recon.item();
        row.g_loss = loss.item();
        require_finite(row.g_loss, level, it, "generator loss", row);
        g_opt.step(ad::grad(loss, gen.parameters()));
      }
    }

    result.log.push_back(row);
    if (sink) sink(row);
  }

  result.final_recon_mse = reconstruction_mse(gen.forward(input, ck.fixed_noise), real);
  if (!std::isfinite(result.final_recon_mse)) {
    throw DivergenceError(fmt::format("level {}: final reconstruction is not finite", level));
  }
  std::ostringstream state;
  state << rng;
  ck.rng_state = state.str();
  return result;
}

TrainingMeshes training_meshes(const MultiscalePyramid& pyramid) {
  if (pyramid.levels.empty()) throw ValidationError("pyramid has no levels");
  TrainingMeshes out{.input0 = normalize_mean_edge(place_template(pyramid.template_mesh, pyramid.levels.front())),
                     .real = {}};
  for (const Mesh& m : pyramid.levels) out.real.push_back(normalize_mean_edge(m));
  return out;
}

Mesh next_level_input(const LevelCheckpoint& checkpoint, const Mesh& input) {
  return uniform_subdivide(checkpoint.generator.forward(input, checkpoint.fixed_noise), true).mesh;
}

std::vector<LevelCheckpoint> HierarchyResult::checkpoints() const {
  std::vector<LevelCheckpoint> out;
  out.reserve(levels.size());
  for (const auto& l : levels) out.push_back(l.checkpoint);
  return out;
}

HierarchyResult train_hierarchy(const MultiscalePyramid& pyramid, const TrainConfig& config,
                                const TrainLogSink& sink) {
  config.validate();
  if (pyramid.levels.size() < 2) {
    throw ValidationError(fmt::format("training needs at least 2 pyramid levels, got {}", pyramid.levels.size()));
  }
  const TrainingMeshes meshes = training_meshes(pyramid);
  HierarchyResult result;
  Mesh input = meshes.input0;
  for (std::size_t l = 0; l < meshes.real.size(); ++l) {
    const int level = static_cast<int>(l);
    const LevelCheckpoint* init = config.inherits(level) ? &result.levels.back().checkpoint : nullptr;
    LevelTrainResult r = train_level(level, input, meshes.real[l], init, config, sink);
    spdlog::info("level {}: {} faces, embed {}, reconstruction mse {:.3e} -> {:.3e}{}", level, input.num_faces(),
                 r.checkpoint.embed_dim, r.log.empty() ? 0.0 : r.log.front().recon_mse, r.final_recon_mse,
                 r.inherited ? " (inherited weights)" : "");
    if (l + 1 < meshes.real.size()) input = next_level_input(r.checkpoint, input);
    result.levels.push_back(std::move(r));
  }
  return result;
}

template Var<float> gradient_penalty(const std::function<Var<float>(const Var<float>&)>&, const Matrix<float>&,
                                     const Matrix<float>&, float, float);
template Var<double> gradient_penalty(const std::function<Var<double>(const Var<double>&)>&, const Matrix<double>&,
                                      const Matrix<double>&, double, double);
template Var<float> gradient_penalty(const Discriminator<float>&, const Mesh&, const Mesh&, double, std::uint64_t);
template Var<double> gradient_penalty(const Discriminator<double>&, const Mesh&, const Mesh&, double,
                                      std::uint64_t);

}  // namespace meshtex
