#include "meshtex/config_io.hpp"

#include <functional>
#include <limits>

#include <fmt/format.h>

#include "meshtex/errors.hpp"

namespace meshtex {

namespace {

// One entry per config field: how to write it and how to read it back.
template <typename C>
struct Field {
  const char* key;
  std::function<void(KeyValueFile&, const std::string&, const C&)> store;
  std::function<void(const KeyValueFile&, const std::string&, C&)> read;
};

template <typename C>
Field<C> real(const char* key, double C::*member) {
  return {key, [key, member](KeyValueFile& f, const std::string& s, const C& c) { f.set(s, key, c.*member); },
          [key, member](const KeyValueFile& f, const std::string& s, C& c) { c.*member = f.require_double(s, key); }};
}

template <typename C>
Field<C> integer(const char* key, int C::*member) {
  return {key, [key, member](KeyValueFile& f, const std::string& s, const C& c) { f.set(s, key, c.*member); },
          [key, member](const KeyValueFile& f, const std::string& s, C& c) {
            const auto v = f.require_int(s, key);
            if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
              throw ValidationError(fmt::format("{} is out of range", key));
            }
            c.*member = static_cast<int>(v);
          }};
}

template <typename C, typename U>
Field<C> unsigned_integer(const char* key, U C::*member) {
  return {key,
          [key, member](KeyValueFile& f, const std::string& s, const C& c) {
            f.set(s, key, static_cast<std::uint64_t>(c.*member));
          },
          [key, member](const KeyValueFile& f, const std::string& s, C& c) {
            c.*member = static_cast<U>(f.require_uint(s, key));
          }};
}

template <typename C>
Field<C> boolean(const char* key, bool C::*member) {
  return {key, [key, member](KeyValueFile& f, const std::string& s, const C& c) { f.set(s, key, c.*member); },
          [key, member](const KeyValueFile& f, const std::string& s, C& c) { c.*member = f.require_bool(s, key); }};
}

const std::vector<Field<FitConfig>>& fit_fields() {
  static const std::vector<Field<FitConfig>> fields{
      unsigned_integer("samples_per_side", &FitConfig::samples_per_side),
      integer("iters_per_level", &FitConfig::iters_per_level),
      real("learning_rate", &FitConfig::learning_rate),
      real("weight_normal", &FitConfig::weight_normal),
      real("weight_uniform", &FitConfig::weight_uniform),
      real("weight_smooth", &FitConfig::weight_smooth),
      integer("levels", &FitConfig::levels),
      integer("eval_interval", &FitConfig::eval_interval),
  };
  return fields;
}

const std::vector<Field<TrainConfig>>& train_fields() {
  static const std::vector<Field<TrainConfig>> fields{
      integer("iters_per_level", &TrainConfig::iters_per_level),
      real("learning_rate", &TrainConfig::learning_rate),
      real("lr_decay", &TrainConfig::lr_decay),
      integer("decay_interval", &TrainConfig::decay_interval),
      real("gamma", &TrainConfig::gamma),
      real("gp_lambda", &TrainConfig::gp_lambda),
      integer("d_steps", &TrainConfig::d_steps),
      integer("g_steps", &TrainConfig::g_steps),
      real("noise_sigma", &TrainConfig::noise_sigma),
      real("adam_beta1", &TrainConfig::adam_beta1),
      real("adam_beta2", &TrainConfig::adam_beta2),
      integer("num_layers", &TrainConfig::num_layers),
      integer("inherit_from_level", &TrainConfig::inherit_from_level),
      boolean("adversarial", &TrainConfig::adversarial),
      unsigned_integer("seed", &TrainConfig::seed),
  };
  return fields;
}

template <typename C>
void store(KeyValueFile& file, const std::string& section, const C& config, const std::vector<Field<C>>& fields) {
  for (const auto& f : fields) f.store(file, section, config);
}

template <typename C>
C read(const KeyValueFile& file, const std::string& section, C config, const std::vector<Field<C>>& fields) {
  for (const auto& [name, entries] : file.sections()) {
    if (name != section) continue;
    for (const auto& [key, value] : entries) {
      bool known = false;
      for (const auto& f : fields) known = known || key == f.key;
      if (!known) throw ValidationError(fmt::format("unknown key '{}' in section [{}]", key, section));
    }
  }
  for (const auto& f : fields) {
    if (file.get(section, f.key)) f.read(file, section, config);
  }
  config.validate();
  return config;
}

}  // namespace

void store_fit_config(KeyValueFile& file, const std::string& section, const FitConfig& config) {
  store(file, section, config, fit_fields());
}

FitConfig read_fit_config(const KeyValueFile& file, const std::string& section, FitConfig base) {
  return read(file, section, base, fit_fields());
}

void store_train_config(KeyValueFile& file, const std::string& section, const TrainConfig& config) {
  store(file, section, config, train_fields());
}

TrainConfig read_train_config(const KeyValueFile& file, const std::string& section, TrainConfig base) {
  return read(file, section, base, train_fields());
}

}  // namespace meshtex
