#ifndef FLDM_MODEL_IO_HPP
#define FLDM_MODEL_IO_HPP

#include <cstdint>
#include <map>
#include <string>

#include "fldm/checkpoint.hpp"
#include "fldm/model.hpp"

namespace fldm {

// A model checkpoint stores the configuration as rank-0 "config.*" entries,
// the initialisation seed as "meta.seed" = [high 32 bits, low 32 bits], every
// trainable tensor as "param.<name>", plus caller-supplied extras (e.g. the
// normalisation statistics) under their own names.

namespace detail {

inline NamedTensors config_entries(const ModelConfig& c) {
  auto s = [](double v) { return Tensor::scalar(v); };
  auto d = [](std::size_t v) { return static_cast<double>(v); };
  return {
      {"config.lookback", s(d(c.lookback))},
      {"config.horizon", s(d(c.horizon))},
      {"config.variates", s(d(c.variates))},
      {"config.hidden", s(d(c.hidden))},
      {"config.state_dim", s(d(c.state_dim))},
      {"config.blocks", s(d(c.blocks))},
      {"config.ilt_modes", s(d(c.ilt_modes))},
      {"config.dt_min", s(c.dt_min)},
      {"config.dt_max", s(c.dt_max)},
      {"config.rbf_bandwidth", s(c.rbf.bandwidth)},
      {"config.rbf_radius", s(d(c.rbf.radius))},
      {"config.use_rbf", s(c.use_rbf)},
      {"config.use_fmamba", s(c.use_fmamba)},
      {"config.use_mamba", s(c.use_mamba)},
      {"config.use_ft", s(c.use_ft)},
      {"config.use_ilt", s(c.use_ilt)},
      {"config.discretization", s(c.discretization == Discretization::zoh ? 0.0 : 1.0)},
      {"config.scan", s(c.scan == ScanMode::sequential ? 0.0 : 1.0)},
      {"config.random_filter_init", s(c.random_filter_init)},
      {"config.per_variate_filter", s(c.per_variate_filter)},
  };
}

}  // namespace detail

inline void save_model(const std::string& path, const Model& model, const NamedTensors& extras = {}) {
  NamedTensors entries = detail::config_entries(model.config());
  const std::uint64_t seed = model.seed();
  entries.emplace_back("meta.seed", Tensor({2}, {static_cast<double>(seed >> 32),
                                                 static_cast<double>(seed & 0xffffffffu)}));
  for (const auto& [name, t] : model.parameters()) entries.emplace_back("param." + name, t.detach());
  for (const auto& e : extras) entries.push_back(e);
  save_checkpoint(path, entries);
}

struct LoadedModel {
  Model model;
  std::map<std::string, Tensor> extras;
};

inline LoadedModel load_model(const std::string& path) {
  std::map<std::string, Tensor> entries;
  for (auto& [name, t] : load_checkpoint(path)) entries.emplace(name, t);
  auto scalar = [&](const std::string& key) {
    auto it = entries.find("config." + key);
    if (it == entries.end()) throw DataError("checkpoint lacks config." + key);
    return it->second.item();
  };
  auto count = [&](const std::string& key) { return static_cast<std::size_t>(scalar(key)); };
  ModelConfig c;
  c.lookback = count("lookback");
  c.horizon = count("horizon");
  c.variates = count("variates");
  c.hidden = count("hidden");
  c.state_dim = count("state_dim");
  c.blocks = count("blocks");
  c.ilt_modes = count("ilt_modes");
  c.dt_min = scalar("dt_min");
  c.dt_max = scalar("dt_max");
  c.rbf.bandwidth = scalar("rbf_bandwidth");
  c.rbf.radius = count("rbf_radius");
  c.use_rbf = scalar("use_rbf") != 0.0;
  c.use_fmamba = scalar("use_fmamba") != 0.0;
  c.use_mamba = scalar("use_mamba") != 0.0;
  c.use_ft = scalar("use_ft") != 0.0;
  c.use_ilt = scalar("use_ilt") != 0.0;
  c.discretization = scalar("discretization") == 0.0 ? Discretization::zoh : Discretization::paper_eq4;
  c.scan = scalar("scan") == 0.0 ? ScanMode::sequential : ScanMode::chunked;
  c.random_filter_init = scalar("random_filter_init") != 0.0;
  c.per_variate_filter = scalar("per_variate_filter") != 0.0;

  auto seed_it = entries.find("meta.seed");
  if (seed_it == entries.end()) throw DataError("checkpoint lacks meta.seed");
  const auto seed = (static_cast<std::uint64_t>(seed_it->second[0]) << 32) |
                    static_cast<std::uint64_t>(seed_it->second[1]);

  LoadedModel out{Model(c, seed), {}};
  for (auto& [name, t] : out.model.parameters()) {
    auto it = entries.find("param." + name);
    if (it == entries.end()) throw DataError("checkpoint lacks parameter " + name);
    if (it->second.shape() != t.shape()) {
      throw DataError("checkpoint parameter " + name + " has shape " +
                      shape_str(it->second.shape()) + ", model expects " + shape_str(t.shape()));
    }
    std::copy(it->second.values().begin(), it->second.values().end(), t.data().begin());
  }
  for (auto& [name, t] : entries) {
    if (!name.starts_with("config.") && !name.starts_with("param.") && name != "meta.seed") {
      out.extras.emplace(name, t);
    }
  }
  return out;
}

}  // namespace fldm

#endif  // FLDM_MODEL_IO_HPP
