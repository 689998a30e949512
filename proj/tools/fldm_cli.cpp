// Command-line front end: train, eval, synth, ablate, robust, bench-scaling.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fldm/fldm.hpp"

namespace {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kConfig = 1, kData = 2, kDivergence = 3 };

json metrics_json(const fldm::Metrics& m) {
  json j{{"mse", m.mse}, {"mae", m.mae}, {"count", m.count}};
  j["pearson"] = m.pearson ? json(*m.pearson) : json(nullptr);
  return j;
}

template <class T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  for (const auto& item : fldm::Config::split_list(text)) {
    fldm::Config c;
    c.set("v", item);
    if constexpr (std::is_floating_point_v<T>) out.push_back(c.get_double("v", 0));
    else out.push_back(static_cast<T>(c.get_uint("v", 0)));
  }
  if (out.empty()) throw fldm::ConfigError("empty list '" + text + "'");
  return out;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  auto cfg = fldm::load_train_config(config);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  const auto ds = fldm::load_dataset(cfg);
  std::ofstream epoch_log;
  std::ostream* log = &std::cout;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    epoch_log.open(std::filesystem::path(cfg.out_dir) / "epochs.jsonl");
    log = &epoch_log;
  }
  const auto result = fldm::train_loop(cfg, ds, log);
  std::cout << result.report.to_json().dump(2) << '\n';
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, std::size_t horizon,
             const std::string& split, bool date_col, std::size_t stride) {
  auto loaded = fldm::load_model(checkpoint);
  const auto& mcfg = loaded.model.config();
  if (horizon != mcfg.horizon) {
    throw fldm::ConfigError("checkpoint predicts " + std::to_string(mcfg.horizon) + " steps, --horizon asked for " +
                            std::to_string(horizon));
  }
  auto raw = fldm::load_csv(dataset, fldm::CsvSchema{date_col});
  if (raw.variates() != mcfg.variates) {
    throw fldm::DataError(dataset + " has " + std::to_string(raw.variates()) + " variates, checkpoint expects " +
                          std::to_string(mcfg.variates));
  }
  fldm::assign_splits(raw, fldm::parse_split_protocol(split));
  if (loaded.extras.count("data.mean") && loaded.extras.count("data.std")) {
    const auto& m = loaded.extras.at("data.mean").values();
    const auto& s = loaded.extras.at("data.std").values();
    raw.mean.assign(m.begin(), m.end());
    raw.stddev.assign(s.begin(), s.end());
  }
  const auto ds = fldm::normalize(raw);
  json report{{"checkpoint", checkpoint}, {"dataset", dataset}, {"horizon", horizon}};
  for (auto sp : {fldm::Split::val, fldm::Split::test}) {
    const fldm::WindowSet ws(ds, sp, mcfg.lookback, mcfg.horizon, stride);
    report[fldm::split_name(sp)] = metrics_json(fldm::evaluate(loaded.model, ws));
  }
  std::cout << report.dump(2) << '\n';
  return kOk;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  const auto c = fldm::Config::load(spec_path);
  fldm::TrainConfig t = fldm::train_config_from(c);
  const auto ds = fldm::synth_generate(t.data.synth);
  std::ofstream os(out);
  if (!os) throw fldm::DataError("cannot open '" + out + "' for writing");
  fldm::write_csv(os, ds);
  std::cout << "wrote " << ds.length() << " rows x " << ds.variates() << " variates to " << out << '\n';
  return kOk;
}

int cmd_ablate(const std::string& config, const std::string& variants) {
  auto cfg = fldm::load_train_config(config);
  const auto ds = fldm::load_dataset(cfg);
  const auto rows = fldm::ablate(cfg, fldm::Config::split_list(variants), ds);
  json table = json::array();
  std::cout << std::left << std::setw(10) << "variant" << std::setw(14) << "val_mse" << std::setw(14) << "test_mse"
            << "test_mae\n";
  for (const auto& r : rows) {
    std::cout << std::setw(10) << r.label << std::setw(14) << r.report.val.mse << std::setw(14) << r.report.test.mse
              << r.report.test.mae << '\n';
    table.push_back({{"variant", r.label}, {"report", r.report.to_json()}});
  }
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream(std::filesystem::path(cfg.out_dir) / "ablation.json") << table.dump(2) << '\n';
  }
  return kOk;
}

int cmd_robust(const std::string& config, const std::string& levels, const std::string& seeds, std::size_t draws) {
  auto cfg = fldm::load_train_config(config);
  const auto ds = fldm::load_dataset(cfg);
  const auto rows =
      fldm::robustness(cfg, parse_list<double>(levels), ds, parse_list<std::uint64_t>(seeds), draws);
  std::cout << std::left << std::setw(10) << "variant" << std::setw(8) << "level" << std::setw(14) << "test_mse"
            << "degradation\n";
  for (const auto& r : rows)
    std::cout << std::setw(10) << r.variant << std::setw(8) << r.level << std::setw(14) << r.test_mse
              << r.degradation << '\n';
  return kOk;
}

int cmd_bench(const std::string& lengths, std::size_t trials) {
  const auto points = fldm::bench_scaling(parse_list<std::size_t>(lengths), 8, 8, 16, trials);
  std::cout << std::left << std::setw(10) << "length" << "median_seconds\n";
  for (const auto& p : points) std::cout << std::setw(10) << p.length << p.median_seconds << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FLDmamba time-series forecaster"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, dataset, spec, variants = "ft,fm,ma,rbf,ilt", levels = "0.10,0.15",
                                                        seeds = "0,1,2", lengths = "128,256,512",
                                                        split = "ratio";
  std::optional<std::uint64_t> seed;
  std::size_t horizon = 0, trials = 20, stride = 1, draws = 8;
  bool no_date = false;

  auto* train = app.add_subcommand("train", "train a model and write checkpoint + report");
  train->add_option("--config", config, "config file")->required();
  train->add_option("--seed", seed, "override train.seed");
  train->add_option("--out", out, "output directory (overrides train.out)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a CSV dataset");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--dataset", dataset, "CSV file")->required();
  eval->add_option("--horizon", horizon)->required();
  eval->add_option("--split", split, "ett_hour, ett_minute or ratio");
  eval->add_option("--stride", stride, "window stride");
  eval->add_flag("--no-date", no_date, "CSV has no leading date column");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--spec", spec, "config file with synth.* keys")->required();
  synth->add_option("--out", out, "CSV path")->required();

  auto* ablate = app.add_subcommand("ablate", "train the full model and ablation variants");
  ablate->add_option("--config", config)->required();
  ablate->add_option("--variants", variants, "subset of ft,fm,ma,rbf,ilt");

  auto* robust = app.add_subcommand("robust", "test-MSE degradation under input noise");
  robust->add_option("--config", config)->required();
  robust->add_option("--levels", levels, "noise levels in [0, 1)");
  robust->add_option("--seeds", seeds, "training seeds");
  robust->add_option("--draws", draws, "noise draws averaged per level");

  auto* bench = app.add_subcommand("bench-scaling", "forward wall-clock per lookback length");
  bench->add_option("--lengths", lengths);
  bench->add_option("--trials", trials);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(config, seed, out);
    if (*eval) return cmd_eval(checkpoint, dataset, horizon, split, !no_date, stride);
    if (*synth) return cmd_synth(spec, out);
    if (*ablate) return cmd_ablate(config, variants);
    if (*robust) return cmd_robust(config, levels, seeds, draws);
    if (*bench) return cmd_bench(lengths, trials);
  } catch (const fldm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fldm::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fldm::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const fldm::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kOk;
}
