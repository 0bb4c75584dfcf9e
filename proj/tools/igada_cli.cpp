// Command-line front end: capabilities, augment, evaluate, energy-replay.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "igada/igada.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 0;  // 0: take the config value
  std::string out;
};

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw igada::RuntimeFailure("cannot write " + p.string());
  f << text;
  if (!f) throw igada::RuntimeFailure("write failed: " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

igada::RunConfig load_config(const GlobalOptions& g) {
  if (g.config.empty()) throw igada::ValidationError("--config is required");
  auto cfg = igada::load_run_config(g.config);
  if (g.jobs > 0) cfg.jobs = g.jobs;
  if (!g.out.empty()) cfg.out_dir = g.out;
  cfg.validate();
  return cfg;
}

std::uint64_t run_seed(const GlobalOptions& g, const igada::RunConfig& cfg) { return g.seed_set ? g.seed : cfg.loop.seed; }

int cmd_capabilities(const GlobalOptions& g) {
  auto cfg = load_config(g);
  const auto seed = run_seed(g, cfg);
  auto gens = igada::make_generators(cfg);
  auto splits = igada::load_splits(cfg, seed);
  auto tensor = igada::build_capability_tensor(splits.train, gens, cfg.stats, igada::derive_seed(seed, igada::hash_string("gcm")),
                                               cfg.jobs);
  fs::path out(cfg.out_dir);
  write_json(out / "tensor.json", tensor.to_json());
  write_text(out / "tensor.txt", tensor.table());
  std::cout << tensor.table();
  return 0;
}

json eval_summary(const igada::Evaluation& e, const igada::EvalReport& test) {
  return {{"J", e.J},
          {"Gamma", e.gaps.gamma_bar},
          {"val_accuracy", e.report.accuracy},
          {"val_macro_f1", e.report.macro_f1},
          {"test_accuracy", test.accuracy},
          {"test_macro_f1", test.macro_f1}};
}

json augment_one(const igada::RunConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  auto gens = igada::make_generators(cfg);
  auto classifier = igada::make_classifier(cfg.classifier);
  auto splits = igada::load_splits(cfg, seed);
  auto tensor = igada::build_capability_tensor(splits.train, gens, cfg.stats, igada::derive_seed(seed, igada::hash_string("gcm")),
                                               cfg.jobs);
  auto loop_cfg = igada::effective_loop_config(cfg, splits.train.size(), seed);
  auto result = igada::run_closed_loop(splits.train, splits.val, gens, classifier, tensor, loop_cfg, cfg.stats);

  auto test_initial = igada::evaluate(*result.initial.model, splits.test);
  auto test_final = igada::evaluate(*result.final_model, splits.test);

  write_json(dir / "tensor.json", tensor.to_json());
  write_text(dir / "tensor.txt", tensor.table());
  write_json(dir / "rounds.json", igada::rounds_json(result, cfg.canonical));
  {
    std::ostringstream os;
    igada::write_windows_csv(os, result.final_train, true);
    write_text(dir / "augmented_train.csv", os.str());
  }
  write_json(dir / "model.json", result.final_model->to_json());
  write_json(dir / "baseline_model.json", result.initial.model->to_json());

  // Plot data: one row for the baseline (t = -1), then one per round.
  std::ostringstream plot;
  plot << std::setprecision(17) << "t,Gamma_t,val_acc,test_acc,B_t,accepted\n";
  plot << -1 << ',' << result.initial.gaps.gamma_bar << ',' << result.initial.report.accuracy << ','
       << test_initial.accuracy << ",0,1\n";
  for (std::size_t i = 0; i < result.rounds.size(); ++i) {
    const auto& r = result.rounds[i];
    double test_acc = igada::evaluate(*result.round_models[i], splits.test).accuracy;
    plot << r.t << ',' << r.Gamma_t << ',' << r.val_acc << ',' << test_acc << ',' << r.B_t << ',' << (r.accepted ? 1 : 0)
         << '\n';
  }
  write_text(dir / "plot.csv", plot.str());

  json generated = json::object();
  long long generated_total = 0;
  for (std::size_t g = 0; g < gens.size(); ++g) {
    std::vector<long long> per_class(splits.train.C(), 0);
    for (const auto& r : result.rounds)
      if (r.accepted)
        for (std::size_t c = 0; c < per_class.size(); ++c) per_class[c] += r.generated[c][g];
    for (auto v : per_class) generated_total += v;
    generated[gens[g]->id()] = per_class;
  }
  std::size_t accepted = 0;
  for (const auto& r : result.rounds) accepted += r.accepted ? 1 : 0;

  json summary = {{"seed", seed},
                  {"stop_reason", igada::to_string(result.stop_reason)},
                  {"rounds", result.rounds.size()},
                  {"accepted_rounds", accepted},
                  {"initial", eval_summary(result.initial, test_initial)},
                  {"final", eval_summary(result.final_state, test_final)},
                  {"train_size", splits.train.size()},
                  {"final_train_size", result.final_train.size()},
                  {"B_min", loop_cfg.B_min},
                  {"B_max", loop_cfg.B_max},
                  {"generated", generated},
                  {"generated_total", generated_total}};
  write_json(dir / "summary.json", summary);
  return summary;
}

int cmd_augment(const GlobalOptions& g) {
  auto cfg = load_config(g);
  const auto base_seed = run_seed(g, cfg);
  fs::path out(cfg.out_dir);
  json runs = json::array();
  double base_sum = 0, final_sum = 0;
  for (int r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(r);
    auto s = augment_one(cfg, seed, out / ("seed_" + std::to_string(seed)));
    base_sum += s["initial"]["test_accuracy"].get<double>();
    final_sum += s["final"]["test_accuracy"].get<double>();
    std::cout << "seed " << seed << ": " << s["stop_reason"].get<std::string>() << ", test accuracy "
              << s["initial"]["test_accuracy"].get<double>() << " -> " << s["final"]["test_accuracy"].get<double>()
              << ", generated " << s["generated_total"].get<long long>() << "\n";
    runs.push_back(std::move(s));
  }
  const double n = static_cast<double>(cfg.repeats);
  json summary = {{"runs", runs},
                  {"mean_baseline_test_accuracy", base_sum / n},
                  {"mean_final_test_accuracy", final_sum / n}};
  write_json(out / "summary.json", summary);
  return 0;
}

int cmd_evaluate(const GlobalOptions& g, const std::string& model_path, const std::string& split_name,
                 const std::string& decisions, double interval) {
  auto cfg = load_config(g);
  std::ifstream in(model_path);
  if (!in) throw igada::ValidationError("model artifact not found: " + model_path);
  json mj;
  try {
    mj = json::parse(in);
  } catch (const json::parse_error& e) {
    throw igada::ValidationError("model artifact " + model_path + ": " + e.what());
  }
  auto model = igada::load_model_json(mj);
  auto splits = igada::load_splits(cfg, run_seed(g, cfg));
  const igada::LabeledDataset* split = nullptr;
  if (split_name == "train") split = &splits.train;
  else if (split_name == "val") split = &splits.val;
  else if (split_name == "test") split = &splits.test;
  else throw igada::ValidationError("unknown split " + split_name);

  auto report = igada::evaluate(*model, *split);
  json j = report.to_json();
  j["split"] = split_name;
  fs::path out(cfg.out_dir);
  write_json(out / ("eval_" + split_name + ".json"), j);
  std::cout << j.dump(2) << "\n";

  if (!decisions.empty()) {
    auto proba = model->predict_proba_batch(split->windows());
    std::ostringstream os;
    os << "timestamp,class\n" << std::setprecision(17);
    for (std::size_t i = 0; i < proba.size(); ++i) {
      auto pred = std::max_element(proba[i].begin(), proba[i].end()) - proba[i].begin();
      os << static_cast<double>(i) * interval << ',' << pred << '\n';
    }
    write_text(decisions, os.str());
  }
  return 0;
}

int cmd_energy(const GlobalOptions& g, const std::string& trace, const igada::EnergyReplayOptions& opt) {
  auto ledger = igada::energy_replay_file(trace, opt);
  json j = ledger.to_json();
  if (!g.out.empty()) write_json(fs::path(g.out) / "energy.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information-gap driven time-series augmentation"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", g.seed, "run seed (overrides loop.seed)");
  app.add_option("--jobs", g.jobs, "worker threads for capability cells");
  app.add_option("--out", g.out, "output directory");

  auto* caps = app.add_subcommand("capabilities", "build the generator capability tensor");
  auto* aug = app.add_subcommand("augment", "run the closed augmentation loop");

  auto* ev = app.add_subcommand("evaluate", "evaluate a saved model on a split");
  std::string model_path, split_name = "test", decisions;
  double interval = 4.0;
  ev->add_option("--model", model_path, "model.json written by augment")->required();
  ev->add_option("--split", split_name, "train, val or test");
  ev->add_option("--decisions", decisions, "write a timestamp,class decision trace here");
  ev->add_option("--interval", interval, "minutes between consecutive windows in the decision trace");

  auto* en = app.add_subcommand("energy-replay", "energy accounting over a decision trace");
  std::string trace;
  igada::EnergyReplayOptions eopt;
  en->add_option("--trace", trace, "CSV of timestamp,class")->required();
  en->add_option("--energy-per-sampling", eopt.energy_per_sampling_mwh, "mWh per sampling");
  en->add_option("--base-interval", eopt.base_interval_min, "minutes");
  en->add_option("--low-interval", eopt.low_interval_min, "minutes (class 0)");
  en->add_option("--high-interval", eopt.high_interval_min, "minutes (class 2)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (*caps) return cmd_capabilities(g);
    if (*aug) return cmd_augment(g);
    if (*ev) return cmd_evaluate(g, model_path, split_name, decisions, interval);
    if (*en) return cmd_energy(g, trace, eopt);
  } catch (const igada::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
