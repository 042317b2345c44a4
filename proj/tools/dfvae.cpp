// Command-line front end: dataset synthesis, training, swapping, perturbation,
// benchmark runs and the hidden-test server.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "dfvae/benchmark.hpp"
#include "dfvae/perturb.hpp"
#include "dfvae/server.hpp"
#include "dfvae/synth.hpp"
#include "dfvae/trainer.hpp"

namespace fs = std::filesystem;
using namespace dfvae;
using nlohmann::json;

namespace {

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return json::parse(in);
}

// Registry file: {"variants": {"std": {"manifest": "...", "root": "..."}, ...},
//                 "hidden": {"vault": "...", "root": "..."}}. Paths are relative
// to the registry file.
struct LoadedRegistry {
  VariantRegistry registry;
  std::unique_ptr<HiddenService> hidden;
};

LoadedRegistry load_registry(const fs::path& path) {
  const auto j = read_json(path);
  const auto base = path.parent_path();
  LoadedRegistry out;
  for (const auto& [name, v] : j.at("variants").items())
    out.registry.variants[name] = {read_manifest(base / v.at("manifest").get<std::string>()),
                                   base / v.at("root").get<std::string>()};
  if (j.contains("hidden")) {
    const auto& h = j.at("hidden");
    out.hidden = std::make_unique<HiddenService>(read_manifest(base / h.at("vault").get<std::string>()),
                                                 base / h.at("root").get<std::string>());
    out.registry.hidden = out.hidden.get();
  }
  return out;
}

BenchmarkServer* active_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled face-swap generation and detection benchmark"};
  app.require_subcommand(1);

  // synth-dataset
  auto* synth = app.add_subcommand("synth-dataset", "Render a synthetic real-clip dataset");
  fs::path synth_out;
  SynthDatasetConfig synth_cfg;
  synth->add_option("--out", synth_out, "Output root")->required();
  synth->add_option("--identities", synth_cfg.identities)->capture_default_str();
  synth->add_option("--clips", synth_cfg.clips_per_identity, "Clips per identity")->capture_default_str();
  synth->add_option("--frames", synth_cfg.clip.frames)->capture_default_str();
  synth->add_option("--size", synth_cfg.clip.size)->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();

  // split
  auto* split = app.add_subcommand("split", "Assign identity-disjoint train/val/test splits");
  fs::path split_in, split_out;
  std::array<int, 3> ratios{7, 1, 2};
  std::uint64_t split_seed = 0;
  split->add_option("--manifest", split_in)->required()->check(CLI::ExistingFile);
  split->add_option("--out", split_out)->required();
  split->add_option("--ratios", ratios, "train val test")->expected(3);
  split->add_option("--seed", split_seed)->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the face-swap model on a manifest's train split");
  fs::path train_manifest, train_root, train_config, train_out;
  int steps = -1, batch = -1;
  double lr = -1.0;
  std::int64_t seed = -1;
  train_cmd->add_option("--manifest", train_manifest)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--root", train_root, "Media root")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--config", train_config, "Training configuration JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--steps", steps);
  train_cmd->add_option("--batch", batch);
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--out", train_out, "Model checkpoint")->required();

  // swap
  auto* swap_cmd = app.add_subcommand("swap", "Swap a source identity onto target clips");
  fs::path swap_model, swap_out;
  std::vector<std::string> sources;
  std::vector<fs::path> targets;
  swap_cmd->add_option("--model", swap_model)->required()->check(CLI::ExistingFile);
  swap_cmd->add_option("--source", sources, "Source identities")->required();
  swap_cmd->add_option("--target", targets, "Target clip directories")->required();
  swap_cmd->add_option("--out", swap_out, "Output root")->required();

  // perturb
  auto* perturb = app.add_subcommand("perturb", "Build a perturbed dataset variant");
  fs::path p_manifest, p_in, p_out, p_out_manifest, p_levels;
  std::string p_mode = "rand";
  VariantOptions p_opts;
  perturb->add_option("--manifest", p_manifest)->required()->check(CLI::ExistingFile);
  perturb->add_option("--input-root", p_in)->required()->check(CLI::ExistingDirectory);
  perturb->add_option("--output-root", p_out)->required();
  perturb->add_option("--out-manifest", p_out_manifest)->required();
  perturb->add_option("--mode", p_mode, "sing | rand | mix")->capture_default_str();
  perturb->add_option("--mix-count", p_opts.mix_count)->capture_default_str();
  perturb->add_option("--seed", p_opts.seed)->capture_default_str();
  perturb->add_option("--levels", p_levels, "Level table JSON")->check(CLI::ExistingFile);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Fit the reference detector on train, evaluate on test");
  fs::path e_manifest, e_root;
  double threshold = 0.5;
  eval->add_option("--manifest", e_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--root", e_root)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--threshold", threshold)->capture_default_str();

  // scenario
  auto* scenario = app.add_subcommand("scenario", "Run detection-benchmark scenarios");
  fs::path registry_path;
  std::string train_set, test_set;
  scenario->add_option("--registry", registry_path, "Variant registry JSON")->required()->check(CLI::ExistingFile);
  scenario->add_option("--train-set", train_set);
  scenario->add_option("--test-set", test_set);

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the hidden test and rating API");
  fs::path vault, media_root, ratings_log;
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--vault", vault, "Hidden manifest with labels")->required()->check(CLI::ExistingFile);
  serve->add_option("--media-root", media_root)->required()->check(CLI::ExistingDirectory);
  serve->add_option("--ratings-log", ratings_log, "JSON Lines rating log");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto m = synth_dataset(synth_out, synth_cfg);
      write_manifest(m, synth_out / "manifest.jsonl");
      print({{"clips", m.entries.size()}, {"manifest", (synth_out / "manifest.jsonl").string()}});
    } else if (*split) {
      auto m = read_manifest(split_in);
      std::vector<std::string> ids;
      for (const auto& e : m.entries)
        if (e.split != Split::hidden) ids.push_back(e.identity);
      const auto s = split_by_identity(ids, ratios, split_seed);
      m = assign_splits(std::move(m), s);
      m.seed = split_seed;
      write_manifest(m, split_out);
      print({{"train", s.train.size()}, {"val", s.val.size()}, {"test", s.test.size()}});
    } else if (*train_cmd) {
      TrainConfig cfg = train_config.empty() ? TrainConfig{} : load_train_config(train_config);
      if (steps >= 0) cfg.optimizer.steps = steps;
      if (batch > 0) cfg.optimizer.batch_size = batch;
      if (lr > 0) cfg.optimizer.learning_rate = lr;
      if (seed >= 0) cfg.optimizer.seed = static_cast<std::uint64_t>(seed);
      const auto r = train(read_manifest(train_manifest), train_root, cfg);
      save_model(r.model, train_out);
      json history = json::array();
      for (const auto& h : r.history) history.push_back(to_json(h));
      print({{"model", train_out.string()}, {"steps", r.history.size()},
             {"final", r.history.empty() ? json() : history.back()}});
    } else if (*swap_cmd) {
      const auto model = load_model(swap_model);
      json written = json::array();
      for (const auto& t : targets) {
        const auto clip = load_clip(t);
        for (const auto& s : sources) {
          const auto fake = swap(s, clip, model);
          write_clip(fake, clip_directory(swap_out, fake.clip_id));
          written.push_back(fake.clip_id);
        }
      }
      print({{"clips", written}});
    } else if (*perturb) {
      p_opts.mode = parse_perturb_mode(p_mode);
      if (!p_levels.empty()) p_opts.tables = load_level_tables(p_levels);
      const auto m = build_variant(read_manifest(p_manifest), p_in, p_out, p_opts);
      write_manifest(m, p_out_manifest);
      print({{"entries", m.entries.size()}, {"mode", to_string(p_opts.mode)}});
    } else if (*eval) {
      const auto m = read_manifest(e_manifest);
      std::vector<VideoClip> train_clips;
      for (const auto& e : m.entries)
        if (e.split == Split::train) {
          auto c = load_clip(clip_directory(e_root, e.clip_id));
          c.label = e.label;
          train_clips.push_back(std::move(c));
        }
      ReferenceDetector detector;
      detector.fit(train_clips);
      print(to_json(evaluate(detector, m, e_root, threshold)));
    } else if (*scenario) {
      const auto loaded = load_registry(registry_path);
      std::vector<ScenarioConfig> configs;
      if (train_set.empty() && test_set.empty()) {
        configs = standard_scenarios();
      } else {
        configs.push_back({train_set.empty() ? "std" : train_set, test_set.empty() ? "std" : test_set, 0.5});
      }
      json out = json::array();
      for (const auto& c : configs) {
        const auto r = run_scenario(c, loaded.registry, [] { return std::make_unique<ReferenceDetector>(); });
        out.push_back({{"train", c.train_set}, {"test", c.test_set}, {"accuracy", r.accuracy}, {"n", r.n}});
      }
      print(out);
    } else if (*serve) {
      auto service = HiddenService::load(vault, media_root, ratings_log);
      BenchmarkServer server(service);
      const int bound = server.bind(host, port);
      std::cerr << "listening on " << host << ":" << bound << '\n';
      active_server = &server;
      std::signal(SIGINT, [](int) {
        if (active_server) active_server->stop();
      });
      server.listen();
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
