#include "verse/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "verse/config.hpp"
#include "verse/errors.hpp"
#include "verse/service.hpp"
#include "verse/training.hpp"

namespace verse {

std::string ascii_overlay(const Mask& pred, const Mask& gt, const std::vector<Click>& clicks, int max_width) {
  require_same_shape(pred, gt, "ascii_overlay");
  const int h = gt.dim(0), w = gt.dim(1);
  const int step = std::max(1, (w + max_width - 1) / max_width);
  std::string out;
  for (int y = 0; y < h; y += step) {
    for (int x = 0; x < w; x += step) {
      char ch = '.';
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (pred[i] && gt[i])
        ch = '#';
      else if (gt[i])
        ch = 'o';
      else if (pred[i])
        ch = 'x';
      for (const Click& c : clicks)
        if (c.x / step == x / step && c.y / step == y / step) ch = c.polarity == Polarity::positive ? '+' : '-';
      out += ch;
    }
    out += '\n';
  }
  return out;
}

namespace {

const std::vector<std::string> kOpenKeys = {"model.target_names"};

std::vector<EvalProtocol> protocols_for(const std::string& name, int max_clicks) {
  std::vector<int> modes;
  if (name == "all")
    modes = {1, 2, 3};
  else if (name == "mode1" || name == "1")
    modes = {1};
  else if (name == "mode2" || name == "2")
    modes = {2};
  else if (name == "mode3" || name == "3")
    modes = {3};
  else
    throw ConfigError("unknown protocol '" + name + "' (mode1, mode2, mode3 or all)");
  std::vector<EvalProtocol> out;
  for (int m : modes) {
    EvalProtocol p;
    p.mode = m;
    p.max_clicks = max_clicks;
    p.validate();
    out.push_back(p);
  }
  return out;
}

std::shared_ptr<const VerseModel<float>> load_model(const std::string& path) {
  return std::shared_ptr<const VerseModel<float>>(VerseModel<float>::load(path));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"VerSe interactive segmentation toolkit", "verse"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string data_dir;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string split = "train";
  gen->add_option("--out", out_dir, "Dataset directory")->required();
  gen->add_option("--split", split, "train, val or test");
  gen->add_option("--config", config_path, "Generator config JSON");
  gen->add_option("--set", overrides, "Override key=value");
  gen->add_option("--seed", seed, "Generator seed");

  auto* train = app.add_subcommand("train", "Train a model");
  std::string val_dir;
  std::string preset = "desk";
  train->add_option("--train-data", data_dir, "Training dataset directory")->required();
  train->add_option("--val-data", val_dir, "Validation dataset directory");
  train->add_option("--out", out_dir, "Run directory")->required();
  train->add_option("--preset", preset, "desk or default");
  train->add_option("--config", config_path, "Training config JSON");
  train->add_option("--set", overrides, "Override key=value");
  train->add_option("--seed", seed, "Training seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string protocol = "all";
  int max_clicks = 20;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--out", out_dir, "Report directory")->required();
  eval->add_option("--protocol", protocol, "mode1, mode2, mode3 or all");
  eval->add_option("--max-clicks", max_clicks, "Click budget");

  auto* sim = app.add_subcommand("simulate", "Replay simulated clicks on one sample");
  std::string sample_id;
  int target = 0;
  std::string dump_path;
  sim->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  sim->add_option("--data", data_dir, "Dataset directory")->required();
  sim->add_option("--sample", sample_id, "Sample id (default: first)");
  sim->add_option("--target", target, "Target id");
  std::string sim_protocol = "mode3";
  int sim_clicks = 5;
  sim->add_option("--protocol", sim_protocol, "mode1, mode2 or mode3");
  sim->add_option("--max-clicks", sim_clicks, "Click budget");
  sim->add_option("--out", dump_path, "Episode dump JSON");

  auto* srv = app.add_subcommand("serve", "Serve the HTTP/JSON session API");
  std::string host = "127.0.0.1";
  int port = 8080;
  int resize_to = 0;
  srv->add_option("--checkpoint", checkpoint, "Checkpoint (default: $VERSE_CHECKPOINT)");
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--port", port, "Port");
  srv->add_option("--resize-to", resize_to, "Side length for resized uploads (default: model image size)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  const std::optional<std::filesystem::path> cfg_file =
      config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path);
  try {
    if (gen->parsed()) {
      GenSpec spec = resolve_config(GenSpec{}, cfg_file, overrides);
      if (seed) spec.seed = *seed;
      const Split sp = split_from_string(split);
      const nlohmann::json effective = {{"command", "gen-data"}, {"split", split}, {"generator", spec}};
      out << effective.dump(2) << "\n";
      const DatasetManifest m = generate_synthetic_dataset(spec, out_dir, sp);
      write_json_file(std::filesystem::path(out_dir) / "config.json", effective);
      out << "wrote " << m.size() << " samples to " << out_dir << "\n";
      return 0;
    }
    if (train->parsed()) {
      TrainConfig base;
      if (preset == "desk")
        base = desk_preset();
      else if (preset != "default")
        throw ConfigError("unknown preset '" + preset + "'");
      TrainConfig cfg = resolve_config(base, cfg_file, overrides, kOpenKeys);
      if (seed) cfg.seed = *seed;
      out << nlohmann::json(cfg).dump(2) << "\n";
      const DatasetManifest tm = read_manifest(data_dir);
      const std::vector<Sample> tr = load_dataset(tm);
      const std::vector<Sample> va = val_dir.empty() ? std::vector<Sample>{} : load_dataset(read_manifest(val_dir));
      const FitResult r = fit(cfg, tr, va, out_dir, [&out](const EpochMetrics& m) { out << to_json(m).dump() << "\n"; });
      out << "checkpoint " << r.checkpoint.string() << "\n";
      return 0;
    }
    if (eval->parsed()) {
      const auto protocols = protocols_for(protocol, max_clicks);
      const nlohmann::json effective = {
          {"command", "eval"}, {"checkpoint", checkpoint}, {"data", data_dir}, {"protocols", protocols}};
      out << effective.dump(2) << "\n";
      const auto model = load_model(checkpoint);
      const VersePredictor predictor(model);
      const std::vector<Sample> samples = load_dataset(read_manifest(data_dir));
      BenchReport report = run_benchmark(predictor, samples, protocols);
      report.meta = effective;
      write_report(report, out_dir);
      write_json_file(std::filesystem::path(out_dir) / "config.json", effective);
      const nlohmann::json j = report_to_json(report);
      for (const auto& p : j.at("protocols")) {
        nlohmann::json agg = p.at("aggregates");
        agg.erase("dice_at");
        out << p.at("name").get<std::string>() << " " << agg.dump() << "\n";
      }
      return 0;
    }
    if (sim->parsed()) {
      const auto protocols = protocols_for(sim_protocol, sim_clicks);
      if (protocols.size() != 1) throw ConfigError("simulate needs a single protocol");
      const auto model = load_model(checkpoint);
      const VersePredictor predictor(model);
      const DatasetManifest m = read_manifest(data_dir);
      std::size_t index = 0;
      if (!sample_id.empty()) {
        index = m.size();
        for (std::size_t i = 0; i < m.size(); ++i)
          if (m.entries[i].sample_id == sample_id) index = i;
        if (index == m.size()) throw NotFoundError("no sample '" + sample_id + "' in " + data_dir);
      }
      if (m.size() == 0) throw NotFoundError("dataset is empty");
      const Sample s = load_sample(m, index);
      if (!s.masks.count(target)) throw NotFoundError("sample has no target " + std::to_string(target));
      const auto ctx = predictor.prepare(s.image);
      const Mask& gt = s.masks.at(target);
      const Trajectory t = simulate_trajectory(predictor, *ctx, gt, target, protocols[0]);

      nlohmann::json clicks = nlohmann::json::array();
      for (const Click& c : t.clicks)
        clicks.push_back({{"x", c.x}, {"y", c.y}, {"polarity", to_string(c.polarity)}, {"order", c.order}});
      const nlohmann::json dump = {{"sample_id", s.sample_id},  {"target_id", target},
                                   {"protocol", protocols[0]},  {"clicks", clicks},
                                   {"dice_per_click", t.dice},  {"repeated_clicks", t.repeated_clicks}};
      out << ascii_overlay(binarize(t.final_prob), gt, t.clicks);
      out << dump.dump() << "\n";
      if (!dump_path.empty()) write_json_file(dump_path, dump);
      return 0;
    }
    if (srv->parsed()) {
      if (checkpoint.empty()) {
        const char* env = std::getenv("VERSE_CHECKPOINT");
        if (!env || !*env) throw ConfigError("no checkpoint: pass --checkpoint or set VERSE_CHECKPOINT");
        checkpoint = env;
      }
      const auto model = load_model(checkpoint);
      ServiceLimits limits;
      limits.resize_to = resize_to > 0 ? resize_to : model->config().image_size;
      SessionManager manager(std::make_shared<VersePredictor>(model), model->config().target_names, limits);
      out << "serving on http://" << host << ":" << port << "\n" << std::flush;
      serve(manager, host, port);
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace verse
