#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "epgn/config.hpp"
#include "epgn/dataio.hpp"
#include "epgn/episode.hpp"
#include "epgn/error.hpp"
#include "epgn/evaluator.hpp"
#include "epgn/gradcheck_suite.hpp"
#include "epgn/networks.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace epgn::cli {

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + p.string());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw Error(ErrorKind::Io, "cannot create directory " + p.string());
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json config_json(const TrainConfig& cfg) {
  json j = json::object();
  std::istringstream in(to_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

// Every TrainConfig key, as spelled in config files.
std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  std::istringstream in(to_text(TrainConfig{}));
  std::string line;
  while (std::getline(in, line)) keys.push_back(line.substr(0, line.find(" = ")));
  return keys;
}

std::string flag_name(std::string key) {
  for (auto& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  validate(a.cfg);
  const Dataset ds = make_synthetic(a.cfg);
  save_dataset(a.out, ds);
  out << dataset_digest(ds) << '\n';
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::map<std::string, std::string> values;  // key -> flag value, set flags only
  bool ce_baseline = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  std::map<std::string, std::string> overrides = a.values;
  if (a.ce_baseline) overrides["ce_baseline"] = "true";
  const std::string file_text = a.config.empty() ? std::string() : read_file(a.config);
  const TrainConfig cfg = resolve_config(file_text, overrides);

  const Dataset raw = load_dataset(a.data);
  const Dataset ds = normalize_features(raw, cfg.normalization);

  const fs::path dir(a.out);
  make_dir(dir);
  const fs::path manifest_path = dir / "manifest.json";
  const fs::path checkpoint_path = dir / "model.ckpt";
  const fs::path history_path = dir / "history.csv";
  const fs::path config_path = dir / "config.txt";
  write_file(config_path, to_text(cfg));

  json manifest;
  manifest["status"] = "running";
  manifest["config"] = config_json(cfg);
  manifest["config_digest"] = config_digest(cfg);
  manifest["dataset"] = fs::absolute(a.data).string();
  manifest["dataset_digest"] = dataset_digest(raw);
  manifest["seed"] = cfg.seed;
  manifest["artifacts"] = {{"checkpoint", checkpoint_path.string()},
                           {"history", history_path.string()},
                           {"config", config_path.string()},
                           {"checkpoints", json::array()}};
  manifest["timings"] = {{"started", utc_now()}, {"finished", nullptr}, {"wall_seconds", nullptr}};
  write_file(manifest_path, manifest.dump(2) + "\n");

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<EpisodeRecord> history;
  const auto on_episode = [&](const EpisodeRecord& rec, const TrainingState& state) {
    history.push_back(rec);
    write_history(history_path, history);
    if (cfg.checkpoint_every > 0 && rec.episode % cfg.checkpoint_every == 0) {
      make_dir(dir / "checkpoints");
      std::ostringstream name;
      name << "episode_" << std::setw(4) << std::setfill('0') << rec.episode << ".ckpt";
      const fs::path p = dir / "checkpoints" / name.str();
      save_checkpoint(p, state.model);
      manifest["artifacts"]["checkpoints"].push_back(p.string());
    }
    out << "episode " << rec.episode << " base_loss " << rec.base_loss_mean << " refine_loss "
        << rec.refine_loss_mean << " refine_T " << rec.refine_T << '\n';
  };
  const TrainingResult result = run_training(ds, cfg, on_episode);
  save_checkpoint(checkpoint_path, result.model);
  write_history(history_path, result.history);

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest["status"] = "complete";
  manifest["timings"]["finished"] = utc_now();
  manifest["timings"]["wall_seconds"] = wall;
  write_file(manifest_path, manifest.dump(2) + "\n");
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string config;
  std::string mode = "zsl";
  std::string distance = "euclidean";
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  // Architecture flags and normalization come from the run's config sidecar.
  TrainConfig cfg;
  fs::path config_path = a.config;
  if (config_path.empty()) {
    const fs::path sidecar = fs::path(a.checkpoint).parent_path() / "config.txt";
    if (fs::exists(sidecar)) config_path = sidecar;
  }
  if (!config_path.empty()) cfg = parse_config_text(read_file(config_path));

  const Distance metric = parse_distance(a.distance);
  const PgnModel model = load_checkpoint(a.checkpoint, cfg.architecture());
  const Dataset ds = normalize_features(load_dataset(a.data), cfg.normalization);

  json report;
  report["mode"] = a.mode;
  report["distance"] = to_string(metric);
  Metrics m;
  if (a.mode == "zsl") {
    m = zsl_eval(model, ds, metric);
    report["T"] = m.T;
  } else {
    m = gzsl_eval(model, ds, metric);
    report["u"] = m.u;
    report["s"] = m.s;
    report["H"] = m.H;
  }
  json per_class = json::object();
  for (const auto& [c, acc] : m.per_class_acc) per_class[std::to_string(c)] = acc;
  report["per_class"] = per_class;
  report["config_digest"] = config_digest(cfg);
  report["seed"] = cfg.seed;

  const std::string text = report.dump(2) + "\n";
  if (!a.out.empty()) write_file(a.out, text);
  out << text;
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::size_t seeds = 1;
  std::string fault;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  SuiteOptions opts;
  if (!a.fault.empty()) {
    if (a.fault != "a2v-sign") throw Error(ErrorKind::Usage, "unknown fault '" + a.fault + "'");
    opts.fault_flip_a2v = true;
  }
  bool all = true;
  for (std::size_t i = 0; i < a.seeds; ++i) {
    opts.seed = a.seed + i;
    for (const LossCheck& c : run_gradcheck_suite(opts)) {
      out << "seed " << opts.seed << "  " << std::left << std::setw(18) << c.name << std::right
          << std::scientific << std::setprecision(3) << c.max_rel_error << "  tol " << c.tolerance
          << std::defaultfloat << "  " << (c.passed ? "PASS" : "FAIL") << '\n';
      all = all && c.passed;
    }
  }
  out << (all ? "all gradients within tolerance" : "gradient check failed") << '\n';
  return all ? 0 : exit_code_for(ErrorKind::Numeric);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Episode-based prototype generating network: training and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic zero-shot dataset");
  s->add_option("--classes", synth.cfg.classes)->capture_default_str();
  s->add_option("--per-class", synth.cfg.per_class)->capture_default_str();
  s->add_option("--dim", synth.cfg.feature_dim)->capture_default_str();
  s->add_option("--attr-dim", synth.cfg.semantic_dim)->capture_default_str();
  s->add_option("--noise", synth.cfg.noise)->capture_default_str();
  s->add_option("--unseen", synth.cfg.unseen)->capture_default_str();
  s->add_option("--seed", synth.cfg.seed)->capture_default_str();
  s->add_option("--out", synth.out)->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run episodic training");
  t->add_option("--data", train.data)->required();
  t->add_option("--out", train.out)->required();
  t->add_option("--config", train.config, "flat key = value file");
  for (const std::string& key : config_keys()) {
    if (key == "ce_baseline") continue;
    t->add_option_function<std::string>(
        flag_name(key), [&train, key](const std::string& v) { train.values[key] = v; });
  }
  t->add_flag("--ce-baseline", train.ce_baseline, "replace MCE with a softmax classifier head");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--data", ev.data)->required();
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--config", ev.config, "defaults to config.txt beside the checkpoint");
  e->add_option("--mode", ev.mode)->check(CLI::IsMember({"zsl", "gzsl"}))->capture_default_str();
  e->add_option("--distance", ev.distance)
      ->check(CLI::IsMember({"euclidean", "cosine"}))
      ->capture_default_str();
  e->add_option("--out", ev.out, "also write the report here");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  g->add_option("--seed", gc.seed)->capture_default_str();
  g->add_option("--seeds", gc.seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
#ifdef EPGN_FAULT_INJECTION
  g->add_option("--inject-fault", gc.fault)->group("");
#endif

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "epgn: usage error: " << ex.what() << '\n';
    return exit_code_for(ErrorKind::Usage);
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(ev, out);
    return cmd_gradcheck(gc, out);
  } catch (const Error& ex) {
    err << "epgn: " << ex.what() << '\n';
    return exit_code_for(ex.kind());
  } catch (const std::exception& ex) {
    err << "epgn: error: " << ex.what() << '\n';
    return 2;
  }
}

}  // namespace epgn::cli
