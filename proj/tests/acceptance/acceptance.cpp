// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the exit code is nonzero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../../tools/commands.hpp"
#include "CLI11.hpp"
#include "epgn/config.hpp"
#include "epgn/dataio.hpp"
#include "epgn/episode.hpp"
#include "epgn/evaluator.hpp"
#include "epgn/gradcheck_suite.hpp"
#include "epgn/losses.hpp"
#include "helpers.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace epgn;
using namespace epgn::ops;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

// ---- criterion 1: gradient suite ------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  Outcome o;
  double worst_first = 0, worst_penalty = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SuiteOptions opts;
    opts.seed = seed;
    for (const LossCheck& c : run_gradcheck_suite(opts)) {
      o.pass = o.pass && c.passed;
      if (c.tolerance > kGradTolerance) worst_penalty = std::max(worst_penalty, c.max_rel_error);
      else worst_first = std::max(worst_first, c.max_rel_error);
    }
  }
  const double t = seconds_since(t0);
  o.pass = o.pass && t < 60.0;
  std::ostringstream d;
  d << std::scientific << std::setprecision(2) << "5 seeds, max rel err " << worst_first << " (tol 1e-4), penalty "
    << worst_penalty << " (tol 1e-3), " << std::defaultfloat << std::setprecision(3) << t << "s (limit 60s)";
  o.detail = d.str();
  return o;
}

// ---- criterion 2: harmonic mean vs reported results ----------------------

Outcome reported_harmonic_means() {
  struct Row {
    const char* name;
    double u, s, h;
  };
  const Row rows[] = {{"AwA1", 62.1, 83.4, 71.2}, {"AwA2", 52.6, 83.5, 64.6},
                      {"CUB", 52.0, 61.1, 56.2}, {"FLO", 71.5, 82.2, 76.5}};
  Outcome o;
  std::ostringstream d;
  d << std::fixed << std::setprecision(3);
  for (const Row& r : rows) {
    const double h = 100.0 * harmonic_mean(r.u / 100.0, r.s / 100.0);
    const double rounded = std::round(h * 10.0) / 10.0;
    const bool ok = std::abs(rounded - r.h) <= 0.05 + 1e-9;
    o.pass = o.pass && ok;
    d << r.name << " " << h << "->" << std::setprecision(1) << rounded << " vs " << r.h << (ok ? " ok" : " MISMATCH")
      << std::setprecision(3) << "; ";
  }
  d << "tol +-0.05 after rounding";
  o.detail = d.str();
  return o;
}

// ---- criterion 3: loss identities -----------------------------------------

Mlp constant_net(std::size_t in, std::size_t hidden, std::vector<double> c, Activation hidden_act) {
  const std::size_t out = c.size();
  Mlp net;
  net.layers.push_back({Tensor::zeros({in, hidden}), Tensor::zeros({hidden}), hidden_act, 0.0});
  net.layers.push_back({Tensor::zeros({hidden, out}), Tensor::vector(std::move(c)), Activation::Relu, 0.0});
  return net;
}

Mlp zero_critic(std::size_t in) {
  return constant_net(in, 2, {0.0}, Activation::Relu);
}

PgnModel assemble(Mlp f, Mlp g, Mlp critic, std::size_t d, std::size_t k) {
  PgnModel m;
  m.f = std::move(f);
  m.g = std::move(g);
  m.critic = std::move(critic);
  m.critic.layers.back().activation = Activation::Linear;
  m.feature_dim = d;
  m.semantic_dim = k;
  return m;
}

Outcome loss_identities() {
  const auto t0 = Clock::now();
  Outcome o;
  std::ostringstream d;

  // Perfect fits: F(x) = a, G(a) = x, one class.
  const PgnModel fit = assemble(constant_net(3, 2, {0.7, 0.3}, Activation::Relu),
                                constant_net(2, 2, {0.2, 0.6, 0.1}, Activation::Tanh), zero_critic(5), 3, 2);
  const Batch one = make_batch(Tensor::matrix({{0.2, 0.6, 0.1}}), {0}, Tensor::matrix({{0.7, 0.3}}));
  const double v2a = loss_v2a(fit, one, Mode::Eval, nullptr, Reduction::Sum).item();
  const double a2v = loss_a2v(fit, one, Reduction::Sum).item();
  const double r1 = refine_loss(fit, one.features, one.support_prototypes, {0}, Distance::Euclidean).item();
  const bool zeros = v2a == 0.0 && a2v == 0.0 && r1 == 0.0;
  d << "perfect-fit zeros " << (zeros ? "ok" : "FAIL");

  // Softmax rows under large logits.
  RngStream rng(2024);
  double worst = 0;
  for (double mag : {1.0, 1e2, 1e4}) {
    const Tensor p = softmax_rows(scale(testing::random_matrix(50, 9, rng), mag));
    for (std::size_t i = 0; i < 50; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) s += p.at(i, j);
      worst = std::max(worst, std::isfinite(s) ? std::abs(s - 1.0) : INFINITY);
    }
  }
  const bool sums = worst <= 1e-9;
  d << "; softmax |sum-1| " << std::scientific << std::setprecision(1) << worst << " (tol 1e-9)";

  // Linear critic with a unit-norm weight over x.
  Mlp critic;
  critic.layers.push_back({Tensor::matrix(6, 1, {0.5, 0.5, 0.5, 0.5, 0.0, 0.0}), Tensor::zeros({1}),
                           Activation::Linear, 0.0});
  critic.layers.push_back({Tensor::matrix({{1.0}}), Tensor::zeros({1}), Activation::Linear, 0.0});
  const PgnModel lin = assemble(constant_net(4, 2, {0, 0}, Activation::Relu),
                                constant_net(2, 2, {0, 0, 0, 0}, Activation::Tanh), critic, 4, 2);
  const Batch b4 = make_batch(testing::random_matrix(3, 4, rng, 0.0, 1.0), {0, 1, 0},
                              testing::random_matrix(2, 2, rng, 0.0, 1.0));
  RngStream tau(5);
  Tensor penalty;
  critic_objective(lin, b4, testing::random_matrix(3, 4, rng, 0.0, 1.0), testing::random_matrix(3, 2, rng, 0.0, 1.0),
                   10.0, PenaltyScope::Visual, Mode::Eval, {nullptr, &tau}, &penalty);
  const bool pen0 = penalty.item() == 0.0;
  d << "; unit critic penalty " << penalty.item() << " (exact 0)";

  // Zero weight gives gradients bitwise equal to omitting the term.
  ArchitectureOptions arch;
  arch.hidden_f = 6;
  arch.hidden_g = 5;
  arch.hidden_d = 7;
  arch.dropout = 0.4;
  const PgnModel base = init_model(5, 3, arch, RngStream(12));
  std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2, 0};
  const Batch b = make_batch(testing::random_matrix(7, 5, rng, 0.0, 1.0), labels,
                             testing::random_matrix(3, 3, rng, 0.0, 1.0));
  const auto grads = [&](const std::function<Tensor(const PgnModel&, RngStream&)>& loss) {
    Tape tape;
    PgnModel m = base;
    m.f = base.f.bind(tape);
    m.g = base.g.bind(tape);
    m.critic = base.critic.bind(tape);
    RngStream drop(99);
    std::vector<Tensor> wrt;
    for (const Mlp* net : {&m.f, &m.g, &m.critic}) {
      const auto p = net->parameters();
      wrt.insert(wrt.end(), p.begin(), p.end());
    }
    std::vector<std::vector<double>> out;
    for (const Tensor& g : tape.backward(loss(m, drop), wrt)) out.push_back(testing::to_vec(g));
    return out;
  };
  bool bitwise = true;
  for (int zeroed = 0; zeroed < 3; ++zeroed) {
    LossWeights w{0.6, 0.7, 1.3, 10.0};
    (zeroed == 0 ? w.alpha : zeroed == 1 ? w.beta : w.gamma) = 0.0;
    const auto via_total = grads([&](const PgnModel& m, RngStream& r) {
      return total_generator_loss(m, b, w, LossOptions{}, Mode::Train, &r).total;
    });
    const auto manual = grads([&](const PgnModel& m, RngStream& r) {
      const Tensor inferred = f_forward(m, b.features, Mode::Train, &r);
      const Tensor generated = g_forward(m, b.semantics, Mode::Train, &r);
      Tensor total = scale(mean(d_forward(m, generated, inferred, Mode::Train, &r)), -1.0);
      if (w.alpha != 0.0) total = add(total, scale(regression_loss(inferred, b.semantics, Reduction::Mean), w.alpha));
      if (w.beta != 0.0) total = add(total, scale(regression_loss(generated, b.features, Reduction::Mean), w.beta));
      if (w.gamma != 0.0) {
        const Tensor protos = g_forward(m, b.support_prototypes, Mode::Train, &r);
        total = add(total, scale(mce_loss_from(b.features, inferred, protos, b.support_prototypes, b.labels,
                                               Reduction::Mean),
                                 w.gamma));
      }
      return total;
    });
    bitwise = bitwise && via_total == manual;
  }
  d << "; weight-zeroing gradients " << (bitwise ? "bitwise equal" : "DIFFER");

  const double t = seconds_since(t0);
  o.pass = zeros && sums && pen0 && bitwise && t < 60.0;
  d << std::defaultfloat << std::setprecision(3) << "; " << t << "s (limit 60s)";
  o.detail = d.str();
  return o;
}

// ---- criterion 4: protocol invariants -------------------------------------

Outcome protocol_invariants() {
  const auto t0 = Clock::now();
  RngStream rng(4004);
  std::ostringstream d;

  std::size_t bound_violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform(), s = rng.uniform();
    const double h = harmonic_mean(u, s);
    if (h < std::min(u, s) || h > std::max(u, s)) ++bound_violations;
  }
  d << "H bounds violations " << bound_violations << "/10000";

  std::size_t dup_violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> labels, preds;
    for (int i = 0; i < 80; ++i) {
      labels.push_back(rng.below(5));
      preds.push_back(rng.below(5));
    }
    const double base = per_class_top1(preds, labels, {0, 1, 2, 3, 4}).mean;
    const std::size_t c = rng.below(5);
    for (std::size_t i = 0, n = labels.size(); i < n; ++i)
      if (labels[i] == c) {
        labels.push_back(labels[i]);
        preds.push_back(preds[i]);
      }
    if (std::abs(per_class_top1(preds, labels, {0, 1, 2, 3, 4}).mean - base) > 1e-12) ++dup_violations;
  }
  d << "; duplication violations " << dup_violations << "/200";

  std::size_t disagreements = 0;
  for (Distance metric : {Distance::Euclidean, Distance::Cosine}) {
    PredictionTask task;
    task.candidate_classes = {0, 1, 2, 3, 4, 5, 6};
    task.prototypes = testing::random_matrix(7, 6, rng);
    task.metric = metric;
    const Tensor x = testing::random_matrix(1000, 6, rng);
    const auto pred = predict(task, x);
    const Tensor p = softmax_rows(scale(pairwise_distance(x, task.prototypes, metric), -1.0));
    for (std::size_t i = 0; i < 1000; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < 7; ++j)
        if (p.at(i, j) > p.at(i, best)) best = j;
      if (pred[i] != best) ++disagreements;
    }
  }
  d << "; argmax disagreements " << disagreements << "/2000";
  const double t = seconds_since(t0);
  d << std::setprecision(3) << "; " << t << "s (limit 60s)";
  return {bound_violations == 0 && dup_violations == 0 && disagreements == 0 && t < 60.0, d.str()};
}

// ---- criteria 5 and 6: synthetic end-to-end --------------------------------

// The criterion-5 benchmark, normalized the way `train` does it.
Dataset benchmark() {
  SynthConfig s;
  s.classes = 15;
  s.per_class = 100;
  s.feature_dim = 16;
  s.semantic_dim = 8;
  s.noise = 0.05;
  s.unseen = 5;
  s.seed = 7;
  return normalize_features(make_synthetic(s), NormalizationScope::Train);
}

// Defaults except n_mimetic (3 for 10 seen classes) and network width.
TrainConfig benchmark_config(std::uint64_t seed) {
  TrainConfig c;
  c.n_mimetic = 3;
  c.hidden_f = c.hidden_g = c.hidden_d = 128;
  c.seed = seed;
  return c;
}

double train_and_score(const Dataset& ds, const TrainConfig& cfg) {
  const TrainingResult r = run_training(ds, cfg);
  return zsl_eval(r.model, ds, cfg.distance).T;
}

// Unseen T of the five E-PGN runs, cached by config digest so criterion 6 can
// reuse criterion 5's runs.
std::vector<double> episodic_scores(const Dataset& ds, const fs::path& cache) {
  std::string key = dataset_digest(ds);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) key += "/" + config_digest(benchmark_config(seed));
  if (fs::exists(cache)) {
    std::ifstream in(cache);
    const json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("key", "") == key) return j["T"].get<std::vector<double>>();
  }
  std::vector<double> scores;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t0 = Clock::now();
    scores.push_back(train_and_score(ds, benchmark_config(seed)));
    std::cerr << "  E-PGN seed " << seed << ": T = " << scores.back() << " (" << seconds_since(t0) << "s)\n";
  }
  std::ofstream(cache) << json{{"key", key}, {"T", scores}}.dump() << '\n';
  return scores;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double>& v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(3) << "[";
  for (std::size_t i = 0; i < v.size(); ++i) o << (i ? " " : "") << v[i];
  o << "]";
  return o.str();
}

Outcome synthetic_end_to_end(const fs::path& cache) {
  const auto t0 = Clock::now();
  const Dataset ds = benchmark();
  const double oracle = testing::ridge_prototype_oracle(ds);
  const double threshold = std::max(oracle - 0.05, 0.80);
  const std::vector<double> t = episodic_scores(ds, cache);
  const auto hits = std::count_if(t.begin(), t.end(), [&](double v) { return v >= threshold; });
  std::ostringstream d;
  d << std::fixed << std::setprecision(3) << "ridge oracle " << oracle << ", threshold " << threshold
    << ", T " << list(t) << ", " << hits << "/5 seeds pass (need 4), " << std::setprecision(0)
    << seconds_since(t0) << "s";
  return {hits >= 4, d.str()};
}

Outcome episode_benefit(const fs::path& cache) {
  const auto t0 = Clock::now();
  const Dataset ds = benchmark();
  const std::vector<double> episodic = episodic_scores(ds, cache);
  std::vector<double> plain;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig c = benchmark_config(seed);
    c.episodes = 1;
    c.n_mimetic = 0;
    plain.push_back(train_and_score(ds, c));
  }
  const double me = median(episodic), mp = median(plain);
  std::ostringstream d;
  d << std::fixed << std::setprecision(3) << "median T episodic " << me << " " << list(episodic) << " vs plain "
    << mp << " " << list(plain) << ", " << std::setprecision(0) << seconds_since(t0) << "s";
  return {me >= mp, d.str()};
}

// ---- criteria 7 and 8: CLI runs --------------------------------------------

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << "  command failed (" << code << "): " << err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path small_dataset(const fs::path& root) {
  const fs::path data = root / "data";
  if (!fs::exists(data / "split.txt")) {
    cli({"synth", "--classes", "8", "--per-class", "30", "--dim", "10", "--attr-dim", "5", "--unseen", "2",
         "--seed", "3", "--out", data.string()});
  }
  return data;
}

std::vector<std::string> small_train(const fs::path& data, const fs::path& out) {
  return {"train", "--data", data.string(), "--out", out.string(), "--hidden-f", "32", "--hidden-g", "32",
          "--hidden-d", "32", "--epochs-per-episode", "5", "--refine-epochs", "3", "--episodes", "3",
          "--n-mimetic", "2", "--seed", "11"};
}

Outcome ablation_mechanics(const fs::path& root) {
  const fs::path data = small_dataset(root);
  struct Variant {
    std::string name;
    std::vector<std::string> flags;
  };
  const std::vector<Variant> variants{{"full", {}},
                                      {"alpha0", {"--alpha", "0"}},
                                      {"beta0", {"--beta", "0"}},
                                      {"gamma0", {"--gamma", "0"}},
                                      {"ce", {"--ce-baseline"}},
                                      {"cosine", {"--distance", "cosine"}}};
  bool complete = true;
  std::set<std::string> histories;
  std::string full_hist, gamma0_hist;
  for (const Variant& v : variants) {
    const fs::path out = root / ("ablation_" + v.name);
    fs::remove_all(out);
    auto args = small_train(data, out);
    args.insert(args.end(), v.flags.begin(), v.flags.end());
    bool ok = cli(args) == 0;
    const std::string hist = slurp(out / "history.csv");
    ok = ok && std::count(hist.begin(), hist.end(), '\n') == 4;
    ok = ok && json::parse(slurp(out / "manifest.json"))["status"] == "complete";
    const fs::path ckpt = out / "model.ckpt";
    const std::string dist = v.name == "cosine" ? "cosine" : "euclidean";
    ok = ok && cli({"eval", "--data", data.string(), "--checkpoint", ckpt.string(), "--distance", dist, "--out",
                    (out / "eval.json").string()}) == 0;
    complete = complete && ok;
    histories.insert(hist);
    if (v.name == "full") full_hist = hist;
    if (v.name == "gamma0") gamma0_hist = hist;
  }
  const bool distinct = histories.size() == variants.size();
  const bool gamma_changes = full_hist != gamma0_hist;
  bool grads_ok = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SuiteOptions opts;
    opts.seed = seed;
    for (const LossCheck& c : run_gradcheck_suite(opts)) grads_ok = grads_ok && c.passed;
  }
  std::ostringstream d;
  d << variants.size() << " variants " << (complete ? "complete" : "INCOMPLETE") << ", " << histories.size()
    << " distinct histories, gamma=0 " << (gamma_changes ? "changes" : "DOES NOT change")
    << " the trajectory, gradcheck " << (grads_ok ? "passes" : "FAILS");
  return {complete && distinct && gamma_changes && grads_ok, d.str()};
}

Outcome determinism(const fs::path& root) {
  const fs::path data = small_dataset(root);
  bool same = true;
  std::size_t runs = 0;
  for (const std::vector<std::string>& extra :
       {std::vector<std::string>{}, std::vector<std::string>{"--ce-baseline", "--checkpoint-every", "1"}}) {
    std::vector<std::string> outs;
    for (const char* tag : {"a", "b"}) {
      const fs::path out = root / ("det_" + std::to_string(runs) + tag);
      fs::remove_all(out);
      auto args = small_train(data, out);
      args.insert(args.end(), extra.begin(), extra.end());
      if (cli(args) != 0) return {false, "train failed"};
      outs.push_back(slurp(out / "history.csv") + "\n--\n" + slurp(out / "model.ckpt"));
      if (fs::exists(out / "checkpoints")) {
        for (const auto& e : fs::directory_iterator(out / "checkpoints")) outs.back() += slurp(e.path());
      }
    }
    same = same && outs[0] == outs[1];
    ++runs;
  }
  return {same, std::to_string(runs) + " invocation pairs, history and checkpoints " +
                    (same ? "bit-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  std::string work = (fs::temp_directory_path() / "epgn_acceptance").string();
  app.add_option("--criterion,-c", selected, "criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--work-dir", work, "scratch directory for runs and the training cache");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  const fs::path root = work;
  fs::create_directories(root);
  const fs::path cache = root / "episodic_scores.json";

  bool all = true;
  for (int c : selected) {
    Outcome o;
    try {
      switch (c) {
        case 1: o = gradient_suite(); break;
        case 2: o = reported_harmonic_means(); break;
        case 3: o = loss_identities(); break;
        case 4: o = protocol_invariants(); break;
        case 5: o = synthetic_end_to_end(cache); break;
        case 6: o = episode_benefit(cache); break;
        case 7: o = ablation_mechanics(root); break;
        case 8: o = determinism(root); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
