// grl_dann: synth | train | eval | project | gradcheck
//
// Reproducible experiment runs for the gradient-reversal domain adaptation
// engine. Every command is deterministic given its flags and seed;
// GRL_DANN_THREADS caps worker parallelism (default 1).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dann/data.hpp"
#include "dann/eval.hpp"
#include "dann/gradcheck.hpp"
#include "dann/model.hpp"
#include "dann/rdt_io.hpp"
#include "dann/runtime.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::uint64_t seed = 1;
  int epochs = 30;
  int batch_size = 64;  // desk-scale default; 256 reproduces the reference runs
  std::string lr_mode = "inverse_decay";
  double mu0 = 5e-4;
  double alpha = 10.0;
  double beta = 0.75;
  double momentum = 0.45;
  std::string lambda = "scheduled";  // scheduled | zero | <value>
  std::string data_dir;
  std::string out_dir;
  int per_class = 200;
  double shift = 0.6;
  int cap = 500;
  double perplexity = 30.0;
};

dann::LambdaPolicy parse_lambda(const std::string& s) {
  if (s == "scheduled") return dann::LambdaPolicy::scheduled();
  if (s == "zero") return dann::LambdaPolicy::zero();
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || v < 0.0) throw std::invalid_argument(s);
    return dann::LambdaPolicy::fixed(v);
  } catch (const std::exception&) {
    throw dann::config_error("--lambda must be 'scheduled', 'zero' or a nonnegative "
                             "number, got '" + s + "'");
  }
}

dann::LrMode parse_lr_mode(const std::string& s) {
  if (s == "inverse_decay") return dann::LrMode::InverseDecay;
  if (s == "cosine") return dann::LrMode::Cosine;
  throw dann::config_error("--lr-mode must be 'inverse_decay' or 'cosine', got '" + s + "'");
}

// Config file: a flat JSON object mirroring the RunConfig keys. Flags given
// on the command line win over file values.
void apply_config_file(const std::string& path, CLI::App* cmd, RunConfig& cfg) {
  if (path.empty()) return;
  std::ifstream is(path);
  if (!is) throw dann::config_error("cannot open config file " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw dann::config_error("bad config file " + path + ": " + e.what());
  }
  auto given = [&](const std::string& flag) {
    const CLI::Option* opt = cmd->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  auto load = [&](const char* key, const std::string& flag, auto& target) {
    using V = std::decay_t<decltype(target)>;
    if (j.contains(key) && !given(flag)) target = j.at(key).get<V>();
  };
  load("seed", "--seed", cfg.seed);
  load("epochs", "--epochs", cfg.epochs);
  load("batch_size", "--batch-size", cfg.batch_size);
  load("lr_mode", "--lr-mode", cfg.lr_mode);
  load("mu0", "--mu0", cfg.mu0);
  load("alpha", "--alpha", cfg.alpha);
  load("beta", "--beta", cfg.beta);
  load("momentum", "--momentum", cfg.momentum);
  load("lambda", "--lambda", cfg.lambda);
  load("data_dir", "--data", cfg.data_dir);
  load("out_dir", "--out", cfg.out_dir);
  load("per_class", "--per-class", cfg.per_class);
  load("shift", "--shift", cfg.shift);
  load("cap", "--cap", cfg.cap);
  load("perplexity", "--perplexity", cfg.perplexity);
}

json config_json(const RunConfig& cfg) {
  return json{{"seed", cfg.seed},         {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size}, {"lr_mode", cfg.lr_mode},
              {"mu0", cfg.mu0},           {"alpha", cfg.alpha},
              {"beta", cfg.beta},         {"momentum", cfg.momentum},
              {"lambda", cfg.lambda},     {"data_dir", cfg.data_dir},
              {"out_dir", cfg.out_dir}};
}

std::vector<dann::CheckpointEntry> snapshot(dann::DannNetwork<float>& net) {
  std::vector<dann::CheckpointEntry> entries;
  for (const auto& p : net.parameters())
    entries.push_back({p.name, p.role, *p.value});
  return entries;
}

void restore(dann::DannNetwork<float>& net, const fs::path& checkpoint) {
  const auto entries = dann::load_checkpoint(checkpoint);
  auto params = net.parameters();
  if (entries.size() != params.size())
    throw dann::data_error("checkpoint " + checkpoint.string() + " holds " +
                           std::to_string(entries.size()) + " tensors, expected " +
                           std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    if (entries[i].name != params[i].name)
      throw dann::data_error("checkpoint tensor '" + entries[i].name +
                             "' does not match expected '" + params[i].name + "'");
    if (entries[i].tensor.shape() != params[i].value->shape())
      throw dann::data_error("checkpoint tensor '" + entries[i].name + "' has shape " +
                             dann::shape_str(entries[i].tensor.shape()) +
                             ", expected " + dann::shape_str(params[i].value->shape()) +
                             " (incompatible checkpoint version?)");
    *params[i].value = entries[i].tensor;
  }
}

json confusion_json(const dann::ConfusionMatrix& cm) {
  json rows = json::array();
  for (int p = 0; p < cm.classes(); ++p) {
    json row = json::array();
    for (int t = 0; t < cm.classes(); ++t) row.push_back(cm.at(p, t));
    rows.push_back(row);
  }
  return json{{"counts", rows}, {"overall_accuracy", dann::overall_accuracy(cm)}};
}

int cmd_synth(const RunConfig& cfg, bool force) {
  if (cfg.out_dir.empty()) throw dann::config_error("synth: --out is required");
  const fs::path out(cfg.out_dir);
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw dann::config_error("output dir " + out.string() +
                             " is not empty; pass --force to overwrite");
  fs::create_directories(out);

  dann::SynthConfig synth_cfg;
  synth_cfg.per_class = cfg.per_class;
  synth_cfg.shift = cfg.shift;
  const auto [source, target] = dann::synth_domain_pair(synth_cfg, cfg.seed);
  const auto [src_train, src_test] = dann::split_source(source, cfg.seed);
  const auto [tgt_train, tgt_test] = dann::split_target(target, cfg.seed);

  dann::write_manifest_dataset(src_train, out, "source_train", true);
  dann::write_manifest_dataset(src_test, out, "source_test", true);
  // Target training rows carry no label: the adaptation is unsupervised.
  dann::write_manifest_dataset(tgt_train, out, "target_train", false);
  dann::write_manifest_dataset(tgt_test, out, "target_test", true);

  std::printf("synth: wrote %d source (%d train / %d test) and %d target "
              "(%d train / %d test) samples to %s\n",
              source.size(), src_train.size(), src_test.size(), target.size(),
              tgt_train.size(), tgt_test.size(), out.string().c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw dann::config_error("train: --data is required");
  if (cfg.out_dir.empty()) throw dann::config_error("train: --out is required");
  const fs::path data(cfg.data_dir);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  const auto t0 = std::chrono::steady_clock::now();
  const dann::Dataset src_train = dann::load_manifest(data / "source_train.csv");
  const dann::Dataset tgt_train = dann::load_manifest(data / "target_train.csv");
  const dann::Dataset src_test = dann::load_manifest(data / "source_test.csv");
  const dann::Dataset tgt_test = dann::load_manifest(data / "target_test.csv");

  dann::Rng init_rng(cfg.seed, 0x1417);
  dann::DannNetwork<float> net = dann::build_network(init_rng);

  dann::FitConfig fit_cfg;
  fit_cfg.epochs = cfg.epochs;
  fit_cfg.batch_size = cfg.batch_size;
  fit_cfg.seed = cfg.seed;
  fit_cfg.momentum = cfg.momentum;
  fit_cfg.sched.mu0 = cfg.mu0;
  fit_cfg.sched.alpha = cfg.alpha;
  fit_cfg.sched.beta = cfg.beta;
  fit_cfg.sched.lr_mode = parse_lr_mode(cfg.lr_mode);
  fit_cfg.lambda = parse_lambda(cfg.lambda);

  const auto history = dann::fit(net, src_train, tgt_train, fit_cfg);
  const int per_epoch = static_cast<int>(history.size()) / cfg.epochs;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto& r = history[static_cast<size_t>((e + 1) * per_epoch - 1)];
    std::printf("epoch %3d/%d  L_y=%.4f  L_d=%.4f  lambda=%.4f  lr=%.3e\n", e + 1,
                cfg.epochs, r.label_loss, r.domain_loss, r.lambda, r.learning_rate);
  }

  const dann::ConfusionMatrix cm_src = dann::evaluate(net, src_test);
  const dann::ConfusionMatrix cm_tgt = dann::evaluate(net, tgt_test);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  dann::save_checkpoint(out / "checkpoint.rdtc", snapshot(net));

  std::ofstream rec(out / "run.jsonl");
  if (!rec) throw dann::io_error("cannot write " + (out / "run.jsonl").string());
  json cj = config_json(cfg);
  cj["type"] = "config";
  rec << cj.dump() << "\n";
  for (size_t t = 0; t < history.size(); ++t) {
    const auto& r = history[t];
    rec << json{{"type", "step"},          {"t", t},
                {"label_loss", r.label_loss}, {"domain_loss", r.domain_loss},
                {"objective", r.objective}, {"lambda", r.lambda},
                {"lr", r.learning_rate},    {"p", r.progress}}
               .dump()
        << "\n";
  }
  rec << json{{"type", "final"},
              {"source_test", confusion_json(cm_src)},
              {"target_test", confusion_json(cm_tgt)},
              {"final_label_loss", history.back().label_loss},
              {"final_domain_loss", history.back().domain_loss},
              {"wall_seconds", wall},
              {"checkpoint", "checkpoint.rdtc"}}
             .dump()
      << "\n";
  if (!rec) throw dann::io_error("write failed for " + (out / "run.jsonl").string());

  std::printf("train: source test accuracy %.2f%%, target test accuracy %.2f%% "
              "(%.1f s)\n",
              100.0 * dann::overall_accuracy(cm_src),
              100.0 * dann::overall_accuracy(cm_tgt), wall);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw dann::config_error("eval: --checkpoint is required");
  if (cfg.data_dir.empty()) throw dann::config_error("eval: --data is required");
  if (cfg.out_dir.empty()) throw dann::config_error("eval: --out is required");
  const fs::path data(cfg.data_dir);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  dann::Rng rng(0, 0);
  dann::DannNetwork<float> net = dann::build_network(rng);
  restore(net, checkpoint);

  for (const char* domain : {"source", "target"}) {
    const dann::Dataset test =
        dann::load_manifest(data / (std::string(domain) + "_test.csv"));
    const dann::ConfusionMatrix cm = dann::evaluate(net, test);
    dann::write_confusion_csv(cm, out / ("confusion_" + std::string(domain) + ".csv"));
    dann::write_accuracy_csv(cm, out / ("accuracy_" + std::string(domain) + ".csv"));
    std::printf("eval %s: overall accuracy %.2f%% over %d samples\n", domain,
                100.0 * dann::overall_accuracy(cm), cm.total());
  }
  return 0;
}

dann::Dataset subsample(const dann::Dataset& ds, int cap, dann::Rng& rng) {
  if (ds.size() <= cap) return ds;
  const auto order = dann::shuffled_indices(ds.size(), rng);
  dann::Dataset out;
  out.manifest_path = ds.manifest_path;
  for (int i = 0; i < cap; ++i)
    out.samples.push_back(ds.samples[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  return out;
}

int cmd_project(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw dann::config_error("project: --checkpoint is required");
  if (cfg.data_dir.empty()) throw dann::config_error("project: --data is required");
  if (cfg.out_dir.empty()) throw dann::config_error("project: --out is required");
  const fs::path data(cfg.data_dir);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  dann::Rng rng(cfg.seed, 0x9e07);
  dann::DannNetwork<float> net = dann::build_network(rng);
  restore(net, checkpoint);

  const dann::Dataset src =
      subsample(dann::load_manifest(data / "source_test.csv"), cfg.cap, rng);
  const dann::Dataset tgt =
      subsample(dann::load_manifest(data / "target_test.csv"), cfg.cap, rng);

  dann::Dataset both;
  both.samples.insert(both.samples.end(), src.samples.begin(), src.samples.end());
  both.samples.insert(both.samples.end(), tgt.samples.begin(), tgt.samples.end());

  const dann::Tensor features = dann::extract_penultimate(net, both);
  std::vector<int> domains, labels;
  for (const auto& s : both.samples) {
    domains.push_back(static_cast<int>(s.domain()));
    labels.push_back(s.has_label() ? s.label() : -1);
  }
  const dann::TsneResult tsne =
      dann::tsne_project(features, domains, labels, cfg.perplexity, cfg.seed);
  dann::write_points_csv(tsne.points, out / "points.csv");

  const double mixing = dann::knn_cross_domain_mixing(tsne.points, 10);
  std::printf("project: %zu points, kl %.4f -> %.4f, knn10 cross-domain mixing %.4f\n",
              tsne.points.size(), tsne.initial_kl, tsne.final_kl, mixing);
  return 0;
}

int cmd_gradcheck(int seeds, double tol) {
  const dann::GradCheckReport report = dann::run_gradient_checks(seeds, tol);
  for (const auto& item : report.items)
    std::printf("%-28s worst_rel_err=%.3e tol=%.0e %s\n", item.name.c_str(),
                item.worst_rel_err, item.tolerance, item.pass ? "ok" : "FAIL");
  std::printf("gradcheck: %s in %.1f s\n", report.all_pass ? "all passed" : "FAILED",
              report.seconds);
  if (!report.all_pass) throw dann::numeric_error("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("GRL_DANN_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) dann::set_max_threads(n);
  }

  CLI::App app{"gradient-reversal domain adaptation trainer for 4-channel RGB-D images"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path, checkpoint;
  bool force = false;
  int gc_seeds = 5;
  double gc_tol = 1e-4;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", cfg.seed, "random seed");
    cmd->add_option("--config", config_path, "JSON config file (flags override)");
    cmd->add_option("--out", cfg.out_dir, "output directory");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic two-domain benchmark");
  add_common(synth);
  synth->add_option("--per-class", cfg.per_class, "samples per class per domain");
  synth->add_option("--shift", cfg.shift, "domain shift strength in [0,1]");
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  CLI::App* train = app.add_subcommand("train", "train on manifests in --data");
  add_common(train);
  train->add_option("--data", cfg.data_dir, "directory with {source,target}_{train,test}.csv");
  train->add_option("--epochs", cfg.epochs, "training epochs");
  train->add_option("--batch-size", cfg.batch_size, "even batch size (half source, half target)");
  train->add_option("--lr-mode", cfg.lr_mode, "inverse_decay or cosine");
  train->add_option("--mu0", cfg.mu0, "initial learning rate");
  train->add_option("--alpha", cfg.alpha, "inverse decay alpha");
  train->add_option("--beta", cfg.beta, "inverse decay beta");
  train->add_option("--momentum", cfg.momentum, "SGD momentum");
  train->add_option("--lambda", cfg.lambda, "scheduled, zero, or a fixed value");

  CLI::App* eval = app.add_subcommand("eval", "confusion matrices for a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--data", cfg.data_dir, "directory with test manifests");

  CLI::App* project = app.add_subcommand("project", "t-SNE of the label predictor's last hidden layer");
  add_common(project);
  project->add_option("--checkpoint", checkpoint, "checkpoint file");
  project->add_option("--data", cfg.data_dir, "directory with test manifests");
  project->add_option("--cap", cfg.cap, "max points per domain");
  project->add_option("--perplexity", cfg.perplexity, "t-SNE perplexity");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  gradcheck->add_option("--seeds", gc_seeds, "number of random seeds");
  gradcheck->add_option("--tol", gc_tol, "relative error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* active = app.get_subcommands().front();
    apply_config_file(config_path, active, cfg);
    if (synth->parsed()) return cmd_synth(cfg, force);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint);
    if (project->parsed()) return cmd_project(cfg, checkpoint);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seeds, gc_tol);
  } catch (const dann::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
