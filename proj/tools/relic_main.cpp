// relic: train / evaluate / probe in-context RL policies on Darkroom.
//
//   relic train   --config cfg.json [--set k=v ...] [--seed N] [--out DIR]
//   relic train   --checkpoint ck.bin [--out DIR]            (resume)
//   relic eval    --checkpoint ck.bin [--set eval.trials=200 ...]
//   relic fewshot --checkpoint ck.bin [--set eval.demos=4 ...]
//   relic probe   --checkpoint ck.bin [--set eval.episodes=40 ...]
//   relic plot    metrics.jsonl [more.jsonl ...] --out prefix [--kind eval|training]
//
// Exit code 0 on success; otherwise 1 with "error: <class>: <detail>" on stderr.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <relic/relic.hpp>

namespace {

using relic::json;

json load_config_file(const std::string& path) {
  std::ifstream is(path);
  relic::check(is.is_open(), "config/io", "cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  if (std::all_of(text.begin(), text.end(),
                  [](unsigned char c) { return std::isspace(c) != 0; }))
    return json::object();
  json j = json::parse(text, nullptr, false);
  relic::check(!j.is_discarded(), "config/parse", path + " is not valid JSON");
  relic::check(j.is_object(), "config/parse", path + ": top level must be an object");
  return j;
}

struct CommonOpts {
  std::string config_path, checkpoint_path, out_dir;
  std::vector<std::string> sets;
  int64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (JSON; empty file = defaults)");
    cmd->add_option("--set", sets, "config override key=value (repeatable)")
        ->type_size(1)
        ->allow_extra_args(false);
    seed_opt = cmd->add_option("--seed", seed, "experiment seed");
    cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file");
    cmd->add_option("--out", out_dir, "output directory");
  }
  bool has_seed() const { return seed_opt != nullptr && seed_opt->count() > 0; }
};

relic::ExperimentConfig build_config(const json& base, const CommonOpts& o) {
  json root = base;
  for (const auto& kv : o.sets) relic::apply_override(root, kv);
  relic::ExperimentConfig cfg;
  relic::apply_json(cfg, root);
  if (o.has_seed()) cfg.seed = static_cast<uint64_t>(o.seed);
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  relic::finalize_config(cfg);
  return cfg;
}

void echo_config(const relic::ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/" + name;
  std::ofstream os(path, std::ios::trunc);
  relic::check(os.is_open(), "config/io", "cannot write " + path);
  os << relic::to_json(cfg).dump(2) << "\n";
  relic::check(static_cast<bool>(os), "config/io", "write failed for " + path);
}

// Fresh policy with the checkpoint's weights dropped in.
relic::Policy<float> restore_policy(const relic::ExperimentConfig& cfg,
                                    const relic::Checkpoint<float>& ck) {
  relic::Policy<float> policy(cfg.model);
  policy.init(cfg.seed);
  relic::match_param_shapes(policy.params, ck.params);
  policy.params = ck.params;
  return policy;
}

double vec_mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double vec_stderr(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = vec_mean(v);
  double sq = 0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(v.size() - 1)) /
         std::sqrt(static_cast<double>(v.size()));
}

int run_train(const CommonOpts& o) {
  std::optional<relic::Checkpoint<float>> ck;
  if (!o.checkpoint_path.empty()) ck = relic::load_checkpoint<float>(o.checkpoint_path);
  json base = json::object();
  if (!o.config_path.empty())
    base = load_config_file(o.config_path);
  else if (ck)
    base = ck->config;
  const auto cfg = build_config(base, o);
  echo_config(cfg, "config.json");

  relic::Trainer<float> trainer(cfg);
  if (ck)
    trainer.resume(*ck);
  else
    trainer.init_fresh();
  relic::MetricsWriter mw(cfg.out_dir + "/metrics.jsonl");
  trainer.run(cfg.out_dir, &mw);
  std::cout << json{{"kind", "train-done"},
                    {"env_steps", trainer.env_steps()},
                    {"rollouts", trainer.rollout_index()},
                    {"mean_return_so_far", trainer.mean_return_so_far()},
                    {"out", cfg.out_dir}}
                   .dump()
            << "\n";
  return 0;
}

int run_eval(const CommonOpts& o) {
  relic::check(!o.checkpoint_path.empty(), "cli/missing_checkpoint", "eval needs --checkpoint");
  const auto ck = relic::load_checkpoint<float>(o.checkpoint_path);
  const json base = o.config_path.empty() ? ck.config : load_config_file(o.config_path);
  const auto cfg = build_config(base, o);
  auto policy = restore_policy(cfg, ck);

  relic::TrialMetrics tm;
  if (cfg.eval.context_multiplier > 1) {
    const int train_eps = std::max(1, cfg.train.rollout_len / cfg.env.horizon);
    tm = relic::context_generalization_eval(policy, cfg.env, cfg.eval.trials, train_eps,
                                            cfg.eval.context_multiplier, cfg.seed,
                                            cfg.eval.argmax, cfg.eval.threads);
  } else {
    tm = relic::evaluate_trials(policy, cfg.env, cfg.eval.trials, cfg.eval.episodes, cfg.seed,
                                cfg.eval.argmax, cfg.eval.threads);
  }

  echo_config(cfg, "config.eval.json");
  relic::MetricsWriter mw(cfg.out_dir + "/metrics.jsonl");
  json payload{{"trials", tm.trials},
               {"episodes", tm.episodes},
               {"context_len", tm.context_len},
               {"argmax", cfg.eval.argmax},
               {"mean_return", tm.raw.mean()},
               {"per_episode_mean", tm.mean_return},
               {"per_episode_stderr", tm.stderr_return}};
  mw.write("eval-trial", ck.env_steps, payload);

  relic::Series s;
  s.label = "return @" + std::to_string(ck.env_steps) + " steps";
  for (int e = 0; e < tm.episodes; ++e) {
    s.x.push_back(e + 1);
    s.y.push_back(tm.mean_return[static_cast<size_t>(e)]);
  }
  relic::write_line_chart_svg(cfg.out_dir + "/eval_curve.svg", "Return vs in-context episode",
                              "episode", "mean return", {s});
  relic::write_series_csv(cfg.out_dir + "/eval_curve.csv", {s});

  json summary{{"kind", "eval"},
               {"trials", tm.trials},
               {"episodes", tm.episodes},
               {"mean_return", tm.raw.mean()},
               {"ep_first", tm.mean_return.front()},
               {"ep_final", tm.mean_return.back()}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int run_fewshot(const CommonOpts& o) {
  relic::check(!o.checkpoint_path.empty(), "cli/missing_checkpoint", "fewshot needs --checkpoint");
  const auto ck = relic::load_checkpoint<float>(o.checkpoint_path);
  const json base = o.config_path.empty() ? ck.config : load_config_file(o.config_path);
  const auto cfg = build_config(base, o);
  auto policy = restore_policy(cfg, ck);

  const int trials = cfg.eval.fewshot_trials;
  const auto with = relic::few_shot_returns(policy, cfg.env, cfg.eval.demos, trials, cfg.seed,
                                            cfg.eval.argmax, cfg.eval.threads);
  const auto zero = relic::few_shot_returns(policy, cfg.env, 0, trials, cfg.seed,
                                            cfg.eval.argmax, cfg.eval.threads);

  echo_config(cfg, "config.fewshot.json");
  relic::MetricsWriter mw(cfg.out_dir + "/metrics.jsonl");
  mw.write("eval-trial", ck.env_steps,
           json{{"trials", trials},
                {"episodes", 1},
                {"demos", cfg.eval.demos},
                {"mean_return", vec_mean(with)},
                {"stderr_return", vec_stderr(with)}});
  mw.write("eval-trial", ck.env_steps,
           json{{"trials", trials},
                {"episodes", 1},
                {"demos", 0},
                {"mean_return", vec_mean(zero)},
                {"stderr_return", vec_stderr(zero)}});

  json summary{{"kind", "fewshot"},
               {"trials", trials},
               {"demos", cfg.eval.demos},
               {"mean_with_demos", vec_mean(with)},
               {"mean_without_demos", vec_mean(zero)},
               {"delta", vec_mean(with) - vec_mean(zero)}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int run_probe(const CommonOpts& o) {
  relic::check(!o.checkpoint_path.empty(), "cli/missing_checkpoint", "probe needs --checkpoint");
  const auto ck = relic::load_checkpoint<float>(o.checkpoint_path);
  const json base = o.config_path.empty() ? ck.config : load_config_file(o.config_path);
  const auto cfg = build_config(base, o);
  auto policy = restore_policy(cfg, ck);

  const int episodes = cfg.eval.episodes;
  const int qb = (episodes - 1) * cfg.env.horizon;
  const int qe = episodes * cfg.env.horizon;
  const auto heads = relic::attention_probe(
      policy, cfg.env, relic::derive_seed(cfg.seed, relic::rng_domain::kEvalTrial, 0),
      relic::derive_seed(cfg.seed, relic::rng_domain::kEvalPolicy, 0), episodes, qb, qe,
      cfg.eval.argmax);

  echo_config(cfg, "config.probe.json");
  json arr = json::array();
  for (const auto& h : heads) {
    arr.push_back(json{{"layer", h.layer},
                       {"head", h.head},
                       {"sink", h.sink},
                       {"same_episode", h.same_episode},
                       {"earlier_episode", h.earlier_episode},
                       {"class", h.cls}});
    std::cout << "layer " << h.layer << " head " << h.head << ": sink=" << h.sink
              << " same=" << h.same_episode << " earlier=" << h.earlier_episode
              << " class=" << h.cls << "\n";
  }
  relic::MetricsWriter mw(cfg.out_dir + "/metrics.jsonl");
  mw.write("probe", ck.env_steps,
           json{{"episodes", episodes},
                {"query_begin", qb},
                {"query_end", qe},
                {"heads", arr}});
  return 0;
}

int run_plot(const std::vector<std::string>& files, const std::string& out,
             const std::string& kind) {
  std::vector<relic::Series> series;
  std::string title, xlab, ylab;
  if (kind == "training") {
    series = relic::training_series_from_metrics(files);
    title = "Mean episode return during training";
    xlab = "env step";
    ylab = "mean return";
  } else {
    series = relic::eval_series_from_metrics(files);
    title = "Return vs in-context episode";
    xlab = "episode";
    ylab = "mean return";
  }
  relic::check(!series.empty(), "plot/empty", "no matching records in the given metrics files");
  relic::write_line_chart_svg(out + ".svg", title, xlab, ylab, series);
  relic::write_series_csv(out + ".csv", series);
  std::cout << "wrote " << out << ".svg and " << out << ".csv (" << series.size()
            << " series)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"in-context RL workbench (Darkroom)"};
  app.require_subcommand(1);

  CommonOpts train_o, eval_o, fewshot_o, probe_o;
  auto* train_cmd = app.add_subcommand("train", "train a policy");
  train_o.attach(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate in-context learning over trials");
  eval_o.attach(eval_cmd);
  auto* fewshot_cmd = app.add_subcommand("fewshot", "first-episode return with oracle demos");
  fewshot_o.attach(fewshot_cmd);
  auto* probe_cmd = app.add_subcommand("probe", "attention-mass head profile");
  probe_o.attach(probe_cmd);

  auto* plot_cmd = app.add_subcommand("plot", "render charts from metrics files");
  std::vector<std::string> plot_files;
  std::string plot_out = "plot", plot_kind = "eval";
  plot_cmd->add_option("files", plot_files, "metrics files (JSONL)")->required();
  plot_cmd->add_option("--out", plot_out, "output path prefix (.svg/.csv appended)");
  plot_cmd->add_option("--kind", plot_kind, "chart kind")
      ->check(CLI::IsMember({"eval", "training"}));

  try {
    app.parse(argc, argv);
    if (*train_cmd) return run_train(train_o);
    if (*eval_cmd) return run_eval(eval_o);
    if (*fewshot_cmd) return run_fewshot(fewshot_o);
    if (*probe_cmd) return run_probe(probe_o);
    if (*plot_cmd) return run_plot(plot_files, plot_out, plot_kind);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const relic::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
