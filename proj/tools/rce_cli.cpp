// Command-line driver: dataset generation, training, latent-space planning,
// evaluation, and the noise-robustness sweep, all reproducible from seeds.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rce/common.hpp"
#include "rce/eval.hpp"
#include "rce/image.hpp"
#include "rce/io.hpp"
#include "rce/model.hpp"
#include "rce/planar_env.hpp"
#include "rce/planner.hpp"
#include "rce/rng.hpp"
#include "rce/train.hpp"

namespace {

namespace fs = std::filesystem;

rce::EnvConfig make_env(const std::string& env_name,
                        const std::string& env_config_path, double sigma) {
  if (env_name != "planar")
    throw rce::ConfigError("unknown environment \"" + env_name +
                           "\" (supported: planar)");
  rce::EnvConfig env;
  if (!env_config_path.empty()) {
    std::ifstream f(env_config_path);
    if (!f) throw rce::IoError("cannot open: " + env_config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw rce::ConfigError(std::string("bad env config: ") + e.what());
    }
    j.get_to(env);
  }
  env.noise_sigma = sigma;
  env.validate();
  return env;
}

std::uint64_t effective_seed(std::uint64_t flag_seed) {
  if (auto env = rce::seed_override_from_env()) return *env;
  return flag_seed;
}

struct PlanPhaseOptions {
  rce::EnvConfig env;
  int runs = 20;
  int steps = 40;
  int horizon = 40;
  int ilqr_iters = 10;
  double eps_goal = 2.0;
  std::uint64_t seed = 0;
  std::string traces_dir;
  std::string frames_dir;
};

struct PlanPhaseResult {
  std::vector<rce::PlanRunRow> rows;
  double success_rate = 0.0;
  rce::eval::MeanStd planning;  // over completed (non-failed) runs
};

// Runs `runs` independent corner-to-corner tasks with receding-horizon
// control: start jittered near one corner, goal near the opposite one, so
// every task crosses the obstacle field.
PlanPhaseResult run_plan_phase(const rce::PixelModel& model,
                               const PlanPhaseOptions& opt) {
  rce::plan::PlanConfig pcfg = rce::plan::PlanConfig::defaults(
      model.latent_dim(), model.action_dim());
  pcfg.horizon = opt.horizon;
  pcfg.ilqr_iters = opt.ilqr_iters;
  pcfg.action_clip = opt.env.max_action;

  rce::plan::Mat Q = rce::plan::Mat::Identity(2, 2);
  rce::plan::Mat R = 0.01 * rce::plan::Mat::Identity(2, 2);

  PlanPhaseResult res;
  std::size_t successes = 0;
  std::vector<double> costs;
  for (int k = 0; k < opt.runs; ++k) {
    rce::Rng rng(rce::derive_seed(opt.seed, 10 + static_cast<std::uint64_t>(k)));
    rce::PlanarTask task = rce::sample_corner_task(opt.env, rng);
    rce::PlanarState s0 = task.start;
    rce::PlanarState g = task.goal;
    rce::plan::ControlTrace trace = rce::plan::receding_horizon_control(
        opt.env, model, s0, g, opt.steps, pcfg, rng.bits());

    rce::PlanRunRow row;
    row.run = k;
    row.failed = trace.failed;
    row.success = rce::eval::run_success(trace, g, opt.eps_goal);
    row.planning_loss = rce::eval::planning_loss(trace, g, Q, R).cost;
    row.final_dist = rce::eval::distance_to(trace.states.back(), g);
    if (row.success) ++successes;
    if (!row.failed) costs.push_back(row.planning_loss);
    res.rows.push_back(row);

    if (!opt.traces_dir.empty()) {
      fs::create_directories(opt.traces_dir);
      std::ofstream tf(opt.traces_dir + "/run" + std::to_string(k) + ".csv",
                       std::ios::trunc);
      tf << "step,x,y,ux,uy,latent_goal_dist\n";
      tf << "0," << trace.states[0].x << ',' << trace.states[0].y << ",,,\n";
      for (std::size_t t = 0; t < trace.actions.size(); ++t)
        tf << (t + 1) << ',' << trace.states[t + 1].x << ','
           << trace.states[t + 1].y << ',' << trace.actions[t][0] << ','
           << trace.actions[t][1] << ',' << trace.latent_goal_dist[t] << "\n";
    }
    if (!opt.frames_dir.empty()) {
      fs::create_directories(opt.frames_dir);
      rce::write_trace_strip(
          opt.frames_dir + "/run" + std::to_string(k) + ".png", opt.env,
          trace.states, g, 5);
    }
  }
  res.success_rate = opt.runs > 0
                         ? static_cast<double>(successes) / opt.runs
                         : 0.0;
  res.planning = rce::eval::mean_std(costs);
  return res;
}

int cmd_gen_data(const std::string& env_name, const std::string& env_config,
                 int n, double sigma, std::uint64_t seed,
                 const std::string& out) {
  rce::EnvConfig env = make_env(env_name, env_config, sigma);
  seed = effective_seed(seed);
  rce::DatasetFile ds;
  ds.env = env;
  ds.seed = seed;
  ds.data = rce::generate_dataset(env, n, seed);
  rce::save_dataset(out, ds);
  std::printf("wrote %zu triples (%dx%d images, sigma=%g) to %s\n",
              ds.data.size(), env.image_side(), env.image_side(),
              env.noise_sigma, out.c_str());
  return 0;
}

struct TrainOverrides {
  std::optional<int> epochs, batch, workers, checkpoint_every;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const std::string& data_path, const std::string& out,
              const std::string& config_path, std::string metrics_path,
              const TrainOverrides& ov) {
  rce::DatasetFile ds = rce::load_dataset(data_path);

  rce::TrainConfig cfg;
  nlohmann::json cfg_json;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw rce::IoError("cannot open: " + config_path);
    try {
      f >> cfg_json;
    } catch (const nlohmann::json::exception& e) {
      throw rce::ConfigError(std::string("bad train config: ") + e.what());
    }
    cfg_json.get_to(cfg);
  }
  if (ov.epochs) cfg.epochs = *ov.epochs;
  if (ov.batch) cfg.batch_size = *ov.batch;
  if (ov.workers) cfg.workers = *ov.workers;
  if (ov.checkpoint_every) cfg.checkpoint_every = *ov.checkpoint_every;
  if (ov.lr) cfg.learning_rate = *ov.lr;
  if (ov.seed) cfg.seed = *ov.seed;
  cfg.seed = effective_seed(cfg.seed);

  // Image and action sizes always come from the dataset; a config that
  // pins different ones is a mistake worth stopping on.
  int ds_nx = ds.env.n_x();
  bool explicit_nx = cfg_json.contains("net") && cfg_json["net"].contains("n_x");
  if (explicit_nx && cfg.net.n_x != ds_nx)
    throw rce::ConfigError("train: config n_x=" + std::to_string(cfg.net.n_x) +
                           " but dataset has n_x=" + std::to_string(ds_nx));
  cfg.net.n_x = ds_nx;
  cfg.net.n_u = 2;
  cfg.validate();

  if (metrics_path.empty()) metrics_path = out + ".metrics.csv";
  std::string hash = rce::config_hash(nlohmann::json{{"cmd", "train"}, {"train", cfg}});
  rce::TrainMetricsWriter metrics(metrics_path, hash, cfg.seed);

  rce::EpochCallback on_epoch = [&](int epoch, const rce::RceParams& params,
                                    const rce::EpochMetrics& m) {
    metrics.append(m);
    std::printf("epoch %d/%d loss %.3f (bce %.3f kl %.3f ent %.3f logp %.3f) %.1fs\n",
                epoch, cfg.epochs, m.mean_loss, m.bce, m.kl, m.entropy, m.logp,
                m.wall_seconds);
    std::fflush(stdout);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
        epoch < cfg.epochs)
      rce::save_checkpoint(out + ".epoch" + std::to_string(epoch), params, cfg,
                           epoch);
  };

  rce::TrainResult result = rce::train(ds.data, cfg, on_epoch);
  rce::save_checkpoint(out, result.params, cfg, cfg.epochs);
  std::printf("trained %d epochs on %zu triples, final loss %.3f, saved %s\n",
              cfg.epochs, ds.data.size(), result.metrics.back().mean_loss,
              out.c_str());
  return 0;
}

int cmd_plan(const std::string& ckpt_path, const std::string& env_name,
             const std::string& env_config, double sigma,
             const std::string& report, PlanPhaseOptions opt) {
  rce::Checkpoint ck = rce::load_checkpoint(ckpt_path);
  opt.env = make_env(env_name, env_config, sigma);
  if (opt.env.n_x() != ck.params.net.n_x)
    throw rce::ConfigError("plan: environment images have " +
                           std::to_string(opt.env.n_x()) +
                           " pixels but the model expects " +
                           std::to_string(ck.params.net.n_x));
  opt.seed = effective_seed(opt.seed);
  rce::RceModelView model(ck.params);
  PlanPhaseResult res = run_plan_phase(model, opt);

  std::string hash = rce::config_hash(nlohmann::json{
      {"cmd", "plan"}, {"env", opt.env}, {"runs", opt.runs},
      {"steps", opt.steps}, {"horizon", opt.horizon},
      {"ilqr_iters", opt.ilqr_iters}, {"eps_goal", opt.eps_goal},
      {"net", ck.params.net}});
  rce::write_plan_report(report, hash, opt.seed, res.rows, res.success_rate);
  std::printf("%d runs: success rate %.2f, mean planning loss %.2f, report %s\n",
              opt.runs, res.success_rate, res.planning.mean, report.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& report, std::uint64_t seed) {
  rce::Checkpoint ck = rce::load_checkpoint(ckpt_path);
  rce::DatasetFile ds = rce::load_dataset(data_path);
  if (ds.env.n_x() != ck.params.net.n_x)
    throw rce::ConfigError("eval: dataset images have " +
                           std::to_string(ds.env.n_x()) +
                           " pixels but the model expects " +
                           std::to_string(ck.params.net.n_x));
  seed = effective_seed(seed);
  rce::RceModelView model(ck.params);
  std::vector<std::pair<std::string, rce::eval::MeanStd>> metrics{
      {"reconstruction", rce::eval::reconstruction_loss(model, ds.data)},
      {"prediction", rce::eval::prediction_loss(model, ds.data)}};
  std::string hash = rce::config_hash(
      nlohmann::json{{"cmd", "eval"}, {"net", ck.params.net}, {"env", ds.env}});
  rce::write_eval_report(report, hash, seed, metrics);
  for (const auto& [name, m] : metrics)
    std::printf("%s: mean %.3f std %.3f (n=%zu)\n", name.c_str(), m.mean,
                m.std, m.n);
  return 0;
}

struct SweepOptions {
  std::vector<double> sigmas{0.0, 1.0, 2.0, 5.0};
  int n_train = 5000;
  int n_test = 1000;
  int runs = 20;
  int steps = 40;
  int horizon = 40;
  int ilqr_iters = 10;
  double eps_goal = 2.0;
  int epochs = 50;
  double lr = 1e-4;
  int batch = 128;
  int workers = 1;
  std::uint64_t seed = 0;
  std::string out;
  std::string workdir;
};

int cmd_sweep(SweepOptions so) {
  so.seed = effective_seed(so.seed);
  if (so.workdir.empty()) {
    fs::path p = fs::path(so.out).parent_path() / "sweep_work";
    so.workdir = p.string();
  }
  fs::create_directories(so.workdir);

  rce::TrainConfig base;
  base.epochs = so.epochs;
  base.learning_rate = so.lr;
  base.batch_size = so.batch;
  base.workers = so.workers;

  std::vector<rce::SweepRow> rows;
  for (std::size_t i = 0; i < so.sigmas.size(); ++i) {
    double sigma = so.sigmas[i];
    std::printf("== sigma %g ==\n", sigma);
    rce::EnvConfig env = make_env("planar", "", sigma);

    rce::DatasetFile train_ds;
    train_ds.env = env;
    train_ds.seed = rce::derive_seed(so.seed, 2 * i);
    train_ds.data = rce::generate_dataset(env, so.n_train, train_ds.seed);
    rce::DatasetFile test_ds;
    test_ds.env = env;
    test_ds.seed = rce::derive_seed(so.seed, 2 * i + 1);
    test_ds.data = rce::generate_dataset(env, so.n_test, test_ds.seed);

    rce::TrainConfig cfg = base;
    cfg.seed = rce::derive_seed(so.seed, 1000 + i);
    cfg.net.n_x = env.n_x();
    cfg.net.n_u = 2;
    cfg.validate();

    std::string tag = "sigma" + std::to_string(i);
    std::string ckpt = so.workdir + "/" + tag + ".ckpt";
    std::string hash =
        rce::config_hash(nlohmann::json{{"cmd", "sweep"}, {"train", cfg}});
    rce::TrainMetricsWriter metrics(so.workdir + "/" + tag + ".metrics.csv",
                                    hash, cfg.seed);
    rce::TrainResult result = rce::train(
        train_ds.data, cfg,
        [&](int epoch, const rce::RceParams&, const rce::EpochMetrics& m) {
          metrics.append(m);
          std::printf("epoch %d/%d loss %.3f %.1fs\n", epoch, cfg.epochs,
                      m.mean_loss, m.wall_seconds);
          std::fflush(stdout);
        });
    rce::save_checkpoint(ckpt, result.params, cfg, cfg.epochs);

    rce::RceModelView model(result.params);
    rce::SweepRow row;
    row.sigma = sigma;
    row.n_train = train_ds.data.size();
    row.reconstruction = rce::eval::reconstruction_loss(model, test_ds.data);
    row.prediction = rce::eval::prediction_loss(model, test_ds.data);

    PlanPhaseOptions popt;
    popt.env = env;
    popt.runs = so.runs;
    popt.steps = so.steps;
    popt.horizon = so.horizon;
    popt.ilqr_iters = so.ilqr_iters;
    popt.eps_goal = so.eps_goal;
    popt.seed = rce::derive_seed(so.seed, 2000 + i);
    PlanPhaseResult pres = run_plan_phase(model, popt);
    row.planning = pres.planning;
    row.success_rate = pres.success_rate;
    row.runs = so.runs;
    rows.push_back(row);
    std::printf("sigma %g: recon %.2f pred %.2f plan %.2f success %.2f\n",
                sigma, row.reconstruction.mean, row.prediction.mean,
                row.planning.mean, row.success_rate);
  }

  nlohmann::json hj{{"cmd", "sweep"},     {"sigmas", so.sigmas},
                    {"n_train", so.n_train}, {"n_test", so.n_test},
                    {"runs", so.runs},    {"steps", so.steps},
                    {"horizon", so.horizon}, {"ilqr_iters", so.ilqr_iters},
                    {"eps_goal", so.eps_goal}, {"epochs", so.epochs},
                    {"lr", so.lr},        {"batch", so.batch}};
  rce::write_sweep_report(so.out, rce::config_hash(hj), so.seed, rows);
  std::printf("sweep report written to %s\n", so.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locally-linear latent embedding of pixels, with planning"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Sample observation triples");
  std::string g_env = "planar", g_env_config, g_out;
  int g_n = 5000;
  double g_sigma = 0.0;
  std::uint64_t g_seed = 0;
  gen->add_option("--env", g_env, "Environment name")->capture_default_str();
  gen->add_option("--env-config", g_env_config, "Environment config JSON");
  gen->add_option("--n", g_n, "Number of triples")->capture_default_str();
  gen->add_option("--sigma", g_sigma, "Transition noise std dev")
      ->capture_default_str();
  gen->add_option("--seed", g_seed, "Random seed")->capture_default_str();
  gen->add_option("--out", g_out, "Output dataset path")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the embedding");
  std::string t_data, t_out, t_config, t_metrics;
  TrainOverrides t_ov;
  int t_epochs = 0, t_batch = 0, t_workers = 0, t_ckpt_every = 0;
  double t_lr = 0.0;
  std::uint64_t t_seed = 0;
  tr->add_option("--data", t_data, "Dataset path")->required();
  tr->add_option("--out", t_out, "Checkpoint output path")->required();
  tr->add_option("--config", t_config, "Training config JSON");
  tr->add_option("--metrics", t_metrics,
                 "Metrics CSV path (default: <out>.metrics.csv)");
  auto* o_epochs = tr->add_option("--epochs", t_epochs, "Training epochs");
  auto* o_lr = tr->add_option("--lr", t_lr, "Learning rate");
  auto* o_batch = tr->add_option("--batch", t_batch, "Batch size");
  auto* o_seed = tr->add_option("--seed", t_seed, "Random seed");
  auto* o_workers = tr->add_option("--workers", t_workers, "Gradient worker threads");
  auto* o_ck = tr->add_option("--checkpoint-every", t_ckpt_every,
                              "Epochs between snapshots (0 = final only)");

  // plan
  auto* pl = app.add_subcommand("plan", "Plan to goals with the trained model");
  std::string p_ckpt, p_env = "planar", p_env_config, p_report;
  double p_sigma = 0.0;
  PlanPhaseOptions p_opt;
  pl->add_option("--ckpt", p_ckpt, "Checkpoint path")->required();
  pl->add_option("--env", p_env, "Environment name")->capture_default_str();
  pl->add_option("--env-config", p_env_config, "Environment config JSON");
  pl->add_option("--sigma", p_sigma, "Transition noise std dev")
      ->capture_default_str();
  pl->add_option("--runs", p_opt.runs, "Number of start/goal tasks")
      ->capture_default_str();
  pl->add_option("--steps", p_opt.steps, "Executed steps per task")
      ->capture_default_str();
  pl->add_option("--horizon", p_opt.horizon, "Planning horizon")
      ->capture_default_str();
  pl->add_option("--ilqr-iters", p_opt.ilqr_iters, "Planner iterations")
      ->capture_default_str();
  pl->add_option("--eps-goal", p_opt.eps_goal, "Success ball radius")
      ->capture_default_str();
  pl->add_option("--seed", p_opt.seed, "Random seed")->capture_default_str();
  pl->add_option("--traces-dir", p_opt.traces_dir, "Write per-run CSV traces");
  pl->add_option("--frames-dir", p_opt.frames_dir, "Write per-run PNG strips");
  pl->add_option("--report", p_report, "Report CSV path")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Reconstruction and prediction losses");
  std::string e_ckpt, e_data, e_report;
  std::uint64_t e_seed = 0;
  ev->add_option("--ckpt", e_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", e_data, "Dataset path")->required();
  ev->add_option("--seed", e_seed, "Seed recorded in the report")
      ->capture_default_str();
  ev->add_option("--report", e_report, "Report CSV path")->required();

  // sweep
  auto* sw = app.add_subcommand(
      "sweep", "Train and evaluate across noise levels");
  SweepOptions s_opt;
  sw->add_option("--sigmas", s_opt.sigmas, "Noise levels")
      ->delimiter(',')
      ->capture_default_str();
  sw->add_option("--n", s_opt.n_train, "Training triples per level")
      ->capture_default_str();
  sw->add_option("--n-test", s_opt.n_test, "Test triples per level")
      ->capture_default_str();
  sw->add_option("--runs", s_opt.runs, "Planning tasks per level")
      ->capture_default_str();
  sw->add_option("--steps", s_opt.steps, "Executed steps per task")
      ->capture_default_str();
  sw->add_option("--horizon", s_opt.horizon, "Planning horizon")
      ->capture_default_str();
  sw->add_option("--ilqr-iters", s_opt.ilqr_iters, "Planner iterations")
      ->capture_default_str();
  sw->add_option("--eps-goal", s_opt.eps_goal, "Success ball radius")
      ->capture_default_str();
  sw->add_option("--epochs", s_opt.epochs, "Training epochs")
      ->capture_default_str();
  sw->add_option("--lr", s_opt.lr, "Learning rate")->capture_default_str();
  sw->add_option("--batch", s_opt.batch, "Batch size")->capture_default_str();
  sw->add_option("--workers", s_opt.workers, "Gradient worker threads")
      ->capture_default_str();
  sw->add_option("--seed", s_opt.seed, "Random seed")->capture_default_str();
  sw->add_option("--workdir", s_opt.workdir,
                 "Directory for intermediate files");
  sw->add_option("--out", s_opt.out, "Sweep report CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(g_env, g_env_config, g_n, g_sigma, g_seed, g_out);
    if (tr->parsed()) {
      if (o_epochs->count()) t_ov.epochs = t_epochs;
      if (o_lr->count()) t_ov.lr = t_lr;
      if (o_batch->count()) t_ov.batch = t_batch;
      if (o_seed->count()) t_ov.seed = t_seed;
      if (o_workers->count()) t_ov.workers = t_workers;
      if (o_ck->count()) t_ov.checkpoint_every = t_ckpt_every;
      return cmd_train(t_data, t_out, t_config, t_metrics, t_ov);
    }
    if (pl->parsed())
      return cmd_plan(p_ckpt, p_env, p_env_config, p_sigma, p_report, p_opt);
    if (ev->parsed()) return cmd_eval(e_ckpt, e_data, e_report, e_seed);
    if (sw->parsed()) return cmd_sweep(s_opt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
