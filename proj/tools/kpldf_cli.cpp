// kpldf: generate, label, train on, and evaluate knapsack datasets.
//
// Subcommands:
//   generate  draw a capacity-graded dataset and write it as JSON lines
//   solve     fill in exact labels with the branch-and-bound solver
//   train     run one training configuration, writing checkpoints + logs
//   evaluate  quintile report for a checkpoint on a dataset split
//   predict   stream instance JSON lines through a checkpoint
//   grid      expand a hyperparameter grid into child train runs
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kpldf/checkpoint.hpp"
#include "kpldf/dataset_io.hpp"
#include "kpldf/eval.hpp"
#include "kpldf/instance.hpp"
#include "kpldf/ldf.hpp"
#include "kpldf/nn.hpp"
#include "kpldf/solver.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

const std::vector<std::uint64_t>& split_indices(const kpldf::Dataset& ds,
                                                const std::string& name) {
  if (name == "train") return ds.split.train;
  if (name == "val") return ds.split.val;
  if (name == "test") return ds.split.test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

int cmd_generate(std::size_t n_items, std::size_t n_instances,
                 std::uint64_t seed, const std::string& out) {
  kpldf::Dataset ds = kpldf::generate_dataset(n_items, n_instances, seed);
  kpldf::write_dataset(ds, out);
  std::cout << "generated " << ds.items.size() << " instances, " << n_items
            << " items each\n"
            << "split: train=" << ds.split.train.size()
            << " val=" << ds.split.val.size()
            << " test=" << ds.split.test.size() << "\n"
            << "wrote " << out << "\n";
  return 0;
}

int cmd_solve(const std::string& in, const std::string& out,
              unsigned n_threads) {
  kpldf::Dataset ds = kpldf::read_dataset(in);
  const std::size_t unlabeled = static_cast<std::size_t>(
      std::count_if(ds.items.begin(), ds.items.end(),
                    [](const kpldf::LabeledInstance& li) { return !li.labeled(); }));
  if (unlabeled == 0) {
    std::cout << "all " << ds.items.size()
              << " instances already labeled; copying through\n";
    kpldf::write_dataset(ds, out);
    return 0;
  }
  const auto t0 = std::chrono::steady_clock::now();
  ds = kpldf::label_dataset(std::move(ds), n_threads);
  const double secs = seconds_since(t0);
  kpldf::write_dataset(ds, out);
  std::cout << "labeled " << unlabeled << " instances in " << secs << " s ("
            << 1000.0 * secs / static_cast<double>(unlabeled)
            << " ms/instance mean)\n"
            << "wrote " << out << "\n";
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& out_dir, const json& overrides,
              bool seed_given) {
  kpldf::ldf::TrainConfig cfg;
  bool config_has_seed = false;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot open config: " + config_path);
    json j = json::parse(f);
    config_has_seed = j.contains("seed");
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
      j[it.key()] = it.value();
    }
    cfg = kpldf::ldf::config_from_json(j);
  } else {
    if (!overrides.contains("regime")) {
      std::cerr << "train: --regime is required when no --config is given\n";
      return 2;
    }
    cfg = kpldf::ldf::config_from_json(overrides);
  }
  if (!seed_given && !config_has_seed) {
    std::cerr << "train: a seed is required (--seed or \"seed\" in the config)\n";
    return 2;
  }
  cfg = kpldf::ldf::canonicalize(cfg);

  kpldf::Dataset ds = kpldf::read_dataset(data_path);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  {
    std::ofstream f(dir / "config.json");
    f << kpldf::ldf::config_to_json(cfg).dump(2) << "\n";
  }

  std::ofstream log_stream(dir / "epoch_log.jsonl", std::ios::trunc);
  if (!log_stream) {
    throw std::runtime_error("cannot open " + (dir / "epoch_log.jsonl").string());
  }
  const auto t0 = std::chrono::steady_clock::now();
  kpldf::ldf::TrainResult res =
      kpldf::ldf::train(ds, cfg, [&](const kpldf::ldf::EpochLog& e) {
        log_stream << kpldf::ldf::epoch_log_to_json(e).dump() << "\n";
        log_stream.flush();
        std::cerr << "epoch " << e.epoch << "/" << cfg.n_epochs
                  << " lambda=" << e.lambda << " train_loss=" << e.train_loss
                  << " val_ar=" << e.val_ar << " val_mu=" << e.val_mu_loss
                  << " viol_rate=" << e.val_violation_rate << "\n";
      });
  const double total_s = seconds_since(t0);

  const std::string hash = kpldf::ldf::config_hash(cfg);
  kpldf::write_checkpoint(dir / "best.ldfm", res.best_params);
  kpldf::write_checkpoint_sidecar(dir / "best.json", res.best_epoch,
                                  res.multiplier.lambda, hash);
  kpldf::write_checkpoint(dir / "final.ldfm", res.params);
  kpldf::write_checkpoint_sidecar(dir / "final.json", res.log.size(),
                                  res.multiplier.lambda, hash);

  ordered_json summary;
  summary["regime"] = kpldf::ldf::regime_name(cfg.regime);
  summary["epochs_run"] = res.log.size();
  summary["converged"] = res.converged;
  summary["convergence_epoch"] = res.convergence_epoch;
  summary["pretrain_end"] = res.pretrain_end;
  summary["best_epoch"] = res.best_epoch;
  summary["best_val_metric"] = res.best_metric;
  summary["final_lambda"] = res.multiplier.lambda;
  summary["wall_clock_s"] = total_s;
  summary["config_hash"] = hash;
  {
    std::ofstream f(dir / "summary.json");
    f << summary.dump(2) << "\n";
  }

  if (res.converged) {
    std::cout << "epochs_to_convergence: " << res.convergence_epoch;
    if (res.pretrain_end > 0) {
      std::cout << " (pretrain ended at epoch " << res.pretrain_end << ")";
    }
    std::cout << "\n";
  } else {
    std::cout << "epochs_to_convergence: not converged (ran "
              << res.log.size() << " epochs)\n";
  }
  std::cout << "best_epoch: " << res.best_epoch
            << " best_val_metric: " << res.best_metric << "\n"
            << "wall_clock_s: " << total_s << "\n"
            << "outputs: " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_path,
                 const std::string& split, const std::string& format) {
  kpldf::nn::ModelParams params = kpldf::read_checkpoint(checkpoint);
  kpldf::Dataset ds = kpldf::read_dataset(data_path);
  const auto& indices = split_indices(ds, split);
  if (indices.empty()) {
    throw std::runtime_error("split '" + split + "' is empty in " + data_path);
  }
  for (std::uint64_t idx : indices) {
    if (!ds.items.at(idx).labeled()) {
      throw std::runtime_error("instance " +
                               std::to_string(ds.items[idx].instance.id) +
                               " in split '" + split + "' is unlabeled");
    }
  }
  kpldf::eval::EvalReport rep = kpldf::eval::evaluate(params, ds, indices);
  if (format == "json") {
    std::cout << kpldf::eval::report_to_json(rep).dump(2) << "\n";
  } else {
    std::cout << kpldf::eval::render_table(rep);
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint) {
  kpldf::nn::ModelParams params = kpldf::read_checkpoint(checkpoint);
  std::string line;
  std::size_t line_no = 0, n_predicted = 0;
  double total_forward_s = 0.0;
  std::uint64_t next_id = 0;
  while (std::getline(std::cin, line)) {
    ++line_no;
    if (line.empty()) continue;
    json o;
    try {
      o = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("stdin:" + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    kpldf::LabeledInstance li;
    try {
      li.instance.id = o.contains("id") ? o.at("id").get<std::uint64_t>() : next_id;
      li.instance.weights = o.at("w").get<std::vector<double>>();
      li.instance.values = o.at("v").get<std::vector<double>>();
      li.instance.capacity = o.at("W").get<double>();
    } catch (const json::exception& e) {
      throw std::runtime_error("stdin:" + std::to_string(line_no) +
                               ": bad instance: " + e.what());
    }
    next_id = li.instance.id + 1;
    kpldf::validate_instance(li.instance);
    if (li.instance.size() != params.n_items) {
      throw std::runtime_error("stdin:" + std::to_string(line_no) +
                               ": instance has " +
                               std::to_string(li.instance.size()) +
                               " items, model expects " +
                               std::to_string(params.n_items));
    }

    std::vector<const kpldf::LabeledInstance*> batch{&li};
    const auto t0 = std::chrono::steady_clock::now();
    const kpldf::nn::Matrix X = kpldf::nn::make_input_matrix(batch);
    const kpldf::nn::ForwardTrace t = kpldf::nn::forward_eval(params, X);
    total_forward_s += seconds_since(t0);
    ++n_predicted;

    const std::vector<std::uint8_t> x = kpldf::eval::rounded_row(t.rounded, 0);
    ordered_json out;
    out["id"] = li.instance.id;
    out["x"] = x;
    out["objective"] = kpldf::selection_value(x, li.instance);
    out["violation"] = std::max(
        0.0, kpldf::selection_weight(x, li.instance) - li.instance.capacity);
    std::cout << out.dump() << "\n";
  }
  if (n_predicted > 0) {
    std::cerr << "predicted " << n_predicted << " instances, "
              << 1000.0 * total_forward_s / static_cast<double>(n_predicted)
              << " ms/instance mean forward latency\n";
  }
  return 0;
}

std::string format_param(double v) {
  std::ostringstream os;
  os << v;
  std::string s = os.str();
  for (char& c : s) {
    if (c == '.' || c == '+') c = 'p';
    if (c == '-') c = 'm';
  }
  return s;
}

int cmd_grid(const std::string& self, const std::string& data_path,
             const std::string& grid_path, const std::string& out_dir) {
  std::ifstream f(grid_path);
  if (!f) throw std::runtime_error("cannot open grid file: " + grid_path);
  json doc = json::parse(f);
  if (!doc.contains("base") || !doc.contains("grid")) {
    std::cerr << "grid file needs top-level \"base\" and \"grid\" objects\n";
    return 2;
  }
  const json base = doc.at("base");
  const json grid = doc.at("grid");
  auto axis = [&grid](const char* name) -> std::vector<double> {
    if (!grid.contains(name)) return {};
    return grid.at(name).get<std::vector<double>>();
  };
  const std::vector<double> lrs = axis("learning_rate");
  const std::vector<double> steps = axis("lagrangian_step");
  const std::vector<double> norms = axis("max_grad_norm");
  auto or_single = [](const std::vector<double>& v) {
    return v.empty() ? std::vector<double>{std::numeric_limits<double>::quiet_NaN()}
                     : v;
  };

  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "grid_manifest.jsonl",
                         std::ios::trunc);
  int n_failed = 0;
  for (double lr : or_single(lrs)) {
    for (double s : or_single(steps)) {
      for (double gn : or_single(norms)) {
        json cfg = base;
        std::string tag = "run";
        if (!std::isnan(lr)) {
          cfg["learning_rate"] = lr;
          tag += "_lr" + format_param(lr);
        }
        if (!std::isnan(s)) {
          cfg["lagrangian_step"] = s;
          tag += "_s" + format_param(s);
        }
        if (!std::isnan(gn)) {
          cfg["max_grad_norm"] = gn;
          tag += "_gn" + format_param(gn);
        }
        const fs::path run_dir = fs::path(out_dir) / tag;
        fs::create_directories(run_dir);
        const fs::path cfg_path = run_dir / "config_in.json";
        {
          std::ofstream cf(cfg_path);
          cf << cfg.dump(2) << "\n";
        }
        const std::string cmd = self + " train --data " + data_path +
                                " --config " + cfg_path.string() + " --out " +
                                run_dir.string() + " > " +
                                (run_dir / "stdout.txt").string() + " 2> " +
                                (run_dir / "stderr.txt").string();
        std::cout << "running " << tag << "...\n" << std::flush;
        const int rc = std::system(cmd.c_str());
        if (rc != 0) ++n_failed;

        ordered_json row;
        row["dir"] = run_dir.string();
        row["config"] = cfg;
        row["exit_code"] = rc;
        const fs::path summary = run_dir / "summary.json";
        if (rc == 0 && fs::exists(summary)) {
          std::ifstream sf(summary);
          row["summary"] = json::parse(sf);
        }
        manifest << row.dump() << "\n";
        manifest.flush();
      }
    }
  }
  std::cout << "grid complete; manifest at "
            << (fs::path(out_dir) / "grid_manifest.jsonl").string() << "\n";
  return n_failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knapsack predictor toolkit: dataset generation, exact "
               "labeling, Lagrangian-dual training, and evaluation"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "generate a dataset file");
  std::size_t g_items = 500, g_count = 30000;
  std::uint64_t g_seed = 0;
  std::string g_out;
  gen->add_option("--n-items", g_items, "items per instance")->check(CLI::PositiveNumber);
  gen->add_option("--n-instances", g_count, "number of instances")->check(CLI::PositiveNumber);
  gen->add_option("--seed", g_seed, "generation seed")->required();
  gen->add_option("--out", g_out, "output dataset path")->required();

  // solve
  auto* sol = app.add_subcommand("solve", "label a dataset with exact optima");
  std::string s_in, s_out;
  unsigned s_threads = 0;
  sol->add_option("--in", s_in, "input dataset path")->required();
  sol->add_option("--out", s_out, "output dataset path")->required();
  sol->add_option("--threads", s_threads, "worker threads (0 = hardware)");

  // train
  auto* tr = app.add_subcommand("train", "train one configuration");
  std::string t_data, t_config, t_out;
  tr->add_option("--data", t_data, "labeled dataset path")->required();
  tr->add_option("--config", t_config, "training config JSON path");
  tr->add_option("--out", t_out, "output directory")->required();
  std::string t_regime;
  double t_lr = 0, t_step = -1, t_gn = 0, t_lambda = -1, t_k = 0, t_mu = -1;
  std::uint64_t t_seed = 0;
  std::size_t t_batch = 0, t_epochs = 0, t_pre = 0, t_patience = 0;
  std::vector<std::size_t> t_hidden;
  tr->add_option("--regime", t_regime, "fc | ldf | ldf_pretrained");
  tr->add_option("--learning-rate", t_lr, "Adam learning rate");
  tr->add_option("--lagrangian-step", t_step, "multiplier step s");
  tr->add_option("--max-grad-norm", t_gn, "global gradient norm clip");
  tr->add_option("--lambda-init", t_lambda, "initial multiplier");
  tr->add_option("--k", t_k, "surrogate rounding sharpness");
  tr->add_option("--batch-size", t_batch, "minibatch size");
  tr->add_option("--n-epochs", t_epochs, "epoch cap");
  tr->add_option("--pretrain-epochs", t_pre, "frozen-multiplier epochs");
  tr->add_option("--early-stop-patience", t_patience, "early stopping patience");
  tr->add_option("--selection-mu", t_mu, "mu of the validation selection loss");
  tr->add_option("--seed", t_seed, "training seed");
  tr->add_option("--hidden", t_hidden, "hidden layer widths");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "quintile report for a checkpoint");
  std::string e_ckpt, e_data, e_split = "test", e_format = "table";
  ev->add_option("--checkpoint", e_ckpt, "checkpoint path")->required();
  ev->add_option("--data", e_data, "labeled dataset path")->required();
  ev->add_option("--split", e_split, "train | val | test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--format", e_format, "table | json")
      ->check(CLI::IsMember({"table", "json"}));

  // predict
  auto* pr = app.add_subcommand("predict",
                                "read instance JSON lines from stdin, write "
                                "selections to stdout");
  std::string p_ckpt;
  pr->add_option("--checkpoint", p_ckpt, "checkpoint path")->required();

  // grid
  auto* gr = app.add_subcommand("grid", "expand a hyperparameter grid");
  std::string r_data, r_grid, r_out;
  gr->add_option("--data", r_data, "labeled dataset path")->required();
  gr->add_option("--config", r_grid, "grid JSON path")->required();
  gr->add_option("--out", r_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(g_items, g_count, g_seed, g_out);
    if (sol->parsed()) return cmd_solve(s_in, s_out, s_threads);
    if (tr->parsed()) {
      json overrides = json::object();
      if (tr->count("--regime")) overrides["regime"] = t_regime;
      if (tr->count("--learning-rate")) overrides["learning_rate"] = t_lr;
      if (tr->count("--lagrangian-step")) overrides["lagrangian_step"] = t_step;
      if (tr->count("--max-grad-norm")) overrides["max_grad_norm"] = t_gn;
      if (tr->count("--lambda-init")) overrides["lambda_init"] = t_lambda;
      if (tr->count("--k")) overrides["k"] = t_k;
      if (tr->count("--batch-size")) overrides["batch_size"] = t_batch;
      if (tr->count("--n-epochs")) overrides["n_epochs"] = t_epochs;
      if (tr->count("--pretrain-epochs")) overrides["pretrain_epochs"] = t_pre;
      if (tr->count("--early-stop-patience")) overrides["early_stop_patience"] = t_patience;
      if (tr->count("--selection-mu")) overrides["selection_mu"] = t_mu;
      if (tr->count("--seed")) overrides["seed"] = t_seed;
      if (tr->count("--hidden")) overrides["hidden"] = t_hidden;
      return cmd_train(t_data, t_config, t_out, overrides,
                       tr->count("--seed") > 0);
    }
    if (ev->parsed()) return cmd_evaluate(e_ckpt, e_data, e_split, e_format);
    if (pr->parsed()) return cmd_predict(p_ckpt);
    if (gr->parsed()) {
      std::string self;
      std::error_code ec;
      const fs::path exe = fs::canonical("/proc/self/exe", ec);
      self = ec ? std::string(argv[0]) : exe.string();
      return cmd_grid(self, r_data, r_grid, r_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
