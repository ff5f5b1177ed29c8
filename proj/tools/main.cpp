// Command-line front end: gen / train / eval / decode / check / export-plots.
//
// Exit codes: 0 success, 2 bad flags, 3 generation or training failure,
// 4 missing inputs.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nctrl/error.hpp"
#include "nctrl/io_util.hpp"
#include "nctrl/pipeline.hpp"

namespace {

using nctrl::GenConfig;
using nctrl::MixingKind;
using nctrl::TrainConfig;

// Serial execution always satisfies the cap; the variable is validated so
// typos do not pass silently.
void check_thread_cap() {
  const char* raw = std::getenv("NCTRL_THREADS");
  if (raw == nullptr) return;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v < 1)
    std::cerr << "warning: ignoring NCTRL_THREADS='" << raw
              << "' (expected a positive integer)\n";
}

bool parse_mixing(const std::string& text, MixingKind& kind,
                  std::size_t& layers) {
  if (text == "orthogonal") {
    kind = MixingKind::kOrthogonal;
    return true;
  }
  if (text == "mlp") {
    kind = MixingKind::kMlp;
    return true;
  }
  if (text.rfind("mlp:", 0) == 0) {
    const std::string num = text.substr(4);
    char* end = nullptr;
    const long v = std::strtol(num.c_str(), &end, 10);
    if (end != num.c_str() && *end == '\0' && v >= 1) {
      kind = MixingKind::kMlp;
      layers = static_cast<std::size_t>(v);
      return true;
    }
  }
  return false;
}

struct GenArgs {
  std::string preset;
  std::string mixing;
  std::string dyn_kind;
  std::size_t n = 0, c = 0, t = 0, lag = 0, dyn_hidden = 0;
  std::uint64_t seed = 0;
  double sigma = 0.0, diag_boost = 0.0;
  bool csv = false;
  std::string out;
};

int do_gen(const CLI::App& cmd, const GenArgs& a) {
  GenConfig cfg;  // defaults match preset A
  if (a.preset == "B") cfg.mixing_layers = 3;
  if (cmd.count("--n")) cfg.n = a.n;
  if (cmd.count("--c")) cfg.c = a.c;
  if (cmd.count("--t")) cfg.t_len = a.t;
  if (cmd.count("--lag")) cfg.lag = a.lag;
  if (cmd.count("--seed")) cfg.seed = a.seed;
  if (cmd.count("--dyn")) cfg.dyn_kind = a.dyn_kind;
  if (cmd.count("--dyn-hidden")) cfg.dyn_hidden = a.dyn_hidden;
  if (cmd.count("--sigma")) cfg.sigma = a.sigma;
  if (cmd.count("--diag-boost")) cfg.diag_boost = a.diag_boost;
  if (cmd.count("--mixing") &&
      !parse_mixing(a.mixing, cfg.mixing, cfg.mixing_layers)) {
    std::cerr << "error: --mixing expects 'orthogonal', 'mlp', or "
                 "'mlp:<layers>', got '"
              << a.mixing << "'\n";
    return 2;
  }

  const nctrl::GenRun run = nctrl::run_gen(cfg, a.out, a.csv);
  if (!run.variability_warning.empty())
    std::cerr << "warning: " << run.variability_warning << "\n";
  std::cout << "wrote dataset: " << run.dir << " (t=" << run.meta.t_len
            << ", n=" << run.meta.n << ", m=" << run.meta.m
            << ", c=" << run.meta.c << ", lag=" << run.meta.lag
            << ", seed=" << run.meta.seed << ")\n";
  return 0;
}

int do_train(const std::string& data, const std::string& out,
             const std::string& config_path, bool seed_given,
             std::uint64_t seed) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    if (!nctrl::path_exists(config_path))
      throw nctrl::IoError("missing config file: " + config_path);
    const std::vector<char> bytes = nctrl::read_file_bytes(config_path);
    cfg = nctrl::train_config_from_json_text(
        std::string(bytes.begin(), bytes.end()));
  }
  if (seed_given) cfg.seed = seed;

  const nctrl::TrainRun run = nctrl::run_train(data, out, cfg);
  const nctrl::TrainReport& r = run.report;
  std::cout << "training complete: " << r.epochs.size() << " epochs, "
            << r.total_steps << " joint steps, " << r.wall_seconds << " s\n";
  if (!r.epochs.empty()) {
    const nctrl::EpochStats& last = r.epochs.back();
    std::cout << "final losses: hmm=" << last.l_hmm
              << " recon=" << last.l_recon << " kld=" << last.l_kld
              << " total=" << last.total << "\n";
  }
  std::cout << "wrote model: " << run.out_dir << "/model.ckpt\n";
  return 0;
}

int do_eval(const std::string& data, const std::string& model,
            const std::string& out) {
  const nctrl::EvalRun run = nctrl::run_eval(data, model, out);
  std::cout << "mcc_spearman " << run.mcc_spearman << "\n"
            << "mcc_pearson " << run.mcc_pearson << "\n"
            << "regime_accuracy " << run.accuracy << "\n"
            << "a_mse " << run.a_mse << "\n"
            << "recon_mse " << run.recon_mse << "\n";
  if (!run.constant_true.empty() || !run.constant_est.empty())
    std::cerr << "warning: constant factor columns present; their "
                 "correlations were scored as 0\n";
  std::cout << "wrote report: " << out << "/report.json\n";
  return 0;
}

int do_check(const std::string& data, const std::string& kind,
             std::size_t points, std::uint64_t seed, const std::string& out) {
  const nctrl::CheckRun run = nctrl::run_check(data, kind, points, seed, out);
  if (kind == "volume") {
    std::cout << "volume check: " << (run.pass ? "pass" : "fail")
              << " (max |log|det|| = " << run.max_abs_log_det << " over "
              << run.points << " points)\n";
  } else {
    std::cout << "variability check: " << (run.pass ? "pass" : "fail") << " ("
              << run.pass_count << "/" << run.points
              << " evaluation points at full rank)\n";
  }
  std::cout << "wrote report: " << out << "/check.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  check_thread_cap();

  CLI::App app{
      "Nonstationary time-series pipeline: synthetic data generation, "
      "regime-switching representation learning, evaluation, and theory "
      "checks"};
  app.require_subcommand(1);

  // --- gen ---
  GenArgs ga;
  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--preset", ga.preset,
                  "Named configuration: A (2-layer mixing) or B (3-layer)")
      ->check(CLI::IsMember({"A", "B"}));
  gen->add_option("--n", ga.n, "Latent dimension");
  gen->add_option("--c", ga.c, "Number of regimes");
  gen->add_option("--t", ga.t, "Sequence length");
  gen->add_option("--lag", ga.lag, "Latent history length");
  gen->add_option("--mixing", ga.mixing,
                  "Observation map: orthogonal | mlp | mlp:<layers>");
  gen->add_option("--seed", ga.seed, "Random seed");
  gen->add_option("--dyn", ga.dyn_kind, "Latent dynamics: mlp | linear")
      ->check(CLI::IsMember({"mlp", "linear"}));
  gen->add_option("--dyn-hidden", ga.dyn_hidden,
                  "Hidden width of the mlp dynamics");
  gen->add_option("--sigma", ga.sigma, "Base noise scale");
  gen->add_option("--diag-boost", ga.diag_boost,
                  "Transition-matrix diagonal boost");
  gen->add_flag("--csv", ga.csv, "Also write CSV copies of the arrays");
  gen->add_option("--out", ga.out, "Output directory")->required();

  // --- train ---
  std::string tr_data, tr_out, tr_config;
  std::uint64_t tr_seed = 0;
  CLI::App* train = app.add_subcommand("train", "Fit the model to a dataset");
  train->add_option("--data", tr_data, "Dataset directory")->required();
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--config", tr_config, "Training configuration JSON");
  train->add_option("--seed", tr_seed, "Random seed (overrides config)");

  // --- eval ---
  std::string ev_data, ev_model, ev_out;
  CLI::App* eval = app.add_subcommand(
      "eval", "Score a trained model against ground truth");
  eval->add_option("--data", ev_data, "Dataset directory")->required();
  eval->add_option("--model", ev_model, "Model directory")->required();
  eval->add_option("--out", ev_out, "Output directory")->required();

  // --- decode ---
  std::string de_data, de_model, de_out;
  CLI::App* decode = app.add_subcommand(
      "decode", "Write the most likely regime path for a dataset");
  decode->add_option("--data", de_data, "Dataset directory")->required();
  decode->add_option("--model", de_model, "Model directory")->required();
  decode->add_option("--out", de_out, "Output directory")->required();

  // --- check ---
  std::string ck_data, ck_kind, ck_out;
  std::size_t ck_points = 16;
  std::uint64_t ck_seed = 0;
  CLI::App* check = app.add_subcommand(
      "check", "Verify generator assumptions numerically");
  check->add_option("--data", ck_data, "Dataset directory")->required();
  check->add_option("--kind", ck_kind, "variability | volume")
      ->required()
      ->check(CLI::IsMember({"variability", "volume"}));
  check->add_option("--points", ck_points, "Evaluation points (default 16)");
  check->add_option("--seed", ck_seed, "Random seed for evaluation points");
  check->add_option("--out", ck_out, "Output directory")->required();

  // --- export-plots ---
  std::string xp_run, xp_out;
  CLI::App* xp = app.add_subcommand(
      "export-plots", "Bundle an eval run into plot-ready CSV files");
  xp->add_option("run", xp_run, "Eval run directory")->required();
  xp->add_option("--out", xp_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return do_gen(*gen, ga);
    if (train->parsed())
      return do_train(tr_data, tr_out, tr_config, train->count("--seed") > 0,
                      tr_seed);
    if (eval->parsed()) return do_eval(ev_data, ev_model, ev_out);
    if (decode->parsed()) {
      nctrl::run_decode(de_data, de_model, de_out);
      std::cout << "wrote labels: " << de_out << "/c_hat.u32\n";
      return 0;
    }
    if (check->parsed())
      return do_check(ck_data, ck_kind, ck_points, ck_seed, ck_out);
    if (xp->parsed()) {
      nctrl::run_export(xp_run, xp_out);
      std::cout << "wrote plot bundle: " << xp_out << "\n";
      return 0;
    }
  } catch (const nctrl::ChecksumError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nctrl::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nctrl::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
