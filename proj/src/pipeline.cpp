#include "nctrl/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "json.hpp"
#include "nctrl/arhmm.hpp"
#include "nctrl/checkpoint.hpp"
#include "nctrl/error.hpp"
#include "nctrl/io_util.hpp"
#include "nctrl/vae.hpp"

namespace nctrl {

const char kToolVersion[] = "1.0.0";

namespace {

using nlohmann::json;

std::string iso_utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, text.data(), text.size());
}

std::string read_text(const std::string& path) {
  const std::vector<char> bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_manifest(const std::string& dir, const std::string& subcommand,
                    const json& config, const json& inputs) {
  json m;
  m["subcommand"] = subcommand;
  m["tool_version"] = kToolVersion;
  m["created_utc"] = iso_utc_now();
  m["config"] = config;
  m["inputs"] = inputs;
  m["output_dir"] = dir;
  write_text(dir + "/manifest.json", m.dump(2) + "\n");
}

json manifest_of(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  if (!path_exists(path))
    throw IoError("missing manifest: " + path);
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError("bad manifest " + path + ": " + e.what());
  }
}

json gen_config_to_json(const GenConfig& cfg) {
  return json{{"n", cfg.n},
              {"c", cfg.c},
              {"t", cfg.t_len},
              {"lag", cfg.lag},
              {"seed", cfg.seed},
              {"mixing", cfg.mixing == MixingKind::kOrthogonal ? "orthogonal"
                                                               : "mlp"},
              {"mixing_layers", cfg.mixing_layers},
              {"kappa_max", cfg.kappa_max},
              {"slope", cfg.slope},
              {"dyn_kind", cfg.dyn_kind},
              {"dyn_hidden", cfg.dyn_hidden},
              {"sigma", cfg.sigma},
              {"diag_boost", cfg.diag_boost}};
}

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"seed", cfg.seed},
              {"stage1_epochs", cfg.stage1_epochs},
              {"stage1_inner_steps", cfg.stage1_inner_steps},
              {"stage1_pretrain_epochs", cfg.stage1_pretrain_epochs},
              {"stage1_split_restarts", cfg.stage1_split_restarts},
              {"stage1_hard_epochs", cfg.stage1_hard_epochs},
              {"stage1_temp", cfg.stage1_temp},
              {"stage1_anneal_epochs", cfg.stage1_anneal_epochs},
              {"stage1_chain_freeze_epochs", cfg.stage1_chain_freeze_epochs},
              {"stage1_batch_rows", cfg.stage1_batch_rows},
              {"stage1_lr", cfg.stage1_lr},
              {"epochs", cfg.epochs},
              {"window", cfg.window},
              {"batch", cfg.batch},
              {"redecode_period", cfg.redecode_period},
              {"lr", cfg.lr},
              {"beta", cfg.beta},
              {"lambda_h", cfg.lambda_h},
              {"adam_beta1", cfg.adam_beta1},
              {"adam_beta2", cfg.adam_beta2},
              {"adam_eps", cfg.adam_eps},
              {"lr_decay", cfg.lr_decay},
              {"plateau_patience", cfg.plateau_patience},
              {"min_lr", cfg.min_lr},
              {"divergence_threshold", cfg.divergence_threshold},
              {"soft_regimes", cfg.soft_regimes},
              {"alternate", cfg.alternate},
              {"standardize", cfg.standardize},
              {"snapshot_metrics", cfg.snapshot_metrics},
              {"snapshot_every", cfg.snapshot_every},
              {"latent_dim", cfg.latent_dim},
              {"vae_hidden", cfg.vae_hidden},
              {"arhmm_hidden", cfg.arhmm_hidden},
              {"flow_hidden", cfg.flow_hidden},
              {"d_theta", cfg.d_theta},
              {"slope", cfg.slope},
              {"chunk_rows", cfg.chunk_rows}};
}

class CsvTrainLogger : public TrainLogger {
 public:
  CsvTrainLogger(const std::string& out_dir, bool snapshots) {
    loss_.open(out_dir + "/loss.csv");
    if (!loss_) throw IoError("cannot write " + out_dir + "/loss.csv");
    loss_ << std::setprecision(17);
    loss_ << "stage,epoch,l_hmm,l_recon,l_kld,total,lr\n";
    if (snapshots) {
      metrics_.open(out_dir + "/metrics.csv");
      if (!metrics_) throw IoError("cannot write " + out_dir + "/metrics.csv");
      metrics_ << std::setprecision(17);
      metrics_ << "epoch,mcc_spearman,regime_accuracy,a_mse\n";
    }
  }

  void on_epoch(const EpochStats& s) override {
    loss_ << s.stage << ',' << s.epoch << ',' << s.l_hmm << ',' << s.l_recon
          << ',' << s.l_kld << ',' << s.total << ',' << s.lr << '\n';
    loss_.flush();
  }

  void on_snapshot(const MetricSnapshot& s) override {
    if (!metrics_.is_open()) return;
    metrics_ << s.epoch << ',' << s.mcc_spearman << ',' << s.regime_accuracy
             << ',' << s.a_mse << '\n';
    metrics_.flush();
  }

 private:
  std::ofstream loss_;
  std::ofstream metrics_;
};

json report_to_json(const TrainReport& report, const std::string& status,
                    const std::string& error) {
  json epochs = json::array();
  for (const EpochStats& e : report.epochs)
    epochs.push_back(json{{"epoch", e.epoch},
                          {"stage", e.stage},
                          {"l_hmm", e.l_hmm},
                          {"l_recon", e.l_recon},
                          {"l_kld", e.l_kld},
                          {"total", e.total},
                          {"lr", e.lr}});
  json snaps = json::array();
  for (const MetricSnapshot& s : report.snapshots)
    snaps.push_back(json{{"epoch", s.epoch},
                         {"mcc_spearman", s.mcc_spearman},
                         {"regime_accuracy", s.regime_accuracy},
                         {"a_mse", s.a_mse}});
  json j{{"status", status},
         {"total_steps", report.total_steps},
         {"wall_seconds", report.wall_seconds},
         {"epochs", epochs},
         {"snapshots", snaps}};
  if (!error.empty()) j["error"] = error;
  return j;
}

void require_dataset(const std::string& data_dir) {
  if (!path_exists(data_dir + "/meta.json"))
    throw IoError("missing dataset: " + data_dir + "/meta.json not found");
}

void require_model(const std::string& model_dir) {
  if (!path_exists(model_dir + "/model.ckpt"))
    throw IoError("missing model: " + model_dir + "/model.ckpt not found");
}

}  // namespace

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad training config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("training config must be an object");
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "stage1_epochs") cfg.stage1_epochs = value.get<std::size_t>();
      else if (key == "stage1_inner_steps") cfg.stage1_inner_steps = value.get<std::size_t>();
      else if (key == "stage1_pretrain_epochs") cfg.stage1_pretrain_epochs = value.get<std::size_t>();
      else if (key == "stage1_split_restarts") cfg.stage1_split_restarts = value.get<std::size_t>();
      else if (key == "stage1_hard_epochs") cfg.stage1_hard_epochs = value.get<std::size_t>();
      else if (key == "stage1_temp") cfg.stage1_temp = value.get<double>();
      else if (key == "stage1_anneal_epochs") cfg.stage1_anneal_epochs = value.get<std::size_t>();
      else if (key == "stage1_chain_freeze_epochs") cfg.stage1_chain_freeze_epochs = value.get<std::size_t>();
      else if (key == "stage1_batch_rows") cfg.stage1_batch_rows = value.get<std::size_t>();
      else if (key == "stage1_lr") cfg.stage1_lr = value.get<double>();
      else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
      else if (key == "window") cfg.window = value.get<std::size_t>();
      else if (key == "batch") cfg.batch = value.get<std::size_t>();
      else if (key == "redecode_period") cfg.redecode_period = value.get<std::size_t>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "beta") cfg.beta = value.get<double>();
      else if (key == "lambda_h") cfg.lambda_h = value.get<double>();
      else if (key == "adam_beta1") cfg.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") cfg.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") cfg.adam_eps = value.get<double>();
      else if (key == "lr_decay") cfg.lr_decay = value.get<double>();
      else if (key == "plateau_patience") cfg.plateau_patience = value.get<std::size_t>();
      else if (key == "min_lr") cfg.min_lr = value.get<double>();
      else if (key == "divergence_threshold") cfg.divergence_threshold = value.get<double>();
      else if (key == "soft_regimes") cfg.soft_regimes = value.get<bool>();
      else if (key == "alternate") cfg.alternate = value.get<bool>();
      else if (key == "standardize") cfg.standardize = value.get<bool>();
      else if (key == "snapshot_metrics") cfg.snapshot_metrics = value.get<bool>();
      else if (key == "snapshot_every") cfg.snapshot_every = value.get<std::size_t>();
      else if (key == "latent_dim") cfg.latent_dim = value.get<std::size_t>();
      else if (key == "vae_hidden") cfg.vae_hidden = value.get<std::size_t>();
      else if (key == "arhmm_hidden") cfg.arhmm_hidden = value.get<std::size_t>();
      else if (key == "flow_hidden") cfg.flow_hidden = value.get<std::size_t>();
      else if (key == "d_theta") cfg.d_theta = value.get<std::size_t>();
      else if (key == "slope") cfg.slope = value.get<double>();
      else if (key == "chunk_rows") cfg.chunk_rows = value.get<std::size_t>();
      else
        throw FormatError("training config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("training config: bad value: ") + e.what());
  }
  return cfg;
}

std::string train_config_to_json_text(const TrainConfig& cfg) {
  return train_config_to_json(cfg).dump(2) + "\n";
}

GenRun run_gen(const GenConfig& cfg, const std::string& out_dir, bool csv) {
  ensure_dir(out_dir);
  json config = gen_config_to_json(cfg);
  config["csv"] = csv;
  write_manifest(out_dir, "gen", config, json::object());

  const Dataset ds = make_dataset(cfg);
  write_dataset(ds, out_dir, csv);

  GenRun run;
  run.dir = out_dir;
  run.meta = ds.meta;
  if (cfg.c == 1) {
    run.variability_warning =
        "a single regime cannot satisfy the sufficient-variability "
        "condition (the stacked derivative vectors cannot reach full rank)";
  } else if (cfg.n > cfg.c - 1) {
    run.variability_warning =
        "with per-regime constant noise scales the variability condition "
        "can only reach full rank when the latent dimension is at most C-1 "
        "(here n=" +
        std::to_string(cfg.n) + ", C=" + std::to_string(cfg.c) + ")";
  }
  return run;
}

TrainRun run_train(const std::string& data_dir, const std::string& out_dir,
                   const TrainConfig& cfg) {
  require_dataset(data_dir);
  const Dataset ds = read_dataset(data_dir);

  ensure_dir(out_dir);
  write_manifest(out_dir, "train", train_config_to_json(cfg),
                 json{{"data", data_dir}});
  write_text(out_dir + "/config.json", train_config_to_json_text(cfg));

  CsvTrainLogger logger(out_dir, cfg.snapshot_metrics);
  TrainResult result;
  try {
    result = train(ds, cfg, &logger);
  } catch (const DivergenceError& e) {
    TrainReport empty;
    write_text(out_dir + "/train_report.json",
               report_to_json(empty, "diverged", e.what()).dump(2) + "\n");
    throw;
  }

  save_checkpoint(result.params, out_dir + "/model.ckpt");
  write_u32_file(out_dir + "/c_hat.u32", result.c_hat);
  write_text(out_dir + "/train_report.json",
             report_to_json(result.report, "ok", "").dump(2) + "\n");

  TrainRun run;
  run.out_dir = out_dir;
  run.report = std::move(result.report);
  return run;
}

EvalRun run_eval(const std::string& data_dir, const std::string& model_dir,
                 const std::string& out_dir) {
  require_dataset(data_dir);
  require_model(model_dir);
  const Dataset ds = read_dataset(data_dir);
  const ParamStore store = load_checkpoint(model_dir + "/model.ckpt");
  const ModelSpecs specs = model_specs_from_store(store);
  if (specs.vae.m != ds.x.cols())
    throw ValueError("eval: model expects " + std::to_string(specs.vae.m) +
                     " observation dims, dataset has " +
                     std::to_string(ds.x.cols()));

  ensure_dir(out_dir);
  write_manifest(out_dir, "eval", json::object(),
                 json{{"data", data_dir}, {"model", model_dir}});

  const Tensor x = standardize(ds.x, store.get("preproc.mean"),
                               store.get("preproc.scale"));
  Tensor mean, log_var;
  vae_encode_plain(store, specs.vae, x, mean, log_var);

  const MccReport spearman = mcc(ds.z, mean, CorrMode::kSpearman);
  const MccReport pearson_r = mcc(ds.z, mean, CorrMode::kPearson);
  const std::vector<std::uint32_t> c_hat = viterbi(store, specs.arhmm, x);
  const RegimeReport rr = regime_accuracy(ds.c, c_hat, specs.arhmm.c);
  Tensor a_est = arhmm_log_trans(store);
  for (double& v : a_est.values) v = std::exp(v);
  const double a_mse = transition_mse(ds.a, a_est, rr.sigma);

  const Tensor x_hat = vae_decode_plain(store, specs.vae, mean);
  double recon = 0.0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double d = x_hat.values[i] - x.values[i];
    recon += d * d;
  }
  recon /= static_cast<double>(x.values.size());

  EvalRun run;
  run.mcc_spearman = spearman.mcc;
  run.mcc_pearson = pearson_r.mcc;
  run.accuracy = rr.accuracy;
  run.a_mse = a_mse;
  run.recon_mse = recon;
  run.assignment = spearman.assignment;
  run.sigma = rr.sigma;
  run.constant_true = spearman.constant_true;
  run.constant_est = spearman.constant_est;
  for (std::size_t i = 0; i < spearman.assignment.size(); ++i)
    run.per_component.push_back(
        spearman.corr.at(i, spearman.assignment[i]));

  json report{{"mcc_spearman", run.mcc_spearman},
              {"mcc_pearson", run.mcc_pearson},
              {"accuracy", run.accuracy},
              {"a_mse", run.a_mse},
              {"recon_mse", run.recon_mse},
              {"per_component_spearman", run.per_component},
              {"assignment", run.assignment},
              {"sigma", run.sigma},
              {"constant_true", run.constant_true},
              {"constant_est", run.constant_est},
              {"t", ds.x.rows()},
              {"n", ds.z.cols()},
              {"c", specs.arhmm.c}};
  write_text(out_dir + "/report.json", report.dump(2) + "\n");
  write_u32_file(out_dir + "/c_hat.u32", c_hat);

  // Scatter data grouped per true component against its matched estimate.
  {
    std::ofstream f(out_dir + "/factors.csv");
    if (!f) throw IoError("cannot write " + out_dir + "/factors.csv");
    f << std::setprecision(17);
    f << "t,factor_true,factor_est,component,assignment\n";
    const std::size_t t_len = ds.z.rows();
    for (std::size_t comp = 0; comp < ds.z.cols(); ++comp) {
      const std::size_t a = spearman.assignment[comp];
      for (std::size_t t = 0; t < t_len; ++t)
        f << t << ',' << ds.z.at(t, comp) << ',' << mean.at(t, a) << ','
          << comp << ',' << a << '\n';
    }
  }
  return run;
}

void run_decode(const std::string& data_dir, const std::string& model_dir,
                const std::string& out_dir) {
  require_dataset(data_dir);
  require_model(model_dir);
  const Dataset ds = read_dataset(data_dir);
  const ParamStore store = load_checkpoint(model_dir + "/model.ckpt");
  const ModelSpecs specs = model_specs_from_store(store);
  if (specs.vae.m != ds.x.cols())
    throw ValueError("decode: model/observation dimension mismatch");

  ensure_dir(out_dir);
  write_manifest(out_dir, "decode", json::object(),
                 json{{"data", data_dir}, {"model", model_dir}});

  const Tensor x = standardize(ds.x, store.get("preproc.mean"),
                               store.get("preproc.scale"));
  write_u32_file(out_dir + "/c_hat.u32", viterbi(store, specs.arhmm, x));
}

CheckRun run_check(const std::string& data_dir, const std::string& kind,
                   std::size_t points, std::uint64_t seed,
                   const std::string& out_dir) {
  if (kind != "variability" && kind != "volume")
    throw ValueError("check: kind must be 'variability' or 'volume', got '" +
                     kind + "'");
  require_dataset(data_dir);
  const Dataset ds = read_dataset(data_dir);

  ensure_dir(out_dir);
  write_manifest(out_dir, "check",
                 json{{"kind", kind}, {"points", points}, {"seed", seed}},
                 json{{"data", data_dir}});

  CheckRun run;
  run.kind = kind;
  run.points = points;
  json j{{"kind", kind}, {"points", points}, {"seed", seed}};

  if (kind == "volume") {
    const VolumeReport report = check_volume(ds.mixing, points, seed);
    run.pass = report.pass;
    run.max_abs_log_det = report.max_abs_log_det;
    j["pass"] = report.pass;
    j["max_abs_log_det"] = report.max_abs_log_det;
    j["log_abs_det"] = report.log_abs_det;
    json singular = json::array();
    for (bool s : report.singular) singular.push_back(s);
    j["singular"] = singular;
    j["tolerance"] = 1e-6;
  } else {
    const VariabilitySummary summary =
        check_variability(ds.dyn, points, seed);
    run.pass = summary.pass;
    run.pass_count = summary.pass_count;
    j["pass"] = summary.pass;
    j["pass_count"] = summary.pass_count;
    j["full_rank"] = 2 * ds.dyn.n;
    json per_point = json::array();
    for (const VariabilityReport& r : summary.reports) {
      per_point.push_back(
          json{{"rank", r.rank},
               {"pass", r.pass},
               {"third_blocks_zero", r.third_blocks_zero},
               {"sv_max", r.singular_values.front()},
               {"sv_min", r.singular_values.back()}});
    }
    j["evaluations"] = per_point;
    if (ds.dyn.regimes() == 1)
      j["note"] =
          "a single regime leaves no cross-regime difference entries; the "
          "stacked vectors cannot reach full rank";
  }
  write_text(out_dir + "/check.json", j.dump(2) + "\n");
  return run;
}

void run_export(const std::string& run_dir, const std::string& out_dir) {
  const json manifest = manifest_of(run_dir);
  if (manifest.value("subcommand", "") != "eval")
    throw ValueError("export: " + run_dir +
                     " does not hold an eval run (manifest subcommand is '" +
                     manifest.value("subcommand", "") + "')");
  const std::string data_dir = manifest["inputs"].value("data", "");
  const std::string model_dir = manifest["inputs"].value("model", "");
  const std::string factors_path = run_dir + "/factors.csv";
  const std::string chat_path = run_dir + "/c_hat.u32";
  const std::string loss_path = model_dir + "/loss.csv";
  for (const std::string& p : {factors_path, chat_path, loss_path})
    if (!path_exists(p)) throw IoError("export: missing input " + p);
  require_dataset(data_dir);

  ensure_dir(out_dir);
  write_manifest(out_dir, "export-plots", json::object(),
                 json{{"run", run_dir},
                      {"data", data_dir},
                      {"model", model_dir}});

  // Split the scatter rows per component, preserving the original text.
  {
    const std::string text = read_text(factors_path);
    std::istringstream in(text);
    std::string header, line;
    if (!std::getline(in, header))
      throw FormatError("export: empty scatter file " + factors_path);
    std::vector<std::ofstream> outs;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      // component id is the 4th comma-separated field
      std::size_t pos = 0;
      for (int field = 0; field < 3; ++field) {
        pos = line.find(',', pos);
        if (pos == std::string::npos)
          throw FormatError("export: malformed scatter row: " + line);
        ++pos;
      }
      const std::size_t comp_end = line.find(',', pos);
      const std::size_t comp =
          static_cast<std::size_t>(std::stoul(line.substr(pos, comp_end - pos)));
      while (outs.size() <= comp) {
        const std::size_t i = outs.size();
        outs.emplace_back(out_dir + "/scatter_" + std::to_string(i) + ".csv");
        if (!outs.back())
          throw IoError("export: cannot write scatter file " +
                        std::to_string(i));
        outs.back() << header << '\n';
      }
      outs[comp] << line << '\n';
    }
  }

  // Regime timeline: true labels from the dataset, decoded labels from the
  // eval run.
  {
    const Dataset ds = read_dataset(data_dir);
    const std::vector<std::uint32_t> c_hat = read_u32_file(chat_path);
    if (c_hat.size() != ds.c.size())
      throw FormatError("export: decoded labels length " +
                        std::to_string(c_hat.size()) + " != dataset length " +
                        std::to_string(ds.c.size()));
    std::ofstream f(out_dir + "/regimes.csv");
    if (!f) throw IoError("export: cannot write regimes.csv");
    f << "t,c_true,c_hat\n";
    for (std::size_t t = 0; t < c_hat.size(); ++t)
      f << t << ',' << ds.c[t] << ',' << c_hat[t] << '\n';
  }

  write_text(out_dir + "/loss_curves.csv", read_text(loss_path));
  if (path_exists(model_dir + "/metrics.csv"))
    write_text(out_dir + "/metric_curves.csv",
               read_text(model_dir + "/metrics.csv"));
}

}  // namespace nctrl
