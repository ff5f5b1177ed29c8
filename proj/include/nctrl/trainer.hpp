#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nctrl/arhmm.hpp"
#include "nctrl/datagen.hpp"
#include "nctrl/priorflow.hpp"
#include "nctrl/tape.hpp"
#include "nctrl/tensor.hpp"
#include "nctrl/vae.hpp"

namespace nctrl {

// Two-stage optimization. Stage 1 fits the regime-switching observation
// chain alone on full-length passes (exact posteriors recomputed each
// epoch, one adaptive gradient step per epoch via the expected complete
// log-likelihood surrogate). Stage 2 trains everything jointly on random
// windows: chain loss + reconstruction + beta * sampled KL against the
// history-conditional prior, with hard decoded regime labels refreshed by
// a full-sequence pass every `redecode_period` steps.
//
// The ground-truth regime labels and latents of the dataset are never read
// by the optimization itself; they are touched only by the optional metric
// snapshots, which are off by default.
struct TrainConfig {
  std::uint64_t seed = 0;

  std::size_t stage1_epochs = 80;
  std::size_t stage1_inner_steps = 12;  // emission updates per posterior pass
  std::size_t stage1_batch_rows = 2048;  // rows per emission update
  // Leading stage-1 epochs that fit a single shared conditional predictor
  // (regime 0's network, trained on every row). At the end of this phase it
  // is cloned to all regimes and each clone's predicted-mean outputs get a
  // fresh random offset. Starting every regime from the same good backbone
  // makes the posterior split rows by dynamics residual rather than by
  // observation-space region, which is what separates regimes.
  std::size_t stage1_pretrain_epochs = 30;
  // Number of candidate offset draws tried at the backbone split. Each
  // candidate runs a few probe passes and the draw with the best
  // full-sequence likelihood is kept — random centers sometimes start two
  // regimes on one cluster, and a different draw is the reliable escape.
  std::size_t stage1_split_restarts = 4;
  // Final stage-1 epochs that weight emission updates by the one-hot
  // maximum-posterior label instead of the soft posterior. Soft passes find
  // the coarse structure; contested rows then keep fractional weight in
  // several regimes indefinitely, so a hard tail is used to sharpen.
  std::size_t stage1_hard_epochs = 20;
  // Optional deterministic annealing for the emission-update
  // responsibilities: posteriors are flattened by temperature stage1_temp
  // after the pretrain phase and linearly annealed to 1 over
  // stage1_anneal_epochs. Off by default; the shared-backbone pretrain
  // already prevents premature winner-take-all assignments.
  double stage1_temp = 1.0;
  std::size_t stage1_anneal_epochs = 0;
  // Epochs during which the transition/initial distributions stay at their
  // initialization instead of being refit each pass. The initial matrix has
  // a lifted diagonal, so while it is held fixed the posterior prefers
  // temporally coherent labelings; refitting the matrix from the first
  // epoch instead lets a labeling that tracks observation-space regions
  // (which flips labels far too often) lower its own penalty and lock in.
  // The likelihood-equivalent basins are separated exactly by this label
  // coherence, so the freeze is what steers the fit toward the one whose
  // labels mean regimes. Unfrozen epochs use the exact closed-form update.
  std::size_t stage1_chain_freeze_epochs = 60;
  double stage1_lr = 3e-3;
  std::size_t epochs = 120;  // stage-2 joint epochs
  std::size_t window = 64;   // W, core steps per window
  std::size_t batch = 32;    // windows per step
  std::size_t redecode_period = 500;  // steps between label refreshes

  double lr = 1e-3;
  double beta = 0.02;      // KL weight
  double lambda_h = 1.0;   // chain loss weight
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay = 0.5;   // plateau decay factor
  std::size_t plateau_patience = 8;
  double min_lr = 1e-5;
  double divergence_threshold = 1e6;

  bool soft_regimes = false;  // weight the prior by windowed posteriors
  bool alternate = false;     // alternate chain / latent-model updates
  bool standardize = true;
  bool snapshot_metrics = false;  // per-epoch scores against ground truth
  std::size_t snapshot_every = 10;

  std::size_t latent_dim = 0;  // 0: use the dataset's latent dimension
  std::size_t vae_hidden = 128;
  std::size_t arhmm_hidden = 64;
  std::size_t flow_hidden = 64;
  std::size_t d_theta = 8;
  double slope = 0.2;
  std::size_t chunk_rows = 2048;  // stage-1 tape chunk length
};

void validate_train_config(const TrainConfig& cfg);

struct ModelSpecs {
  VaeSpec vae;
  ArhmmSpec arhmm;
  FlowSpec flow;
};

ModelSpecs make_model_specs(std::size_t m, std::size_t n, std::size_t c,
                            std::size_t lag, const TrainConfig& cfg);

// "model.meta" array so checkpoints are self-describing.
void write_model_meta(ParamStore& store, const ModelSpecs& specs);
ModelSpecs model_specs_from_store(const ParamStore& store);

// Column standardizer; disabled -> mean 0, scale 1.
void fit_standardizer(const Tensor& x, bool enabled, Tensor* mean,
                      Tensor* scale);
Tensor standardize(const Tensor& x, const Tensor& mean, const Tensor& scale);

// One window's loss pieces as tape nodes, all scalar sums (the caller
// divides by the relevant counts and applies the loss weights):
//  - chain negative log-likelihood of the window (uniform restart, the
//    first `lag` rows of x_rows are history context),
//  - sum of squared reconstruction residuals over all rows of x_rows,
//  - sum over core rows of log q(z|x) - log p(z | sampled history, c).
// x_rows: [W+lag x m]; c_core: W hard labels; u: [W+lag x n] standard
// normal draws for the reparameterized samples; soft_gamma (optional,
// [W x C]) replaces the hard labels inside the prior.
struct WindowGraph {
  NodeId hmm_nll = 0;
  NodeId recon_sq_sum = 0;
  NodeId kld_sum = 0;
};

WindowGraph window_graph(Tape& t, const Bound& b, const ModelSpecs& specs,
                         const Tensor& x_rows,
                         const std::vector<std::uint32_t>& c_core,
                         const Tensor& u, const Tensor* soft_gamma = nullptr);

struct EpochStats {
  std::size_t epoch = 0;   // global epoch index (stage 1 then stage 2)
  std::string stage;       // "chain" | "joint"
  double l_hmm = 0.0;
  double l_recon = 0.0;
  double l_kld = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct MetricSnapshot {
  std::size_t epoch = 0;
  double mcc_spearman = 0.0;
  double regime_accuracy = 0.0;
  double a_mse = 0.0;
};

class TrainLogger {
 public:
  virtual ~TrainLogger() = default;
  virtual void on_epoch(const EpochStats&) {}
  virtual void on_snapshot(const MetricSnapshot&) {}
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<MetricSnapshot> snapshots;
  std::size_t total_steps = 0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ParamStore params;  // model weights + "preproc.*" + "model.meta"
  ModelSpecs specs;
  TrainReport report;
  std::vector<std::uint32_t> c_hat;  // final full-sequence decoded labels
};

TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                  TrainLogger* logger = nullptr);

}  // namespace nctrl
