#pragma once

// Training loop: per-epoch AIS refresh of log Z, persistent prior chains for
// the log Z gradient, relaxed-bound steps, discrete validation, checkpoints.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvxl/ais.hpp"
#include "pvxl/data.hpp"
#include "pvxl/model.hpp"
#include "pvxl/objective.hpp"
#include "pvxl/relaxation.hpp"

namespace pvxl {

struct DataConfig {
  /// "bars", "rectangles", "sprites" or "idx".
  std::string source = "bars";
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t n_train = 320;
  std::size_t n_valid = 64;
  /// Toy image size.
  std::size_t size = 14;
  /// "static" draws byte images to bits once, "dynamic" every epoch;
  /// binary inputs pass through either way.
  std::string binarization = "static";
  /// Keep bytes for an RGB/byte mixture head.
  bool keep_bytes = false;
};

struct AisTrainConfig {
  int steps = 300;
  int updates = 1;
  int chains = 256;
  Spacing spacing = Spacing::geometric_tail;
  /// Epochs between refreshes.
  int refresh_every = 1;
  /// Alternations of the persistent chains before each gradient step.
  int gibbs_per_step = 1;
};

struct TrainConfig {
  ModelConfig model;
  DataConfig data;
  std::size_t batch = 32;
  int epochs = 10;
  AdamConfig adam;
  /// Linear KL ramp length in epochs.
  double kl_anneal_epochs = 10;
  RelaxationConfig tau;
  AisTrainConfig ais;
  bool path_derivative = true;
  /// "float" or "double".
  std::string precision = "float";
  std::uint64_t seed = 1;
  /// Epochs between checkpoints written to the output directory (0: only
  /// the final one).
  int checkpoint_every = 0;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

/// One CSV row. elbo/recon/kl are validation means with discrete latents.
struct MetricRow {
  int epoch = 0;
  double elbo = 0, recon = 0, kl = 0, beta = 0, tau = 0, log_z_est = 0, ess = 0, wall_time = 0;
  /// Mean minimized objective over the epoch's steps.
  double train_loss = 0;
};

std::vector<std::string> metric_header();
std::vector<std::string> metric_cells(const MetricRow& r);

struct RunManifest {
  TrainConfig config;
  std::uint64_t seed = 0;
  std::string version;
  std::string dataset_fingerprint;
  std::vector<MetricRow> history;
  std::vector<std::string> checkpoints;
};

/// NaN or infinite loss; the message names the epoch and step, and the
/// last finite parameters are in `checkpoint` (when an output dir is set).
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::string checkpoint)
      : std::runtime_error(what), checkpoint(std::move(checkpoint)) {}
  std::string checkpoint;
};

struct TrainOptions {
  /// Directory for metrics.csv, manifest.json and checkpoints; empty
  /// writes nothing.
  std::string out_dir;
  /// Called after every epoch.
  std::function<void(const MetricRow&)> on_epoch;
  /// Injected into the loss at (epoch, step) to exercise the abort path.
  std::optional<std::pair<int, std::size_t>> poison_step;
};

/// Training and validation splits per the data config (binary unless
/// keep_bytes). Toy sets are drawn from derive_seed(seed, 100).
struct Splits {
  LabeledImages train, valid;
  /// Intensities of byte datasets, used for dynamic binarization.
  std::optional<Tensor<double>> train_intensity;
};
Splits load_splits(const TrainConfig& cfg);

/// Final parameters in training precision.
struct TrainedModel {
  RunManifest manifest;
  ParamSet<float> f32;
  ParamSet<double> f64;
  double log_z_est = 0;
};

TrainedModel train(const Splits& data, const TrainConfig& cfg, const TrainOptions& options = {});

/// Reads a checkpoint written by train (final.pvxl, epoch_N.pvxl or
/// last_good.pvxl). Throws IoError when the parameters do not fit the
/// stored config.
TrainedModel load_trained(const std::string& path);

struct EvalOptions {
  std::size_t k = 1000;
  std::size_t chunk = 64;
  std::uint64_t seed = 1;
  /// Ladder for log Z when the prior is too large to enumerate.
  int ais_steps = 10000;
  int ais_updates = 50;
  int ais_chains = 5000;
};

/// Means per image in nats; kl and elbo use one discrete posterior draw.
struct EvalReport {
  std::size_t images = 0;
  std::size_t k = 0;
  double log_z = 0;
  /// "exact", "ais" or "none".
  std::string log_z_method;
  double ll = 0, bpd = 0, elbo = 0, kl = 0;
  std::vector<double> per_image_ll;
};

/// Importance-weighted likelihood, bound and KL of `set` under the model,
/// in its training precision.
EvalReport evaluate(const TrainedModel& model, const LabeledImages& set, const EvalOptions& options = {});

/// "pvxl <version>".
std::string version_string();

}  // namespace pvxl
