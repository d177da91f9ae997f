#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trainspeed/dataset.hpp"
#include "trainspeed/nn/layers.hpp"
#include "trainspeed/nn/optim.hpp"
#include "trainspeed/signals.hpp"
#include "trainspeed/trace.hpp"

namespace trainspeed::arch {

enum class Arch { single2d, single1d, multibranch };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

/// One point of the hyperparameter space. `history` is the window length n;
/// the per-architecture input shape follows from it: (n,3,1) for single2d,
/// (n,3) for single1d, and (n,1) per branch for multibranch. For single2d
/// `kernel_size` is the kernel height; the kernel width is always 2.
struct ArchConfig {
  Arch arch = Arch::multibranch;
  std::size_t history = 30;
  std::size_t n_blocks = 2;
  std::size_t n_filters = 46;
  std::size_t kernel_size = 2;
  double dropout_rate = 0.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;

  std::vector<std::size_t> input_shape() const;
  bool operator==(const ArchConfig&) const = default;
};

inline constexpr std::size_t kSingle2dKernelWidth = 2;
inline constexpr std::size_t kPoolSize = 5;

/// Throws ConfigError unless every field lies in the search range of its
/// architecture.
void validate(const ArchConfig& config);

/// Best configurations reported for each architecture.
ArchConfig optimal_config(Arch arch);

void to_json(nlohmann::json& j, const ArchConfig& c);
void from_json(const nlohmann::json& j, ArchConfig& c);

/// A built model: body maps windows (B, n, 3) to (B, 1) normalized speeds.
class Network {
 public:
  Network(ArchConfig config, std::unique_ptr<nn::Sequential> body);

  const ArchConfig& config() const noexcept { return config_; }
  nn::Sequential& body() noexcept { return *body_; }

  nn::Tensor forward(const nn::Tensor& windows, const nn::Context& ctx) { return body_->forward(windows, ctx); }
  nn::Tensor backward(const nn::Tensor& grad) { return body_->backward(grad); }
  std::vector<nn::Parameter*> parameters();
  std::size_t parameter_count();

  void initialize(std::uint64_t seed);
  void seed_dropout(std::uint64_t seed) { body_->seed_dropout(seed); }

  /// The branch layer of a multibranch network, null otherwise.
  nn::MultiBranch* branches();

 private:
  ArchConfig config_;
  std::unique_ptr<nn::Sequential> body_;
};

/// Layer stacks without range validation, for shapes outside the search
/// space. `channels` is the number of input signals per timestep.
std::unique_ptr<nn::Sequential> single2d_body(std::size_t length, std::size_t channels, std::size_t n_blocks,
                                              std::size_t n_filters, std::size_t kernel_h, double dropout);
std::unique_ptr<nn::Sequential> single1d_body(std::size_t length, std::size_t channels, std::size_t n_blocks,
                                              std::size_t n_filters, std::size_t kernel, double dropout);
std::unique_ptr<nn::Sequential> multibranch_body(std::size_t length, std::size_t channels, std::size_t n_blocks,
                                                 std::size_t n_filters, std::size_t kernel, double dropout);

/// n_blocks x [conv2d -> batch norm -> ReLU] -> dropout -> flatten -> dense(1).
Network build_single2d(const ArchConfig& config, std::uint64_t seed = 0);
/// n_blocks x [conv1d -> ReLU -> max pool 5/5] -> flatten -> dense(128) ->
/// ReLU -> dropout -> dense(32) -> ReLU -> dense(1).
Network build_single1d(const ArchConfig& config, std::uint64_t seed = 0);
/// Per-signal branches of n_blocks x [conv1d(f) -> ReLU -> conv1d(2f) -> ReLU]
/// -> global max pool, concatenated -> dense(64) -> ReLU -> dropout ->
/// dense(32) -> ReLU -> dropout -> dense(1).
Network build_multibranch(const ArchConfig& config, std::uint64_t seed = 0);
Network build(const ArchConfig& config, std::uint64_t seed = 0);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

/// Called after every epoch with (epoch, validation loss); returning false
/// stops training and marks the model pruned.
using EpochReporter = std::function<bool(std::size_t, double)>;

struct TrainedModel {
  Network network;
  std::vector<EpochRecord> history;
  std::size_t epochs_trained = 0;
  bool pruned = false;

  const ArchConfig& config() const noexcept { return network.config(); }
};

/// Batches a list of windows into a (B, n, 3) tensor and (B, 1) targets.
nn::Tensor batch_inputs(std::span<const dataset::WindowSample> windows, std::span<const std::size_t> order);
nn::Tensor batch_targets(std::span<const dataset::WindowSample> windows, std::span<const std::size_t> order);

/// Normalized predictions in inference mode.
std::vector<double> predict_windows(Network& network, std::span<const dataset::WindowSample> windows);
/// MSE of inference-mode predictions against window targets.
double evaluate_loss(Network& network, std::span<const dataset::WindowSample> windows);

/// Mini-batch training with seeded per-epoch shuffling. Throws
/// NonFiniteError carrying the 1-based epoch when a loss or gradient stops
/// being finite.
TrainedModel train(Network network, const dataset::DatasetSplit& split, const nn::TrainerConfig& trainer,
                   const EpochReporter& reporter = {});

/// Sliding inference over a run; the trace starts at sample n.
SpeedEstimateTrace predict_run(TrainedModel& model, const signals::TrainRun& run,
                               const dataset::NormalizationConfig& norm = {});

void save_checkpoint(TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

void save_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace trainspeed::arch
