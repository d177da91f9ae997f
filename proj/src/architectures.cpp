#include "trainspeed/architectures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "trainspeed/errors.hpp"
#include "trainspeed/rng.hpp"
#include "trainspeed/signals.hpp"

namespace trainspeed::arch {

namespace {

constexpr std::size_t kHistories[] = {10, 20, 30, 40};
constexpr std::size_t kBatchSizes[] = {8, 16, 32, 64};
constexpr std::size_t kSingle2dKernels[] = {3, 5, 7};
constexpr std::size_t kEvalChunk = 256;
constexpr const char* kCheckpointFormat = "trainspeed-checkpoint";
constexpr int kCheckpointVersion = 1;

template <typename Range>
bool contains(const Range& r, std::size_t v) {
  return std::find(std::begin(r), std::end(r), v) != std::end(r);
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::single2d: return "single2d";
    case Arch::single1d: return "single1d";
    case Arch::multibranch: return "multibranch";
  }
  return "multibranch";
}

Arch arch_from_string(const std::string& name) {
  if (name == "single2d") return Arch::single2d;
  if (name == "single1d") return Arch::single1d;
  if (name == "multibranch") return Arch::multibranch;
  throw ConfigError("unknown architecture '" + name + "'");
}

std::vector<std::size_t> ArchConfig::input_shape() const {
  switch (arch) {
    case Arch::single2d: return {history, dataset::kChannels, 1};
    case Arch::single1d: return {history, dataset::kChannels};
    case Arch::multibranch: return {history, 1};
  }
  return {};
}

void validate(const ArchConfig& c) {
  const auto name = to_string(c.arch);
  check(contains(kHistories, c.history), name + ": history length must be 10, 20, 30 or 40");
  const std::size_t max_blocks = c.arch == Arch::multibranch ? 3 : 20;
  check(c.n_blocks >= 1 && c.n_blocks <= max_blocks,
        name + ": number of blocks must lie in [1, " + std::to_string(max_blocks) + "]");
  check(c.n_filters >= 8 && c.n_filters <= 64, name + ": number of filters must lie in [8, 64]");
  if (c.arch == Arch::single2d) {
    check(contains(kSingle2dKernels, c.kernel_size), name + ": kernel must be (3,2), (5,2) or (7,2)");
  } else {
    check(c.kernel_size >= 2 && c.kernel_size <= 10, name + ": kernel size must lie in [2, 10]");
  }
  check(c.dropout_rate >= 0.0 && c.dropout_rate <= 0.5, name + ": dropout rate must lie in [0, 0.5]");
  check(c.learning_rate >= 1e-5 && c.learning_rate <= 1e-2, name + ": learning rate must lie in [1e-5, 1e-2]");
  check(contains(kBatchSizes, c.batch_size), name + ": batch size must be 8, 16, 32 or 64");
}

ArchConfig optimal_config(Arch arch) {
  switch (arch) {
    case Arch::single2d: return {Arch::single2d, 20, 3, 40, 7, 4.9e-5, 1.7e-4, 8};
    case Arch::single1d: return {Arch::single1d, 10, 4, 53, 2, 8.8e-3, 2.0e-3, 8};
    case Arch::multibranch: return {Arch::multibranch, 30, 2, 46, 2, 1.9e-4, 1.8e-3, 32};
  }
  return {};
}

void to_json(nlohmann::json& j, const ArchConfig& c) {
  nlohmann::json kernel = c.arch == Arch::single2d
                              ? nlohmann::json::array({c.kernel_size, kSingle2dKernelWidth})
                              : nlohmann::json(c.kernel_size);
  j = nlohmann::json{{"arch", to_string(c.arch)},       {"input_shape", c.input_shape()},
                     {"n_blocks", c.n_blocks},           {"n_filters", c.n_filters},
                     {"kernel_size", kernel},            {"dropout_rate", c.dropout_rate},
                     {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}};
}

void from_json(const nlohmann::json& j, ArchConfig& c) {
  try {
    c.arch = arch_from_string(j.at("arch").get<std::string>());
    c.history = j.at("input_shape").at(0).get<std::size_t>();
    c.n_blocks = j.at("n_blocks").get<std::size_t>();
    c.n_filters = j.at("n_filters").get<std::size_t>();
    const auto& k = j.at("kernel_size");
    if (k.is_array()) {
      if (k.size() != 2 || k[1].get<std::size_t>() != kSingle2dKernelWidth) {
        throw ConfigError("kernel width must be " + std::to_string(kSingle2dKernelWidth));
      }
      c.kernel_size = k[0].get<std::size_t>();
    } else {
      c.kernel_size = k.get<std::size_t>();
    }
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed architecture config: ") + e.what());
  }
}

Network::Network(ArchConfig config, std::unique_ptr<nn::Sequential> body)
    : config_(config), body_(std::move(body)) {}

std::vector<nn::Parameter*> Network::parameters() {
  std::vector<nn::Parameter*> params;
  body_->collect_parameters(params);
  return params;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

void Network::initialize(std::uint64_t seed) {
  auto rng = make_rng(seed, "init");
  body_->initialize(rng);
  body_->seed_dropout(derive_seed(seed, "dropout"));
}

nn::MultiBranch* Network::branches() {
  if (body_->size() == 0) return nullptr;
  return dynamic_cast<nn::MultiBranch*>(&body_->layer(0));
}

// Convolutions feeding batch norm carry no bias: the normalization removes
// any per-channel offset.
std::unique_ptr<nn::Sequential> single2d_body(std::size_t length, std::size_t channels, std::size_t n_blocks,
                                              std::size_t n_filters, std::size_t kernel_h, double dropout) {
  auto body = std::make_unique<nn::Sequential>();
  body->emplace<nn::Reshape>(nn::Shape{length, channels, 1}, "reshape");
  std::size_t in = 1;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    body->emplace<nn::Conv2D>(in, n_filters, kernel_h, kSingle2dKernelWidth, nn::Padding::same, false);
    body->emplace<nn::BatchNorm>(n_filters);
    body->emplace<nn::ReLU>();
    in = n_filters;
  }
  body->emplace<nn::Dropout>(dropout);
  body->emplace<nn::Flatten>();
  body->emplace<nn::Dense>(length * channels * n_filters, 1);
  return body;
}

std::unique_ptr<nn::Sequential> single1d_body(std::size_t length, std::size_t channels, std::size_t n_blocks,
                                              std::size_t n_filters, std::size_t kernel, double dropout) {
  auto body = std::make_unique<nn::Sequential>();
  std::size_t in = channels;
  std::size_t len = length;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    body->emplace<nn::Conv1D>(in, n_filters, kernel, nn::Padding::same);
    body->emplace<nn::ReLU>();
    body->emplace<nn::MaxPool1D>(kPoolSize, kPoolSize);
    in = n_filters;
    len = nn::kernels::pooled_length(len, kPoolSize, kPoolSize);
  }
  body->emplace<nn::Flatten>();
  body->emplace<nn::Dense>(len * n_filters, 128);
  body->emplace<nn::ReLU>();
  body->emplace<nn::Dropout>(dropout);
  body->emplace<nn::Dense>(128, 32);
  body->emplace<nn::ReLU>();
  body->emplace<nn::Dense>(32, 1);
  return body;
}

std::unique_ptr<nn::Sequential> multibranch_body(std::size_t /*length*/, std::size_t channels,
                                                 std::size_t n_blocks, std::size_t n_filters, std::size_t kernel,
                                                 double dropout) {
  std::vector<std::unique_ptr<nn::Sequential>> branches;
  for (std::size_t c = 0; c < channels; ++c) {
    auto branch = std::make_unique<nn::Sequential>();
    std::size_t in = 1;
    for (std::size_t b = 0; b < n_blocks; ++b) {
      branch->emplace<nn::Conv1D>(in, n_filters, kernel, nn::Padding::same);
      branch->emplace<nn::ReLU>();
      branch->emplace<nn::Conv1D>(n_filters, 2 * n_filters, kernel, nn::Padding::same);
      branch->emplace<nn::ReLU>();
      in = 2 * n_filters;
    }
    branch->emplace<nn::GlobalMaxPool1D>();
    branches.push_back(std::move(branch));
  }
  auto body = std::make_unique<nn::Sequential>();
  body->emplace<nn::MultiBranch>(std::move(branches));
  body->emplace<nn::Dense>(channels * 2 * n_filters, 64);
  body->emplace<nn::ReLU>();
  body->emplace<nn::Dropout>(dropout);
  body->emplace<nn::Dense>(64, 32);
  body->emplace<nn::ReLU>();
  body->emplace<nn::Dropout>(dropout);
  body->emplace<nn::Dense>(32, 1);
  return body;
}

namespace {

Network finish(const ArchConfig& config, std::unique_ptr<nn::Sequential> body, std::uint64_t seed) {
  Network net(config, std::move(body));
  net.initialize(seed);
  return net;
}

void require_arch(const ArchConfig& config, Arch arch) {
  if (config.arch != arch) {
    throw ConfigError("config is for " + to_string(config.arch) + ", not " + to_string(arch));
  }
  validate(config);
}

}  // namespace

Network build_single2d(const ArchConfig& c, std::uint64_t seed) {
  require_arch(c, Arch::single2d);
  return finish(c, single2d_body(c.history, dataset::kChannels, c.n_blocks, c.n_filters, c.kernel_size,
                                 c.dropout_rate),
                seed);
}

Network build_single1d(const ArchConfig& c, std::uint64_t seed) {
  require_arch(c, Arch::single1d);
  return finish(c, single1d_body(c.history, dataset::kChannels, c.n_blocks, c.n_filters, c.kernel_size,
                                 c.dropout_rate),
                seed);
}

Network build_multibranch(const ArchConfig& c, std::uint64_t seed) {
  require_arch(c, Arch::multibranch);
  return finish(c, multibranch_body(c.history, dataset::kChannels, c.n_blocks, c.n_filters, c.kernel_size,
                                    c.dropout_rate),
                seed);
}

Network build(const ArchConfig& config, std::uint64_t seed) {
  switch (config.arch) {
    case Arch::single2d: return build_single2d(config, seed);
    case Arch::single1d: return build_single1d(config, seed);
    case Arch::multibranch: return build_multibranch(config, seed);
  }
  throw ConfigError("unknown architecture");
}

nn::Tensor batch_inputs(std::span<const dataset::WindowSample> windows, std::span<const std::size_t> order) {
  if (order.empty()) throw DimensionError("empty batch");
  const std::size_t cells = windows[order[0]].inputs.size();
  nn::Tensor x({order.size(), cells / dataset::kChannels, dataset::kChannels});
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& w = windows[order[i]].inputs;
    if (w.size() != cells) throw DimensionError("windows of different history lengths in one batch");
    std::copy(w.begin(), w.end(), x.data() + i * cells);
  }
  return x;
}

nn::Tensor batch_targets(std::span<const dataset::WindowSample> windows, std::span<const std::size_t> order) {
  nn::Tensor y({order.size(), 1});
  for (std::size_t i = 0; i < order.size(); ++i) y[i] = windows[order[i]].target;
  return y;
}

std::vector<double> predict_windows(Network& network, std::span<const dataset::WindowSample> windows) {
  std::vector<double> out;
  out.reserve(windows.size());
  std::vector<std::size_t> order;
  for (std::size_t start = 0; start < windows.size(); start += kEvalChunk) {
    const std::size_t end = std::min(start + kEvalChunk, windows.size());
    order.resize(end - start);
    std::iota(order.begin(), order.end(), start);
    const auto y = network.forward(batch_inputs(windows, order), nn::Context::infer());
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

double evaluate_loss(Network& network, std::span<const dataset::WindowSample> windows) {
  if (windows.empty()) throw ValidationError("cannot evaluate on an empty window set");
  const auto pred = predict_windows(network, windows);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - windows[i].target;
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

TrainedModel train(Network network, const dataset::DatasetSplit& split, const nn::TrainerConfig& trainer,
                   const EpochReporter& reporter) {
  if (split.train.empty()) throw ValidationError("training set is empty");
  if (split.validation.empty()) throw ValidationError("validation set is empty");
  if (trainer.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t n = network.config().history;
  if (split.train.front().history() != n) {
    throw DimensionError("windows have history " + std::to_string(split.train.front().history()) +
                         ", network expects " + std::to_string(n));
  }

  TrainedModel model{std::move(network), {}, 0, false};
  auto& net = model.network;
  net.seed_dropout(derive_seed(trainer.seed, "dropout"));
  auto params = net.parameters();
  for (auto* p : params) p->zero_grad();
  nn::Optimizer optimizer(trainer.optimizer, trainer.learning_rate);
  auto shuffle_rng = make_rng(trainer.seed, "shuffle");
  const nn::Context ctx{true, trainer.dropout_active};

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t epoch = 1; epoch <= trainer.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i + 1));
      std::swap(order[i], order[j]);
    }

    // Batch boundaries; a trailing single sample joins the previous batch
    // because batch norm needs two samples.
    std::vector<std::size_t> bounds;
    for (std::size_t s = 0; s < order.size(); s += trainer.batch_size) bounds.push_back(s);
    bounds.push_back(order.size());
    if (bounds.size() > 2 && bounds[bounds.size() - 1] - bounds[bounds.size() - 2] == 1) {
      bounds.erase(bounds.end() - 2);
    }

    double loss_sum = 0.0;
    try {
      for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
        const std::span<const std::size_t> idx(order.data() + bounds[b], bounds[b + 1] - bounds[b]);
        const auto pred = net.forward(batch_inputs(split.train, idx), ctx);
        const auto loss = nn::mse_loss(pred, batch_targets(split.train, idx));
        if (!std::isfinite(loss.value)) throw NonFiniteError("non-finite training loss");
        net.backward(loss.grad);
        optimizer.step(params);
        loss_sum += loss.value;
      }
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(std::string(e.what()) + " at epoch " + std::to_string(epoch), epoch);
    }
    const double train_loss = loss_sum / static_cast<double>(bounds.size() - 1);
    const double val_loss = evaluate_loss(net, split.validation);
    if (!std::isfinite(val_loss)) {
      throw NonFiniteError("non-finite validation loss at epoch " + std::to_string(epoch), epoch);
    }
    model.history.push_back({epoch, train_loss, val_loss});
    model.epochs_trained = epoch;
    if (reporter && !reporter(epoch, val_loss)) {
      model.pruned = true;
      break;
    }
  }
  return model;
}

SpeedEstimateTrace predict_run(TrainedModel& model, const signals::TrainRun& run,
                               const dataset::NormalizationConfig& norm) {
  const std::size_t n = model.config().history;
  const auto windows = dataset::make_inference_windows(run, n, norm);
  const auto pred = predict_windows(model.network, windows);
  SpeedEstimateTrace trace{run.run_id, to_string(model.config().arch), {}};
  trace.entries.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    trace.entries.push_back({windows[i].t_target, std::max(0.0, norm.denormalize(pred[i]))});
  }
  return trace;
}

void save_checkpoint(TrainedModel& model, const std::filesystem::path& path) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : model.history) {
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss}});
  }
  const nlohmann::json doc{{"format", kCheckpointFormat},
                           {"version", kCheckpointVersion},
                           {"config", model.config()},
                           {"epochs_trained", model.epochs_trained},
                           {"pruned", model.pruned},
                           {"history", history},
                           {"state", nn::save_state(model.network.body())}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat) throw ParseError(path.string() + ": not a checkpoint");
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version");
  }
  const auto config = doc.at("config").get<ArchConfig>();
  TrainedModel model{build(config, 0), {}, doc.value("epochs_trained", std::size_t{0}),
                     doc.value("pruned", false)};
  nn::load_state(model.network.body(), doc.at("state"));
  for (const auto& h : doc.at("history")) {
    model.history.push_back({h.at("epoch").get<std::size_t>(), h.at("train_loss").get<double>(),
                             h.at("val_loss").get<double>()});
  }
  return model;
}

void save_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << signals::format_double(h.train_loss) << ',' << signals::format_double(h.val_loss)
        << '\n';
  }
}

}  // namespace trainspeed::arch
