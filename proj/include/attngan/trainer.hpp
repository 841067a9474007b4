#ifndef ATTNGAN_TRAINER_HPP_
#define ATTNGAN_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "attngan/autograd.hpp"
#include "attngan/data.hpp"
#include "attngan/losses.hpp"
#include "attngan/model.hpp"
#include "json.hpp"

namespace attngan {

struct TrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 1;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::optional<std::int64_t> decay_start;  // defaults to epochs / 2
  std::uint64_t seed = 42;
  LossWeights weights;
  ModelConfig model;

  std::int64_t effective_decay_start() const { return decay_start.value_or(epochs / 2); }

  /// Checkpoints are written every max(1, epochs / 10) epochs.
  std::int64_t checkpoint_interval() const { return std::max<std::int64_t>(1, epochs / 10); }

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Constant until decay_start, then linear to zero at `epochs`.
double lr_at(std::int64_t epoch, const TrainConfig& config);

/// Adam over a fixed list of parameters. Missing gradients count as zero.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, double beta1, double beta2, double eps);

  void step(const GradientMap<float>& grads, double lr);

  std::int64_t t() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }
  void set_t(std::int64_t t) { t_ = t; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  double beta1_ = 0.5;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
};

/// Everything a run needs to continue: weights, both optimizers, position
/// and sampling RNG.
struct TrainState {
  TrainConfig config;
  std::unique_ptr<CycleModel<float>> model;
  Adam gen_optimizer;
  Adam disc_optimizer;
  std::int64_t epoch = 0;  // completed epochs
  std::int64_t step = 0;   // completed steps
  std::mt19937_64 rng;
  nlohmann::json metrics = nlohmann::json::array();  // one entry per completed epoch

  /// Fresh state: validated config, parameters initialised from config.seed.
  static TrainState create(const TrainConfig& config);
};

struct StepResult {
  LossReport report;
  CyclePass<float> pass;  // forward outputs before the update
};

/// One alternating update on a batch: generators first (discriminators
/// frozen), then the four discriminators on the detached generator outputs
/// of the same pass. Throws NumericError naming the first non-finite term.
StepResult train_step(TrainState& state, const Tensor& x, const Tensor& y, double lr);

/// Stacks 3×H×W tensors into N×3×H×W.
Tensor stack_images(std::span<const Tensor> images);

struct StepRecord {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  double wall_ms = 0.0;
  LossReport report;

  nlohmann::json to_json() const;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TrainState&)> on_epoch;
};

inline constexpr const char* kTrainLogFile = "train_log.jsonl";
inline constexpr const char* kFinalCheckpoint = "final.agcr";

std::string checkpoint_name(std::int64_t epoch);

/// Runs epochs state.epoch .. config.epochs − 1 over `pairs`, appending one
/// log line per step to out_dir/train_log.jsonl and writing checkpoints.
void train(TrainState& state, std::span<const ImagePair> pairs, const std::filesystem::path& out_dir,
           const TrainHooks& hooks = {});

inline constexpr char kCheckpointMagic[5] = {'A', 'G', 'C', 'R', '1'};

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace attngan

#endif  // ATTNGAN_TRAINER_HPP_
