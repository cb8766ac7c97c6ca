#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundkit/autograd.hpp"
#include "groundkit/datamodel.hpp"
#include "groundkit/model.hpp"

namespace groundkit::training {

inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
    double lambda_bce = 2.0;
    double lambda_dice = 0.5;

    void validate() const;
};

enum class Optimizer { AdamW };
enum class Schedule { WarmupCosine };

struct TrainConfig {
    int batch_size = 8;
    int epochs = 10;
    Optimizer optimizer = Optimizer::AdamW;
    double lr = 1e-3;
    Schedule schedule = Schedule::WarmupCosine;
    // Negative: 3% of the total step count.
    int warmup_steps = -1;
    std::uint64_t seed = 42;
    LossWeights weights;
    double eps_dice = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    // Values from the original large-scale setup (batch 32, lr 4e-5).
    static TrainConfig full_scale();
};

TrainConfig load_train_config(const std::filesystem::path& path);

// ------------------------------------------------------------------ losses

// Mean next-token NLL over non-PAD targets. Throws on length mismatch and
// std::invalid_argument("no supervised positions") when every target is PAD.
template <typename T>
ag::Tensor<T> loss_text(const ag::Tensor<T>& logits, std::span<const int> target_ids);

// -(1/N) sum [y log p + (1 - y) log(1 - p)], p clamped to [1e-7, 1 - 1e-7].
template <typename T>
ag::Tensor<T> loss_bce(const ag::Tensor<T>& probs, std::span<const T> labels);

// 1 - (2 sum p y + eps) / (sum p + sum y + eps)
template <typename T>
ag::Tensor<T> loss_dice(const ag::Tensor<T>& probs, std::span<const T> labels, T eps = T(1));

double loss_bce(std::span<const double> probs, std::span<const double> labels);
double loss_dice(std::span<const double> probs, std::span<const double> labels, double eps = 1.0);
double loss_text(std::span<const double> logits, int vocab, std::span<const int> target_ids);

template <typename T>
struct LossBreakdown {
    ag::Tensor<T> total;
    ag::Tensor<T> text;
    std::optional<ag::Tensor<T>> bce;
    std::optional<ag::Tensor<T>> dice;
};

// L = L_text + lambda_bce * L_bce + lambda_dice * L_dice for mask tasks, L = L_text for
// the region tasks (the segmentation branch is never evaluated for them).
template <typename T>
LossBreakdown<T> loss_total(const VqaSample& sample, const model::TeacherOutputs<T>& outputs,
                            const LossWeights& weights, T eps_dice = T(1));

struct ScalarBreakdown {
    double total = 0.0;
    double text = 0.0;
    std::optional<double> bce;
    std::optional<double> dice;
};

// Composition on precomputed components; throws when a mask task lacks segmentation terms.
ScalarBreakdown compose_loss(TaskKind task, double l_text, std::optional<double> l_bce, std::optional<double> l_dice,
                             const LossWeights& weights);

// ------------------------------------------------------------------ optimization

// Linear warmup to `peak` over `warmup` steps, cosine decay to zero at `total`.
double warmup_cosine_lr(double peak, int step, int warmup, int total);
int resolve_warmup(const TrainConfig& cfg, int total_steps);

// Decoupled weight decay Adam. Parameters that received no gradient in a step
// (not touched by the backward pass) are skipped entirely, moments included.
template <typename T>
class AdamW {
  public:
    AdamW(std::vector<ag::Tensor<T>> params, double beta1, double beta2, double eps, double weight_decay);
    void step(double lr);
    void zero_grad();
    const std::vector<ag::Tensor<T>>& params() const { return params_; }

  private:
    struct State {
        std::vector<T> m, v;
        long steps = 0;
    };
    std::vector<ag::Tensor<T>> params_;
    std::vector<State> state_;
    double beta1_, beta2_, eps_, wd_;
};

struct StepRecord {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double text = 0.0;
    std::optional<double> bce;
    std::optional<double> dice;
    TaskKind task = TaskKind::Segmentation;

    nlohmann::json to_json() const;
};

template <typename T>
class Trainer {
  public:
    Trainer(model::GroundedModel<T>& model, TrainConfig config, int total_steps);

    // One optimizer update on a non-empty, task-pure batch.
    StepRecord train_step(std::span<const VqaSample* const> batch);

    long step() const { return step_; }
    double current_lr() const;
    const TrainConfig& config() const { return config_; }

  private:
    model::GroundedModel<T>& model_;
    TrainConfig config_;
    AdamW<T> optimizer_;
    int total_steps_;
    int warmup_;
    long step_ = 0;
};

// Task-pure batches: each task pool is shuffled and chunked independently,
// then the batch order is shuffled so pools are visited in proportion to size.
std::vector<std::vector<const VqaSample*>> make_task_batches(const std::vector<const VqaSample*>& samples,
                                                             int batch_size, std::uint64_t seed);

using StepCallback = std::function<void(const StepRecord&)>;

// Full training run over the train split of `manifest`.
template <typename T>
std::vector<StepRecord> train(model::GroundedModel<T>& model, const DatasetManifest& manifest,
                              const TrainConfig& config, const StepCallback& on_step = {});

// ------------------------------------------------------------------ gradcheck

template <typename T>
struct Coordinate {
    ag::Tensor<T> tensor;
    size_t index = 0;
    std::string label;
};

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::string worst_label;
    size_t worst_index = 0;
    double worst_fd = 0.0;
    double worst_bp = 0.0;
    size_t checked = 0;
};

// Up to `limit` coordinates drawn without replacement from `tensors`.
template <typename T>
std::vector<Coordinate<T>> sample_coordinates(const std::vector<std::pair<std::string, ag::Tensor<T>>>& tensors,
                                              size_t limit, std::uint64_t seed);

template <typename T>
std::vector<double> backprop_gradients(const std::function<ag::Tensor<T>()>& loss_fn,
                                       const std::vector<Coordinate<T>>& coords);

template <typename T>
std::vector<double> central_differences(const std::function<ag::Tensor<T>()>& loss_fn,
                                        const std::vector<Coordinate<T>>& coords, double h);

GradcheckResult compare_gradients(const std::vector<std::string>& labels, const std::vector<size_t>& indices,
                                  std::span<const double> fd, std::span<const double> bp);

// Central differences vs backprop: |fd - bp| / max(|fd|, |bp|, 1e-8), max over coordinates.
template <typename T>
GradcheckResult gradcheck(const std::function<ag::Tensor<T>()>& loss_fn, const std::vector<Coordinate<T>>& coords,
                          double h = 1e-3);

}  // namespace groundkit::training
