#include "groundkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "groundkit/rng.hpp"

namespace groundkit::training {

using ag::Tensor;

void LossWeights::validate() const {
    if (!(lambda_bce > 0.0 && lambda_dice > 0.0)) throw std::invalid_argument("loss weights must be positive");
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (!(eps_dice > 0.0)) throw std::invalid_argument("eps_dice must be positive");
    weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"epochs", epochs},
            {"optimizer", "adamw"},
            {"lr", lr},
            {"schedule", "warmup_cosine"},
            {"warmup_steps", warmup_steps},
            {"seed", seed},
            {"lambda_bce", weights.lambda_bce},
            {"lambda_dice", weights.lambda_dice},
            {"eps_dice", eps_dice},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("optimizer") && j["optimizer"].get<std::string>() != "adamw")
        throw std::invalid_argument("only the adamw optimizer is supported");
    if (j.contains("schedule") && j["schedule"].get<std::string>() != "warmup_cosine")
        throw std::invalid_argument("only the warmup_cosine schedule is supported");
    c.lr = j.value("lr", c.lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.seed = j.value("seed", c.seed);
    c.weights.lambda_bce = j.value("lambda_bce", c.weights.lambda_bce);
    c.weights.lambda_dice = j.value("lambda_dice", c.weights.lambda_dice);
    c.eps_dice = j.value("eps_dice", c.eps_dice);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.validate();
    return c;
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.batch_size = 32;
    c.lr = 4e-5;
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read train config: " + path.string());
    const nlohmann::json j = nlohmann::json::parse(in);
    return TrainConfig::from_json(j.contains("train") ? j["train"] : j);
}

// ------------------------------------------------------------------ losses

template <typename T>
Tensor<T> loss_text(const Tensor<T>& logits, std::span<const int> target_ids) {
    if (static_cast<int>(target_ids.size()) != logits.rows())
        throw std::invalid_argument("logits and targets differ in length");
    return ag::cross_entropy(logits, target_ids, model::Vocabulary::kPad);
}

template <typename T>
Tensor<T> loss_bce(const Tensor<T>& probs, std::span<const T> labels) {
    if (labels.size() != probs.size()) throw std::invalid_argument("bce shape mismatch");
    if (probs.size() == 0) throw std::invalid_argument("bce needs at least one pixel");
    const T lo = static_cast<T>(kProbClamp);
    const T hi = T(1) - lo;
    const auto& p = probs.values();
    double total = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double pc = std::clamp(p[i], lo, hi);
        total += labels[i] * std::log(pc) + (1.0 - labels[i]) * std::log(1.0 - pc);
    }
    const T n = static_cast<T>(p.size());
    std::vector<T> y(labels.begin(), labels.end());
    return ag::detail::make_result<T>(1, 1, {static_cast<T>(-total / p.size())}, {probs},
                                      [lo, hi, n, y = std::move(y)](ag::Node<T>& self) {
                                          T* g = ag::detail::pgrad(self, 0);
                                          if (!g) return;
                                          const auto& p = self.parents[0]->value;
                                          const T s = self.grad[0] / n;
                                          for (size_t i = 0; i < p.size(); ++i) {
                                              if (p[i] < lo || p[i] > hi) continue;
                                              g[i] += -s * (y[i] / p[i] - (T(1) - y[i]) / (T(1) - p[i]));
                                          }
                                      });
}

template <typename T>
Tensor<T> loss_dice(const Tensor<T>& probs, std::span<const T> labels, T eps) {
    if (labels.size() != probs.size()) throw std::invalid_argument("dice shape mismatch");
    const auto& p = probs.values();
    double spy = 0.0, sp = 0.0, sy = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        spy += static_cast<double>(p[i]) * labels[i];
        sp += p[i];
        sy += labels[i];
    }
    const double num = 2.0 * spy + eps;
    const double den = sp + sy + eps;
    std::vector<T> y(labels.begin(), labels.end());
    return ag::detail::make_result<T>(1, 1, {static_cast<T>(1.0 - num / den)}, {probs},
                                      [num, den, y = std::move(y)](ag::Node<T>& self) {
                                          T* g = ag::detail::pgrad(self, 0);
                                          if (!g) return;
                                          const double s = self.grad[0];
                                          for (size_t i = 0; i < y.size(); ++i)
                                              g[i] += static_cast<T>(-s * (2.0 * y[i] * den - num) / (den * den));
                                      });
}

template Tensor<float> loss_text(const Tensor<float>&, std::span<const int>);
template Tensor<double> loss_text(const Tensor<double>&, std::span<const int>);
template Tensor<float> loss_bce(const Tensor<float>&, std::span<const float>);
template Tensor<double> loss_bce(const Tensor<double>&, std::span<const double>);
template Tensor<float> loss_dice(const Tensor<float>&, std::span<const float>, float);
template Tensor<double> loss_dice(const Tensor<double>&, std::span<const double>, double);

double loss_bce(std::span<const double> probs, std::span<const double> labels) {
    const auto p = Tensor<double>::constant(1, static_cast<int>(probs.size()), {probs.begin(), probs.end()});
    return loss_bce<double>(p, labels).item();
}

double loss_dice(std::span<const double> probs, std::span<const double> labels, double eps) {
    const auto p = Tensor<double>::constant(1, static_cast<int>(probs.size()), {probs.begin(), probs.end()});
    return loss_dice<double>(p, labels, eps).item();
}

double loss_text(std::span<const double> logits, int vocab, std::span<const int> target_ids) {
    if (vocab < 1 || logits.size() % static_cast<size_t>(vocab) != 0) throw std::invalid_argument("bad logits shape");
    const auto l = Tensor<double>::constant(static_cast<int>(logits.size() / static_cast<size_t>(vocab)), vocab,
                                            {logits.begin(), logits.end()});
    return loss_text<double>(l, target_ids).item();
}

template <typename T>
LossBreakdown<T> loss_total(const VqaSample& sample, const model::TeacherOutputs<T>& outputs,
                            const LossWeights& weights, T eps_dice) {
    LossBreakdown<T> out;
    out.text = loss_text(outputs.text_logits, outputs.targets);
    if (!task_requires_mask(sample.task)) {
        out.total = out.text;
        return out;
    }
    if (!sample.target_mask) throw std::invalid_argument("mask task sample lacks a target mask");
    if (!outputs.mask_logits) throw std::invalid_argument("mask task outputs lack mask logits");
    const Mask& m = *sample.target_mask;
    if (m.height != outputs.mask_logits->rows() || m.width != outputs.mask_logits->cols())
        throw std::invalid_argument("target mask shape differs from mask logits");
    std::vector<T> y(m.data.begin(), m.data.end());
    const Tensor<T> probs = ag::sigmoid(*outputs.mask_logits);
    out.bce = loss_bce<T>(probs, y);
    out.dice = loss_dice<T>(probs, y, eps_dice);
    const Tensor<T> seg = ag::add(ag::scale(*out.bce, static_cast<T>(weights.lambda_bce)),
                                  ag::scale(*out.dice, static_cast<T>(weights.lambda_dice)));
    out.total = ag::add(out.text, seg);
    return out;
}

template LossBreakdown<float> loss_total(const VqaSample&, const model::TeacherOutputs<float>&, const LossWeights&,
                                         float);
template LossBreakdown<double> loss_total(const VqaSample&, const model::TeacherOutputs<double>&, const LossWeights&,
                                          double);

ScalarBreakdown compose_loss(TaskKind task, double l_text, std::optional<double> l_bce, std::optional<double> l_dice,
                             const LossWeights& weights) {
    ScalarBreakdown b;
    b.text = l_text;
    if (!task_requires_mask(task)) {
        b.total = l_text;
        return b;
    }
    if (!l_bce || !l_dice) throw std::invalid_argument("mask task requires segmentation loss terms");
    b.bce = l_bce;
    b.dice = l_dice;
    b.total = l_text + weights.lambda_bce * *l_bce + weights.lambda_dice * *l_dice;
    return b;
}

// ------------------------------------------------------------------ optimization

double warmup_cosine_lr(double peak, int step, int warmup, int total) {
    if (total <= 0) return peak;
    if (step < warmup) return peak * static_cast<double>(step + 1) / warmup;
    const int decay_steps = std::max(1, total - warmup);
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / decay_steps);
    return 0.5 * peak * (1.0 + std::cos(M_PI * progress));
}

int resolve_warmup(const TrainConfig& cfg, int total_steps) {
    if (cfg.warmup_steps >= 0) return cfg.warmup_steps;
    return std::max(1, static_cast<int>(std::lround(0.03 * total_steps)));
}

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), state_(params_.size()), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

template <typename T>
void AdamW<T>::step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.touched() || !p.has_grad()) continue;
        auto& st = state_[i];
        if (st.m.empty()) {
            st.m.assign(p.size(), T(0));
            st.v.assign(p.size(), T(0));
        }
        ++st.steps;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.steps));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.steps));
        auto& w = p.mutable_values();
        const auto& g = p.grad();
        for (size_t k = 0; k < w.size(); ++k) {
            st.m[k] = static_cast<T>(beta1_ * st.m[k] + (1.0 - beta1_) * g[k]);
            st.v[k] = static_cast<T>(beta2_ * st.v[k] + (1.0 - beta2_) * g[k] * g[k]);
            const double mhat = st.m[k] / bc1;
            const double vhat = st.v[k] / bc2;
            w[k] = static_cast<T>(w[k] - lr * wd_ * w[k] - lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

nlohmann::json StepRecord::to_json() const {
    return {{"step", step},
            {"lr", lr},
            {"L", loss},
            {"L_text", text},
            {"L_bce", bce ? nlohmann::json(*bce) : nlohmann::json(nullptr)},
            {"L_dice", dice ? nlohmann::json(*dice) : nlohmann::json(nullptr)},
            {"task", to_string(task)}};
}

template <typename T>
Trainer<T>::Trainer(model::GroundedModel<T>& model, TrainConfig config, int total_steps)
    : model_(model),
      config_(std::move(config)),
      optimizer_(model.trainable(), config_.beta1, config_.beta2, config_.adam_eps, config_.weight_decay),
      total_steps_(total_steps),
      warmup_(resolve_warmup(config_, total_steps)) {
    config_.validate();
    optimizer_.zero_grad();
}

template <typename T>
double Trainer<T>::current_lr() const {
    return warmup_cosine_lr(config_.lr, static_cast<int>(step_), warmup_, total_steps_);
}

template <typename T>
StepRecord Trainer<T>::train_step(std::span<const VqaSample* const> batch) {
    if (batch.empty()) throw std::invalid_argument("batch must be non-empty");
    for (const VqaSample* s : batch)
        if (s->task != batch[0]->task) throw std::invalid_argument("batch mixes tasks");
    StepRecord rec;
    rec.step = step_;
    rec.lr = current_lr();
    rec.task = batch[0]->task;
    const T inv = T(1) / static_cast<T>(batch.size());
    double bce = 0.0, dice = 0.0;
    bool has_seg = false;
    for (const VqaSample* s : batch) {
        const auto outputs = model_.teacher_forward(*s, task_requires_mask(s->task));
        const auto loss = loss_total<T>(*s, outputs, config_.weights, static_cast<T>(config_.eps_dice));
        ag::backward(loss.total, inv);
        rec.loss += loss.total.item();
        rec.text += loss.text.item();
        if (loss.bce) {
            has_seg = true;
            bce += loss.bce->item();
            dice += loss.dice->item();
        }
    }
    const double n = static_cast<double>(batch.size());
    rec.loss /= n;
    rec.text /= n;
    if (has_seg) {
        rec.bce = bce / n;
        rec.dice = dice / n;
    }
    optimizer_.step(rec.lr);
    optimizer_.zero_grad();
    ++step_;
    return rec;
}

template class Trainer<float>;
template class Trainer<double>;

std::vector<std::vector<const VqaSample*>> make_task_batches(const std::vector<const VqaSample*>& samples,
                                                             int batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    Rng rng(seed);
    std::vector<std::vector<const VqaSample*>> batches;
    for (TaskKind task : kAllTasks) {
        std::vector<const VqaSample*> pool;
        for (const auto* s : samples)
            if (s->task == task) pool.push_back(s);
        rng.shuffle(pool);
        for (size_t i = 0; i < pool.size(); i += static_cast<size_t>(batch_size))
            batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(i),
                                 pool.begin() + static_cast<std::ptrdiff_t>(std::min(pool.size(), i + batch_size)));
    }
    rng.shuffle(batches);
    return batches;
}

template <typename T>
std::vector<StepRecord> train(model::GroundedModel<T>& model, const DatasetManifest& manifest,
                              const TrainConfig& config, const StepCallback& on_step) {
    config.validate();
    const auto samples = manifest.select(Split::Train);
    if (samples.empty()) throw std::invalid_argument("manifest has no training samples");
    const auto probe = make_task_batches(samples, config.batch_size, config.seed);
    const int total = static_cast<int>(probe.size()) * config.epochs;
    Trainer<T> trainer(model, config, total);
    std::vector<StepRecord> log;
    log.reserve(static_cast<size_t>(total));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto batches = make_task_batches(samples, config.batch_size, config.seed + static_cast<std::uint64_t>(epoch));
        for (const auto& b : batches) {
            log.push_back(trainer.train_step(b));
            if (on_step) on_step(log.back());
        }
    }
    return log;
}

template std::vector<StepRecord> train(model::GroundedModel<float>&, const DatasetManifest&, const TrainConfig&,
                                       const StepCallback&);
template std::vector<StepRecord> train(model::GroundedModel<double>&, const DatasetManifest&, const TrainConfig&,
                                       const StepCallback&);

// ------------------------------------------------------------------ gradcheck

template <typename T>
std::vector<Coordinate<T>> sample_coordinates(const std::vector<std::pair<std::string, Tensor<T>>>& tensors,
                                              size_t limit, std::uint64_t seed) {
    std::vector<Coordinate<T>> all;
    for (const auto& [name, t] : tensors)
        for (size_t i = 0; i < t.size(); ++i) all.push_back({t, i, name});
    if (all.size() > limit) {
        Rng rng(seed);
        rng.shuffle(all);
        all.resize(limit);
    }
    return all;
}

template <typename T>
std::vector<double> backprop_gradients(const std::function<Tensor<T>()>& loss_fn,
                                       const std::vector<Coordinate<T>>& coords) {
    for (auto c : coords) c.tensor.zero_grad();
    {
        const Tensor<T> loss = loss_fn();
        ag::backward(loss);
    }
    std::vector<double> bp(coords.size(), 0.0);
    for (size_t i = 0; i < coords.size(); ++i) {
        const auto& g = coords[i].tensor.grad();
        bp[i] = g.empty() ? 0.0 : static_cast<double>(g[coords[i].index]);
    }
    for (auto c : coords) c.tensor.zero_grad();
    return bp;
}

template <typename T>
std::vector<double> central_differences(const std::function<Tensor<T>()>& loss_fn,
                                        const std::vector<Coordinate<T>>& coords, double h) {
    ag::NoGradGuard no_grad;
    std::vector<double> fd(coords.size(), 0.0);
    for (size_t i = 0; i < coords.size(); ++i) {
        auto tensor = coords[i].tensor;
        T& slot = tensor.mutable_values()[coords[i].index];
        const T orig = slot;
        const T up = static_cast<T>(orig + h);
        const T down = static_cast<T>(orig - h);
        slot = up;
        const double lp = loss_fn().item();
        slot = down;
        const double lm = loss_fn().item();
        slot = orig;
        fd[i] = (lp - lm) / (static_cast<double>(up) - static_cast<double>(down));
    }
    return fd;
}

GradcheckResult compare_gradients(const std::vector<std::string>& labels, const std::vector<size_t>& indices,
                                  std::span<const double> fd, std::span<const double> bp) {
    if (fd.size() != bp.size() || labels.size() != fd.size() || indices.size() != fd.size())
        throw std::invalid_argument("gradient vectors differ in length");
    GradcheckResult res;
    for (size_t i = 0; i < fd.size(); ++i) {
        const double rel = std::abs(fd[i] - bp[i]) / std::max({std::abs(fd[i]), std::abs(bp[i]), 1e-8});
        ++res.checked;
        if (rel > res.max_rel_error || res.checked == 1) {
            res.max_rel_error = rel;
            res.worst_label = labels[i];
            res.worst_index = indices[i];
            res.worst_fd = fd[i];
            res.worst_bp = bp[i];
        }
    }
    return res;
}

template <typename T>
GradcheckResult gradcheck(const std::function<Tensor<T>()>& loss_fn, const std::vector<Coordinate<T>>& coords,
                          double h) {
    const auto bp = backprop_gradients(loss_fn, coords);
    const auto fd = central_differences(loss_fn, coords, h);
    std::vector<std::string> labels;
    std::vector<size_t> indices;
    for (const auto& c : coords) {
        labels.push_back(c.label);
        indices.push_back(c.index);
    }
    return compare_gradients(labels, indices, fd, bp);
}

template std::vector<Coordinate<float>> sample_coordinates(const std::vector<std::pair<std::string, Tensor<float>>>&,
                                                           size_t, std::uint64_t);
template std::vector<Coordinate<double>> sample_coordinates(
    const std::vector<std::pair<std::string, Tensor<double>>>&, size_t, std::uint64_t);
template GradcheckResult gradcheck(const std::function<Tensor<float>()>&, const std::vector<Coordinate<float>>&,
                                   double);
template GradcheckResult gradcheck(const std::function<Tensor<double>()>&, const std::vector<Coordinate<double>>&,
                                   double);

template std::vector<double> backprop_gradients(const std::function<Tensor<float>()>&,
                                                const std::vector<Coordinate<float>>&);
template std::vector<double> backprop_gradients(const std::function<Tensor<double>()>&,
                                                const std::vector<Coordinate<double>>&);
template std::vector<double> central_differences(const std::function<Tensor<float>()>&,
                                                 const std::vector<Coordinate<float>>&, double);
template std::vector<double> central_differences(const std::function<Tensor<double>()>&,
                                                 const std::vector<Coordinate<double>>&, double);

}  // namespace groundkit::training
