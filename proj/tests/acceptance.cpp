// Acceptance suite: one PASS/FAIL line per criterion, exit code 1 on any failure.
// Usage: acceptance [criterion ...]   (default: all of 1..8)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "groundkit/curation.hpp"
#include "groundkit/metrics.hpp"
#include "groundkit/model.hpp"
#include "groundkit/rng.hpp"
#include "groundkit/selftest.hpp"
#include "groundkit/synthgen.hpp"
#include "groundkit/text.hpp"
#include "groundkit/training.hpp"

using namespace groundkit;

namespace {

constexpr std::uint64_t kSeed = 42;

struct Outcome {
    bool passed = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

// Runs one selftest section, optionally under a wall-clock budget.
Outcome selftest_section(const std::string& section, std::optional<double> budget_s = std::nullopt,
                         bool verbose = false) {
    selftest::Options o;
    o.seed = kSeed;
    o.sections = {section};
    const auto t0 = Clock::now();
    const auto r = selftest::run(o);
    const double dt = seconds_since(t0);
    std::string detail = std::to_string(r.checks.size() - r.failures()) + "/" + std::to_string(r.checks.size()) +
                         " checks in " + fmt("%.2f", dt) + " s";
    if (budget_s) detail += " (budget " + fmt("%.0f", *budget_s) + " s)";
    for (const auto& c : r.checks)
        if (!c.passed) detail += "; failed " + c.name + ": " + c.detail;
        else if (verbose) detail += "; " + c.name + ": " + c.detail;
    return {r.passed() && !r.checks.empty() && (!budget_s || dt < *budget_s), detail};
}

Outcome metric_oracles() { return selftest_section("metrics", 5.0); }

Outcome losses() {
    auto out = selftest_section("losses");
    // Headline values straight from the public API, outside the selftest harness.
    const std::vector<double> half(16, 0.5);
    std::vector<double> y(16);
    for (size_t i = 0; i < y.size(); ++i) y[i] = i % 2;
    const double bce = training::loss_bce(half, y);
    const bool bce_ok = std::abs(bce - std::log(2.0)) <= 1e-6;
    const std::vector<double> p = {0, 0, 1, 1}, g = {1, 1, 0, 0};
    const bool dice_ok = std::abs(training::loss_dice(g, g) - 0.0) <= 1e-6 &&
                         std::abs(training::loss_dice(p, g) - 0.8) <= 1e-6;
    Rng rng(kSeed);
    double worst = 0.0;
    const training::LossWeights w;
    for (int i = 0; i < 100; ++i) {
        const double t = rng.uniform(0, 5), b = rng.uniform(0, 5), d = rng.uniform(0, 1);
        const auto c = training::compose_loss(TaskKind::Segmentation, t, b, d, w);
        worst = std::max(worst, std::abs(c.total - (t + 2.0 * b + 0.5 * d)));
    }
    out.passed = out.passed && bce_ok && dice_ok && worst <= 1e-9;
    out.detail += "; bce(0.5) " + fmt("%.12f", bce) + ", composition max err " + fmt("%.2e", worst);
    return out;
}

Outcome gradchecks() { return selftest_section("gradcheck", 60.0, true); }

model::ModelConfig config_for(const DatasetManifest& ds, int size, int patch, std::uint64_t init_seed) {
    model::ModelConfig mc;
    mc.image_height = mc.image_width = size;
    mc.patch_size = patch;
    mc.seg_patch_size = 4;
    mc.vocab = model::vocabulary_for(ds);
    mc.init_seed = init_seed;
    return mc;
}

std::vector<std::vector<float>> frozen_values(const model::GroundedModel<float>& m) {
    std::vector<std::vector<float>> out;
    for (const auto& p : m.params())
        if (p.frozen) out.push_back(p.tensor.values());
    return out;
}

Outcome mechanism_invariants() {
    auto opts = synth::default_dataset_options();
    opts.height = opts.width = 16;
    const auto ds = synth::gen_dataset({TaskKind::Segmentation, TaskKind::DiseaseRecognition}, 12, kSeed, opts);
    model::GroundedModel<float> trained(config_for(ds, 16, 4, kSeed));
    const auto frozen_before = frozen_values(trained);

    training::TrainConfig tc;
    tc.lr = 3e-3;
    const int steps = 100;
    training::Trainer<float> trainer(trained, tc, steps);
    const auto pool = ds.select(Split::Train);
    for (std::uint64_t epoch = 0; trainer.step() < steps; ++epoch)
        for (const auto& b : training::make_task_batches(pool, tc.batch_size, kSeed + epoch)) {
            if (trainer.step() >= steps) break;
            trainer.train_step(b);
        }
    const bool frozen_ok = frozen_values(trained) == frozen_before;

    std::vector<model::GroundedModel<float>> untrained;
    for (std::uint64_t i = 1; i <= 3; ++i) untrained.emplace_back(config_for(ds, 16, 4, kSeed + i));

    Rng rng(kSeed);
    const int passes = 1000;
    size_t violations = 0, seg = 0, none = 0, text_only = 0;
    std::string first;
    for (int i = 0; i < passes; ++i) {
        const auto& smp = ds.samples[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(ds.samples.size()) - 1))];
        ImageSample img = smp.image;
        for (auto& v : img.pixels.data) v = static_cast<float>(std::clamp(v + 0.02 * rng.normal(), 0.0, 1.0));
        const bool use_trained = rng.uniform_int(0, 3) != 0;
        const auto& m = use_trained ? trained : untrained[static_cast<size_t>(rng.uniform_int(0, 2))];
        const auto out = m.forward_grounded(img, smp.question);
        const auto v = validate_output(out, img.pixels.height, img.pixels.width);
        if (!v.empty()) {
            if (first.empty()) first = "; first: \"" + out.answer + "\" " + v[0].message;
            ++violations;
        }
        if (text::contains_seg(out.answer)) ++seg;
        else if (text::is_no_findings(out.answer)) ++none;
        else ++text_only;
    }
    Outcome o;
    o.passed = frozen_ok && violations == 0 && seg > 0 && none > 0;
    o.detail = std::to_string(violations) + " violations in " + std::to_string(passes) + " passes (" +
               std::to_string(seg) + " [SEG], " + std::to_string(none) + " no findings, " +
               std::to_string(text_only) + " text only); frozen encoders " +
               (frozen_ok ? "bit-identical" : "CHANGED") + " after " + std::to_string(trainer.step()) + " steps" +
               first;
    return o;
}

Outcome learning_signal() {
    const auto t0 = Clock::now();
    auto opts = synth::default_dataset_options();
    opts.depth = 4;
    opts.height = opts.width = 64;
    const auto ds = synth::gen_dataset({TaskKind::Segmentation, TaskKind::DiseaseRecognition}, 200, kSeed, opts);
    model::GroundedModel<float> m(config_for(ds, 64, 8, kSeed));
    const auto frozen_before = frozen_values(m);
    training::TrainConfig tc;
    tc.epochs = 10;
    tc.seed = kSeed;
    const auto log = training::train(m, ds, tc);

    std::vector<double> dice;
    std::vector<std::string> preds, labels;
    // Inference examples on the first lesion and first healthy test slice: the
    // lesion class is named and a mask returned; "No findings" with an all-zero mask.
    std::optional<bool> lesion_example, healthy_example;
    for (const auto* s : ds.select(Split::Test)) {
        const auto out = m.forward_grounded(s->image, s->question);
        if (s->task == TaskKind::DiseaseRecognition && !lesion_example && !text::is_no_findings(s->answer))
            lesion_example = text::normalize(out.answer).find(text::normalize(s->label)) != std::string::npos &&
                             out.mask.has_value() && !is_all_zero(*out.mask);
        if (s->task == TaskKind::DiseaseRecognition && !healthy_example && text::is_no_findings(s->answer))
            healthy_example = text::is_no_findings(out.answer) && out.mask.has_value() && is_all_zero(*out.mask);
        if (s->task == TaskKind::Segmentation) {
            const Mask pred = out.mask ? *out.mask : Mask(s->target_mask->height, s->target_mask->width);
            dice.push_back(metrics::dice_score(pred, *s->target_mask));
        } else if (s->task == TaskKind::DiseaseRecognition) {
            preds.push_back(out.answer);
            labels.push_back(s->answer);
        }
    }
    const double mean_dice = metrics::summarize_runs(dice).mean;
    const double acc = metrics::accuracy(preds, labels);
    std::set<std::string> classes(labels.begin(), labels.end());
    const double dt = seconds_since(t0);
    Outcome o;
    o.passed = mean_dice >= 0.70 && acc >= 0.90 && classes.size() == 3 && dt <= 7200.0 &&
               frozen_values(m) == frozen_before && lesion_example.value_or(false) &&
               healthy_example.value_or(false);
    o.detail = "Dice " + fmt("%.4f", mean_dice) + " over " + std::to_string(dice.size()) + " slices, accuracy " +
               fmt("%.4f", acc) + " over " + std::to_string(preds.size()) + " slices (" +
               std::to_string(classes.size()) + " answer classes), " + std::to_string(log.size()) + " steps in " +
               fmt("%.0f", dt) + " s; lesion example " + (lesion_example.value_or(false) ? "ok" : "FAILED") + ", healthy example " +
               (healthy_example.value_or(false) ? "ok" : "FAILED");
    return o;
}

Outcome task_gating() {
    auto opts = synth::default_dataset_options();
    opts.height = opts.width = 16;
    const auto ds = synth::gen_dataset({TaskKind::Segmentation, TaskKind::DiseaseRecognition,
                                        TaskKind::RoiClassification, TaskKind::RegionReport},
                                       8, kSeed, opts);
    model::GroundedModel<float> m(config_for(ds, 16, 4, kSeed));
    std::vector<size_t> decoder;
    for (size_t i = 0; i < m.params().size(); ++i)
        if (m.params()[i].group == model::ParamGroup::MaskDecoder) decoder.push_back(i);
    auto decoder_values = [&] {
        std::vector<float> v;
        for (size_t i : decoder) {
            const auto& t = m.params()[i].tensor.values();
            v.insert(v.end(), t.begin(), t.end());
        }
        return v;
    };

    training::TrainConfig tc;
    const auto pool = ds.select(Split::Train);
    const int epochs = 2;
    const auto probe = training::make_task_batches(pool, tc.batch_size, kSeed);
    training::Trainer<float> trainer(m, tc, static_cast<int>(probe.size()) * epochs);
    double region_delta = 0.0, mask_delta = 0.0;
    size_t region_steps = 0, mask_steps = 0;
    for (int e = 0; e < epochs; ++e)
        for (const auto& b : training::make_task_batches(pool, tc.batch_size, kSeed + static_cast<std::uint64_t>(e))) {
            const auto before = decoder_values();
            trainer.train_step(b);
            const auto after = decoder_values();
            double delta = 0.0;
            for (size_t k = 0; k < before.size(); ++k)
                delta += std::abs(static_cast<double>(after[k]) - static_cast<double>(before[k]));
            if (task_requires_mask(b.front()->task)) {
                mask_delta += delta;
                ++mask_steps;
            } else {
                region_delta += delta;
                ++region_steps;
            }
        }
    Outcome o;
    o.passed = region_steps > 0 && mask_steps > 0 && region_delta == 0.0 && mask_delta > 0.0;
    o.detail = "mask decoder |delta| " + fmt("%.3g", region_delta) + " over " + std::to_string(region_steps) +
               " region batches, " + fmt("%.3g", mask_delta) + " over " + std::to_string(mask_steps) +
               " mask batches";
    return o;
}

Outcome pipeline_fidelity() {
    const auto chest = curation::CtWindow::for_region(curation::BodyRegion::Chest);
    const auto abd = curation::CtWindow::for_region(curation::BodyRegion::Abdomen);
    const bool bounds = chest.low == -1000.0 && chest.high == 500.0 && abd.low == -175.0 && abd.high == 250.0;

    auto opts = synth::default_dataset_options();
    opts.height = opts.width = 16;
    const auto ds = synth::gen_dataset({TaskKind::Segmentation}, 200, kSeed, opts);
    std::map<std::string, std::set<Split>> by_volume;
    for (const auto& s : ds.samples) by_volume[s.split_key()].insert(ds.split.at(s.split_key()));
    size_t test = 0, mixed = 0;
    for (const auto& [k, splits] : by_volume) {
        mixed += splits.size() != 1;
        test += splits.count(Split::Test);
    }
    const bool split_ok = by_volume.size() == 200 && test == 40 && mixed == 0;

    const std::vector<double> row = {96.0, 96.1, 96.2, 96.3, 96.5};
    const std::string cell = metrics::format_cell(metrics::trial_range(metrics::TrialSet::from(row)));

    Outcome o;
    o.passed = bounds && split_ok && cell == "96.2(96.0,96.5)";
    o.detail = std::string("windows ") + (bounds ? "exact" : "WRONG") + ", " + std::to_string(test) + "/" +
               std::to_string(by_volume.size()) + " volumes held out, " + std::to_string(mixed) +
               " volumes straddling splits, cell " + cell;
    return o;
}

Outcome determinism() {
    selftest::Options o;
    o.seed = kSeed;
    const auto a = selftest::run(o);
    const auto b = selftest::run(o);
    const std::string ja = a.to_json().dump(2), jb = b.to_json().dump(2);
    const std::string ta = a.to_text(), tb = b.to_text();
    Outcome out;
    out.passed = ja == jb && ta == tb;
    out.detail = std::string("json ") + (ja == jb ? "identical" : "DIFFERS") + " (" + std::to_string(ja.size()) +
                 " bytes), text " + (ta == tb ? "identical" : "DIFFERS") + "; " + std::to_string(a.checks.size()) +
                 " checks, " + std::to_string(a.failures()) + " failing";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"metric oracle suite", metric_oracles},
        {"loss correctness", losses},
        {"gradient checks", gradchecks},
        {"mechanism invariants", mechanism_invariants},
        {"desk-scale learning signal", learning_signal},
        {"task gating", task_gating},
        {"pipeline fidelity", pipeline_fidelity},
        {"determinism", determinism},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        const int k = std::atoi(argv[i]);
        if (k < 1 || k > static_cast<int>(criteria.size())) {
            std::fprintf(stderr, "unknown criterion: %s\n", argv[i]);
            return 2;
        }
        selected.insert(k);
    }
    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int k = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(k)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.passed;
        std::printf("%s criterion %d (%s): %s\n", o.passed ? "PASS" : "FAIL", k, criteria[i].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
