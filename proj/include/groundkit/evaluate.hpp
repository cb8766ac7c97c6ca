#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "groundkit/datamodel.hpp"
#include "groundkit/metrics.hpp"

namespace groundkit::eval {

struct Prediction {
    std::string id;
    std::string answer;
    std::optional<Mask> mask;
};

// JSONL, one {id, answer, mask_path?} record per line; mask paths are PNG files
// relative to the JSONL file's directory.
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
// Masks go to <dir of path>/masks/<id>.png.
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);

// Scores of one trial. Keys of `aggregates` are dataset names: the task name,
// or "<task>:<label>" for per-class Dice.
struct TrialScores {
    std::map<std::string, std::map<std::string, double>> aggregates;
    // task -> sample id -> Dice, for paired comparisons
    std::map<std::string, std::map<std::string, double>> sample_dice;
};

// Scores predictions against the samples of `split`. Every sample of the split
// needs a prediction; a missing mask counts as all-zero.
TrialScores score_trial(const DatasetManifest& manifest, const std::vector<Prediction>& predictions,
                        Split split = Split::Test);

// Mean/min/max over trials (trial_range when there are exactly five).
metrics::MetricReport build_report(const std::vector<TrialScores>& trials);

// Paired t-test p values on per-sample Dice of `model` vs `baseline`, one per task.
void add_dice_comparison(metrics::MetricReport& report, const TrialScores& model, const TrialScores& baseline,
                         const std::string& name);

}  // namespace groundkit::eval
