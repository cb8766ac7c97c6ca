#include <doctest.h>

#include <filesystem>

#include "groundkit/evaluate.hpp"
#include "groundkit/plots.hpp"

using namespace groundkit;
using namespace groundkit::eval;
namespace fs = std::filesystem;

namespace {

Mask square(int r0, int r1) {
    Mask m(8, 8);
    for (int r = r0; r < r1; ++r)
        for (int c = 2; c < 6; ++c) m(r, c) = 1;
    return m;
}

DatasetManifest manifest() {
    DatasetManifest m;
    auto add = [&](std::string id, TaskKind task, std::string answer, std::optional<Mask> mask, std::string label) {
        VqaSample s;
        s.id = id;
        s.task = task;
        s.question = "q";
        s.answer = std::move(answer);
        s.target_mask = std::move(mask);
        s.label = std::move(label);
        s.image.pixels = Image(8, 8);
        m.samples.push_back(s);
        m.split[id] = Split::Test;
    };
    add("s1", TaskKind::Segmentation, "It is [SEG].", square(2, 6), "organ a");
    add("s2", TaskKind::Segmentation, "It is [SEG].", square(0, 4), "lesion a");
    add("d1", TaskKind::DiseaseRecognition, "It is [SEG]. Lesion a", square(2, 6), "lesion a");
    add("d2", TaskKind::DiseaseRecognition, "No findings", Mask(8, 8), "No findings");
    add("r1", TaskKind::RegionReport, "the region shows lesion a", std::nullopt, "lesion a");
    add("t1", TaskKind::RoiClassification, "organ a", std::nullopt, "organ a");
    return m;
}

std::vector<Prediction> perfect(const DatasetManifest& m) {
    std::vector<Prediction> out;
    for (const auto& s : m.samples) out.push_back({s.id, s.answer, s.target_mask});
    return out;
}

}  // namespace

TEST_CASE("perfect predictions score one") {
    const auto m = manifest();
    const auto t = score_trial(m, perfect(m));
    CHECK(t.aggregates.at("Segmentation").at("Dice") == 1.0);
    CHECK(t.aggregates.at("DiseaseRecognition").at("Accuracy") == 1.0);
    CHECK(t.aggregates.at("DiseaseRecognition").at("Dice") == 1.0);
    CHECK(t.aggregates.at("RoiClassification").at("Accuracy") == 1.0);
    CHECK(t.aggregates.at("RegionReport").at("BLEU-1") == doctest::Approx(1.0));
    CHECK(t.aggregates.at("RegionReport").at("ROUGE-L") == doctest::Approx(1.0));
    CHECK(t.aggregates.count("Segmentation:organ a") == 1);
}

TEST_CASE("missing mask counts as empty") {
    const auto m = manifest();
    auto p = perfect(m);
    p[1].mask.reset();
    const auto t = score_trial(m, p);
    CHECK(t.aggregates.at("Segmentation").at("Dice") == doctest::Approx(0.5));
    CHECK(t.sample_dice.at("Segmentation").at("s2") == 0.0);
    p.pop_back();
    CHECK_THROWS(score_trial(m, p));
}

TEST_CASE("report over five trials uses the trial range") {
    const auto m = manifest();
    std::vector<TrialScores> trials;
    for (int i = 0; i < 5; ++i) {
        auto p = perfect(m);
        if (i < 2) p[0].mask = square(2, 4);
        trials.push_back(score_trial(m, p));
    }
    const auto r = build_report(trials);
    const auto& dice = r.datasets.at("Segmentation").at("Dice");
    // s1 Dice 2*8/(8+16) = 2/3 in two trials.
    const double low = (2.0 / 3.0 + 1.0) / 2.0;
    CHECK(dice.low == doctest::Approx(low));
    CHECK(dice.high == 1.0);
    CHECK(dice.mean == doctest::Approx((2 * low + 3) / 5));
    CHECK(r.to_json()["datasets"]["Segmentation"]["Dice"]["high"] == 1.0);
}

TEST_CASE("dice comparison adds a p value") {
    auto m = manifest();
    for (int i = 0; i < 4; ++i) {
        VqaSample s = m.samples[0];
        s.id = "x" + std::to_string(i);
        m.samples.push_back(s);
        m.split[s.id] = Split::Test;
    }
    const auto model = score_trial(m, perfect(m));
    auto worse = perfect(m);
    for (size_t i = 0; i < worse.size(); ++i)
        if (m.samples[i].task == TaskKind::Segmentation) worse[i].mask = square(2, 3 + static_cast<int>(i % 3));
    const auto baseline = score_trial(m, worse);
    auto report = build_report({model});
    add_dice_comparison(report, model, baseline, "model_vs_baseline");
    REQUIRE(report.significance.count("Dice:Segmentation:model_vs_baseline") == 1);
    const double p = report.significance.at("Dice:Segmentation:model_vs_baseline");
    CHECK(p > 0.0);
    CHECK(p < 0.05);
}

TEST_CASE("predictions round trip through jsonl") {
    const auto m = manifest();
    const auto p = perfect(m);
    const fs::path dir = fs::temp_directory_path() / "groundkit_preds";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_predictions(dir / "predictions.jsonl", p);
    const auto back = read_predictions(dir / "predictions.jsonl");
    REQUIRE(back.size() == p.size());
    for (size_t i = 0; i < p.size(); ++i) {
        CHECK(back[i].id == p[i].id);
        CHECK(back[i].answer == p[i].answer);
        CHECK(back[i].mask == p[i].mask);
    }
    fs::remove_all(dir);
}

TEST_CASE("svg plots") {
    const auto line = plots::line_chart({{"loss", {0, 1, 2}, {3, 2, 1}}}, "Loss", "step", "L");
    CHECK(line.rfind("<svg", 0) == 0);
    CHECK(line.find("</svg>") != std::string::npos);
    CHECK(line.find("<polyline") != std::string::npos);
    CHECK(line == plots::line_chart({{"loss", {0, 1, 2}, {3, 2, 1}}}, "Loss", "step", "L"));
    const auto bars = plots::bar_chart({"a", "b"}, {0.25, 0.75}, "Dice", "Dice");
    CHECK(bars.find("0.75") != std::string::npos);
}
