#include "groundkit/evaluate.hpp"

#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "groundkit/image_io.hpp"

namespace groundkit::eval {

namespace fs = std::filesystem;

std::vector<Prediction> read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read predictions: " + path.string());
    std::vector<Prediction> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        Prediction p;
        p.id = j.at("id").get<std::string>();
        p.answer = j.at("answer").get<std::string>();
        if (j.contains("mask_path") && !j["mask_path"].is_null())
            p.mask = io::read_mask_png(path.parent_path() / j["mask_path"].get<std::string>());
        out.push_back(std::move(p));
    }
    return out;
}

void write_predictions(const fs::path& path, const std::vector<Prediction>& predictions) {
    const fs::path dir = path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write predictions: " + path.string());
    for (const auto& p : predictions) {
        nlohmann::json j = {{"id", p.id}, {"answer", p.answer}};
        if (p.mask) {
            const fs::path rel = fs::path("masks") / (p.id + ".png");
            fs::create_directories(dir / "masks");
            io::write_mask_png(dir / rel, *p.mask);
            j["mask_path"] = rel.generic_string();
        }
        out << j.dump() << '\n';
    }
}

namespace {

bool is_report_task(TaskKind t) { return t == TaskKind::RegionReport || t == TaskKind::GroundedReport; }
bool is_choice_task(TaskKind t) { return t == TaskKind::DiseaseRecognition || t == TaskKind::RoiClassification; }

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TrialScores score_trial(const DatasetManifest& manifest, const std::vector<Prediction>& predictions, Split split) {
    std::map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) by_id[p.id] = &p;

    struct Acc {
        std::vector<double> dice, bleu[4], meteor, rouge;
        std::vector<std::string> preds, labels;
    };
    std::map<std::string, Acc> acc;
    std::map<std::string, std::vector<double>> class_dice;
    TrialScores out;

    for (const VqaSample* s : manifest.select(split)) {
        const auto it = by_id.find(s->id);
        if (it == by_id.end()) throw std::invalid_argument("no prediction for sample " + s->id);
        const Prediction& p = *it->second;
        const std::string task(to_string(s->task));
        Acc& a = acc[task];
        if (s->target_mask) {
            const Mask pred = p.mask ? *p.mask : Mask(s->target_mask->height, s->target_mask->width);
            const double d = metrics::dice_score(pred, *s->target_mask);
            a.dice.push_back(d);
            class_dice[task + ":" + s->label].push_back(d);
            out.sample_dice[task][s->id] = d;
        }
        if (is_choice_task(s->task)) {
            a.preds.push_back(p.answer);
            a.labels.push_back(s->answer);
        }
        if (is_report_task(s->task)) {
            const auto pair = metrics::TextPair::from_text(p.answer, {s->answer});
            for (int n = 1; n <= 4; ++n) a.bleu[n - 1].push_back(metrics::bleu(pair, n));
            a.meteor.push_back(metrics::meteor(pair.references, {pair.hypothesis}));
            a.rouge.push_back(metrics::rouge_l(pair).f);
        }
    }

    for (auto& [task, a] : acc) {
        auto& m = out.aggregates[task];
        if (!a.dice.empty()) m["Dice"] = mean(a.dice);
        if (!a.preds.empty()) m["Accuracy"] = metrics::accuracy(a.preds, a.labels);
        if (!a.rouge.empty()) {
            for (int n = 1; n <= 4; ++n) m["BLEU-" + std::to_string(n)] = mean(a.bleu[n - 1]);
            m["METEOR"] = mean(a.meteor);
            m["ROUGE-L"] = mean(a.rouge);
        }
    }
    for (const auto& [key, v] : class_dice) out.aggregates[key]["Dice"] = mean(v);
    return out;
}

metrics::MetricReport build_report(const std::vector<TrialScores>& trials) {
    if (trials.empty()) throw std::invalid_argument("no trials to report");
    metrics::MetricReport report;
    for (const auto& [dataset, ms] : trials.front().aggregates) {
        for (const auto& [metric, _] : ms) {
            std::vector<double> values;
            for (const auto& t : trials) {
                const auto d = t.aggregates.find(dataset);
                if (d == t.aggregates.end() || !d->second.count(metric))
                    throw std::invalid_argument("trials disagree on " + dataset + "/" + metric);
                values.push_back(d->second.at(metric));
            }
            report.datasets[dataset][metric] = values.size() == 5
                                                   ? metrics::trial_range(metrics::TrialSet::from(values))
                                                   : metrics::summarize_runs(values);
        }
    }
    return report;
}

void add_dice_comparison(metrics::MetricReport& report, const TrialScores& model, const TrialScores& baseline,
                         const std::string& name) {
    for (const auto& [task, per_sample] : model.sample_dice) {
        const auto b = baseline.sample_dice.find(task);
        if (b == baseline.sample_dice.end()) continue;
        std::vector<double> x, y;
        for (const auto& [id, d] : per_sample) {
            const auto it = b->second.find(id);
            if (it == b->second.end()) continue;
            x.push_back(d);
            y.push_back(it->second);
        }
        try {
            report.significance["Dice:" + task + ":" + name] = metrics::paired_t_test(x, y).p;
        } catch (const std::invalid_argument&) {
            // identical or too few pairs: no test
        }
    }
}

}  // namespace groundkit::eval
