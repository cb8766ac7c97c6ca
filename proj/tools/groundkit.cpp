#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "groundkit/curation.hpp"
#include "groundkit/datamodel.hpp"
#include "groundkit/evaluate.hpp"
#include "groundkit/image_io.hpp"
#include "groundkit/model.hpp"
#include "groundkit/plots.hpp"
#include "groundkit/selftest.hpp"
#include "groundkit/synthgen.hpp"
#include "groundkit/text.hpp"
#include "groundkit/training.hpp"

namespace fs = std::filesystem;
using namespace groundkit;
using nlohmann::json;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    json config = json::object();

    std::uint64_t effective_seed() const {
        if (seed) return *seed;
        return config.value("seed", std::uint64_t{42});
    }
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::pair<int, int> parse_size(const std::string& s) {
    int h = 0, w = 0;
    char x = 0;
    std::istringstream is(s);
    if (!(is >> h >> x >> w) || (x != 'x' && x != 'X') || h < 1 || w < 1 || !is.eof())
        throw std::invalid_argument("size must look like 64x64, got \"" + s + "\"");
    return {h, w};
}

std::vector<TaskKind> parse_tasks(const std::string& list) {
    std::vector<TaskKind> out;
    std::istringstream is(list);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(parse_task(item));
    if (out.empty()) throw std::invalid_argument("no tasks given");
    return out;
}

bool has_ext(const fs::path& p, const char* ext) {
    std::string e = p.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e == ext;
}

ImageSample load_image(const fs::path& path, Modality modality) {
    if (!fs::exists(path)) throw std::runtime_error("cannot read image: " + path.string());
    ImageSample img;
    img.modality = modality;
    img.pixels = has_ext(path, ".png") ? io::read_png(path) : io::read_gkv_image(path);
    return img;
}

ImageSample fit_to_model(ImageSample img, const model::ModelConfig& cfg) {
    if (img.pixels.height == cfg.image_height && img.pixels.width == cfg.image_width) return img;
    return curation::resize_pair(img, std::nullopt, cfg.image_height, cfg.image_width).image;
}

// ------------------------------------------------------------------ synth

int cmd_synth(const Globals& g, const std::string& tasks, int volumes, int depth, const std::string& size) {
    auto opts = synth::default_dataset_options();
    const auto [h, w] = parse_size(size);
    opts.depth = depth;
    opts.height = h;
    opts.width = w;
    const auto manifest = synth::gen_dataset(parse_tasks(tasks), volumes, g.effective_seed(), opts);
    const fs::path path = fs::path(g.out) / "manifest.json";
    save_manifest(manifest, path);
    std::printf("wrote %zu samples (%zu train, %zu test) to %s\n", manifest.samples.size(),
                manifest.select(Split::Train).size(), manifest.select(Split::Test).size(), path.string().c_str());
    return 0;
}

// ------------------------------------------------------------------ curate

struct CurateArgs {
    std::vector<std::string> inputs;
    std::vector<std::string> masks;
    std::string modality = "CT";
    std::string body_region = "abdomen";
    std::optional<double> window_low, window_high;
    std::string task = "Segmentation";
    std::string label;
    std::string size;
    bool no_split = false;
};

std::vector<curation::SlicePair> load_slices(const fs::path& input, const std::optional<fs::path>& mask,
                                             Modality modality, const CurateArgs& a) {
    if (!fs::exists(input)) throw std::runtime_error("cannot read input: " + input.string());
    const std::string vid = input.stem().string();
    if (has_ext(input, ".png")) {
        curation::SlicePair p;
        p.image.pixels = io::read_png(input);
        p.image.modality = modality;
        if (mask) p.mask = io::read_mask_png(*mask);
        return {p};
    }
    curation::Volume3D vol;
    vol.voxels = io::read_gkv(input);
    vol.volume_id = vid;
    if (mask) vol.masks = io::read_gkv_mask(*mask);
    if (modality == Modality::CT) {
        vol.modality = curation::VolumeModality::CT;
        const auto window = (a.window_low || a.window_high)
                                ? curation::CtWindow::custom(a.window_low.value_or(-175.0), a.window_high.value_or(250.0))
                                : curation::CtWindow::for_region(curation::parse_body_region(a.body_region));
        vol = curation::window_ct(std::move(vol), window);
    } else if (modality == Modality::MRI) {
        vol.modality = curation::VolumeModality::MRI;
        vol = curation::zscore_mri(std::move(vol));
    } else {
        throw std::invalid_argument("volumes must be CT or MRI; use PNG for 2D modalities");
    }
    return curation::slice_axial(vol, modality);
}

int cmd_curate(const Globals& g, const CurateArgs& a) {
    if (!a.masks.empty() && a.masks.size() != a.inputs.size())
        throw std::invalid_argument("give one --mask per --input");
    const Modality modality = parse_modality(a.modality);
    const TaskKind task = parse_task(a.task);
    if (a.label.empty()) throw std::invalid_argument("--label is required");

    DatasetManifest manifest;
    manifest.seed = g.effective_seed();
    size_t skipped = 0;
    for (size_t i = 0; i < a.inputs.size(); ++i) {
        const fs::path input = a.inputs[i];
        std::optional<fs::path> mask;
        if (!a.masks.empty()) mask = fs::path(a.masks[i]);
        auto slices = load_slices(input, mask, modality, a);
        for (size_t k = 0; k < slices.size(); ++k) {
            auto& sp = slices[k];
            if (!sp.image.volume_id) sp.image.volume_id = input.stem().string();
            if (!a.size.empty()) {
                const auto [h, w] = parse_size(a.size);
                auto r = curation::resize_pair(sp.image, sp.mask, h, w);
                sp.image = std::move(r.image);
                sp.mask = std::move(r.mask);
            }
            const bool empty = !sp.mask || is_all_zero(*sp.mask);
            RegionAnnotation ann;
            if (task == TaskKind::DiseaseRecognition && empty) {
                ann = RegionAnnotation::from_mask(Mask(sp.image.pixels.height, sp.image.pixels.width),
                                                  std::string(text::kNoFindings));
            } else if (empty) {
                ++skipped;
                continue;
            } else if (task == TaskKind::RoiClassification || task == TaskKind::RegionReport) {
                ann = RegionAnnotation::from_bbox(curation::mask_to_bbox(*sp.mask), a.label);
            } else {
                ann = RegionAnnotation::from_mask(*sp.mask, a.label);
            }
            VqaSample s = curation::to_vqa(sp.image, ann, task, 0);
            s.id = input.stem().string() + "_s" + std::to_string(sp.image.slice_index.value_or(static_cast<int>(k)));
            manifest.samples.push_back(std::move(s));
        }
    }
    if (manifest.samples.empty()) throw std::runtime_error("no samples produced (all masks empty?)");
    if (a.no_split) {
        for (const auto& s : manifest.samples) manifest.split[s.split_key()] = Split::Train;
    } else {
        manifest = split_dataset(std::move(manifest), g.effective_seed());
    }
    const fs::path path = fs::path(g.out) / "manifest.json";
    save_manifest(manifest, path);
    std::printf("wrote %zu samples to %s (%zu slices without foreground skipped)\n", manifest.samples.size(),
                path.string().c_str(), skipped);
    return 0;
}

// ------------------------------------------------------------------ train

int cmd_train(const Globals& g, const std::string& manifest_path, std::optional<int> epochs, std::optional<double> lr,
              std::optional<int> batch) {
    const auto manifest = load_manifest(manifest_path);
    model::ModelConfig mc =
        g.config.contains("model") ? model::ModelConfig::from_json(g.config["model"]) : model::ModelConfig{};
    training::TrainConfig tc = g.config.contains("train") ? training::TrainConfig::from_json(g.config["train"])
                                                          : training::TrainConfig{};
    tc.seed = g.effective_seed();
    if (epochs) tc.epochs = *epochs;
    if (lr) tc.lr = *lr;
    if (batch) tc.batch_size = *batch;
    if (!manifest.samples.empty()) {
        mc.image_height = manifest.samples.front().image.pixels.height;
        mc.image_width = manifest.samples.front().image.pixels.width;
    }
    mc.vocab = model::vocabulary_for(manifest);
    mc.init_seed = tc.seed;

    const fs::path out = g.out;
    fs::create_directories(out);
    model::GroundedModel<float> m(mc);
    std::ofstream log(out / "train_log.jsonl");
    std::vector<plots::Series> curves(4);
    curves[0].name = "L";
    curves[1].name = "L_text";
    curves[2].name = "L_bce";
    curves[3].name = "L_dice";
    const auto records = training::train(m, manifest, tc, [&](const training::StepRecord& r) {
        log << r.to_json().dump() << '\n';
        const double x = static_cast<double>(r.step);
        curves[0].x.push_back(x), curves[0].y.push_back(r.loss);
        curves[1].x.push_back(x), curves[1].y.push_back(r.text);
        if (r.bce) curves[2].x.push_back(x), curves[2].y.push_back(*r.bce);
        if (r.dice) curves[3].x.push_back(x), curves[3].y.push_back(*r.dice);
        if (r.step % 100 == 0)
            std::fprintf(stderr, "step %ld  lr %.2e  L %.4f  (%s)\n", r.step, r.lr, r.loss,
                         std::string(to_string(r.task)).c_str());
    });
    model::save_checkpoint(m, out / "model.gkck");
    write_text(out / "loss_curve.svg", plots::line_chart(curves, "Training loss", "step", "loss"));
    write_text(out / "run_config.json", json{{"model", mc.to_json()}, {"train", tc.to_json()}, {"seed", tc.seed}}.dump(2) + "\n");
    std::printf("trained %zu steps; checkpoint %s\n", records.size(), (out / "model.gkck").string().c_str());
    return 0;
}

// ------------------------------------------------------------------ infer

json output_record(const std::string& id, const std::string& question, const GroundedOutput& o,
                   const std::optional<std::string>& mask_path) {
    json j = {{"id", id}, {"question", question}, {"answer", o.answer}};
    j["mask_path"] = mask_path ? json(*mask_path) : json(nullptr);
    if (o.mask) j["mask_pixels"] = count_foreground(*o.mask);
    return j;
}

int cmd_infer(const Globals& g, const std::string& ckpt, const std::string& image_path, const std::string& question,
              const std::string& modality, const std::string& manifest_path, const std::string& split) {
    if (!fs::exists(ckpt)) throw std::runtime_error("cannot read checkpoint: " + ckpt);
    const auto m = model::load_checkpoint(ckpt);
    const fs::path out = g.out;
    fs::create_directories(out);

    if (!manifest_path.empty()) {
        const auto manifest = load_manifest(manifest_path);
        const Split which = split == "train" ? Split::Train : split == "test" ? Split::Test
                                                          : throw std::invalid_argument("split must be train or test");
        std::vector<eval::Prediction> preds;
        for (const VqaSample* s : manifest.select(which)) {
            const auto o = m.forward_grounded(fit_to_model(s->image, m.config()), s->question);
            eval::Prediction p{s->id, o.answer, o.mask};
            if (p.mask && !p.mask->same_shape(s->image.pixels))
                p.mask = curation::resize_pair(ImageSample{}, p.mask, s->image.pixels.height, s->image.pixels.width).mask;
            preds.push_back(std::move(p));
        }
        eval::write_predictions(out / "predictions.jsonl", preds);
        std::printf("wrote %zu predictions to %s\n", preds.size(), (out / "predictions.jsonl").string().c_str());
        return 0;
    }

    if (image_path.empty() || question.empty()) throw std::invalid_argument("need --image and --question, or --manifest");
    const ImageSample img = fit_to_model(load_image(image_path, parse_modality(modality)), m.config());
    const auto o = m.forward_grounded(img, question);
    write_text(out / "answer.txt", o.answer + "\n");
    std::optional<std::string> mask_rel;
    if (o.mask) {
        io::write_mask_png(out / "mask.png", *o.mask);
        mask_rel = "mask.png";
    } else if (fs::exists(out / "mask.png")) {
        fs::remove(out / "mask.png");
    }
    write_text(out / "output.json", output_record(fs::path(image_path).stem().string(), question, o, mask_rel).dump(2) + "\n");
    std::printf("%s\n", o.answer.c_str());
    return 0;
}

// ------------------------------------------------------------------ eval

int cmd_eval(const Globals& g, const std::vector<std::string>& predictions, const std::string& manifest_path,
             const std::string& baseline, const std::string& split) {
    const auto manifest = load_manifest(manifest_path);
    const Split which = split == "train" ? Split::Train : Split::Test;
    std::vector<eval::TrialScores> trials;
    for (const auto& p : predictions) trials.push_back(eval::score_trial(manifest, eval::read_predictions(p), which));
    auto report = eval::build_report(trials);
    if (!baseline.empty())
        eval::add_dice_comparison(report, trials.front(), eval::score_trial(manifest, eval::read_predictions(baseline), which),
                                  "model_vs_baseline");

    const fs::path out = g.out;
    write_text(out / "report.json", report.to_json().dump(2) + "\n");
    const std::string table = report.to_table(1, 100.0);
    write_text(out / "report.txt", table);

    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& [name, ms] : report.datasets) {
        const auto colon = name.find(':');
        if (colon == std::string::npos || !ms.count("Dice")) continue;
        labels.push_back(name.substr(colon + 1));
        values.push_back(ms.at("Dice").mean);
    }
    write_text(out / "dice_by_class.svg", plots::bar_chart(labels, values, "Mean Dice by class", "Dice"));
    std::cout << table;
    return 0;
}

// ------------------------------------------------------------------ selftest

int cmd_selftest(const Globals& g) {
    selftest::Options opts;
    opts.seed = g.effective_seed();
    const auto report = selftest::run(opts);
    const fs::path out = g.out;
    write_text(out / "selftest.json", report.to_json().dump(2) + "\n");
    write_text(out / "selftest.txt", report.to_text());
    std::cout << report.to_text();
    return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"groundkit: toy grounded biomedical interpretation pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON config with optional \"model\", \"train\" and \"seed\" keys")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Random seed (default 42)");
    app.add_option("--out", g.out, "Output directory");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic CT dataset");
    std::string tasks = "Segmentation,DiseaseRecognition", size = "64x64";
    int volumes = 200, depth = 4;
    synth->add_option("--tasks", tasks, "Comma-separated task names");
    synth->add_option("--volumes", volumes)->check(CLI::PositiveNumber);
    synth->add_option("--depth", depth)->check(CLI::PositiveNumber);
    synth->add_option("--size", size, "HxW");

    auto* curate = app.add_subcommand("curate", "Convert images or volumes with masks into VQA samples");
    CurateArgs ca;
    curate->add_option("--input", ca.inputs, "GKV1 volume or PNG image (repeatable)")->required();
    curate->add_option("--mask", ca.masks, "GKV1 u8 mask volume or PNG mask, one per input");
    curate->add_option("--modality", ca.modality);
    curate->add_option("--body-region", ca.body_region, "CT window: chest or abdomen");
    curate->add_option("--window-low", ca.window_low);
    curate->add_option("--window-high", ca.window_high);
    curate->add_option("--task", ca.task);
    curate->add_option("--label", ca.label);
    curate->add_option("--size", ca.size, "Resize to HxW");
    curate->add_flag("--no-split", ca.no_split, "Put every sample in the train split");

    auto* train = app.add_subcommand("train", "Train a model on a manifest");
    std::string manifest;
    std::optional<int> epochs, batch;
    std::optional<double> lr;
    train->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    train->add_option("--epochs", epochs);
    train->add_option("--lr", lr);
    train->add_option("--batch-size", batch);

    auto* infer = app.add_subcommand("infer", "Run a checkpoint on one image or a manifest split");
    std::string ckpt, image, question, modality = "CT", infer_manifest, split = "test";
    infer->add_option("--checkpoint", ckpt)->required();
    infer->add_option("--image", image);
    infer->add_option("--question", question);
    infer->add_option("--modality", modality);
    infer->add_option("--manifest", infer_manifest);
    infer->add_option("--split", split);

    auto* evalc = app.add_subcommand("eval", "Score predictions against a manifest");
    std::vector<std::string> predictions;
    std::string baseline, eval_manifest, eval_split = "test";
    evalc->add_option("--predictions", predictions, "Predictions JSONL, one per trial (repeatable)")->required();
    evalc->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
    evalc->add_option("--baseline", baseline, "Predictions of a comparison model for paired t-tests");
    evalc->add_option("--split", eval_split);

    auto* self = app.add_subcommand("selftest", "Run metric oracles, gradient checks and invariants");

    CLI11_PARSE(app, argc, argv);

    try {
        if (const char* threads = std::getenv("GROUNDKIT_THREADS")) {
            const int n = std::atoi(threads);
            if (n < 1) throw std::invalid_argument("GROUNDKIT_THREADS must be a positive integer");
        }
        if (!g.config_path.empty()) {
            std::ifstream in(g.config_path);
            g.config = json::parse(in);
        }
        if (*synth) return cmd_synth(g, tasks, volumes, depth, size);
        if (*curate) return cmd_curate(g, ca);
        if (*train) return cmd_train(g, manifest, epochs, lr, batch);
        if (*infer) return cmd_infer(g, ckpt, image, question, modality, infer_manifest, split);
        if (*evalc) return cmd_eval(g, predictions, eval_manifest, baseline, eval_split);
        if (*self) return cmd_selftest(g);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
