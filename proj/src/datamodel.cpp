#include "groundkit/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "groundkit/image_io.hpp"
#include "groundkit/rng.hpp"
#include "groundkit/text.hpp"

namespace groundkit {

namespace {

constexpr std::array<std::pair<Modality, std::string_view>, 10> kModalityNames = {{
    {Modality::CT, "CT"},
    {Modality::MRI, "MRI"},
    {Modality::XRay, "XRay"},
    {Modality::Pathology, "Pathology"},
    {Modality::Ultrasound, "Ultrasound"},
    {Modality::Fundus, "Fundus"},
    {Modality::Dermoscopy, "Dermoscopy"},
    {Modality::Endoscope, "Endoscope"},
    {Modality::OCT, "OCT"},
    {Modality::PET, "PET"},
}};

constexpr std::array<std::pair<TaskKind, std::string_view>, 5> kTaskNames = {{
    {TaskKind::Segmentation, "Segmentation"},
    {TaskKind::DiseaseRecognition, "DiseaseRecognition"},
    {TaskKind::RoiClassification, "RoiClassification"},
    {TaskKind::RegionReport, "RegionReport"},
    {TaskKind::GroundedReport, "GroundedReport"},
}};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

std::string_view to_string(Modality m) {
    for (const auto& [k, name] : kModalityNames)
        if (k == m) return name;
    return "?";
}

std::string_view to_string(TaskKind t) {
    for (const auto& [k, name] : kTaskNames)
        if (k == t) return name;
    return "?";
}

Modality parse_modality(std::string_view s) {
    const std::string key = lower(s);
    for (const auto& [k, name] : kModalityNames)
        if (lower(name) == key) return k;
    if (key == "x-ray" || key == "xray") return Modality::XRay;
    throw std::invalid_argument("unknown modality: " + std::string(s));
}

TaskKind parse_task(std::string_view s) {
    const std::string key = lower(s);
    for (const auto& [k, name] : kTaskNames)
        if (lower(name) == key) return k;
    if (key == "seg" || key == "segmentation") return TaskKind::Segmentation;
    if (key == "disease" || key == "disease-recognition") return TaskKind::DiseaseRecognition;
    if (key == "roi" || key == "roi-classification") return TaskKind::RoiClassification;
    if (key == "region-report") return TaskKind::RegionReport;
    if (key == "grounded-report") return TaskKind::GroundedReport;
    throw std::invalid_argument("unknown task: " + std::string(s));
}

std::string_view display_name(Modality m) {
    switch (m) {
        case Modality::CT: return "CT";
        case Modality::MRI: return "MRI";
        case Modality::XRay: return "X-ray";
        case Modality::Pathology: return "pathology";
        case Modality::Ultrasound: return "ultrasound";
        case Modality::Fundus: return "fundus";
        case Modality::Dermoscopy: return "dermoscopy";
        case Modality::Endoscope: return "endoscopy";
        case Modality::OCT: return "OCT";
        case Modality::PET: return "PET";
    }
    return "";
}

RegionAnnotation RegionAnnotation::from_mask(Mask m, std::string label) {
    RegionAnnotation a;
    a.kind = Kind::Mask;
    a.mask = std::move(m);
    a.label = std::move(label);
    return a;
}

RegionAnnotation RegionAnnotation::from_bbox(BBox b, std::string label) {
    RegionAnnotation a;
    a.kind = Kind::BBox;
    a.bbox = b;
    a.label = std::move(label);
    return a;
}

std::vector<const VqaSample*> DatasetManifest::select(Split which) const {
    std::vector<const VqaSample*> out;
    for (const auto& s : samples) {
        auto it = split.find(s.split_key());
        if (it != split.end() && it->second == which) out.push_back(&s);
    }
    return out;
}

std::vector<Violation> validate_output(const GroundedOutput& o, int height, int width) {
    std::vector<Violation> v;
    const bool seg = text::contains_seg(o.answer);
    const bool none = text::is_no_findings(o.answer);
    if ((seg || none) != o.mask.has_value())
        v.push_back({"mask", o.mask ? "mask present without [SEG] or \"No findings\"" : "mask missing"});
    if (o.mask) {
        if (o.mask->height != height || o.mask->width != width) v.push_back({"mask", "mask shape differs from image"});
        if (none && !seg && !is_all_zero(*o.mask)) v.push_back({"mask", "\"No findings\" with a non-zero mask"});
    }
    if (o.mask_logits && (!o.mask || !o.mask_logits->same_shape(*o.mask)))
        v.push_back({"mask_logits", "logits without a matching mask"});
    return v;
}

std::vector<Violation> validate_sample(const VqaSample& s) {
    std::vector<Violation> v;
    const Image& px = s.image.pixels;
    if (px.height < 1 || px.width < 1) v.push_back({"image", "image must be at least 1x1"});
    if (std::any_of(px.data.begin(), px.data.end(), [](float x) { return !std::isfinite(x); }))
        v.push_back({"image", "non-finite pixel value"});
    if (s.image.slice_index && !s.image.volume_id) v.push_back({"image", "slice_index without volume_id"});
    if (s.image.slice_index && *s.image.slice_index < 0) v.push_back({"image", "negative slice_index"});
    if (s.question.empty()) v.push_back({"question", "question is empty"});
    if (s.answer.empty()) v.push_back({"answer", "answer is empty"});

    const bool has_seg = text::contains_seg(s.answer);
    const bool has_mask = s.target_mask.has_value();
    if (has_mask) {
        const Mask& m = *s.target_mask;
        if (!m.same_shape(px)) v.push_back({"target_mask", "mask shape differs from image shape"});
        if (std::any_of(m.data.begin(), m.data.end(), [](std::uint8_t x) { return x > 1; }))
            v.push_back({"target_mask", "mask values must be 0 or 1"});
    }
    if (has_seg && !has_mask) v.push_back({"answer", "[SEG] token without a target mask"});
    if (has_mask && !has_seg) {
        const bool negative = text::is_no_findings(s.answer) && is_all_zero(*s.target_mask);
        if (!negative) v.push_back({"target_mask", "target mask without [SEG] token"});
    }
    if (task_requires_mask(s.task) && !has_mask)
        v.push_back({"task", std::string(to_string(s.task)) + " requires a target mask"});
    if (!task_requires_mask(s.task) && has_mask)
        v.push_back({"task", std::string(to_string(s.task)) + " forbids a target mask"});
    return v;
}

DatasetManifest split_dataset(DatasetManifest manifest, std::uint64_t seed) {
    std::set<std::string> keys;
    for (const auto& s : manifest.samples) keys.insert(s.split_key());
    if (keys.size() < 2) throw std::invalid_argument("unsplittable");

    std::vector<std::string> order(keys.begin(), keys.end());
    Rng rng(seed);
    rng.shuffle(order);
    const size_t n_test = std::max<size_t>(1, order.size() / 5);

    manifest.split.clear();
    for (size_t i = 0; i < order.size(); ++i) manifest.split[order[i]] = i < n_test ? Split::Test : Split::Train;
    manifest.seed = seed;
    return manifest;
}

std::vector<std::int64_t> rle_encode(const Mask& m) {
    std::vector<std::int64_t> runs;
    std::uint8_t current = 0;
    std::int64_t count = 0;
    for (auto v : m.data) {
        const std::uint8_t b = v ? 1 : 0;
        if (b == current) {
            ++count;
        } else {
            runs.push_back(count);
            current = b;
            count = 1;
        }
    }
    runs.push_back(count);
    return runs;
}

Mask rle_decode(const std::vector<std::int64_t>& runs, int height, int width) {
    Mask m(height, width);
    size_t pos = 0;
    std::uint8_t value = 0;
    for (auto run : runs) {
        if (run < 0 || pos + static_cast<size_t>(run) > m.data.size())
            throw std::invalid_argument("RLE runs exceed mask size");
        std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
        pos += static_cast<size_t>(run);
        value ^= 1;
    }
    if (pos != m.data.size()) throw std::invalid_argument("RLE runs do not cover the mask");
    return m;
}

nlohmann::json mask_to_json(const Mask& m) { return {{"rle", rle_encode(m)}, {"shape", {m.height, m.width}}}; }

Mask mask_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 2) throw std::invalid_argument("mask shape must be [H, W]");
    return rle_decode(j.at("rle").get<std::vector<std::int64_t>>(), shape[0], shape[1]);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& json_path) {
    namespace fs = std::filesystem;
    const fs::path dir = json_path.has_parent_path() ? json_path.parent_path() : fs::path(".");
    fs::create_directories(dir / "images");

    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : manifest.samples) {
        const std::string rel = "images/" + s.id + ".gkv";
        io::write_gkv_image(dir / rel, s.image.pixels);
        nlohmann::json j = {
            {"id", s.id},
            {"task", to_string(s.task)},
            {"modality", to_string(s.image.modality)},
            {"question", s.question},
            {"answer", s.answer},
            {"label", s.label},
            {"image", rel},
            {"mask", s.target_mask ? mask_to_json(*s.target_mask) : nlohmann::json(nullptr)},
        };
        if (s.image.volume_id) j["volume_id"] = *s.image.volume_id;
        if (s.image.slice_index) j["slice_index"] = *s.image.slice_index;
        samples.push_back(std::move(j));
    }
    nlohmann::json split = nlohmann::json::object();
    for (const auto& [k, v] : manifest.split) split[k] = v == Split::Train ? "train" : "test";

    const nlohmann::json doc = {{"seed", manifest.seed}, {"samples", samples}, {"split", split}};
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write manifest: " + json_path.string());
    out << doc.dump(1) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& json_path) {
    namespace fs = std::filesystem;
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("cannot read manifest: " + json_path.string());
    const nlohmann::json doc = nlohmann::json::parse(in);
    const fs::path dir = json_path.has_parent_path() ? json_path.parent_path() : fs::path(".");

    DatasetManifest m;
    m.seed = doc.value("seed", std::uint64_t{42});
    for (const auto& j : doc.at("samples")) {
        VqaSample s;
        s.id = j.at("id").get<std::string>();
        s.task = parse_task(j.at("task").get<std::string>());
        s.image.modality = parse_modality(j.value("modality", std::string("CT")));
        s.question = j.at("question").get<std::string>();
        s.answer = j.at("answer").get<std::string>();
        s.label = j.value("label", std::string());
        if (j.contains("volume_id")) s.image.volume_id = j["volume_id"].get<std::string>();
        if (j.contains("slice_index")) s.image.slice_index = j["slice_index"].get<int>();
        const fs::path img = dir / j.at("image").get<std::string>();
        s.image.pixels = img.extension() == ".png" ? io::read_png(img) : io::read_gkv_image(img);
        if (j.contains("mask") && !j["mask"].is_null()) {
            const auto& mj = j["mask"];
            s.target_mask = mj.is_string() ? io::read_mask_png(dir / mj.get<std::string>()) : mask_from_json(mj);
        }
        m.samples.push_back(std::move(s));
    }
    if (doc.contains("split")) {
        for (const auto& [k, v] : doc["split"].items()) {
            const auto tag = v.get<std::string>();
            if (tag != "train" && tag != "test") throw std::invalid_argument("bad split tag: " + tag);
            m.split[k] = tag == "train" ? Split::Train : Split::Test;
        }
    }
    return m;
}

}  // namespace groundkit
