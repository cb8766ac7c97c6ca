#include <doctest.h>

#include <filesystem>
#include <set>

#include "groundkit/datamodel.hpp"
#include "groundkit/rng.hpp"

using namespace groundkit;
namespace fs = std::filesystem;

namespace {

VqaSample sample(std::string answer, TaskKind task, bool mask, int fg = 1) {
    VqaSample s;
    s.id = "s0";
    s.image.pixels = Image(4, 4, 0.5f);
    s.question = "Where is it?";
    s.answer = std::move(answer);
    s.task = task;
    if (mask) {
        s.target_mask = Mask(4, 4);
        for (int i = 0; i < fg; ++i) s.target_mask->data[static_cast<size_t>(i)] = 1;
    }
    return s;
}

bool has_field(const std::vector<Violation>& v, const std::string& field) {
    for (const auto& x : v)
        if (x.field == field) return true;
    return false;
}

DatasetManifest volumes(int n, int slices) {
    DatasetManifest m;
    for (int v = 0; v < n; ++v)
        for (int z = 0; z < slices; ++z) {
            VqaSample s = sample("It is [SEG].", TaskKind::Segmentation, true);
            s.id = "v" + std::to_string(v) + "_" + std::to_string(z);
            s.image.volume_id = "v" + std::to_string(v);
            s.image.slice_index = z;
            m.samples.push_back(s);
        }
    return m;
}

}  // namespace

TEST_CASE("validate_sample examples") {
    CHECK(validate_sample(sample("It is [SEG]. Liver tumor", TaskKind::DiseaseRecognition, true)).empty());
    CHECK(has_field(validate_sample(sample("Liver tumor", TaskKind::RoiClassification, true)), "task"));
    CHECK(has_field(validate_sample(sample("It is [SEG].", TaskKind::Segmentation, false)), "answer"));
}

TEST_CASE("validate_sample no findings exception") {
    CHECK(validate_sample(sample("No findings", TaskKind::DiseaseRecognition, true, 0)).empty());
    CHECK_FALSE(validate_sample(sample("No findings", TaskKind::DiseaseRecognition, true, 3)).empty());
    CHECK_FALSE(validate_sample(sample("Liver tumor", TaskKind::GroundedReport, true)).empty());
    CHECK(validate_sample(sample("Liver tumor", TaskKind::RoiClassification, false)).empty());
}

TEST_CASE("validate_sample shape and values") {
    auto s = sample("It is [SEG].", TaskKind::Segmentation, true);
    s.target_mask = Mask(3, 4);
    s.target_mask->data[0] = 1;
    CHECK(has_field(validate_sample(s), "target_mask"));
    auto t = sample("It is [SEG].", TaskKind::Segmentation, true);
    t.target_mask->data[2] = 7;
    CHECK(has_field(validate_sample(t), "target_mask"));
    auto u = sample("It is [SEG].", TaskKind::Segmentation, true);
    u.image.slice_index = 2;
    CHECK(has_field(validate_sample(u), "image"));
}

TEST_CASE("validate_output biconditional") {
    GroundedOutput o;
    o.answer = "It is [SEG].";
    CHECK_FALSE(validate_output(o, 4, 4).empty());
    o.mask = Mask(4, 4);
    CHECK(validate_output(o, 4, 4).empty());
    CHECK_FALSE(validate_output(o, 5, 4).empty());
    o.answer = "no findings";
    CHECK(validate_output(o, 4, 4).empty());
    o.mask->data[0] = 1;
    CHECK_FALSE(validate_output(o, 4, 4).empty());
    o.answer = "lesion a";
    CHECK_FALSE(validate_output(o, 4, 4).empty());
    o.mask.reset();
    CHECK(validate_output(o, 4, 4).empty());
}

TEST_CASE("split_dataset examples") {
    auto ten = split_dataset(volumes(10, 3), 42);
    CHECK(ten.select(Split::Test).size() == 6);
    CHECK(ten.select(Split::Train).size() == 24);
    auto five = split_dataset(volumes(5, 1), 42);
    CHECK(five.select(Split::Test).size() == 1);
    CHECK(five.select(Split::Train).size() == 4);
    CHECK(split_dataset(volumes(10, 3), 42).split == ten.split);
    CHECK_THROWS_WITH(split_dataset(volumes(1, 4), 42), "unsplittable");
}

TEST_CASE("split keeps volumes whole") {
    auto m = split_dataset(volumes(23, 4), 7);
    std::map<std::string, std::set<int>> seen;
    for (const auto* s : m.select(Split::Test)) seen[s->split_key()].insert(0);
    for (const auto* s : m.select(Split::Train)) seen[s->split_key()].insert(1);
    for (const auto& [k, v] : seen) CHECK(v.size() == 1);
    CHECK(m.select(Split::Test).size() == 4 * 4);
}

TEST_CASE("rle round trip") {
    Rng rng(9);
    for (int t = 0; t < 20; ++t) {
        Mask m(7, 5);
        for (auto& v : m.data) v = rng.uniform() < 0.3;
        const auto runs = rle_encode(m);
        CHECK(rle_decode(runs, 7, 5) == m);
    }
    Mask ones(2, 2, 1);
    CHECK(rle_encode(ones) == std::vector<std::int64_t>{0, 4});
    CHECK_THROWS(rle_decode({3}, 2, 2));
}

TEST_CASE("manifest round trip") {
    auto m = split_dataset(volumes(3, 2), 42);
    m.samples[1].answer = "No findings";
    m.samples[1].task = TaskKind::DiseaseRecognition;
    m.samples[1].target_mask = Mask(4, 4);
    m.samples[2].task = TaskKind::RoiClassification;
    m.samples[2].answer = "organ a";
    m.samples[2].target_mask.reset();
    m.samples[0].image.pixels.data[3] = 0.125f;
    const fs::path dir = fs::temp_directory_path() / "groundkit_manifest_test";
    fs::remove_all(dir);
    save_manifest(m, dir / "manifest.json");
    const auto back = load_manifest(dir / "manifest.json");
    REQUIRE(back.samples.size() == m.samples.size());
    for (size_t i = 0; i < m.samples.size(); ++i) {
        CHECK(back.samples[i].id == m.samples[i].id);
        CHECK(back.samples[i].answer == m.samples[i].answer);
        CHECK(back.samples[i].task == m.samples[i].task);
        CHECK(back.samples[i].image.pixels == m.samples[i].image.pixels);
        CHECK(back.samples[i].image.volume_id == m.samples[i].image.volume_id);
        CHECK(back.samples[i].target_mask.has_value() == m.samples[i].target_mask.has_value());
        if (m.samples[i].target_mask) CHECK(*back.samples[i].target_mask == *m.samples[i].target_mask);
    }
    CHECK(back.split == m.split);
    CHECK(back.seed == m.seed);
    fs::remove_all(dir);
}

TEST_CASE("task and modality names") {
    for (auto t : {TaskKind::Segmentation, TaskKind::DiseaseRecognition, TaskKind::RoiClassification,
                   TaskKind::RegionReport, TaskKind::GroundedReport})
        CHECK(parse_task(to_string(t)) == t);
    CHECK(task_requires_mask(TaskKind::GroundedReport));
    CHECK_FALSE(task_requires_mask(TaskKind::RegionReport));
    CHECK_THROWS(parse_task("Captioning"));
    CHECK(parse_modality(to_string(Modality::MRI)) == Modality::MRI);
}
