#include <doctest.h>

#include <cmath>

#include "groundkit/curation.hpp"
#include "groundkit/rng.hpp"
#include "groundkit/text.hpp"

using namespace groundkit;
using namespace groundkit::curation;

namespace {

Volume3D ct(std::vector<float> values) {
    Volume3D v;
    v.voxels = Grid3<float>(1, 1, static_cast<int>(values.size()));
    v.voxels.data = std::move(values);
    return v;
}

Volume3D mri(std::vector<float> values) {
    Volume3D v = ct(std::move(values));
    v.modality = VolumeModality::MRI;
    return v;
}

ImageSample blank(int h, int w, float v = 0.0f) {
    ImageSample s;
    s.pixels = Image(h, w, v);
    return s;
}

}  // namespace

TEST_CASE("window bounds") {
    const auto chest = CtWindow::for_region(BodyRegion::Chest);
    CHECK(chest.low == -1000.0);
    CHECK(chest.high == 500.0);
    const auto abd = CtWindow::for_region(BodyRegion::Abdomen);
    CHECK(abd.low == -175.0);
    CHECK(abd.high == 250.0);
    CHECK_THROWS(CtWindow::custom(10, 10));
}

TEST_CASE("window_ct examples") {
    const auto out = window_ct(ct({700.f, -2000.f, -250.f}), CtWindow::for_region(BodyRegion::Chest));
    CHECK(out.voxels.data[0] == 1.0f);
    CHECK(out.voxels.data[1] == 0.0f);
    CHECK(out.voxels.data[2] == doctest::Approx(0.5));
    CHECK_THROWS(window_ct(mri({1.f}), CtWindow::for_region(BodyRegion::Chest)));
}

TEST_CASE("window_ct output in unit range") {
    Rng rng(1);
    std::vector<float> v(200);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-3000, 3000));
    for (auto region : {BodyRegion::Chest, BodyRegion::Abdomen}) {
        const auto out = window_ct(ct(v), CtWindow::for_region(region));
        for (float x : out.voxels.data) {
            CHECK(x >= 0.0f);
            CHECK(x <= 1.0f);
        }
    }
}

TEST_CASE("zscore_mri examples") {
    const auto c = zscore_mri(mri({5.f, 5.f, 5.f}));
    for (float x : c.voxels.data) CHECK(x == 0.0f);
    const auto two = zscore_mri(mri({0.f, 2.f}));
    CHECK(two.voxels.data[0] == doctest::Approx(-1.0));
    CHECK(two.voxels.data[1] == doctest::Approx(1.0));
    Rng rng(2);
    std::vector<float> v(50);
    for (auto& x : v) x = static_cast<float>(rng.uniform(0, 900));
    const auto once = zscore_mri(mri(v));
    const auto twice = zscore_mri(once);
    for (size_t i = 0; i < v.size(); ++i) CHECK(twice.voxels.data[i] == doctest::Approx(once.voxels.data[i]).epsilon(1e-4));
    CHECK_THROWS(zscore_mri(ct({1.f})));
}

TEST_CASE("slice_axial") {
    Volume3D v;
    v.volume_id = "vol";
    v.voxels = Grid3<float>(4, 3, 2);
    for (size_t i = 0; i < v.voxels.data.size(); ++i) v.voxels.data[i] = static_cast<float>(i);
    v.masks = Grid3<std::uint8_t>(4, 3, 2);
    const auto slices = slice_axial(v);
    REQUIRE(slices.size() == 4);
    for (int z = 0; z < 4; ++z) {
        const auto& s = slices[static_cast<size_t>(z)];
        CHECK(s.image.slice_index == z);
        CHECK(s.image.volume_id == "vol");
        CHECK(s.image.pixels == v.voxels.slice(z));
        REQUIRE(s.mask.has_value());
        CHECK(s.mask->height == 3);
        CHECK(s.mask->width == 2);
    }
    v.masks.reset();
    for (const auto& s : slice_axial(v)) CHECK_FALSE(s.mask.has_value());
}

TEST_CASE("mask_to_bbox") {
    Mask m(8, 8);
    for (int r = 2; r <= 4; ++r)
        for (int c = 3; c <= 5; ++c) m(r, c) = 1;
    CHECK(mask_to_bbox(m) == BBox{2, 3, 4, 5});
    Mask one(5, 5);
    one(0, 0) = 1;
    CHECK(mask_to_bbox(one) == BBox{0, 0, 0, 0});
    CHECK(mask_to_bbox(Mask(6, 7, 1)) == BBox{0, 0, 5, 6});
    CHECK_THROWS_WITH(mask_to_bbox(Mask(3, 3)), "empty mask");
}

TEST_CASE("overlay_bbox") {
    const auto out = overlay_bbox(blank(16, 16), {4, 4, 8, 8});
    CHECK(out.pixels(4, 4) == 1.0f);
    CHECK(out.pixels(8, 6) == 1.0f);
    CHECK(out.pixels(5, 7) == 1.0f);
    CHECK(out.pixels(6, 6) == 0.0f);
    CHECK(out.pixels(3, 4) == 0.0f);
    CHECK(overlay_bbox(out, {4, 4, 8, 8}).pixels == out.pixels);

    const auto whole = overlay_bbox(blank(6, 6), {0, 0, 5, 5});
    CHECK(whole.pixels(1, 3) == 1.0f);
    CHECK(whole.pixels(2, 2) == 0.0f);
    CHECK_THROWS_AS(overlay_bbox(blank(4, 4), {0, 0, 4, 4}), std::out_of_range);
}

TEST_CASE("resize_pair") {
    Rng rng(4);
    ImageSample img = blank(9, 7);
    for (auto& x : img.pixels.data) x = static_cast<float>(rng.uniform());
    Mask m(9, 7);
    for (auto& x : m.data) x = rng.uniform() < 0.5;
    const auto same = resize_pair(img, m, 9, 7);
    for (size_t i = 0; i < img.pixels.data.size(); ++i) CHECK(std::abs(same.image.pixels.data[i] - img.pixels.data[i]) < 1e-6);
    CHECK(*same.mask == m);

    const auto big = resize_pair(img, m, 20, 13);
    CHECK(big.image.pixels.height == 20);
    CHECK(big.image.pixels.width == 13);
    for (auto v : big.mask->data) CHECK((v == 0 || v == 1));

    const auto c = resize_pair(blank(5, 5, 0.3f), std::nullopt, 11, 3);
    for (float v : c.image.pixels.data) CHECK(v == doctest::Approx(0.3f));
    CHECK_FALSE(c.mask.has_value());
}

TEST_CASE("to_vqa disease recognition template") {
    ImageSample img = blank(8, 8, 0.2f);
    img.modality = Modality::CT;
    Mask m(8, 8);
    m(3, 3) = 1;
    const auto s = to_vqa(img, RegionAnnotation::from_mask(m, "liver tumor"), TaskKind::DiseaseRecognition);
    CHECK(s.question ==
          "Can you identify any abnormality within this CT image? Please respond with segmentation masks.");
    CHECK(s.answer == "It is [SEG]. Liver tumor");
    CHECK(s.target_mask == m);
    CHECK(validate_sample(s).empty());
}

TEST_CASE("to_vqa healthy slice") {
    const auto s = to_vqa(blank(8, 8), RegionAnnotation::from_mask(Mask(8, 8), "No findings"),
                          TaskKind::DiseaseRecognition);
    CHECK(s.answer == "No findings");
    REQUIRE(s.target_mask.has_value());
    CHECK(is_all_zero(*s.target_mask));
    CHECK(validate_sample(s).empty());
}

TEST_CASE("to_vqa roi classification") {
    const auto s = to_vqa(blank(12, 12), RegionAnnotation::from_bbox({2, 2, 6, 7}, "organ a"),
                          TaskKind::RoiClassification);
    CHECK(s.answer == "Organ a");
    CHECK_FALSE(text::contains_seg(s.answer));
    CHECK_FALSE(s.target_mask.has_value());
    CHECK(s.image.pixels(2, 2) == 1.0f);
    CHECK(validate_sample(s).empty());
    CHECK_THROWS(to_vqa(blank(4, 4), RegionAnnotation::from_mask(Mask(4, 4), "x"), TaskKind::RoiClassification));
}

TEST_CASE("to_vqa every task yields a valid sample") {
    Mask m(10, 10);
    for (int r = 2; r < 6; ++r) m(r, 4) = 1;
    for (auto t : {TaskKind::Segmentation, TaskKind::DiseaseRecognition, TaskKind::GroundedReport})
        for (int variant = 0; variant < 2; ++variant)
            CHECK(validate_sample(to_vqa(blank(10, 10), RegionAnnotation::from_mask(m, "lesion a"), t, variant)).empty());
    for (auto t : {TaskKind::RoiClassification, TaskKind::RegionReport})
        CHECK(validate_sample(to_vqa(blank(10, 10), RegionAnnotation::from_bbox(mask_to_bbox(m), "lesion a"), t)).empty());
}
