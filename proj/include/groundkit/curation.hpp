#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "groundkit/datamodel.hpp"
#include "groundkit/grid.hpp"

namespace groundkit::curation {

enum class BodyRegion { Chest, Abdomen };

BodyRegion parse_body_region(std::string_view s);

// HU clipping window.
struct CtWindow {
    double low = -175.0;
    double high = 250.0;
    BodyRegion body_region = BodyRegion::Abdomen;

    // Chest [-1000, 500], abdomen [-175, 250].
    static CtWindow for_region(BodyRegion region);
    // Other body regions: caller supplies the bounds. Requires low < high.
    static CtWindow custom(double low, double high);
};

enum class VolumeModality { CT, MRI };

struct Volume3D {
    Grid3<float> voxels;
    std::optional<Grid3<std::uint8_t>> masks;
    VolumeModality modality = VolumeModality::CT;
    std::string volume_id;
};

// Clamp to the window and rescale linearly to [0, 1]. Throws on non-CT input.
Volume3D window_ct(Volume3D volume, const CtWindow& window);

inline constexpr double kZScoreEpsilon = 1e-8;

// (v - mean) / max(std, 1e-8) over the whole volume. Throws on non-MRI input.
Volume3D zscore_mri(Volume3D volume);

struct SlicePair {
    ImageSample image;
    std::optional<Mask> mask;
};

std::vector<SlicePair> slice_axial(const Volume3D& volume, Modality modality = Modality::CT);

// Tightest box around the foreground. Throws std::invalid_argument("empty mask").
BBox mask_to_bbox(const Mask& mask);

// Paints the box border band (inside the box, `thickness` pixels wide) with 1.0.
ImageSample overlay_bbox(ImageSample image, const BBox& bbox, int thickness = 2);

struct ResizedPair {
    ImageSample image;
    std::optional<Mask> mask;
};

// Bilinear (half-pixel centers) for the image, nearest-neighbor for the mask.
ResizedPair resize_pair(const ImageSample& image, const std::optional<Mask>& mask, int out_height, int out_width);

// Question/answer templates, two variants per task. Placeholders:
// {modality} and {label}; {Label} is the capitalized label.
struct TaskTemplates {
    std::vector<std::string> questions;
    std::string answer;
};
inline constexpr std::string_view kTemplateVersion = "v1";
const TaskTemplates& templates_for(TaskKind task);

// Builds a VQA sample from an image and an annotation. Region tasks take a
// bbox annotation and get the box overlaid on the image; the other tasks take
// a mask. A DiseaseRecognition annotation labelled "No findings" produces the
// negative sample ("No findings", all-zero mask).
VqaSample to_vqa(const ImageSample& image, const RegionAnnotation& annotation, TaskKind task, int variant = 0);

}  // namespace groundkit::curation
