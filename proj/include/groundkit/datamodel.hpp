#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "groundkit/grid.hpp"

namespace groundkit {

enum class Modality { CT, MRI, XRay, Pathology, Ultrasound, Fundus, Dermoscopy, Endoscope, OCT, PET };

enum class TaskKind { Segmentation, DiseaseRecognition, RoiClassification, RegionReport, GroundedReport };

inline constexpr std::array<TaskKind, 5> kAllTasks = {TaskKind::Segmentation, TaskKind::DiseaseRecognition,
                                                      TaskKind::RoiClassification, TaskKind::RegionReport,
                                                      TaskKind::GroundedReport};

std::string_view to_string(Modality m);
std::string_view to_string(TaskKind t);
Modality parse_modality(std::string_view s);
TaskKind parse_task(std::string_view s);

// Human-readable modality name used inside question templates ("CT", "X-ray", ...).
std::string_view display_name(Modality m);

// Segmentation, DiseaseRecognition and GroundedReport carry a target mask;
// the two region tasks are text-only.
constexpr bool task_requires_mask(TaskKind t) {
    return t == TaskKind::Segmentation || t == TaskKind::DiseaseRecognition || t == TaskKind::GroundedReport;
}

struct ImageSample {
    Image pixels;
    Modality modality = Modality::CT;
    std::optional<std::string> volume_id;
    std::optional<int> slice_index;
};

// (row_min, col_min, row_max, col_max), inclusive.
struct BBox {
    int row_min = 0;
    int col_min = 0;
    int row_max = 0;
    int col_max = 0;

    bool operator==(const BBox&) const = default;
    bool fits(int height, int width) const {
        return 0 <= row_min && row_min <= row_max && row_max < height && 0 <= col_min && col_min <= col_max &&
               col_max < width;
    }
};

struct RegionAnnotation {
    enum class Kind { Mask, BBox };
    Kind kind = Kind::Mask;
    std::optional<Mask> mask;
    std::optional<BBox> bbox;
    std::string label;

    static RegionAnnotation from_mask(Mask m, std::string label);
    static RegionAnnotation from_bbox(BBox b, std::string label);
};

struct VqaSample {
    std::string id;
    ImageSample image;
    std::string question;
    std::string answer;
    std::optional<Mask> target_mask;
    TaskKind task = TaskKind::Segmentation;
    // Class or finding the sample is about; informational, used for per-class reports.
    std::string label;

    // Key used by the volume-level split: the volume id, or the sample id for 2D-native data.
    std::string split_key() const { return image.volume_id.value_or(id); }
};

struct GroundedOutput {
    std::string answer;
    std::optional<Mask> mask;
    std::optional<Grid2<float>> mask_logits;
};

enum class Split { Train, Test };

struct DatasetManifest {
    std::vector<VqaSample> samples;
    std::map<std::string, Split> split;
    std::uint64_t seed = 42;

    std::vector<const VqaSample*> select(Split which) const;
};

struct Violation {
    std::string field;
    std::string message;
};

// Empty result means the sample satisfies every VqaSample invariant.
std::vector<Violation> validate_sample(const VqaSample& sample);
// Mask present iff the answer has [SEG] or reads "No findings" (then all zero),
// and any mask matches the image shape.
std::vector<Violation> validate_output(const GroundedOutput& output, int height, int width);

// Partition of the distinct volume keys: floor(0.2 * N) test volumes, at least one.
// Throws std::invalid_argument("unsplittable") with fewer than two volumes.
DatasetManifest split_dataset(DatasetManifest manifest, std::uint64_t seed);

// Run-length encoding of a binary mask: row-major alternating zero/one run
// counts, starting with a (possibly empty) zero run.
std::vector<std::int64_t> rle_encode(const Mask& m);
Mask rle_decode(const std::vector<std::int64_t>& runs, int height, int width);

// Manifest persistence. Images are written as single-slice GKV1 files under
// <dir>/images/, masks are embedded as RLE.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& json_path);
DatasetManifest load_manifest(const std::filesystem::path& json_path);

nlohmann::json mask_to_json(const Mask& m);
Mask mask_from_json(const nlohmann::json& j);

}  // namespace groundkit
