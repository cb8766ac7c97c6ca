#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "groundkit/curation.hpp"
#include "groundkit/datamodel.hpp"

namespace groundkit::synth {

enum class ShapeKind { Ellipse, Rectangle, Blob };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::Ellipse;
    std::string class_name;
    double intensity = 0.5;  // normalized, [0, 1]
    double min_frac = 0.1;   // extent as a fraction of the image side
    double max_frac = 0.2;
    int min_count = 1;  // instances per slice
    int max_count = 1;
    // Lesion classes drive the per-slice "No findings" label.
    bool lesion = false;
};

// Throws std::invalid_argument when a ShapeSpec invariant is violated.
void check_spec(const ShapeSpec& spec);

struct GenOptions {
    // When set, each slice receives at most one lesion class: with probability
    // lesion_slice_prob one lesion spec is drawn uniformly, otherwise none.
    bool exclusive_lesions = false;
    double lesion_slice_prob = 0.7;
    double body_intensity = 0.1;
    double noise_std = 0.02;
    // Normalized intensities are stored as HU through this window; outside the
    // body ellipse the volume holds air (-1000 HU).
    curation::CtWindow hu_window = curation::CtWindow::for_region(curation::BodyRegion::Abdomen);
};

struct RenderedShape {
    int slice = 0;
    int class_index = 0;
    ShapeKind kind = ShapeKind::Ellipse;
    double center_row = 0, center_col = 0;
    double half_height = 0, half_width = 0;
};

struct GeneratedVolume {
    curation::Volume3D volume;  // CT, HU values
    std::vector<std::string> class_names;
    std::vector<Grid3<std::uint8_t>> class_masks;  // one per spec, mutually disjoint
    std::vector<std::vector<std::string>> slice_labels;
    std::vector<RenderedShape> shapes;
};

inline constexpr std::string_view kNoFindingsLabel = "No findings";

GeneratedVolume gen_volume(const std::vector<ShapeSpec>& specs, int depth, int height, int width, std::uint64_t seed,
                           const GenOptions& options = {});

// "organ_a" -> "organ a"
std::string display_label(std::string_view class_name);

struct DatasetOptions {
    int depth = 4;
    int height = 64;
    int width = 64;
    std::vector<ShapeSpec> shapes;  // empty: default organ + two lesion classes
    GenOptions gen;
    // Foreground pixels a class needs in a slice to produce a sample.
    int min_pixels = 4;
};

// Default desk-scale anatomy: one organ class and two lesion classes, at most
// one lesion class per slice, roughly a third of slices lesion-free.
std::vector<ShapeSpec> default_shapes();
DatasetOptions default_dataset_options();

// Volumes are windowed, sliced and converted to VQA samples for every listed
// task, then split 80/20 at the volume level with the same seed.
DatasetManifest gen_dataset(const std::vector<TaskKind>& tasks, int n_volumes, std::uint64_t seed,
                            const DatasetOptions& options = default_dataset_options());

DatasetManifest gen_task_dataset(TaskKind task, int n_volumes, std::uint64_t seed,
                                 const DatasetOptions& options = default_dataset_options());

}  // namespace groundkit::synth
