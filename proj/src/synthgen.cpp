#include "groundkit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "groundkit/rng.hpp"
#include "groundkit/text.hpp"

namespace groundkit::synth {

void check_spec(const ShapeSpec& s) {
    if (!(s.min_frac > 0.0 && s.min_frac <= s.max_frac && s.max_frac <= 1.0))
        throw std::invalid_argument("shape size range must satisfy 0 < min <= max <= 1: " + s.class_name);
    if (s.min_count < 0 || s.min_count > s.max_count)
        throw std::invalid_argument("shape count range must satisfy 0 <= min <= max: " + s.class_name);
    if (s.intensity < 0.0 || s.intensity > 1.0)
        throw std::invalid_argument("shape intensity must lie in [0, 1]: " + s.class_name);
}

std::string display_label(std::string_view class_name) {
    std::string out(class_name);
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

namespace {

struct Canvas {
    Grid2<float> intensity;
    std::vector<Mask> masks;
};

void paint(Canvas& canvas, int cls, double value, int r, int c) {
    canvas.intensity(r, c) = static_cast<float>(value);
    for (size_t k = 0; k < canvas.masks.size(); ++k) canvas.masks[k](r, c) = static_cast<int>(k) == cls ? 1 : 0;
}

RenderedShape render_shape(Canvas& canvas, const ShapeSpec& spec, int cls, int slice, Rng& rng) {
    const int h = canvas.intensity.height;
    const int w = canvas.intensity.width;
    RenderedShape s;
    s.slice = slice;
    s.class_index = cls;
    s.kind = spec.kind;
    s.half_height = std::max(0.5, rng.uniform(spec.min_frac, spec.max_frac) * h / 2.0);
    s.half_width = std::max(0.5, rng.uniform(spec.min_frac, spec.max_frac) * w / 2.0);
    s.half_height = std::min(s.half_height, (h - 1) / 2.0);
    s.half_width = std::min(s.half_width, (w - 1) / 2.0);
    s.center_row = rng.uniform(s.half_height, h - 1 - s.half_height);
    s.center_col = rng.uniform(s.half_width, w - 1 - s.half_width);

    // Blob radius modulation: a low-order Fourier perturbation of the ellipse.
    const int lobes = rng.uniform_int(2, 4);
    const double amp = rng.uniform(0.1, 0.25);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);

    const int r0 = std::max(0, static_cast<int>(std::floor(s.center_row - s.half_height * 1.3)));
    const int r1 = std::min(h - 1, static_cast<int>(std::ceil(s.center_row + s.half_height * 1.3)));
    const int c0 = std::max(0, static_cast<int>(std::floor(s.center_col - s.half_width * 1.3)));
    const int c1 = std::min(w - 1, static_cast<int>(std::ceil(s.center_col + s.half_width * 1.3)));
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const double dy = (r - s.center_row) / s.half_height;
            const double dx = (c - s.center_col) / s.half_width;
            bool inside = false;
            switch (spec.kind) {
                case ShapeKind::Ellipse: inside = dy * dy + dx * dx <= 1.0; break;
                case ShapeKind::Rectangle: inside = std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0; break;
                case ShapeKind::Blob: {
                    const double theta = std::atan2(dy, dx);
                    const double radius = 1.0 + amp * std::sin(lobes * theta + phase);
                    inside = std::sqrt(dy * dy + dx * dx) <= radius / (1.0 + amp);
                    break;
                }
            }
            if (inside) paint(canvas, cls, spec.intensity, r, c);
        }
    }
    return s;
}

}  // namespace

GeneratedVolume gen_volume(const std::vector<ShapeSpec>& specs, int depth, int height, int width, std::uint64_t seed,
                           const GenOptions& options) {
    if (depth < 1) throw std::invalid_argument("depth must be at least 1");
    if (height < 1 || width < 1) throw std::invalid_argument("size must be at least 1x1");
    for (const auto& s : specs) check_spec(s);

    Rng rng(seed);
    GeneratedVolume out;
    out.volume.modality = curation::VolumeModality::CT;
    out.volume.voxels = Grid3<float>(depth, height, width);
    out.class_masks.assign(specs.size(), Grid3<std::uint8_t>(depth, height, width));
    for (const auto& s : specs) out.class_names.push_back(s.class_name);

    std::vector<int> lesion_ids;
    for (size_t k = 0; k < specs.size(); ++k)
        if (specs[k].lesion) lesion_ids.push_back(static_cast<int>(k));

    const double body_ry = 0.47 * height;
    const double body_rx = 0.47 * width;
    const double cy = (height - 1) / 2.0;
    const double cx = (width - 1) / 2.0;
    const auto& win = options.hu_window;

    for (int z = 0; z < depth; ++z) {
        Canvas canvas{Grid2<float>(height, width, static_cast<float>(options.body_intensity)),
                      std::vector<Mask>(specs.size(), Mask(height, width))};

        int chosen_lesion = -1;
        if (options.exclusive_lesions && !lesion_ids.empty() && rng.uniform() < options.lesion_slice_prob)
            chosen_lesion = lesion_ids[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(lesion_ids.size()) - 1))];

        for (size_t k = 0; k < specs.size(); ++k) {
            const auto& spec = specs[k];
            int lo = spec.min_count;
            if (options.exclusive_lesions && spec.lesion) {
                if (static_cast<int>(k) != chosen_lesion) continue;
                lo = std::min(std::max(lo, 1), spec.max_count);
            }
            const int count = rng.uniform_int(lo, spec.max_count);
            for (int i = 0; i < count; ++i)
                out.shapes.push_back(render_shape(canvas, spec, static_cast<int>(k), z, rng));
        }

        std::vector<std::string> labels;
        bool any_lesion = false;
        for (size_t k = 0; k < specs.size(); ++k) {
            out.class_masks[k].set_slice(z, canvas.masks[k]);
            if (count_foreground(canvas.masks[k]) > 0) {
                labels.push_back(specs[k].class_name);
                any_lesion = any_lesion || specs[k].lesion;
            }
        }
        if (!any_lesion) labels.emplace_back(kNoFindingsLabel);
        out.slice_labels.push_back(std::move(labels));

        for (int r = 0; r < height; ++r) {
            for (int c = 0; c < width; ++c) {
                const double dy = (r - cy) / body_ry;
                const double dx = (c - cx) / body_rx;
                double hu = -1000.0;
                if (dy * dy + dx * dx <= 1.0) {
                    const double v = canvas.intensity(r, c) + options.noise_std * rng.normal();
                    hu = win.low + v * (win.high - win.low);
                }
                out.volume.voxels(z, r, c) = static_cast<float>(hu);
            }
        }
    }
    return out;
}

std::vector<ShapeSpec> default_shapes() {
    return {
        {ShapeKind::Ellipse, "organ_a", 0.30, 0.40, 0.60, 1, 1, false},
        {ShapeKind::Ellipse, "lesion_a", 0.90, 0.18, 0.32, 1, 1, true},
        {ShapeKind::Blob, "lesion_b", 0.60, 0.18, 0.32, 1, 1, true},
    };
}

DatasetOptions default_dataset_options() {
    DatasetOptions o;
    o.shapes = default_shapes();
    o.gen.exclusive_lesions = true;
    o.gen.lesion_slice_prob = 0.67;
    return o;
}

namespace {

std::string size_word(size_t pixels, size_t total) {
    const double frac = static_cast<double>(pixels) / static_cast<double>(total);
    if (frac < 0.03) return "small";
    if (frac < 0.08) return "medium";
    return "large";
}

std::string density_word(double intensity) {
    if (intensity < 0.35) return "low";
    if (intensity < 0.65) return "intermediate";
    return "high";
}

std::string region_finding(const ShapeSpec& spec, size_t pixels, size_t total) {
    return display_label(spec.class_name) + " of " + size_word(pixels, total) + " size with " +
           density_word(spec.intensity) + " density";
}

}  // namespace

DatasetManifest gen_dataset(const std::vector<TaskKind>& tasks, int n_volumes, std::uint64_t seed,
                            const DatasetOptions& options) {
    if (n_volumes < 2) throw std::invalid_argument("n_volumes must be at least 2");
    const auto& specs = options.shapes.empty() ? default_shapes() : options.shapes;
    Rng variant_rng(seed ^ 0x9e3779b97f4a7c15ULL);

    DatasetManifest manifest;
    for (int v = 0; v < n_volumes; ++v) {
        char vol_id[32];
        std::snprintf(vol_id, sizeof(vol_id), "vol%04d", v);
        GeneratedVolume g = gen_volume(specs, options.depth, options.height, options.width,
                                       seed + static_cast<std::uint64_t>(v), options.gen);
        g.volume.volume_id = vol_id;
        const auto windowed = curation::window_ct(g.volume, options.gen.hu_window);
        const auto slices = curation::slice_axial(windowed, Modality::CT);

        for (int z = 0; z < static_cast<int>(slices.size()); ++z) {
            const ImageSample& img = slices[static_cast<size_t>(z)].image;
            const size_t total = img.pixels.size();
            std::vector<std::pair<int, Mask>> present;
            for (size_t k = 0; k < specs.size(); ++k) {
                Mask m = g.class_masks[k].slice(z);
                if (static_cast<int>(count_foreground(m)) >= options.min_pixels)
                    present.emplace_back(static_cast<int>(k), std::move(m));
            }
            int lesion = -1;
            size_t lesion_px = 0;
            for (const auto& [k, m] : present) {
                const size_t px = count_foreground(m);
                if (specs[static_cast<size_t>(k)].lesion && px > lesion_px) {
                    lesion = k;
                    lesion_px = px;
                }
            }
            const std::string base = std::string(vol_id) + "_s" + std::to_string(z);

            auto add = [&](VqaSample s, const std::string& suffix) {
                s.id = base + "_" + suffix;
                manifest.samples.push_back(std::move(s));
            };
            auto variant = [&] { return static_cast<int>(variant_rng.next() % 2); };

            for (TaskKind task : tasks) {
                switch (task) {
                    case TaskKind::Segmentation:
                        for (const auto& [k, m] : present) {
                            const auto& name = specs[static_cast<size_t>(k)].class_name;
                            add(curation::to_vqa(img, RegionAnnotation::from_mask(m, display_label(name)), task,
                                                 variant()),
                                "seg_" + name);
                        }
                        break;
                    case TaskKind::DiseaseRecognition: {
                        RegionAnnotation a =
                            lesion >= 0
                                ? RegionAnnotation::from_mask(
                                      std::find_if(present.begin(), present.end(),
                                                   [&](const auto& p) { return p.first == lesion; })
                                          ->second,
                                      display_label(specs[static_cast<size_t>(lesion)].class_name))
                                : RegionAnnotation::from_mask(Mask(img.pixels.height, img.pixels.width),
                                                              std::string(kNoFindingsLabel));
                        add(curation::to_vqa(img, a, task, variant()), "dr");
                        break;
                    }
                    case TaskKind::RoiClassification:
                        for (const auto& [k, m] : present) {
                            const auto& name = specs[static_cast<size_t>(k)].class_name;
                            add(curation::to_vqa(img,
                                                 RegionAnnotation::from_bbox(curation::mask_to_bbox(m),
                                                                             display_label(name)),
                                                 task, variant()),
                                "roi_" + name);
                        }
                        break;
                    case TaskKind::RegionReport:
                        for (const auto& [k, m] : present) {
                            const auto& spec = specs[static_cast<size_t>(k)];
                            add(curation::to_vqa(img,
                                                 RegionAnnotation::from_bbox(
                                                     curation::mask_to_bbox(m),
                                                     region_finding(spec, count_foreground(m), total)),
                                                 task, variant()),
                                "rr_" + spec.class_name);
                        }
                        break;
                    case TaskKind::GroundedReport: {
                        const auto it = lesion >= 0 ? std::find_if(present.begin(), present.end(),
                                                                   [&](const auto& p) { return p.first == lesion; })
                                                    : present.begin();
                        if (it == present.end()) break;
                        const auto& spec = specs[static_cast<size_t>(it->first)];
                        const std::string finding =
                            lesion >= 0 ? "there is a " + region_finding(spec, count_foreground(it->second), total)
                                        : "the " + display_label(spec.class_name) + " appears normal";
                        add(curation::to_vqa(img, RegionAnnotation::from_mask(it->second, finding), task, variant()),
                            "grg");
                        break;
                    }
                }
            }
        }
    }
    return split_dataset(std::move(manifest), seed);
}

DatasetManifest gen_task_dataset(TaskKind task, int n_volumes, std::uint64_t seed, const DatasetOptions& options) {
    return gen_dataset({task}, n_volumes, seed, options);
}

}  // namespace groundkit::synth
