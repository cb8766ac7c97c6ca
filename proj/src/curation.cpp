#include "groundkit/curation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "groundkit/text.hpp"

namespace groundkit::curation {

BodyRegion parse_body_region(std::string_view s) {
    if (s == "chest" || s == "Chest") return BodyRegion::Chest;
    if (s == "abdomen" || s == "Abdomen") return BodyRegion::Abdomen;
    throw std::invalid_argument("unknown body region: " + std::string(s));
}

CtWindow CtWindow::for_region(BodyRegion region) {
    if (region == BodyRegion::Chest) return {-1000.0, 500.0, BodyRegion::Chest};
    return {-175.0, 250.0, BodyRegion::Abdomen};
}

CtWindow CtWindow::custom(double low, double high) {
    if (!(low < high)) throw std::invalid_argument("CT window requires low < high");
    return {low, high, BodyRegion::Abdomen};
}

Volume3D window_ct(Volume3D volume, const CtWindow& window) {
    if (volume.modality != VolumeModality::CT) throw std::invalid_argument("wrong modality");
    if (!(window.low < window.high)) throw std::invalid_argument("CT window requires low < high");
    const double span = window.high - window.low;
    for (auto& v : volume.voxels.data) {
        const double clamped = std::clamp(static_cast<double>(v), window.low, window.high);
        v = static_cast<float>((clamped - window.low) / span);
    }
    return volume;
}

Volume3D zscore_mri(Volume3D volume) {
    if (volume.modality != VolumeModality::MRI) throw std::invalid_argument("wrong modality");
    auto& d = volume.voxels.data;
    if (d.empty()) return volume;
    double mean = 0.0;
    for (float v : d) mean += v;
    mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (float v : d) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d.size());
    const double denom = std::max(std::sqrt(var), kZScoreEpsilon);
    for (auto& v : d) v = static_cast<float>((v - mean) / denom);
    return volume;
}

std::vector<SlicePair> slice_axial(const Volume3D& volume, Modality modality) {
    if (volume.masks) {
        const auto& m = *volume.masks;
        if (m.depth != volume.voxels.depth || m.height != volume.voxels.height || m.width != volume.voxels.width)
            throw std::invalid_argument("mask volume shape differs from voxel shape");
    }
    std::vector<SlicePair> out;
    out.reserve(static_cast<size_t>(volume.voxels.depth));
    for (int z = 0; z < volume.voxels.depth; ++z) {
        SlicePair p;
        p.image.pixels = volume.voxels.slice(z);
        p.image.modality = modality;
        p.image.volume_id = volume.volume_id;
        p.image.slice_index = z;
        if (volume.masks) p.mask = volume.masks->slice(z);
        out.push_back(std::move(p));
    }
    return out;
}

BBox mask_to_bbox(const Mask& mask) {
    BBox b{mask.height, mask.width, -1, -1};
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            if (!mask(r, c)) continue;
            b.row_min = std::min(b.row_min, r);
            b.row_max = std::max(b.row_max, r);
            b.col_min = std::min(b.col_min, c);
            b.col_max = std::max(b.col_max, c);
        }
    }
    if (b.row_max < 0) throw std::invalid_argument("empty mask");
    return b;
}

ImageSample overlay_bbox(ImageSample image, const BBox& bbox, int thickness) {
    auto& px = image.pixels;
    if (!bbox.fits(px.height, px.width)) throw std::out_of_range("bbox outside image bounds");
    if (thickness < 1) throw std::invalid_argument("thickness must be positive");
    for (int r = bbox.row_min; r <= bbox.row_max; ++r) {
        for (int c = bbox.col_min; c <= bbox.col_max; ++c) {
            const bool border = r < bbox.row_min + thickness || r > bbox.row_max - thickness ||
                                c < bbox.col_min + thickness || c > bbox.col_max - thickness;
            if (border) px(r, c) = 1.0f;
        }
    }
    return image;
}

ResizedPair resize_pair(const ImageSample& image, const std::optional<Mask>& mask, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize target must be at least 1x1");
    const Image& src = image.pixels;
    if (mask && !mask->same_shape(src)) throw std::invalid_argument("mask shape differs from image shape");
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;

    ResizedPair out{image, std::nullopt};
    out.image.pixels = Image(out_h, out_w);
    for (int r = 0; r < out_h; ++r) {
        const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int c = 0; c < out_w; ++c) {
            const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            const double top = src(y0, x0) * (1.0 - wx) + src(y0, x1) * wx;
            const double bot = src(y1, x0) * (1.0 - wx) + src(y1, x1) * wx;
            out.image.pixels(r, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
        }
    }
    if (mask) {
        Mask m(out_h, out_w);
        for (int r = 0; r < out_h; ++r) {
            const int y = std::min(static_cast<int>(std::floor((r + 0.5) * sy)), src.height - 1);
            for (int c = 0; c < out_w; ++c) {
                const int x = std::min(static_cast<int>(std::floor((c + 0.5) * sx)), src.width - 1);
                m(r, c) = (*mask)(y, x) ? 1 : 0;
            }
        }
        out.mask = std::move(m);
    }
    return out;
}

const TaskTemplates& templates_for(TaskKind task) {
    static const TaskTemplates seg{{"Please segment {label} in this {modality} image.",
                                    "Can you segment the {label} in this {modality} image?"},
                                   "It is [SEG]."};
    static const TaskTemplates disease{
        {"Can you identify any abnormality within this {modality} image? Please respond with segmentation masks.",
         "Is there any abnormality in this {modality} image? Please respond with segmentation masks."},
        "It is [SEG]. {Label}"};
    static const TaskTemplates roi{{"What is the object inside the bounding box of this {modality} image?",
                                    "Please classify the region marked by the bounding box in this {modality} image."},
                                   "{Label}"};
    static const TaskTemplates region_report{
        {"Please describe the region inside the bounding box of this {modality} image.",
         "Generate a report for the region marked by the bounding box in this {modality} image."},
        "{Label}"};
    static const TaskTemplates grounded_report{
        {"Please write a report for this {modality} image and segment the described findings.",
         "Generate a grounded report for this {modality} image with segmentation masks."},
        "{Label}. It is [SEG]."};
    switch (task) {
        case TaskKind::Segmentation: return seg;
        case TaskKind::DiseaseRecognition: return disease;
        case TaskKind::RoiClassification: return roi;
        case TaskKind::RegionReport: return region_report;
        case TaskKind::GroundedReport: return grounded_report;
    }
    throw std::invalid_argument("unknown task");
}

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

std::string fill(std::string tmpl, Modality modality, std::string label) {
    while (!label.empty() && (label.back() == '.' || label.back() == ' ')) label.pop_back();
    replace_all(tmpl, "{modality}", display_name(modality));
    replace_all(tmpl, "{Label}", text::capitalize(label));
    replace_all(tmpl, "{label}", label);
    return tmpl;
}

}  // namespace

VqaSample to_vqa(const ImageSample& image, const RegionAnnotation& annotation, TaskKind task, int variant) {
    const TaskTemplates& t = templates_for(task);
    const auto& qs = t.questions;
    const std::string& q_tmpl = qs[static_cast<size_t>(std::clamp(variant, 0, static_cast<int>(qs.size()) - 1))];

    VqaSample s;
    s.task = task;
    s.label = annotation.label;
    s.image = image;
    s.question = fill(q_tmpl, image.modality, annotation.label);

    if (task_requires_mask(task)) {
        if (annotation.kind != RegionAnnotation::Kind::Mask || !annotation.mask)
            throw std::invalid_argument(std::string(to_string(task)) + " requires a mask annotation");
        if (!annotation.mask->same_shape(image.pixels))
            throw std::invalid_argument("annotation mask shape differs from image shape");
        if (task == TaskKind::DiseaseRecognition && text::is_no_findings(annotation.label)) {
            s.answer = std::string(text::kNoFindings);
            s.target_mask = Mask(image.pixels.height, image.pixels.width);
        } else {
            s.answer = fill(t.answer, image.modality, annotation.label);
            s.target_mask = *annotation.mask;
        }
    } else {
        if (annotation.kind != RegionAnnotation::Kind::BBox || !annotation.bbox)
            throw std::invalid_argument(std::string(to_string(task)) + " requires a bbox annotation");
        s.image = overlay_bbox(image, *annotation.bbox);
        s.answer = fill(t.answer, image.modality, annotation.label);
    }
    return s;
}

}  // namespace groundkit::curation
