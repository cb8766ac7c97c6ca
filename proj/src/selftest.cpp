#include "groundkit/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "groundkit/curation.hpp"
#include "groundkit/metrics.hpp"
#include "groundkit/model.hpp"
#include "groundkit/rng.hpp"
#include "groundkit/synthgen.hpp"
#include "groundkit/text.hpp"
#include "groundkit/training.hpp"

namespace groundkit::selftest {

using Tokens = std::vector<std::string>;

bool Report::passed() const { return failures() == 0; }

size_t Report::failures() const {
    return static_cast<size_t>(std::count_if(checks.begin(), checks.end(), [](const Check& c) { return !c.passed; }));
}

nlohmann::json Report::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks)
        arr.push_back({{"section", c.section}, {"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return {{"seed", seed}, {"passed", passed()}, {"failures", failures()}, {"checks", arr}};
}

std::string Report::to_text() const {
    std::ostringstream os;
    for (const auto& c : checks)
        os << (c.passed ? "PASS " : "FAIL ") << c.section << '/' << c.name << ": " << c.detail << '\n';
    os << (passed() ? "OK" : "FAILED") << ' ' << (checks.size() - failures()) << '/' << checks.size()
       << " checks passed\n";
    return os.str();
}

// ------------------------------------------------------------------ oracles

namespace oracle {

namespace {

bool window_equal(const Tokens& a, size_t i, const Tokens& b, size_t j, int n) {
    for (int k = 0; k < n; ++k)
        if (a[i + k] != b[j + k]) return false;
    return true;
}

size_t count_window(const Tokens& seq, const Tokens& src, size_t at, int n) {
    size_t c = 0;
    if (seq.size() < static_cast<size_t>(n)) return 0;
    for (size_t j = 0; j + n <= seq.size(); ++j) c += window_equal(src, at, seq, j, n);
    return c;
}

size_t lcs_from(const Tokens& a, size_t i, const Tokens& b, size_t j) {
    if (i == a.size() || j == b.size()) return 0;
    if (a[i] == b[j]) return 1 + lcs_from(a, i + 1, b, j + 1);
    return std::max(lcs_from(a, i + 1, b, j), lcs_from(a, i, b, j + 1));
}

}  // namespace

double bleu(const Tokens& hyp, const std::vector<Tokens>& refs, int n) {
    if (hyp.empty()) return 0.0;
    double log_mean = 0.0;
    for (int k = 1; k <= n; ++k) {
        double matched = 0.0, total = 0.0;
        if (hyp.size() >= static_cast<size_t>(k)) {
            for (size_t i = 0; i + k <= hyp.size(); ++i) {
                total += 1.0;
                bool seen = false;
                for (size_t p = 0; p < i && !seen; ++p) seen = window_equal(hyp, p, hyp, i, k);
                if (seen) continue;
                const size_t in_hyp = count_window(hyp, hyp, i, k);
                size_t in_ref = 0;
                for (const auto& r : refs) in_ref = std::max(in_ref, count_window(r, hyp, i, k));
                matched += static_cast<double>(std::min(in_hyp, in_ref));
            }
        }
        if (matched == 0.0) return 0.0;
        log_mean += std::log(matched / total) / n;
    }
    const double c = static_cast<double>(hyp.size());
    double r = -1.0;
    for (const auto& ref : refs) {
        const double len = static_cast<double>(ref.size());
        if (r < 0 || std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
    }
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_mean);
}

size_t lcs(const Tokens& a, const Tokens& b) { return lcs_from(a, 0, b, 0); }

double rouge_f(const Tokens& hyp, const Tokens& ref, double beta) {
    const double l = static_cast<double>(lcs(hyp, ref));
    if (l == 0.0) return 0.0;
    const double r = l / static_cast<double>(ref.size());
    const double p = l / static_cast<double>(hyp.size());
    return (1.0 + beta * beta) * r * p / (r + beta * beta * p);
}

double unigram_precision(const Tokens& gold, const Tokens& hyp) {
    if (hyp.empty()) return 0.0;
    std::vector<bool> used(gold.size(), false);
    double m = 0.0;
    for (const auto& t : hyp)
        for (size_t j = 0; j < gold.size(); ++j)
            if (!used[j] && gold[j] == t) {
                used[j] = true;
                m += 1.0;
                break;
            }
    return m / static_cast<double>(hyp.size());
}

double t_two_sided_p(double t, int df) {
    const double nu = df;
    const double log_c = std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2) - 0.5 * std::log(nu * std::numbers::pi);
    auto density = [&](double x) { return std::exp(log_c - (nu + 1) / 2 * std::log1p(x * x / nu)); };
    // 5-point Gauss-Legendre nodes and weights on [-1, 1].
    static const double xs[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                 0.9061798459386640};
    static const double ws[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665, 0.2369268850561891,
                                 0.2369268850561891};
    const double a = std::abs(t);
    const int panels = 2000;
    const double w = a / panels;
    double integral = 0.0;
    for (int i = 0; i < panels; ++i) {
        const double mid = (i + 0.5) * w;
        for (int k = 0; k < 5; ++k) integral += ws[k] * density(mid + 0.5 * w * xs[k]) * 0.5 * w;
    }
    return 1.0 - 2.0 * integral;
}

double t_two_sided_p_df4(double t) {
    const double a = std::abs(t);
    const double s = 1.0 + a * a / 4.0;
    const double cdf = 0.5 + 0.375 * (a / std::sqrt(s)) * (1.0 - a * a / (12.0 * s));
    return 2.0 * (1.0 - cdf);
}

}  // namespace oracle

// ------------------------------------------------------------------ checks

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

std::string g(double v) { return fmt("%.10g", v); }

class Suite {
  public:
    explicit Suite(Report& r) : report_(r) {}

    void section(std::string s) { section_ = std::move(s); }

    void expect(const std::string& name, bool ok, std::string detail) {
        report_.checks.push_back({section_, name, ok, std::move(detail)});
    }

    void close(const std::string& name, double got, double want, double tol) {
        const bool ok = std::isfinite(got) && std::abs(got - want) <= tol;
        expect(name, ok, "got " + g(got) + ", expected " + g(want) + " (tol " + fmt("%.0e", tol) + ")");
    }

    template <typename F>
    void throws(const std::string& name, F&& fn, const std::string& message = {}) {
        try {
            fn();
        } catch (const std::exception& e) {
            const bool ok = message.empty() || std::string(e.what()) == message;
            expect(name, ok, std::string("threw \"") + e.what() + "\"");
            return;
        }
        expect(name, false, "no exception");
    }

    // Runs a block; an escaping exception becomes a failed check.
    template <typename F>
    void guarded(const std::string& name, F&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            expect(name, false, std::string("unexpected exception: ") + e.what());
        }
    }

  private:
    Report& report_;
    std::string section_;
};

Mask mask_from(int h, int w, std::initializer_list<int> on) {
    Mask m(h, w);
    for (int i : on) m.data[static_cast<size_t>(i)] = 1;
    return m;
}

void metric_checks(Suite& s, const DiceFn& dice, Rng& rng) {
    s.section("metrics");
    const Mask a = mask_from(2, 2, {0, 1});
    const Mask b = mask_from(2, 2, {1, 2});
    const Mask c = mask_from(2, 2, {2, 3});
    s.close("dice_identity", dice(a, a), 1.0, 1e-12);
    s.close("dice_disjoint", dice(a, c), 0.0, 1e-12);
    s.close("dice_half_overlap", dice(a, b), 0.5, 1e-12);
    s.close("dice_both_empty", dice(Mask(3, 3), Mask(3, 3)), 1.0, 1e-12);
    {
        int asym = 0, nonmono = 0;
        for (int t = 0; t < 100; ++t) {
            Mask p(6, 6), q(6, 6);
            for (auto& v : p.data) v = rng.uniform() < 0.4;
            for (auto& v : q.data) v = rng.uniform() < 0.4;
            asym += dice(p, q) != dice(q, p);
            Mask p2 = p;
            for (size_t i = 0; i < p2.data.size(); ++i)
                if (q.data[i] && !p2.data[i]) {
                    p2.data[i] = 1;
                    break;
                }
            nonmono += dice(p2, q) + 1e-12 < dice(p, q);
        }
        s.expect("dice_symmetric_monotone", asym == 0 && nonmono == 0,
                 std::to_string(asym) + " asymmetric, " + std::to_string(nonmono) + " non-monotone of 100");
    }

    s.close("accuracy_three_of_four", metrics::accuracy({"A", "b", " c ", "d"}, {"a", "B", "c", "x"}), 0.75, 1e-12);

    {
        const auto pair = metrics::TextPair::from_text("the cat", {"the cat sat"});
        const double got = metrics::bleu(pair, 1);
        s.close("bleu1_brevity_example", got, std::exp(-0.5), 1e-9);
        s.close("bleu1_brevity_oracle", got, oracle::bleu(pair.hypothesis, pair.references, 1), 1e-9);
    }
    {
        int mismatch = 0;
        double worst = 0.0;
        const std::vector<std::string> words = {"a", "b", "c", "d"};
        for (int t = 0; t < 200; ++t) {
            auto sentence = [&](int lo, int hi) {
                Tokens out(static_cast<size_t>(rng.uniform_int(lo, hi)));
                for (auto& w : out) w = words[static_cast<size_t>(rng.uniform_int(0, 3))];
                return out;
            };
            metrics::TextPair p;
            p.hypothesis = sentence(1, 8);
            const int nref = rng.uniform_int(1, 3);
            for (int r = 0; r < nref; ++r) p.references.push_back(sentence(1, 8));
            for (int n = 1; n <= 4; ++n) {
                const double d = std::abs(metrics::bleu(p, n) - oracle::bleu(p.hypothesis, p.references, n));
                worst = std::max(worst, d);
                mismatch += d > 1e-9;
            }
            const double dr =
                std::abs(metrics::rouge_l({p.hypothesis, {p.references[0]}}, 1.2).f -
                         oracle::rouge_f(p.hypothesis, p.references[0], 1.2));
            worst = std::max(worst, dr);
            mismatch += dr > 1e-9;
        }
        s.expect("bleu_rouge_random_oracle", mismatch == 0,
                 std::to_string(mismatch) + " mismatches, max abs diff " + fmt("%.3e", worst));
    }
    {
        const auto same = metrics::TextPair::from_text("a small lesion in the liver", {"a small lesion in the liver"});
        bool all_one = true;
        for (int n = 1; n <= 4; ++n) all_one = all_one && metrics::bleu(same, n) == 1.0;
        const auto none = metrics::TextPair::from_text("x y", {"a b"});
        bool all_zero = true;
        for (int n = 1; n <= 4; ++n) all_zero = all_zero && metrics::bleu(none, n) == 0.0;
        s.expect("bleu_identity_and_zero", all_one && all_zero, all_one && all_zero ? "ok" : "mismatch");
    }
    {
        const std::vector<Tokens> gold = {metrics::tokenize("a b")};
        const std::vector<Tokens> hyps = {metrics::tokenize("a x"), metrics::tokenize("y b c")};
        const double got = metrics::meteor(gold, hyps);
        s.close("meteor_example", got, 0.5, 1e-9);
        s.close("meteor_oracle", got,
                std::max(oracle::unigram_precision(gold[0], hyps[0]), oracle::unigram_precision(gold[0], hyps[1])),
                1e-9);
    }
    {
        const auto pair = metrics::TextPair::from_text("a b c d", {"a c d"});
        const auto r = metrics::rouge_l(pair, 1.2);
        s.close("rouge_lcs_oracle", static_cast<double>(metrics::lcs_length(pair.hypothesis, pair.references[0])),
                static_cast<double>(oracle::lcs(pair.hypothesis, pair.references[0])), 0.0);
        s.close("rouge_example", r.f, 2.44 * 0.75 / (1.0 + 1.44 * 0.75), 1e-9);
        s.close("rouge_oracle", r.f, oracle::rouge_f(pair.hypothesis, pair.references[0], 1.2), 1e-9);
    }
    {
        const std::vector<double> a = {1, 2, 3, 4, 5}, b = {0, 2, 2, 4, 4};
        const auto t = metrics::paired_t_test(a, b);
        s.close("ttest_statistic", t.t, (0.6 / std::sqrt(0.3)) * std::sqrt(5.0), 1e-9);
        s.close("ttest_p_closed_form", t.p, oracle::t_two_sided_p_df4(t.t), 1e-9);
        s.close("ttest_p_quadrature", t.p, oracle::t_two_sided_p(t.t, t.df), 1e-9);
        s.close("ttest_p_table", t.p, 0.0705, 5e-4);
        const auto r = metrics::paired_t_test(b, a);
        s.expect("ttest_antisymmetric", r.t == -t.t && r.p == t.p, "t " + g(t.t) + " vs " + g(r.t));
        const std::vector<double> c = {2, 3, 4, 5, 6};
        s.throws("ttest_constant_shift", [&] { metrics::paired_t_test(c, a); }, "degenerate");
        s.throws("ttest_identical", [&] { metrics::paired_t_test(a, a); }, "degenerate");
    }
    {
        const std::vector<double> row = {96.0, 96.1, 96.2, 96.3, 96.5};
        const auto r = metrics::trial_range(metrics::TrialSet::from(row));
        s.close("trial_mean", r.mean, 96.22, 1e-9);
        const std::string cell = metrics::format_cell(r);
        s.expect("trial_cell_format", cell == "96.2(96.0,96.5)", cell);
        const std::vector<double> four = {1, 2, 3, 4};
        s.throws("trial_wrong_count", [&] { metrics::TrialSet::from(four); });
    }
}

void loss_checks(Suite& s, Rng& rng) {
    using training::compose_loss;
    s.section("losses");
    {
        std::vector<double> p(64, 0.5), y(64);
        for (auto& v : y) v = rng.uniform() < 0.5;
        s.close("bce_uniform_ln2", training::loss_bce(p, y), std::log(2.0), 1e-6);
    }
    {
        const std::vector<double> p = {0.0}, y = {1.0};
        s.close("bce_clamped", training::loss_bce(p, y), -std::log(training::kProbClamp), 1e-6);
    }
    {
        const std::vector<double> ones(16, 1.0), zeros(16, 0.0), half(4, 0.5), four_ones(4, 1.0), four_zeros(4, 0.0);
        s.close("dice_perfect", training::loss_dice(ones, ones), 0.0, 1e-6);
        s.close("dice_empty_pair", training::loss_dice(zeros, zeros), 0.0, 1e-6);
        s.close("dice_half_vs_ones", training::loss_dice(half, four_ones), 2.0 / 7.0, 1e-6);
        s.close("dice_false_positive", training::loss_dice(four_ones, four_zeros), 0.8, 1e-6);
    }
    {
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            const double t = rng.uniform(0, 5), b = rng.uniform(0, 2), d = rng.uniform(0, 1);
            const auto l = compose_loss(TaskKind::Segmentation, t, b, d, training::LossWeights{});
            worst = std::max(worst, std::abs(l.total - (t + 2.0 * b + 0.5 * d)));
        }
        s.expect("composition_100_triples", worst <= 1e-9, "max abs diff " + fmt("%.3e", worst));
        const auto roi = compose_loss(TaskKind::RoiClassification, 1.25, std::nullopt, std::nullopt, {});
        s.expect("composition_text_only", roi.total == 1.25 && !roi.bce && !roi.dice, "L = " + g(roi.total));
        s.throws("composition_missing_seg",
                 [&] { compose_loss(TaskKind::Segmentation, 1.0, std::nullopt, std::nullopt, {}); });
    }
}

std::string describe(const training::GradcheckResult& r) {
    return "max rel err " + fmt("%.3e", r.max_rel_error) + " over " + std::to_string(r.checked) + " coords, worst " +
           r.worst_label + "[" + std::to_string(r.worst_index) + "] fd " + fmt("%.6e", r.worst_fd) + " bp " +
           fmt("%.6e", r.worst_bp);
}

std::vector<training::Coordinate<float>> all_coords(const ag::Tensor<float>& t, const std::string& label) {
    std::vector<training::Coordinate<float>> c;
    for (size_t i = 0; i < t.size(); ++i) c.push_back({t, i, label});
    return c;
}
std::vector<training::Coordinate<double>> all_coords(const ag::Tensor<double>& t, const std::string& label) {
    std::vector<training::Coordinate<double>> c;
    for (size_t i = 0; i < t.size(); ++i) c.push_back({t, i, label});
    return c;
}

// f64: backprop vs f64 central differences. f32: f32 backprop vs central
// differences of the same function evaluated in f64 at the f32 values.
template <typename Build>
void gradcheck_pair(Suite& s, const std::string& name, const ag::Tensor<float>& x32, const ag::Tensor<double>& x64,
                    Build build, double f64_tol, double f32_tol) {
    const std::string label = name;
    s.guarded(name, [&] {
        const auto c64 = all_coords(x64, label);
        const auto r64 = training::gradcheck<double>([&] { return build(x64, double{}); }, c64, 1e-6);
        s.expect(name + "_f64", r64.max_rel_error < f64_tol, describe(r64));

        const auto c32 = all_coords(x32, label);
        const auto bp = training::backprop_gradients<float>([&] { return build(x32, float{}); }, c32);
        const auto fd = training::central_differences<double>([&] { return build(x64, double{}); }, c64, 1e-6);
        std::vector<std::string> labels(c32.size(), label);
        std::vector<size_t> idx(c32.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const auto r32 = training::compare_gradients(labels, idx, fd, bp);
        s.expect(name + "_f32", r32.max_rel_error < f32_tol, describe(r32));
    });
}

VqaSample toy_sample(Rng& rng, int size) {
    VqaSample smp;
    smp.id = "toy";
    smp.task = TaskKind::Segmentation;
    smp.question = "Segment the lesion in this CT image.";
    smp.answer = "It is [SEG].";
    smp.label = "lesion";
    smp.image.pixels = Image(size, size);
    Mask m(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            m(r, c) = (r > size / 4 && r < 3 * size / 4 && c > size / 5 && c < 3 * size / 4) ? 1 : 0;
            smp.image.pixels(r, c) = static_cast<float>(0.2 + 0.6 * m(r, c) + 0.1 * rng.uniform());
        }
    smp.target_mask = m;
    return smp;
}

model::ModelConfig toy_config(int size, const model::Vocabulary& vocab) {
    model::ModelConfig mc;
    mc.image_height = mc.image_width = size;
    mc.patch_size = 4;
    mc.seg_patch_size = 4;
    mc.vocab = vocab;
    return mc;
}

void gradient_checks(Suite& s, Rng& rng) {
    s.section("gradcheck");
    const int n = 64;
    std::vector<float> p32(n), y32(n);
    for (int i = 0; i < n; ++i) {
        p32[i] = static_cast<float>(rng.uniform(0.05, 0.95));
        y32[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    }
    const std::vector<double> p64(p32.begin(), p32.end()), y64(y32.begin(), y32.end());
    const auto x32 = ag::Tensor<float>::parameter(8, 8, p32);
    const auto x64 = ag::Tensor<double>::parameter(8, 8, p64);
    auto labels = [&](auto tag) {
        if constexpr (std::is_same_v<decltype(tag), float>) return std::span<const float>(y32);
        else return std::span<const double>(y64);
    };
    gradcheck_pair(
        s, "bce_8x8", x32, x64,
        [&](const auto& x, auto tag) { return training::loss_bce(x, labels(tag)); }, 1e-6, 1e-3);
    gradcheck_pair(
        s, "dice_8x8", x32, x64,
        [&](const auto& x, auto tag) {
            using T = decltype(tag);
            return training::loss_dice(x, labels(tag), T(1));
        },
        1e-6, 1e-3);

    s.guarded("end_to_end_seg_embedding", [&] {
        const VqaSample smp = toy_sample(rng, 16);
        const auto vocab = model::Vocabulary::build({smp.question, smp.answer});
        const auto cfg = toy_config(16, vocab);
        model::GroundedModel<float> m32(cfg);
        model::GroundedModel<double> m64(cfg);
        model::copy_parameters(m64, m32);
        const int d = cfg.d_model;
        std::vector<training::Coordinate<float>> c32;
        std::vector<training::Coordinate<double>> c64;
        for (int j = 0; j < d; ++j) {
            const size_t idx = static_cast<size_t>(model::Vocabulary::kSeg * d + j);
            c32.push_back({m32.param("lm.tok_emb").tensor, idx, "lm.tok_emb[SEG]"});
            c64.push_back({m64.param("lm.tok_emb").tensor, idx, "lm.tok_emb[SEG]"});
        }
        const training::LossWeights w;
        auto loss32 = [&] { return training::loss_total<float>(smp, m32.teacher_forward(smp, true), w).total; };
        auto loss64 = [&] { return training::loss_total<double>(smp, m64.teacher_forward(smp, true), w).total; };
        const auto r64 = training::gradcheck<double>(loss64, c64, 1e-5);
        s.expect("end_to_end_seg_embedding_f64", r64.max_rel_error < 1e-6, describe(r64));
        const auto bp = training::backprop_gradients<float>(loss32, c32);
        const auto fd = training::central_differences<double>(loss64, c64, 1e-5);
        std::vector<std::string> labels32;
        std::vector<size_t> idx32;
        for (const auto& c : c32) {
            labels32.push_back(c.label);
            idx32.push_back(c.index);
        }
        const auto r32 = training::compare_gradients(labels32, idx32, fd, bp);
        s.expect("end_to_end_seg_embedding_f32", r32.max_rel_error < 1e-3, describe(r32));
    });
}

synth::DatasetOptions tiny_options() {
    auto o = synth::default_dataset_options();
    o.height = o.width = 16;
    return o;
}

void invariant_checks(Suite& s, Rng& rng, std::uint64_t seed, int passes) {
    s.section("invariants");
    s.guarded("model_invariants", [&] {
        auto ds = synth::gen_dataset({TaskKind::Segmentation, TaskKind::DiseaseRecognition}, 12, seed, tiny_options());
        size_t bad_samples = 0;
        for (const auto& smp : ds.samples) bad_samples += !validate_sample(smp).empty();
        s.expect("generated_samples_valid", bad_samples == 0,
                 std::to_string(bad_samples) + " invalid of " + std::to_string(ds.samples.size()));

        const auto vocab = model::vocabulary_for(ds);
        model::GroundedModel<float> trained(toy_config(16, vocab));
        std::vector<std::vector<float>> frozen_before;
        for (const auto& p : trained.params())
            if (p.frozen) frozen_before.push_back(p.tensor.values());

        training::TrainConfig tc;
        tc.epochs = 15;
        tc.lr = 3e-3;
        tc.seed = seed;
        const auto log = training::train(trained, ds, tc);

        size_t k = 0, changed = 0;
        for (const auto& p : trained.params())
            if (p.frozen) changed += p.tensor.values() != frozen_before[k++];
        s.expect("frozen_params_unchanged", changed == 0 && k > 0,
                 std::to_string(changed) + " of " + std::to_string(k) + " frozen tensors changed after " +
                     std::to_string(log.size()) + " steps");

        std::vector<model::GroundedModel<float>> untrained;
        for (int i = 0; i < 3; ++i) {
            auto cfg = toy_config(16, vocab);
            cfg.init_seed = seed + 1 + static_cast<std::uint64_t>(i);
            untrained.emplace_back(cfg);
        }
        size_t violations = 0, with_seg = 0, no_findings = 0, text_only = 0;
        std::string first_violation;
        for (int i = 0; i < passes; ++i) {
            const auto& smp = ds.samples[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(ds.samples.size()) - 1))];
            ImageSample img = smp.image;
            for (auto& v : img.pixels.data)
                v = static_cast<float>(std::clamp(v + 0.02 * rng.normal(), 0.0, 1.0));
            const int which = rng.uniform_int(0, 3);
            const auto& m = which == 0 ? untrained[static_cast<size_t>(rng.uniform_int(0, 2))] : trained;
            const auto out = m.forward_grounded(img, smp.question);
            const auto v = validate_output(out, img.pixels.height, img.pixels.width);
            if (!v.empty()) {
                if (violations == 0) first_violation = "\"" + out.answer + "\": " + v[0].message;
                ++violations;
            }
            if (text::contains_seg(out.answer)) ++with_seg;
            else if (text::is_no_findings(out.answer)) ++no_findings;
            else ++text_only;
        }
        s.expect("seg_mask_biconditional", violations == 0,
                 std::to_string(violations) + " violations in " + std::to_string(passes) + " passes (" +
                     std::to_string(with_seg) + " [SEG], " + std::to_string(no_findings) + " no findings, " +
                     std::to_string(text_only) + " text only)" + (first_violation.empty() ? "" : "; " + first_violation));
        s.expect("both_branches_exercised", with_seg > 0 && no_findings > 0,
                 std::to_string(with_seg) + " [SEG], " + std::to_string(no_findings) + " no findings");
    });

    s.guarded("task_gating", [&] {
        auto ds = synth::gen_dataset({TaskKind::RoiClassification}, 4, seed, tiny_options());
        model::GroundedModel<float> m(toy_config(16, model::vocabulary_for(ds)));
        std::vector<std::vector<float>> before;
        for (const auto& p : m.params()) before.push_back(p.tensor.values());
        training::TrainConfig tc;
        training::Trainer<float> trainer(m, tc, 4);
        const auto train = ds.select(Split::Train);
        for (int i = 0; i < 4; ++i) {
            std::vector<const VqaSample*> batch(train.begin() + i, train.begin() + i + 4);
            trainer.train_step(batch);
        }
        size_t seg_changed = 0, lm_changed = 0;
        for (size_t i = 0; i < m.params().size(); ++i) {
            const auto& p = m.params()[i];
            const bool changed = p.tensor.values() != before[i];
            if (p.group == model::ParamGroup::MaskDecoder || p.group == model::ParamGroup::PromptEncoder)
                seg_changed += changed;
            else if (p.group == model::ParamGroup::LmHead)
                lm_changed += changed;
        }
        s.expect("region_batches_leave_mask_decoder", seg_changed == 0 && lm_changed > 0,
                 std::to_string(seg_changed) + " segmentation tensors changed, " + std::to_string(lm_changed) +
                     " LM head tensors changed");
    });
}

void pipeline_checks(Suite& s, std::uint64_t seed) {
    s.section("pipeline");
    const auto chest = curation::CtWindow::for_region(curation::BodyRegion::Chest);
    const auto abdomen = curation::CtWindow::for_region(curation::BodyRegion::Abdomen);
    s.expect("window_bounds", chest.low == -1000.0 && chest.high == 500.0 && abdomen.low == -175.0 &&
                                  abdomen.high == 250.0,
             "chest (" + g(chest.low) + ", " + g(chest.high) + "), abdomen (" + g(abdomen.low) + ", " +
                 g(abdomen.high) + ")");
    {
        curation::Volume3D v;
        v.voxels = Grid3<float>(1, 1, 5);
        v.voxels.data = {-3000.f, -1000.f, -250.f, 500.f, 3000.f};
        const auto w = curation::window_ct(v, chest);
        const auto& o = w.voxels.data;
        s.expect("window_chest_rescale", o[0] == 0.f && o[1] == 0.f && o[3] == 1.f && o[4] == 1.f &&
                                             std::abs(o[2] - 0.5f) < 1e-6f,
                 g(o[0]) + " " + g(o[1]) + " " + g(o[2]) + " " + g(o[3]) + " " + g(o[4]));
    }
    {
        DatasetManifest m;
        for (int v = 0; v < 10; ++v)
            for (int z = 0; z < 3; ++z) {
                VqaSample smp;
                smp.id = "v" + std::to_string(v) + "_" + std::to_string(z);
                smp.image.volume_id = "v" + std::to_string(v);
                m.samples.push_back(smp);
            }
        const auto split = split_dataset(m, seed);
        size_t test_keys = 0;
        for (const auto& [k, sp] : split.split) test_keys += sp == Split::Test;
        s.expect("split_80_20_volume_level", split.split.size() == 10 && test_keys == 2 &&
                                                 split.select(Split::Test).size() == 6,
                 std::to_string(test_keys) + " of " + std::to_string(split.split.size()) + " volumes held out");
    }
}

}  // namespace

Report run(const Options& options) {
    static const std::vector<std::string> kSections = {"metrics", "losses", "gradcheck", "invariants", "pipeline"};
    for (const auto& name : options.sections)
        if (std::find(kSections.begin(), kSections.end(), name) == kSections.end())
            throw std::invalid_argument("unknown selftest section: " + name);
    auto wanted = [&](const std::string& name) {
        return options.sections.empty() ||
               std::find(options.sections.begin(), options.sections.end(), name) != options.sections.end();
    };
    Report report;
    report.seed = options.seed;
    Suite s(report);
    const DiceFn dice = options.dice ? options.dice : DiceFn(metrics::dice_score);
    // Each section draws from its own stream so sections can run alone.
    auto stream = [&](std::uint64_t k) { return Rng(options.seed * 1000003ULL + k); };
    if (wanted("metrics")) {
        Rng rng = stream(1);
        metric_checks(s, dice, rng);
    }
    if (wanted("losses")) {
        Rng rng = stream(2);
        loss_checks(s, rng);
    }
    if (wanted("gradcheck")) {
        Rng rng = stream(3);
        gradient_checks(s, rng);
    }
    if (wanted("invariants")) {
        Rng rng = stream(4);
        invariant_checks(s, rng, options.seed, options.invariant_passes);
    }
    if (wanted("pipeline")) pipeline_checks(s, options.seed);
    return report;
}

}  // namespace groundkit::selftest
