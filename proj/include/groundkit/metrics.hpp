#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "groundkit/grid.hpp"

namespace groundkit::metrics {

using Tokens = std::vector<std::string>;

// Lowercased tokens with punctuation split off.
Tokens tokenize(std::string_view text);

struct TextPair {
    Tokens hypothesis;
    std::vector<Tokens> references;  // at least one

    static TextPair from_text(std::string_view hypothesis, const std::vector<std::string>& references);
};

// 2|P & G| / (|P| + |G|); 1.0 when both masks are empty.
double dice_score(const Mask& pred, const Mask& gt);

// Fraction of exact matches after lowercase + whitespace normalization.
double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& labels);

struct BleuOptions {
    bool add_one_smoothing = false;
};

// BLEU-n with uniform weights, clipped n-gram precision and the
// closest-reference brevity penalty. Any zero precision gives 0.
double bleu(const TextPair& pair, int n, const BleuOptions& options = {});

// Mean over gold sentences of the best unigram precision against any hypothesis.
double meteor(const std::vector<Tokens>& gold, const std::vector<Tokens>& hyps);

// Unigram harmonic mean (recall-weighted 9:1) with the fragmentation penalty.
// Comparison mode only.
double meteor_standard(const Tokens& hypothesis, const Tokens& reference);

struct RougeL {
    double recall = 0.0;
    double precision = 0.0;
    double f = 0.0;
};

size_t lcs_length(const Tokens& a, const Tokens& b);

// Best F over references.
RougeL rouge_l(const TextPair& pair, double beta = 1.2);

struct TrialSet {
    std::array<double, 5> values{};
    // Throws std::invalid_argument unless exactly five values are given.
    static TrialSet from(std::span<const double> values);
};

struct Range {
    double mean = 0.0;
    double low = 0.0;
    double high = 0.0;
};

Range trial_range(const TrialSet& trials);
// Mean with min/max over however many runs are available.
Range summarize_runs(std::span<const double> values);

// "96.2(96.0,96.5)"
std::string format_cell(const Range& r, int decimals = 1);

struct TTest {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
};

// Two-sided paired t-test on a - b. Throws std::invalid_argument("degenerate")
// for n < 2 or zero-variance differences.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

struct MetricReport {
    // dataset -> metric -> range
    std::map<std::string, std::map<std::string, Range>> datasets;
    // comparison name -> p value
    std::map<std::string, double> significance;

    nlohmann::json to_json() const;
    // Plain-text table with "mean(low,high)" cells; values are multiplied by
    // `scale` (100 for percentages), p values are printed as is.
    std::string to_table(int decimals = 1, double scale = 1.0) const;
};

}  // namespace groundkit::metrics
