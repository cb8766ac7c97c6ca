#include "groundkit/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "groundkit/text.hpp"

namespace groundkit::metrics {

Tokens tokenize(std::string_view s) {
    Tokens out = text::tokenize_words(s);
    for (auto& t : out)
        std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

TextPair TextPair::from_text(std::string_view hypothesis, const std::vector<std::string>& references) {
    if (references.empty()) throw std::invalid_argument("at least one reference is required");
    TextPair p;
    p.hypothesis = tokenize(hypothesis);
    for (const auto& r : references) p.references.push_back(tokenize(r));
    return p;
}

double dice_score(const Mask& pred, const Mask& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("mask shape mismatch");
    size_t inter = 0, sp = 0, sg = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0;
        const bool g = gt.data[i] != 0;
        inter += p && g;
        sp += p;
        sg += g;
    }
    if (sp + sg == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& labels) {
    if (preds.size() != labels.size()) throw std::invalid_argument("prediction and label counts differ");
    if (preds.empty()) throw std::invalid_argument("accuracy needs at least one sample");
    size_t hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) hits += text::normalize(preds[i]) == text::normalize(labels[i]);
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

namespace {

std::map<Tokens, size_t> ngram_counts(const Tokens& toks, int n) {
    std::map<Tokens, size_t> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i)
        ++counts[Tokens(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

}  // namespace

double bleu(const TextPair& pair, int n, const BleuOptions& options) {
    if (n < 1 || n > 4) throw std::invalid_argument("BLEU order must be 1..4");
    if (pair.references.empty()) throw std::invalid_argument("at least one reference is required");
    const Tokens& hyp = pair.hypothesis;
    if (hyp.empty()) return 0.0;

    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        const auto hyp_counts = ngram_counts(hyp, k);
        std::map<Tokens, size_t> max_ref;
        for (const auto& ref : pair.references)
            for (const auto& [g, c] : ngram_counts(ref, k)) max_ref[g] = std::max(max_ref[g], c);
        size_t clipped = 0, total = 0;
        for (const auto& [g, c] : hyp_counts) {
            total += c;
            const auto it = max_ref.find(g);
            clipped += std::min(c, it == max_ref.end() ? size_t{0} : it->second);
        }
        double num = static_cast<double>(clipped);
        double den = static_cast<double>(total);
        if (options.add_one_smoothing) {
            num += 1.0;
            den += 1.0;
        }
        if (num == 0.0 || den == 0.0) return 0.0;
        log_sum += std::log(num / den) / n;
    }

    const double c = static_cast<double>(hyp.size());
    double r = static_cast<double>(pair.references[0].size());
    for (const auto& ref : pair.references) {
        const double len = static_cast<double>(ref.size());
        const double d = std::abs(len - c), best = std::abs(r - c);
        if (d < best || (d == best && len < r)) r = len;
    }
    const double bp = std::min(1.0, std::exp(1.0 - r / c));
    return bp * std::exp(log_sum);
}

namespace {

double unigram_precision(const Tokens& gold, const Tokens& hyp) {
    if (hyp.empty()) return 0.0;
    std::map<std::string, size_t> gold_counts;
    for (const auto& t : gold) ++gold_counts[t];
    size_t matches = 0;
    for (const auto& t : hyp) {
        auto it = gold_counts.find(t);
        if (it != gold_counts.end() && it->second > 0) {
            ++matches;
            --it->second;
        }
    }
    return static_cast<double>(matches) / static_cast<double>(hyp.size());
}

}  // namespace

double meteor(const std::vector<Tokens>& gold, const std::vector<Tokens>& hyps) {
    if (gold.empty()) throw std::invalid_argument("empty gold set");
    double total = 0.0;
    for (const auto& g : gold) {
        double best = 0.0;
        for (const auto& h : hyps) best = std::max(best, unigram_precision(g, h));
        total += best;
    }
    return total / static_cast<double>(gold.size());
}

double meteor_standard(const Tokens& hyp, const Tokens& ref) {
    if (hyp.empty() || ref.empty()) return 0.0;
    // Greedy exact-match alignment, left to right.
    std::vector<int> align(hyp.size(), -1);
    std::vector<bool> used(ref.size(), false);
    size_t matches = 0;
    for (size_t i = 0; i < hyp.size(); ++i)
        for (size_t j = 0; j < ref.size(); ++j)
            if (!used[j] && hyp[i] == ref[j]) {
                align[i] = static_cast<int>(j);
                used[j] = true;
                ++matches;
                break;
            }
    if (matches == 0) return 0.0;
    size_t chunks = 0;
    for (size_t i = 0; i < hyp.size(); ++i) {
        if (align[i] < 0) continue;
        if (i == 0 || align[i - 1] < 0 || align[i - 1] + 1 != align[i]) ++chunks;
    }
    const double p = static_cast<double>(matches) / hyp.size();
    const double r = static_cast<double>(matches) / ref.size();
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / matches, 3.0);
    return fmean * (1.0 - penalty);
}

size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeL rouge_l(const TextPair& pair, double beta) {
    RougeL best;
    if (pair.hypothesis.empty()) return best;
    const double b2 = beta * beta;
    for (const auto& ref : pair.references) {
        if (ref.empty()) continue;
        const double lcs = static_cast<double>(lcs_length(pair.hypothesis, ref));
        RougeL r;
        r.recall = lcs / ref.size();
        r.precision = lcs / pair.hypothesis.size();
        r.f = (r.recall == 0.0 && r.precision == 0.0)
                  ? 0.0
                  : (1.0 + b2) * r.recall * r.precision / (r.recall + b2 * r.precision);
        if (r.f > best.f || (best.f == 0.0 && best.recall == 0.0)) best = r;
    }
    return best;
}

TrialSet TrialSet::from(std::span<const double> values) {
    if (values.size() != 5) throw std::invalid_argument("a trial set holds exactly five values");
    TrialSet t;
    std::copy(values.begin(), values.end(), t.values.begin());
    return t;
}

Range summarize_runs(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("no runs to summarize");
    Range r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    r.low = *lo;
    r.high = *hi;
    return r;
}

Range trial_range(const TrialSet& trials) { return summarize_runs(trials.values); }

std::string format_cell(const Range& r, int decimals) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.*f(%.*f,%.*f)", decimals, r.mean, decimals, r.low, decimals, r.high);
    return buf;
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
    const size_t n = a.size();
    if (n < 2) throw std::invalid_argument("degenerate");
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw std::invalid_argument("degenerate");
    TTest t;
    t.df = static_cast<int>(n - 1);
    t.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const boost::math::students_t dist(static_cast<double>(t.df));
    t.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t.t)));
    return t;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json ds = nlohmann::json::object();
    for (const auto& [name, metrics] : datasets) {
        nlohmann::json m = nlohmann::json::object();
        for (const auto& [metric, r] : metrics) m[metric] = {{"mean", r.mean}, {"low", r.low}, {"high", r.high}};
        ds[name] = m;
    }
    nlohmann::json sig = nlohmann::json::object();
    for (const auto& [k, p] : significance) sig[k] = p;
    return {{"datasets", ds}, {"significance", sig}};
}

std::string MetricReport::to_table(int decimals, double scale) const {
    std::set<std::string> columns;
    for (const auto& [_, metrics] : datasets)
        for (const auto& [metric, __] : metrics) columns.insert(metric);
    std::ostringstream os;
    os << "dataset";
    for (const auto& c : columns) os << '\t' << c;
    os << '\n';
    for (const auto& [name, metrics] : datasets) {
        os << name;
        for (const auto& c : columns) {
            auto it = metrics.find(c);
            os << '\t' << (it == metrics.end() ? std::string("/") : format_cell({it->second.mean * scale, it->second.low * scale, it->second.high * scale}, decimals));
        }
        os << '\n';
    }
    for (const auto& [k, p] : significance) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3g", p);
        os << "p(" << k << ")\t" << buf << '\n';
    }
    return os.str();
}

}  // namespace groundkit::metrics
