#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundkit/grid.hpp"

namespace groundkit::selftest {

struct Check {
    std::string section;
    std::string name;
    bool passed = false;
    std::string detail;
};

struct Report {
    std::uint64_t seed = 42;
    std::vector<Check> checks;

    bool passed() const;
    size_t failures() const;
    nlohmann::json to_json() const;
    // One "PASS|FAIL section/name: detail" line per check, then a summary line.
    std::string to_text() const;
};

using DiceFn = std::function<double(const Mask&, const Mask&)>;

struct Options {
    std::uint64_t seed = 42;
    // Swappable so a corrupted implementation can be shown to fail.
    DiceFn dice;
    int invariant_passes = 200;
    // Subset of "metrics", "losses", "gradcheck", "invariants", "pipeline"; empty runs all.
    std::vector<std::string> sections;
};

Report run(const Options& options = {});

// Independent reference computations used to cross-check the metrics module.
namespace oracle {

// Counts n-grams by direct window comparison, no maps.
double bleu(const std::vector<std::string>& hyp, const std::vector<std::vector<std::string>>& refs, int n);
// Exhaustive recursion; small inputs only.
size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b);
double rouge_f(const std::vector<std::string>& hyp, const std::vector<std::string>& ref, double beta);
double unigram_precision(const std::vector<std::string>& gold, const std::vector<std::string>& hyp);
// Two-sided p of Student's t by composite Gauss-Legendre quadrature of the density.
double t_two_sided_p(double t, int df);
// Closed form for four degrees of freedom.
double t_two_sided_p_df4(double t);

}  // namespace oracle

}  // namespace groundkit::selftest
