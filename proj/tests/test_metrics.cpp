#include <doctest.h>

#include <cmath>

#include "groundkit/metrics.hpp"
#include "groundkit/rng.hpp"
#include "groundkit/selftest.hpp"

using namespace groundkit;
using namespace groundkit::metrics;

namespace {

Mask mask_of(int h, int w, std::initializer_list<int> on) {
    Mask m(h, w);
    for (int i : on) m.data[static_cast<size_t>(i)] = 1;
    return m;
}

}  // namespace

TEST_CASE("dice examples") {
    const Mask a = mask_of(2, 2, {0, 1}), b = mask_of(2, 2, {1, 2}), c = mask_of(2, 2, {2, 3});
    CHECK(dice_score(a, a) == 1.0);
    CHECK(dice_score(a, c) == 0.0);
    CHECK(dice_score(a, b) == doctest::Approx(0.5));
    CHECK(dice_score(Mask(4, 4), Mask(4, 4)) == 1.0);
    CHECK_THROWS_AS(dice_score(Mask(2, 2), Mask(2, 3)), std::invalid_argument);
}

TEST_CASE("dice is symmetric and monotone in true positives") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        Mask p(5, 5), g(5, 5);
        for (auto& v : p.data) v = rng.uniform() < 0.5;
        for (auto& v : g.data) v = rng.uniform() < 0.5;
        CHECK(dice_score(p, g) == dice_score(g, p));
        for (size_t i = 0; i < p.data.size(); ++i)
            if (g.data[i] && !p.data[i]) {
                Mask q = p;
                q.data[i] = 1;
                CHECK(dice_score(q, g) >= dice_score(p, g));
                break;
            }
    }
}

TEST_CASE("accuracy") {
    CHECK(accuracy({"a", "b"}, {"a", "b"}) == 1.0);
    CHECK(accuracy({"a", "b"}, {"c", "d"}) == 0.0);
    CHECK(accuracy({"Lesion  A", "b", "c", "d"}, {"lesion a", "b", "c", "x"}) == 0.75);
    CHECK_THROWS(accuracy({"a"}, {}));
    CHECK_THROWS(accuracy({}, {}));
}

TEST_CASE("bleu") {
    const auto same = TextPair::from_text("a small lesion in the liver", {"a small lesion in the liver"});
    for (int n = 1; n <= 4; ++n) CHECK(bleu(same, n) == doctest::Approx(1.0));

    const auto cat = TextPair::from_text("the cat", {"the cat sat"});
    CHECK(bleu(cat, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(std::abs(bleu(cat, 1) - 0.60653) < 1e-5);

    const auto none = TextPair::from_text("x y z", {"a b c"});
    for (int n = 1; n <= 4; ++n) CHECK(bleu(none, n) == 0.0);

    CHECK(bleu(TextPair::from_text("", {"a"}), 1) == 0.0);
    CHECK_THROWS(bleu(cat, 5));
    CHECK_THROWS(TextPair::from_text("a", {}));
}

TEST_CASE("bleu clipping and closest reference length") {
    const auto p = TextPair::from_text("the the the", {"the cat"});
    CHECK(bleu(p, 1) == doctest::Approx(1.0 / 3.0));
    // closest reference (length 3) wins over length 6
    const auto q = TextPair::from_text("a b", {"a b c", "a b c d e f"});
    CHECK(bleu(q, 1) == doctest::Approx(std::exp(1.0 - 1.5)));
}

TEST_CASE("bleu smoothing flag") {
    const auto p = TextPair::from_text("a b c", {"a x c"});
    CHECK(bleu(p, 2) == 0.0);
    CHECK(bleu(p, 2, {.add_one_smoothing = true}) > 0.0);
}

TEST_CASE("bleu bounds and single-reference identity") {
    Rng rng(11);
    const std::vector<std::string> words = {"a", "b", "c"};
    for (int t = 0; t < 100; ++t) {
        TextPair p;
        p.hypothesis.resize(static_cast<size_t>(rng.uniform_int(1, 6)));
        for (auto& w : p.hypothesis) w = words[static_cast<size_t>(rng.uniform_int(0, 2))];
        p.references.emplace_back(static_cast<size_t>(rng.uniform_int(1, 6)));
        for (auto& w : p.references[0]) w = words[static_cast<size_t>(rng.uniform_int(0, 2))];
        for (int n = 1; n <= 4; ++n) {
            const double b = bleu(p, n);
            CHECK(b >= 0.0);
            CHECK(b <= 1.0 + 1e-12);
        }
        TextPair same{p.hypothesis, {p.hypothesis}};
        for (int n = 1; n <= static_cast<int>(std::min<size_t>(4, p.hypothesis.size())); ++n)
            CHECK(bleu(same, n) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("metrics ignore case") {
    const auto lower = TextPair::from_text("the cat sat", {"the cat"});
    const auto upper = TextPair::from_text("The CAT sat", {"THE Cat"});
    CHECK(bleu(lower, 2) == bleu(upper, 2));
    CHECK(rouge_l(lower).f == rouge_l(upper).f);
}

TEST_CASE("meteor as printed") {
    CHECK(meteor({tokenize("a b c")}, {tokenize("a b c")}) == 1.0);
    CHECK(meteor({tokenize("a b")}, {tokenize("a x"), tokenize("y b c")}) == doctest::Approx(0.5));
    CHECK(meteor({tokenize("a b")}, {tokenize("x y")}) == 0.0);
    CHECK_THROWS(meteor({}, {tokenize("a")}));
}

TEST_CASE("meteor standard mode") {
    CHECK(meteor_standard(tokenize("a b c"), tokenize("a b c")) == doctest::Approx(1.0 - 0.5 / 27.0));
    CHECK(meteor_standard(tokenize("x"), tokenize("a")) == 0.0);
}

TEST_CASE("rouge-l") {
    const auto same = rouge_l(TextPair::from_text("a b c", {"a b c"}));
    CHECK(same.recall == 1.0);
    CHECK(same.precision == 1.0);
    CHECK(same.f == doctest::Approx(1.0));
    const auto none = rouge_l(TextPair::from_text("a b", {"c d"}));
    CHECK(none.f == 0.0);
    CHECK(none.recall == 0.0);
    const auto ex = rouge_l(TextPair::from_text("a b c d", {"a c d"}), 1.2);
    CHECK(ex.recall == 1.0);
    CHECK(ex.precision == 0.75);
    CHECK(ex.f == doctest::Approx(2.44 * 0.75 / (1.0 + 1.44 * 0.75)).epsilon(1e-12));
    CHECK(std::abs(ex.f - 0.8798) < 1e-4);
    CHECK(rouge_l(TextPair::from_text("", {"a"})).f == 0.0);
    // best reference wins
    const auto multi = rouge_l(TextPair::from_text("a b", {"x y", "a b"}));
    CHECK(multi.f == doctest::Approx(1.0));
}

TEST_CASE("lcs matches exhaustive oracle") {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        Tokens a(static_cast<size_t>(rng.uniform_int(0, 7))), b(static_cast<size_t>(rng.uniform_int(0, 7)));
        for (auto& w : a) w = std::string(1, static_cast<char>('a' + rng.uniform_int(0, 2)));
        for (auto& w : b) w = std::string(1, static_cast<char>('a' + rng.uniform_int(0, 2)));
        CHECK(lcs_length(a, b) == selftest::oracle::lcs(a, b));
    }
}

TEST_CASE("trial range and cell format") {
    const std::vector<double> v = {96.0, 96.1, 96.2, 96.3, 96.5};
    const auto r = trial_range(TrialSet::from(v));
    CHECK(r.mean == doctest::Approx(96.22));
    CHECK(r.low == 96.0);
    CHECK(r.high == 96.5);
    CHECK(format_cell(r) == "96.2(96.0,96.5)");
    const std::vector<double> same(5, 0.7);
    const auto s = trial_range(TrialSet::from(same));
    CHECK(s.mean == doctest::Approx(0.7));
    CHECK(s.low == 0.7);
    CHECK(s.high == 0.7);
    const std::vector<double> six(6, 1.0);
    CHECK_THROWS(TrialSet::from(six));
}

TEST_CASE("paired t-test") {
    const std::vector<double> a = {1, 2, 3, 4, 5}, b = {0, 2, 2, 4, 4};
    const auto t = paired_t_test(a, b);
    CHECK(t.df == 4);
    CHECK(t.t == doctest::Approx(2.449489742783178));
    CHECK(std::abs(t.p - 0.0705) < 5e-4);
    CHECK(std::abs(t.p - selftest::oracle::t_two_sided_p_df4(t.t)) < 1e-9);
    CHECK(std::abs(t.p - selftest::oracle::t_two_sided_p(t.t, 4)) < 1e-9);

    const auto r = paired_t_test(b, a);
    CHECK(r.t == -t.t);
    CHECK(r.p == t.p);

    std::vector<double> x(10), y(10);
    for (int i = 0; i < 10; ++i) {
        y[static_cast<size_t>(i)] = i * 0.37;
        x[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] + 1.0;
    }
    CHECK_THROWS_WITH(paired_t_test(x, y), "degenerate");
    CHECK_THROWS_WITH(paired_t_test(a, a), "degenerate");
    const std::vector<double> one = {1.0};
    CHECK_THROWS_WITH(paired_t_test(one, one), "degenerate");
}

TEST_CASE("t-distribution oracles agree") {
    for (double t : {0.1, 1.0, 2.0, 4.5}) CHECK(std::abs(selftest::oracle::t_two_sided_p(t, 4) - selftest::oracle::t_two_sided_p_df4(t)) < 1e-10);
}

TEST_CASE("metric report") {
    MetricReport rep;
    rep.datasets["Segmentation"]["Dice"] = {0.9, 0.85, 0.95};
    rep.significance["Dice:Segmentation:a_vs_b"] = 0.01;
    const auto j = rep.to_json();
    CHECK(j["datasets"]["Segmentation"]["Dice"]["low"] == 0.85);
    CHECK(rep.to_table(3).find("0.900(0.850,0.950)") != std::string::npos);
    CHECK(rep.to_table(1, 100.0).find("90.0(85.0,95.0)") != std::string::npos);
}
