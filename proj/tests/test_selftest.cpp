#include <doctest.h>

#include "groundkit/selftest.hpp"

using namespace groundkit;

namespace {

const selftest::Check* find(const selftest::Report& r, const std::string& name) {
    for (const auto& c : r.checks)
        if (c.name == name) return &c;
    return nullptr;
}

double doubled_numerator(const Mask& p, const Mask& g) {
    size_t inter = 0, sp = 0, sg = 0;
    for (size_t i = 0; i < p.data.size(); ++i) {
        inter += p.data[i] && g.data[i];
        sp += p.data[i] != 0;
        sg += g.data[i] != 0;
    }
    if (sp + sg == 0) return 1.0;
    return 4.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

}  // namespace

TEST_CASE("metric section passes on the real implementation") {
    selftest::Options o;
    o.sections = {"metrics", "losses", "pipeline"};
    const auto r = selftest::run(o);
    CHECK(r.passed());
    CHECK(r.to_text().find("OK ") != std::string::npos);
}

TEST_CASE("mutated dice is caught") {
    selftest::Options o;
    o.sections = {"metrics"};
    o.dice = doubled_numerator;
    const auto r = selftest::run(o);
    CHECK_FALSE(r.passed());
    const auto* c = find(r, "dice_identity");
    REQUIRE(c != nullptr);
    CHECK_FALSE(c->passed);
    CHECK(r.to_text().find("FAIL metrics/dice_identity") != std::string::npos);
}

TEST_CASE("unknown section is rejected") {
    selftest::Options o;
    o.sections = {"everything"};
    CHECK_THROWS(selftest::run(o));
}

TEST_CASE("report json lists every check") {
    selftest::Options o;
    o.sections = {"pipeline"};
    const auto r = selftest::run(o);
    const auto j = r.to_json();
    CHECK(j["seed"] == 42);
    CHECK(j["checks"].size() == r.checks.size());
}

TEST_CASE("oracles") {
    CHECK(selftest::oracle::lcs({"a", "b", "c", "d"}, {"b", "d"}) == 2);
    CHECK(selftest::oracle::t_two_sided_p(0.0, 4) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(selftest::oracle::t_two_sided_p(2.3, 4) == doctest::Approx(selftest::oracle::t_two_sided_p_df4(2.3)).epsilon(1e-9));
}
