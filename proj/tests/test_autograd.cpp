#include <doctest.h>

#include <cmath>

#include "groundkit/autograd.hpp"
#include "groundkit/rng.hpp"
#include "groundkit/training.hpp"

using namespace groundkit;
using ag::Tensor;
using T = Tensor<double>;

namespace {

T random_param(int r, int c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(r) * c);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return T::parameter(r, c, v);
}

double check(const std::function<T()>& f, const std::vector<T>& inputs) {
    std::vector<training::Coordinate<double>> coords;
    for (const auto& t : inputs)
        for (size_t i = 0; i < t.size(); ++i) coords.push_back({t, i, "x"});
    return training::gradcheck<double>(f, coords, 1e-6).max_rel_error;
}

// Weighted sum so every output element gets a distinct upstream gradient.
T reduce(const T& y) {
    std::vector<double> w(y.size());
    for (size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return ag::sum_all(ag::mul(y, T::constant(y.rows(), y.cols(), w)));
}

}  // namespace

TEST_CASE("forward values") {
    const auto a = T::constant(2, 2, {1, 2, 3, 4});
    const auto b = T::constant(2, 2, {5, 6, 7, 8});
    CHECK(ag::matmul(a, b).values() == std::vector<double>{19, 22, 43, 50});
    CHECK(ag::matmul_nt(a, b).values() == std::vector<double>{17, 23, 39, 53});
    CHECK(ag::sum_all(a).item() == 10);
    CHECK(ag::relu(T::constant(1, 2, {-1, 2})).values() == std::vector<double>{0, 2});
    const auto s = ag::softmax_rows(T::constant(1, 2, {0, 0}));
    CHECK(s(0, 0) == doctest::Approx(0.5));
    const auto causal = ag::softmax_rows(T::constant(2, 2, {1, 5, 1, 5}), true);
    CHECK(causal(0, 1) == 0.0);
    CHECK(causal(0, 0) == doctest::Approx(1.0));
    CHECK_THROWS(ag::matmul(a, T::constant(3, 1, {1, 2, 3})));
}

TEST_CASE("cross entropy ignores the ignore index") {
    const auto logits = T::constant(2, 3, {0, 0, 0, 5, 0, 0});
    const std::vector<int> tgt = {1, -1};
    CHECK(ag::cross_entropy(logits, std::span<const int>(tgt), -1).item() == doctest::Approx(std::log(3.0)));
}

TEST_CASE("elementwise gradients") {
    const auto a = random_param(3, 4, 1);
    const auto b = random_param(3, 4, 2);
    CHECK(check([&] { return reduce(ag::add(a, b)); }, {a, b}) < 1e-6);
    CHECK(check([&] { return reduce(ag::sub(a, b)); }, {a, b}) < 1e-6);
    CHECK(check([&] { return reduce(ag::mul(a, b)); }, {a, b}) < 1e-6);
    CHECK(check([&] { return reduce(ag::scale(a, 2.5)); }, {a}) < 1e-6);
    CHECK(check([&] { return reduce(ag::sigmoid(a)); }, {a}) < 1e-6);
    CHECK(check([&] { return reduce(ag::gelu(a)); }, {a}) < 1e-6);
    CHECK(check([&] { return ag::mean_all(ag::mul(a, a)); }, {a}) < 1e-6);
}

TEST_CASE("matrix gradients") {
    const auto a = random_param(3, 4, 3);
    const auto b = random_param(4, 2, 4);
    const auto c = random_param(5, 4, 5);
    const auto row = random_param(1, 4, 6);
    CHECK(check([&] { return reduce(ag::matmul(a, b)); }, {a, b}) < 1e-6);
    CHECK(check([&] { return reduce(ag::matmul_nt(a, c)); }, {a, c}) < 1e-6);
    CHECK(check([&] { return reduce(ag::add_row(a, row)); }, {a, row}) < 1e-6);
}

TEST_CASE("normalization and softmax gradients") {
    const auto x = random_param(3, 6, 7);
    const auto g = random_param(1, 6, 8, 0.5, 1.5);
    const auto b = random_param(1, 6, 9);
    CHECK(check([&] { return reduce(ag::layer_norm(x, g, b)); }, {x, g, b}) < 1e-5);
    CHECK(check([&] { return reduce(ag::softmax_rows(x)); }, {x}) < 1e-6);
    const auto sq = random_param(4, 4, 10);
    CHECK(check([&] { return reduce(ag::softmax_rows(sq, true)); }, {sq}) < 1e-6);
}

TEST_CASE("indexing gradients") {
    const auto table = random_param(5, 3, 11);
    const std::vector<int> ids = {4, 1, 4};
    CHECK(check([&] { return reduce(ag::gather_rows(table, std::span<const int>(ids))); }, {table}) < 1e-6);
    const auto a = random_param(2, 3, 12);
    const auto b = random_param(3, 3, 13);
    CHECK(check([&] { return reduce(ag::concat_rows<double>({a, b})); }, {a, b}) < 1e-6);
    CHECK(check([&] { return reduce(ag::slice_rows(b, 1, 3)); }, {b}) < 1e-6);
    CHECK(check([&] { return reduce(ag::slice_cols(b, 0, 2)); }, {b}) < 1e-6);
    CHECK(check([&] { return reduce(ag::concat_cols<double>({b, b})); }, {b}) < 1e-6);
    const auto logits = random_param(3, 5, 14);
    const std::vector<int> tgt = {2, 0, 4};
    CHECK(check([&] { return ag::cross_entropy(logits, std::span<const int>(tgt), -1); }, {logits}) < 1e-6);
}

TEST_CASE("no-grad mode records nothing") {
    const auto a = random_param(2, 2, 15);
    {
        ag::NoGradGuard guard;
        CHECK_FALSE(ag::grad_enabled());
        CHECK_FALSE(ag::sum_all(a).requires_grad());
    }
    CHECK(ag::grad_enabled());
    CHECK(ag::sum_all(a).requires_grad());
}

TEST_CASE("backward marks reached parameters") {
    auto a = random_param(2, 2, 16);
    auto unused = random_param(2, 2, 17);
    ag::backward(ag::sum_all(a));
    CHECK(a.touched());
    CHECK_FALSE(unused.touched());
    CHECK(a.grad() == std::vector<double>(4, 1.0));
    a.zero_grad();
    CHECK_FALSE(a.touched());
    CHECK_FALSE(a.has_grad());
}
