#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gito/ops.hpp"
#include "gito/tno.hpp"
#include "test_util.hpp"

using namespace gito;
using gito::testing::max_abs_diff;
using gito::testing::random_tensor;
using gito::testing::worst_error;
using T = Tensor<double>;

namespace {

TnoConfig small_config(bool self_attention = true)
{
    TnoConfig c;
    c.hidden = 4;
    c.heads = 2;
    c.depth = 2;
    c.self_attention = self_attention;
    c.moe = ExpertConfig{2, 2, 2, 5};
    return c;
}

T take_rows(const T& m, const std::vector<std::size_t>& rows)
{
    std::vector<double> data;
    for (std::size_t r : rows)
        for (std::size_t c = 0; c < m.cols(); ++c)
            data.push_back(m.at(r, c));
    return T({rows.size(), m.cols()}, data, m.requires_grad());
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng)
{
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

}  // namespace

TEST_CASE("a single query is valid")
{
    Rng rng(1);
    Tno<double> tno(small_config(), rng);
    T out = tno(random_tensor(rng, {1, 4}, 1.0, false), random_tensor(rng, {1, 2}, 1.0, false),
                {random_tensor(rng, {7, 4}, 1.0, false)});
    CHECK(out.shape() == Shape{1, 4});
    for (double v : out.data())
        CHECK(std::isfinite(v));
    CHECK_THROWS(tno(random_tensor(rng, {1, 4}), random_tensor(rng, {1, 2}), {}));
}

TEST_CASE("query permutation permutes the output")
{
    Rng rng(2);
    Tno<double> tno(small_config(), rng);
    T q = random_tensor(rng, {12, 4}, 1.0, false);
    T coords = random_tensor(rng, {12, 2}, 1.0, false);
    std::vector<T> inputs{random_tensor(rng, {9, 4}, 1.0, false), random_tensor(rng, {5, 4}, 1.0, false)};
    T out = tno(q, coords, inputs);
    auto perm = shuffled(12, rng);
    T moved = tno(take_rows(q, perm), take_rows(coords, perm), inputs);
    CHECK(max_abs_diff(take_rows(out, perm), moved) <= 1e-10);
}

TEST_CASE("input-embedding row order is irrelevant")
{
    Rng rng(3);
    Tno<double> tno(small_config(), rng);
    T q = random_tensor(rng, {6, 4}, 1.0, false);
    T coords = random_tensor(rng, {6, 2}, 1.0, false);
    std::vector<T> inputs{random_tensor(rng, {9, 4}, 1.0, false), random_tensor(rng, {5, 4}, 1.0, false)};
    T out = tno(q, coords, inputs);
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        auto moved_inputs = inputs;
        moved_inputs[s] = take_rows(inputs[s], shuffled(inputs[s].rows(), rng));
        CHECK(max_abs_diff(out, tno(q, coords, moved_inputs)) <= 1e-6);
    }
}

TEST_CASE("without self-attention queries are independent")
{
    Rng rng(4);
    Tno<double> tno(small_config(false), rng);
    T q = random_tensor(rng, {10, 4}, 1.0, false);
    T coords = random_tensor(rng, {10, 2}, 1.0, false);
    std::vector<T> inputs{random_tensor(rng, {8, 4}, 1.0, false)};
    T out = tno(q, coords, inputs);
    std::vector<std::size_t> subset{1, 4, 7};
    T part = tno(take_rows(q, subset), take_rows(coords, subset), inputs);
    CHECK(max_abs_diff(take_rows(out, subset), part) <= 1e-10);
}

TEST_CASE("decoder contract")
{
    Rng rng(5);
    Mlp<double> decoder(4, 6, 3, 2, rng);
    T x = random_tensor(rng, {5, 4});
    CHECK(decoder(x).shape() == Shape{5, 3});
    auto results = gito::testing::check(
        [&] { return sum(mul(decoder(x), decoder(x))); },
        [&] {
            ParameterList<double> p;
            decoder.collect("decoder", p);
            p.emplace_back("x", x);
            return p;
        }());
    CHECK(worst_error(results) < 1e-4);
    decoder.output_layer().zero();
    T zeroed = decoder(x);
    for (double v : zeroed.data())
        CHECK(v == 0.0);
}

TEST_CASE("operator gradients match finite differences")
{
    Rng rng(6);
    Tno<double> tno(small_config(), rng);
    T q = random_tensor(rng, {4, 4});
    T coords = random_tensor(rng, {4, 2}, 1.0, false);
    std::vector<T> inputs{random_tensor(rng, {5, 4}), random_tensor(rng, {3, 4})};
    ParameterList<double> params;
    tno.collect("tno", params);
    params.emplace_back("q", q);
    params.emplace_back("in0", inputs[0]);
    params.emplace_back("in1", inputs[1]);
    auto results = gito::testing::check([&] { return sum(tno(q, coords, inputs)); }, params);
    CHECK(worst_error(results) < 1e-4);
}
