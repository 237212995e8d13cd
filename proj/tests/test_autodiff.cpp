#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "gito/checkpoint.hpp"
#include "gito/grad_check.hpp"
#include "gito/ops.hpp"
#include "gito/tape.hpp"
#include "test_util.hpp"

using namespace gito;
using gito::testing::random_tensor;
using gito::testing::worst_error;
using T = Tensor<double>;

namespace {

double check_unary_op(const std::function<T(const T&)>& op, const T& x)
{
    auto results = gito::testing::check([&] { return sum(mul(op(x), op(x))); }, {{"x", x}});
    return worst_error(results);
}

}  // namespace

TEST_CASE("matmul by identity returns the left operand")
{
    T a = T::matrix({{1, 2}, {3, 4}});
    T eye = T::matrix({{1, 0}, {0, 1}});
    T c = matmul(a, eye);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("softmax of a single element is one and GELU fixes the origin")
{
    CHECK(softmax(T::matrix({{-3.7}}), 1).item() == 1.0);
    CHECK(gelu(T::scalar(0.0)).item() == 0.0);
}

TEST_CASE("shape mismatch names both shapes")
{
    T a = T::zeros({2, 3});
    T b = T::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find(" x [2, 3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(T::zeros({2, 3}), T::zeros({2, 2})), ShapeError);
    CHECK_THROWS_AS(T({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("backward of sum of squares gives 2x")
{
    Tape<double> tape;
    TapeScope<double> scope(tape);
    T x({2}, {1, 2}, true);
    backward(sum(mul(x, x)));
    REQUIRE(x.has_grad());
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    CHECK(tape.size() == 0);
}

TEST_CASE("detached loss leaves gradients at zero")
{
    Tape<double> tape;
    TapeScope<double> scope(tape);
    T x({3}, {1, 2, 3}, true);
    x.grad_buffer();
    backward(detach(sum(mul(x, x))));
    for (double g : x.grad())
        CHECK(g == 0.0);
}

TEST_CASE("non-scalar loss is rejected")
{
    Tape<double> tape;
    TapeScope<double> scope(tape);
    T x({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul_scalar(x, 2.0)), ShapeError);
}

TEST_CASE("finite difference oracle basics")
{
    T x({4}, {0.3, -1.0, 2.0, 5.0});
    T g = finite_difference_gradient<double>([](const T& v) { return sum(v).item(); }, x, 1e-6);
    for (double v : g.data())
        CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    T p({2}, {2.0, 3.0});
    T gp = finite_difference_gradient<double>([](const T& v) { return v.data()[0] * v.data()[1]; }, p, 1e-6);
    CHECK(std::abs(gp.data()[0] - 3.0) < 1e-6);
    CHECK(std::abs(gp.data()[1] - 2.0) < 1e-6);
    CHECK_THROWS(finite_difference_gradient<double>([](const T& v) { return sum(v).item(); }, x, 0.0));
}

TEST_CASE("layer norm then matmul then sum matches finite differences")
{
    std::mt19937_64 rng(7);
    T x = random_tensor(rng, {3, 4});
    T gamma = random_tensor(rng, {4});
    T beta = random_tensor(rng, {4});
    T w = random_tensor(rng, {4, 2});
    auto results = gito::testing::check(
        [&] { return sum(mul(matmul(layer_norm(x, gamma, beta), w), T::matrix({{1.5, -0.5}}))); },
        {{"x", x}, {"gamma", gamma}, {"beta", beta}, {"w", w}});
    CHECK(worst_error(results) < 1e-5);
}

TEST_CASE("every primitive passes the finite-difference check on several shapes")
{
    std::mt19937_64 rng(11);
    const std::vector<Shape> shapes{{3, 4}, {5, 2}, {1, 7}};
    for (const auto& s : shapes) {
        CAPTURE(shape_to_string(s));
        T a = random_tensor(rng, s);
        T b = random_tensor(rng, s);
        T row = random_tensor(rng, {s[1]});
        T positive = T(s, std::vector<double>(shape_size(s), 0.0), true);
        {
            std::uniform_real_distribution<double> u(0.5, 2.0);
            for (auto& v : positive.mutable_data())
                v = u(rng);
        }
        T w = random_tensor(rng, {s[1], 3});

        CHECK(check_unary_op([](const T& v) { return gelu(v); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return leaky_relu(v, 0.2); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return exp(v); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return sqrt(v); }, positive) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return softmax(v, 0); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return softmax(v, 1); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return transpose(v); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return sum_axis(v, 0); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return sum_axis(v, 1); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return add_scalar(mul_scalar(v, 1.7), -0.3); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return mean(v); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return reshape(v, {v.size()}); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return slice_last(v, 0, 1); }, a) < 1e-5);
        CHECK(check_unary_op([](const T& v) { return repeat_cols(slice_last(v, 0, 1), 3); }, a) < 1e-5);

        auto pair_check = [&](const std::function<T()>& f, const T& x, const T& y) {
            return worst_error(gito::testing::check([&] { T r = f(); return sum(mul(r, r)); },
                                                       {{"a", x}, {"b", y}}));
        };
        CHECK(pair_check([&] { return add(a, b); }, a, b) < 1e-5);
        CHECK(pair_check([&] { return sub(a, row); }, a, row) < 1e-5);
        CHECK(pair_check([&] { return mul(a, row); }, a, row) < 1e-5);
        CHECK(pair_check([&] { return div(a, positive); }, a, positive) < 1e-5);
        CHECK(pair_check([&] { return matmul(a, w); }, a, w) < 1e-5);
        CHECK(pair_check([&] { return concat<double>({a, b}); }, a, b) < 1e-5);
        // Width-2 rows normalise to exactly +-1, leaving only eps-driven gradients.
        if (s[1] > 2)
            CHECK(pair_check([&] { return layer_norm(a, row, row); }, a, row) < 1e-5);

        const std::size_t n = s[0];
        std::vector<Index> idx(2 * n);
        std::vector<Index> seg(n);
        for (std::size_t i = 0; i < idx.size(); ++i)
            idx[i] = static_cast<Index>((i * 7 + 3) % n);
        for (std::size_t i = 0; i < n; ++i)
            seg[i] = static_cast<Index>(i % 2);
        CHECK(check_unary_op([&](const T& v) { return gather_rows(v, idx); }, a) < 1e-5);
        CHECK(check_unary_op([&](const T& v) { return scatter_add_rows(v, seg, 3); }, a) < 1e-5);
        CHECK(check_unary_op([&](const T& v) { return segment_softmax(v, seg, 2); }, a) < 1e-5);
    }
}

TEST_CASE("layer norm gradient on three shapes")
{
    std::mt19937_64 rng(12);
    for (Shape s : {Shape{3, 4}, Shape{2, 5}, Shape{6, 3}}) {
        T x = random_tensor(rng, s);
        T gamma = random_tensor(rng, {s[1]});
        T beta = random_tensor(rng, {s[1]});
        auto results = gito::testing::check(
            [&] {
                T r = layer_norm(x, gamma, beta);
                return sum(mul(r, r));
            },
            {{"x", x}, {"gamma", gamma}, {"beta", beta}});
        CHECK(worst_error(results) < 1e-5);
    }
}

TEST_CASE("scatter-add then gather over distinct indices is the identity")
{
    std::mt19937_64 rng(3);
    T x = random_tensor(rng, {4, 3}, 1.0, false);
    std::vector<Index> idx{5, 0, 3, 1};
    T back = gather_rows(scatter_add_rows(x, idx, 6), idx);
    CHECK(std::vector<double>(back.data().begin(), back.data().end()) ==
          std::vector<double>(x.data().begin(), x.data().end()));
}

TEST_CASE("softmax normalises and is shift invariant")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        T x = random_tensor(rng, {6, 9}, 5.0, false);
        for (std::size_t axis : {0u, 1u}) {
            T y = softmax(x, axis);
            T totals = sum_axis(y, axis);
            for (double t : totals.data())
                CHECK(std::abs(t - 1.0) <= 1e-12);
            T shifted = softmax(add_scalar(x, 123.25), axis);
            CHECK(gito::testing::max_abs_diff(y.data(), shifted.data()) <= 1e-12);
        }
    }
}

TEST_CASE("segment softmax handles empty segments and sums to one per segment")
{
    T logits = T::matrix({{1.0, 2.0}, {3.0, -1.0}, {0.5, 0.5}});
    std::vector<Index> seg{0, 0, 2};
    T y = segment_softmax(logits, seg, 4);
    CHECK(y.at(0, 0) + y.at(1, 0) == doctest::Approx(1.0));
    CHECK(y.at(2, 1) == 1.0);
}

TEST_CASE("checkpoint round trip and malformed input")
{
    std::mt19937_64 rng(9);
    Tensor<float> a({3, 2}, {0.5f, -1.25f, 3.0f, 1e-3f, 7.5f, -2.0f});
    Checkpoint ckpt;
    ckpt.tensors.push_back(store_tensor("layer.weight", a));
    ckpt.tensors.push_back(store_tensor("bias", Tensor<float>::full({4}, 0.5f)));
    auto bytes = encode_checkpoint(ckpt);
    CHECK(std::string(bytes.data(), 4) == "GITO");
    CHECK(bytes[4] == 1);

    Checkpoint back = decode_checkpoint(bytes);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].name == "layer.weight");
    Tensor<float> restored = Tensor<float>::zeros({3, 2});
    restore_tensor(*back.find("layer.weight"), restored);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(restored.data()[i] == a.data()[i]);
    Tensor<float> wrong = Tensor<float>::zeros({2, 3});
    CHECK_THROWS_AS(restore_tensor(*back.find("layer.weight"), wrong), ShapeError);

    ckpt.header = "hidden_size=8\n";
    auto with_header = decode_checkpoint(encode_checkpoint(ckpt));
    CHECK(with_header.header == "hidden_size=8\n");

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    try {
        decode_checkpoint(truncated);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() > 0);
        CHECK(e.offset() <= truncated.size());
    }
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
}

TEST_CASE("double tensors round-trip bit-exactly")
{
    std::mt19937_64 rng(10);
    T a = random_tensor(rng, {4, 3});
    Checkpoint ckpt;
    ckpt.tensors.push_back(store_tensor("w", a));
    auto bytes = encode_checkpoint(ckpt);
    CHECK(bytes[4] == 2);
    T restored = T::zeros({4, 3});
    restore_tensor(*decode_checkpoint(bytes).find("w"), restored);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(restored.data()[i] == a.data()[i]);
}

TEST_CASE("tapes on separate threads do not share gradients")
{
    T w({2}, {1.0, -2.0}, true);
    Tape<double> first;
    Tape<double> second;
    {
        TapeScope<double> scope(first);
        first.backward(sum(mul(w, w)), false);
    }
    {
        TapeScope<double> scope(second);
        second.backward(sum(mul_scalar(w, 3.0)), false);
    }
    CHECK(first.gradient(w)[1] == doctest::Approx(-4.0));
    CHECK(second.gradient(w)[1] == doctest::Approx(3.0));
    CHECK_FALSE(w.has_grad());
}
