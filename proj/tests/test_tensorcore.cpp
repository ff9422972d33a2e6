#include <doctest.h>

#include "oracles.hpp"
#include "slca/graph.hpp"

using namespace slca;

namespace {

ConvParams make_params(const Tensor& kernels, const std::vector<double>& bias,
                       std::int64_t stride, std::int64_t dilation, Padding pad) {
    return ConvParams(kernels, Tensor({static_cast<std::int64_t>(bias.size())},
                                      std::vector<double>(bias)),
                      ConvGeometry{stride, dilation, pad});
}

}  // namespace

TEST_CASE("conv: 1x1x1 identity kernel is the identity map") {
    std::mt19937_64 rng(11);
    const Tensor x = oracles::random_tensor({1, 3, 4, 5}, rng);
    Tensor k({1, 1, 1, 1, 1});
    k[0] = 1.0;
    const Tensor y = conv(x, make_params(k, {0.0}, 1, 1, Padding::Same), Activation::None);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv: all-ones 3x3x3 kernel on constant 4x4x4 input, VALID") {
    const Tensor x = Tensor::full({1, 4, 4, 4}, 1.0);
    const Tensor k = Tensor::full({1, 1, 3, 3, 3}, 1.0);
    const Tensor y = conv(x, make_params(k, {0.0}, 1, 1, Padding::Valid), Activation::None);
    CHECK(y.shape() == Shape{1, 2, 2, 2});
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(27.0));
}

TEST_CASE("conv: random [2,5,5,5] x [3,2,3,3,3] vs nested-loop oracle") {
    std::mt19937_64 rng(29);
    for (std::int64_t stride : {1, 2}) {
        for (std::int64_t dilation : {1, 2}) {
            const Tensor x = oracles::random_tensor({2, 5, 5, 5}, rng);
            const Tensor k = oracles::random_tensor({3, 2, 3, 3, 3}, rng);
            const std::vector<double> b{0.3, -0.2, 0.1};
            const Tensor got =
                conv(x, make_params(k, b, stride, dilation, Padding::Same), Activation::None);
            const Tensor want = oracles::conv(x, k, b, stride, dilation, true, false);
            REQUIRE(got.shape() == want.shape());
            for (std::int64_t i = 0; i < got.size(); ++i) {
                CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("conv is linear in its input (activation none)") {
    std::mt19937_64 rng(31);
    const Tensor x = oracles::random_tensor({2, 4, 4}, rng);
    const Tensor y = oracles::random_tensor({2, 4, 4}, rng);
    const Tensor k = oracles::random_tensor({2, 2, 3, 3}, rng);
    const ConvParams p = make_params(k, {0.0, 0.0}, 1, 1, Padding::Same);
    Tensor combo(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) combo[i] = 2.0 * x[i] - 3.0 * y[i];
    const Tensor lhs = conv(combo, p, Activation::None);
    const Tensor cx = conv(x, p, Activation::None);
    const Tensor cy = conv(y, p, Activation::None);
    for (std::int64_t i = 0; i < lhs.size(); ++i) {
        CHECK(lhs[i] == doctest::Approx(2.0 * cx[i] - 3.0 * cy[i]).epsilon(1e-10));
    }
}

TEST_CASE("conv: SAME at stride 1 preserves spatial shape for odd m and any r") {
    std::mt19937_64 rng(37);
    const Tensor x = oracles::random_tensor({1, 7, 6}, rng);
    for (std::int64_t m : {1, 3, 5}) {
        for (std::int64_t r : {1, 2, 3}) {
            const Tensor k = oracles::random_tensor({2, 1, m, m}, rng);
            const Tensor y =
                conv(x, make_params(k, {0.0, 0.0}, 1, r, Padding::Same), Activation::None);
            CHECK(y.spatial() == x.spatial());
        }
    }
}

TEST_CASE("conv: even kernel and channel mismatch are rejected") {
    std::mt19937_64 rng(41);
    const Tensor x = oracles::random_tensor({2, 4, 4}, rng);
    CHECK_THROWS_AS(make_params(oracles::random_tensor({1, 2, 2, 2}, rng), {0.0}, 1, 1,
                                Padding::Same),
                    ShapeError);
    const ConvParams p = make_params(oracles::random_tensor({1, 3, 3, 3}, rng), {0.0}, 1, 1,
                                     Padding::Same);
    CHECK_THROWS_AS(conv(x, p, Activation::None), ShapeError);
}

TEST_CASE("global_avg_pool examples and oracle") {
    const Tensor constant = global_avg_pool(Tensor::full({3, 2, 2}, 0.7));
    REQUIRE(constant.shape() == Shape{3});
    for (std::int64_t i = 0; i < 3; ++i) CHECK(constant[i] == 0.7);
    const Tensor small({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(global_avg_pool(small)[0] == 2.5);
    std::mt19937_64 rng(43);
    const Tensor x = oracles::random_tensor({3, 4, 4, 4}, rng);
    const auto got = global_avg_pool(x);
    const auto want = oracles::global_avg_pool(x);
    for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("dense examples and oracle") {
    // Identity weight matrix, zero bias.
    const Tensor v({2}, {1.0, -2.0});
    const Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const Tensor zero_b({2});
    const Tensor id = dense(v, eye, zero_b, Activation::None);
    CHECK(id[0] == 1.0);
    CHECK(id[1] == -2.0);

    const Tensor b({2}, {0.0, 3.0});
    const Tensor clamped = dense(v, eye, b, Activation::Relu);
    CHECK(clamped[0] == 1.0);
    CHECK(clamped[1] == 1.0);

    std::mt19937_64 rng(47);
    const Tensor rv = oracles::random_tensor({5}, rng);
    const Tensor rw = oracles::random_tensor({5, 3}, rng);
    const Tensor rb = oracles::random_tensor({3}, rng);
    const Tensor got = dense(rv, rw, rb, Activation::None);
    const auto want = oracles::dense(
        std::vector<double>(rv.data(), rv.data() + rv.size()),
        std::vector<double>(rw.data(), rw.data() + rw.size()),
        std::vector<double>(rb.data(), rb.data() + rb.size()), false);
    for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(got[static_cast<std::int64_t>(i)] == doctest::Approx(want[i]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(dense(rv, eye, rb, Activation::None), ShapeError);
}

TEST_CASE("softmax examples, normalization, shift invariance") {
    const Tensor z = softmax(Tensor({3}));
    for (std::int64_t i = 0; i < 3; ++i) CHECK(z[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    const Tensor logs({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
    const Tensor s = softmax(logs);
    CHECK(s[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(s[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor v = oracles::random_tensor({5}, rng, -4.0, 4.0);
        Tensor shifted(v.shape());
        for (std::int64_t i = 0; i < v.size(); ++i) shifted[i] = v[i] + 17.5;
        const Tensor a = softmax(v);
        const Tensor b = softmax(shifted);
        double sum = 0.0;
        for (std::int64_t i = 0; i < a.size(); ++i) {
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
            CHECK(a[i] > 0.0);
            sum += a[i];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("eltwise_add examples and oracle") {
    std::mt19937_64 rng(59);
    const Tensor a = oracles::random_tensor({2, 3, 3}, rng);
    const Tensor zero(a.shape());
    Tensor neg(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) neg[i] = -a[i];

    const Tensor same = eltwise_add(a, zero);
    const Tensor nil = eltwise_add(a, neg);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        CHECK(same[i] == a[i]);
        CHECK(nil[i] == 0.0);
    }

    const Tensor b = oracles::random_tensor({2, 3, 3}, rng);
    const Tensor got = eltwise_add(a, b);
    const Tensor want = oracles::add(a, b);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(got[i] == want[i]);

    CHECK_THROWS_AS(eltwise_add(a, Tensor({2, 3, 4})), ShapeError);
}

TEST_CASE("concat_channels examples and slicing round trip") {
    std::mt19937_64 rng(61);
    const Tensor a = oracles::random_tensor({2, 3, 3}, rng);
    const Tensor single = concat_channels(std::vector<Tensor>{a});
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(single[i] == a[i]);

    const Tensor c1 = Tensor::full({1, 2, 2}, 1.0);
    const Tensor c2 = Tensor::full({1, 2, 2}, 2.0);
    const Tensor both = concat_channels(std::vector<Tensor>{c1, c2});
    for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(both[i] == 1.0);
        CHECK(both[4 + i] == 2.0);
    }

    const Tensor b = oracles::random_tensor({3, 3, 3}, rng);
    const Tensor cat = concat_channels(std::vector<Tensor>{a, b});
    REQUIRE(cat.shape() == Shape{5, 3, 3});
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(cat[i] == a[i]);
    for (std::int64_t i = 0; i < b.size(); ++i) CHECK(cat[a.size() + i] == b[i]);

    CHECK_THROWS_AS(concat_channels(std::vector<Tensor>{a, Tensor({1, 4, 4})}), ShapeError);
}

TEST_CASE("resample: identity, 1-D nearest upsample, constant preservation") {
    std::mt19937_64 rng(67);
    const Tensor x = oracles::random_tensor({2, 4, 4}, rng);
    const Tensor same = resample(x, x.spatial(), ResampleMode::Nearest);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);

    const Tensor line({1, 2}, {1.0, 3.0});
    const Tensor up = resample(line, {4}, ResampleMode::Nearest);
    CHECK(up[0] == 1.0);
    CHECK(up[1] == 1.0);
    CHECK(up[2] == 3.0);
    CHECK(up[3] == 3.0);

    const Tensor c = Tensor::full({2, 3, 3}, 1.25);
    for (auto mode : {ResampleMode::Nearest, ResampleMode::Trilinear}) {
        const Tensor r = resample(c, {5, 2}, mode);
        for (std::int64_t i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(1.25));
    }
}

TEST_CASE("backward: sum gives ones; dead relu region gives zeros; accumulation") {
    Parameter p("p", Tensor({2, 2}, {0.5, -1.0, 2.0, -0.25}));
    {
        GradTape tape;
        tape.backward(tape.sum(tape.param(p)));
        for (std::int64_t i = 0; i < 4; ++i) CHECK(p.grad[i] == 1.0);
        // Repeated backward accumulates into the same accumulator.
        GradTape tape2;
        tape2.backward(tape2.sum(tape2.param(p)));
        for (std::int64_t i = 0; i < 4; ++i) CHECK(p.grad[i] == 2.0);
    }
    Parameter neg("neg", Tensor({3}, {-1.0, -2.0, -0.5}));
    {
        GradTape tape;
        tape.backward(tape.sum(tape.relu(tape.param(neg))));
        for (std::int64_t i = 0; i < 3; ++i) CHECK(neg.grad[i] == 0.0);
    }
}

TEST_CASE("backward rejects a non-scalar loss") {
    Parameter p("p", Tensor({2}, {1.0, 2.0}));
    GradTape tape;
    NodePtr n = tape.param(p);
    CHECK_THROWS_AS(tape.backward(n), ShapeError);
}

TEST_CASE("grad_check: linear function is exact to roundoff") {
    Parameter p("lin", Tensor({4}, {0.1, -0.7, 1.3, 0.4}));
    Parameter* params[] = {&p};
    const GradCheckResult r = grad_check(params, [&](GradTape& tape) {
        return tape.sum(tape.param(p));
    });
    CHECK(r.max_rel_err < 1e-9);
}

TEST_CASE("grad_check: softmax + dense composite below 1e-6") {
    std::mt19937_64 rng(71);
    Parameter w("w", oracles::random_tensor({4, 3}, rng));
    Parameter b("b", oracles::random_tensor({3}, rng));
    Parameter w2("w2", oracles::random_tensor({3, 1}, rng));
    const Tensor v = oracles::random_tensor({4}, rng);
    Parameter* params[] = {&w, &b, &w2};
    const GradCheckResult r = grad_check(params, [&](GradTape& tape) {
        NodePtr s = tape.softmax(tape.dense(tape.constant(v), tape.param(w), tape.param(b)));
        return tape.sum(tape.dense(s, tape.param(w2), tape.constant(Tensor({1}))));
    });
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("grad_check: every differentiable op on randomized shapes, 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        Parameter x("x", oracles::random_tensor({2, 4, 4}, rng));
        Parameter k("k", oracles::random_tensor({2, 2, 3, 3}, rng));
        Parameter b("b", oracles::random_tensor({2}, rng));
        Parameter* params[] = {&x, &k, &b};

        auto check = [&](const std::function<NodePtr(GradTape&)>& f) {
            CHECK(grad_check(params, f).max_rel_err < 1e-4);
        };
        check([&](GradTape& t) {
            return t.sum(t.conv(t.param(x), t.param(k), t.param(b),
                                ConvGeometry{2, 2, Padding::Same}, Activation::Relu));
        });
        check([&](GradTape& t) { return t.sum(t.global_avg_pool(t.param(x))); });
        check([&](GradTape& t) { return t.sum(t.sigmoid(t.param(x))); });
        check([&](GradTape& t) {
            return t.sum(t.eltwise_add(t.param(x), t.relu(t.param(x))));
        });
        check([&](GradTape& t) {
            return t.sum(t.concat_channels({t.param(x), t.param(x)}));
        });
        check([&](GradTape& t) {
            return t.sum(t.resample(t.param(x), {7, 3}, ResampleMode::Nearest));
        });
        check([&](GradTape& t) {
            return t.sum(t.resample(t.param(x), {7, 3}, ResampleMode::Trilinear));
        });
        // Weight the channels: the plain sum of a per-voxel softmax is
        // constant, which would make the objective independent of x.
        check([&](GradTape& t) {
            return t.sum(t.scale_channels(t.channel_softmax(t.param(x)), t.param(b)));
        });
        check([&](GradTape& t) {
            return t.sum(t.scale_channels(t.param(x), t.sigmoid(t.param(b))));
        });
        check([&](GradTape& t) { return t.sum(t.scale_by(t.param(x), t.param(b), 1)); });
    }
}

TEST_CASE("grad_check reports non-finite intermediates with the parameter") {
    Parameter p("boom", Tensor({1}, {1.0}));
    Parameter* params[] = {&p};
    int calls = 0;
    CHECK_THROWS_AS(grad_check(params,
                               [&](GradTape& tape) {
                                   ++calls;
                                   Tensor v({1});
                                   v[0] = calls > 1 ? std::nan("") : 1.0;
                                   return tape.sum(
                                       tape.eltwise_add(tape.param(p), tape.constant(v)));
                               }),
                    ValueError);
}
