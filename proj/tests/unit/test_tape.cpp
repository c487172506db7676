#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "imma/grad_check.hpp"
#include "imma/tape.hpp"

using namespace imma;

namespace {

Tensor mat(int r, int c, std::vector<float> v, bool rg = true) {
    return Tensor({r, c}, std::move(v), rg);
}

} // namespace

TEST_CASE("square forward and backward") {
    Tape tape;
    const Value x = tape.leaf(Tensor::scalar(3.0f, true), "x");
    const Value y = tape.square(x);
    CHECK(tape.scalar(y) == doctest::Approx(9.0f));
    const auto grads = tape.backward(y);
    CHECK(grads.at("x").data[0] == doctest::Approx(6.0f)); // d(x^2)/dx = 2x
}

TEST_CASE("silu at zero") {
    Tape tape;
    const Value x = tape.leaf(Tensor::scalar(0.0f, true), "x");
    const Value y = tape.silu(x);
    CHECK(tape.scalar(y) == 0.0f);
    const auto grads = tape.backward(tape.mean_all(y));
    CHECK(grads.at("x").data[0] == doctest::Approx(0.5f));
}

TEST_CASE("gather-row backward accumulates only into the looked-up row") {
    Tape tape;
    Tensor table = mat(4, 3, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    const Value e = tape.leaf(table, "table");
    const Value picked = tape.gather_rows(e, {2, 2});
    const auto grads = tape.backward(tape.mean_all(picked));
    const Tensor& g = grads.at("table");
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) {
            if (r == 2)
                CHECK(g.at(r, c) == doctest::Approx(2.0f / 6.0f)); // two lookups, mean over 6
            else
                CHECK(g.at(r, c) == 0.0f);
        }
}

TEST_CASE("matmul loss gradients match central finite differences") {
    ParamStore params;
    Rng rng(11);
    params["W"] = Tensor::randn({2, 2}, rng, 1.0f, true);

    const Tensor x = mat(2, 2, {0.3f, -1.2f, 0.7f, 0.25f}, false);
    const Tensor y = mat(2, 2, {1.0f, 0.0f, -0.5f, 2.0f}, false);
    const auto builder = [&](Tape& tape, const ParamStore& p) {
        const Value w = tape.leaf(p.at("W"), "W");
        const Value pred = tape.matmul(tape.constant(x), w);
        return tape.mean_all(tape.square(tape.sub(pred, tape.constant(y))));
    };
    CHECK(finite_diff_check(builder, params, 1e-3f) <= 1e-3);
}

TEST_CASE("leaf not reached by the loss gets an exact zero gradient") {
    Tape tape;
    const Value x = tape.leaf(Tensor::scalar(2.0f, true), "x");
    tape.leaf(Tensor::scalar(5.0f, true), "unused");
    const auto grads = tape.backward(tape.mean_all(tape.square(x)));
    CHECK(grads.at("unused").data[0] == 0.0f);
    CHECK(grads.count("x") == 1);
}

TEST_CASE("backward of a sum equals the sum of separate backward passes") {
    Rng rng(3);
    const Tensor wv = Tensor::randn({3, 3}, rng, 1.0f, true);
    const Tensor xv = Tensor::randn({2, 3}, rng, 1.0f, false);

    auto build = [&](Tape& tape, int which) {
        const Value w = tape.leaf(wv, "W");
        const Value x = tape.constant(xv);
        const Value l1 = tape.mean_all(tape.square(tape.matmul(x, w)));
        const Value l2 = tape.mean_all(tape.silu(tape.matmul(x, w)));
        if (which == 1) return l1;
        if (which == 2) return l2;
        return tape.add(l1, l2);
    };

    Tape t1, t2, ts;
    const auto g1 = t1.backward(build(t1, 1));
    const auto g2 = t2.backward(build(t2, 2));
    const auto gs = ts.backward(build(ts, 0));
    for (std::size_t i = 0; i < gs.at("W").data.size(); ++i)
        CHECK(gs.at("W").data[i] ==
              doctest::Approx(g1.at("W").data[i] + g2.at("W").data[i]).epsilon(1e-5));
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape tape;
    const Value x = tape.leaf(mat(2, 2, {1, 2, 3, 4}), "x");
    CHECK_THROWS_AS(tape.backward(tape.square(x)), std::invalid_argument);
}

TEST_CASE("linearity of backward: grad(a*L1 + b*L2)") {
    Rng rng(17);
    const Tensor wv = Tensor::randn({4, 2}, rng, 1.0f, true);
    const Tensor xv = Tensor::randn({3, 4}, rng, 1.0f, false);
    const float a = 1.7f, b = -0.6f;

    auto l1 = [&](Tape& t, Value w) { return t.mean_all(t.square(t.matmul(t.constant(xv), w))); };
    auto l2 = [&](Tape& t, Value w) { return t.mean_all(t.silu(t.matmul(t.constant(xv), w))); };

    Tape tc;
    const Value wc = tc.leaf(wv, "W");
    const auto gc = tc.backward(tc.add(tc.scale(l1(tc, wc), a), tc.scale(l2(tc, wc), b)));

    Tape t1, t2;
    const auto g1 = t1.backward(l1(t1, t1.leaf(wv, "W")));
    const auto g2 = t2.backward(l2(t2, t2.leaf(wv, "W")));

    for (std::size_t i = 0; i < gc.at("W").data.size(); ++i)
        CHECK(gc.at("W").data[i] ==
              doctest::Approx(a * g1.at("W").data[i] + b * g2.at("W").data[i]).epsilon(1e-5));
}

TEST_CASE("stop-gradient passes values and blocks flow") {
    Tape tape;
    const Value x = tape.leaf(Tensor::scalar(2.0f, true), "x");
    const Value y = tape.stop_gradient(tape.square(x));
    CHECK(tape.scalar(y) == doctest::Approx(4.0f));
    const auto grads = tape.backward(tape.mean_all(y));
    CHECK(grads.at("x").data[0] == 0.0f);
}

TEST_CASE("shape errors name the op and shapes") {
    Tape tape;
    const Value a = tape.leaf(mat(2, 3, {1, 2, 3, 4, 5, 6}), "a");
    const Value b = tape.leaf(mat(2, 2, {1, 2, 3, 4}), "b");
    CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("add"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    CHECK_THROWS_AS(tape.gather_rows(a, {7}), std::invalid_argument);
    CHECK_THROWS_AS(tape.broadcast_rows(a, 4), std::invalid_argument);
}

TEST_CASE("duplicate leaf names are rejected") {
    Tape tape;
    tape.leaf(Tensor::scalar(1.0f, true), "x");
    CHECK_THROWS_AS(tape.leaf(Tensor::scalar(2.0f, true), "x"), std::invalid_argument);
}

TEST_CASE("replay reproduces the eager forward bit-identically") {
    Rng rng(23);
    Tape tape;
    const Value w = tape.leaf(Tensor::randn({4, 4}, rng, 1.0f, true), "w");
    const Value v = tape.leaf(Tensor::randn({4}, rng, 1.0f, true), "v");
    const Value x = tape.constant(Tensor::randn({3, 4}, rng, 1.0f));
    Value h = tape.affine(x, w, v);
    h = tape.silu(h);
    h = tape.concat_cols(h, tape.broadcast_rows(v, 3));
    const Value loss = tape.mean_all(tape.square(h));

    const auto replayed = tape.replay<float>(loss, {});
    CHECK(replayed.size() == 1);
    CHECK(replayed[0] == tape.scalar(loss)); // bit-identical

    const auto hidden = tape.replay<float>(h, {});
    const Tensor& eager = tape.value(h);
    REQUIRE(hidden.size() == eager.data.size());
    for (std::size_t i = 0; i < hidden.size(); ++i) CHECK(hidden[i] == eager.data[i]);
}

TEST_CASE("identical seeds give bit-identical forward values and gradients") {
    auto run = [] {
        Rng rng(99);
        Tape tape;
        const Value w = tape.leaf(Tensor::randn({5, 5}, rng, 1.0f, true), "w");
        const Value x = tape.constant(Tensor::randn({5, 5}, rng, 1.0f));
        const Value loss = tape.mean_all(tape.square(tape.silu(tape.matmul(x, w))));
        auto grads = tape.backward(loss);
        return std::make_pair(tape.scalar(loss), grads.at("w").data);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

// Random composite graphs, gradient correctness against central differences.
namespace {

Value random_graph(Tape& tape, const ParamStore& params, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Value> pool;
    std::vector<int> bend; // nonlinear ops stacked along the value's lineage
    for (const auto& [name, t] : params) {
        pool.push_back(tape.leaf(t, name));
        bend.push_back(0);
    }
    pool.push_back(tape.constant(Tensor::randn(params.begin()->second.shape, rng, 1.0f)));
    bend.push_back(0);

    // Keep values in a conditioned range and cap nonlinearity depth at 3
    // (the artifact's own graphs stack at most three curved ops); beyond
    // that, central differences measure truncation, not the backward pass.
    auto normalized = [&](Value v) {
        float mx = 0.0f;
        for (float f : tape.value(v).data) mx = std::max(mx, std::abs(f));
        if (mx > 4.0f || (mx > 0.0f && mx < 0.25f)) return tape.scale(v, 1.0f / mx);
        return v;
    };
    auto emit = [&](Value v, int curved) {
        pool.push_back(normalized(v));
        bend.push_back(curved);
    };

    const int depth = 2 + rng.uniform_int(5); // <= 6
    for (int d = 0; d < depth; ++d) {
        const std::size_t ai = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())));
        const Value a = pool[ai];
        const auto& sa = tape.value(a).shape;
        const bool may_bend = bend[ai] < 3;
        switch (rng.uniform_int(6)) {
            case 0:
                if (may_bend)
                    emit(tape.silu(a), bend[ai] + 1);
                else
                    emit(tape.scale(a, rng.uniform(0.5f, 1.5f)), bend[ai]);
                break;
            case 1:
                if (may_bend)
                    emit(tape.square(a), bend[ai] + 1);
                else
                    emit(tape.scale(a, rng.uniform(0.5f, 1.5f)), bend[ai]);
                break;
            case 2: emit(tape.scale(a, rng.uniform(-1.5f, 1.5f)), bend[ai]); break;
            case 3: {
                // same-shape partner, else fall back to unary
                std::size_t bi = ai;
                for (std::size_t c = 0; c < pool.size(); ++c)
                    if (tape.value(pool[c]).shape == sa) bi = c;
                const int joined = std::max(bend[ai], bend[bi]);
                if (rng.uniform() < 0.5f || joined >= 3)
                    emit(tape.add(a, pool[bi]), joined);
                else
                    emit(tape.mul(a, pool[bi]), joined + 1);
                break;
            }
            case 4: {
                if (sa.size() == 2) {
                    Tensor w = Tensor::randn({sa[1], 1 + rng.uniform_int(4)}, rng, 0.7f);
                    emit(tape.matmul(a, tape.constant(w)), bend[ai]);
                } else {
                    emit(tape.scale(a, -0.7f), bend[ai]);
                }
                break;
            }
            default: {
                if (sa.size() == 2)
                    emit(tape.concat_cols(a, a), bend[ai]);
                else
                    emit(tape.scale(a, 0.8f), bend[ai]);
                break;
            }
        }
    }
    return tape.mean_all(pool.back());
}

} // namespace

TEST_CASE("gradient correctness on 100 random composite graphs") {
    for (int g = 0; g < 100; ++g) {
        Rng rng(1000 + static_cast<std::uint64_t>(g));
        ParamStore params;
        const int rows = 2 + rng.uniform_int(3);
        const int cols = 2 + rng.uniform_int(3);
        params["p0"] = Tensor::randn({rows, cols}, rng, 1.0f, true);
        params["p1"] = Tensor::randn({rows, cols}, rng, 1.0f, true);

        const auto builder = [&](Tape& tape, const ParamStore& p) {
            return random_graph(tape, p, 5000 + static_cast<std::uint64_t>(g));
        };
        // 1e-4 step: the f64 replay removes cancellation, so the smaller
        // step only shrinks truncation near critical points of the graph
        const double err = finite_diff_check(builder, params, 1e-4f);
        INFO("graph ", g, " error ", err);
        CHECK(err <= 1e-3);
    }
}
