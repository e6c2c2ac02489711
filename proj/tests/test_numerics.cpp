#include <doctest.h>

#include <cmath>
#include <random>

#include "rd/numerics.hpp"

using namespace rd;

TEST_CASE("softmax hand values") {
    const Distribution p = softmax({0.0, 0.0}, 1.0);
    CHECK(p.probs[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.probs[1] == doctest::Approx(0.5).epsilon(1e-15));

    // logits ln1, ln2, ln3 at unit temperature give probabilities 1:2:3
    const Distribution q = softmax({std::log(1.0), std::log(2.0), std::log(3.0)}, 1.0);
    CHECK(q.probs[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(q.probs[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(q.probs[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

    // halving the temperature squares the odds ratio
    const Distribution r = softmax({0.0, std::log(2.0)}, 0.5);
    CHECK(r.probs[1] / r.probs[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant, normalized, and overflow safe") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d(0.0, 5.0);
    for (int trial = 0; trial < 100; ++trial) {
        Vec64 logits(2 + trial % 7);
        for (double& x : logits) x = d(rng);
        const Distribution p = softmax(logits, 0.7);
        CHECK(p.valid(1e-12));
        Vec64 shifted = logits;
        for (double& x : shifted) x += 123.456;
        const Distribution q = softmax(shifted, 0.7);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            CHECK(q.probs[i] == doctest::Approx(p.probs[i]).epsilon(1e-12));
        }
    }
    const Distribution big = softmax({1e6, 0.0}, 1.0);
    CHECK(std::isfinite(big.probs[0]));
    CHECK(big.probs[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(softmax({0.0, 1.0}, 0.0), ConfigError);
    CHECK_THROWS_AS(softmax({0.0, 1.0}, -1.0), ConfigError);
}

TEST_CASE("cosine hand values and degeneracy flag") {
    CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine({2, 0}, {5, 0}) == doctest::Approx(1.0));
    CHECK(cosine({1, 1}, {-1, -1}) == doctest::Approx(-1.0));
    CHECK(cosine({1, 0}, {1, 1}) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

    bool degenerate = false;
    const double c = cosine({0, 0}, {0, 0}, &degenerate);
    CHECK(degenerate);
    CHECK(c == 0.0);
    degenerate = false;
    cosine({1, 0}, {0, 2}, &degenerate);
    CHECK_FALSE(degenerate);
    CHECK_THROWS_AS(cosine({1, 0}, {1, 0, 0}), ShapeError);
}

TEST_CASE("l2_normalize returns unit vectors and flags zero input") {
    const Vec64 u = l2_normalize({3, 4});
    CHECK(u[0] == doctest::Approx(0.6));
    CHECK(u[1] == doctest::Approx(0.8));
    bool degenerate = false;
    const Vec64 z = l2_normalize({0, 0, 0}, &degenerate);
    CHECK(degenerate);
    CHECK(z == Vec64{0, 0, 0});
}

TEST_CASE("kl divergence hand values and properties") {
    CHECK(kl_divergence({{1.0, 0.0}}, {{0.5, 0.5}}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(kl_divergence({{0.5, 0.5}}, {{0.5, 0.5}}) == doctest::Approx(0.0));
    // KL([3/4,1/4] || [1/2,1/2]) = 3/4 ln(3/2) + 1/4 ln(1/2)
    CHECK(kl_divergence({{0.75, 0.25}}, {{0.5, 0.5}}) ==
          doctest::Approx(0.75 * std::log(1.5) + 0.25 * std::log(0.5)).epsilon(1e-12));
    CHECK_THROWS_AS(kl_divergence({{1.0}}, {{0.5, 0.5}}), ShapeError);

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        Vec64 a(4), b(4);
        for (double& x : a) x = u(rng);
        for (double& x : b) x = u(rng);
        const double sa = a[0] + a[1] + a[2] + a[3], sb = b[0] + b[1] + b[2] + b[3];
        for (double& x : a) x /= sa;
        for (double& x : b) x /= sb;
        CHECK(kl_divergence({a}, {b}) >= -1e-12);  // Gibbs inequality
    }
}

TEST_CASE("entropy endpoints") {
    CHECK(entropy({{0.25, 0.25, 0.25, 0.25}}) == doctest::Approx(std::log(4.0)).epsilon(1e-7));
    CHECK(entropy({{1.0, 0.0, 0.0}}) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(entropy({{0.5, 0.5}}) == doctest::Approx(std::log(2.0)).epsilon(1e-7));
}

TEST_CASE("matvec hand value and shape guard") {
    Mat m(2, 3);
    m.at(0, 0) = 1; m.at(0, 1) = 2; m.at(0, 2) = 3;
    m.at(1, 0) = -1; m.at(1, 1) = 0; m.at(1, 2) = 1;
    const Vec64 y = matvec(m, {1, 2, 3});
    CHECK(y[0] == doctest::Approx(14.0));
    CHECK(y[1] == doctest::Approx(2.0));
    CHECK_THROWS_AS(matvec(m, {1, 2}), ShapeError);
}

TEST_CASE("distribution validity and argmax tie-break") {
    CHECK(Distribution{{0.5, 0.5}}.valid());
    CHECK_FALSE(Distribution{{0.5, 0.4}}.valid());
    CHECK_FALSE(Distribution{{1.5, -0.5}}.valid());
    CHECK(Distribution{{0.2, 0.4, 0.4}}.argmax() == 1);  // first max wins
}

// --- tape ---

TEST_CASE("tape forward matches the free functions") {
    GradTape tape;
    const Vec64 a = {0.3, -1.2, 0.8};
    const Vec64 b = {1.0, 0.4, -0.5};
    const Var va = tape.leaf(a);
    const Var vb = tape.leaf(b);
    CHECK(tape.scalar(tape.dot(va, vb)) ==
          doctest::Approx(0.3 * 1.0 - 1.2 * 0.4 - 0.8 * 0.5).epsilon(1e-15));
    CHECK(tape.scalar(tape.cosine(va, vb)) == doctest::Approx(cosine(a, b)).epsilon(1e-13));
    const Vec64 sm = tape.value(tape.softmax(va, 0.5));
    const Distribution ref = softmax(a, 0.5);
    for (std::size_t i = 0; i < 3; ++i) CHECK(sm[i] == doctest::Approx(ref.probs[i]).epsilon(1e-13));
    const Vec64 nm = tape.value(tape.normalize(va));
    const Vec64 nref = l2_normalize(a);
    for (std::size_t i = 0; i < 3; ++i) CHECK(nm[i] == doctest::Approx(nref[i]).epsilon(1e-13));
}

TEST_CASE("tape gradient of sum of squares is exact") {
    const Vec64 params = {0.5, -1.5, 2.0, 0.0};
    const double err = check_gradients(
        [](const Vec64& p, Vec64* grad) {
            GradTape tape;
            const Var x = tape.leaf(p);
            const Var y = tape.dot(x, x);
            if (grad) {
                tape.backward(y);
                *grad = tape.grad(x);
            }
            return tape.scalar(y);
        },
        params, 1e-5);
    CHECK(err < 1e-7);
}

TEST_CASE("tape gradient of composite kl(t || softmax) is accurate") {
    const Vec64 t = {0.7, 0.2, 0.1};
    const Vec64 params = {0.4, -0.3, 1.1};
    const double err = check_gradients(
        [&](const Vec64& p, Vec64* grad) {
            GradTape tape;
            const Var logits = tape.leaf(p);
            const Var probs = tape.softmax(logits, 0.3);
            const Var logp = tape.log_clamped(probs);
            const Var tv = tape.constant(t);
            const Var ce = tape.dot(tv, logp);
            const Var loss = tape.scale(ce, -1.0);
            if (grad) {
                tape.backward(loss);
                *grad = tape.grad(logits);
            }
            return tape.scalar(loss);
        },
        params, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("tape gradient through normalize, cosine and hinge chains") {
    const Vec64 params = {0.9, -0.4, 0.2, 1.3, 0.6, -0.8};
    const double err = check_gradients(
        [](const Vec64& p, Vec64* grad) {
            GradTape tape;
            const Var x = tape.leaf(Vec64(p.begin(), p.begin() + 3));
            const Var y = tape.leaf(Vec64(p.begin() + 3, p.end()));
            const Var nx = tape.normalize(x);
            const Var c = tape.cosine(nx, y);
            const Var h = tape.hinge(c, 0.1);
            const Var d = tape.sub(x, y);
            const Var q = tape.dot(d, d);
            const Var terms[] = {h, q};
            const double coeffs[] = {2.0, 0.25};
            const Var out = tape.affine(terms, coeffs, -1.0);
            if (grad) {
                tape.backward(out);
                grad->clear();
                for (double g : tape.grad(x)) grad->push_back(g);
                for (double g : tape.grad(y)) grad->push_back(g);
            }
            return tape.scalar(out);
        },
        params, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("tape flags degenerate normalization and zeroes its gradient") {
    GradTape tape;
    const Var z = tape.leaf({0.0, 0.0});
    const Var nz = tape.normalize(z);
    CHECK(tape.degenerate(nz));
    const Var ok = tape.leaf({1.0, 2.0});
    CHECK_FALSE(tape.degenerate(tape.normalize(ok)));
    const Var c = tape.cosine(z, ok);
    CHECK(tape.scalar(c) == 0.0);
    tape.backward(c);
    CHECK(tape.grad(z) == Vec64{0.0, 0.0});
}

TEST_CASE("hinge clamps below the margin and passes gradient above it") {
    GradTape tape;
    const Var x = tape.leaf({-0.5, 0.05, 0.4});
    const Var h = tape.hinge(x, 0.1);  // max(0, x + 0.1) elementwise
    const Vec64& v = tape.value(h);
    CHECK(v[0] == 0.0);
    CHECK(v[1] == doctest::Approx(0.15));
    CHECK(v[2] == doctest::Approx(0.5));
    const Var s = tape.dot(h, h);
    tape.backward(s);
    const Vec64& g = tape.grad(x);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == doctest::Approx(0.3));
}
