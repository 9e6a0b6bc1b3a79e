#include <doctest.h>

#include <cmath>
#include <vector>

#include "admc/ops.hpp"
#include "admc/rng.hpp"
#include "admc/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace admc;
using testing::check_gradients;
using D = Tensor<double>;

namespace {

D leaf(Shape dims, std::vector<double> v) { return D::from(std::move(dims), std::move(v)); }

} // namespace

TEST_CASE("tensor construction validates shape against payload") {
    CHECK_THROWS_AS(D::from({2, 3}, {1.0, 2.0}), Error);
    D t = D::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK_THROWS_AS((void)t.item(), Error);
    CHECK(D::full({1}, 4.0).item() == 4.0);
}

TEST_CASE("matmul matches a hand-computed product and generalizes to rank 3") {
    D a = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    D b = leaf({3, 2}, {7, 8, 9, 10, 11, 12});
    D c = ops::matmul(a, b);
    CHECK(c.dims() == Shape{2, 2});
    CHECK(c.data()[0] == doctest::Approx(58));
    CHECK(c.data()[1] == doctest::Approx(64));
    CHECK(c.data()[2] == doctest::Approx(139));
    CHECK(c.data()[3] == doctest::Approx(154));

    // A (1,2,3) input flattens its leading axes into rows.
    D a3 = leaf({1, 2, 3}, {1, 2, 3, 4, 5, 6});
    D c3 = ops::matmul(a3, b);
    CHECK(c3.dims() == Shape{1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(c3.data()[i] == doctest::Approx(c.data()[i]));

    CHECK_THROWS_AS(ops::matmul(a, leaf({2, 2}, {1, 2, 3, 4})), Error);
}

TEST_CASE("matmul gradients check against finite differences") {
    rng::Stream s(rng::Key(11).child("matmul").value());
    D x = D::randn({3, 4}, s);
    D w = D::randn({4, 2}, s);
    auto res = check_gradients({x, w}, [&] { return ops::sum_all(ops::matmul(x, w)); });
    CHECK_MESSAGE(bool(res), res.detail);

    D x3 = D::randn({2, 3, 4}, s);
    auto res3 =
        check_gradients({x3, w}, [&] { return ops::mean_all(ops::matmul(x3, w)); });
    CHECK_MESSAGE(bool(res3), res3.detail);
}

TEST_CASE("elementwise and broadcast ops backpropagate correctly") {
    rng::Stream s(rng::Key(12).child("ew").value());
    D a = D::randn({2, 3}, s);
    D b = D::randn({2, 3}, s);

    auto r1 = check_gradients({a, b}, [&] { return ops::sum_all(ops::mul(ops::add(a, b), b)); });
    CHECK_MESSAGE(bool(r1), r1.detail);

    auto r2 = check_gradients({a}, [&] { return ops::sum_all(ops::affine(a, 2.5, -1.0)); });
    CHECK_MESSAGE(bool(r2), r2.detail);

    D bias = D::randn({3}, s);
    auto r3 = check_gradients(
        {a, bias}, [&] { return ops::sum_all(ops::mul(ops::add_bias(a, bias), a)); });
    CHECK_MESSAGE(bool(r3), r3.detail);

    D x3 = D::randn({2, 3, 4}, s);
    D tab = D::randn({3, 4}, s);
    auto r4 = check_gradients(
        {x3, tab}, [&] { return ops::mean_all(ops::mul(ops::add_broadcast_batch(x3, tab), x3)); });
    CHECK_MESSAGE(bool(r4), r4.detail);

    D e = D::randn({2, 4}, s);
    auto r5 = check_gradients(
        {x3, e}, [&] { return ops::mean_all(ops::mul(ops::add_broadcast_tokens(x3, e), x3)); });
    CHECK_MESSAGE(bool(r5), r5.detail);
}

TEST_CASE("activations: forward values and gradients") {
    D x = leaf({5}, {-2.0, -0.5, 0.4, 1.5, 3.0});
    D y = ops::relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[2] == doctest::Approx(0.4));

    auto r1 = check_gradients({x}, [&] { return ops::sum_all(ops::mul(ops::relu(x), x)); });
    CHECK_MESSAGE(bool(r1), r1.detail);
    auto r2 = check_gradients({x}, [&] { return ops::sum_all(ops::sigmoid(x)); });
    CHECK_MESSAGE(bool(r2), r2.detail);
    auto r3 = check_gradients({x}, [&] { return ops::sum_all(ops::tanh_op(x)); });
    CHECK_MESSAGE(bool(r3), r3.detail);

    CHECK(ops::sigmoid(leaf({1}, {0.0})).item() == doctest::Approx(0.5));
    CHECK(ops::tanh_op(leaf({1}, {0.0})).item() == doctest::Approx(0.0));
}

TEST_CASE("layer_norm matches a hand-computed row and passes gradcheck") {
    D x = leaf({1, 4}, {1, 2, 3, 4});
    D g = leaf({4}, {2, 1, 0.5, 1});
    D b = leaf({4}, {0.1, -0.2, 0, 0.3});
    D y = ops::layer_norm(x, g, b);
    CHECK(y.data()[0] == doctest::Approx(-2.5832708399378537).epsilon(1e-10));
    CHECK(y.data()[1] == doctest::Approx(-0.64721180665630906).epsilon(1e-10));
    CHECK(y.data()[2] == doctest::Approx(0.2236059033281545).epsilon(1e-10));
    CHECK(y.data()[3] == doctest::Approx(1.6416354199689269).epsilon(1e-10));

    rng::Stream s(rng::Key(13).child("ln").value());
    D x2 = D::randn({3, 6}, s);
    D g2 = D::randn({6}, s);
    D b2 = D::randn({6}, s);
    auto res = check_gradients(
        {x2, g2, b2}, [&] { return ops::mean_all(ops::mul(ops::layer_norm(x2, g2, b2), x2)); });
    CHECK_MESSAGE(bool(res), res.detail);
}

TEST_CASE("softmax_last normalizes rows and backpropagates") {
    rng::Stream s(rng::Key(14).child("sm").value());
    D x = D::randn({4, 5}, s);
    D y = ops::softmax_last(x);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int j = 0; j < 5; ++j) sum += y.data()[r * 5 + j];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    D w = D::randn({4, 5}, s);
    auto res = check_gradients(
        {x}, [&] { return ops::sum_all(ops::mul(ops::softmax_last(x), w)); });
    CHECK_MESSAGE(bool(res), res.detail);
}

TEST_CASE("attention matches hand-computed single- and two-head outputs") {
    D q = leaf({2, 2}, {1.0, 0.5, -0.3, 0.8});
    D k = leaf({2, 2}, {0.2, -0.1, 0.7, 0.4});
    D v = leaf({2, 2}, {1.0, 2.0, 3.0, 4.0});
    D o = ops::attention(q, k, v, 1);
    CHECK(o.data()[0] == doctest::Approx(2.2591201919392829).epsilon(1e-12));
    CHECK(o.data()[1] == doctest::Approx(3.2591201919392829).epsilon(1e-12));
    CHECK(o.data()[2] == doctest::Approx(2.088158886698452).epsilon(1e-12));
    CHECK(o.data()[3] == doctest::Approx(3.088158886698452).epsilon(1e-12));

    D q4 = leaf({2, 4}, {1.0, 0.5, -0.2, 0.3, -0.3, 0.8, 0.6, -0.5});
    D k4 = leaf({2, 4}, {0.2, -0.1, 0.9, 0.1, 0.7, 0.4, -0.4, 0.2});
    D v4 = leaf({2, 4}, {1.0, 2.0, -1.0, 0.5, 3.0, 4.0, 2.0, -2.0});
    D o4 = ops::attention(q4, k4, v4, 2);
    const double expect[8] = {2.2591201919392829,    3.2591201919392829, 0.65325905563674502,
                              -0.87771587969728748,  2.088158886698452,  3.088158886698452,
                              0.072040306799834863,  -0.3933669223331957};
    for (int i = 0; i < 8; ++i) CHECK(o4.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    CHECK_THROWS_AS(ops::attention(q4, k4, v4, 3), Error);
}

TEST_CASE("batched attention equals per-sample attention") {
    rng::Stream s(rng::Key(15).child("attn").value());
    D x0 = D::randn({3, 8}, s);
    D x1 = D::randn({3, 8}, s);
    std::vector<double> stacked(x0.values());
    stacked.insert(stacked.end(), x1.values().begin(), x1.values().end());
    D xb = D::from({2, 3, 8}, stacked);

    D ob = ops::attention(xb, xb, xb, 2);
    D o0 = ops::attention(x0, x0, x0, 2);
    D o1 = ops::attention(x1, x1, x1, 2);
    for (int i = 0; i < 24; ++i) {
        CHECK(ob.data()[i] == doctest::Approx(o0.data()[i]).epsilon(1e-14));
        CHECK(ob.data()[24 + i] == doctest::Approx(o1.data()[i]).epsilon(1e-14));
    }
}

TEST_CASE("attention gradients: separate inputs and shared self-attention input") {
    rng::Stream s(rng::Key(16).child("attng").value());
    D q = D::randn({3, 4}, s);
    D k = D::randn({3, 4}, s);
    D v = D::randn({3, 4}, s);
    auto r1 = check_gradients(
        {q, k, v}, [&] { return ops::mean_all(ops::attention(q, k, v, 2)); });
    CHECK_MESSAGE(bool(r1), r1.detail);

    D x = D::randn({2, 3, 4}, s);
    D w = D::randn({2, 3, 4}, s);
    auto r2 = check_gradients(
        {x}, [&] { return ops::sum_all(ops::mul(ops::attention(x, x, x, 2), w)); });
    CHECK_MESSAGE(bool(r2), r2.detail);
}

TEST_CASE("dropout: identity when inactive, rescaled mask when active") {
    rng::Stream data_s(rng::Key(17).child("drop").value());
    D x = D::randn({10, 10}, data_s);

    rng::Stream s1(99);
    D y_eval = ops::dropout(x, 0.5, s1, /*training=*/false);
    for (int i = 0; i < 100; ++i) CHECK(y_eval.data()[i] == x.data()[i]);

    rng::Stream s2(99), s3(99);
    D y1 = ops::dropout(x, 0.4, s2, true);
    D y2 = ops::dropout(x, 0.4, s3, true);
    int zeros = 0;
    for (int i = 0; i < 100; ++i) {
        CHECK(y1.data()[i] == y2.data()[i]); // same stream key => same mask
        if (y1.data()[i] == 0.0)
            ++zeros;
        else
            CHECK(y1.data()[i] == doctest::Approx(x.data()[i] / 0.6));
    }
    CHECK(zeros > 15);
    CHECK(zeros < 70);

    auto res = check_gradients({x}, [&] {
        rng::Stream s(4242);
        return ops::mean_all(ops::dropout(x, 0.3, s, true));
    });
    CHECK_MESSAGE(bool(res), res.detail);

    rng::Stream s4(1);
    CHECK_THROWS_AS(ops::dropout(x, 1.0, s4, true), Error);
}

TEST_CASE("concat_last and slice_last are inverse-ish and route gradients") {
    D a = leaf({2, 2}, {1, 2, 3, 4});
    D b = leaf({2, 3}, {5, 6, 7, 8, 9, 10});
    D c = ops::concat_last<double>({a, b});
    CHECK(c.dims() == Shape{2, 5});
    const double expect[10] = {1, 2, 5, 6, 7, 3, 4, 8, 9, 10};
    for (int i = 0; i < 10; ++i) CHECK(c.data()[i] == expect[i]);

    D back = ops::slice_last(c, 2, 3);
    for (int i = 0; i < 6; ++i) CHECK(back.data()[i] == b.data()[i]);

    rng::Stream s(rng::Key(18).child("cat").value());
    D w = D::randn({2, 5}, s);
    auto r1 = check_gradients({a, b}, [&] {
        return ops::sum_all(ops::mul(ops::concat_last<double>({a, b}), w));
    });
    CHECK_MESSAGE(bool(r1), r1.detail);
    auto r2 = check_gradients(
        {a}, [&] { return ops::mean_all(ops::slice_last(a, 1, 1)); });
    CHECK_MESSAGE(bool(r2), r2.detail);
    CHECK_THROWS_AS(ops::slice_last(a, 1, 4), Error);
}

TEST_CASE("stack_tokens interleaves rows and routes gradients per part") {
    D a = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    D b = leaf({2, 3}, {10, 20, 30, 40, 50, 60});
    D y = ops::stack_tokens<double>({a, b});
    CHECK(y.dims() == Shape{2, 2, 3});
    const double expect[12] = {1, 2, 3, 10, 20, 30, 4, 5, 6, 40, 50, 60};
    for (int i = 0; i < 12; ++i) CHECK(y.data()[i] == expect[i]);

    rng::Stream s(rng::Key(18).child("stk").value());
    D w = D::randn({2, 2, 3}, s);
    auto res = check_gradients({a, b}, [&] {
        return ops::sum_all(ops::mul(ops::stack_tokens<double>({a, b}), w));
    });
    CHECK_MESSAGE(bool(res), res.detail);

    CHECK_THROWS_AS(ops::stack_tokens<double>({}), Error);
    D bad = leaf({3, 3}, {0, 0, 0, 0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(ops::stack_tokens<double>({a, bad}), Error);
}

TEST_CASE("temporal_max pools over valid steps only") {
    // batch=2, h=2; three steps. Sample 0 has length 2: step 2 must be ignored.
    D s0 = leaf({2, 2}, {1.0, -1.0, 0.2, 0.9});
    D s1 = leaf({2, 2}, {0.5, 2.0, -0.4, 0.1});
    D s2 = leaf({2, 2}, {9.0, 9.0, 9.0, -5.0});
    std::vector<int64_t> lens = {2, 3};
    D y = ops::temporal_max<double>({s0, s1, s2}, lens);
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 2.0);
    CHECK(y.data()[2] == 9.0);
    CHECK(y.data()[3] == 0.9);

    auto res = check_gradients({s0, s1, s2}, [&] {
        return ops::sum_all(ops::temporal_max<double>({s0, s1, s2}, lens));
    });
    CHECK_MESSAGE(bool(res), res.detail);

    CHECK_THROWS_AS(ops::temporal_max<double>({s0, s1}, {0, 2}), Error);
    CHECK_THROWS_AS(ops::temporal_max<double>({s0, s1}, {3, 2}), Error);
}

TEST_CASE("rows_max_pool respects per-sample valid window counts") {
    // (2, 3, 2): sample 0 valid rows 2 (row 2 holds large decoys).
    D x = leaf({2, 3, 2}, {1, 5, 3, 2, 99, 99, -1, -2, -3, 7, 0.5, -9});
    D y = ops::rows_max_pool(x, {2, 3});
    CHECK(y.data()[0] == 3.0);
    CHECK(y.data()[1] == 5.0);
    CHECK(y.data()[2] == 0.5);
    CHECK(y.data()[3] == 7.0);

    auto res = check_gradients(
        {x}, [&] { return ops::sum_all(ops::rows_max_pool(x, {2, 3})); });
    CHECK_MESSAGE(bool(res), res.detail);
    CHECK_THROWS_AS(ops::rows_max_pool(x, {2}), Error);
    CHECK_THROWS_AS(ops::rows_max_pool(x, {2, 4}), Error);
}

TEST_CASE("reductions and losses") {
    rng::Stream s(rng::Key(19).child("red").value());
    D x = D::randn({2, 3, 4}, s);
    auto r1 = check_gradients({x}, [&] { return ops::sum_all(ops::mean_tokens(x)); });
    CHECK_MESSAGE(bool(r1), r1.detail);

    D p = D::randn({3, 3}, s);
    D t = D::randn({3, 3}, s);
    D l = ops::mse_loss(p, t);
    double manual = 0;
    for (int i = 0; i < 9; ++i) {
        double e = p.data()[i] - t.data()[i];
        manual += e * e;
    }
    CHECK(l.item() == doctest::Approx(manual / 9.0).epsilon(1e-12));
    auto r2 = check_gradients({p, t}, [&] { return ops::mse_loss(p, t); });
    CHECK_MESSAGE(bool(r2), r2.detail);
}

TEST_CASE("softmax cross entropy matches hand-computed loss and gradients") {
    D logits = leaf({2, 3}, {1.0, 2.0, 0.5, 0.1, -0.3, 0.2});
    std::vector<int64_t> labels = {2, 0};
    D loss = ops::softmax_cross_entropy(logits, labels);
    CHECK(loss.item() == doctest::Approx(1.4925982198306023).epsilon(1e-12));

    auto res = check_gradients(
        {logits}, [&] { return ops::softmax_cross_entropy(logits, labels); });
    CHECK_MESSAGE(bool(res), res.detail);

    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, {2}), Error);
    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, {2, 3}), Error);
}

TEST_CASE("sinusoidal table matches the closed form") {
    D t = ops::sinusoidal_table<double>(5, 6);
    CHECK(t.dims() == Shape{5, 6});
    const double expect[6] = {0.14112000805986721, -0.98999249660044542, 0.13879810108005047,
                              0.990320699135675,   0.0064632590701896395, 0.99997911292296082};
    for (int j = 0; j < 6; ++j) CHECK(t.data()[3 * 6 + j] == doctest::Approx(expect[j]).epsilon(1e-12));
    CHECK(t.data()[0] == 0.0); // sin(0)
    CHECK(t.data()[1] == 1.0); // cos(0)
    CHECK_THROWS_AS(ops::sinusoidal_table<double>(4, 5), Error);
}

TEST_CASE("gather_rows and unfold_windows are leaf-only data prep") {
    D table = leaf({3, 2}, {0, 1, 10, 11, 20, 21});
    D g = ops::gather_rows(table, {2, 0, 2});
    CHECK(g.dims() == Shape{3, 2});
    CHECK(g.data()[0] == 20);
    CHECK(g.data()[3] == 1);
    CHECK(g.data()[4] == 20);
    CHECK_THROWS_AS(ops::gather_rows(table, {3}), Error);
    D tg = leaf({2, 2}, {1, 2, 3, 4});
    tg.set_requires_grad(true);
    CHECK_THROWS_AS(ops::gather_rows(tg, {0}), Error);

    // (1, 4, 2) with window 3 -> (1, 2, 6), windows overlap by stride 1.
    D x = leaf({1, 4, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    D u = ops::unfold_windows(x, 3);
    CHECK(u.dims() == Shape{1, 2, 6});
    const double w0[6] = {0, 1, 2, 3, 4, 5};
    const double w1[6] = {2, 3, 4, 5, 6, 7};
    for (int j = 0; j < 6; ++j) {
        CHECK(u.data()[j] == w0[j]);
        CHECK(u.data()[6 + j] == w1[j]);
    }
    CHECK_THROWS_AS(ops::unfold_windows(x, 5), Error);
}

TEST_CASE("autograd mechanics: stale graphs, accumulation, no-grad mode") {
    D x = leaf({1}, {3.0});
    x.set_requires_grad(true);

    D y = ops::mul(x, x); // x^2
    D z = ops::add(y, x); // x^2 + x
    D loss = ops::sum_all(z);
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(7.0)); // 2x + 1 at x=3

    CHECK_THROWS_AS(loss.backward(), Error);               // stale root
    CHECK_THROWS_AS(ops::sum_all(y).backward(), Error);    // consumed subgraph

    // Gradients accumulate across independent graphs until zeroed.
    D l2 = ops::sum_all(ops::mul(x, x));
    l2.backward();
    CHECK(x.grad()[0] == doctest::Approx(13.0)); // 7 + 6
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);

    {
        autograd::NoGradGuard ng;
        D q = ops::mul(x, x);
        CHECK_FALSE(q.requires_grad());
        D ql = ops::sum_all(q);
        ql.backward(); // constant loss: a no-op, not an error
        CHECK_FALSE(ql.requires_grad());
    }

    // backward requires a scalar.
    D v = leaf({2}, {1.0, 2.0});
    v.set_requires_grad(true);
    D w = ops::mul(v, v);
    CHECK_THROWS_AS(w.backward(), Error);
}

TEST_CASE("debug mode flags non-finite op outputs") {
    const bool saved = autograd::debug_checks();
    autograd::debug_checks() = true;
    D a = leaf({1, 1}, {1e200});
    D b = leaf({1, 1}, {1e200});
    a.set_requires_grad(true);
    CHECK_THROWS_AS(ops::matmul(a, b), Error);
    autograd::debug_checks() = saved;
}

TEST_CASE("float instantiation agrees with double to float precision") {
    using F = Tensor<float>;
    F a = F::from({2, 3}, {1, 2, 3, 4, 5, 6});
    F b = F::from({3, 2}, {7, 8, 9, 10, 11, 12});
    a.set_requires_grad(true);
    F c = ops::matmul(a, b);
    CHECK(c.data()[0] == doctest::Approx(58.0f));
    F l = ops::sum_all(c);
    l.backward();
    CHECK(a.grad()[0] == doctest::Approx(15.0f)); // 7 + 8
    CHECK(a.grad()[2] == doctest::Approx(23.0f)); // 11 + 12
}
