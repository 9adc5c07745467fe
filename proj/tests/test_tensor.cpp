#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "scformer/gradcheck.hpp"
#include "scformer/ops.hpp"
#include "scformer/random.hpp"
#include "scformer/tensor.hpp"

using namespace scformer;
using test_helpers::all_close;
using test_helpers::random_matrix;
using test_helpers::random_vector;

TEST_CASE("tensor factories validate shapes") {
    auto t = Tensor<double>::zeros({2, 3});
    REQUIRE(t.numel() == 6);
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 3);
    REQUIRE_FALSE(t.requires_grad());

    REQUIRE_THROWS_AS(Tensor<double>::from_data({2, 2}, {1.0, 2.0, 3.0}), ScfError);
    REQUIRE_THROWS_AS(Tensor<double>::from_data({2}, {1.0, std::nan("")}), ScfError);

    auto s = Tensor<double>::scalar(4.5);
    REQUIRE(s.item() == 4.5);
    REQUIRE_THROWS_AS(t.item(), ScfError);
}

TEST_CASE("matmul matches hand computation") {
    auto a = Tensor<double>::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::matrix(3, 2, {7, 8, 9, 10, 11, 12});
    auto c = matmul(a, b);
    REQUIRE(c.value() == std::vector<double>{58, 64, 139, 154});

    auto bad = Tensor<double>::matrix(2, 2, {1, 2, 3, 4});
    REQUIRE_THROWS_AS(matmul(a, bad), ScfError);
}

TEST_CASE("matmul_nt equals matmul against the transpose") {
    Rng rng(11);
    auto a = random_matrix(4, 6, rng, false);
    auto b = random_matrix(5, 6, rng, false);
    auto direct = matmul_nt(a, b);
    auto ref = matmul(a, transpose(b));
    REQUIRE(all_close(direct.value(), ref.value(), 1e-14));
}

TEST_CASE("elementwise ops and broadcasting") {
    auto a = Tensor<double>::matrix(2, 2, {1, -2, 3, -4});
    auto b = Tensor<double>::matrix(2, 2, {10, 20, 30, 40});
    REQUIRE(add(a, b).value() == std::vector<double>{11, 18, 33, 36});
    REQUIRE(sub(b, a).value() == std::vector<double>{9, 22, 27, 44});
    REQUIRE(mul(a, b).value() == std::vector<double>{10, -40, 90, -160});
    REQUIRE(scale(a, -1.0).value() == std::vector<double>{-1, 2, -3, 4});

    auto bias = Tensor<double>::vector({100, 200});
    REQUIRE(add_rows(a, bias).value() == std::vector<double>{101, 198, 103, 196});
    auto long_bias = Tensor<double>::vector({1, 2, 3});
    REQUIRE_THROWS_AS(add_rows(a, long_bias), ScfError);

    auto aff = affine_cols(a, {2.0, 3.0}, {1.0, -1.0});
    REQUIRE(aff.value() == std::vector<double>{3, -7, 7, -13});
}

TEST_CASE("relu clamps negatives and passes positives") {
    auto a = Tensor<double>::vector({-2, -0.5, 0, 0.5, 2}, true);
    auto r = relu(a);
    REQUIRE(r.value() == std::vector<double>{0, 0, 0, 0.5, 2});

    auto loss = sum_all(r);
    backward(loss);
    // subgradient at exactly zero is zero
    REQUIRE(a.grad() == std::vector<double>{0, 0, 0, 1, 1});
}

TEST_CASE("softmax rows are stable probability vectors") {
    auto a = Tensor<double>::matrix(2, 2, {0.0, std::log(2.0), 1000.0, 1000.0});
    auto s = softmax_rows(a);
    REQUIRE(std::abs(s.at(0, 0) - 1.0 / 3.0) < 1e-14);
    REQUIRE(std::abs(s.at(0, 1) - 2.0 / 3.0) < 1e-14);
    // large but equal logits must not overflow
    REQUIRE(std::abs(s.at(1, 0) - 0.5) < 1e-14);
    REQUIRE(std::abs(s.at(1, 1) - 0.5) < 1e-14);

    Rng rng(3);
    auto big = random_matrix(5, 7, rng, false);
    auto probs = softmax_rows(big);
    for (std::size_t i = 0; i < 5; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 7; ++j) row += probs.at(i, j);
        REQUIRE(std::abs(row - 1.0) < 1e-12);
    }
}

TEST_CASE("concat and slice are inverses") {
    auto a = Tensor<double>::matrix(2, 2, {1, 2, 5, 6});
    auto b = Tensor<double>::matrix(2, 3, {3, 4, 9, 7, 8, 10});
    auto cat = concat_cols<double>({a, b});
    REQUIRE(cat.shape() == Shape{2, 5});
    REQUIRE(cat.value() == std::vector<double>{1, 2, 3, 4, 9, 5, 6, 7, 8, 10});

    auto left = slice_cols(cat, 0, 2);
    auto right = slice_cols(cat, 2, 5);
    REQUIRE(left.value() == a.value());
    REQUIRE(right.value() == b.value());
    REQUIRE_THROWS_AS(slice_cols(cat, 3, 3), ScfError);
    REQUIRE_THROWS_AS(slice_cols(cat, 0, 6), ScfError);
}

TEST_CASE("conv1d_rows reads forward along the row and truncates") {
    auto z = Tensor<double>::matrix(1, 4, {1, 2, 3, 4});
    auto w = Tensor<double>::vector({1, 1});
    auto out = conv1d_rows(z, w);
    REQUIRE(out.value() == std::vector<double>{3, 5, 7, 4});

    // kernel longer than the row still works, everything truncated
    auto wlong = Tensor<double>::vector({1, 1, 1, 1, 1, 1});
    auto out2 = conv1d_rows(z, wlong);
    REQUIRE(out2.value() == std::vector<double>{10, 9, 7, 4});
}

TEST_CASE("reductions") {
    auto a = Tensor<double>::matrix(2, 2, {1, 2, 3, 4});
    REQUIRE(sum_all(a).item() == 10.0);
    REQUIRE(mean_all(a).item() == 2.5);
}

TEST_CASE("layernorm_rows standardizes each row") {
    auto a = Tensor<double>::matrix(2, 4, {1, 2, 3, 4, -5, -5, -5, -5});
    auto y = layernorm_rows(a, 1e-5);
    for (std::size_t i = 0; i < 2; ++i) {
        double mean = 0;
        for (std::size_t j = 0; j < 4; ++j) mean += y.at(i, j);
        REQUIRE(std::abs(mean) < 1e-12);
    }
    double var = 0;
    for (std::size_t j = 0; j < 4; ++j) var += y.at(0, j) * y.at(0, j);
    REQUIRE(std::abs(var / 4.0 - 1.0) < 1e-4);
    // constant row collapses to zeros instead of dividing by zero
    for (std::size_t j = 0; j < 4; ++j) REQUIRE(y.at(1, j) == 0.0);
}

TEST_CASE("non-finite results are rejected at the op boundary") {
    auto huge = Tensor<double>::scalar(1e308);
    bool threw = false;
    try {
        scale(huge, 1e10);
    } catch (const ScfError& e) {
        threw = true;
        REQUIRE(e.code() == std::string(errc::non_finite));
    }
    REQUIRE(threw);
}

TEST_CASE("backward on simple chains") {
    auto x = Tensor<double>::vector({1, 2, 3}, true);
    auto loss = sum_all(mul(x, x));
    backward(loss);
    REQUIRE(x.grad() == std::vector<double>{2, 4, 6});

    // accumulation across backward calls without zero_grad
    backward(sum_all(mul(x, x)));
    REQUIRE(x.grad() == std::vector<double>{4, 8, 12});

    x.zero_grad();
    REQUIRE(x.grad() == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward handles shared subexpressions") {
    auto a = Tensor<double>::scalar(3.0, true);
    auto b = Tensor<double>::scalar(4.0, true);
    auto prod = mul(a, b);
    auto loss = sum_all(add(prod, add(prod, a)));
    // loss = 2ab + a
    backward(loss);
    REQUIRE(a.grad()[0] == 2 * 4.0 + 1.0);
    REQUIRE(b.grad()[0] == 2 * 3.0);
}

TEST_CASE("backward rejects bad losses") {
    auto mat = Tensor<double>::matrix(2, 2, {1, 2, 3, 4}, true);
    REQUIRE_THROWS_AS(backward(mat), ScfError);

    auto detached = sum_all(Tensor<double>::vector({1, 2}));
    bool threw = false;
    try {
        backward(detached);
    } catch (const ScfError& e) {
        threw = true;
        REQUIRE(e.code() == std::string(errc::autograd_invalid));
    }
    REQUIRE(threw);
}

TEST_CASE("constants stay off the tape") {
    auto c1 = Tensor<double>::matrix(2, 2, {1, 2, 3, 4});
    auto c2 = Tensor<double>::matrix(2, 2, {5, 6, 7, 8});
    auto out = matmul(c1, c2);
    REQUIRE_FALSE(out.requires_grad());
    REQUIRE(out.node()->parents.empty());

    auto p = Tensor<double>::matrix(2, 2, {1, 1, 1, 1}, true);
    auto mixed = matmul(p, c2);
    REQUIRE(mixed.requires_grad());
    backward(mean_all(mixed));
    // constant input collected no gradient
    REQUIRE(c2.node()->grad.empty());
}

TEST_CASE("forward passes are deterministic") {
    Rng r1(42), r2(42);
    auto a1 = random_matrix(6, 6, r1, false);
    auto a2 = random_matrix(6, 6, r2, false);
    REQUIRE(a1.value() == a2.value());
    auto y1 = softmax_rows(matmul(a1, a1));
    auto y2 = softmax_rows(matmul(a2, a2));
    REQUIRE(y1.value() == y2.value());
}

TEST_CASE("rng is seed-deterministic and shuffles in range") {
    Rng a(7), b(7), c(8);
    std::vector<double> va, vb, vc;
    for (int i = 0; i < 16; ++i) {
        va.push_back(a.uniform01());
        vb.push_back(b.uniform01());
        vc.push_back(c.uniform01());
    }
    REQUIRE(va == vb);
    REQUIRE(va != vc);
    for (double v : va) {
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
    }

    std::vector<int> perm{0, 1, 2, 3, 4, 5, 6, 7};
    Rng s1(5), s2(5);
    auto p1 = perm, p2 = perm;
    s1.shuffle(p1);
    s2.shuffle(p2);
    REQUIRE(p1 == p2);
    std::sort(p1.begin(), p1.end());
    REQUIRE(p1 == perm);
}

namespace {

// Fixed probe keeps output gradients non-uniform so transposed index bugs
// cannot cancel out.
Tensor<double> probe_loss(const Tensor<double>& out, Rng& rng) {
    std::vector<double> w(out.numel());
    for (auto& v : w) v = rng.uniform(0.5, 1.5) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
    auto probe = Tensor<double>::from_data(out.shape(), std::move(w));
    return sum_all(mul(out, probe));
}

}  // namespace

TEST_CASE("every primitive passes finite-difference gradcheck") {
    const double tol = 1e-4;

    SECTION("matmul") {
        Rng rng(101);
        auto a = random_matrix(3, 4, rng);
        auto b = random_matrix(4, 5, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(1);
                return probe_loss(matmul(a, b), pr);
            },
            {{"a", a}, {"b", b}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("matmul_nt") {
        Rng rng(102);
        auto a = random_matrix(3, 4, rng);
        auto b = random_matrix(5, 4, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(2);
                return probe_loss(matmul_nt(a, b), pr);
            },
            {{"a", a}, {"b", b}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("transpose") {
        Rng rng(103);
        auto a = random_matrix(3, 5, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(3);
                return probe_loss(transpose(a), pr);
            },
            {{"a", a}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("add sub mul scale") {
        Rng rng(104);
        auto a = random_matrix(3, 3, rng);
        auto b = random_matrix(3, 3, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(4);
                auto mix = add(mul(a, b), scale(sub(a, b), 0.7));
                return probe_loss(mix, pr);
            },
            {{"a", a}, {"b", b}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("add_rows") {
        Rng rng(105);
        auto a = random_matrix(4, 3, rng);
        auto bias = random_vector(3, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(5);
                return probe_loss(add_rows(a, bias), pr);
            },
            {{"a", a}, {"bias", bias}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("affine_cols") {
        Rng rng(106);
        auto a = random_matrix(4, 3, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(6);
                return probe_loss(affine_cols(a, {1.5, -0.5, 2.0}, {0.1, 0.2, -0.3}), pr);
            },
            {{"a", a}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("relu") {
        Rng rng(107);
        auto a = random_matrix(4, 4, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(7);
                return probe_loss(relu(a), pr);
            },
            {{"a", a}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("softmax_rows") {
        Rng rng(108);
        auto a = random_matrix(3, 5, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(8);
                return probe_loss(softmax_rows(a), pr);
            },
            {{"a", a}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("concat and slice") {
        Rng rng(109);
        auto a = random_matrix(3, 2, rng);
        auto b = random_matrix(3, 4, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(9);
                auto cat = concat_cols<double>({a, b});
                return probe_loss(slice_cols(cat, 1, 5), pr);
            },
            {{"a", a}, {"b", b}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("conv1d_rows") {
        Rng rng(110);
        auto a = random_matrix(3, 8, rng);
        auto w = random_vector(3, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(10);
                return probe_loss(conv1d_rows(a, w), pr);
            },
            {{"a", a}, {"w", w}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("reductions") {
        Rng rng(111);
        auto a = random_matrix(3, 3, rng);
        auto rep = gradcheck([&] { return add(sum_all(mul(a, a)), mean_all(a)); },
                             {{"a", a}});
        REQUIRE(rep.max_rel_err < tol);
    }

    SECTION("layernorm_rows") {
        Rng rng(112);
        auto a = random_matrix(3, 6, rng);
        auto rep = gradcheck(
            [&] {
                Rng pr(12);
                return probe_loss(layernorm_rows(a, 1e-5), pr);
            },
            {{"a", a}});
        REQUIRE(rep.max_rel_err < tol);
    }
}

TEST_CASE("gradcheck flags cancellation instead of failing") {
    auto used = Tensor<double>::vector({1.0, 2.0}, true);
    auto unused = Tensor<double>::vector({3.0, 4.0}, true);
    auto rep = gradcheck([&] { return sum_all(mul(used, used)); },
                         {{"used", used}, {"unused", unused}});
    REQUIRE(rep.max_rel_err < 1e-4);
    REQUIRE(rep.coords_flagged == 2);
    REQUIRE(rep.coords_checked == 2);
    REQUIRE(rep.worst.param == "used");
}
