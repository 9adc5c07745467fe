#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "scformer/structured.hpp"

using namespace scformer;
using test_helpers::max_abs_diff;

namespace {

std::vector<double> matvec(const std::vector<double>& m, const std::vector<double>& x,
                           std::size_t d) {
    std::vector<double> y(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) y[i] += m[i * d + j] * x[j];
    return y;
}

}  // namespace

TEST_CASE("apply_masked hand examples") {
    MaskedLinear<double> layer;
    layer.dim = 2;
    layer.weight = Tensor<double>::matrix(2, 2, {1, 1, 0, 1}, true);
    layer.bias = Tensor<double>::zeros({2}, true);

    auto z = Tensor<double>::matrix(1, 2, {2, 3});
    auto out = apply_masked(layer, z);
    REQUIRE(out.value() == std::vector<double>{5, 3});

    MaskedLinear<double> ident;
    ident.dim = 3;
    ident.weight = Tensor<double>::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, true);
    ident.bias = Tensor<double>::zeros({3}, true);
    auto z3 = Tensor<double>::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    REQUIRE(apply_masked(ident, z3).value() == z3.value());

    auto zn = Tensor<double>::matrix(1, 3, {9, 9, 9});
    REQUIRE_THROWS_AS(apply_masked(layer, zn), ScfError);
}

TEST_CASE("masked output position i never reads positions below i") {
    Rng rng(41);
    const std::size_t d = 12;
    auto layer = make_masked_linear<double>(d, rng);
    auto z = test_helpers::random_matrix(3, d, rng, false);
    auto base = apply_masked(layer, z);

    for (std::size_t j = 0; j < d; ++j) {
        auto zp = z.clone();
        zp.at(1, j) += 0.37;
        auto out = apply_masked(layer, zp);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < d; ++i) {
                if (c == 1 && i <= j) continue;
                REQUIRE(out.at(c, i) == base.at(c, i));
            }
    }
}

TEST_CASE("masked init freezes the lower triangle and scales per-row fan-in") {
    Rng rng(43);
    const std::size_t d = 10;
    auto layer = make_masked_linear<double>(d, rng);
    for (std::size_t i = 0; i < d; ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d - i));
        for (std::size_t j = 0; j < d; ++j) {
            if (j < i) {
                REQUIRE(layer.weight.at(i, j) == 0.0);
            } else {
                REQUIRE(std::abs(layer.weight.at(i, j)) <= bound);
            }
        }
    }
    for (std::size_t j = 0; j < d; ++j) REQUIRE(layer.bias.at(j) == 0.0);
    REQUIRE(free_weight_count(layer) == d * (d + 1) / 2);

    Rng r1(5), r2(5);
    auto a = make_masked_linear<double>(6, r1);
    auto b = make_masked_linear<double>(6, r2);
    REQUIRE(a.weight.value() == b.weight.value());

    Rng r3(6);
    auto dense = make_masked_linear<double>(6, r3, false);
    REQUIRE(free_weight_count(dense) == 36);
    std::size_t nonzero_lower = 0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (dense.weight.at(i, j) != 0.0) ++nonzero_lower;
    REQUIRE(nonzero_lower > 0);
}

TEST_CASE("mask enforcement zeroes weights and gradients") {
    Rng rng(47);
    auto layer = make_masked_linear<double>(5, rng);
    layer.weight.at(3, 1) = 7.0;
    layer.weight.at(4, 0) = -2.0;
    mask_weights_inplace(layer);
    REQUIRE(layer.weight.at(3, 1) == 0.0);
    REQUIRE(layer.weight.at(4, 0) == 0.0);

    auto z = test_helpers::random_matrix(2, 5, rng, false);
    backward(mean_all(apply_masked(layer, z)));
    bool lower_grad_nonzero = false;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (layer.weight.grad()[i * 5 + j] != 0.0) lower_grad_nonzero = true;
    REQUIRE(lower_grad_nonzero);
    mask_weight_grad_inplace(layer);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < i; ++j) REQUIRE(layer.weight.grad()[i * 5 + j] == 0.0);
}

TEST_CASE("toeplitz_from_kernel matches the display") {
    auto m = toeplitz_from_kernel({1, 1}, 4);
    REQUIRE(m == std::vector<double>{1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1});

    auto mw = toeplitz_from_kernel({2.5}, 3);
    REQUIRE(mw == std::vector<double>{2.5, 0, 0, 0, 2.5, 0, 0, 0, 2.5});

    REQUIRE(matvec(m, {1, 2, 3, 4}, 4) == std::vector<double>{3, 5, 7, 4});

    REQUIRE_THROWS_AS(toeplitz_from_kernel({1, 1, 1}, 2), ScfError);
    REQUIRE_THROWS_AS(toeplitz_from_kernel({}, 2), ScfError);
}

TEST_CASE("apply_conv_stack examples") {
    ConvKernelStack<double> stack;
    stack.dim = 4;
    stack.kernels.push_back(Tensor<double>::vector({1, 1}, true));
    stack.bias = Tensor<double>::zeros({4}, true);

    auto z = Tensor<double>::matrix(1, 4, {1, 2, 3, 4});
    REQUIRE(apply_conv_stack(stack, z).value() == std::vector<double>{3, 5, 7, 4});

    ConvKernelStack<double> ident;
    ident.dim = 4;
    for (int i = 0; i < 3; ++i) ident.kernels.push_back(Tensor<double>::vector({1.0}, true));
    ident.bias = Tensor<double>::zeros({4}, true);
    REQUIRE(apply_conv_stack(ident, z).value() == z.value());

    auto bad = Tensor<double>::matrix(1, 5, {1, 2, 3, 4, 5});
    REQUIRE_THROWS_AS(apply_conv_stack(stack, bad), ScfError);

    ConvKernelStack<double> oversize;
    oversize.dim = 2;
    oversize.kernels.push_back(Tensor<double>::vector({1, 1, 1}, true));
    oversize.bias = Tensor<double>::zeros({2}, true);
    REQUIRE_THROWS_AS(apply_conv_stack(oversize, bad), ScfError);
}

TEST_CASE("materialized product of [1,1] kernels carries binomial bands") {
    ConvKernelStack<double> stack;
    stack.dim = 4;
    stack.kernels.push_back(Tensor<double>::vector({1, 1}, true));
    stack.kernels.push_back(Tensor<double>::vector({1, 1}, true));
    stack.bias = Tensor<double>::zeros({4}, true);

    auto m = materialize_stack(stack);
    REQUIRE(m == std::vector<double>{1, 2, 1, 0, 0, 1, 2, 1, 0, 0, 1, 2, 0, 0, 0, 1});
    REQUIRE(upper_band_width(m, 4) == 3);
    REQUIRE(strictly_lower_is_zero(m, 4));

    // single kernel reduces to the plain Toeplitz matrix
    ConvKernelStack<double> single;
    single.dim = 5;
    single.kernels.push_back(Tensor<double>::vector({0.5, -1.5, 2.0}, true));
    single.bias = Tensor<double>::zeros({5}, true);
    REQUIRE(materialize_stack(single) == toeplitz_from_kernel({0.5, -1.5, 2.0}, 5));

    ConvKernelStack<double> empty;
    empty.dim = 4;
    empty.bias = Tensor<double>::zeros({4}, true);
    REQUIRE_THROWS_AS(materialize_stack(empty), ScfError);
}

TEST_CASE("conv stack equals its materialized matrix") {
    Rng rng(53);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 2 + rng.index(31);  // 2..32
        const std::size_t layers = 1 + rng.index(4);
        ConvKernelStack<double> stack;
        stack.dim = d;
        for (std::size_t l = 0; l < layers; ++l) {
            const std::size_t k = 1 + rng.index(std::min<std::size_t>(8, d));
            std::vector<double> w(k);
            for (auto& v : w) v = rng.uniform(-1.0, 1.0);
            stack.kernels.push_back(Tensor<double>::vector(std::move(w), true));
        }
        std::vector<double> bias(d);
        for (auto& v : bias) v = rng.uniform(-0.5, 0.5);
        stack.bias = Tensor<double>::vector(bias, true);

        auto z = test_helpers::random_matrix(2, d, rng, false);
        auto via_conv = apply_conv_stack(stack, z);

        auto m = materialize_stack(stack);
        REQUIRE(strictly_lower_is_zero(m, d));
        for (std::size_t r = 0; r < 2; ++r) {
            std::vector<double> row(d);
            for (std::size_t j = 0; j < d; ++j) row[j] = z.at(r, j);
            auto ref = matvec(m, row, d);
            for (std::size_t j = 0; j < d; ++j) ref[j] += bias[j];
            for (std::size_t j = 0; j < d; ++j)
                worst = std::max(worst, std::abs(ref[j] - via_conv.at(r, j)));
        }
    }
    REQUIRE(worst <= 1e-12);
}

TEST_CASE("layer-count bound closed forms") {
    REQUIRE(min_layers_full_triangle(8, 3) == 4);
    REQUIRE(min_layers_full_triangle(8, 8) == 1);
    REQUIRE(min_layers_full_triangle(16, 16) == 1);
    REQUIRE(min_layers_full_triangle(16, 2) == 15);
    REQUIRE_THROWS_AS(min_layers_full_triangle(8, 1), ScfError);
    REQUIRE_THROWS_AS(min_layers_full_triangle(4, 8), ScfError);
}

TEST_CASE("band growth follows min(m(k-1)+1, d)") {
    Rng rng(59);
    for (std::size_t d : {std::size_t{8}, std::size_t{16}, std::size_t{32}}) {
        for (std::size_t k : {std::size_t{2}, std::size_t{3}, std::size_t{4}, std::size_t{8}}) {
            if (k > d) continue;
            const std::size_t full_at = min_layers_full_triangle(d, k);
            ConvKernelStack<double> stack;
            stack.dim = d;
            stack.bias = Tensor<double>::zeros({d}, true);
            for (std::size_t m = 1; m <= full_at; ++m) {
                std::vector<double> w(k);
                for (auto& v : w) v = rng.uniform(0.1, 1.0);
                stack.kernels.push_back(Tensor<double>::vector(std::move(w), true));

                auto mat = materialize_stack(stack);
                REQUIRE(upper_band_width(mat, d) == std::min(m * (k - 1) + 1, d));
                if (m < full_at) {
                    REQUIRE_FALSE(has_full_upper_support(mat, d));
                } else {
                    REQUIRE(has_full_upper_support(mat, d));
                }
            }
        }
    }
}

TEST_CASE("transform variant dispatch and parameter walk") {
    Rng rng(61);
    StructuredTransform<double> masked = make_masked_linear<double>(6, rng);
    StructuredTransform<double> conv = make_conv_stack<double>(6, {3, 3}, rng);

    auto z = test_helpers::random_matrix(2, 6, rng, false);
    REQUIRE(apply_transform(masked, z).value() ==
            apply_masked(std::get<MaskedLinear<double>>(masked), z).value());
    REQUIRE(apply_transform(conv, z).value() ==
            apply_conv_stack(std::get<ConvKernelStack<double>>(conv), z).value());

    REQUIRE(transform_weight_count(masked) == 21);
    REQUIRE(transform_weight_count(conv) == 6);

    std::vector<std::string> names;
    std::size_t masked_count = 0;
    visit_params(masked, "q", [&](const ParamRef<double>& p) {
        names.push_back(p.name);
        if (p.masked) ++masked_count;
    });
    visit_params(conv, "k", [&](const ParamRef<double>& p) { names.push_back(p.name); });
    REQUIRE(names == std::vector<std::string>{"q.weight", "q.bias", "k.kernel0", "k.kernel1",
                                              "k.bias"});
    REQUIRE(masked_count == 1);
}
