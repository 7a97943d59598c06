#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adaptsfm/adapters.hpp"
#include "adaptsfm/errors.hpp"
#include "adaptsfm/rng.hpp"
#include "adaptsfm/tensor.hpp"

using namespace adaptsfm;
using namespace adaptsfm::adapters;

namespace {

Tensor rand_t(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return random_uniform(std::move(shape), rng, lo, hi);
}

// Independent segment-sum / tile oracles, written as direct loops.
Tensor oracle_compress_truncation(const Tensor& x, int r) {
    const int k = x.dim(0);
    Tensor z({r});
    for (int i = 0; i < k; ++i) z[i % r] += x[i];
    return z;
}

Tensor oracle_decompress_truncation(const Tensor& z, int d) {
    const int r = z.dim(0);
    Tensor y({d});
    for (int i = 0; i < d; ++i) y[i] = z[i % r];
    return y;
}

} // namespace

TEST_CASE("column_norms") {
    Tensor w({2, 2}, {3, 0, 4, 0});
    Tensor n = column_norms(w);
    CHECK(n[0] == doctest::Approx(5.0));
    CHECK(n[1] == doctest::Approx(0.0));

    Tensor ni = column_norms(Tensor::eye(3));
    for (int j = 0; j < 3; ++j) CHECK(ni[j] == doctest::Approx(1.0));

    // brute-force per-column sum-of-squares oracle
    Tensor r = rand_t({4, 3}, 42);
    Tensor got = column_norms(r);
    for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += r.at(i, j) * r.at(i, j);
        CHECK(std::abs(got[j] - std::sqrt(s)) < 1e-12);
    }
}

TEST_CASE("lora_forward") {
    FrozenLinear layer{rand_t({3, 2}, 1)};
    Tensor x = rand_t({2}, 2);

    SUBCASE("zero update returns W0 x") {
        Tensor y = lora_forward(layer, Tensor({3, 1}), rand_t({1, 2}, 3), x);
        CHECK(max_abs_diff(y, matvec(layer.W0, x)) == 0.0);
    }
    SUBCASE("pure rank-1 update on zero base") {
        FrozenLinear zero{Tensor({3, 2})};
        Tensor b = rand_t({3, 1}, 4);
        Tensor a = rand_t({1, 2}, 5);
        Tensor y = lora_forward(zero, b, a, x);
        Tensor want = matvec(matmul(b, a), x);
        CHECK(max_abs_diff(y, want) < 1e-12);
    }
    SUBCASE("dense (W0+BA) x oracle") {
        Tensor b = rand_t({3, 1}, 6);
        Tensor a = rand_t({1, 2}, 7);
        Tensor y = lora_forward(layer, b, a, x);
        Tensor want = matvec(layer.W0 + matmul(b, a), x);
        CHECK(max_abs_diff(y, want) < 1e-12);
    }
    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(lora_forward(layer, Tensor({2, 1}), Tensor({1, 2}), x), InvalidInputError);
    }
}

TEST_CASE("compress") {
    SUBCASE("k == r is the identity") {
        Tensor x = rand_t({5}, 8);
        CHECK(max_abs_diff(compress(x, 5, CompressionScheme::truncation()), x) == 0.0);
    }
    SUBCASE("segment-sum oracle") {
        Tensor x({4}, {1, 2, 3, 4});
        Tensor z = compress(x, 2, CompressionScheme::truncation());
        CHECK(z[0] == doctest::Approx(4.0));
        CHECK(z[1] == doctest::Approx(6.0));
    }
    SUBCASE("linearity in both modes") {
        for (auto scheme : {CompressionScheme::truncation(), CompressionScheme::rotation()}) {
            Tensor x = rand_t({7}, 9);
            Tensor y = rand_t({7}, 10);
            const double a = 1.37;
            Tensor lhs = compress(x * a + y, 3, scheme);
            Tensor rhs = compress(x, 3, scheme) * a + compress(y, 3, scheme);
            CHECK(max_abs_diff(lhs, rhs) < 1e-12);
        }
    }
    SUBCASE("r > k rejected") {
        CHECK_THROWS_AS(compress(rand_t({3}, 11), 4, CompressionScheme::truncation()), InvalidInputError);
    }
}

TEST_CASE("decompress") {
    SUBCASE("r == d is the identity") {
        Tensor z = rand_t({4}, 12);
        CHECK(max_abs_diff(decompress(z, 4, CompressionScheme::truncation()), z) == 0.0);
    }
    SUBCASE("tile oracle") {
        Tensor z({2}, {4, 6});
        Tensor y = decompress(z, 4, CompressionScheme::truncation());
        CHECK(y[0] == 4.0);
        CHECK(y[1] == 6.0);
        CHECK(y[2] == 4.0);
        CHECK(y[3] == 6.0);
    }
    SUBCASE("tile-then-truncate oracle") {
        Tensor z({2}, {4, 6});
        Tensor y = decompress(z, 3, CompressionScheme::truncation());
        CHECK(y[0] == 4.0);
        CHECK(y[1] == 6.0);
        CHECK(y[2] == 4.0);
    }
    SUBCASE("r > d rejected") {
        CHECK_THROWS_AS(decompress(rand_t({5}, 13), 3, CompressionScheme::truncation()), InvalidInputError);
    }
}

TEST_CASE("compress/decompress agree with brute-force oracles on random input") {
    Tensor x = rand_t({10}, 14);
    CHECK(max_abs_diff(compress(x, 3, CompressionScheme::truncation()), oracle_compress_truncation(x, 3)) <
          1e-12);
    Tensor z = rand_t({3}, 15);
    CHECK(max_abs_diff(decompress(z, 8, CompressionScheme::truncation()), oracle_decompress_truncation(z, 8)) <
          1e-12);
}

TEST_CASE("rotation scheme: identity with a single segment, inverse tiles") {
    // One segment (j = 0) means zero angles in both directions.
    Tensor x = rand_t({6}, 16);
    CHECK(max_abs_diff(compress(x, 6, CompressionScheme::rotation()), x) < 1e-15);
    CHECK(max_abs_diff(decompress(x, 6, CompressionScheme::rotation()), x) < 1e-15);

    // decompress tile j undoes the segment-j rotation of compress:
    // decompress(compress(x)) restricted to segment j returns x's segment j
    // when the other segments are zero.
    const int k = 8, r = 4;
    for (int j = 0; j < 2; ++j) {
        Tensor xs({k});
        for (int i = 0; i < r; ++i) xs[j * r + i] = 0.5 + i;
        Tensor z = compress(xs, r, CompressionScheme::rotation());
        Tensor y = decompress(z, k, CompressionScheme::rotation());
        for (int i = 0; i < r; ++i) CHECK(std::abs(y[j * r + i] - xs[j * r + i]) < 1e-12);
    }
}

TEST_CASE("mora_forward") {
    FrozenLinear layer{rand_t({4, 4}, 17)};
    Tensor x = rand_t({4}, 18);

    SUBCASE("zero square matrix returns W0 x") {
        Tensor y = mora_forward(layer, Tensor({2, 2}), x, CompressionScheme::truncation());
        CHECK(max_abs_diff(y, matvec(layer.W0, x)) == 0.0);
    }
    SUBCASE("identity comp/decomp doubles the input") {
        FrozenLinear id2{Tensor::eye(2)};
        Tensor x2 = rand_t({2}, 19);
        Tensor y = mora_forward(id2, Tensor::eye(2), x2, CompressionScheme::truncation());
        CHECK(max_abs_diff(y, x2 * 2.0) < 1e-15);
    }
    SUBCASE("three-stage dense oracle") {
        Tensor m = rand_t({2, 2}, 20);
        Tensor y = mora_forward(layer, m, x, CompressionScheme::truncation());
        Tensor want = matvec(layer.W0, x) +
                      oracle_decompress_truncation(matvec(m, oracle_compress_truncation(x, 2)), 4);
        CHECK(max_abs_diff(y, want) < 1e-12);
    }
}

TEST_CASE("dora_effective_weight") {
    FrozenLinear layer{rand_t({3, 2}, 21)};

    SUBCASE("initialization is the identity map on weights") {
        Tensor w = dora_effective_weight(layer, column_norms(layer.W0), Tensor({3, 1}), Tensor({1, 2}));
        CHECK(max_abs_diff(w, layer.W0) == 0.0);
    }
    SUBCASE("normalization invariance under positive column scaling") {
        Tensor m = rand_t({2}, 22, 0.5, 2.0);
        Tensor a = rand_t({1, 2}, 23);
        Tensor b = rand_t({3, 1}, 24);
        Tensor w1 = dora_effective_weight(layer, m, b, a);
        FrozenLinear scaled{layer.W0 * 2.5};
        Tensor w2 = dora_effective_weight(scaled, m, b * 2.5, a);
        CHECK(max_abs_diff(w1, w2) < 1e-12);
    }
    SUBCASE("norm oracle: columns of W' have norms m") {
        Tensor m = rand_t({2}, 25, 0.5, 2.0);
        Tensor a = rand_t({1, 2}, 26);
        Tensor b = rand_t({3, 1}, 27);
        Tensor w = dora_effective_weight(layer, m, b, a);
        CHECK(max_abs_diff(column_norms(w), m) < 1e-12);
    }
    SUBCASE("zero direction column rejected") {
        FrozenLinear zero{Tensor({3, 2})};
        CHECK_THROWS_AS(dora_effective_weight(zero, Tensor({2}), Tensor({3, 1}), Tensor({1, 2})),
                        DegenerateDirectionError);
    }
}

TEST_CASE("domora_forward") {
    FrozenLinear layer{rand_t({4, 3}, 28)};
    Tensor x = rand_t({3}, 29);
    const auto scheme = CompressionScheme::truncation();

    SUBCASE("full reduction to the frozen layer") {
        AdapterParams p;
        p.rank = 2;
        p.m = column_norms(layer.W0);
        p.B = Tensor({4, 2});
        p.A = rand_t({2, 3}, 30);
        p.M = Tensor({2, 2});
        Tensor y = domora_forward(layer, p, x, scheme);
        CHECK(max_abs_diff(y, matvec(layer.W0, x)) == 0.0);
    }
    SUBCASE("M = 0 equals the DoRA forward") {
        AdapterParams p;
        p.rank = 2;
        p.m = rand_t({3}, 31, 0.5, 2.0);
        p.B = rand_t({4, 2}, 32);
        p.A = rand_t({2, 3}, 33);
        p.M = Tensor({2, 2});
        Tensor y = domora_forward(layer, p, x, scheme);
        Tensor dora = matvec(dora_effective_weight(layer, p.m, p.B, p.A), x);
        CHECK(max_abs_diff(y, dora) < 1e-12);
    }
    SUBCASE("independent dense oracle for the full expression") {
        AdapterParams p;
        p.rank = 2;
        p.m = rand_t({3}, 34, 0.5, 2.0);
        p.B = rand_t({4, 2}, 35);
        p.A = rand_t({2, 3}, 36);
        p.M = rand_t({2, 2}, 37);
        Tensor y = domora_forward(layer, p, x, scheme);

        // Oracle: explicit column loop + explicit segment logic.
        Tensor v = layer.W0 + matmul(p.B, p.A);
        Tensor want({4});
        for (int j = 0; j < 3; ++j) {
            double norm = 0.0;
            for (int i = 0; i < 4; ++i) norm += v.at(i, j) * v.at(i, j);
            norm = std::sqrt(norm);
            for (int i = 0; i < 4; ++i) want[i] += p.m[j] * v.at(i, j) / norm * x[j];
        }
        Tensor up = oracle_decompress_truncation(matvec(p.M, oracle_compress_truncation(x, 2)), 4);
        for (int i = 0; i < 4; ++i) want[i] += up[i];
        CHECK(max_abs_diff(y, want) < 1e-10);
    }
}

TEST_CASE("init_adapter") {
    FrozenLinear layer{rand_t({5, 4}, 38)};

    SUBCASE("zero-init identity") {
        AdapterParams p = init_adapter(layer, 2, 7);
        Tensor x = rand_t({4}, 39);
        Tensor y = domora_forward(layer, p, x, CompressionScheme::truncation());
        CHECK(max_abs_diff(y, matvec(layer.W0, x)) < 1e-12);
    }
    SUBCASE("seed determinism") {
        AdapterParams p1 = init_adapter(layer, 3, 99);
        AdapterParams p2 = init_adapter(layer, 3, 99);
        for (std::int64_t i = 0; i < p1.A.numel(); ++i) CHECK(p1.A[i] == p2.A[i]);
        AdapterParams p3 = init_adapter(layer, 3, 100);
        CHECK(max_abs_diff(p1.A, p3.A) > 0.0);
    }
    SUBCASE("parameter count formula") {
        AdapterParams p = init_adapter(layer, 2, 7);
        std::int64_t count = p.m.numel() + p.A.numel() + p.B.numel() + p.M.numel();
        CHECK(count == adapter_param_count(5, 4, 2));
        CHECK(count == 4 + 2 * (5 + 4) + 2 * 2);
    }
}

TEST_CASE("rank_vector") {
    CHECK(rank_vector(4, 8, RankPolicy::Constant) == RankVector{8, 8, 8, 8});
    CHECK(rank_vector(5, 8, RankPolicy::Linear) == RankVector{8, 7, 6, 5, 4});
    CHECK(rank_vector(1, 6, RankPolicy::Linear) == RankVector{6});
    CHECK(rank_vector(1, 6, RankPolicy::Constant) == RankVector{6});
    CHECK_THROWS_AS(rank_vector(0, 8, RankPolicy::Linear), InvalidInputError);
}

TEST_CASE("reduction chain and pinned norms on random parameters") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2 + static_cast<int>(rng.below(6));
        const int k = 2 + static_cast<int>(rng.below(6));
        const int r = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(d, k))));
        FrozenLinear layer{random_uniform({d, k}, rng, -1.0, 1.0)};
        Tensor x = random_uniform({k}, rng, -1.0, 1.0);

        AdapterParams p;
        p.rank = r;
        p.m = random_uniform({k}, rng, 0.5, 2.0);
        p.B = random_uniform({d, r}, rng, -0.5, 0.5);
        p.A = random_uniform({r, k}, rng, -0.5, 0.5);
        p.M = Tensor({r, r});

        // M = 0 -> DoRA
        Tensor via_domora = domora_forward(layer, p, x, CompressionScheme::truncation());
        Tensor via_dora = matvec(dora_effective_weight(layer, p.m, p.B, p.A), x);
        CHECK(max_abs_diff(via_domora, via_dora) < 1e-12);

        // norm pinning
        Tensor w = dora_effective_weight(layer, p.m, p.B, p.A);
        CHECK(max_abs_diff(column_norms(w), p.m) < 1e-10);

        // linearity of the forward in x
        p.M = random_uniform({r, r}, rng, -0.5, 0.5);
        Tensor y = random_uniform({k}, rng, -1.0, 1.0);
        const double alpha = rng.uniform(-2.0, 2.0);
        Tensor lhs = domora_forward(layer, p, x * alpha + y, CompressionScheme::truncation());
        Tensor rhs = domora_forward(layer, p, x, CompressionScheme::truncation()) * alpha +
                     domora_forward(layer, p, y, CompressionScheme::truncation());
        CHECK(max_abs_diff(lhs, rhs) < 1e-10);
    }
}

TEST_CASE("tape route matches the plain forward and its finite differences") {
    Rng rng(123);
    const int d = 5, k = 4, r = 2;
    FrozenLinear layer{random_uniform({d, k}, rng, -1.0, 1.0)};
    AdapterParams p = init_adapter(layer, r, 5);
    p.B = random_uniform({d, r}, rng, -0.4, 0.4);
    p.M = random_uniform({r, r}, rng, -0.4, 0.4);
    const auto scheme = CompressionScheme::truncation();

    AdapterVars vars;
    vars.W0 = ad::constant(layer.W0);
    vars.m = ad::param(p.m);
    vars.A = ad::param(p.A);
    vars.B = ad::param(p.B);
    vars.M = ad::param(p.M);
    vars.comp = compress_matrix(k, r, scheme);
    vars.decomp = decompress_matrix(d, r, scheme);

    Tensor xrow = random_uniform({1, k}, rng, -1.0, 1.0);
    auto x = ad::constant(xrow);

    // value equivalence against the plain route
    ad::Var out = domora_apply_rows(vars, x);
    Tensor plain = domora_forward(layer, p, xrow.reshaped({k}), scheme);
    CHECK(max_abs_diff(out->value.reshaped({d}), plain) < 1e-12);

    // spec gradient contract: central differences, step 1e-5, rel err <= 1e-4
    Tensor weights = random_uniform({1, d}, rng, -1.0, 1.0);
    auto build = [&] { return ad::sum_all(ad::mul(domora_apply_rows(vars, x), ad::constant(weights))); };
    ad::Var loss = build();
    ad::backward(loss);
    std::vector<ad::Var> params = {vars.m, vars.A, vars.B, vars.M};
    std::vector<Tensor> analytic;
    for (auto& pr : params) analytic.push_back(pr->grad);

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& value = params[pi]->value;
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            const double saved = value[i];
            value[i] = saved + h;
            const double up = build()->value[0];
            value[i] = saved - h;
            const double down = build()->value[0];
            value[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double an = analytic[pi][i];
            worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
        }
    }
    CHECK(worst <= 1e-4);
}
