#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adaptsfm/errors.hpp"
#include "adaptsfm/geometry.hpp"
#include "adaptsfm/rng.hpp"

using namespace adaptsfm;
using namespace adaptsfm::geometry;

namespace {

AxisAngle random_axis_angle(Rng& rng, double min_angle, double max_angle) {
    Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    double angle = rng.uniform(min_angle, max_angle);
    AxisAngle aa;
    for (int i = 0; i < 3; ++i) aa.phi[i] = axis[i] / n * angle;
    return aa;
}

double vec_dist(const Vec3& a, const Vec3& b) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

double frob_dist(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

} // namespace

TEST_CASE("rodrigues basics") {
    SUBCASE("zero rotation gives the identity") {
        RotationMatrix r = rodrigues(AxisAngle{});
        CHECK(max_abs_diff(r.R, Tensor::eye(3)) == 0.0);
    }
    SUBCASE("quarter turn about z") {
        RotationMatrix r = rodrigues(AxisAngle{{0, 0, M_PI / 2}});
        Tensor want({3, 3}, {0, -1, 0, 1, 0, 0, 0, 0, 1});
        CHECK(max_abs_diff(r.R, want) < 1e-12);
    }
    SUBCASE("round trip over moderate angles") {
        Rng rng(1);
        for (int i = 0; i < 200; ++i) {
            AxisAngle phi = random_axis_angle(rng, 0.1, 3.0);
            AxisAngle back = log_rotation(rodrigues(phi));
            CHECK(vec_dist(phi.phi, back.phi) < 1e-8);
        }
    }
    SUBCASE("output is always a valid rotation") {
        Rng rng(2);
        for (int i = 0; i < 100; ++i) {
            AxisAngle phi{{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)}};
            CHECK_NOTHROW(rodrigues(phi).check_valid(1e-9));
        }
    }
}

TEST_CASE("log_rotation") {
    SUBCASE("identity maps to zero") {
        AxisAngle aa = log_rotation(RotationMatrix::identity());
        CHECK(aa.angle() == 0.0);
    }
    SUBCASE("half turn about x recovers magnitude pi and axis +-x") {
        RotationMatrix r = rodrigues(AxisAngle{{M_PI, 0, 0}});
        AxisAngle aa = log_rotation(r);
        CHECK(std::abs(aa.angle() - M_PI) < 1e-9);
        CHECK(std::abs(std::abs(aa.phi[0]) - M_PI) < 1e-9);
        CHECK(std::abs(aa.phi[1]) < 1e-9);
        CHECK(std::abs(aa.phi[2]) < 1e-9);
    }
    SUBCASE("round trip across the full angle range") {
        Rng rng(3);
        for (int i = 0; i < 300; ++i) {
            AxisAngle phi = random_axis_angle(rng, 1e-6, M_PI - 1e-6);
            AxisAngle back = log_rotation(rodrigues(phi));
            CHECK(vec_dist(phi.phi, back.phi) < 1e-8);
        }
    }
    SUBCASE("non-orthonormal input rejected") {
        RotationMatrix bad;
        bad.R.at(0, 0) = 1.5;
        CHECK_THROWS_AS(log_rotation(bad), InvalidRotationError);
    }
}

TEST_CASE("svd_orthogonalize") {
    Rng rng(4);

    SUBCASE("rotations are fixed points") {
        for (int i = 0; i < 50; ++i) {
            RotationMatrix r = rodrigues(random_axis_angle(rng, 0.0, 3.0));
            RotationMatrix out = svd_orthogonalize(Raw9D{r.R});
            CHECK(max_abs_diff(out.R, r.R) < 1e-10);
        }
    }
    SUBCASE("positive scaling is removed") {
        RotationMatrix out = svd_orthogonalize(Raw9D{Tensor::eye(3) * 1.5});
        CHECK(max_abs_diff(out.R, Tensor::eye(3)) < 1e-12);
    }
    SUBCASE("negated column projects to the Frobenius-nearest proper rotation") {
        RotationMatrix r = rodrigues(random_axis_angle(rng, 0.5, 2.5));
        Tensor raw = r.R;
        for (int i = 0; i < 3; ++i) raw.at(i, 1) = -raw.at(i, 1);
        RotationMatrix out = svd_orthogonalize(Raw9D{raw});
        CHECK_NOTHROW(out.check_valid(1e-9));

        // brute-force oracle: no sampled rotation may be closer to raw
        const double ours = frob_dist(out.R, raw);
        Rng sampler(5);
        for (int i = 0; i < 2000; ++i) {
            RotationMatrix q = rodrigues(random_axis_angle(sampler, 0.0, M_PI - 1e-9));
            CHECK(frob_dist(q.R, raw) >= ours - 1e-9);
        }
    }
    SUBCASE("hand case: diag(2, 1.5, -1) projects to the identity") {
        Tensor raw({3, 3});
        raw.at(0, 0) = 2.0;
        raw.at(1, 1) = 1.5;
        raw.at(2, 2) = -1.0;
        RotationMatrix out = svd_orthogonalize(Raw9D{raw});
        CHECK(max_abs_diff(out.R, Tensor::eye(3)) < 1e-10);
    }
    SUBCASE("idempotent") {
        for (int i = 0; i < 20; ++i) {
            Tensor raw = random_normal({3, 3}, rng, 0.0, 1.0);
            RotationMatrix once = svd_orthogonalize(Raw9D{raw});
            RotationMatrix twice = svd_orthogonalize(Raw9D{once.R});
            CHECK(max_abs_diff(once.R, twice.R) < 1e-10);
        }
    }
    SUBCASE("rank-deficient input rejected") {
        Tensor raw({3, 3});
        raw.at(0, 0) = 1.0; // rank 1
        CHECK_THROWS_AS(svd_orthogonalize(Raw9D{raw}), DegenerateOrthogonalizationError);
    }
}

TEST_CASE("scale_head_outputs") {
    SUBCASE("zeros stay zero") {
        auto out = scale_head_outputs({0, 0, 0}, {0, 0, 0});
        CHECK(out.axis_angle.angle() == 0.0);
        CHECK(out.translation[0] == 0.0);
    }
    SUBCASE("factor 0.001") {
        auto out = scale_head_outputs({1000.0 * M_PI / 2, 0, 0}, {0, 0, 1000.0});
        CHECK(std::abs(out.axis_angle.phi[0] - M_PI / 2) < 1e-12);
        CHECK(std::abs(out.translation[2] - 1.0) < 1e-12);
    }
    SUBCASE("bitwise reproducible scalar multiply") {
        Rng rng(6);
        for (int i = 0; i < 50; ++i) {
            Vec3 p{rng.normal(), rng.normal(), rng.normal()};
            Vec3 t{rng.normal(), rng.normal(), rng.normal()};
            auto a = scale_head_outputs(p, t);
            auto b = scale_head_outputs(p, t);
            for (int j = 0; j < 3; ++j) {
                CHECK(a.axis_angle.phi[j] == b.axis_angle.phi[j]);
                CHECK(a.axis_angle.phi[j] == 0.001 * p[j]);
                CHECK(a.translation[j] == 0.001 * t[j]);
            }
        }
    }
    SUBCASE("scaling before rodrigues differs from the reverse order at large angles") {
        Vec3 raw{2000.0, 0.0, 0.0};
        auto scaled = scale_head_outputs(raw, {0, 0, 0});
        AxisAngle direct = log_rotation(rodrigues(scaled.axis_angle));
        CHECK(vec_dist(direct.phi, scaled.axis_angle.phi) < 1e-10);

        AxisAngle wrapped = log_rotation(rodrigues(AxisAngle{raw}));
        Vec3 post_scaled{0.001 * wrapped.phi[0], 0.001 * wrapped.phi[1], 0.001 * wrapped.phi[2]};
        CHECK(vec_dist(post_scaled, scaled.axis_angle.phi) > 1e-4);
    }
}

TEST_CASE("compose and invert") {
    Rng rng(7);
    auto random_pose = [&rng] {
        PoseSE3 p;
        p.rotation = rodrigues(random_axis_angle(rng, 0.0, 3.0));
        p.translation = {rng.normal(), rng.normal(), rng.normal()};
        return p;
    };

    SUBCASE("identity is neutral") {
        PoseSE3 t = random_pose();
        PoseSE3 c = compose(PoseSE3::identity(), t);
        CHECK(max_abs_diff(c.rotation.R, t.rotation.R) < 1e-15);
        CHECK(vec_dist(c.translation, t.translation) < 1e-15);
    }
    SUBCASE("compose with inverse is the identity") {
        for (int i = 0; i < 20; ++i) {
            PoseSE3 t = random_pose();
            PoseSE3 c = compose(t, invert(t));
            CHECK(max_abs_diff(c.rotation.R, Tensor::eye(3)) < 1e-10);
            CHECK(vec_dist(c.translation, {0, 0, 0}) < 1e-10);
        }
    }
    SUBCASE("chain of ten poses against the homogeneous-matrix oracle") {
        PoseSE3 acc = PoseSE3::identity();
        Tensor h = Tensor::eye(4);
        for (int i = 0; i < 10; ++i) {
            PoseSE3 t = random_pose();
            acc = compose(acc, t);
            h = matmul(h, t.homogeneous());
        }
        Tensor ah = acc.homogeneous();
        CHECK(max_abs_diff(ah, h) < 1e-9);
    }
}

TEST_CASE("quaternion file-format round trip") {
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        RotationMatrix r = rodrigues(random_axis_angle(rng, 0.0, 3.1));
        auto q = rotation_to_quaternion(r);
        RotationMatrix back = quaternion_to_rotation(q);
        CHECK(max_abs_diff(r.R, back.R) < 1e-12);
    }
}
