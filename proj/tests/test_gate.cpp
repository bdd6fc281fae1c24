#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "clp/errors.hpp"
#include "clp/gate.hpp"
#include "clp/rng.hpp"
#include "testutil.hpp"

using namespace clp;
using test::grad_close;

namespace {

// m(i) for k=5, a=4, n=3, L=12, evaluated independently at 50-digit
// precision and rounded to double. The dip covers layers 4..6.
constexpr double kReferenceMask[12] = {
    0.99999999793884638181,   0.9999996940977730786236, 0.9999546021313911375868,
    0.9933071511230731466606, 0.5000226989343512171973, 0.01334090759507501047336,
    0.5000226989343512171973, 0.9933071511230731466606, 0.9999546021313911375868,
    0.9999996940977730786236, 0.99999999793884638181,   0.9999999999861120561352,
};

GateParams reference_gate() {
    GateParams gp;
    gp.start = 4.0;
    gp.window_len = 3;
    gp.sharpness = 5.0;
    gp.num_layers = 12;
    return gp;
}

}  // namespace

TEST_CASE("gate values match the high-precision reference") {
    GateParams gp = reference_gate();
    LayerMask mask = soft_mask(gp);
    REQUIRE(mask.kind == MaskKind::soft);
    REQUIRE(mask.values.size() == 12);
    for (int i = 0; i < 12; ++i) {
        CHECK(std::fabs(double(mask.values[size_t(i)]) - kReferenceMask[i]) < 1e-12);
        CHECK(gate_value(gp, double(i)) == doctest::Approx(kReferenceMask[i]).epsilon(1e-14));
    }
    // The profile is symmetric about the window center a + (n-1)/2 = 5.
    CHECK(mask.values[4] == doctest::Approx(double(mask.values[6])).epsilon(1e-15));
    CHECK(mask.values[3] == doctest::Approx(double(mask.values[7])).epsilon(1e-15));
}

TEST_CASE("gate values stay within [0, 1]") {
    // Mathematically the gate is strictly inside (0, 1); in double
    // precision the sigmoid products saturate to exact 0 or 1 once the
    // distance-times-sharpness passes ~37, so the closed interval is the
    // testable bound.
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        GateParams gp;
        gp.num_layers = 4 + int(rng.below(12));
        gp.window_len = 1 + int(rng.below(4));
        gp.sharpness = 0.5 + 15.0 * rng.uniform01();
        gp.start = clamp_start(rng.normal(5, 4), gp.window_len, gp.num_layers);
        for (int i = 0; i < gp.num_layers; ++i) {
            double m = gate_value(gp, double(i));
            CHECK(m >= 0.0);
            CHECK(m <= 1.0);
        }
    }
}

TEST_CASE("closed-form gate gradient matches the reference and finite differences") {
    GateParams gp = reference_gate();
    // At the layer right at the window start: k*s1*s2*(s2-s1) with
    // s1 = sigmoid(0), s2 = sigmoid(10).
    CHECK(std::fabs(gate_grad_start(gp, 4.0) - 1.2498297631447820778) < 1e-12);
    // Exactly zero at the window center by the s1 <-> s2 symmetry.
    CHECK(gate_grad_start(gp, 5.0) == 0.0);

    Rng rng(13);
    int checked = 0;
    while (checked < 150) {
        GateParams g;
        g.num_layers = 12;
        g.window_len = 1 + int(rng.below(5));
        double ks[3] = {3.0, 5.0, 10.0};
        g.sharpness = ks[rng.below(3)];
        g.start = rng.uniform01() * double(g.num_layers - g.window_len);
        double i = double(rng.below(g.num_layers));
        double h = 1e-4;
        GateParams up = g, down = g;
        up.start += h;
        down.start -= h;
        double fd = (gate_value(up, i) - gate_value(down, i)) / (2 * h);
        CHECK(grad_close(gate_grad_start(g, i), fd, 1e-4));
        ++checked;
    }
}

TEST_CASE("sharp gates approach the hard mask away from the window edges") {
    // With k = 50 and the continuous start half a unit left of an integer
    // start s, both transition midpoints fall on half-integers, so every
    // integer index sits at distance >= 0.5 from them; the deviation bound
    // at that distance is e^{-k/2} = e^{-25}. The one exception is the
    // 0.5-boundary index s+n-1: the soft dip [s-0.5, s+n-1.5] covers only
    // n-1 integers, and rounding half away from zero assigns this ambiguous
    // index to the excised window even though the gate leaves it ~1. (For
    // n = 2 that makes the dip's single interior index marginal to both
    // transitions at once, deviating ~2 e^{-25}; lengths >= 3 are the
    // regime the bound covers.) The +1e-15 absorbs cancellation quantization
    // at 1.0's ulp.
    const double bound = std::exp(-25.0) + 1e-15;
    for (int n : {3, 4, 5}) {
        for (int s = 0; s + n <= 12; ++s) {
            GateParams gp;
            gp.start = double(s) - 0.5;
            gp.window_len = n;
            gp.sharpness = 50.0;
            gp.num_layers = 12;
            LayerMask soft = soft_mask(gp);
            CHECK(round_window(gp) == PruneWindow{s, n});
            LayerMask hard = hard_mask({s, n}, 12);
            for (int i = 0; i < 12; ++i) {
                double m = double(soft.values[size_t(i)]);
                INFO("n=", n, " s=", s, " i=", i);
                if (i == s + n - 1) {
                    CHECK(std::fabs(m - 1.0) <= bound);  // boundary index stays un-gated
                } else {
                    CHECK(std::fabs(m - double(hard.values[size_t(i)])) <= bound);
                }
            }
        }
    }
}

TEST_CASE("hard_mask zeros exactly the window") {
    LayerMask mask = hard_mask({2, 3}, 8);
    REQUIRE(mask.kind == MaskKind::hard);
    REQUIRE(mask.values.size() == 8);
    for (int i = 0; i < 8; ++i)
        CHECK(mask.values[size_t(i)] == ((i >= 2 && i < 5) ? 0.0 : 1.0));

    CHECK_THROWS_AS(hard_mask({6, 3}, 8), ConfigError);
    CHECK_THROWS_AS(hard_mask({-1, 2}, 8), ConfigError);
    // Empty window: all ones.
    LayerMask none = hard_mask({0, 0}, 4);
    for (Real v : none.values) CHECK(v == 1.0);
}

TEST_CASE("round_window rounds half away from zero then clamps") {
    GateParams gp;
    gp.window_len = 3;
    gp.num_layers = 12;
    gp.start = 5.4;
    CHECK(round_window(gp) == PruneWindow{5, 3});
    gp.start = 5.5;
    CHECK(round_window(gp) == PruneWindow{6, 3});
    gp.start = -0.4;
    CHECK(round_window(gp) == PruneWindow{0, 3});
    gp.start = 11.2;  // rounds to 11, clamps to L - n = 9
    CHECK(round_window(gp) == PruneWindow{9, 3});
}

TEST_CASE("clamp_start confines the continuous start to feasible range") {
    CHECK(clamp_start(-3.0, 3, 12) == 0.0);
    CHECK(clamp_start(4.25, 3, 12) == 4.25);
    CHECK(clamp_start(10.5, 3, 12) == 9.0);
}

TEST_CASE("gate params validate their ranges") {
    GateParams gp = reference_gate();
    CHECK_NOTHROW(gp.validate());
    GateParams bad = gp;
    bad.sharpness = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = gp;
    bad.window_len = 0;  // a zero-length window is a legal no-op
    CHECK_NOTHROW(bad.validate());
    bad.window_len = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = gp;
    bad.window_len = 13;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = gp;
    bad.start = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("tape-built gate values agree with the closed form") {
    GateParams gp = reference_gate();
    for (double a : {0.0, 2.7, 4.0, 8.99}) {
        gp.start = a;
        Tensor start = Tensor::scalar(Real(a), true);
        Tape tape;
        std::vector<Tensor> gates = soft_mask_on_tape(&tape, start, gp);
        LayerMask direct = soft_mask(gp);
        REQUIRE(gates.size() == 12);
        for (int i = 0; i < 12; ++i)
            CHECK(std::fabs(double(gates[size_t(i)].item()) -
                            double(direct.values[size_t(i)])) < 1e-15);
    }
}

TEST_CASE("tape-built gate gradients equal the closed form") {
    GateParams gp = reference_gate();
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        double a = rng.uniform01() * 9.0;
        gp.start = a;
        int i = int(rng.below(12));
        Tensor start = Tensor::scalar(Real(a), true);
        Tape tape;
        std::vector<Tensor> gates = soft_mask_on_tape(&tape, start, gp);
        tape.backward(gates[size_t(i)]);
        double ad = (*tape.find_grad(start))[0];
        CHECK(grad_close(ad, gate_grad_start(gp, double(i)), 1e-10, 1e-14));
    }
}
