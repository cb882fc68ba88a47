#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "indmap/decay_fit.hpp"

using namespace indmap;

namespace {

std::vector<double> make_seq(long N, double (*f)(double)) {
    std::vector<double> v(static_cast<std::size_t>(N));
    for (long n = 1; n <= N; ++n) v[static_cast<std::size_t>(n - 1)] = f(static_cast<double>(n));
    return v;
}

} // namespace

TEST_CASE("classifier recovers a planted exponential rate") {
    const auto seq = make_seq(600, [](double n) { return 2.0 * std::exp(-n * std::log(4.0) / 3.0); });
    const auto cls = classify_growth(seq);
    CHECK(cls.kind == DecayKind::exponential);
    CHECK(cls.beta == Catch::Approx(std::log(4.0) / 3.0).epsilon(0.05));
    CHECK_FALSE(cls.super_polynomial);
}

TEST_CASE("classifier recovers a planted polynomial exponent") {
    const auto seq = make_seq(2000, [](double n) { return std::pow(n, -3.0); });
    const auto cls = classify_growth(seq);
    CHECK(cls.kind == DecayKind::polynomial);
    CHECK(cls.alpha == Catch::Approx(3.0).epsilon(0.05));
    CHECK_FALSE(cls.super_polynomial);
}

TEST_CASE("classifier recovers a planted stretched-exponential law") {
    const auto seq = make_seq(3000, [](double n) { return std::exp(-0.8 * std::pow(n, 0.5)); });
    const auto cls = classify_growth(seq);
    CHECK(cls.kind == DecayKind::stretched_exponential);
    CHECK(cls.alpha == Catch::Approx(0.5).margin(0.08));
    CHECK(cls.beta == Catch::Approx(0.8).epsilon(0.15));
}

TEST_CASE("quasi-polynomial decay is flagged super-polynomial") {
    // e^{-c log^2 n} decays faster than any polynomial, slower than stretched
    const auto seq = make_seq(5000, [](double n) {
        const double l = std::log(n);
        return std::exp(-0.9 * l * l);
    });
    const auto cls = classify_growth(seq, SeqKind::d_sequence);
    CHECK(cls.super_polynomial);
    CHECK(cls.poly_alpha_second_half > cls.poly_alpha_first_half);
    CHECK(cls.label() == "super-polynomial");
}

TEST_CASE("pure rates are not flagged super-polynomial") {
    const auto exp_seq = make_seq(3000, [](double n) { return std::exp(-0.05 * n); });
    CHECK_FALSE(classify_growth(exp_seq).super_polynomial);
    const auto poly_seq = make_seq(3000, [](double n) { return 5.0 * std::pow(n, -2.2); });
    CHECK_FALSE(classify_growth(poly_seq).super_polynomial);
}

TEST_CASE("degenerate sequences yield an inconclusive class") {
    const auto flat = make_seq(200, [](double) { return 0.5; });
    const auto cls = classify_growth(flat);
    CHECK(cls.degenerate);
    CHECK(cls.kind == DecayKind::inconclusive);
}

TEST_CASE("too short a window is rejected") {
    std::vector<double> tiny(10, 1.0);
    CHECK_THROWS_AS(classify_growth(tiny), window_too_short);
}
