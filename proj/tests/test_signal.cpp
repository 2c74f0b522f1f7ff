#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "pvcnet/random.hpp"
#include "pvcnet/signal.hpp"

using namespace pvcnet;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> sinusoid(double freq, double fs, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * kPi * freq * i / fs);
  return x;
}

// Quadrature projection over an integer number of cycles in the middle of the
// signal; independent of the filter implementation.
double steady_state_amplitude(const std::vector<double>& y, double freq, double fs) {
  const std::size_t period = static_cast<std::size_t>(std::llround(fs / freq));
  const std::size_t cycles = y.size() / (3 * period);
  REQUIRE(cycles >= 1);
  const std::size_t start = y.size() / 3;
  const std::size_t n = cycles * period;
  double s = 0.0, c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 2.0 * kPi * freq * (start + i) / fs;
    s += y[start + i] * std::sin(w);
    c += y[start + i] * std::cos(w);
  }
  return 2.0 * std::hypot(s, c) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("window length scaling") {
  CHECK(window_length(360) == 150);
  CHECK(window_length(720) == 300);
  // half-to-even rounding of 150*fs/360; these values intentionally differ by
  // one sample from some published per-database tables
  CHECK(window_length(257) == 107);
  CHECK(window_length(128) == 53);
  CHECK(window_length(250) == 104);
  CHECK_THROWS_AS(window_length(0.0), Error);

  SECTION("monotone non-decreasing in the sampling rate") {
    long long prev = 0;
    for (double fs = 101; fs <= 1000; fs += 7) {
      const long long w = window_length(fs);
      CHECK(w >= prev);
      prev = w;
    }
  }

  SECTION("ties round to even") {
    CHECK(round_half_even(2.5) == 2);
    CHECK(round_half_even(3.5) == 4);
    CHECK(round_half_even(-0.5) == 0);
    CHECK(round_half_even(107.0833) == 107);
  }
}

TEST_CASE("beat extraction") {
  RawRecording rec;
  rec.fs = 360;
  rec.record_id = "r1";
  rec.database_id = "d1";
  rec.samples.resize(2000);
  std::iota(rec.samples.begin(), rec.samples.end(), 0.0);

  SECTION("window at 360 Hz covers [r-50, r+99]") {
    auto w = extract_beat(rec, 1000, 1);
    REQUIRE(w.has_value());
    CHECK(w->samples.size() == 150);
    CHECK(w->samples.front() == 950.0);
    CHECK(w->samples.back() == 1099.0);
    CHECK(w->label == 1);
  }

  SECTION("a beat too close to the edge is skipped with a reason") {
    std::string reason;
    CHECK_FALSE(extract_beat(rec, 30, 0, &reason).has_value());
    CHECK(reason.find("needs") != std::string::npos);
    CHECK_FALSE(extract_beat(rec, 1990, 0, &reason).has_value());
  }

  SECTION("the window scales with the sampling rate") {
    RawRecording low = rec;
    low.fs = 128;
    auto w = extract_beat(low, 500, 0);
    REQUIRE(w.has_value());
    CHECK(pre_samples(128) == 18);
    CHECK(w->samples.size() == 53);
    CHECK(w->samples.front() == 482.0);
    CHECK(w->samples.back() == 534.0);
  }

  SECTION("recording validation") {
    RawRecording bad = rec;
    bad.r_peaks = {100, 100};
    bad.beat_labels = {0, 0};
    CHECK_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("increasing"));
    bad.r_peaks = {100, 5000};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.r_peaks = {100};
    CHECK_THROWS_AS(bad.validate(), Error);  // label count mismatch
  }
}

TEST_CASE("amplitude normalization") {
  const std::vector<double> basic{0, 5, 10};
  const std::vector<double> got = normalize(basic);
  CHECK(got == std::vector<double>{-1, 0, 1});

  CHECK(normalize(std::vector<double>{3, 3, 3}) == std::vector<double>{0, 0, 0});

  RandomEngine eng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(30);
    for (double& v : x) v = eng.uniform(-7, 9);
    const std::vector<double> n = normalize(x);
    double lo = 1e300, hi = -1e300;
    for (double v : n) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo == -1.0);
    CHECK(hi == 1.0);
  }
}

TEST_CASE("band-pass filter") {
  SECTION("rates at or below 100 Hz are rejected") {
    CHECK_THROWS_WITH(bandpass(std::vector<double>(10, 0.0), 100.0),
                      Catch::Matchers::ContainsSubstring("100"));
  }

  SECTION("DC is removed after settling") {
    const std::vector<double> dc(4000, 1.0);
    const std::vector<double> y = bandpass(dc, 360.0);
    double worst = 0.0;
    for (std::size_t i = 1500; i < 2500; ++i) worst = std::max(worst, std::fabs(y[i]));
    CHECK(worst <= 1e-3);
  }

  SECTION("5 Hz passes, 60 Hz is attenuated, matching the designed response") {
    const BandpassFilter f = BandpassFilter::design(360.0);
    const std::vector<double> in5 = sinusoid(5.0, 360.0, 14400);
    const double amp5 = steady_state_amplitude(bandpass(in5, 360.0), 5.0, 360.0);
    CHECK(amp5 >= 0.9);
    CHECK(amp5 <= 1.0);
    const double h5 = f.magnitude(5.0);
    CHECK(amp5 == Catch::Approx(h5 * h5).margin(1e-3));  // two passes square the gain

    const std::vector<double> in60 = sinusoid(60.0, 360.0, 14400);
    const double amp60 = steady_state_amplitude(bandpass(in60, 360.0), 60.0, 360.0);
    CHECK(amp60 <= 0.5);
    const double h60 = f.magnitude(60.0);
    CHECK(amp60 == Catch::Approx(h60 * h60).margin(1e-3));
  }

  SECTION("the filter is linear") {
    RandomEngine eng(32);
    std::vector<double> x(1200), y(1200);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = eng.uniform(-1, 1);
      y[i] = eng.uniform(-1, 1);
    }
    const double a = 1.7, b = -0.4;
    std::vector<double> mix(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const std::vector<double> fm = bandpass(mix, 360.0);
    const std::vector<double> fx = bandpass(x, 360.0);
    const std::vector<double> fy = bandpass(y, 360.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(fm[i] == Catch::Approx(a * fx[i] + b * fy[i]).margin(1e-9));
  }

  SECTION("zero-phase symmetry under time reversal") {
    RandomEngine eng(33);
    std::vector<double> x(900);
    for (double& v : x) v = eng.uniform(-1, 1);
    std::vector<double> rev(x.rbegin(), x.rend());
    const std::vector<double> a = bandpass(rev, 360.0);
    std::vector<double> b = bandpass(x, 360.0);
    std::reverse(b.begin(), b.end());
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(a[i] == Catch::Approx(b[i]).margin(1e-9));
  }

  SECTION("output length equals input length") {
    for (std::size_t n : {1u, 5u, 150u, 997u}) {
      CHECK(bandpass(std::vector<double>(n, 0.5), 250.0).size() == n);
    }
  }
}
