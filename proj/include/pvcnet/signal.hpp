#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pvcnet/tensor.hpp"

namespace pvcnet {

// Reference window: 150 samples at 360 Hz, 50 of them before the R peak.
constexpr double kReferenceLength = 150.0;
constexpr double kReferencePre = 50.0;
constexpr double kReferenceRate = 360.0;

inline long long round_half_even(double x) {
  const double fl = std::floor(x);
  const double frac = x - fl;
  const long long base = static_cast<long long>(fl);
  if (frac > 0.5) return base + 1;
  if (frac < 0.5) return base;
  return base % 2 == 0 ? base : base + 1;
}

// Beat window length at a given sampling rate, scaled from the reference and
// rounded half to even.
inline long long window_length(double fs) {
  if (!(fs > 0.0)) throw Error("window_length: sampling rate must be positive");
  return round_half_even(kReferenceLength * fs / kReferenceRate);
}

inline long long pre_samples(double fs) {
  if (!(fs > 0.0)) throw Error("pre_samples: sampling rate must be positive");
  return round_half_even(kReferencePre * fs / kReferenceRate);
}

// ---------------------------------------------------------------------------
// Butterworth band-pass, 0.4-50 Hz by default, realized as biquad sections.
// Applied forward and backward (zero phase) with odd-reflection padding.
// ---------------------------------------------------------------------------
struct Biquad {
  double b0, b1, b2;  // numerator
  double a1, a2;      // denominator, a0 normalized to 1
};

class BandpassFilter {
 public:
  static BandpassFilter design(double fs, double lo = 0.4, double hi = 50.0, int order = 4) {
    if (!(fs > 2.0 * hi))
      throw Error("bandpass: sampling rate " + std::to_string(fs) +
                  " Hz too low, the " + std::to_string(hi) +
                  " Hz edge must sit below Nyquist (need fs > " + std::to_string(2.0 * hi) +
                  ")");
    BandpassFilter f;
    f.fs_ = fs;
    f.order_ = order;

    using cd = std::complex<double>;
    const double pi = 3.14159265358979323846;
    // bilinear pre-warped analog edges
    const double c = 2.0 * fs;
    const double w1 = c * std::tan(pi * lo / fs);
    const double w2 = c * std::tan(pi * hi / fs);
    const double bw = w2 - w1;
    const double w0 = std::sqrt(w1 * w2);

    // analog prototype poles on the unit circle, upper half plane only;
    // conjugates are implied by the real biquad denominators
    std::vector<cd> digital;
    for (int k = 1; k <= order; ++k) {
      const double theta = pi * (2.0 * k + order - 1.0) / (2.0 * order);
      const cd proto(std::cos(theta), std::sin(theta));
      if (proto.imag() < 0.0) continue;
      // low-pass to band-pass: each prototype pole splits in two
      const cd d = proto * (bw / 2.0);
      const cd rad = std::sqrt(d * d - cd(w0 * w0, 0.0));
      for (const cd s : {d + rad, d - rad}) {
        digital.push_back((cd(c, 0.0) + s) / (cd(c, 0.0) - s));  // bilinear
      }
    }
    // one zero at z=1 and one at z=-1 per section: numerator (z^2 - 1)
    for (const cd& p : digital)
      f.sections_.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});

    // normalize to unit gain at the warped center frequency
    const double wc = 2.0 * std::atan(w0 / c);
    double mag = 1.0;
    for (const Biquad& s : f.sections_) mag *= section_magnitude(s, wc);
    f.gain_ = 1.0 / mag;
    return f;
  }

  // |H(e^{j 2 pi f / fs})| of one forward pass
  double magnitude(double freq_hz) const {
    const double w = 2.0 * 3.14159265358979323846 * freq_hz / fs_;
    double mag = gain_;
    for (const Biquad& s : sections_) mag *= section_magnitude(s, w);
    return mag;
  }

  // single pass, zero initial state, transposed direct form II
  std::vector<double> one_pass(std::span<const double> x) const {
    std::vector<double> y(x.begin(), x.end());
    for (const Biquad& s : sections_) {
      double z1 = 0.0, z2 = 0.0;
      for (double& v : y) {
        const double in = v;
        const double out = s.b0 * in + z1;
        z1 = s.b1 * in - s.a1 * out + z2;
        z2 = s.b2 * in - s.a2 * out;
        v = out;
      }
    }
    for (double& v : y) v *= gain_;
    return y;
  }

  // forward-backward pass with odd-reflection padding of 3x the pole count
  std::vector<double> zero_phase(std::span<const double> x) const {
    if (x.empty()) return {};
    const std::size_t n = x.size();
    const std::size_t pad = std::min<std::size_t>(3 * 2 * order_, n > 1 ? n - 1 : 0);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    std::vector<double> y = one_pass(ext);
    std::reverse(y.begin(), y.end());
    y = one_pass(y);
    std::reverse(y.begin(), y.end());
    return {y.begin() + pad, y.begin() + pad + n};
  }

  double sampling_rate() const { return fs_; }
  const std::vector<Biquad>& sections() const { return sections_; }

 private:
  static double section_magnitude(const Biquad& s, double w) {
    using cd = std::complex<double>;
    const cd z = std::polar(1.0, w);
    const cd z2 = z * z;
    return std::abs((s.b0 * z2 + s.b1 * z + s.b2) / (z2 + s.a1 * z + s.a2));
  }

  double fs_ = 0.0;
  int order_ = 4;
  double gain_ = 1.0;
  std::vector<Biquad> sections_;
};

// Zero-phase 0.4-50 Hz band-pass. Requires fs > 100 Hz.
inline std::vector<double> bandpass(std::span<const double> samples, double fs) {
  if (!(fs > 100.0))
    throw Error("bandpass: sampling rate must exceed 100 Hz, got " + std::to_string(fs));
  return BandpassFilter::design(fs).zero_phase(samples);
}

// ---------------------------------------------------------------------------
// beat extraction
// ---------------------------------------------------------------------------
struct RawRecording {
  std::vector<double> samples;  // millivolts
  double fs = 0.0;
  std::vector<long long> r_peaks;  // sample indices, strictly increasing
  std::vector<int> beat_labels;    // aligned to r_peaks, 1 = PVC
  std::string record_id, database_id;

  void validate() const {
    if (!(fs > 0.0)) throw Error("recording " + record_id + ": sampling rate must be positive");
    if (r_peaks.size() != beat_labels.size())
      throw Error("recording " + record_id + ": " + std::to_string(r_peaks.size()) +
                  " r-peaks vs " + std::to_string(beat_labels.size()) + " labels");
    for (std::size_t i = 0; i < r_peaks.size(); ++i) {
      if (i > 0 && r_peaks[i] <= r_peaks[i - 1])
        throw Error("recording " + record_id + ": r-peaks must be strictly increasing");
      if (r_peaks[i] < 0 || r_peaks[i] >= static_cast<long long>(samples.size()))
        throw Error("recording " + record_id + ": r-peak " + std::to_string(r_peaks[i]) +
                    " outside the signal");
      if (beat_labels[i] != 0 && beat_labels[i] != 1)
        throw Error("recording " + record_id + ": labels must be 0 or 1");
    }
  }
};

struct BeatWindow {
  std::vector<double> samples;
  double fs = 0.0;
  int label = 0;
  std::string database_id, record_id;
  long long r_sample = 0;
};

// Window anchored at an R peak: pre samples before it, window_length(fs) in
// total. Returns nothing (with a reason) when the window does not fit.
inline std::optional<BeatWindow> extract_beat(const RawRecording& rec, long long r_sample,
                                              int label, std::string* skip_reason = nullptr) {
  const long long pre = pre_samples(rec.fs);
  const long long total = window_length(rec.fs);
  const long long post = total - pre - 1;
  const long long lo = r_sample - pre;
  const long long hi = r_sample + post;
  if (lo < 0 || hi >= static_cast<long long>(rec.samples.size())) {
    if (skip_reason)
      *skip_reason = "beat at sample " + std::to_string(r_sample) + " needs [" +
                     std::to_string(lo) + ", " + std::to_string(hi) +
                     "], recording has " + std::to_string(rec.samples.size()) + " samples";
    return std::nullopt;
  }
  BeatWindow w;
  w.samples.assign(rec.samples.begin() + lo, rec.samples.begin() + hi + 1);
  w.fs = rec.fs;
  w.label = label;
  w.database_id = rec.database_id;
  w.record_id = rec.record_id;
  w.r_sample = r_sample;
  return w;
}

// Min-max scaling into [-1, 1]; a flat window maps to all zeros.
inline std::vector<double> normalize(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (out.empty()) return out;
  double lo = out[0], hi = out[0];
  for (double v : out) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  const double span = hi - lo;
  for (double& v : out) v = 2.0 * (v - lo) / span - 1.0;
  return out;
}

}  // namespace pvcnet
