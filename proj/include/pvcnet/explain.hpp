#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pvcnet/dataset.hpp"
#include "pvcnet/model.hpp"

namespace pvcnet {

// Per-sample occlusion attention: intensity i is the (normalized) drop in the
// model's output when a zero window centered at i replaces the input there.
struct AttentionMap {
  std::vector<double> intensities;  // in [0,1], same length as the beat
  std::string database_id, record_id, beat_id;
  int window = 0;
};

using Predictor = std::function<double(const std::vector<double>&)>;

inline AttentionMap occlusion_map(const Predictor& predict, std::span<const double> beat,
                                  int window = 5) {
  const int L = static_cast<int>(beat.size());
  if (window < 1) throw Error("occlusion_map: window must be >= 1");
  if (window >= L)
    throw Error("occlusion_map: window " + std::to_string(window) +
                " must be smaller than the beat length " + std::to_string(L));
  const std::vector<double> base(beat.begin(), beat.end());
  const double p0 = predict(base);

  AttentionMap map;
  map.window = window;
  map.intensities.assign(beat.size(), 0.0);
  const int left = (window - 1) / 2;
  const int right = window - 1 - left;
  double peak = 0.0;
  for (int i = 0; i < L; ++i) {
    std::vector<double> occluded = base;
    const int lo = std::max(0, i - left);
    const int hi = std::min(L - 1, i + right);
    std::fill(occluded.begin() + lo, occluded.begin() + hi + 1, 0.0);
    const double drop = std::max(0.0, p0 - predict(occluded));
    map.intensities[i] = drop;
    peak = std::max(peak, drop);
  }
  if (peak > 0.0)
    for (double& v : map.intensities) v /= peak;
  else
    std::fill(map.intensities.begin(), map.intensities.end(), 0.0);
  return map;
}

inline AttentionMap occlusion_map(Model& model, const BeatRecordLine& beat, int window = 5) {
  // admissibility (minimum or fixed length) is checked by the forward pass
  Predictor predict = [&model](const std::vector<double>& samples) {
    Tensor x({1, 1, static_cast<int>(samples.size())}, samples);
    return model.forward(nullptr, x, BatchNormMode::infer).value();
  };
  AttentionMap map = occlusion_map(predict, beat.samples, window);
  map.database_id = beat.db;
  map.beat_id = beat.id;
  return map;
}

// Two columns: sample value, attention intensity.
inline void write_attention_csv(std::ostream& os, std::span<const double> beat,
                                const AttentionMap& map) {
  if (beat.size() != map.intensities.size())
    throw Error("attention map length does not match the beat");
  os << "sample,intensity\n";
  char buf[64];
  for (std::size_t i = 0; i < beat.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", beat[i], map.intensities[i]);
    os << buf;
  }
}

}  // namespace pvcnet
