#ifndef LACUNA_PHANTOM_HPP
#define LACUNA_PHANTOM_HPP

#include <array>
#include <cstdint>

#include "lacuna/burden.hpp"
#include "lacuna/preproc.hpp"
#include "lacuna/volume.hpp"

namespace lacuna {

struct PhantomConfig {
  std::array<int, 3> dims{64, 64, 64};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<int, 2> lacune_count_range{0, 8};
  std::array<double, 2> lacune_diameter_range_mm{3.0, 10.0};
  std::array<int, 2> mimic_count_range{0, 6};
  std::array<double, 2> mimic_diameter_range_mm{1.0, 2.5};
  double noise_sigma = 0.05;       // fraction of tissue contrast
  double bias_amplitude = 0.3;
  uint64_t seed = 0;

  void validate() const;
};

/// Synthetic co-registered T1w/FLAIR pair with ground truth.
struct PhantomSample {
  Volume3D t1;
  Volume3D flair;
  Volume3D lacune_mask;
  LabelVolume region_atlas;  // octant regions 1..8, 0 outside brain
  BrainMasks masks;
  int true_count = 0;
  BurdenCategory true_category = BurdenCategory::C0;
};

/// Region labels the generator biases lacune placement toward (p=0.8).
constexpr std::array<int, 2> kPriorHighRegions{2, 7};
constexpr double kPriorHighProbability = 0.8;

/// Deterministic for a fixed cfg.seed.
PhantomSample generate_phantom(const PhantomConfig& cfg);

}  // namespace lacuna

#endif
