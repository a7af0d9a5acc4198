#ifndef LACUNA_EVAL_HPP
#define LACUNA_EVAL_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lacuna/burden.hpp"
#include "lacuna/volume.hpp"

namespace lacuna {

struct Component {
  int id = 0;  // dense 1..K
  size_t voxel_count = 0;
  std::array<double, 3> centroid_mm{};
  std::vector<size_t> voxels;  // linear indices into the label volume

  /// Diameter of the sphere with the same voxel volume, in mm.
  double equivalent_diameter_mm(const std::array<double, 3>& spacing) const;
};

struct ComponentSet {
  LabelVolume labels;  // 0 background, component id elsewhere
  std::vector<Component> components;
  size_t count() const { return components.size(); }
};

/// Two-pass union-find connected-component labeling. Connectivity 26 or 6.
ComponentSet connected_components(const Volume3D& mask, int connectivity = 26);

struct SensitivityResult {
  size_t detected = 0;
  size_t total = 0;
  std::optional<double> sensitivity;  // absent when total == 0
  size_t fp_count = 0;
};

/// How a predicted component is matched to a ground-truth component.
enum class DetectionRule { AnyVoxel, CentroidInside, IoU };

/// Under AnyVoxel (default), a ground-truth component is detected iff any of
/// its voxels is covered by a predicted component, and a predicted component
/// is a false positive iff it overlaps no ground-truth component.
/// CentroidInside matches on the predicted component's centroid voxel; IoU
/// requires intersection-over-union >= iou_threshold.
SensitivityResult instance_sensitivity(const ComponentSet& pred, const ComponentSet& gt,
                                       DetectionRule rule = DetectionRule::AnyVoxel,
                                       double iou_threshold = 0.25);

using Confusion3 = std::array<std::array<long, 3>, 3>;  // [true][predicted]

Confusion3 confusion_matrix(const std::vector<std::pair<BurdenCategory, BurdenCategory>>& pairs);

/// Balanced classification accuracy: mean of per-class recalls.
double bca(const Confusion3& confusion);

double confusion_accuracy(const Confusion3& confusion);

/// Per-category round-robin assignment after a seeded shuffle. Returns the
/// fold index (0..k-1) of each item, in input order.
std::vector<int> stratified_kfold(const std::vector<std::pair<std::string, BurdenCategory>>& items,
                                  int k, uint64_t seed);

struct TTestResult {
  double t = 0.0;
  long dof = 0;
  double p_two_sided = 1.0;
};

/// Paired two-sided t-test on equal-length samples.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

/// Regularized incomplete beta I_x(a,b), continued fraction to 1e-12.
double regularized_incomplete_beta(double a, double b, double x);

}  // namespace lacuna

#endif
