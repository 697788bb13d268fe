#pragma once

// 3-D binary-mask geometry on anisotropic voxel grids. All distances are
// voxel-center Euclidean distances in physical millimetres.
//
// dilate/erode are exact metric operations (true at v iff some/every voxel
// within radius_mm is true), implemented through a separable squared
// Euclidean distance transform; the straightforward structuring-element
// sweeps live in triage::reference for testing and benchmarking.

#include <cstdint>
#include <vector>

#include "triage/volume_io.hpp"

namespace triage {

struct ComponentSet {
    Grid<std::int32_t> labels;               // 0 = background, 1..count
    int count = 0;
    std::vector<std::int64_t> voxel_counts;  // [id-1], ids ordered by
                                             // (count desc, first linear index asc)
};

struct StructuringElement {
    double radius_mm = 0.0;
    std::vector<std::array<int, 3>> offsets;  // ‖o·spacing‖₂ ≤ radius_mm
};

StructuringElement make_structuring_element(double radius_mm, const std::array<double, 3>& spacing_mm);

ComponentSet connected_components(const BinaryMask& mask, int connectivity = 26);

BinaryMask dilate(const BinaryMask& mask, double radius_mm);
BinaryMask erode(const BinaryMask& mask, double radius_mm);

// Exclusion cylinder radius of the hilar proxy used when no bronchial mask
// is available: vertical axis through the combined-lungs centroid.
inline constexpr double kHilarProxyRadiusMm = 25.0;

BinaryMask peripheral_shell(const BinaryMask& lungs, double depth_mm,
                            const BinaryMask* bronchial = nullptr,
                            double bronchial_margin_mm = 10.0);

// Max over constant-Z slices of the max pairwise in-plane distance between
// voxel centers, plus one in-plane voxel diagonal.
double max_axial_diameter(const std::vector<std::int64_t>& component, const VolumeHeader& header);

// Ratio of smallest to largest principal semi-axis of the voxel-center
// covariance ellipsoid, each semi-axis floored at half a voxel extent.
double roundedness(const std::vector<std::int64_t>& component, const VolumeHeader& header);

// Per-component linear voxel indices, ascending within each component.
std::vector<std::vector<std::int64_t>> component_voxel_lists(const ComponentSet& comps);

// Squared distance from every voxel to the nearest true voxel (+inf when the
// mask is empty). Exposed for reuse by the feature pipeline.
std::vector<double> squared_distance_to_true(const BinaryMask& mask);

// Eigenvalues of a symmetric 3x3 matrix, descending.
std::array<double, 3> symmetric3_eigenvalues(const std::array<std::array<double, 3>, 3>& m);

namespace reference {

// Serial structuring-element sweeps and flood-fill labeling; used as the
// comparison baseline in tests and benchmarks.
BinaryMask dilate(const BinaryMask& mask, double radius_mm);
BinaryMask erode(const BinaryMask& mask, double radius_mm);
ComponentSet connected_components(const BinaryMask& mask, int connectivity = 26);
BinaryMask peripheral_shell(const BinaryMask& lungs, double depth_mm,
                            const BinaryMask* bronchial = nullptr,
                            double bronchial_margin_mm = 10.0);

} // namespace reference

} // namespace triage
