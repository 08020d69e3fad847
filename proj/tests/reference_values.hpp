#pragma once

// Published benchmark figures used as regression oracles.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace viewbench::testing {

inline const std::vector<std::string> kModels = {"CLIP", "DINO", "DINOv2", "DINOv3", "C-RADIOv2", "SigLIP2", "TIPS"};
inline const std::vector<std::size_t> kCapacities = {320000, 640000, 1024000};

/// Mean mIoU per [capacity][model][Easy, Medium, Hard, Extreme].
inline constexpr std::array<std::array<std::array<double, 4>, 7>, 3> kMiouByCapacity = {{
    {{{0.729, 0.725, 0.710, 0.681},
      {0.741, 0.736, 0.712, 0.656},
      {0.738, 0.736, 0.726, 0.709},
      {0.793, 0.788, 0.780, 0.768},
      {0.588, 0.579, 0.539, 0.467},
      {0.506, 0.501, 0.483, 0.443},
      {0.600, 0.590, 0.539, 0.437}}},
    {{{0.745, 0.740, 0.727, 0.694},
      {0.768, 0.761, 0.736, 0.676},
      {0.754, 0.750, 0.740, 0.721},
      {0.803, 0.798, 0.787, 0.771},
      {0.629, 0.615, 0.572, 0.491},
      {0.541, 0.531, 0.511, 0.466},
      {0.644, 0.628, 0.571, 0.453}}},
    {{{0.755, 0.748, 0.734, 0.701},
      {0.782, 0.774, 0.748, 0.686},
      {0.763, 0.758, 0.748, 0.728},
      {0.809, 0.803, 0.790, 0.773},
      {0.653, 0.636, 0.592, 0.506},
      {0.564, 0.551, 0.530, 0.481},
      {0.667, 0.647, 0.588, 0.462}}},
}};

/// Absolute gains per capacity pair (320k->640k, 640k->1024k, 320k->1024k);
/// rows are the seven models then the per-task average, columns Easy,
/// Medium, Hard, Extreme, per-model average.
inline constexpr std::array<std::array<std::array<double, 5>, 8>, 3> kGains = {{
    {{{0.017, 0.016, 0.017, 0.013, 0.016},
      {0.027, 0.025, 0.024, 0.019, 0.024},
      {0.017, 0.014, 0.015, 0.012, 0.014},
      {0.011, 0.010, 0.007, 0.003, 0.008},
      {0.041, 0.036, 0.033, 0.024, 0.034},
      {0.035, 0.030, 0.029, 0.023, 0.029},
      {0.044, 0.038, 0.032, 0.016, 0.033},
      {0.027, 0.024, 0.022, 0.016, 0.022}}},
    {{{0.010, 0.008, 0.007, 0.007, 0.008},
      {0.014, 0.013, 0.012, 0.010, 0.012},
      {0.009, 0.008, 0.008, 0.007, 0.008},
      {0.006, 0.005, 0.003, 0.002, 0.004},
      {0.024, 0.021, 0.019, 0.015, 0.020},
      {0.023, 0.020, 0.019, 0.015, 0.019},
      {0.023, 0.019, 0.017, 0.009, 0.017},
      {0.015, 0.014, 0.012, 0.009, 0.013}}},
    {{{0.026, 0.024, 0.024, 0.020, 0.024},
      {0.041, 0.038, 0.036, 0.030, 0.036},
      {0.025, 0.022, 0.023, 0.019, 0.022},
      {0.016, 0.015, 0.010, 0.005, 0.012},
      {0.065, 0.058, 0.053, 0.039, 0.054},
      {0.058, 0.050, 0.047, 0.038, 0.048},
      {0.067, 0.057, 0.049, 0.025, 0.049},
      {0.043, 0.038, 0.035, 0.025, 0.035}}},
}};

/// Biggest normalized drop per model under the single-reference split.
inline constexpr std::array<double, 7> kBiggestDrop = {-0.0267, -0.0559, -0.0273, -0.0214, -0.0969, -0.0550, -0.1148};

/// Split table as `difficulty,reference_bins,validation_bins` CSV.
inline const std::string kSplitsCsv =
    "difficulty,reference_bins,validation_bins\n"
    "Easy,0;30;60;90,15;45;75\n"
    "Medium,0;45;90,15;30;60;75\n"
    "Hard,0;90,15;30;45;60;75\n"
    "Extreme,0,15;30;45;60;75;90\n";

/// Rounding slack: published gains are differences of unrounded scores,
/// so each cell may sit one unit of the third decimal away. The extra 1e-9
/// absorbs binary representation of decimal inputs.
inline constexpr double kGainTolerance = 0.001 + 1e-9;

}  // namespace viewbench::testing
