#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "r2n2/deform.hpp"
#include "r2n2/field.hpp"

namespace r2n2::data {

// Image pair with known ground truth, standing in for acquired series.
// `truth` is the field a perfect registration of (fixed, moving) recovers:
// fixed = warp(moving, truth), and the landmark pairs satisfy
// lm_moving[i] = lm_fixed[i] + truth(lm_fixed[i]) exactly.
struct SyntheticCase {
    Image2D fixed;
    Image2D moving;
    DisplacementField truth;
    std::vector<std::array<double, 2>> lm_fixed;   // normalized (x, y)
    std::vector<std::array<double, 2>> lm_moving;  // normalized (x, y)
    std::uint64_t seed = 0;
};

// Procedural texture (smooth blobs over a ramp plus a high-contrast
// diaphragm-like interface) deformed by a random sum of Gaussian local
// deformations whose peak magnitude equals deform_scale. Landmarks sit on
// high-gradient pixels of the fixed image.
SyntheticCase generate_case(int resolution, double deform_scale, int n_blobs,
                            std::uint64_t seed, int n_landmarks = 20);

// Landmark CSV: one "x,y" row per landmark, pixel coordinates.
void save_landmarks_csv(const std::filesystem::path& path,
                        const std::vector<std::array<double, 2>>& normalized, const Grid2D& grid);
std::vector<std::array<double, 2>> load_landmarks_csv(const std::filesystem::path& path,
                                                      const Grid2D& grid);

// On-disk case layout helpers (fixed.pgm, moving.pgm, truth.r2nf,
// landmarks_fixed.csv, landmarks_moving.csv under one directory).
void save_case(const SyntheticCase& c, const std::filesystem::path& dir);
SyntheticCase load_case(const std::filesystem::path& dir);

}  // namespace r2n2::data
