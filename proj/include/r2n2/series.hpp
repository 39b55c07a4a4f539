#pragma once

#include <filesystem>
#include <vector>

#include "r2n2/field.hpp"
#include "r2n2/synth.hpp"

namespace r2n2::data {

// Plain-text series manifest:
//   reference <index>
//   image <path> [landmarks <path>]
// Paths are taken relative to the manifest location. The reference image is
// the fixed image; every other image registers onto it.
struct SeriesManifest {
    std::filesystem::path root;
    int reference = 0;
    std::vector<std::filesystem::path> images;
    std::vector<std::filesystem::path> landmark_files;  // empty path when absent
};

struct LoadedSeries {
    SeriesManifest manifest;
    std::vector<Image2D> images;
    std::vector<std::vector<std::array<double, 2>>> landmarks;  // normalized; may be empty
    // (reference, other) index pairs in series order
    std::vector<std::pair<int, int>> registration_pairs() const;
};

LoadedSeries load_series(const std::filesystem::path& manifest_path);

}  // namespace r2n2::data
