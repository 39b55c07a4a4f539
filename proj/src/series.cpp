#include "r2n2/series.hpp"

#include <fstream>
#include <sstream>

#include "r2n2/errors.hpp"
#include "r2n2/field_io.hpp"

namespace r2n2::data {

std::vector<std::pair<int, int>> LoadedSeries::registration_pairs() const {
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < (int)images.size(); ++i)
        if (i != manifest.reference) pairs.emplace_back(manifest.reference, i);
    return pairs;
}

LoadedSeries load_series(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open manifest: " + manifest_path.string());

    LoadedSeries series;
    series.manifest.root = manifest_path.parent_path();
    bool have_reference = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        std::string key;
        row >> key;
        if (key == "reference") {
            if (!(row >> series.manifest.reference))
                throw validation_error("manifest line " + std::to_string(lineno) +
                                       ": bad reference index");
            have_reference = true;
        } else if (key == "image") {
            std::string img, tag, lm;
            if (!(row >> img))
                throw validation_error("manifest line " + std::to_string(lineno) +
                                       ": missing image path");
            series.manifest.images.emplace_back(img);
            if (row >> tag) {
                if (tag != "landmarks" || !(row >> lm))
                    throw validation_error("manifest line " + std::to_string(lineno) +
                                           ": expected 'landmarks <path>'");
                series.manifest.landmark_files.emplace_back(lm);
            } else {
                series.manifest.landmark_files.emplace_back();
            }
        } else {
            throw validation_error("manifest line " + std::to_string(lineno) +
                                   ": unknown directive '" + key + "'");
        }
    }
    if (series.manifest.images.empty())
        throw validation_error("manifest lists no images: " + manifest_path.string());
    if (!have_reference || series.manifest.reference < 0 ||
        series.manifest.reference >= (int)series.manifest.images.size())
        throw validation_error("manifest reference index out of range: " +
                               manifest_path.string());

    for (const auto& rel : series.manifest.images) {
        const auto path = series.manifest.root / rel;
        if (!std::filesystem::exists(path)) throw io_error("missing image file: " + path.string());
        series.images.push_back(load_pgm(path));
    }
    const Grid2D& g0 = series.images.front().grid;
    for (std::size_t i = 1; i < series.images.size(); ++i)
        if (!series.images[i].grid.same_extent(g0))
            throw validation_error("series images differ in resolution: " +
                                   series.manifest.images[i].string());

    std::size_t landmark_rows = 0;
    bool saw_landmarks = false;
    for (std::size_t i = 0; i < series.manifest.images.size(); ++i) {
        const auto& lm_rel = series.manifest.landmark_files[i];
        if (lm_rel.empty()) {
            series.landmarks.emplace_back();
            continue;
        }
        const auto path = series.manifest.root / lm_rel;
        if (!std::filesystem::exists(path))
            throw io_error("missing landmark file: " + path.string());
        series.landmarks.push_back(load_landmarks_csv(path, g0));
        if (!saw_landmarks) {
            landmark_rows = series.landmarks.back().size();
            saw_landmarks = true;
        } else if (series.landmarks.back().size() != landmark_rows) {
            throw validation_error("landmark row count mismatch: " + path.string());
        }
    }
    return series;
}

}  // namespace r2n2::data
