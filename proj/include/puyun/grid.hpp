#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "puyun/errors.hpp"

namespace puyun {

// Latitude/longitude geometry plus the per-row area weights a_i used by the
// loss and the verification metrics. Weights are normalized so their mean
// over all H*W grid cells is exactly 1.
struct GridSpec {
    int n_lat = 0;
    int n_lon = 0;
    std::vector<double> latitudes;  // degrees, strictly descending
    std::vector<double> weights;    // a_i per latitude row, unit mean

    // Equiangular layout including both poles.
    static GridSpec make(int n_lat, int n_lon);
    // Arbitrary descending latitude list (pole rows get the half-cell
    // sin-difference weight, everything else plain cos).
    static GridSpec from_latitudes(std::vector<double> latitudes, int n_lon);

    std::size_t cells() const { return static_cast<std::size_t>(n_lat) * n_lon; }
};

// Parses "33x64" style grid size strings.
std::pair<int, int> parse_grid_size(const std::string& s);

// Channel catalog: atmospheric variables spread over pressure levels plus
// surface variables, with a gap-free name@level -> index bijection.
struct VariableSet {
    struct Atmospheric {
        std::string name;
        std::vector<int> levels;
    };

    std::vector<Atmospheric> atmospheric;
    std::vector<std::string> surface;

    int channels() const;
    std::vector<std::string> channel_names() const;
    int channel_index(const std::string& name) const;
    void validate() const;

    // 1 atmospheric variable x 4 levels + 4 surface analogs (C=8).
    static VariableSet desk_default();
    // 5 variables x 13 levels + 4 surface (C=69).
    static VariableSet paper_scale();
    // Generic layout for a requested channel count.
    static VariableSet from_channel_count(int c);
};

struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    void validate() const {
        if (mean.size() != stddev.size()) throw ConfigError("normalization stats size mismatch");
        for (double s : stddev) {
            if (!(s > 0)) throw ConfigError("normalization stats: stddev must be positive");
        }
    }
};

}  // namespace puyun
