#include "puyun/grid.hpp"

#include <cmath>
#include <numeric>
#include <set>

namespace puyun {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg2Rad = kPi / 180.0;

std::vector<double> row_weights(const std::vector<double>& lats) {
    const std::size_t h = lats.size();
    std::vector<double> w(h, 1.0);
    if (h == 1) return w;
    for (std::size_t i = 0; i < h; ++i) {
        const double lat = lats[i];
        if (std::abs(std::abs(lat) - 90.0) < 1e-9) {
            // Pole row: half-cell average of cos over [90 - delta/2, 90],
            // scaled so interior rows reduce to plain cos(lat).
            const double neighbor = i == 0 ? lats[1] : lats[h - 2];
            const double delta = std::abs(lat - neighbor) * kDeg2Rad;
            w[i] = (std::sin(kPi / 2) - std::sin(kPi / 2 - delta / 2)) / (2 * std::sin(delta / 2));
        } else {
            w[i] = std::cos(lat * kDeg2Rad);
        }
    }
    return w;
}

void normalize_unit_mean(std::vector<double>& w) {
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    if (!(mean > 0)) throw ConfigError("grid weights: degenerate latitude layout");
    for (double& v : w) v /= mean;
}

}  // namespace

GridSpec GridSpec::make(int n_lat, int n_lon) {
    if (n_lat < 2 || n_lon < 2) throw ConfigError("make_grid: need n_lat >= 2 and n_lon >= 2");
    std::vector<double> lats(static_cast<std::size_t>(n_lat));
    const double step = 180.0 / (n_lat - 1);
    for (int i = 0; i < n_lat; ++i) lats[i] = 90.0 - step * i;
    lats.front() = 90.0;
    lats.back() = -90.0;
    return from_latitudes(std::move(lats), n_lon);
}

GridSpec GridSpec::from_latitudes(std::vector<double> latitudes, int n_lon) {
    if (latitudes.empty() || n_lon < 1) throw ConfigError("grid: degenerate sizes");
    for (std::size_t i = 0; i < latitudes.size(); ++i) {
        if (latitudes[i] > 90.0 || latitudes[i] < -90.0) {
            throw ConfigError("grid: latitude out of [-90, 90]");
        }
        if (i > 0 && latitudes[i] >= latitudes[i - 1]) {
            throw ConfigError("grid: latitudes must be strictly descending");
        }
    }
    GridSpec g;
    g.n_lat = static_cast<int>(latitudes.size());
    g.n_lon = n_lon;
    g.weights = row_weights(latitudes);
    g.latitudes = std::move(latitudes);
    normalize_unit_mean(g.weights);
    return g;
}

std::pair<int, int> parse_grid_size(const std::string& s) {
    auto pos = s.find('x');
    if (pos == std::string::npos) pos = s.find('X');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= s.size()) {
        throw UsageError("grid size must look like 33x64, got '" + s + "'");
    }
    try {
        int h = std::stoi(s.substr(0, pos));
        int w = std::stoi(s.substr(pos + 1));
        return {h, w};
    } catch (const std::exception&) {
        throw UsageError("grid size must look like 33x64, got '" + s + "'");
    }
}

int VariableSet::channels() const {
    int c = 0;
    for (const auto& v : atmospheric) c += static_cast<int>(v.levels.size());
    c += static_cast<int>(surface.size());
    return c;
}

std::vector<std::string> VariableSet::channel_names() const {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(channels()));
    for (const auto& v : atmospheric) {
        for (int level : v.levels) names.push_back(v.name + "@" + std::to_string(level));
    }
    for (const auto& s : surface) names.push_back(s);
    return names;
}

int VariableSet::channel_index(const std::string& name) const {
    const auto names = channel_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    throw ConfigError("unknown channel '" + name + "'");
}

void VariableSet::validate() const {
    if (channels() < 1) throw ConfigError("variable set has no channels");
    const auto names = channel_names();
    std::set<std::string> seen(names.begin(), names.end());
    if (seen.size() != names.size()) throw ConfigError("variable set has duplicate channel names");
}

VariableSet VariableSet::desk_default() {
    VariableSet v;
    v.atmospheric = {{"z", {1000, 850, 500, 200}}};
    v.surface = {"t2m", "u10", "v10", "msl"};
    return v;
}

VariableSet VariableSet::paper_scale() {
    VariableSet v;
    const std::vector<int> levels = {50,  100, 150, 200, 250, 300, 400,
                                     500, 600, 700, 850, 925, 1000};
    v.atmospheric = {{"z", levels}, {"r", levels}, {"t", levels}, {"u", levels}, {"v", levels}};
    v.surface = {"t2m", "u10", "v10", "msl"};
    return v;
}

VariableSet VariableSet::from_channel_count(int c) {
    if (c < 1) throw ConfigError("channel count must be positive");
    if (c == 8) return desk_default();
    if (c == 69) return paper_scale();
    VariableSet v;
    if (c < 5) {
        const std::vector<std::string> pool = {"t2m", "u10", "v10", "msl"};
        for (int i = 0; i < c; ++i) v.surface.push_back(pool[static_cast<std::size_t>(i)]);
        return v;
    }
    VariableSet::Atmospheric z{"z", {}};
    // Levels descend from 1000 hPa in fixed decrements.
    for (int i = 0; i < c - 4; ++i) z.levels.push_back(1000 - i * 50);
    v.atmospheric = {z};
    v.surface = {"t2m", "u10", "v10", "msl"};
    return v;
}

}  // namespace puyun
