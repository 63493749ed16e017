#include "puyun/dataset.hpp"

#include <cmath>

#include "puyun/rng.hpp"

namespace puyun {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg2Rad = kPi / 180.0;
constexpr double kTwoPi = 2.0 * kPi;

struct ChannelScales {
    double offset;
    double scale;
};

// Distinct physical magnitudes per channel family: geopotential-like values
// in the tens of thousands down to wind-like values of a few units.
ChannelScales scales_for(const VariableSet& vars, int channel) {
    int idx = 0;
    int var_i = 0;
    for (const auto& v : vars.atmospheric) {
        for (std::size_t li = 0; li < v.levels.size(); ++li) {
            if (idx == channel) {
                static const double base_scale[5] = {5000.0, 10.0, 3.0, 12.0, 12.0};
                static const double base_offset[5] = {50000.0, 50.0, 275.0, 0.0, 0.0};
                const double s = base_scale[var_i % 5] * (1.0 + 0.15 * static_cast<double>(li));
                return {base_offset[var_i % 5], s};
            }
            ++idx;
        }
        ++var_i;
    }
    int surf_i = 0;
    for (std::size_t si = 0; si < vars.surface.size(); ++si) {
        if (idx == channel) {
            static const double surf_scale[4] = {3.0, 2.0, 2.0, 800.0};
            static const double surf_offset[4] = {285.0, 0.0, 0.0, 101325.0};
            return {surf_offset[surf_i % 4], surf_scale[surf_i % 4]};
        }
        ++idx;
        ++surf_i;
    }
    throw ConfigError("channel index out of range");
}

}  // namespace

double SyntheticParams::zonal_wind(double lat_deg) const {
    const double c = std::cos(lat_deg * kDeg2Rad);
    return wind_scale * 0.32 * (0.25 + 0.75 * c * c);
}

double SyntheticParams::meridional_wind(double edge_lat_deg, double lon_frac) const {
    return wind_scale * 0.10 * std::sin(2.0 * edge_lat_deg * kDeg2Rad) *
           (0.5 + 0.5 * std::cos(kTwoPi * lon_frac));
}

double SyntheticParams::forcing(int channel, int t, double lat_deg, double lon_frac) const {
    const std::size_t c = static_cast<std::size_t>(channel);
    const double seasonal =
        std::sin(kTwoPi * static_cast<double>(t) / season_period + forcing_phase[c]);
    const double spatial = std::cos(lat_deg * kDeg2Rad) *
                           (0.6 + 0.4 * std::cos(kTwoPi * lon_frac + forcing_lon_phase[c]));
    return forcing_scale * forcing_amp[c] * seasonal * spatial;
}

SyntheticParams SyntheticParams::make(std::uint64_t seed, const VariableSet& vars) {
    SyntheticParams p;
    p.seed = seed;
    const int c = vars.channels();
    Rng rng(Rng::mix(seed, 0x5f0c));
    for (int i = 0; i < c; ++i) {
        auto sc = scales_for(vars, i);
        p.offset.push_back(sc.offset);
        p.scale.push_back(sc.scale);
        p.forcing_amp.push_back(0.05 + 0.07 * rng.uniform());
        p.forcing_phase.push_back(kTwoPi * rng.uniform());
        p.forcing_lon_phase.push_back(kTwoPi * rng.uniform());
    }
    return p;
}

Dataset generate_synthetic(const GridSpec& grid, const VariableSet& vars, int t_steps,
                           std::uint64_t seed) {
    return generate_synthetic(grid, vars, t_steps, SyntheticParams::make(seed, vars));
}

Dataset generate_synthetic(const GridSpec& grid, const VariableSet& vars, int t_steps,
                           const SyntheticParams& params) {
    if (t_steps < 8) throw ConfigError("generate_synthetic: need at least 8 steps");
    vars.validate();
    const int c = vars.channels();
    const int h = grid.n_lat, w = grid.n_lon;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    // Smooth random initial fields: a latitudinal profile plus a few
    // low-wavenumber modes per channel.
    Rng rng(Rng::mix(params.seed, 0xf1e1d));
    std::vector<std::vector<double>> field(static_cast<std::size_t>(c),
                                           std::vector<double>(plane, 0.0));
    for (int cc = 0; cc < c; ++cc) {
        auto& f = field[static_cast<std::size_t>(cc)];
        const double tilt = 0.3 + 0.3 * rng.uniform();
        struct Mode {
            int k_lon, k_lat;
            double amp, ph_lon, ph_lat;
        };
        std::vector<Mode> modes;
        for (int m = 0; m < 5; ++m) {
            modes.push_back({rng.uniform_int(1, 3), rng.uniform_int(0, 3), 0.35 * rng.normal(),
                             kTwoPi * rng.uniform(), kTwoPi * rng.uniform()});
        }
        for (int i = 0; i < h; ++i) {
            const double lat = grid.latitudes[static_cast<std::size_t>(i)];
            const double ti = h > 1 ? static_cast<double>(i) / (h - 1) : 0.0;
            for (int j = 0; j < w; ++j) {
                const double lon_frac = static_cast<double>(j) / w;
                double v = tilt * std::sin(lat * kDeg2Rad);
                for (const auto& m : modes) {
                    v += m.amp * std::cos(kTwoPi * m.k_lon * lon_frac + m.ph_lon) *
                         std::cos(kPi * m.k_lat * ti + m.ph_lat);
                }
                f[static_cast<std::size_t>(i) * w + j] = v;
            }
        }
    }

    // Precompute edge winds; they are fixed in time.
    std::vector<double> u_row(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) u_row[i] = params.zonal_wind(grid.latitudes[i]);
    std::vector<double> v_edge(static_cast<std::size_t>(h - 1) * w);
    for (int i = 0; i + 1 < h; ++i) {
        const double edge_lat = 0.5 * (grid.latitudes[i] + grid.latitudes[i + 1]);
        for (int j = 0; j < w; ++j) {
            v_edge[static_cast<std::size_t>(i) * w + j] =
                params.meridional_wind(edge_lat, static_cast<double>(j) / w);
        }
    }

    // Evolve with flux-form upwind advection + flux-form diffusion so the
    // grid sum is conserved except for the forcing term.
    std::vector<std::vector<std::vector<double>>> snapshots;
    snapshots.reserve(static_cast<std::size_t>(t_steps));
    std::vector<double> next(plane);
    for (int t = 0; t < t_steps; ++t) {
        snapshots.push_back(field);
        for (int cc = 0; cc < c; ++cc) {
            auto& f = field[static_cast<std::size_t>(cc)];
            for (int i = 0; i < h; ++i) {
                const double u = u_row[i];
                const double lat = grid.latitudes[static_cast<std::size_t>(i)];
                for (int j = 0; j < w; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(i) * w + j;
                    const int je = (j + 1) % w;
                    const int jw = (j + w - 1) % w;
                    // Zonal upwind fluxes across the east/west cell edges.
                    const double fe = u >= 0 ? u * f[static_cast<std::size_t>(i) * w + j]
                                             : u * f[static_cast<std::size_t>(i) * w + je];
                    const double fw = u >= 0 ? u * f[static_cast<std::size_t>(i) * w + jw]
                                             : u * f[static_cast<std::size_t>(i) * w + j];
                    // Meridional upwind fluxes; no flux through the poles.
                    double fs = 0.0, fn = 0.0;
                    if (i + 1 < h) {
                        const double vv = v_edge[static_cast<std::size_t>(i) * w + j];
                        fs = vv >= 0 ? vv * f[idx] : vv * f[static_cast<std::size_t>(i + 1) * w + j];
                    }
                    if (i > 0) {
                        const double vv = v_edge[static_cast<std::size_t>(i - 1) * w + j];
                        fn = vv >= 0 ? vv * f[static_cast<std::size_t>(i - 1) * w + j] : vv * f[idx];
                    }
                    // Diffusion in flux form (replicate rows at the poles
                    // contribute zero flux).
                    double lap = f[static_cast<std::size_t>(i) * w + je] - f[idx];
                    lap += f[static_cast<std::size_t>(i) * w + jw] - f[idx];
                    if (i + 1 < h) lap += f[static_cast<std::size_t>(i + 1) * w + j] - f[idx];
                    if (i > 0) lap += f[static_cast<std::size_t>(i - 1) * w + j] - f[idx];

                    next[idx] = f[idx] + (fw - fe) + (fn - fs) + params.diffusion * lap +
                                params.forcing(cc, t, lat, static_cast<double>(j) / w);
                }
            }
            f = next;
        }
    }

    // Physical units, then train-split normalization statistics.
    Dataset ds;
    ds.grid = grid;
    ds.variables = vars;
    ds.train_end = std::max(3, (t_steps * 7) / 10);
    ds.valid_end = std::max(ds.train_end + 1, (t_steps * 85) / 100);
    ds.valid_end = std::min(ds.valid_end, t_steps - 1);

    NormalizationStats stats;
    stats.mean.assign(static_cast<std::size_t>(c), 0.0);
    stats.stddev.assign(static_cast<std::size_t>(c), 0.0);
    const std::size_t n_train = static_cast<std::size_t>(ds.train_end) * plane;
    for (int cc = 0; cc < c; ++cc) {
        const double off = params.offset[static_cast<std::size_t>(cc)];
        const double sc = params.scale[static_cast<std::size_t>(cc)];
        double s1 = 0.0, s2 = 0.0;
        for (int t = 0; t < ds.train_end; ++t) {
            for (double v : snapshots[static_cast<std::size_t>(t)][static_cast<std::size_t>(cc)]) {
                const double phys = off + sc * v;
                s1 += phys;
                s2 += phys * phys;
            }
        }
        const double mean = s1 / static_cast<double>(n_train);
        const double var = std::max(s2 / static_cast<double>(n_train) - mean * mean, 0.0);
        stats.mean[static_cast<std::size_t>(cc)] = mean;
        stats.stddev[static_cast<std::size_t>(cc)] = std::sqrt(var);
        if (!(stats.stddev[static_cast<std::size_t>(cc)] > 0)) {
            throw NumericError("generate_synthetic: channel has zero variance in train split");
        }
    }
    ds.stats = stats;

    for (int t = 0; t < t_steps; ++t) {
        std::vector<float> vals(static_cast<std::size_t>(c) * plane);
        for (int cc = 0; cc < c; ++cc) {
            const double off = params.offset[static_cast<std::size_t>(cc)];
            const double sc = params.scale[static_cast<std::size_t>(cc)];
            const double mean = stats.mean[static_cast<std::size_t>(cc)];
            const double sd = stats.stddev[static_cast<std::size_t>(cc)];
            const auto& f = snapshots[static_cast<std::size_t>(t)][static_cast<std::size_t>(cc)];
            for (std::size_t p = 0; p < plane; ++p) {
                const double phys = off + sc * f[p];
                vals[static_cast<std::size_t>(cc) * plane + p] =
                    static_cast<float>((phys - mean) / sd);
            }
        }
        ds.states.push_back({t, Tensor::from_vector({c, h, w}, std::move(vals))});
    }
    ds.validate();
    return ds;
}

const StateTensor& Dataset::state(int t) const {
    if (t < 0 || t >= size()) throw UsageError("dataset state index out of range");
    return states[static_cast<std::size_t>(t)];
}

void Dataset::validate() const {
    if (size() < 3) throw DataError("dataset needs at least 3 states");
    const int c = variables.channels();
    for (int t = 0; t < size(); ++t) {
        const auto& st = states[static_cast<std::size_t>(t)];
        if (t > 0 && st.time_index != states[static_cast<std::size_t>(t - 1)].time_index + 1) {
            throw DataError("dataset time indices must increase by 1");
        }
        const auto& s = st.values.shape();
        if (s.size() != 3 || s[0] != c || s[1] != grid.n_lat || s[2] != grid.n_lon) {
            throw DataError("dataset state shape mismatch");
        }
        for (float v : st.values.values()) {
            if (!std::isfinite(v)) throw DataError("dataset contains non-finite values");
        }
    }
    if (train_end < 3 || train_end > valid_end || valid_end > size()) {
        throw DataError("dataset split boundaries invalid");
    }
    stats.validate();
}

Sample sample_pair(const Dataset& ds, int t, int n_targets) {
    if (t < 1 || t > ds.size() - 2) {
        throw UsageError("sample_pair: t=" + std::to_string(t) + " out of range [1, " +
                         std::to_string(ds.size() - 2) + "]");
    }
    if (n_targets < 1 || t + n_targets > ds.size() - 1) {
        throw UsageError("sample_pair: target horizon exceeds dataset end");
    }
    Sample s;
    s.prev = ds.state(t - 1).values;
    s.cur = ds.state(t).values;
    for (int k = 1; k <= n_targets; ++k) s.targets.push_back(ds.state(t + k).values);
    return s;
}

Tensor normalize_state(const Tensor& physical, const NormalizationStats& stats) {
    stats.validate();
    const auto& shape = physical.shape();
    if (shape.size() != 3 || static_cast<std::size_t>(shape[0]) != stats.mean.size()) {
        throw ShapeError("normalize_state: channel count does not match stats");
    }
    const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
    Tensor out = Tensor::zeros(shape);
    const auto& pv = physical.values();
    auto& ov = out.raw_values();
    for (std::size_t cc = 0; cc < stats.mean.size(); ++cc) {
        const double mean = stats.mean[cc], sd = stats.stddev[cc];
        for (std::size_t p = 0; p < plane; ++p) {
            ov[cc * plane + p] = static_cast<float>((pv[cc * plane + p] - mean) / sd);
        }
    }
    return out;
}

Tensor denormalize_state(const Tensor& normalized, const NormalizationStats& stats) {
    stats.validate();
    const auto& shape = normalized.shape();
    if (shape.size() != 3 || static_cast<std::size_t>(shape[0]) != stats.mean.size()) {
        throw ShapeError("denormalize_state: channel count does not match stats");
    }
    const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
    Tensor out = Tensor::zeros(shape);
    const auto& nv = normalized.values();
    auto& ov = out.raw_values();
    for (std::size_t cc = 0; cc < stats.mean.size(); ++cc) {
        const double mean = stats.mean[cc], sd = stats.stddev[cc];
        for (std::size_t p = 0; p < plane; ++p) {
            ov[cc * plane + p] = static_cast<float>(nv[cc * plane + p] * sd + mean);
        }
    }
    return out;
}

Climatology build_climatology(const Dataset& ds, int period) {
    if (period < 1) throw ConfigError("build_climatology: period must be >= 1");
    if (ds.size() < period) {
        throw DataError("build_climatology: dataset shorter than one period");
    }
    const int c = ds.variables.channels();
    const std::size_t n = static_cast<std::size_t>(c) * ds.grid.cells();
    std::vector<std::vector<double>> acc(static_cast<std::size_t>(period),
                                         std::vector<double>(n, 0.0));
    std::vector<int> counts(static_cast<std::size_t>(period), 0);
    for (const auto& st : ds.states) {
        int p = st.time_index % period;
        if (p < 0) p += period;
        auto& a = acc[static_cast<std::size_t>(p)];
        const auto& v = st.values.values();
        for (std::size_t i = 0; i < n; ++i) a[i] += v[i];
        ++counts[static_cast<std::size_t>(p)];
    }
    Climatology clim;
    clim.period = period;
    for (int p = 0; p < period; ++p) {
        if (counts[static_cast<std::size_t>(p)] == 0) {
            throw DataError("build_climatology: phase " + std::to_string(p) + " has no states");
        }
        std::vector<float> mean(n);
        const double inv = 1.0 / counts[static_cast<std::size_t>(p)];
        for (std::size_t i = 0; i < n; ++i) {
            mean[i] = static_cast<float>(acc[static_cast<std::size_t>(p)][i] * inv);
        }
        clim.phase_mean.push_back(
            Tensor::from_vector({c, ds.grid.n_lat, ds.grid.n_lon}, std::move(mean)));
    }
    return clim;
}

}  // namespace puyun
