#pragma once

#include <cstdint>
#include <vector>

#include "puyun/grid.hpp"
#include "puyun/tensor.hpp"

namespace puyun {

// One atmospheric state X^t, [C,H,W] in normalized units.
struct StateTensor {
    int time_index = 0;
    Tensor values;
};

// Per-phase mean fields; the phase key is time_index mod period (the
// day-of-year analog for calendar-free synthetic time).
struct Climatology {
    int period = 0;
    std::vector<Tensor> phase_mean;

    const Tensor& at_time(int time_index) const {
        int p = time_index % period;
        if (p < 0) p += period;
        return phase_mean[static_cast<std::size_t>(p)];
    }
};

struct Dataset {
    GridSpec grid;
    VariableSet variables;
    std::vector<StateTensor> states;
    NormalizationStats stats;
    // Split boundaries: train = [0, train_end), valid = [train_end,
    // valid_end), test = [valid_end, size()).
    int train_end = 0;
    int valid_end = 0;

    int size() const { return static_cast<int>(states.size()); }
    const StateTensor& state(int t) const;
    void validate() const;
};

// (X^{t-1}, X^t) plus the requested ground-truth horizon X^{t+1..t+n}.
struct Sample {
    Tensor prev;
    Tensor cur;
    std::vector<Tensor> targets;
};

Sample sample_pair(const Dataset& ds, int t, int n_targets);

Tensor normalize_state(const Tensor& physical, const NormalizationStats& stats);
Tensor denormalize_state(const Tensor& normalized, const NormalizationStats& stats);

Climatology build_climatology(const Dataset& ds, int period);

// Fixed physical fields driving the synthetic generator, derived
// deterministically from (seed, variables). Scales are per channel so the
// normalization path is exercised by channels of very different magnitude.
struct SyntheticParams {
    std::uint64_t seed = 0;
    double wind_scale = 1.0;      // multiplies the advecting wind
    double diffusion = 0.04;      // explicit diffusion coefficient
    double forcing_scale = 1.0;   // multiplies the seasonal forcing
    int season_period = 40;       // steps per seasonal cycle
    std::vector<double> offset;   // physical offset per channel
    std::vector<double> scale;    // physical scale per channel
    std::vector<double> forcing_amp;    // per channel
    std::vector<double> forcing_phase;  // per channel
    std::vector<double> forcing_lon_phase;

    // Zonal wind at a latitude row (cells per step, eastward positive).
    double zonal_wind(double lat_deg) const;
    // Meridional wind at a cell edge (positive toward increasing row index,
    // i.e. southward); vanishes at the poles.
    double meridional_wind(double edge_lat_deg, double lon_frac) const;
    // Seasonal forcing applied to channel c at step t.
    double forcing(int channel, int t, double lat_deg, double lon_frac) const;

    static SyntheticParams make(std::uint64_t seed, const VariableSet& vars);
};

// Deterministic advection-diffusion dataset with a seasonal cycle;
// normalized with train-split statistics before storage.
Dataset generate_synthetic(const GridSpec& grid, const VariableSet& vars, int t_steps,
                           std::uint64_t seed);
Dataset generate_synthetic(const GridSpec& grid, const VariableSet& vars, int t_steps,
                           const SyntheticParams& params);

}  // namespace puyun
