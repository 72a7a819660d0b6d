#pragma once

// Digital correction of channel mismatches: subtract the offset, divide by
// the gain, then re-interpolate each channel's samples to their nominal
// instants with a Hann-windowed sinc fractional-delay filter.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tiadc/converter.hpp"
#include "tiadc/errors.hpp"
#include "tiadc/mismatch_estimate.hpp"

namespace tiadc {

inline constexpr std::size_t kDefaultInterpolatorTaps = 32;

inline std::vector<double> compensate_offset(std::span<const double> y, double offset) {
    std::vector<double> out(y.begin(), y.end());
    for (double& v : out) v -= offset;
    return out;
}

inline std::vector<double> compensate_gain(std::span<const double> y, double gain) {
    if (!(gain > 0.0)) throw InputError("compensate_gain: gain must be > 0");
    std::vector<double> out(y.begin(), y.end());
    for (double& v : out) v /= gain;
    return out;
}

/// 2L+1-tap kernel that evaluates a uniformly sampled sequence at
/// position n - shift (shift in samples, |shift| < 0.5). Taps are
/// normalized to unit DC gain.
class FractionalDelay {
public:
    FractionalDelay(double shift, std::size_t half_taps) : half_(half_taps), taps_(2 * half_taps + 1) {
        if (!(std::abs(shift) < 0.5)) {
            throw DivergenceError("fractional delay |shift| = " + std::to_string(std::abs(shift)) + " >= 0.5");
        }
        if (half_taps < 4) throw InputError("fractional delay needs L >= 4");
        const double width = static_cast<double>(half_taps) + 1.0;
        double sum = 0.0;
        for (std::size_t i = 0; i < taps_.size(); ++i) {
            // Tap i multiplies x[n + j], j = i - L, at distance j + shift from
            // the evaluation point.
            const double x = static_cast<double>(i) - static_cast<double>(half_taps) + shift;
            const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * x / width));
            taps_[i] = sinc(x) * w;
            sum += taps_[i];
        }
        for (double& t : taps_) t /= sum;
    }

    std::size_t half_taps() const { return half_; }
    std::span<const double> taps() const { return taps_; }

    /// Interpolated value at n - shift; samples outside x count as zero.
    double at(std::span<const double> x, std::size_t n) const {
        const long size = static_cast<long>(x.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < taps_.size(); ++i) {
            const long idx = static_cast<long>(n) + static_cast<long>(i) - static_cast<long>(half_);
            if (idx >= 0 && idx < size) acc += taps_[i] * x[static_cast<std::size_t>(idx)];
        }
        return acc;
    }

private:
    static double sinc(double x) {
        if (x == 0.0) return 1.0;
        const double px = std::numbers::pi * x;
        return std::sin(px) / px;
    }

    std::size_t half_;
    std::vector<double> taps_;
};

/// A corrected stream whose first and last `transient` samples lean on
/// zero padding and must not enter metrics.
struct CorrectedStream {
    std::vector<double> samples;
    std::size_t transient = 0;

    bool is_transient(std::size_t i) const { return i < transient || i + transient >= samples.size(); }

    std::span<const double> valid() const {
        if (samples.size() <= 2 * transient) return {};
        return std::span(samples).subspan(transient, samples.size() - 2 * transient);
    }
};

/// Resamples y at positions k - shift for every k.
inline CorrectedStream compensate_timing(std::span<const double> y, double shift,
                                         std::size_t half_taps = kDefaultInterpolatorTaps) {
    const FractionalDelay fd(shift, half_taps);
    CorrectedStream out;
    out.transient = half_taps;
    out.samples.resize(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) out.samples[k] = fd.at(y, k);
    return out;
}

struct CalibrationStages {
    bool offset = true;
    bool gain = true;
    bool timing = true;

    bool operator==(const CalibrationStages&) const = default;
};

/// Offset, then gain per channel, interleave, then move every sample of
/// channel m from n + r_m back to n by interpolating the interleaved stream
/// at n - r_m. Neighbouring channels enter the interpolation with their own
/// (smaller-order) skew, so the correction is exact to first order in r.
inline CorrectedStream calibrate(const ChannelOutputs& out, const MismatchEstimate& est,
                                 std::size_t half_taps = kDefaultInterpolatorTaps,
                                 CalibrationStages stages = {}) {
    const std::size_t m_ch = out.m_channels();
    if (est.offsets_v.size() != m_ch || est.gains.size() != m_ch || est.rel_timing.size() != m_ch) {
        throw InputError("calibrate: estimate covers " + std::to_string(est.gains.size()) + " channels, data has " +
                         std::to_string(m_ch));
    }
    std::vector<std::vector<double>> fixed(m_ch);
    for (std::size_t m = 0; m < m_ch; ++m) {
        fixed[m] = out.per_channel[m];
        if (stages.offset) fixed[m] = compensate_offset(fixed[m], est.offsets_v[m]);
        if (stages.gain) fixed[m] = compensate_gain(fixed[m], est.gains[m]);
    }
    CorrectedStream result;
    result.samples = interleave(std::span(fixed));
    if (!stages.timing) return result;

    const std::vector<double> x = result.samples;
    result.transient = half_taps;
    for (std::size_t m = 0; m < m_ch; ++m) {
        const FractionalDelay fd(est.rel_timing[m], half_taps);
        for (std::size_t n = m; n < x.size(); n += m_ch) result.samples[n] = fd.at(x, n);
    }
    return result;
}

}  // namespace tiadc
