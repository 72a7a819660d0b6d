#pragma once

// Reference-channel mismatch identification.
//
// The reference ADC shares its clock with one selected channel, so over a
// capture both see the same input at (nominally) the same instants:
//
//   offset  o_m = mean(y_m) - mean(y_ref)
//   gain    g_m = sqrt(sum y_m^2 / sum y_ref^2)           (offsets removed)
//   timing  from the ratio of mean first differences against the predecessor
//           channel m-1, once with y_m and once with y_ref.
//
// Timing sign convention: a channel samples at nominal + skew. A positive
// skew (late sample) makes |y_m - y_prev| larger on average than
// |y_ref - y_prev|, so
//
//   skew_m / Ts  ~=  E|y_m - y_prev| / E|y_ref - y_prev| - 1.
//
// difference_ratio_statistic() returns 1 - ratio, which is positive for an
// early (advanced) sampling clock; estimate_timing() negates it.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tiadc/calibration.hpp"
#include "tiadc/converter.hpp"
#include "tiadc/errors.hpp"
#include "tiadc/mismatch_estimate.hpp"

namespace tiadc {

/// How first differences are aggregated in the timing estimator.
enum class DifferenceMode {
    absolute,  ///< mean |a - b|; slopes of either sign add up
    signed_,   ///< mean (a - b); cancels over a symmetric signal
};

namespace detail {

inline void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw InputError(std::string(what) + ": stream lengths differ (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    }
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

inline double estimate_offset(std::span<const double> y_m, std::span<const double> y_ref) {
    detail::require_same_length(y_m, y_ref, "estimate_offset");
    if (y_m.empty()) throw InputError("estimate_offset: empty streams");
    return detail::mean(y_m) - detail::mean(y_ref);
}

inline double estimate_gain(std::span<const double> y_m, std::span<const double> y_ref) {
    detail::require_same_length(y_m, y_ref, "estimate_gain");
    double p_m = 0.0;
    double p_ref = 0.0;
    for (std::size_t k = 0; k < y_m.size(); ++k) {
        p_m += y_m[k] * y_m[k];
        p_ref += y_ref[k] * y_ref[k];
    }
    if (!(p_ref > 0.0)) throw DegenerateSignalError("estimate_gain: reference stream has zero power");
    return std::sqrt(p_m / p_ref);
}

/// 1 - E{d(y_m, y_prev)} / E{d(y_ref, y_prev)} with d the configured
/// difference.
inline double difference_ratio_statistic(std::span<const double> y_m, std::span<const double> y_prev,
                                         std::span<const double> y_ref,
                                         DifferenceMode mode = DifferenceMode::absolute) {
    detail::require_same_length(y_m, y_prev, "estimate_timing");
    detail::require_same_length(y_m, y_ref, "estimate_timing");
    if (y_m.size() < 2) throw InputError("estimate_timing: need at least 2 samples");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < y_m.size(); ++k) {
        const double a = y_m[k] - y_prev[k];
        const double b = y_ref[k] - y_prev[k];
        num += mode == DifferenceMode::absolute ? std::abs(a) : a;
        den += mode == DifferenceMode::absolute ? std::abs(b) : b;
    }
    if (den == 0.0) throw DegenerateSignalError("estimate_timing: reference difference has zero mean");
    return 1.0 - num / den;
}

/// Estimated skew_m / Ts (positive = channel samples late).
inline double estimate_timing(std::span<const double> y_m, std::span<const double> y_prev,
                              std::span<const double> y_ref, DifferenceMode mode = DifferenceMode::absolute) {
    const double r = -difference_ratio_statistic(y_m, y_prev, y_ref, mode);
    if (!(std::abs(r) < 0.5)) {
        throw DivergenceError("estimate_timing: |r| = " + std::to_string(std::abs(r)) + " >= 0.5");
    }
    return r;
}

/// Aligned (current, predecessor) views for channel m. For m = 0 the
/// predecessor is channel M-1 one frame earlier, so the first frame is
/// dropped from both.
struct PredecessorPair {
    std::span<const double> current;
    std::span<const double> previous;
    std::size_t first_frame = 0;
};

inline PredecessorPair predecessor_pair(const std::vector<std::vector<double>>& per_channel, std::size_t m) {
    const std::size_t m_ch = per_channel.size();
    const std::vector<double>& cur = per_channel.at(m);
    if (m > 0) return {std::span(cur), std::span(per_channel[m - 1]), 0};
    const std::vector<double>& prev = per_channel[m_ch - 1];
    if (cur.size() < 2) throw InputError("channel 0 timing needs at least 2 frames");
    return {std::span(cur).subspan(1), std::span(prev).first(prev.size() - 1), 1};
}

/// Returns a reference capture aligned to channel m, same length as the
/// channel streams.
using ReferenceProvider = std::function<std::vector<double>(std::size_t m)>;

/// Offsets first, then gains on offset-free streams, then timing on
/// offset- and gain-free streams. Estimator failures are rethrown as
/// ChannelEstimationError naming the channel and stage.
inline MismatchEstimate estimate_all(const ChannelOutputs& out, const ReferenceProvider& reference_for,
                                     DifferenceMode mode = DifferenceMode::absolute) {
    const std::size_t m_ch = out.m_channels();
    MismatchEstimate est;
    est.k_used = out.k_frames;
    est.offsets_v.resize(m_ch);
    est.gains.resize(m_ch);
    est.rel_timing.resize(m_ch);

    std::vector<std::vector<double>> refs(m_ch);
    for (std::size_t m = 0; m < m_ch; ++m) {
        refs[m] = reference_for(m);
        if (refs[m].size() != out.k_frames) {
            throw InputError("reference capture for channel " + std::to_string(m) + " has wrong length");
        }
    }

    auto guarded = [](std::size_t m, const char* stage, auto&& fn) {
        try {
            return fn();
        } catch (const ChannelEstimationError&) {
            throw;
        } catch (const Error& e) {
            throw ChannelEstimationError(m, stage, e);
        }
    };

    std::vector<std::vector<double>> corrected(m_ch);
    for (std::size_t m = 0; m < m_ch; ++m) {
        est.offsets_v[m] = guarded(m, "offset", [&] { return estimate_offset(out.per_channel[m], refs[m]); });
        corrected[m] = compensate_offset(out.per_channel[m], est.offsets_v[m]);
    }
    for (std::size_t m = 0; m < m_ch; ++m) {
        est.gains[m] = guarded(m, "gain", [&] { return estimate_gain(corrected[m], refs[m]); });
        corrected[m] = compensate_gain(corrected[m], est.gains[m]);
    }
    for (std::size_t m = 0; m < m_ch; ++m) {
        est.rel_timing[m] = guarded(m, "timing", [&] {
            const PredecessorPair p = predecessor_pair(corrected, m);
            return estimate_timing(p.current, p.previous, std::span<const double>(refs[m]).subspan(p.first_frame),
                                   mode);
        });
    }
    return est;
}

/// Simulation-side reference provider: re-captures the reference with its
/// clock routed to each channel in turn.
inline ReferenceProvider simulated_references(const TiAdcConfig& cfg, const SignalSpec& signal,
                                              std::size_t k_frames) {
    return [cfg, signal, k_frames](std::size_t m) {
        return capture_reference(cfg, signal, k_frames, m).values;
    };
}

inline MismatchEstimate estimate_all(const ChannelOutputs& out, const TiAdcConfig& cfg, const SignalSpec& signal,
                                     DifferenceMode mode = DifferenceMode::absolute) {
    return estimate_all(out, simulated_references(cfg, signal, out.k_frames), mode);
}

}  // namespace tiadc
