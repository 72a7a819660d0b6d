#pragma once

// Analytic test signals (finite tone sums plus DC) and first-order input
// filters. Signals are evaluated exactly at arbitrary instants so that
// skewed and jittered sampling needs no interpolation.

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "tiadc/errors.hpp"

namespace tiadc {

/// Wraps an angle into (-pi, pi].
inline double normalize_phase(double phase) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double p = std::remainder(phase, two_pi);  // [-pi, pi]
    if (p <= -std::numbers::pi) p += two_pi;
    return p;
}

class Tone {
public:
    Tone() = default;
    Tone(double amplitude, double frequency, double phase = 0.0)
        : amplitude_(amplitude), frequency_(frequency), phase_(normalize_phase(phase)) {
        if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw InputError("tone amplitude must be finite and >= 0");
        if (!(frequency >= 0.0) || !std::isfinite(frequency)) throw InputError("tone frequency must be finite and >= 0");
        if (!std::isfinite(phase)) throw InputError("tone phase must be finite");
    }

    double amplitude() const noexcept { return amplitude_; }
    double frequency() const noexcept { return frequency_; }
    double phase() const noexcept { return phase_; }

    double operator()(double t) const {
        return amplitude_ * std::sin(2.0 * std::numbers::pi * frequency_ * t + phase_);
    }

    bool operator==(const Tone&) const = default;

private:
    double amplitude_ = 0.0;
    double frequency_ = 0.0;
    double phase_ = 0.0;
};

struct SignalSpec {
    std::vector<Tone> tones;
    double dc = 0.0;

    /// Upper bound on |x(t)|.
    double peak_bound() const {
        double b = std::abs(dc);
        for (const Tone& t : tones) b += t.amplitude();
        return b;
    }

    bool operator==(const SignalSpec&) const = default;
};

/// First-order low-pass, -3 dB at `cutoff`. An infinite cutoff is an ideal
/// (transparent) path.
class FilterSpec {
public:
    FilterSpec() = default;
    explicit FilterSpec(double cutoff) : cutoff_(cutoff) {
        if (!(cutoff > 0.0)) throw InputError("filter cutoff must be > 0");
    }

    static FilterSpec transparent() { return FilterSpec{}; }

    double cutoff() const noexcept { return cutoff_; }
    bool is_transparent() const noexcept { return std::isinf(cutoff_); }

    double magnitude(double f) const { return 1.0 / std::sqrt(1.0 + square(f / cutoff_)); }
    double phase(double f) const { return -std::atan(f / cutoff_); }

    bool operator==(const FilterSpec&) const = default;

private:
    static double square(double v) { return v * v; }
    double cutoff_ = std::numeric_limits<double>::infinity();
};

inline double eval_signal(const SignalSpec& spec, double t) {
    double v = spec.dc;
    for (const Tone& tone : spec.tones) v += tone(t);
    return v;
}

/// Applies the filter's steady-state response to every tone.
inline SignalSpec apply_filter(const SignalSpec& spec, const FilterSpec& filter) {
    SignalSpec out;
    out.dc = spec.dc;
    out.tones.reserve(spec.tones.size());
    for (const Tone& t : spec.tones) {
        out.tones.emplace_back(t.amplitude() * filter.magnitude(t.frequency()), t.frequency(),
                               t.phase() + filter.phase(t.frequency()));
    }
    return out;
}

/// Tone-wise concatenation; evaluates to the sum of both signals.
inline SignalSpec superpose(const SignalSpec& a, const SignalSpec& b) {
    SignalSpec out = a;
    out.tones.insert(out.tones.end(), b.tones.begin(), b.tones.end());
    out.dc += b.dc;
    return out;
}

/// Single tone at an exact DFT bin: f = bin / n * sample_rate.
inline SignalSpec coherent_sine(double amplitude, std::size_t bin, std::size_t n, double sample_rate,
                                double phase = 0.0, double dc = 0.0) {
    SignalSpec s;
    s.tones.emplace_back(amplitude, static_cast<double>(bin) / static_cast<double>(n) * sample_rate, phase);
    s.dc = dc;
    return s;
}

}  // namespace tiadc
