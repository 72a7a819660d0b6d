#pragma once

// Power spectra, SINAD/SFDR/ENOB, and interleaving-spur bookkeeping.
//
// Spectra are one-sided: bin 0 and bin N/2 carry |X|^2/N^2, the others
// 2|X|^2/N^2, so the bins sum to the mean-square of the (windowed) input.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tiadc/errors.hpp"

namespace tiadc {

enum class Window { rectangular, hann };

/// In-place iterative radix-2 decimation-in-time FFT.
inline void fft_inplace(std::span<std::complex<double>> a) {
    const std::size_t n = a.size();
    if (n == 0 || !std::has_single_bit(n)) throw SizeError("FFT length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    // Twiddles are computed directly rather than by recurrence to keep the
    // round-off floor near machine precision.
    std::vector<std::complex<double>> twiddle(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        twiddle[k] = {std::cos(ang), std::sin(ang)};
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t stride = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + half] * twiddle[j * stride];
                a[i + j] = u + v;
                a[i + j + half] = u - v;
            }
        }
    }
}

inline std::vector<double> window_coefficients(Window w, std::size_t n) {
    std::vector<double> c(n, 1.0);
    if (w == Window::hann) {
        // Periodic Hann: DC leaks only into bins 0 and 1.
        for (std::size_t i = 0; i < n; ++i) {
            c[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
        }
    }
    return c;
}

struct PowerSpectrum {
    std::vector<double> bin_freqs;  ///< Hz, N/2 + 1 entries
    std::vector<double> power;      ///< V^2 per bin
};

inline PowerSpectrum power_spectrum(std::span<const double> x, Window window = Window::rectangular,
                                    double sample_rate = 1.0) {
    const std::size_t n = x.size();
    if (n < 2 || !std::has_single_bit(n)) throw SizeError("spectrum length must be a power of two >= 2");
    const std::vector<double> w = window_coefficients(window, n);
    std::vector<std::complex<double>> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = x[i] * w[i];
    fft_inplace(buf);

    PowerSpectrum ps;
    ps.bin_freqs.resize(n / 2 + 1);
    ps.power.resize(n / 2 + 1);
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const double scale = (k == 0 || k == n / 2) ? 1.0 : 2.0;
        ps.power[k] = scale * std::norm(buf[k]) * norm;
        ps.bin_freqs[k] = static_cast<double>(k) * sample_rate / static_cast<double>(n);
    }
    return ps;
}

enum class SpurLabel { unclassified, offset_spur, signal_image_spur };

inline std::string_view to_string(SpurLabel l) {
    switch (l) {
        case SpurLabel::offset_spur: return "OFFSET_SPUR";
        case SpurLabel::signal_image_spur: return "SIGNAL_IMAGE_SPUR";
        case SpurLabel::unclassified: break;
    }
    return "UNCLASSIFIED";
}

struct Spur {
    std::size_t bin = 0;
    double freq_hz = 0.0;
    double power_dbc = 0.0;
    SpurLabel label = SpurLabel::unclassified;
};

struct SpectrumReport {
    double sample_rate = 1.0;
    std::size_t n_samples = 0;
    Window window = Window::rectangular;
    std::vector<double> bin_freqs;
    std::vector<double> power_dbc;
    std::size_t carrier_bin = 0;
    double carrier_power = 0.0;  ///< V^2, summed over the carrier span
    double sinad_db = 0.0;
    double sfdr_db = 0.0;
    double enob_bits = 0.0;
    double noise_floor_dbc = 0.0;
    std::vector<Spur> spurs;  ///< bins at least spur_margin_db above the floor

    double bin_width() const { return sample_rate / static_cast<double>(n_samples); }
};

/// dBc values are clamped here so that empty bins stay finite in reports.
inline constexpr double kMinDbc = -400.0;

/// Bins below this level are double-precision FFT roundoff and never spurs.
inline constexpr double kNumericFloorDbc = -250.0;

struct AnalyzeOptions {
    Window window = Window::rectangular;
    std::optional<double> carrier_hint;  ///< Hz; AUTO when empty
    /// A bin counts as a spur when it exceeds the noise floor by this much.
    double spur_margin_db = 15.0;
};

namespace detail {

// Half-widths (in bins) treated as carrier and DC for each window.
inline std::size_t carrier_span(Window w) { return w == Window::hann ? 24 : 0; }
inline std::size_t dc_span(Window w) { return w == Window::hann ? 1 : 0; }

// Mean relative power of the bins below floor + margin, iterated to a fixed
// point. Returns dBc.
inline double quiet_floor_dbc(std::span<const double> rel_power, double margin_db) {
    if (rel_power.empty()) return kMinDbc;
    double floor = 0.0;
    for (double p : rel_power) floor += p;
    floor /= static_cast<double>(rel_power.size());
    const double margin = std::pow(10.0, margin_db / 10.0);
    for (int iter = 0; iter < 64; ++iter) {
        double sum = 0.0;
        std::size_t count = 0;
        for (double p : rel_power) {
            if (p < floor * margin) {
                sum += p;
                ++count;
            }
        }
        const double next = count > 0 ? sum / static_cast<double>(count) : 0.0;
        if (next == floor) break;
        floor = next;
    }
    return floor > 0.0 ? std::max(kMinDbc, 10.0 * std::log10(floor)) : kMinDbc;
}

inline double to_dbc(double p, double carrier) {
    if (p <= 0.0) return kMinDbc;
    return std::max(kMinDbc, 10.0 * std::log10(p / carrier));
}

}  // namespace detail

inline double enob_from_sinad(double sinad_db) { return (sinad_db - 1.76) / 6.02; }

inline SpectrumReport analyze(std::span<const double> x, double sample_rate, const AnalyzeOptions& opt = {}) {
    const PowerSpectrum ps = power_spectrum(x, opt.window, sample_rate);
    const std::size_t n = x.size();
    const std::size_t last = n / 2;
    const std::size_t dc = detail::dc_span(opt.window);
    const std::size_t span = detail::carrier_span(opt.window);

    if (std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; })) {
        throw DegenerateSignalError("all-zero input has no carrier");
    }

    std::size_t carrier = dc + 1;
    if (opt.carrier_hint) {
        const double df = sample_rate / static_cast<double>(n);
        const double b = std::round(*opt.carrier_hint / df);
        carrier = static_cast<std::size_t>(std::clamp(b, static_cast<double>(dc + 1), static_cast<double>(last)));
    } else {
        for (std::size_t k = dc + 1; k <= last; ++k) {
            if (ps.power[k] > ps.power[carrier]) carrier = k;
        }
    }
    const std::size_t c_lo = carrier > dc + 1 + span ? carrier - span : dc + 1;
    const std::size_t c_hi = std::min(last, carrier + span);

    double p_carrier = 0.0;
    for (std::size_t k = c_lo; k <= c_hi; ++k) p_carrier += ps.power[k];
    if (!(p_carrier > 0.0)) throw DegenerateSignalError("carrier bin carries no power");

    SpectrumReport r;
    r.sample_rate = sample_rate;
    r.n_samples = n;
    r.window = opt.window;
    r.bin_freqs = ps.bin_freqs;
    r.carrier_bin = carrier;
    r.carrier_power = p_carrier;
    r.power_dbc.resize(ps.power.size());
    for (std::size_t k = 0; k <= last; ++k) r.power_dbc[k] = detail::to_dbc(ps.power[k], ps.power[carrier]);
    r.power_dbc[carrier] = 0.0;

    auto is_other = [&](std::size_t k) { return k > dc && (k < c_lo || k > c_hi); };

    double p_other = 0.0;
    std::size_t counted = 0;
    double worst = kMinDbc;
    for (std::size_t k = 0; k <= last; ++k) {
        if (!is_other(k)) continue;
        p_other += ps.power[k];
        ++counted;
        worst = std::max(worst, r.power_dbc[k]);
    }
    if (opt.window != Window::rectangular && counted > 0) {
        // Extrapolate the noise hidden under the excluded carrier span.
        const std::size_t available = last - dc;
        p_other *= static_cast<double>(available - 1) / static_cast<double>(counted);
    }
    r.sinad_db = p_other > 0.0 ? 10.0 * std::log10(p_carrier / p_other) : -kMinDbc;
    r.sfdr_db = -worst;
    r.enob_bits = enob_from_sinad(r.sinad_db);

    // Floor: average power of the bins that are not spurs. Starting from the
    // mean over all other bins (an upper bound), bins above floor + margin are
    // dropped until the set is stable.
    std::vector<double> other_power;
    for (std::size_t k = 0; k <= last; ++k) {
        if (is_other(k)) other_power.push_back(ps.power[k] / ps.power[carrier]);
    }
    r.noise_floor_dbc = detail::quiet_floor_dbc(other_power, opt.spur_margin_db);
    const double spur_threshold = std::max(r.noise_floor_dbc + opt.spur_margin_db, kNumericFloorDbc);
    for (std::size_t k = 0; k <= last; ++k) {
        if (is_other(k) && r.power_dbc[k] >= spur_threshold) {
            r.spurs.push_back({k, r.bin_freqs[k], r.power_dbc[k], SpurLabel::unclassified});
        }
    }
    return r;
}

inline SpectrumReport analyze(std::span<const double> x, double sample_rate, std::optional<double> carrier_hint) {
    AnalyzeOptions opt;
    opt.carrier_hint = carrier_hint;
    return analyze(x, sample_rate, opt);
}

struct SpurPrediction {
    std::vector<double> offset_spur_freqs;
    std::vector<double> image_spur_freqs;
};

/// Reflects a frequency into the first Nyquist zone [0, fs/2].
inline double fold_frequency(double f, double sample_rate) {
    double r = std::fmod(std::abs(f), sample_rate);
    if (r > 0.5 * sample_rate) r = sample_rate - r;
    return r;
}

/// Offset spurs at k*fs/M, gain/timing images at |+-f0 + k*fs/M|, both folded.
inline SpurPrediction predict_spurs(std::size_t m_channels, double f0, double sample_rate) {
    if (!(f0 > 0.0 && f0 < 0.5 * sample_rate)) throw DomainError("carrier must lie strictly inside (0, fs/2)");
    if (m_channels == 0) throw InputError("channel count must be >= 1");
    const double eps = 1e-9 * sample_rate;
    auto insert_unique = [&](std::vector<double>& v, double f) {
        for (double e : v) {
            if (std::abs(e - f) <= eps) return;
        }
        v.push_back(f);
    };

    SpurPrediction p;
    const double step = sample_rate / static_cast<double>(m_channels);
    for (std::size_t k = 1; k <= m_channels / 2; ++k) {
        insert_unique(p.offset_spur_freqs, fold_frequency(static_cast<double>(k) * step, sample_rate));
    }
    for (std::size_t k = 0; k < m_channels; ++k) {
        for (double sign : {1.0, -1.0}) {
            const double f = fold_frequency(sign * f0 + static_cast<double>(k) * step, sample_rate);
            if (std::abs(f - f0) > eps) insert_unique(p.image_spur_freqs, f);
        }
    }
    std::sort(p.offset_spur_freqs.begin(), p.offset_spur_freqs.end());
    std::sort(p.image_spur_freqs.begin(), p.image_spur_freqs.end());
    return p;
}

namespace detail {

inline std::optional<long> nearest_bin_distance(const SpectrumReport& r, std::size_t bin, std::span<const double> freqs) {
    std::optional<long> best;
    for (double f : freqs) {
        const long b = std::lround(f / r.bin_width());
        const long d = std::labs(b - static_cast<long>(bin));
        if (!best || d < *best) best = d;
    }
    return best;
}

}  // namespace detail

/// Labels each spur by the nearest predicted location within tolerance_bins.
/// Offset spurs win ties.
inline SpectrumReport label_spurs(SpectrumReport report, const SpurPrediction& predicted, long tolerance_bins = 1) {
    for (Spur& s : report.spurs) {
        const auto d_off = detail::nearest_bin_distance(report, s.bin, predicted.offset_spur_freqs);
        const auto d_img = detail::nearest_bin_distance(report, s.bin, predicted.image_spur_freqs);
        const bool off_ok = d_off && *d_off <= tolerance_bins;
        const bool img_ok = d_img && *d_img <= tolerance_bins;
        if (off_ok && (!img_ok || *d_off <= *d_img)) {
            s.label = SpurLabel::offset_spur;
        } else if (img_ok) {
            s.label = SpurLabel::signal_image_spur;
        } else {
            s.label = SpurLabel::unclassified;
        }
    }
    return report;
}

/// Above-floor spur power (relative to the carrier bin) split by label.
struct SpurPowerSummary {
    double total = 0.0;
    double offset = 0.0;
    double image = 0.0;
    double unclassified = 0.0;

    double fraction(SpurLabel l) const {
        if (total <= 0.0) return 0.0;
        switch (l) {
            case SpurLabel::offset_spur: return offset / total;
            case SpurLabel::signal_image_spur: return image / total;
            case SpurLabel::unclassified: break;
        }
        return unclassified / total;
    }
};

inline SpurPowerSummary summarize_spurs(const SpectrumReport& r) {
    SpurPowerSummary s;
    for (const Spur& sp : r.spurs) {
        const double p = std::pow(10.0, sp.power_dbc / 10.0);
        s.total += p;
        switch (sp.label) {
            case SpurLabel::offset_spur: s.offset += p; break;
            case SpurLabel::signal_image_spur: s.image += p; break;
            case SpurLabel::unclassified: s.unclassified += p; break;
        }
    }
    return s;
}

}  // namespace tiadc
