#pragma once

// Behavioral model of an M-channel time-interleaved ADC with one extra
// reference channel. Each channel runs the pipeline
//
//   input filter -> sample at (k*M + m)*Ts + skew + jitter -> *gain -> +offset -> quantize
//
// Channel m of frame k lands at interleaved index n = k*M + m.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tiadc/errors.hpp"
#include "tiadc/rng.hpp"
#include "tiadc/signal.hpp"

namespace tiadc {

struct ChannelParams {
    double offset = 0.0;       ///< volts
    double gain = 1.0;         ///< dimensionless
    double timing_skew = 0.0;  ///< seconds, instant = nominal + skew
    FilterSpec filter{};

    bool operator==(const ChannelParams&) const = default;
};

struct QuantizerSpec {
    int bits = 8;
    double v_min = -1.0;
    double v_max = 1.0;

    std::int64_t levels() const { return std::int64_t{1} << bits; }
    double lsb() const { return (v_max - v_min) / static_cast<double>(levels()); }
    double full_scale() const { return v_max - v_min; }

    void validate() const {
        if (bits < 1 || bits > 52) throw ConfigError("quantizer bits must be in [1, 52]");
        if (!(v_max > v_min)) throw ConfigError("quantizer v_max must exceed v_min");
    }

    bool operator==(const QuantizerSpec&) const = default;
};

struct Quantized {
    std::int64_t code = 0;
    double value = 0.0;
    bool saturated = false;  ///< input was outside [v_min, v_max]
};

/// Mid-rise uniform quantizer with clipping to the extreme codes.
inline Quantized quantize(const QuantizerSpec& q, double v) {
    const double lsb = q.lsb();
    const std::int64_t top = q.levels() - 1;
    const double raw = std::floor((v - q.v_min) / lsb);
    std::int64_t code = 0;
    if (raw >= static_cast<double>(top)) {
        code = top;
    } else if (raw > 0.0) {
        code = static_cast<std::int64_t>(raw);
    }
    return {code, q.v_min + (static_cast<double>(code) + 0.5) * lsb, v < q.v_min || v > q.v_max};
}

/// Selects a converter channel or the reference channel.
class ChannelSel {
public:
    static constexpr ChannelSel index(std::size_t m) { return ChannelSel{m}; }
    static constexpr ChannelSel reference() { return ChannelSel{kRef}; }

    constexpr bool is_reference() const { return value_ == kRef; }
    constexpr std::size_t value() const { return value_; }

private:
    static constexpr std::size_t kRef = std::numeric_limits<std::size_t>::max();
    constexpr explicit ChannelSel(std::size_t v) : value_(v) {}
    std::size_t value_;
};

struct TiAdcConfig {
    std::size_t m_channels = 4;
    double sample_rate = 1.0;  ///< aggregate rate fs, Ts = 1/fs
    double jitter_std = 0.0;   ///< seconds
    QuantizerSpec quantizer{};
    std::vector<ChannelParams> channels = std::vector<ChannelParams>(4);
    ChannelParams reference{};
    std::size_t reference_aligned_to = 0;
    std::uint64_t rng_seed = 0;

    double sample_period() const { return 1.0 / sample_rate; }

    /// Ideal converter: M nominal channels and an ideal reference.
    static TiAdcConfig ideal(std::size_t m, double fs, QuantizerSpec q) {
        TiAdcConfig c;
        c.m_channels = m;
        c.sample_rate = fs;
        c.quantizer = q;
        c.channels.assign(m, ChannelParams{});
        return c;
    }

    void validate() const {
        if (m_channels < 2) throw ConfigError("m_channels must be >= 2");
        if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) throw ConfigError("sample_rate must be > 0");
        if (!(jitter_std >= 0.0)) throw ConfigError("jitter_std must be >= 0");
        quantizer.validate();
        if (channels.size() != m_channels) {
            throw ConfigError("channels has " + std::to_string(channels.size()) + " entries, expected " +
                              std::to_string(m_channels));
        }
        if (reference_aligned_to >= m_channels) throw ConfigError("reference_aligned_to out of range");
        auto check = [&](const ChannelParams& p, const std::string& name) {
            if (!(p.gain > 0.0)) throw ConfigError(name + ": gain must be > 0");
            if (!(std::abs(p.timing_skew) < sample_period())) {
                throw ConfigError(name + ": |timing_skew| must be below one sample period");
            }
            if (!std::isfinite(p.offset)) throw ConfigError(name + ": offset must be finite");
        };
        for (std::size_t m = 0; m < channels.size(); ++m) check(channels[m], "channel " + std::to_string(m));
        check(reference, "reference");
    }
};

namespace detail {

// Stream index used for the reference channel's jitter draws.
inline std::uint64_t jitter_stream_id(const TiAdcConfig& cfg, ChannelSel ch) {
    return ch.is_reference() ? 0x8000'0000'0000'0000ULL + cfg.reference_aligned_to : ch.value();
}

}  // namespace detail

/// Jitter stream for one channel. Successive calls to sample_instant with the
/// same stream consume successive frames.
inline RngStream jitter_stream(const TiAdcConfig& cfg, ChannelSel ch) {
    return RngStream(cfg.rng_seed, detail::jitter_stream_id(cfg, ch), StreamTag::jitter);
}

inline double sample_instant(const TiAdcConfig& cfg, ChannelSel ch, std::size_t k, RngStream& rng) {
    std::size_t slot = 0;
    double skew = 0.0;
    if (ch.is_reference()) {
        slot = cfg.reference_aligned_to;
        skew = cfg.reference.timing_skew;
    } else {
        if (ch.value() >= cfg.m_channels) {
            throw ConfigError("channel index " + std::to_string(ch.value()) + " out of range");
        }
        slot = ch.value();
        skew = cfg.channels[slot].timing_skew;
    }
    const double nominal = static_cast<double>(k * cfg.m_channels + slot) * cfg.sample_period();
    double t = nominal + skew;
    if (cfg.jitter_std > 0.0) t += cfg.jitter_std * rng.standard_normal();
    return t;
}

/// One channel's digitized stream.
struct ChannelStream {
    std::vector<double> values;
    std::vector<std::int64_t> codes;
    std::size_t saturations = 0;
};

struct ChannelOutputs {
    std::vector<std::vector<double>> per_channel;
    std::vector<double> reference;
    std::vector<std::vector<std::int64_t>> codes;
    std::vector<std::int64_t> reference_codes;
    std::size_t k_frames = 0;
    std::size_t saturations = 0;  ///< over all channels and the reference

    std::size_t m_channels() const { return per_channel.size(); }
};

/// Runs the pipeline of one channel for K frames.
inline ChannelStream simulate_channel(const TiAdcConfig& cfg, const SignalSpec& signal, std::size_t k_frames,
                                      ChannelSel ch) {
    const ChannelParams& p = ch.is_reference() ? cfg.reference : cfg.channels.at(ch.value());
    const SignalSpec filtered = apply_filter(signal, p.filter);
    RngStream rng = jitter_stream(cfg, ch);
    ChannelStream out;
    out.values.reserve(k_frames);
    out.codes.reserve(k_frames);
    for (std::size_t k = 0; k < k_frames; ++k) {
        const double t = sample_instant(cfg, ch, k, rng);
        const double v = p.gain * eval_signal(filtered, t) + p.offset;
        const Quantized q = quantize(cfg.quantizer, v);
        out.values.push_back(q.value);
        out.codes.push_back(q.code);
        out.saturations += q.saturated ? 1 : 0;
    }
    return out;
}

/// Reference stream aligned to channel `aligned_to`, as if the reference
/// clock had been routed to that channel for this capture.
inline ChannelStream capture_reference(TiAdcConfig cfg, const SignalSpec& signal, std::size_t k_frames,
                                       std::size_t aligned_to) {
    cfg.reference_aligned_to = aligned_to;
    cfg.validate();
    return simulate_channel(cfg, signal, k_frames, ChannelSel::reference());
}

inline ChannelOutputs simulate(const TiAdcConfig& cfg, const SignalSpec& signal, std::size_t k_frames) {
    cfg.validate();
    if (k_frames < 1) throw ConfigError("k_frames must be >= 1");
    ChannelOutputs out;
    out.k_frames = k_frames;
    for (std::size_t m = 0; m < cfg.m_channels; ++m) {
        ChannelStream s = simulate_channel(cfg, signal, k_frames, ChannelSel::index(m));
        out.saturations += s.saturations;
        out.per_channel.push_back(std::move(s.values));
        out.codes.push_back(std::move(s.codes));
    }
    ChannelStream ref = simulate_channel(cfg, signal, k_frames, ChannelSel::reference());
    out.saturations += ref.saturations;
    out.reference = std::move(ref.values);
    out.reference_codes = std::move(ref.codes);
    return out;
}

/// Merges per-channel streams: x[k*M + m] = y_m[k].
inline std::vector<double> interleave(std::span<const std::vector<double>> per_channel) {
    if (per_channel.empty()) return {};
    const std::size_t m_ch = per_channel.size();
    const std::size_t k_frames = per_channel.front().size();
    for (const auto& y : per_channel) {
        if (y.size() != k_frames) throw InputError("channel streams differ in length");
    }
    std::vector<double> x(m_ch * k_frames);
    for (std::size_t m = 0; m < m_ch; ++m) {
        for (std::size_t k = 0; k < k_frames; ++k) x[k * m_ch + m] = per_channel[m][k];
    }
    return x;
}

inline std::vector<double> interleave(const ChannelOutputs& out) { return interleave(std::span(out.per_channel)); }

inline std::vector<std::vector<double>> deinterleave(std::span<const double> x, std::size_t m_channels) {
    if (m_channels == 0 || x.size() % m_channels != 0) {
        throw InputError("interleaved length must be a multiple of the channel count");
    }
    const std::size_t k_frames = x.size() / m_channels;
    std::vector<std::vector<double>> y(m_channels, std::vector<double>(k_frames));
    for (std::size_t n = 0; n < x.size(); ++n) y[n % m_channels][n / m_channels] = x[n];
    return y;
}

/// Standard deviations for random channel mismatches.
struct MismatchSigmas {
    double offset = 0.0;      ///< volts
    double gain = 0.0;        ///< dimensionless
    double timing = 0.0;      ///< seconds
    double cutoff_rel = 0.0;  ///< relative to nominal cutoff

    bool operator==(const MismatchSigmas&) const = default;
};

/// Draws one channel's mismatches. Each quantity uses its own stream derived
/// from (seed, channel, quantity), so changing one sigma never perturbs the
/// draws of another. Gain and cutoff are redrawn until positive, skew until
/// |skew| < Ts/2.
inline ChannelParams draw_channel_params(const MismatchSigmas& sigma, double nominal_cutoff, double sample_period,
                                         std::uint64_t seed, std::size_t channel) {
    if (sigma.offset < 0.0 || sigma.gain < 0.0 || sigma.timing < 0.0 || sigma.cutoff_rel < 0.0) {
        throw InputError("mismatch standard deviations must be >= 0");
    }
    RngStream offset_rng(seed, channel, StreamTag::offset);
    RngStream gain_rng(seed, channel, StreamTag::gain);
    RngStream timing_rng(seed, channel, StreamTag::timing);
    RngStream cutoff_rng(seed, channel, StreamTag::cutoff);

    ChannelParams p;
    p.offset = sigma.offset * offset_rng.standard_normal();
    do {
        p.gain = 1.0 + sigma.gain * gain_rng.standard_normal();
    } while (!(p.gain > 0.0));
    do {
        p.timing_skew = sigma.timing * timing_rng.standard_normal();
    } while (!(std::abs(p.timing_skew) < 0.5 * sample_period));
    double cutoff = 0.0;
    do {
        cutoff = nominal_cutoff * (1.0 + sigma.cutoff_rel * cutoff_rng.standard_normal());
    } while (!(cutoff > 0.0));
    p.filter = FilterSpec(cutoff);
    return p;
}

}  // namespace tiadc
