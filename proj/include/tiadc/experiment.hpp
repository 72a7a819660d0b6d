#pragma once

// Config-driven experiments: single spectra, identification and calibration
// round-trips, bandwidth-mismatch demos and Monte-Carlo sigma sweeps.
//
// Every artifact is a pure function of (config, master_seed). Trial t uses
// seed derive_seed(master_seed, {t}) regardless of sweep point or execution
// order, so sweep points share their random draws apart from the swept sigma.

#include <algorithm>
#include <bit>
#include <cctype>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tiadc/calibration.hpp"
#include "tiadc/converter.hpp"
#include "tiadc/mismatch_id.hpp"
#include "tiadc/rng.hpp"
#include "tiadc/signal.hpp"
#include "tiadc/spectrum.hpp"

namespace tiadc::experiment {

using json = nlohmann::ordered_json;

enum class Scenario { spectrum, sweep, identify, calibrate, bandwidth_demo };
enum class SweepParameter { offset_std, gain_std, timing_std };
enum class Aggregate { worst, average };

struct ChannelConfig {
    double offset_v = 0.0;
    double gain = 1.0;
    double timing_skew_rel = 0.0;     ///< fraction of Ts
    std::optional<double> cutoff_hz;  ///< empty: no input filter

    bool operator==(const ChannelConfig&) const = default;
};

struct MismatchConfig {
    double offset_std_v = 0.0;
    double gain_std = 0.0;
    double timing_std_rel = 0.0;  ///< fraction of Ts
    double cutoff_std_rel = 0.0;
    std::optional<double> nominal_cutoff_rel;  ///< multiple of fs; empty: no input filter

    bool operator==(const MismatchConfig&) const = default;
};

struct TiAdcSection {
    std::size_t m_channels = 4;
    double sample_rate_hz = 1.0e6;
    double jitter_std_rel = 0.0;  ///< fraction of Ts
    QuantizerSpec quantizer{8, -1.0, 1.0};
    std::size_t reference_aligned_to = 0;
    ChannelConfig reference{};
    std::optional<std::vector<ChannelConfig>> channels;  ///< empty: drawn per trial
    MismatchConfig mismatch{};

    bool operator==(const TiAdcSection&) const = default;
};

struct SweepSection {
    SweepParameter parameter = SweepParameter::gain_std;
    std::vector<double> values;
    std::size_t trials = 50;
    Aggregate aggregate = Aggregate::worst;

    bool operator==(const SweepSection&) const = default;
};

struct IdentificationSection {
    std::size_t k_frames = 4096;
    DifferenceMode difference_mode = DifferenceMode::absolute;

    bool operator==(const IdentificationSection&) const = default;
};

struct CalibrationSection {
    std::size_t taps = kDefaultInterpolatorTaps;
    CalibrationStages stages{};

    bool operator==(const CalibrationSection&) const = default;
};

struct AnalysisSection {
    Window window = Window::rectangular;
    double spur_margin_db = 15.0;
    long tolerance_bins = 1;

    bool operator==(const AnalysisSection&) const = default;
};

struct ExperimentConfig {
    Scenario scenario = Scenario::spectrum;
    std::uint64_t master_seed = 0;
    std::string output_dir = "out";
    std::size_t k_frames = 1024;  ///< analyzed record length (interleaved samples)
    TiAdcSection tiadc{};
    SignalSpec signal{};
    SweepSection sweep{};
    IdentificationSection identification{};
    CalibrationSection calibration{};
    AnalysisSection analysis{};

    bool operator==(const ExperimentConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Enum names

inline constexpr std::pair<Scenario, std::string_view> kScenarioNames[] = {
    {Scenario::spectrum, "SPECTRUM"},   {Scenario::sweep, "SWEEP"},
    {Scenario::identify, "IDENTIFY"},   {Scenario::calibrate, "CALIBRATE"},
    {Scenario::bandwidth_demo, "BANDWIDTH_DEMO"},
};
inline constexpr std::pair<SweepParameter, std::string_view> kSweepParameterNames[] = {
    {SweepParameter::offset_std, "OFFSET_STD"},
    {SweepParameter::gain_std, "GAIN_STD"},
    {SweepParameter::timing_std, "TIMING_STD"},
};
inline constexpr std::pair<Aggregate, std::string_view> kAggregateNames[] = {
    {Aggregate::worst, "WORST"},
    {Aggregate::average, "AVERAGE"},
};
inline constexpr std::pair<Window, std::string_view> kWindowNames[] = {
    {Window::rectangular, "RECTANGULAR"},
    {Window::hann, "HANN"},
};
inline constexpr std::pair<DifferenceMode, std::string_view> kDifferenceModeNames[] = {
    {DifferenceMode::absolute, "ABSOLUTE"},
    {DifferenceMode::signed_, "SIGNED"},
};

template <class E, std::size_t N>
std::string_view name_of(E v, const std::pair<E, std::string_view> (&table)[N]) {
    for (const auto& [e, n] : table) {
        if (e == v) return n;
    }
    return "?";
}

template <class E, std::size_t N>
std::optional<E> parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N]) {
    for (const auto& [e, n] : table) {
        if (n == s) return e;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Validation

struct ConfigIssue {
    std::string path;
    std::size_t line = 0;  ///< 1-based; 0 when unknown
    std::string message;

    std::string format(std::string_view source = "config") const {
        std::string out(source);
        if (line > 0) out += ":" + std::to_string(line);
        out += ": " + (path.empty() ? std::string("<root>") : path) + ": " + message;
        return out;
    }
};

struct ValidationResult {
    std::optional<ExperimentConfig> config;
    std::vector<ConfigIssue> issues;

    bool ok() const { return config.has_value(); }
};

namespace detail {

// Finds the line of a dotted path by following its keys through the text in
// order. Array indices are skipped.
inline std::size_t locate_line(std::string_view text, std::string_view path) {
    std::size_t pos = 0;
    bool found_any = false;
    std::size_t start = 0;
    while (start <= path.size()) {
        const std::size_t dot = path.find('.', start);
        std::string_view part = path.substr(start, dot == std::string_view::npos ? path.size() - start : dot - start);
        if (const std::size_t br = part.find('['); br != std::string_view::npos) part = part.substr(0, br);
        if (!part.empty()) {
            const std::string needle = "\"" + std::string(part) + "\"";
            std::size_t p = text.find(needle, pos);
            while (p != std::string_view::npos) {
                std::size_t q = p + needle.size();
                while (q < text.size() && std::isspace(static_cast<unsigned char>(text[q]))) ++q;
                if (q < text.size() && text[q] == ':') break;
                p = text.find(needle, p + 1);
            }
            if (p == std::string_view::npos) break;
            pos = p;
            found_any = true;
        }
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    if (!found_any) return 0;
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Reader {
public:
    explicit Reader(std::string_view text) : text_(text) {}

    void issue(const std::string& path, const std::string& msg) {
        issues_.push_back({path, locate_line(text_, path), msg});
    }

    std::vector<ConfigIssue>& issues() { return issues_; }

    static std::string join(const std::string& base, const std::string& key) {
        return base.empty() ? key : base + "." + key;
    }

    /// Reports keys of `obj` that are not in `allowed`.
    void reject_unknown(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
        for (const auto& [key, _] : obj.items()) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                issue(join(path, key), "unknown key");
            }
        }
    }

    bool object(const json& parent, const std::string& path, const char* key, const json*& out) {
        out = nullptr;
        if (!parent.contains(key)) return false;
        const json& v = parent.at(key);
        if (!v.is_object()) {
            issue(join(path, key), "must be an object");
            return false;
        }
        out = &v;
        return true;
    }

    void number(const json& obj, const std::string& path, const char* key, double& out) {
        if (!obj.contains(key)) return;
        const json& v = obj.at(key);
        if (!v.is_number()) {
            issue(join(path, key), "must be a number");
            return;
        }
        out = v.get<double>();
        if (!std::isfinite(out)) issue(join(path, key), "must be finite");
    }

    void optional_number(const json& obj, const std::string& path, const char* key, std::optional<double>& out) {
        if (!obj.contains(key)) return;
        const json& v = obj.at(key);
        if (v.is_null()) {
            out.reset();
            return;
        }
        double d = 0.0;
        number(obj, path, key, d);
        out = d;
    }

    template <class Int>
    void integer(const json& obj, const std::string& path, const char* key, Int& out) {
        if (!obj.contains(key)) return;
        const json& v = obj.at(key);
        if (!v.is_number_integer()) {
            issue(join(path, key), "must be an integer");
            return;
        }
        if constexpr (std::is_unsigned_v<Int>) {
            if (v.is_number_unsigned()) {
                out = static_cast<Int>(v.get<std::uint64_t>());
            } else {
                issue(join(path, key), "must be >= 0");
            }
        } else {
            out = static_cast<Int>(v.get<std::int64_t>());
        }
    }

    void string(const json& obj, const std::string& path, const char* key, std::string& out) {
        if (!obj.contains(key)) return;
        const json& v = obj.at(key);
        if (!v.is_string()) {
            issue(join(path, key), "must be a string");
            return;
        }
        out = v.get<std::string>();
    }

    template <class E, std::size_t N>
    void enumeration(const json& obj, const std::string& path, const char* key, E& out,
                     const std::pair<E, std::string_view> (&table)[N]) {
        std::string s;
        if (!obj.contains(key)) return;
        if (!obj.at(key).is_string()) {
            issue(join(path, key), "must be a string");
            return;
        }
        s = obj.at(key).get<std::string>();
        if (auto e = parse_enum(s, table)) {
            out = *e;
        } else {
            std::string choices;
            for (const auto& [_, n] : table) choices += (choices.empty() ? "" : "|") + std::string(n);
            issue(join(path, key), "unknown value \"" + s + "\" (expected " + choices + ")");
        }
    }

private:
    std::string_view text_;
    std::vector<ConfigIssue> issues_;
};

inline void read_channel(Reader& r, const json& obj, const std::string& path, ChannelConfig& c) {
    if (!obj.is_object()) {
        r.issue(path, "must be an object");
        return;
    }
    r.reject_unknown(obj, path, {"offset_v", "gain", "timing_skew_rel", "cutoff_hz"});
    r.number(obj, path, "offset_v", c.offset_v);
    r.number(obj, path, "gain", c.gain);
    r.number(obj, path, "timing_skew_rel", c.timing_skew_rel);
    r.optional_number(obj, path, "cutoff_hz", c.cutoff_hz);
    if (!(c.gain > 0.0)) r.issue(Reader::join(path, "gain"), "must be > 0");
    if (!(std::abs(c.timing_skew_rel) < 1.0)) {
        r.issue(Reader::join(path, "timing_skew_rel"), "|skew| must be below one sample period");
    }
    if (c.cutoff_hz && !(*c.cutoff_hz > 0.0)) r.issue(Reader::join(path, "cutoff_hz"), "must be > 0");
}

inline void read_stages(Reader& r, const json& obj, const std::string& path, CalibrationStages& st) {
    if (!obj.contains("stages")) return;
    const json& v = obj.at("stages");
    const std::string p = Reader::join(path, "stages");
    if (!v.is_array()) {
        r.issue(p, "must be an array of \"offset\"|\"gain\"|\"timing\"");
        return;
    }
    st = {false, false, false};
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string s = v[i].is_string() ? v[i].get<std::string>() : std::string{};
        if (s == "offset") {
            st.offset = true;
        } else if (s == "gain") {
            st.gain = true;
        } else if (s == "timing") {
            st.timing = true;
        } else {
            r.issue(p + "[" + std::to_string(i) + "]", "expected \"offset\", \"gain\" or \"timing\"");
        }
    }
}

}  // namespace detail

/// Parses, defaults and checks a JSON configuration. Every violation is
/// reported with its field path and source line.
inline ValidationResult validate(std::string_view text) {
    ValidationResult result;
    json root;
    {
        std::string_view trimmed = text;
        while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.front()))) trimmed.remove_prefix(1);
        if (trimmed.empty()) {
            root = json::object();
        } else {
            try {
                root = json::parse(text);
            } catch (const json::parse_error& e) {
                std::size_t line = 1;
                const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
                line += static_cast<std::size_t>(
                    std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto > 0 ? upto - 1 : 0), '\n'));
                result.issues.push_back({"", line, std::string("JSON syntax error: ") + e.what()});
                return result;
            }
        }
    }
    detail::Reader r(text);
    if (!root.is_object()) {
        r.issue("", "top level must be an object");
        result.issues = std::move(r.issues());
        return result;
    }

    ExperimentConfig c;
    using detail::Reader;
    r.reject_unknown(root, "", {"scenario", "master_seed", "output_dir", "k_frames", "tiadc", "signal", "sweep",
                                "identification", "calibration", "analysis"});
    r.enumeration(root, "", "scenario", c.scenario, kScenarioNames);
    r.integer(root, "", "master_seed", c.master_seed);
    r.string(root, "", "output_dir", c.output_dir);
    r.integer(root, "", "k_frames", c.k_frames);
    if (c.k_frames < 16 || !std::has_single_bit(c.k_frames)) r.issue("k_frames", "must be a power of two >= 16");

    // tiadc
    const json* t = nullptr;
    if (r.object(root, "", "tiadc", t)) {
        const std::string p = "tiadc";
        r.reject_unknown(*t, p, {"m_channels", "sample_rate_hz", "jitter_std_rel", "quantizer",
                                 "reference_aligned_to", "reference", "channels", "mismatch"});
        r.integer(*t, p, "m_channels", c.tiadc.m_channels);
        r.number(*t, p, "sample_rate_hz", c.tiadc.sample_rate_hz);
        r.number(*t, p, "jitter_std_rel", c.tiadc.jitter_std_rel);
        r.integer(*t, p, "reference_aligned_to", c.tiadc.reference_aligned_to);
        const json* q = nullptr;
        if (r.object(*t, p, "quantizer", q)) {
            const std::string qp = "tiadc.quantizer";
            r.reject_unknown(*q, qp, {"bits", "v_min", "v_max"});
            r.integer(*q, qp, "bits", c.tiadc.quantizer.bits);
            r.number(*q, qp, "v_min", c.tiadc.quantizer.v_min);
            r.number(*q, qp, "v_max", c.tiadc.quantizer.v_max);
        }
        if (t->contains("reference")) detail::read_channel(r, t->at("reference"), "tiadc.reference", c.tiadc.reference);
        if (t->contains("channels") && !t->at("channels").is_null()) {
            const json& chs = t->at("channels");
            if (!chs.is_array()) {
                r.issue("tiadc.channels", "must be an array or null");
            } else {
                std::vector<ChannelConfig> list(chs.size());
                for (std::size_t i = 0; i < chs.size(); ++i) {
                    detail::read_channel(r, chs[i], "tiadc.channels[" + std::to_string(i) + "]", list[i]);
                }
                c.tiadc.channels = std::move(list);
            }
        }
        const json* mm = nullptr;
        if (r.object(*t, p, "mismatch", mm)) {
            const std::string mp = "tiadc.mismatch";
            r.reject_unknown(*mm, mp,
                             {"offset_std_v", "gain_std", "timing_std_rel", "cutoff_std_rel", "nominal_cutoff_rel"});
            r.number(*mm, mp, "offset_std_v", c.tiadc.mismatch.offset_std_v);
            r.number(*mm, mp, "gain_std", c.tiadc.mismatch.gain_std);
            r.number(*mm, mp, "timing_std_rel", c.tiadc.mismatch.timing_std_rel);
            r.number(*mm, mp, "cutoff_std_rel", c.tiadc.mismatch.cutoff_std_rel);
            r.optional_number(*mm, mp, "nominal_cutoff_rel", c.tiadc.mismatch.nominal_cutoff_rel);
        }
    }
    if (c.scenario == Scenario::bandwidth_demo) {
        // Input filters five times above fs with 10 % relative spread unless set.
        const json* mm = nullptr;
        const bool has_mm = t && t->contains("mismatch") && t->at("mismatch").is_object();
        if (has_mm) mm = &t->at("mismatch");
        if (!mm || !mm->contains("nominal_cutoff_rel")) c.tiadc.mismatch.nominal_cutoff_rel = 5.0;
        if (!mm || !mm->contains("cutoff_std_rel")) c.tiadc.mismatch.cutoff_std_rel = 0.1;
    }
    {
        const TiAdcSection& a = c.tiadc;
        if (a.m_channels < 2) r.issue("tiadc.m_channels", "must be >= 2");
        if (!(a.sample_rate_hz > 0.0)) r.issue("tiadc.sample_rate_hz", "must be > 0");
        if (!(a.jitter_std_rel >= 0.0)) r.issue("tiadc.jitter_std_rel", "must be >= 0");
        if (a.quantizer.bits < 1 || a.quantizer.bits > 30) r.issue("tiadc.quantizer.bits", "must be in [1, 30]");
        if (!(a.quantizer.v_max > a.quantizer.v_min)) r.issue("tiadc.quantizer.v_max", "must exceed v_min");
        if (a.m_channels >= 2 && a.reference_aligned_to >= a.m_channels) {
            r.issue("tiadc.reference_aligned_to", "must be < m_channels");
        }
        if (a.channels && a.channels->size() != a.m_channels) {
            r.issue("tiadc.channels", "has " + std::to_string(a.channels->size()) + " entries, expected m_channels = " +
                                          std::to_string(a.m_channels));
        }
        const MismatchConfig& m = a.mismatch;
        if (!(m.offset_std_v >= 0.0)) r.issue("tiadc.mismatch.offset_std_v", "must be >= 0");
        if (!(m.gain_std >= 0.0)) r.issue("tiadc.mismatch.gain_std", "must be >= 0");
        if (!(m.timing_std_rel >= 0.0)) r.issue("tiadc.mismatch.timing_std_rel", "must be >= 0");
        if (!(m.cutoff_std_rel >= 0.0)) r.issue("tiadc.mismatch.cutoff_std_rel", "must be >= 0");
        if (m.nominal_cutoff_rel && !(*m.nominal_cutoff_rel > 0.0)) {
            r.issue("tiadc.mismatch.nominal_cutoff_rel", "must be > 0");
        }
    }

    // signal
    const json* s = nullptr;
    bool tones_given = false;
    if (r.object(root, "", "signal", s)) {
        r.reject_unknown(*s, "signal", {"tones", "dc_v"});
        r.number(*s, "signal", "dc_v", c.signal.dc);
        if (s->contains("tones")) {
            tones_given = true;
            const json& tones = s->at("tones");
            if (!tones.is_array()) {
                r.issue("signal.tones", "must be an array");
            } else {
                for (std::size_t i = 0; i < tones.size(); ++i) {
                    const std::string tp = "signal.tones[" + std::to_string(i) + "]";
                    if (!tones[i].is_object()) {
                        r.issue(tp, "must be an object");
                        continue;
                    }
                    r.reject_unknown(tones[i], tp, {"amplitude_v", "frequency_hz", "phase_rad"});
                    double a = 0.0, f = 0.0, ph = 0.0;
                    r.number(tones[i], tp, "amplitude_v", a);
                    r.number(tones[i], tp, "frequency_hz", f);
                    r.number(tones[i], tp, "phase_rad", ph);
                    if (!(a >= 0.0)) {
                        r.issue(tp + ".amplitude_v", "must be >= 0");
                    } else if (!(f >= 0.0)) {
                        r.issue(tp + ".frequency_hz", "must be >= 0");
                    } else if (std::isfinite(ph) && std::isfinite(a) && std::isfinite(f)) {
                        c.signal.tones.emplace_back(a, f, ph);
                    }
                }
                if (tones.empty()) r.issue("signal.tones", "needs at least one tone");
            }
        }
    }
    if (!tones_given) {
        // Coherent carrier on bin 101 of the record at 90 % of half-range,
        // centred in the quantizer range.
        const QuantizerSpec& q = c.tiadc.quantizer;
        const double bins = static_cast<double>(std::max<std::size_t>(c.k_frames, 1));
        // Range or rate errors are already reported; no default tone then.
        if (q.v_max > q.v_min && c.tiadc.sample_rate_hz > 0.0 && std::isfinite(c.tiadc.sample_rate_hz)) {
            c.signal.tones.emplace_back(0.9 * 0.5 * (q.v_max - q.v_min), 101.0 / bins * c.tiadc.sample_rate_hz, 0.0);
        }
        if (!(s && s->contains("dc_v"))) c.signal.dc = 0.5 * (q.v_max + q.v_min);
    }

    // sweep
    const json* sw = nullptr;
    if (r.object(root, "", "sweep", sw)) {
        r.reject_unknown(*sw, "sweep", {"parameter", "values", "trials", "aggregate"});
        r.enumeration(*sw, "sweep", "parameter", c.sweep.parameter, kSweepParameterNames);
        r.enumeration(*sw, "sweep", "aggregate", c.sweep.aggregate, kAggregateNames);
        r.integer(*sw, "sweep", "trials", c.sweep.trials);
        if (sw->contains("values")) {
            const json& v = sw->at("values");
            if (!v.is_array()) {
                r.issue("sweep.values", "must be an array of numbers");
            } else {
                for (std::size_t i = 0; i < v.size(); ++i) {
                    if (!v[i].is_number()) {
                        r.issue("sweep.values[" + std::to_string(i) + "]", "must be a number");
                    } else {
                        c.sweep.values.push_back(v[i].get<double>());
                    }
                }
            }
        }
    }
    if (c.sweep.trials < 1) r.issue("sweep.trials", "must be >= 1");
    for (std::size_t i = 0; i < c.sweep.values.size(); ++i) {
        if (!(c.sweep.values[i] > 0.0)) r.issue("sweep.values", "values must be strictly positive");
        if (i > 0 && !(c.sweep.values[i] > c.sweep.values[i - 1])) {
            r.issue("sweep.values", "values must be sorted strictly ascending");
            break;
        }
    }
    if (c.scenario == Scenario::sweep) {
        if (c.sweep.values.empty()) r.issue("sweep.values", "SWEEP needs at least one value");
        if (c.tiadc.channels) r.issue("tiadc.channels", "SWEEP draws channels per trial; remove explicit channels");
    }

    // identification / calibration / analysis
    const json* id = nullptr;
    if (r.object(root, "", "identification", id)) {
        r.reject_unknown(*id, "identification", {"k_frames", "difference_mode"});
        r.integer(*id, "identification", "k_frames", c.identification.k_frames);
        r.enumeration(*id, "identification", "difference_mode", c.identification.difference_mode,
                      kDifferenceModeNames);
    }
    if (c.identification.k_frames < 2) r.issue("identification.k_frames", "must be >= 2");
    const json* cal = nullptr;
    if (r.object(root, "", "calibration", cal)) {
        r.reject_unknown(*cal, "calibration", {"taps", "stages"});
        r.integer(*cal, "calibration", "taps", c.calibration.taps);
        detail::read_stages(r, *cal, "calibration", c.calibration.stages);
    }
    if (c.calibration.taps < 4 || c.calibration.taps > 4096) r.issue("calibration.taps", "must be in [4, 4096]");
    const json* an = nullptr;
    if (r.object(root, "", "analysis", an)) {
        r.reject_unknown(*an, "analysis", {"window", "spur_margin_db", "tolerance_bins"});
        r.enumeration(*an, "analysis", "window", c.analysis.window, kWindowNames);
        r.number(*an, "analysis", "spur_margin_db", c.analysis.spur_margin_db);
        r.integer(*an, "analysis", "tolerance_bins", c.analysis.tolerance_bins);
    }
    if (!(c.analysis.spur_margin_db > 0.0)) r.issue("analysis.spur_margin_db", "must be > 0");
    if (c.analysis.tolerance_bins < 0) r.issue("analysis.tolerance_bins", "must be >= 0");

    result.issues = std::move(r.issues());
    if (result.issues.empty()) result.config = std::move(c);
    return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json channel_to_json(const ChannelConfig& c) {
    return json{{"offset_v", c.offset_v},
                {"gain", c.gain},
                {"timing_skew_rel", c.timing_skew_rel},
                {"cutoff_hz", optional_to_json(c.cutoff_hz)}};
}

inline json stages_to_json(const CalibrationStages& s) {
    json a = json::array();
    if (s.offset) a.push_back("offset");
    if (s.gain) a.push_back("gain");
    if (s.timing) a.push_back("timing");
    return a;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
    json tiadc{{"m_channels", c.tiadc.m_channels},
               {"sample_rate_hz", c.tiadc.sample_rate_hz},
               {"jitter_std_rel", c.tiadc.jitter_std_rel},
               {"quantizer",
                {{"bits", c.tiadc.quantizer.bits}, {"v_min", c.tiadc.quantizer.v_min}, {"v_max", c.tiadc.quantizer.v_max}}},
               {"reference_aligned_to", c.tiadc.reference_aligned_to},
               {"reference", detail::channel_to_json(c.tiadc.reference)}};
    if (c.tiadc.channels) {
        json chs = json::array();
        for (const ChannelConfig& ch : *c.tiadc.channels) chs.push_back(detail::channel_to_json(ch));
        tiadc["channels"] = chs;
    } else {
        tiadc["channels"] = nullptr;
    }
    const MismatchConfig& m = c.tiadc.mismatch;
    tiadc["mismatch"] = json{{"offset_std_v", m.offset_std_v},
                             {"gain_std", m.gain_std},
                             {"timing_std_rel", m.timing_std_rel},
                             {"cutoff_std_rel", m.cutoff_std_rel},
                             {"nominal_cutoff_rel", detail::optional_to_json(m.nominal_cutoff_rel)}};

    json tones = json::array();
    for (const Tone& t : c.signal.tones) {
        tones.push_back({{"amplitude_v", t.amplitude()}, {"frequency_hz", t.frequency()}, {"phase_rad", t.phase()}});
    }
    return json{
        {"scenario", name_of(c.scenario, kScenarioNames)},
        {"master_seed", c.master_seed},
        {"output_dir", c.output_dir},
        {"k_frames", c.k_frames},
        {"tiadc", tiadc},
        {"signal", {{"tones", tones}, {"dc_v", c.signal.dc}}},
        {"sweep",
         {{"parameter", name_of(c.sweep.parameter, kSweepParameterNames)},
          {"values", c.sweep.values},
          {"trials", c.sweep.trials},
          {"aggregate", name_of(c.sweep.aggregate, kAggregateNames)}}},
        {"identification",
         {{"k_frames", c.identification.k_frames},
          {"difference_mode", name_of(c.identification.difference_mode, kDifferenceModeNames)}}},
        {"calibration", {{"taps", c.calibration.taps}, {"stages", detail::stages_to_json(c.calibration.stages)}}},
        {"analysis",
         {{"window", name_of(c.analysis.window, kWindowNames)},
          {"spur_margin_db", c.analysis.spur_margin_db},
          {"tolerance_bins", c.analysis.tolerance_bins}}},
    };
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Trial machinery

inline std::uint64_t trial_seed(std::uint64_t master_seed, std::size_t trial) {
    return derive_seed(master_seed, {static_cast<std::uint64_t>(trial)});
}

/// Converter for one trial: explicit channels if configured, otherwise drawn
/// from the mismatch sigmas with the trial seed.
inline TiAdcConfig build_converter(const ExperimentConfig& c, std::uint64_t seed,
                                   const MismatchConfig& mismatch) {
    const TiAdcSection& a = c.tiadc;
    TiAdcConfig cfg;
    cfg.m_channels = a.m_channels;
    cfg.sample_rate = a.sample_rate_hz;
    cfg.jitter_std = a.jitter_std_rel * cfg.sample_period();
    cfg.quantizer = a.quantizer;
    cfg.reference_aligned_to = a.reference_aligned_to;
    cfg.rng_seed = seed;

    const double nominal_cutoff = mismatch.nominal_cutoff_rel ? *mismatch.nominal_cutoff_rel * a.sample_rate_hz
                                                              : std::numeric_limits<double>::infinity();
    auto to_params = [&](const ChannelConfig& ch, double default_cutoff) {
        ChannelParams p;
        p.offset = ch.offset_v;
        p.gain = ch.gain;
        p.timing_skew = ch.timing_skew_rel * cfg.sample_period();
        const double cutoff = ch.cutoff_hz.value_or(default_cutoff);
        p.filter = std::isinf(cutoff) ? FilterSpec::transparent() : FilterSpec(cutoff);
        return p;
    };
    cfg.reference = to_params(a.reference, nominal_cutoff);
    cfg.channels.clear();
    if (a.channels) {
        for (const ChannelConfig& ch : *a.channels) cfg.channels.push_back(to_params(ch, nominal_cutoff));
    } else {
        const MismatchSigmas sigma{mismatch.offset_std_v, mismatch.gain_std,
                                   mismatch.timing_std_rel * cfg.sample_period(), mismatch.cutoff_std_rel};
        for (std::size_t m = 0; m < a.m_channels; ++m) {
            cfg.channels.push_back(draw_channel_params(sigma, nominal_cutoff, cfg.sample_period(), seed, m));
        }
    }
    cfg.validate();
    return cfg;
}

/// Carrier frequency folded into the first Nyquist zone: the largest tone.
inline double carrier_frequency(const ExperimentConfig& c) {
    const Tone* best = nullptr;
    for (const Tone& t : c.signal.tones) {
        if (!best || t.amplitude() > best->amplitude()) best = &t;
    }
    return best ? fold_frequency(best->frequency(), c.tiadc.sample_rate_hz) : 0.0;
}

/// Frames simulated per trial and where the analysis window starts, leaving
/// room for the interpolator's transients on both sides.
struct CaptureLayout {
    std::size_t frames = 0;
    std::size_t window_start = 0;
    std::size_t window_length = 0;
};

inline CaptureLayout capture_layout(const ExperimentConfig& c, bool identify) {
    const std::size_t m = c.tiadc.m_channels;
    const std::size_t guard_frames = (c.calibration.taps + m - 1) / m + 1;
    const std::size_t record_frames = (c.k_frames + m - 1) / m;
    CaptureLayout l;
    l.frames = record_frames + 2 * guard_frames;
    if (identify) l.frames = std::max(l.frames, c.identification.k_frames);
    l.window_start = guard_frames * m;
    l.window_length = c.k_frames;
    return l;
}

inline SpectrumReport analyze_window(const ExperimentConfig& c, std::span<const double> x, const CaptureLayout& l) {
    AnalyzeOptions opt;
    opt.window = c.analysis.window;
    opt.spur_margin_db = c.analysis.spur_margin_db;
    const double f0 = carrier_frequency(c);
    const double fs = c.tiadc.sample_rate_hz;
    if (f0 > 0.0) opt.carrier_hint = f0;
    SpectrumReport r = analyze(x.subspan(l.window_start, l.window_length), fs, opt);
    if (f0 > 0.0 && f0 < 0.5 * fs) {
        r = label_spurs(std::move(r), predict_spurs(c.tiadc.m_channels, f0, fs), c.analysis.tolerance_bins);
    }
    return r;
}

struct TrialResult {
    TiAdcConfig converter;
    ChannelOutputs outputs;
    std::optional<MismatchEstimate> estimate;
    std::optional<SpectrumReport> uncalibrated;
    std::optional<SpectrumReport> calibrated;
    std::string error;  ///< degenerate signal or estimator failure; trial excluded when set
};

/// Simulates one trial and, when asked, identifies and calibrates it.
/// Degenerate-signal and estimator failures are recorded in `error`.
inline TrialResult run_trial(const ExperimentConfig& c, std::size_t trial, const MismatchConfig& mismatch,
                             bool identify, bool calibrate_stream) {
    TrialResult t;
    const std::uint64_t seed = trial_seed(c.master_seed, trial);
    const CaptureLayout layout = capture_layout(c, identify);
    t.converter = build_converter(c, seed, mismatch);
    t.outputs = simulate(t.converter, c.signal, layout.frames);
    try {
        const std::vector<double> raw = interleave(t.outputs);
        t.uncalibrated = analyze_window(c, raw, layout);
        if (!identify) return t;
        t.estimate = estimate_all(t.outputs, t.converter, c.signal, c.identification.difference_mode);
        if (calibrate_stream) {
            const CorrectedStream fixed =
                calibrate(t.outputs, *t.estimate, c.calibration.taps, c.calibration.stages);
            t.calibrated = analyze_window(c, fixed.samples, layout);
        }
    } catch (const ChannelEstimationError& e) {
        t.error = e.what();
    } catch (const DegenerateSignalError& e) {
        t.error = e.what();
    } catch (const DivergenceError& e) {
        t.error = e.what();
    }
    return t;
}

/// Runs fn(i) for i in `order` on up to `threads` workers.
template <class Fn>
void for_each_parallel(const std::vector<std::size_t>& order, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(order.size())));
    if (threads == 1) {
        for (std::size_t i : order) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t j = next++; j < order.size(); j = next++) {
                try {
                    fn(order[j]);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (std::thread& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Artifacts

struct RunOptions {
    std::string out_dir;                  ///< overrides config.output_dir when non-empty
    unsigned threads = 0;                 ///< 0: hardware concurrency
    std::vector<std::size_t> trial_order; ///< execution order of sweep trials; empty: ascending
};

struct RunResult {
    json report;
    std::vector<std::filesystem::path> files;
    std::size_t excluded_trials = 0;
};

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string spectrum_csv(const SpectrumReport& r) {
    std::string out = "freq_hz,power_dbc\n";
    for (std::size_t k = 0; k < r.bin_freqs.size(); ++k) {
        out += format_number(r.bin_freqs[k]) + "," + format_number(r.power_dbc[k]) + "\n";
    }
    return out;
}

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + tmp.string());
        f << content;
        if (!f) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

namespace detail {

inline json metrics_json(const SpectrumReport& r) {
    return json{{"sinad_db", r.sinad_db},
                {"sfdr_db", r.sfdr_db},
                {"enob_bits", r.enob_bits},
                {"noise_floor_dbc", r.noise_floor_dbc},
                {"carrier_bin", r.carrier_bin},
                {"carrier_freq_hz", r.bin_freqs[r.carrier_bin]}};
}

inline json spurs_json(const SpectrumReport& r) {
    json a = json::array();
    for (const Spur& s : r.spurs) {
        a.push_back({{"bin", s.bin}, {"freq_hz", s.freq_hz}, {"power_dbc", s.power_dbc}, {"label", to_string(s.label)}});
    }
    return a;
}

inline json channels_json(const TiAdcConfig& cfg, const MismatchEstimate* est) {
    json a = json::array();
    for (std::size_t m = 0; m < cfg.m_channels; ++m) {
        const ChannelParams& p = cfg.channels[m];
        json truth{{"offset_v", p.offset},
                   {"gain", p.gain},
                   {"timing_skew_rel", p.timing_skew / cfg.sample_period()},
                   {"cutoff_hz", p.filter.is_transparent() ? json(nullptr) : json(p.filter.cutoff())}};
        json entry{{"channel", m}, {"truth", truth}};
        if (est) {
            entry["estimate"] = {{"offset_v", est->offsets_v[m]},
                                 {"gain", est->gains[m]},
                                 {"timing_skew_rel", est->rel_timing[m]}};
        }
        a.push_back(entry);
    }
    return a;
}

inline double aggregate(const std::vector<double>& v, Aggregate how) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (how == Aggregate::worst) return *std::min_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

/// Executes the configured scenario and writes spectrum.csv / sweep.csv and
/// report.json into the output directory.
inline RunResult run(const ExperimentConfig& c, const RunOptions& opt = {}) {
    namespace fs = std::filesystem;
    const fs::path dir = opt.out_dir.empty() ? fs::path(c.output_dir) : fs::path(opt.out_dir);
    RunResult res;
    json& rep = res.report;
    rep["scenario"] = name_of(c.scenario, kScenarioNames);
    rep["master_seed"] = c.master_seed;

    if (c.scenario != Scenario::sweep) {
        const bool identify = c.scenario == Scenario::identify || c.scenario == Scenario::calibrate;
        const bool calibrate_stream = c.scenario == Scenario::calibrate;
        TrialResult t = run_trial(c, 0, c.tiadc.mismatch, identify, calibrate_stream);
        if (!t.error.empty()) throw Error("trial failed: " + t.error);
        const SpectrumReport& shown = t.calibrated ? *t.calibrated : *t.uncalibrated;
        rep["trial_seed"] = trial_seed(c.master_seed, 0);
        rep["metrics"] = detail::metrics_json(shown);
        if (t.calibrated) rep["metrics_uncalibrated"] = detail::metrics_json(*t.uncalibrated);
        rep["spurs"] = detail::spurs_json(shown);
        rep["channels"] = detail::channels_json(t.converter, t.estimate ? &*t.estimate : nullptr);
        if (t.estimate) rep["k_used"] = t.estimate->k_used;
        rep["saturations"] = t.outputs.saturations;
        rep["config"] = to_json(c);
        write_atomic(dir / "spectrum.csv", spectrum_csv(shown));
        res.files.push_back(dir / "spectrum.csv");
    } else {
        const std::size_t n_trials = c.sweep.trials;
        const std::size_t n_values = c.sweep.values.size();
        std::vector<std::size_t> order = opt.trial_order;
        if (order.empty()) {
            for (std::size_t i = 0; i < n_trials; ++i) order.push_back(i);
        }
        if (order.size() != n_trials) throw InputError("trial_order must list every trial exactly once");

        struct Cell {
            double uncompensated = 0.0;
            double compensated = 0.0;
            std::string error;
        };
        std::vector<std::vector<Cell>> cells(n_values, std::vector<Cell>(n_trials));
        const unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
        for_each_parallel(order, threads, [&](std::size_t trial) {
            for (std::size_t v = 0; v < n_values; ++v) {
                MismatchConfig mm = c.tiadc.mismatch;
                switch (c.sweep.parameter) {
                    case SweepParameter::offset_std: mm.offset_std_v = c.sweep.values[v]; break;
                    case SweepParameter::gain_std: mm.gain_std = c.sweep.values[v]; break;
                    case SweepParameter::timing_std: mm.timing_std_rel = c.sweep.values[v]; break;
                }
                TrialResult t = run_trial(c, trial, mm, true, true);
                Cell& cell = cells[v][trial];
                if (t.error.empty()) {
                    cell.uncompensated = t.uncalibrated->sinad_db;
                    cell.compensated = t.calibrated->sinad_db;
                } else {
                    cell.error = t.error;
                }
            }
        });

        std::string csv = "sigma,aggregate_sinad_db_uncompensated,aggregate_sinad_db_compensated\n";
        json points = json::array();
        for (std::size_t v = 0; v < n_values; ++v) {
            std::vector<double> unc;
            std::vector<double> comp;
            json errors = json::array();
            for (std::size_t trial = 0; trial < n_trials; ++trial) {
                const Cell& cell = cells[v][trial];
                if (!cell.error.empty()) {
                    errors.push_back({{"trial", trial}, {"error", cell.error}});
                    continue;
                }
                unc.push_back(cell.uncompensated);
                comp.push_back(cell.compensated);
            }
            res.excluded_trials += static_cast<std::size_t>(errors.size());
            const double a_unc = detail::aggregate(unc, c.sweep.aggregate);
            const double a_comp = detail::aggregate(comp, c.sweep.aggregate);
            csv += format_number(c.sweep.values[v]) + "," + format_number(a_unc) + "," + format_number(a_comp) + "\n";
            points.push_back({{"sigma", c.sweep.values[v]},
                              {"aggregate_sinad_db_uncompensated", detail::number_or_null(a_unc)},
                              {"aggregate_sinad_db_compensated", detail::number_or_null(a_comp)},
                              {"trials_used", unc.size()},
                              {"excluded", errors}});
        }
        rep["sweep"] = points;
        rep["excluded_trials"] = res.excluded_trials;
        rep["config"] = to_json(c);
        write_atomic(dir / "sweep.csv", csv);
        res.files.push_back(dir / "sweep.csv");
    }
    write_atomic(dir / "report.json", rep.dump(2) + "\n");
    res.files.push_back(dir / "report.json");
    return res;
}

}  // namespace tiadc::experiment
