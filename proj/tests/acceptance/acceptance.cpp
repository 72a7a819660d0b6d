// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Expected bin sets and quantization-noise figures are computed
// here from first principles, not through the library's own predictors.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tiadc/tiadc.hpp"

namespace {

using namespace tiadc;
namespace ex = tiadc::experiment;

constexpr double kFs = 1.0e6;
constexpr std::size_t kRecord = 1024;
constexpr std::size_t kCarrierBin = 101;

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %-34s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Folds an integer bin index of an n-point DFT into [0, n/2].
std::size_t fold_bin(long b, long n) {
    b %= n;
    if (b < 0) b += n;
    return static_cast<std::size_t>(b <= n / 2 ? b : n - b);
}

// Bins hit by offset mismatch: k * n / M for every k.
std::set<std::size_t> offset_bins(std::size_t m, std::size_t n) {
    std::set<std::size_t> s;
    for (std::size_t k = 0; k < m; ++k) s.insert(fold_bin(static_cast<long>(k * n / m), static_cast<long>(n)));
    return s;
}

// Bins hit by gain/timing mismatch: +-carrier + k * n / M, carrier excluded.
std::set<std::size_t> image_bins(std::size_t m, std::size_t n, std::size_t carrier) {
    std::set<std::size_t> s;
    for (std::size_t k = 0; k < m; ++k) {
        for (long sign : {1L, -1L}) {
            s.insert(fold_bin(sign * static_cast<long>(carrier) + static_cast<long>(k * n / m), static_cast<long>(n)));
        }
    }
    s.erase(carrier);
    return s;
}

bool near_set(std::size_t bin, const std::set<std::size_t>& s, long tol = 1) {
    for (std::size_t b : s) {
        if (std::abs(static_cast<long>(bin) - static_cast<long>(b)) <= tol) return true;
    }
    return false;
}

struct SpurShares {
    double total = 0.0;
    double on_offset = 0.0;
    double on_image = 0.0;
    std::size_t count = 0;
    std::size_t image_count = 0;
};

// Splits the above-floor spur power between the two bin families.
SpurShares shares(const SpectrumReport& r, std::size_t m) {
    const auto off = offset_bins(m, r.n_samples);
    const auto img = image_bins(m, r.n_samples, kCarrierBin);
    SpurShares s;
    for (const Spur& sp : r.spurs) {
        const double p = std::pow(10.0, sp.power_dbc / 10.0);
        s.total += p;
        ++s.count;
        if (near_set(sp.bin, off)) s.on_offset += p;
        if (near_set(sp.bin, img)) {
            s.on_image += p;
            ++s.image_count;
        }
    }
    return s;
}

SignalSpec carrier(double amplitude, double phase = 0.3) {
    return coherent_sine(amplitude, kCarrierBin, kRecord, kFs, phase);
}

std::vector<double> run_record(const TiAdcConfig& cfg, const SignalSpec& sig) {
    const ChannelOutputs out = simulate(cfg, sig, kRecord / cfg.m_channels);
    return interleave(out);
}

TiAdcConfig with_drawn(std::size_t m, int bits, const MismatchSigmas& sigma, std::uint64_t seed) {
    TiAdcConfig cfg = TiAdcConfig::ideal(m, kFs, {bits, -1.0, 1.0});
    cfg.rng_seed = seed;
    for (std::size_t c = 0; c < m; ++c) {
        cfg.channels[c] = draw_channel_params(sigma, std::numeric_limits<double>::infinity(), cfg.sample_period(),
                                              seed, c);
    }
    return cfg;
}

void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    const TiAdcConfig cfg = TiAdcConfig::ideal(4, kFs, {10, -1.0, 1.0});
    const SpectrumReport r = analyze(run_record(cfg, carrier(1.0)), kFs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = std::abs(r.noise_floor_dbc - (-89.0)) <= 2.0 && secs < 1.0;
    report(1, "ideal 10-bit noise floor", pass,
           fmt("floor %.2f dBc (target -89 +- 2), runtime %.3f s", r.noise_floor_dbc, secs));
}

void criterion_2() {
    bool pass = true;
    std::string detail;
    for (int bits : {8, 10, 12}) {
        const TiAdcConfig cfg = TiAdcConfig::ideal(4, kFs, {bits, -1.0, 1.0});
        const SpectrumReport r = analyze(run_record(cfg, carrier(1.0)), kFs);
        // Uniform quantization noise LSB^2/12 against a full-scale sine.
        const double law = 6.02 * bits + 1.76;
        const double err = r.sinad_db - law;
        pass = pass && std::abs(err) <= 0.5;
        detail += fmt("B=%d %.2f/%.2f dB  ", bits, r.sinad_db, law);
    }
    report(2, "quantizer SINAD law", pass, detail);
}

void criterion_3() {
    bool pass = true;
    double worst_share = 1.0;
    double worst_image = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const TiAdcConfig cfg = with_drawn(4, 10, {0.01 * 2.0, 0.0, 0.0, 0.0}, seed);
        const SpectrumReport r = analyze(run_record(cfg, carrier(0.9)), kFs);
        const SpurShares s = shares(r, 4);
        const double share = s.total > 0.0 ? s.on_offset / s.total : 0.0;
        worst_share = std::min(worst_share, share);
        worst_image = std::max(worst_image, s.on_image);
        pass = pass && s.count > 0 && share >= 0.99 && s.on_image == 0.0;
    }
    report(3, "offset spur placement", pass,
           fmt("min share on k*fs/4 %.4f (>= 0.99), image-bin spur power %.3g (== 0), 5 seeds", worst_share,
               worst_image));
}

void criterion_4() {
    bool pass = true;
    std::string detail;
    const std::pair<const char*, MismatchSigmas> cases[] = {
        {"gain", {0.0, 0.01, 0.0, 0.0}},
        {"timing", {0.0, 0.0, 0.005 / kFs, 0.0}},
    };
    for (const auto& [name, sigma] : cases) {
        double worst = 1.0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const TiAdcConfig cfg = with_drawn(4, 10, sigma, seed);
            const SpectrumReport r = analyze(run_record(cfg, carrier(0.9)), kFs);
            const SpurShares s = shares(r, 4);
            const double share = s.total > 0.0 ? s.on_image / s.total : 0.0;
            worst = std::min(worst, share);
            pass = pass && s.count > 0 && share >= 0.99;
        }
        detail += fmt("%s-only min share %.4f  ", name, worst);
    }
    report(4, "image spur placement", pass, detail + "(>= 0.99, 5 seeds)");
}

void criterion_5() {
    TiAdcConfig cfg = TiAdcConfig::ideal(4, kFs, {14, -1.0, 1.0});
    cfg.channels[1].gain = 1.02;
    const SignalSpec sig = carrier(0.9);
    const ChannelOutputs out = simulate(cfg, sig, 16384);
    const MismatchEstimate est = estimate_all(out, cfg, sig);
    double worst = 0.0;
    for (std::size_t m = 0; m < 4; ++m) {
        const double truth = cfg.channels[m].gain;
        worst = std::max(worst, std::abs(est.gains[m] - truth) / truth);
    }
    const double rel = std::abs(est.gains[1] - 1.02) / 1.02;
    report(5, "gain identification", rel < 1e-3 && worst < 1e-3,
           fmt("g1 = %.7f, rel err %.2e (< 1e-3), worst channel %.2e", est.gains[1], rel, worst));
}

void criterion_6() {
    const double grid[] = {-0.02, -0.01, -0.005, -0.002, 0.002, 0.005, 0.01, 0.02};
    constexpr int kTrials = 20;
    bool pass = true;
    double worst_agree = 1.0;
    std::vector<double> err_at_001;
    for (double rel : grid) {
        int agree = 0;
        for (int trial = 0; trial < kTrials; ++trial) {
            const std::uint64_t seed = derive_seed(2024, {static_cast<std::uint64_t>(trial)});
            RngStream phase_rng(seed, 0, StreamTag::signal);
            const SignalSpec sig = carrier(0.9, 2.0 * std::numbers::pi * phase_rng.uniform());
            TiAdcConfig cfg = TiAdcConfig::ideal(4, kFs, {14, -1.0, 1.0});
            cfg.rng_seed = seed;
            cfg.channels[1].timing_skew = rel / kFs;
            const ChannelOutputs out = simulate(cfg, sig, 16384);
            const double r_hat = estimate_all(out, cfg, sig).rel_timing[1];
            agree += (r_hat > 0.0) == (rel > 0.0) ? 1 : 0;
            if (std::abs(std::abs(rel) - 0.01) < 1e-12) err_at_001.push_back(std::abs(r_hat - rel));
        }
        const double frac = static_cast<double>(agree) / kTrials;
        worst_agree = std::min(worst_agree, frac);
        pass = pass && frac >= 0.95;
    }
    const double med = median(err_at_001);
    pass = pass && med <= 0.002;
    report(6, "timing identification", pass,
           fmt("min sign agreement %.2f (>= 0.95), median |err| at 0.01 = %.2e (<= 2e-3)", worst_agree, med));
}

ex::ExperimentConfig must_validate(const std::string& text) {
    ex::ValidationResult v = ex::validate(text);
    if (!v.ok()) {
        for (const auto& i : v.issues) std::fprintf(stderr, "%s\n", i.format().c_str());
        throw std::runtime_error("acceptance config invalid");
    }
    return *v.config;
}

const char* kSweepConfig = R"({
  "scenario": "SWEEP",
  "master_seed": 7,
  "tiadc": {
    "quantizer": {"bits": 10},
    "mismatch": {"timing_std_rel": 0.005}
  },
  "sweep": {"parameter": "GAIN_STD", "values": [0.001, 0.002, 0.005, 0.01, 0.02], "trials": 50, "aggregate": "WORST"},
  "calibration": {"stages": ["offset", "gain"]}
})";

void criterion_7(const std::filesystem::path& scratch) {
    const ex::ExperimentConfig cfg = must_validate(kSweepConfig);
    ex::RunOptions opt;
    opt.out_dir = (scratch / "c7").string();
    const ex::RunResult res = ex::run(cfg, opt);
    std::vector<double> comp;
    for (const auto& p : res.report["sweep"]) comp.push_back(p["aggregate_sinad_db_compensated"].get<double>());
    const double spread = std::abs(comp[0] - comp[1]);
    std::string curve;
    for (double v : comp) curve += fmt("%.2f ", v);
    report(7, "gain sweep saturation", spread <= 1.0 && res.excluded_trials == 0,
           fmt("worst compensated SINAD [%s] dB, |S(0.001)-S(0.002)| = %.3f dB (<= 1)", curve.c_str(), spread));
}

void criterion_8() {
    const ex::ExperimentConfig cfg = must_validate(R"({
      "scenario": "CALIBRATE",
      "tiadc": {"quantizer": {"bits": 10},
                "mismatch": {"offset_std_v": 0.02, "gain_std": 0.01, "timing_std_rel": 0.005}},
      "identification": {"k_frames": 4096}
    })");
    ex::ExperimentConfig ideal = cfg;
    ideal.tiadc.mismatch = {};
    std::vector<double> base, cal, uncal;
    for (std::size_t trial = 0; trial < 20; ++trial) {
        const ex::TrialResult t = ex::run_trial(cfg, trial, cfg.tiadc.mismatch, true, true);
        const ex::TrialResult b = ex::run_trial(ideal, trial, ideal.tiadc.mismatch, false, false);
        if (!t.error.empty()) throw std::runtime_error(t.error);
        cal.push_back(t.calibrated->sinad_db);
        uncal.push_back(t.uncalibrated->sinad_db);
        base.push_back(b.uncalibrated->sinad_db);
    }
    const double mb = median(base), mc = median(cal), mu = median(uncal);
    const bool pass = mc >= mb - 3.0 && mc - mu >= 15.0;
    report(8, "end-to-end calibration", pass,
           fmt("median baseline %.2f, calibrated %.2f, uncalibrated %.2f dB (gap %.2f <= 3, gain %.2f >= 15)", mb, mc,
               mu, mb - mc, mc - mu));
}

void criterion_9() {
    const ex::ExperimentConfig cfg = must_validate(R"({
      "scenario": "BANDWIDTH_DEMO",
      "tiadc": {"quantizer": {"bits": 10}}
    })");
    bool pass = cfg.tiadc.mismatch.nominal_cutoff_rel == 5.0 && cfg.tiadc.mismatch.cutoff_std_rel == 0.1;
    std::size_t min_count = 1000;
    double min_share = 1.0;
    for (std::size_t trial = 0; trial < 5; ++trial) {
        const ex::TrialResult t = ex::run_trial(cfg, trial, cfg.tiadc.mismatch, false, false);
        const SpurShares s = shares(*t.uncalibrated, cfg.tiadc.m_channels);
        min_count = std::min(min_count, s.image_count);
        min_share = std::min(min_share, s.total > 0.0 ? s.on_image / s.total : 0.0);
        pass = pass && s.image_count > 0;
    }
    report(9, "bandwidth mismatch demo", pass,
           fmt("min above-floor spurs on image bins %zu (> 0), min image power share %.4f, 5 seeds", min_count,
               min_share));
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void criterion_10(const std::filesystem::path& scratch) {
    bool pass = true;
    std::string detail;
    const std::pair<const char*, std::string> configs[] = {
        {"spectrum", R"({"scenario": "SPECTRUM", "master_seed": 11, "tiadc": {"quantizer": {"bits": 10},
           "mismatch": {"offset_std_v": 0.02, "gain_std": 0.01, "timing_std_rel": 0.005}}})"},
        {"calibrate", R"({"scenario": "CALIBRATE", "master_seed": 12, "tiadc": {"quantizer": {"bits": 10},
           "mismatch": {"offset_std_v": 0.02, "gain_std": 0.01, "timing_std_rel": 0.005}}})"},
        {"sweep", R"({"scenario": "SWEEP", "master_seed": 13, "tiadc": {"quantizer": {"bits": 10},
           "mismatch": {"timing_std_rel": 0.005}},
           "sweep": {"parameter": "GAIN_STD", "values": [0.002, 0.01], "trials": 8, "aggregate": "AVERAGE"}})"},
    };
    for (const auto& [name, text] : configs) {
        const ex::ExperimentConfig cfg = must_validate(text);
        std::vector<ex::RunOptions> variants(3);
        variants[0].threads = 1;
        variants[1].threads = 1;
        variants[2].threads = 4;
        if (cfg.scenario == ex::Scenario::sweep) {
            variants[2].trial_order = {7, 2, 5, 0, 3, 6, 1, 4};
        }
        std::vector<std::string> outputs;
        for (std::size_t v = 0; v < variants.size(); ++v) {
            variants[v].out_dir = (scratch / ("c10_" + std::string(name) + std::to_string(v))).string();
            const ex::RunResult res = ex::run(cfg, variants[v]);
            std::string joined;
            for (const auto& f : res.files) joined += f.filename().string() + "\n" + slurp(f);
            outputs.push_back(joined);
        }
        const bool same = outputs[0] == outputs[1] && outputs[0] == outputs[2];
        pass = pass && same;
        detail += fmt("%s %s  ", name, same ? "identical" : "DIFFERENT");
    }
    report(10, "byte-identical artifacts", pass, detail);
}

}  // namespace

int main() {
    const std::filesystem::path scratch = std::filesystem::temp_directory_path() / "tiadc_acceptance";
    std::filesystem::remove_all(scratch);
    const std::function<void()> criteria[] = {
        criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
        [&] { criterion_7(scratch); }, criterion_8, criterion_9, [&] { criterion_10(scratch); },
    };
    int id = 1;
    for (const auto& c : criteria) {
        try {
            c();
        } catch (const std::exception& e) {
            report(id, "exception", false, e.what());
        }
        ++id;
    }
    std::printf("%d of 10 criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
