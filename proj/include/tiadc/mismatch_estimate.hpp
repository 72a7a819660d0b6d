#pragma once

#include <cstddef>
#include <vector>

namespace tiadc {

/// Per-channel mismatch estimates relative to the reference channel.
struct MismatchEstimate {
    std::vector<double> offsets_v;
    std::vector<double> gains;
    std::vector<double> rel_timing;  ///< estimated skew_m / Ts
    std::size_t k_used = 0;          ///< samples per channel

    std::size_t m_channels() const { return gains.size(); }

    /// No correction: zero offsets, unit gains, zero skew.
    static MismatchEstimate identity(std::size_t m) {
        return {std::vector<double>(m, 0.0), std::vector<double>(m, 1.0), std::vector<double>(m, 0.0), 0};
    }
};

}  // namespace tiadc
