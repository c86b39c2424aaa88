#pragma once

#include <array>

namespace smc::testdata {

// Reference rate allocation for the 10.24 s window: stack factor, vocabularies,
// tokens per second and kbps (semantic, acoustic, total).
struct RateRow {
    int stack;
    unsigned semantic_vocab;
    unsigned acoustic_vocab;
    double tokens_per_second;
    double kbps_semantic;
    double kbps_acoustic;
    double kbps_total;
};

inline constexpr std::array<RateRow, 12> kRateTable = {{
    {1, 32768, 8192, 100, 0.75, 0.65, 1.40},
    {1, 16384, 8192, 100, 0.70, 0.65, 1.35},
    {1, 8192, 8192, 100, 0.65, 0.65, 1.30},
    {1, 4096, 8192, 100, 0.60, 0.65, 1.25},
    {2, 32768, 8192, 50, 0.375, 0.325, 0.700},
    {2, 16384, 8192, 50, 0.350, 0.325, 0.675},
    {2, 8192, 8192, 50, 0.325, 0.325, 0.650},
    {2, 4096, 8192, 50, 0.300, 0.325, 0.625},
    {4, 32768, 8192, 25, 0.1875, 0.1625, 0.3500},
    {4, 16384, 8192, 25, 0.1750, 0.1625, 0.3375},
    {4, 8192, 8192, 25, 0.1625, 0.1625, 0.3250},
    {4, 4096, 8192, 25, 0.1500, 0.1625, 0.3125},
}};

}  // namespace smc::testdata
