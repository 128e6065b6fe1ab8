// Published worked examples used as fixed test vectors.
#pragma once

#include <cstdint>
#include <vector>

#include "ehrlich/sequence.hpp"

namespace vectors {

// 4x4 construction example: raw normal draws, shuffled banded mask, and the
// resulting transition matrix printed to two decimals.
inline const std::vector<double> kLogits = {
    +1.41, +1.67, -1.52, +0.63,  //
    -0.35, +0.45, +0.86, -0.49,  //
    +1.42, -1.31, -0.31, +1.43,  //
    -0.02, +1.55, -0.26, +1.13,
};
inline const std::vector<std::uint8_t> kMask = {
    1, 0, 1, 1,  //
    1, 1, 1, 0,  //
    1, 1, 1, 1,  //
    0, 1, 1, 1,
};
inline const std::vector<double> kSoftmaxRow0 = {0.36, 0.46, 0.02, 0.16};
inline const std::vector<double> kTransition = {
    0.66, 0.00, 0.04, 0.30,  //
    0.15, 0.34, 0.51, 0.00,  //
    0.44, 0.03, 0.08, 0.45,  //
    0.00, 0.55, 0.09, 0.36,
};
inline const std::vector<double> kStationaryRow = {0.33, 0.23, 0.17, 0.27};

// Motif chunking / optimum example with L=8, c=2, k=2.
inline const ehrlich::Sequence kJointSample = {0, 3, 1, 2};
inline const ehrlich::Sequence kOptimum = {0, 0, 0, 3, 1, 1, 1, 2};

// The Ehr(32,32)-4-4-4 motif set and scored example sequences.
inline const std::vector<ehrlich::Sequence> kF2Motifs = {
    {3, 16, 15, 11}, {24, 3, 16, 15}, {11, 14, 8, 10}, {22, 27, 7, 20}};
inline const std::vector<std::vector<int>> kF2Offsets = {
    {0, 2, 4, 5}, {0, 3, 5, 6}, {0, 1, 4, 6}, {0, 2, 4, 15}};
inline const ehrlich::Sequence kX1 = {12, 31, 2,  4,  15, 7,  14, 15, 12, 31, 11,
                                      29, 25, 1,  15, 11, 19, 24, 22, 5,  17, 27,
                                      1,  14, 31, 28, 16, 15, 11, 14, 16, 10};
inline const ehrlich::Sequence kX3 = {3,  16, 15, 11, 24, 24, 24, 24, 15, 11, 22,
                                      22, 22, 22, 22, 22, 22, 22, 22, 22, 22, 22,
                                      22, 22, 22, 22, 22, 22, 22, 22, 22, 22};
inline const ehrlich::Sequence kX4 = {3,  3,  16, 16, 15, 11, 24, 24, 24, 24, 15,
                                      11, 22, 22, 22, 22, 22, 22, 22, 22, 22, 22,
                                      22, 22, 22, 22, 22, 22, 22, 22, 22, 22};

}  // namespace vectors
