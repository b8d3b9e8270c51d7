#pragma once

#include <vector>

namespace duet {

/// Row-major H x W x C pixel block, float32 storage (the dataset's canonical
/// precision).
struct Image {
    int h = 0, w = 0, c = 1;
    std::vector<float> px;

    float at(int y, int x, int ch = 0) const {
        return px[static_cast<size_t>((y * w + x) * c + ch)];
    }
};

}  // namespace duet
