#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "vicon/frame.hpp"
#include "vicon/tensor.hpp"

namespace vicon {

struct PatchLayout {
    int64_t patches_x = 0;
    int64_t patches_y = 0;
    int64_t rx = 0;
    int64_t ry = 0;
    int64_t channels = 0;

    int64_t num_patches() const { return patches_x * patches_y; }
    int64_t patch_len() const { return rx * ry * channels; }

    bool operator==(const PatchLayout&) const = default;
};

template <typename T>
struct BasicPatchGrid {
    PatchLayout layout;
    Tensor<T> patches;  // [num_patches, patch_len]
};

using PatchGrid = BasicPatchGrid<float>;

/// Split a [nx, ny, c] field into non-overlapping [rx, ry, c] patches,
/// row-major over the patch grid, each patch flattened row-major. Lossless.
template <typename T>
BasicPatchGrid<T> patchify_values(const Tensor<T>& values, int64_t rx, int64_t ry) {
    if (values.ndim() != 3) {
        throw std::invalid_argument("patchify expects a [nx,ny,c] field, got " + shape_str(values.shape));
    }
    const int64_t nx = values.dim(0), ny = values.dim(1), c = values.dim(2);
    if (rx < 1 || nx % rx != 0) {
        throw std::invalid_argument("patch size Rx=" + std::to_string(rx) + " does not divide Nx=" +
                                    std::to_string(nx));
    }
    if (ry < 1 || ny % ry != 0) {
        throw std::invalid_argument("patch size Ry=" + std::to_string(ry) + " does not divide Ny=" +
                                    std::to_string(ny));
    }
    BasicPatchGrid<T> grid;
    grid.layout = PatchLayout{nx / rx, ny / ry, rx, ry, c};
    grid.patches = Tensor<T>({grid.layout.num_patches(), grid.layout.patch_len()});
    for (int64_t px = 0; px < grid.layout.patches_x; ++px) {
        for (int64_t py = 0; py < grid.layout.patches_y; ++py) {
            const int64_t k = px * grid.layout.patches_y + py;
            T* dst = grid.patches.data.data() + k * grid.layout.patch_len();
            for (int64_t i = 0; i < rx; ++i) {
                const T* src = values.data.data() + ((px * rx + i) * ny + py * ry) * c;
                for (int64_t j = 0; j < ry * c; ++j) dst[i * ry * c + j] = src[j];
            }
        }
    }
    return grid;
}

/// Exact inverse of patchify_values.
template <typename T>
Tensor<T> unpatchify_values(const BasicPatchGrid<T>& grid) {
    const PatchLayout& L = grid.layout;
    if (L.patches_x < 1 || L.patches_y < 1 || L.rx < 1 || L.ry < 1 || L.channels < 1 ||
        grid.patches.ndim() != 2 || grid.patches.rows() != L.num_patches() ||
        grid.patches.cols() != L.patch_len()) {
        throw std::invalid_argument("unpatchify: layout inconsistent with patches " +
                                    shape_str(grid.patches.shape));
    }
    const int64_t ny = L.patches_y * L.ry, c = L.channels;
    Tensor<T> values({L.patches_x * L.rx, ny, c});
    for (int64_t px = 0; px < L.patches_x; ++px) {
        for (int64_t py = 0; py < L.patches_y; ++py) {
            const int64_t k = px * L.patches_y + py;
            const T* src = grid.patches.data.data() + k * L.patch_len();
            for (int64_t i = 0; i < L.rx; ++i) {
                T* dst = values.data.data() + ((px * L.rx + i) * ny + py * L.ry) * c;
                for (int64_t j = 0; j < L.ry * c; ++j) dst[j] = src[i * L.ry * c + j];
            }
        }
    }
    return values;
}

inline PatchGrid patchify(const Frame& frame, int64_t rx, int64_t ry) {
    return patchify_values(frame.values, rx, ry);
}

inline Tensor<float> unpatchify(const PatchGrid& grid) { return unpatchify_values(grid); }

}  // namespace vicon
