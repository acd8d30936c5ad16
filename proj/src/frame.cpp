#include "vicon/frame.hpp"

#include <set>
#include <stdexcept>

namespace vicon {

Frame to_union_channels(const Tensor<float>& raw, const std::vector<int64_t>& dataset_channel_ids) {
    if (raw.ndim() != 3) {
        throw std::invalid_argument("to_union_channels expects [nx,ny,c] data, got " + shape_str(raw.shape));
    }
    const int64_t nx = raw.dim(0), ny = raw.dim(1), c_ds = raw.dim(2);
    if (static_cast<int64_t>(dataset_channel_ids.size()) > c_ds) {
        throw std::invalid_argument("to_union_channels: " + std::to_string(dataset_channel_ids.size()) +
                                    " channel ids for " + std::to_string(c_ds) + " raw channels");
    }
    std::set<int64_t> seen;
    for (int64_t id : dataset_channel_ids) {
        if (id < 0 || id >= kUnionChannels) {
            throw std::invalid_argument("to_union_channels: channel id " + std::to_string(id) +
                                        " outside union range [0," + std::to_string(kUnionChannels) + ")");
        }
        if (!seen.insert(id).second) {
            throw std::invalid_argument("to_union_channels: duplicate channel id " + std::to_string(id));
        }
    }

    Frame frame = Frame::zeros(nx, ny);
    for (int64_t j = 0; j < static_cast<int64_t>(dataset_channel_ids.size()); ++j) {
        const int64_t slot = dataset_channel_ids[static_cast<size_t>(j)];
        frame.channel_mask[static_cast<size_t>(slot)] = true;
        for (int64_t i = 0; i < nx; ++i) {
            for (int64_t k = 0; k < ny; ++k) frame.values.at3(i, k, slot) = raw.at3(i, k, j);
        }
    }
    return frame;
}

}  // namespace vicon
