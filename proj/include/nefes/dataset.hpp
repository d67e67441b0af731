#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nefes/image.hpp"
#include "nefes/lie.hpp"

namespace nefes {

struct DatasetEntry {
    std::string image_name;
    ImageBuffer image;
    lie::Pose pose;
    bool jittered = false;
};

struct Dataset {
    lie::CameraIntrinsics intrinsics;
    std::vector<DatasetEntry> train;
    std::vector<DatasetEntry> test;
    std::uint64_t seed = 0;
};

}  // namespace nefes
