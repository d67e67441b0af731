#pragma once

#include <cstdint>
#include <string>

#include "nefes/field.hpp"
#include "nefes/refine.hpp"
#include "nefes/render.hpp"
#include "nefes/training.hpp"

namespace nefes::cfg {

struct SceneConfig {
    std::uint64_t seed = 42;
    int n_train = 16;
    int n_test = 8;
    double jitter_fraction = 0.5;
};

struct RunConfig {
    SceneConfig scene;
    field::FieldConfig field;
    render::RendererConfig renderer;
    train::TrainConfig train;
    refine::RefineConfig refine;

    // "desk" or "paper"
    static RunConfig preset(const std::string& name);
};

// INI-style text: [section] headers, key = value lines, # or ; comments.
// Unknown sections or keys are rejected (std::invalid_argument names the key);
// keys not present keep their current values.
void apply_config_text(RunConfig& rc, const std::string& text);
void apply_config_file(RunConfig& rc, const std::string& path);

}  // namespace nefes::cfg
