#pragma once

#include <cstdint>
#include <string>

#include "nefes/field.hpp"
#include "nefes/refine.hpp"
#include "nefes/render.hpp"
#include "nefes/training.hpp"

namespace nefes::ckpt {

struct Checkpoint {
    field::FieldConfig fcfg;
    render::RendererConfig rcfg;
    train::TrainConfig tcfg;
    std::uint64_t extractor_seed = 0;
    train::TrainState state;
};

// Little-endian binary: magic, format version, configs, length-prefixed named
// arrays (parameters, optimizer moments, batchnorm statistics), trailing
// crc32. Loading verifies the checksum and rejects other versions.
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Convenience view for refinement jobs.
refine::NeFeSModel to_model(const Checkpoint& c);

}  // namespace nefes::ckpt
