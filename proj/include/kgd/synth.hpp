#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

namespace kgd {

/// Desk-scale stand-in for a downstream domain. Categories get random unit
/// prototypes; the target domain moves every category cluster away from its
/// prototype (partly toward the next category), so a teacher that scores
/// against the source prototypes makes systematic mistakes. The whole space
/// is translated so the target cluster centres average to zero. Text embeddings
/// sit near the prototypes, with hyponym prompts spread along each
/// category's shift.
struct SynthSpec {
    std::size_t n_categories = 3;
    std::size_t dim = 32;
    double shift = 1.5;
    std::size_t n_images = 600;
    std::size_t proposals_per_image = 4;
    std::size_t probe_size = 1200;
    std::uint64_t seed = 42;

    // Shape of the generated domain.
    double toward_next = 0.4;  // weight of the next-category direction in each shift
    double feature_noise = 0.45;  // norm scale of per-proposal feature noise
    double source_noise = 0.2;
    std::size_t source_samples = 50;  // per category, averaged into the teacher's prototypes
    double teacher_sharpness = 3.0;
    double teacher_noise = 0.05;
    double text_noise = 0.1;
    std::size_t min_hyponyms = 3;
    std::size_t max_hyponyms = 5;
};

nlohmann::json to_json(const SynthSpec& s);
/// Overlays keys present in `j`; unknown keys are rejected.
SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec base = {});

/// Writes dataset.json and every file it references into `out_dir`.
/// Returns the manifest path. Same spec, same bytes.
std::filesystem::path synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace kgd
