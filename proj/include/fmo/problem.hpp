#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fmo/dose_engine.hpp"
#include "fmo/error.hpp"
#include "fmo/influence_matrix.hpp"
#include "fmo/objective.hpp"
#include "fmo/phantom.hpp"

namespace fmo {

/// Everything that turns a case name into a fluence objective.
struct ProblemSettings {
    int n_beams = 9;
    double bixel_size = 5.0;  // mm
    double field_margin = 5.0; // mm around the projected targets
    PencilBeamParams pencil_beam{};
    double smoothness_weight = 0.01;

    void validate() const {
        if (n_beams < 1) throw ConfigError("n_beams must be >= 1");
        if (!(bixel_size > 0.0)) throw ConfigError("bixel_size must be positive");
        if (!(field_margin >= 0.0)) throw ConfigError("field_margin must be >= 0");
        if (!(smoothness_weight >= 0.0)) throw ConfigError("smoothness_weight must be >= 0");
        pencil_beam.validate();
    }
};

struct Problem {
    Phantom phantom;
    BeamConfig beams;
    DoseInfluenceMatrix matrix;
    ObjectiveSpec spec;
};

inline Problem build_problem(std::string_view case_name, const ProblemSettings& settings = {},
                             const std::string& matrix_cache = {}) {
    settings.validate();
    Problem p;
    p.phantom = build_builtin_case(case_name);
    p.beams = conformal_beam_config(p.phantom, settings.n_beams, settings.bixel_size, settings.field_margin);
    p.spec = ObjectiveSpec{default_goals(case_name), settings.smoothness_weight, fluence_neighbor_pairs(p.beams)};

    bool loaded = false;
    if (!matrix_cache.empty() && std::filesystem::exists(matrix_cache)) {
        p.matrix = read_triplet_file(matrix_cache);
        loaded = p.matrix.n_voxels() == p.phantom.grid.voxel_count() && p.matrix.n_bixels() == p.beams.n_bixels();
    }
    if (!loaded) {
        p.matrix = compute_influence_matrix(p.phantom, p.beams, settings.pencil_beam);
        if (!matrix_cache.empty()) {
            const auto dir = std::filesystem::path(matrix_cache).parent_path();
            if (!dir.empty()) std::filesystem::create_directories(dir);
            write_triplet_file(p.matrix, matrix_cache);
        }
    }
    return p;
}

inline void to_json(nlohmann::json& j, const ProblemSettings& s) {
    j = {{"n_beams", s.n_beams},
         {"bixel_size", s.bixel_size},
         {"field_margin", s.field_margin},
         {"pencil_beam", s.pencil_beam},
         {"smoothness_weight", s.smoothness_weight}};
}

inline void from_json(const nlohmann::json& j, ProblemSettings& s) {
    s.n_beams = j.value("n_beams", s.n_beams);
    s.bixel_size = j.value("bixel_size", s.bixel_size);
    s.field_margin = j.value("field_margin", s.field_margin);
    if (j.contains("pencil_beam")) s.pencil_beam = j.at("pencil_beam").get<PencilBeamParams>();
    s.smoothness_weight = j.value("smoothness_weight", s.smoothness_weight);
}

} // namespace fmo
