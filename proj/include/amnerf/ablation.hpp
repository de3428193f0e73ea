#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "amnerf/renderer.hpp"
#include "amnerf/scene_config.hpp"
#include "amnerf/subdivision.hpp"

namespace amnerf {

/// Shallowest truncation of `tree` whose node count is closest to `target`.
inline int matching_depth(const KdTree& tree, std::size_t target) {
    int best = 0;
    long best_gap = -1;
    for (int d = 0; d <= tree.max_depth(); ++d) {
        std::size_t count = 0;
        for (const KdNode& n : tree.nodes) count += n.depth <= d ? 1 : 0;
        const long gap = std::labs(static_cast<long>(count) - static_cast<long>(target));
        if (best_gap < 0 || gap < best_gap) {
            best = d;
            best_gap = gap;
        }
    }
    return best;
}

struct AblationRow {
    std::string config;
    double psnr_db = 0.0;
    RenderStats stats;
};

struct AblationResult {
    std::size_t grid_nodes = 0;
    std::size_t adaptive_nodes = 0;
    int adaptive_depth = 0;
    std::vector<AblationRow> rows;  // adaptive_hcheck, adaptive_leaf, regular_hcheck, regular_leaf
};

struct AblationOptions {
    int grid_resolution = 4;
    int adaptive_depth = -1;  // < 0: match the grid's node count
    std::size_t camera = 0;
    unsigned workers = 1;
};

/// Adaptive vs. regular subdivision, each with and without hierarchical
/// sampling, rendered from the same camera against the same reference.
inline AblationResult run_ablation(const SceneConfig& scene, const AblationOptions& opt) {
    if (scene.cameras.empty() || opt.camera >= scene.cameras.size())
        throw InvalidArgument("ablation: scene has no camera at the requested index");
    const Camera& cam = scene.cameras[opt.camera];
    BuildConfig bc = scene.build;
    bc.workers = opt.workers;

    AblationResult res;
    const KdTree grid = build_regular_grid(scene.scene, scene.domain(), opt.grid_resolution, bc);
    const KdTree full = build_kdtree(scene.scene, scene.domain(), bc);
    res.grid_nodes = grid.node_count();
    res.adaptive_depth = opt.adaptive_depth >= 0 ? opt.adaptive_depth : matching_depth(full, grid.node_count());
    const KdTree adaptive = truncate_depth(full, res.adaptive_depth);
    res.adaptive_nodes = adaptive.node_count();

    const ImageBuffer reference = render_reference(scene.scene, scene.domain(), cam, scene.reference_steps,
                                                   scene.background, opt.workers, scene.stop_transmittance);
    auto run = [&](const char* name, const KdTree& tree, bool hierarchical) {
        AblationRow row;
        row.config = name;
        const RenderOptions ro = render_options(scene, cam, hierarchical, RenderPath::Batched, opt.workers);
        const ImageBuffer img = render_image(tree, cam, ro, &row.stats);
        row.psnr_db = image_psnr(img, reference);
        res.rows.push_back(row);
    };
    run("adaptive_hcheck", adaptive, true);
    run("adaptive_leaf", adaptive, false);
    run("regular_hcheck", grid, true);
    run("regular_leaf", grid, false);
    return res;
}

}  // namespace amnerf
