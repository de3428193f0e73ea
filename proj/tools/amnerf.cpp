// amnerf: build, render and ablate adaptive multi-MLP radiance field trees.
//
// Exit codes: 0 success, 1 usage error, 2 I/O or format error,
// 3 internal invariant violation.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "amnerf/amnerf.hpp"

namespace {

using namespace amnerf;

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitInternal = 3;

struct CommonArgs {
    std::optional<std::uint64_t> seed;
    unsigned workers = default_workers();
};

SceneConfig load_scene(const std::string& path, const CommonArgs& common) {
    SceneConfig cfg = load_scene_config(path);
    if (common.seed) {
        cfg.build.seed = *common.seed;
        cfg.build.distill.seed = *common.seed;
        cfg.sampling.seed = *common.seed;
    }
    cfg.build.workers = common.workers;
    return cfg;
}

const Camera& pick_camera(const SceneConfig& cfg, std::size_t index) {
    if (index >= cfg.cameras.size()) throw InvalidArgument("scene config has no camera #" + std::to_string(index));
    return cfg.cameras[index];
}

void print_stats(const RenderStats& st) {
    std::printf("rays=%zu\n", st.ray_count);
    std::printf("total_samples=%zu\n", st.total_samples);
    std::printf("avg_samples_per_ray=%.4f\n", st.avg_samples_per_ray);
    std::printf("intervals=%zu\n", st.total_intervals);
    std::printf("batches=%zu\n", st.batch_count);
    std::printf("max_batch=%zu\n", st.max_batch);
    std::printf("mean_batch=%.2f\n", st.mean_batch);
    std::printf("wall_ms=%.1f\n", st.wall_millis);
}

int cmd_build(const std::string& scene_path, const std::string& out_path, int grid, const CommonArgs& common) {
    const SceneConfig cfg = load_scene(scene_path, common);
    const KdTree tree = grid > 0 ? build_regular_grid(cfg.scene, cfg.domain(), grid, cfg.build)
                                 : build_kdtree(cfg.scene, cfg.domain(), cfg.build);
    tree.check();
    save_tree(tree, out_path);
    std::map<int, std::size_t> per_depth;
    for (const KdNode& n : tree.nodes) ++per_depth[n.depth];
    std::printf("nodes=%zu\n", tree.node_count());
    std::printf("leaves=%zu\n", tree.leaf_count());
    std::printf("max_depth=%d\n", tree.max_depth());
    for (const auto& [d, c] : per_depth) std::printf("depth[%d]=%zu\n", d, c);
    std::printf("distill_iterations=%zu\n", tree.node_count() * static_cast<std::size_t>(tree.config.distill.iterations));
    return 0;
}

int cmd_render(const std::string& tree_path, const std::string& scene_path, const std::string& out_path,
               const std::string& path_name, bool no_hcheck, bool psnr_ref, std::size_t camera_index,
               const CommonArgs& common) {
    const SceneConfig cfg = load_scene(scene_path, common);
    const KdTree tree = load_tree(tree_path);
    const Camera& cam = pick_camera(cfg, camera_index);
    const RenderPath path = path_name == "naive" ? RenderPath::Naive : RenderPath::Batched;
    const RenderOptions opt = render_options(cfg, cam, !no_hcheck, path, common.workers);
    RenderStats st;
    const ImageBuffer img = render_image(tree, cam, opt, &st);
    write_ppm(img, out_path);
    print_stats(st);
    if (psnr_ref) {
        const ImageBuffer ref =
            render_reference(cfg.scene, cfg.domain(), cam, cfg.reference_steps, cfg.background, common.workers,
                             cfg.stop_transmittance);
        std::printf("psnr_db=%.3f\n", image_psnr(img, ref));
    }
    return 0;
}

int cmd_ablate(const std::string& scene_path, int grid, int adaptive_depth, std::size_t camera_index,
               const CommonArgs& common) {
    const SceneConfig cfg = load_scene(scene_path, common);
    AblationOptions opt;
    opt.grid_resolution = grid;
    opt.adaptive_depth = adaptive_depth;
    opt.camera = camera_index;
    opt.workers = common.workers;
    const AblationResult res = run_ablation(cfg, opt);
    std::printf("# grid_nodes=%zu adaptive_nodes=%zu adaptive_depth=%d\n", res.grid_nodes, res.adaptive_nodes,
                res.adaptive_depth);
    std::printf("config,psnr_db,avg_samples_per_ray,batches,wall_ms\n");
    for (const AblationRow& r : res.rows)
        std::printf("%s,%.3f,%.4f,%zu,%.1f\n", r.config.c_str(), r.psnr_db, r.stats.avg_samples_per_ray,
                    r.stats.batch_count, r.stats.wall_millis);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive multi-MLP radiance fields on KD-trees"};
    app.require_subcommand(1);
    CommonArgs common;
    app.add_option("--seed", common.seed, "Override every seed in the scene config");
    app.add_option("--workers", common.workers, "Worker threads")->check(CLI::PositiveNumber);

    std::string scene, out, tree_path, path_name = "batched";
    int grid = 0;
    int adaptive_depth = -1;
    std::size_t camera = 0;
    bool no_hcheck = false, psnr_ref = false;

    auto* build = app.add_subcommand("build", "Build and distill a tree, write it to a file");
    build->add_option("--scene", scene, "Scene config (JSON)")->required();
    build->add_option("--out", out, "Output tree file")->required();
    build->add_option("--grid", grid, "Build a regular r^3 grid instead (r a power of two)")->check(CLI::PositiveNumber);

    auto* render = app.add_subcommand("render", "Render a tree to a PPM image");
    render->add_option("--tree", tree_path, "Tree file")->required();
    render->add_option("--scene", scene, "Scene config (JSON)")->required();
    render->add_option("--out", out, "Output PPM")->required();
    render->add_option("--path", path_name, "Execution path")->check(CLI::IsMember({"naive", "batched"}));
    render->add_flag("--no-hcheck", no_hcheck, "Leaf-only traversal");
    render->add_flag("--psnr-ref", psnr_ref, "Report PSNR against a dense reference render");
    render->add_option("--camera", camera, "Camera index in the scene config");

    auto* ablate = app.add_subcommand("ablate", "Adaptive vs. regular, with and without hierarchical sampling");
    ablate->add_option("--scene", scene, "Scene config (JSON)")->required();
    ablate->add_option("--grid", grid, "Regular grid resolution r")->required()->check(CLI::PositiveNumber);
    ablate->add_option("--adaptive-depth", adaptive_depth, "Adaptive depth limit (default: match grid node count)");
    ablate->add_option("--camera", camera, "Camera index in the scene config");

    for (auto* sub : {build, render, ablate}) {
        sub->add_option("--seed", common.seed, "Override every seed in the scene config");
        sub->add_option("--workers", common.workers, "Worker threads")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*build) return cmd_build(scene, out, grid, common);
        if (*render) return cmd_render(tree_path, scene, out, path_name, no_hcheck, psnr_ref, camera, common);
        if (*ablate) return cmd_ablate(scene, grid, adaptive_depth, camera, common);
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const InvariantError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitUsage;
}
