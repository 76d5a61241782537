#include "manifest.hpp"

#include "splatfield/bench.hpp"
#include "splatfield/dualfield.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/eval.hpp"
#include "splatfield/gradsuite.hpp"
#include "splatfield/io.hpp"
#include "splatfield/loss.hpp"
#include "splatfield/optim.hpp"
#include "splatfield/raster.hpp"
#include "splatfield/sgm.hpp"
#include "splatfield/synth.hpp"
#include "splatfield/version.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace splatfield::cli {
namespace {

    constexpr int kExitOk = 0;
    constexpr int kExitValidation = 1;
    constexpr int kExitIo = 2;

    struct Globals {
        bool json = false;
        unsigned threads = 0;
        bool deterministic = false;
        std::string manifest;
    };

    RenderOptions base_render(const Globals& g) {
        RenderOptions o;
        o.threads = g.threads;
        o.deterministic = g.deterministic;
        return o;
    }

    bool has_ext(const fs::path& p, const char* ext) { return p.extension() == ext; }

    /// PPM by extension, SPFM otherwise.
    FeatureMap load_image(const fs::path& p) { return has_ext(p, ".ppm") ? load_ppm(p) : load_feature_map(p); }

    void save_image(const FeatureMap& m, const fs::path& p) {
        if (has_ext(p, ".ppm"))
            save_ppm(m, p);
        else
            save_feature_map(m, p);
    }

    GateMode parse_gate(const std::string& s) {
        if (s == "identity")
            return GateMode::identity;
        if (s == "leaky")
            return GateMode::leaky;
        throw ValidationError(fmt::format("unknown gate mode '{}' (expected identity or leaky)", s));
    }

    ContrastiveEstimator parse_estimator(const std::string& s) {
        if (s == "exact")
            return ContrastiveEstimator::exact;
        if (s == "linear")
            return ContrastiveEstimator::linear;
        throw ValidationError(fmt::format("unknown estimator '{}' (expected exact or linear)", s));
    }

    InterNormalization parse_inter(const std::string& s) {
        if (s == "mean")
            return InterNormalization::mean;
        if (s == "raw_sum")
            return InterNormalization::raw_sum;
        throw ValidationError(fmt::format("unknown inter normalization '{}' (expected mean or raw_sum)", s));
    }

    json parts_json(const LossBreakdown& p) {
        return {{"photometric", p.photometric},
                {"importance", p.importance},
                {"contrastive", p.contrastive},
                {"semantic", p.semantic}};
    }

    json weights_json(const LossWeights& w) {
        return {{"lambda_lpips", w.lambda_lpips}, {"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"lambda3", w.lambda3}};
    }

    void add_weight_flags(CLI::App* sub, LossWeights& w) {
        sub->add_option("--lambda-lpips", w.lambda_lpips, "Perceptual weight inside the photometric term");
        sub->add_option("--lambda1", w.lambda1, "Importance gate loss weight");
        sub->add_option("--lambda2", w.lambda2, "Contrastive loss weight");
        sub->add_option("--lambda3", w.lambda3, "Semantic loss weight");
    }

    /// One subcommand: its CLI11 node, the flags it records and its body.
    struct Command {
        CLI::App* app = nullptr;
        std::function<json(RunManifest&)> run;
        std::function<std::string(const json&)> summary;
    };

    json flags_of(const CLI::App* sub) {
        json flags = json::object();
        for (const CLI::Option* opt : sub->get_options()) {
            if (opt->get_name() == "--help" || opt->count() == 0)
                continue;
            const auto res = opt->results();
            std::string key = opt->get_name();
            if (opt->get_type_size() == 0)
                flags[key] = true;
            else if (res.size() == 1)
                flags[key] = res.front();
            else
                flags[key] = res;
        }
        return flags;
    }

    // ------------------------------------------------------------------ synth

    struct SynthArgs {
        SynthSpec spec;
        std::uint32_t size = 32;
        std::string out;
        std::string assets;
    };

    Command make_synth(CLI::App& app, const Globals&, SynthArgs& a) {
        auto* sub = app.add_subcommand("synth", "Generate a synthetic multi-view scene");
        sub->add_option("--seed", a.spec.seed, "Generator seed");
        sub->add_option("--views", a.spec.views, "Number of training views");
        sub->add_option("--size", a.size, "Image side in pixels (H = W)");
        sub->add_option("--objects", a.spec.objects, "Number of rectangular objects");
        sub->add_option("--overlap", a.spec.overlap, "Overlap ratio rho between consecutive views");
        sub->add_option("--noise", a.spec.noise, "Instance-feature noise sigma");
        sub->add_option("--downsample", a.spec.downsample, "Coarse-field downsampling ratio S");
        sub->add_option("--n-dim", a.spec.n_dim, "Instance feature dimension N");
        sub->add_option("--m-dim", a.spec.m_dim, "Semantic feature dimension M");
        sub->add_option("--sh-degree", a.spec.sh_degree, "Spherical-harmonics degree");
        sub->add_option("--out", a.out, "Output SPSC bundle")->required();
        sub->add_option("--assets", a.assets, "Directory for cameras, targets, masks and queries");
        Command c;
        c.app = sub;
        c.run = [&a](RunManifest& m) {
            a.spec.height = a.spec.width = a.size;
            const SynthScene sc = synth_scene(a.spec);
            save_bundle(sc.bundle, a.out);
            m.add_output(a.out);
            json assets = json::object();
            if (!a.assets.empty()) {
                const fs::path dir(a.assets);
                std::error_code ec;
                fs::create_directories(dir, ec);
                if (ec)
                    throw IoError(fmt::format("cannot create asset directory '{}': {}", dir.string(), ec.message()));
                auto put = [&](const std::string& key, const fs::path& p) {
                    m.add_output(p);
                    assets[key].push_back(p.string());
                };
                save_cameras(sc.cameras, dir / "cameras.json");
                put("cameras", dir / "cameras.json");
                save_cameras(std::span(&sc.heldout_camera, 1), dir / "heldout_camera.json");
                put("heldout_camera", dir / "heldout_camera.json");
                for (std::size_t v = 0; v < sc.cameras.size(); ++v) {
                    const auto stem = fmt::format("view{}", v);
                    save_feature_map(sc.rgb[v], dir / (stem + "_rgb.spfm"));
                    put("rgb", dir / (stem + "_rgb.spfm"));
                    save_ppm(sc.rgb[v], dir / (stem + "_rgb.ppm"));
                    put("rgb_preview", dir / (stem + "_rgb.ppm"));
                    save_masks(sc.masks[v], dir / (stem + "_masks.spmk"));
                    put("masks", dir / (stem + "_masks.spmk"));
                    save_masks(sc.classes[v], dir / (stem + "_classes.spmk"));
                    put("classes", dir / (stem + "_classes.spmk"));
                    save_feature_map(sc.sem[v], dir / (stem + "_sem.spfm"));
                    put("sem", dir / (stem + "_sem.spfm"));
                }
                save_feature_map(sc.heldout_rgb, dir / "heldout_rgb.spfm");
                put("heldout_rgb", dir / "heldout_rgb.spfm");
                save_masks(sc.heldout_classes, dir / "heldout_classes.spmk");
                put("heldout_classes", dir / "heldout_classes.spmk");
                // One-hot query per class id, background included.
                FeatureMap q(1, a.spec.objects + 1, a.spec.m_dim);
                for (std::uint32_t k = 0; k <= a.spec.objects; ++k)
                    q.at(0, k, k) = 1.0;
                save_feature_map(q, dir / "queries.spfm");
                put("queries", dir / "queries.spfm");
            }
            const auto redundant = static_cast<std::size_t>(std::count(sc.redundant.begin(), sc.redundant.end(), 1));
            return json{{"out", a.out},
                        {"fine", sc.bundle.fine.size()},
                        {"coarse", sc.bundle.coarse.size()},
                        {"redundant", redundant},
                        {"views", sc.cameras.size()},
                        {"assets", assets}};
        };
        c.summary = [](const json& r) {
            return fmt::format("wrote {} ({} fine, {} coarse, {} redundant)", r["out"].get<std::string>(),
                               r["fine"].get<std::size_t>(), r["coarse"].get<std::size_t>(),
                               r["redundant"].get<std::size_t>());
        };
        return c;
    }

    // ----------------------------------------------------------------- render

    struct RenderArgs {
        std::string scene, camera, out_rgb, out_inst, out_sem, out_acc;
        std::string gate = "identity";
        double tau = 0.5;
        double leak = 1e-3;
        std::size_t view = 0;
    };

    Command make_render(CLI::App& app, const Globals& g, RenderArgs& a) {
        auto* sub = app.add_subcommand("render", "Render a bundle from a camera");
        sub->add_option("--scene", a.scene, "Input SPSC bundle")->required();
        sub->add_option("--camera", a.camera, "Camera JSON (object or array)")->required();
        sub->add_option("--view", a.view, "Index into a camera array");
        sub->add_option("--out-rgb", a.out_rgb, "RGB output (.ppm, or .spfm for float data)");
        sub->add_option("--out-inst", a.out_inst, "Instance feature map output (SPFM)");
        sub->add_option("--out-sem", a.out_sem, "Semantic feature map output (SPFM)");
        sub->add_option("--out-acc", a.out_acc, "Accumulated opacity output (SPFM)");
        sub->add_option("--gate", a.gate, "Importance gate: identity or leaky");
        sub->add_option("--tau", a.tau, "Gate threshold");
        sub->add_option("--leak", a.leak, "Gate leak factor");
        Command c;
        c.app = sub;
        c.run = [&a, &g](RunManifest& m) {
            if (a.out_rgb.empty() && a.out_inst.empty() && a.out_sem.empty() && a.out_acc.empty())
                throw ValidationError("render needs at least one of --out-rgb, --out-inst, --out-sem, --out-acc");
            RenderOptions ro = base_render(g);
            ro.gate_mode = parse_gate(a.gate);
            ro.gate.tau = a.tau;
            ro.gate.leak = a.leak;
            check_gate_config(ro.gate);
            const SceneBundle b = load_bundle(a.scene);
            m.add_input(a.scene);
            const auto cams = load_cameras(a.camera);
            m.add_input(a.camera);
            if (a.view >= cams.size())
                throw ValidationError(fmt::format("--view {} out of range ({} cameras)", a.view, cams.size()));
            RenderRequest req;
            req.sem = !a.out_sem.empty();
            const auto out = render(b, cams[a.view], ro, req).output;
            json outputs = json::object();
            auto emit = [&](const std::string& path, const FeatureMap& map, const char* key, bool image) {
                if (path.empty())
                    return;
                if (image)
                    save_image(map, path);
                else
                    save_feature_map(map, path);
                m.add_output(path);
                outputs[key] = path;
            };
            emit(a.out_rgb, out.rgb, "rgb", true);
            emit(a.out_inst, out.inst, "inst", false);
            emit(a.out_sem, out.sem, "sem", false);
            emit(a.out_acc, out.acc, "acc", false);
            double acc_sum = 0.0;
            for (double v : out.acc.data)
                acc_sum += v;
            return json{{"width", cams[a.view].width},
                        {"height", cams[a.view].height},
                        {"fine_projected", out.fine_stats.input - out.fine_stats.culled_near -
                                               out.fine_stats.culled_degenerate},
                        {"fine_culled", out.fine_stats.culled_near + out.fine_stats.culled_degenerate},
                        {"mean_acc", out.acc.data.empty() ? 0.0 : acc_sum / static_cast<double>(out.acc.data.size())},
                        {"outputs", outputs}};
        };
        c.summary = [](const json& r) {
            return fmt::format("rendered {}x{} (mean acc {:.4f})", r["width"].get<unsigned>(),
                               r["height"].get<unsigned>(), r["mean_acc"].get<double>());
        };
        return c;
    }

    // --------------------------------------------------------------- optimize

    struct OptimizeArgs {
        std::string scene, cameras, out, trace;
        std::vector<std::string> targets, masks, sem_targets;
        std::string params = "beta";
        std::string estimator = "linear";
        std::string optimizer = "gd";
        std::string inter = "mean";
        bool no_inter = false;
        OptimConfig cfg;
    };

    Command make_optimize(CLI::App& app, const Globals& g, OptimizeArgs& a) {
        auto* sub = app.add_subcommand("optimize", "Fit bundle parameters to multi-view supervision");
        sub->add_option("--scene", a.scene, "Input SPSC bundle")->required();
        sub->add_option("--cameras", a.cameras, "Camera JSON array, one per view")->required();
        sub->add_option("--targets", a.targets, "Per-view RGB targets (.ppm or .spfm), comma separated")
            ->delimiter(',')
            ->required();
        sub->add_option("--masks", a.masks, "Per-view instance masks (SPMK), comma separated")->delimiter(',');
        sub->add_option("--sem-targets", a.sem_targets, "Per-view semantic targets (SPFM), comma separated")
            ->delimiter(',');
        sub->add_option("--steps", a.cfg.steps, "Optimization steps");
        sub->add_option("--lr", a.cfg.lr, "Learning rate");
        sub->add_option("--params", a.params, "Comma list of beta, alpha, sh, f_inst, f_sem");
        sub->add_option("--estimator", a.estimator, "Contrastive estimator: exact or linear");
        sub->add_option("--seed", a.cfg.seed, "Shuffle seed of the linear estimator");
        sub->add_option("--optimizer", a.optimizer, "gd or adam");
        sub->add_option("--inter-norm", a.inter, "Cross-instance normalization: mean or raw_sum");
        sub->add_flag("--no-inter", a.no_inter, "Drop the cross-instance contrastive term");
        sub->add_option("--tau", a.cfg.gate.tau, "Gate threshold");
        sub->add_option("--leak", a.cfg.gate.leak, "Gate leak factor");
        add_weight_flags(sub, a.cfg.weights);
        sub->add_option("--out", a.out, "Output SPSC bundle")->required();
        sub->add_option("--trace", a.trace, "Per-step loss trace (CSV)");
        Command c;
        c.app = sub;
        c.run = [&a, &g](RunManifest& m) {
            OptimConfig cfg = a.cfg;
            cfg.params = parse_params(a.params);
            cfg.estimator = parse_estimator(a.estimator);
            if (a.optimizer == "gd")
                cfg.optimizer = Optimizer::gd;
            else if (a.optimizer == "adam")
                cfg.optimizer = Optimizer::adam;
            else
                throw ValidationError(fmt::format("unknown optimizer '{}' (expected gd or adam)", a.optimizer));
            cfg.contrastive.inter_norm = parse_inter(a.inter);
            cfg.contrastive.include_inter = !a.no_inter;
            cfg.render = base_render(g);
            check_optim_config(cfg);
            check_weights(cfg.weights);

            const SceneBundle b = load_bundle(a.scene);
            m.add_input(a.scene);
            const auto cams = load_cameras(a.cameras);
            m.add_input(a.cameras);
            const std::size_t V = cams.size();
            auto need = [V](const std::vector<std::string>& list, const char* flag) {
                if (!list.empty() && list.size() != V)
                    throw ValidationError(fmt::format("{} lists {} files for {} cameras", flag, list.size(), V));
            };
            need(a.targets, "--targets");
            need(a.masks, "--masks");
            need(a.sem_targets, "--sem-targets");
            std::vector<FeatureMap> rgb, sem;
            std::vector<InstanceMaskSet> masks;
            rgb.reserve(V);
            sem.reserve(V);
            masks.reserve(V);
            for (const auto& p : a.targets) {
                rgb.push_back(load_image(p));
                m.add_input(p);
            }
            for (const auto& p : a.masks) {
                masks.push_back(load_masks(p));
                m.add_input(p);
            }
            for (const auto& p : a.sem_targets) {
                sem.push_back(load_feature_map(p));
                m.add_input(p);
            }
            std::vector<ViewTargets> targets(V);
            for (std::size_t v = 0; v < V; ++v) {
                targets[v].rgb = &rgb[v];
                targets[v].masks = masks.empty() ? nullptr : &masks[v];
                targets[v].sem = sem.empty() ? nullptr : &sem[v];
            }
            const FitResult fr = fit(b, cams, targets, cfg);
            save_bundle(fr.bundle, a.out);
            m.add_output(a.out);
            if (!a.trace.empty()) {
                const std::string csv = fr.trace.to_csv();
                write_file(a.trace, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
                m.add_output(a.trace);
            }
            const TraceRow& first = fr.trace.rows.front();
            const TraceRow& last = fr.trace.rows.back();
            return json{{"out", a.out},
                        {"steps", cfg.steps},
                        {"params", format_params(cfg.params)},
                        {"initial_loss", first.total},
                        {"final_loss", last.total},
                        {"final_parts", parts_json(last.parts)},
                        {"below_tau", last.below_tau},
                        {"fine", fr.bundle.fine.size()}};
        };
        c.summary = [](const json& r) {
            return fmt::format("loss {:.6g} -> {:.6g}; {} of {} fine primitives at or below tau",
                               r["initial_loss"].get<double>(), r["final_loss"].get<double>(),
                               r["below_tau"].get<std::size_t>(), r["fine"].get<std::size_t>());
        };
        return c;
    }

    // ------------------------------------------------------------------ prune

    struct PruneArgs {
        std::string scene, out, report;
        GateConfig gate;
    };

    Command make_prune(CLI::App& app, const Globals&, PruneArgs& a) {
        auto* sub = app.add_subcommand("prune", "Drop fine primitives with beta <= tau");
        sub->add_option("--scene", a.scene, "Input SPSC bundle")->required();
        sub->add_option("--tau", a.gate.tau, "Gate threshold");
        sub->add_flag("--prune-coarse", a.gate.prune_coarse, "Filter the coarse field as well");
        sub->add_option("--out", a.out, "Output SPSC bundle")->required();
        sub->add_option("--report", a.report, "Prune report (JSON)");
        Command c;
        c.app = sub;
        c.run = [&a](RunManifest& m) {
            check_gate_config(a.gate);
            const SceneBundle b = load_bundle(a.scene);
            m.add_input(a.scene);
            const auto labels = redundancy_labels(b);
            std::optional<std::span<const std::uint8_t>> lab;
            if (labels)
                lab = std::span<const std::uint8_t>(*labels);
            PruneResult pr = prune(b, a.gate, lab);
            if (labels) {
                // Carry the ground-truth labels of the survivors forward.
                std::vector<std::uint8_t> kept;
                kept.reserve(pr.report.kept_fine_indices.size());
                for (std::size_t i : pr.report.kept_fine_indices)
                    kept.push_back((*labels)[i]);
                set_redundancy_labels(pr.bundle, kept);
            }
            save_bundle(pr.bundle, a.out);
            m.add_output(a.out);
            const auto& r = pr.report;
            json rep{{"out", a.out},
                     {"tau", a.gate.tau},
                     {"fine_before", r.fine_before},
                     {"fine_kept", r.fine_kept},
                     {"fine_discarded", r.fine_discarded},
                     {"removed_fraction",
                      r.fine_before ? static_cast<double>(r.fine_discarded) / static_cast<double>(r.fine_before) : 0.0},
                     {"coarse_before", r.coarse_before},
                     {"coarse_kept", r.coarse_kept},
                     {"confusion", nullptr}};
            if (r.confusion)
                rep["confusion"] = {{"redundant_discarded", r.confusion->redundant_discarded},
                                    {"redundant_kept", r.confusion->redundant_kept},
                                    {"needed_discarded", r.confusion->needed_discarded},
                                    {"needed_kept", r.confusion->needed_kept},
                                    {"redundant_recall", r.confusion->redundant_recall()}};
            if (!a.report.empty()) {
                const std::string text = rep.dump(2) + "\n";
                write_file(a.report, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
                m.add_output(a.report);
            }
            return rep;
        };
        c.summary = [](const json& r) {
            std::string s = fmt::format("kept {} of {} fine primitives ({:.1f}% removed)",
                                        r["fine_kept"].get<std::size_t>(), r["fine_before"].get<std::size_t>(),
                                        100.0 * r["removed_fraction"].get<double>());
            if (!r["confusion"].is_null())
                s += fmt::format("; redundant recall {:.3f}", r["confusion"]["redundant_recall"].get<double>());
            return s;
        };
        return c;
    }

    // ------------------------------------------------------------------ query

    struct QueryArgs {
        std::string scene, queries, camera, out_labels, out_acc, mode = "greedy";
        double threshold = 0.9;
        std::size_t view = 0;
    };

    Command make_query(CLI::App& app, const Globals& g, QueryArgs& a) {
        auto* sub = app.add_subcommand("query", "Open-vocabulary query through the dual field");
        sub->add_option("--scene", a.scene, "Input SPSC bundle")->required();
        sub->add_option("--queries", a.queries, "Query vectors (SPFM, H=1, W=Q, C=M)")->required();
        sub->add_option("--camera", a.camera, "Camera JSON (object or array)")->required();
        sub->add_option("--view", a.view, "Index into a camera array");
        sub->add_option("--out-labels", a.out_labels, "Per-pixel query index (SPMK; Q means other)")->required();
        sub->add_option("--out-acc", a.out_acc, "Accumulated opacity of the fine field (SPFM)");
        sub->add_option("--sim-threshold", a.threshold, "Instance clustering cosine threshold");
        sub->add_option("--cluster-mode", a.mode, "greedy or components");
        Command c;
        c.app = sub;
        c.run = [&a, &g](RunManifest& m) {
            ClusterMode mode;
            if (a.mode == "greedy")
                mode = ClusterMode::greedy;
            else if (a.mode == "components")
                mode = ClusterMode::connected_components;
            else
                throw ValidationError(fmt::format("unknown cluster mode '{}' (expected greedy or components)", a.mode));
            const SceneBundle b = load_bundle(a.scene);
            m.add_input(a.scene);
            const FeatureMap qmap = load_feature_map(a.queries);
            m.add_input(a.queries);
            const auto cams = load_cameras(a.camera);
            m.add_input(a.camera);
            if (a.view >= cams.size())
                throw ValidationError(fmt::format("--view {} out of range ({} cameras)", a.view, cams.size()));
            const auto queries = queries_from_map(qmap);
            const auto clustering = attach_semantics(cluster_instances(b.fine, a.threshold, mode), b.coarse);
            const QueryResult res = query(clustering, queries, b, cams[a.view], base_render(g));
            save_masks(res.labels, a.out_labels);
            m.add_output(a.out_labels);
            if (!a.out_acc.empty()) {
                save_feature_map(res.acc, a.out_acc);
                m.add_output(a.out_acc);
            }
            std::vector<std::size_t> hist(queries.size() + 1, 0);
            for (auto id : res.labels.ids)
                ++hist[id];
            std::size_t labelled = 0;
            for (const auto& s : clustering.sem_labels)
                labelled += s.has_value();
            return json{{"out_labels", a.out_labels},
                        {"clusters", clustering.size()},
                        {"labelled_clusters", labelled},
                        {"queries", queries.size()},
                        {"cluster_labels", res.cluster_labels},
                        {"pixel_histogram", hist}};
        };
        c.summary = [](const json& r) {
            return fmt::format("{} clusters ({} with semantics), {} queries", r["clusters"].get<std::size_t>(),
                               r["labelled_clusters"].get<std::size_t>(), r["queries"].get<std::size_t>());
        };
        return c;
    }

    // -------------------------------------------------------------- losscheck

    struct LossArgs {
        std::string rendered_rgb, target_rgb, rendered_inst, masks, rendered_sem, target_sem, scene;
        std::string estimator = "linear", inter = "mean";
        bool no_inter = false;
        std::uint64_t seed = 0;
        LossWeights weights;
        GateConfig gate;
    };

    Command make_losscheck(CLI::App& app, const Globals&, LossArgs& a) {
        auto* sub = app.add_subcommand("losscheck", "Evaluate the training objective on given maps");
        sub->add_option("--rendered-rgb", a.rendered_rgb, "Rendered RGB (.ppm or .spfm)");
        sub->add_option("--target-rgb", a.target_rgb, "Target RGB (.ppm or .spfm)");
        sub->add_option("--rendered-inst", a.rendered_inst, "Rendered instance features (SPFM)");
        sub->add_option("--masks", a.masks, "Instance masks (SPMK)");
        sub->add_option("--rendered-sem", a.rendered_sem, "Rendered semantic features (SPFM)");
        sub->add_option("--target-sem", a.target_sem, "Target semantic features (SPFM)");
        sub->add_option("--scene", a.scene, "Bundle whose fine betas feed the gate loss");
        sub->add_option("--estimator", a.estimator, "exact or linear");
        sub->add_option("--inter-norm", a.inter, "mean or raw_sum");
        sub->add_flag("--no-inter", a.no_inter, "Drop the cross-instance term");
        sub->add_option("--seed", a.seed, "Shuffle seed of the linear estimator");
        sub->add_option("--tau", a.gate.tau, "Gate threshold");
        add_weight_flags(sub, a.weights);
        Command c;
        c.app = sub;
        c.run = [&a](RunManifest& m) {
            auto pair = [](const std::string& x, const std::string& y, const char* what) {
                if (x.empty() != y.empty())
                    throw ValidationError(fmt::format("{} needs both the rendered and the target input", what));
                return !x.empty();
            };
            FeatureMap rr, tr, ri, rs, ts;
            InstanceMaskSet mk;
            ViewPrediction pred;
            ViewTargets tgt;
            if (pair(a.rendered_rgb, a.target_rgb, "photometric term")) {
                rr = load_image(a.rendered_rgb);
                tr = load_image(a.target_rgb);
                m.add_input(a.rendered_rgb);
                m.add_input(a.target_rgb);
                pred.rgb = &rr;
                tgt.rgb = &tr;
            }
            if (pair(a.rendered_inst, a.masks, "contrastive term")) {
                ri = load_feature_map(a.rendered_inst);
                mk = load_masks(a.masks);
                m.add_input(a.rendered_inst);
                m.add_input(a.masks);
                pred.inst = &ri;
                tgt.masks = &mk;
            }
            if (pair(a.rendered_sem, a.target_sem, "semantic term")) {
                rs = load_feature_map(a.rendered_sem);
                ts = load_feature_map(a.target_sem);
                m.add_input(a.rendered_sem);
                m.add_input(a.target_sem);
                pred.sem = &rs;
                tgt.sem = &ts;
            }
            std::vector<double> betas;
            if (!a.scene.empty()) {
                const SceneBundle b = load_bundle(a.scene);
                m.add_input(a.scene);
                for (const auto& p : b.fine)
                    betas.push_back(p.beta);
            }
            TotalOptions opts;
            opts.weights = a.weights;
            opts.gate = a.gate;
            opts.estimator = parse_estimator(a.estimator);
            opts.contrastive.inter_norm = parse_inter(a.inter);
            opts.contrastive.include_inter = !a.no_inter;
            opts.seed = a.seed;
            check_weights(opts.weights);
            check_gate_config(opts.gate);
            const TotalLoss t = total(std::span(&pred, 1), std::span(&tgt, 1), betas, opts);
            return json{{"total", t.value},
                        {"parts", parts_json(t.parts)},
                        {"weights", weights_json(opts.weights)},
                        {"estimator", a.estimator}};
        };
        c.summary = [](const json& r) {
            const auto& p = r["parts"];
            return fmt::format("total {:.9g} (photometric {:.6g}, importance {:.6g}, contrastive {:.6g}, semantic {:.6g})",
                               r["total"].get<double>(), p["photometric"].get<double>(),
                               p["importance"].get<double>(), p["contrastive"].get<double>(),
                               p["semantic"].get<double>());
        };
        return c;
    }

    // -------------------------------------------------------------- gradcheck

    struct GradArgs {
        GradSuiteOptions opts;
        std::string only;
    };

    Command make_gradcheck(CLI::App& app, const Globals&, GradArgs& a) {
        auto* sub = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
        sub->add_option("--seed", a.opts.seed, "Scene seed");
        sub->add_option("--step", a.opts.h, "Finite-difference step h");
        sub->add_option("--primitives", a.opts.primitives, "Fine primitives in the random scene");
        sub->add_option("--size", a.opts.size, "Image side of the random scene");
        sub->add_option("--tolerance", a.opts.tolerance, "Maximum relative error");
        sub->add_option("--case", a.only, "Run one case (blend, photometric, semantic, contrastive_exact, "
                                          "contrastive_linear, gate_loss, total)");
        Command c;
        c.app = sub;
        c.run = [&a](RunManifest&) {
            std::vector<GradCase> cases;
            if (a.only.empty())
                cases = run_grad_suite(a.opts);
            else {
                static const std::vector<std::pair<std::string, std::function<GradCase(const GradSuiteOptions&)>>>
                    table{{"blend", check_blend},
                          {"photometric", check_photometric},
                          {"semantic", check_semantic},
                          {"contrastive_exact",
                           [](const GradSuiteOptions& o) { return check_contrastive(o, ContrastiveEstimator::exact); }},
                          {"contrastive_linear",
                           [](const GradSuiteOptions& o) { return check_contrastive(o, ContrastiveEstimator::linear); }},
                          {"gate_loss", check_gate_loss},
                          {"total", check_total}};
                auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == a.only; });
                if (it == table.end())
                    throw ValidationError(fmt::format("unknown gradcheck case '{}'", a.only));
                cases.push_back(it->second(a.opts));
            }
            json arr = json::array();
            bool all = true;
            for (const auto& gc : cases) {
                all = all && gc.passed;
                arr.push_back({{"name", gc.name},
                               {"passed", gc.passed},
                               {"max_rel_error", gc.report.max_rel_error},
                               {"mean_rel_error", gc.report.mean_rel_error},
                               {"checked", gc.report.checked},
                               {"excluded", gc.report.excluded}});
            }
            return json{{"tolerance", a.opts.tolerance}, {"h", a.opts.h}, {"passed", all}, {"cases", arr}};
        };
        c.summary = [](const json& r) {
            std::string s;
            for (const auto& gc : r["cases"])
                s += fmt::format("{:<20} {} max rel err {:.3g}\n", gc["name"].get<std::string>(),
                                 gc["passed"].get<bool>() ? "PASS" : "FAIL", gc["max_rel_error"].get<double>());
            return s + (r["passed"].get<bool>() ? "all cases passed" : "some cases failed");
        };
        return c;
    }

    // ---------------------------------------------------------------- metrics

    struct MetricsArgs {
        std::string a, b, valid_acc;
        std::uint32_t classes = 0;
        double acc_threshold = 0.5;
    };

    Command make_metrics(CLI::App& app, const Globals&, MetricsArgs& a) {
        auto* sub = app.add_subcommand("metrics", "Compare two images (PSNR, SSIM) or two label maps (mIoU, accuracy)");
        sub->add_option("--a", a.a, "Prediction (.ppm, .spfm or .spmk)")->required();
        sub->add_option("--b", a.b, "Reference of the same kind")->required();
        sub->add_option("--classes", a.classes, "Label count for masks; 0 means max id + 1");
        sub->add_option("--valid-acc", a.valid_acc, "Restrict mask metrics to pixels whose acc (SPFM) exceeds the threshold");
        sub->add_option("--acc-threshold", a.acc_threshold, "Threshold for --valid-acc");
        Command c;
        c.app = sub;
        c.run = [&a](RunManifest& m) {
            m.add_input(a.a);
            m.add_input(a.b);
            const bool ma = has_ext(a.a, ".spmk"), mb = has_ext(a.b, ".spmk");
            if (ma != mb)
                throw ValidationError("metrics compares two images or two label maps, not one of each");
            if (!ma) {
                const FeatureMap x = load_image(a.a), y = load_image(a.b);
                if (!x.same_shape(y))
                    throw ValidationError("images differ in shape");
                return json{{"kind", "image"}, {"psnr", psnr(x, y)}, {"ssim", ssim(x, y)}};
            }
            const InstanceMaskSet x = load_masks(a.a, false), y = load_masks(a.b, false);
            std::uint32_t classes = a.classes;
            if (classes == 0) {
                for (auto id : x.ids)
                    classes = std::max<std::uint32_t>(classes, id + 1u);
                for (auto id : y.ids)
                    classes = std::max<std::uint32_t>(classes, id + 1u);
            }
            std::vector<std::uint8_t> valid;
            if (!a.valid_acc.empty()) {
                const FeatureMap acc = load_feature_map(a.valid_acc);
                m.add_input(a.valid_acc);
                if (acc.pixels() != y.ids.size() || acc.channels != 1)
                    throw ValidationError("--valid-acc must be a single-channel map of the label size");
                valid.resize(acc.pixels());
                for (std::size_t p = 0; p < valid.size(); ++p)
                    valid[p] = acc.data[p] > a.acc_threshold;
            }
            const SegMetrics s = seg_metrics(x, y, classes, valid);
            return json{{"kind", "labels"},
                        {"miou", s.miou},
                        {"accuracy", s.accuracy},
                        {"iou", s.iou},
                        {"classes_present", s.classes_present},
                        {"pixels", s.pixels}};
        };
        c.summary = [](const json& r) {
            if (r["kind"] == "image")
                return fmt::format("PSNR {:.4f} dB, SSIM {:.4f}", r["psnr"].get<double>(), r["ssim"].get<double>());
            return fmt::format("mIoU {:.4f}, accuracy {:.4f} over {} pixels", r["miou"].get<double>(),
                               r["accuracy"].get<double>(), r["pixels"].get<std::size_t>());
        };
        return c;
    }

    // ---------------------------------------------------------------- account

    struct AccountArgs {
        std::string scene;
        StorageLayout layout;
        bool no_coarse_geometry = false;
        std::size_t fine_count = 0, coarse_count = 0;
        SceneDims dims;
        bool counts = false;
    };

    Command make_account(CLI::App& app, const Globals&, AccountArgs& a) {
        auto* sub = app.add_subcommand("account", "Storage accounting of a bundle or of primitive counts");
        sub->add_option("--scene", a.scene, "Input SPSC bundle");
        sub->add_option("--k", a.layout.sh_degree, "SH degree used for the per-primitive scalar count");
        sub->add_flag("--include-beta", a.layout.include_beta, "Count the importance score");
        sub->add_flag("--no-coarse-geometry", a.no_coarse_geometry, "Coarse primitives store semantics only");
        sub->add_option("--baseline-dim", a.layout.baseline_semantic_dim, "Semantic dimension of the pixel-wise baseline");
        sub->add_option("--fine-count", a.fine_count, "Account these counts instead of a scene");
        sub->add_option("--coarse-count", a.coarse_count, "Coarse count for --fine-count");
        sub->add_option("--views", a.dims.views, "Views for the pixel-wise baseline (counts mode)");
        sub->add_option("--height", a.dims.height, "Image height (counts mode)");
        sub->add_option("--width", a.dims.width, "Image width (counts mode)");
        sub->add_option("--n-dim", a.dims.n_dim, "Instance feature dimension (counts mode)");
        sub->add_option("--m-dim", a.dims.m_dim, "Semantic feature dimension (counts mode)");
        Command c;
        c.app = sub;
        c.run = [&a](RunManifest& m) {
            a.layout.coarse_geometry = !a.no_coarse_geometry;
            StorageReport r;
            if (!a.scene.empty()) {
                const SceneBundle b = load_bundle(a.scene);
                m.add_input(a.scene);
                r = account(b, a.layout);
            } else if (a.fine_count > 0) {
                r = account_counts(a.fine_count, a.coarse_count, a.dims, a.layout);
            } else {
                throw ValidationError("account needs --scene or --fine-count");
            }
            auto mb = [](std::size_t bytes) { return static_cast<double>(bytes) / kBytesPerMB; };
            return json{{"fine_count", r.fine_count},
                        {"coarse_count", r.coarse_count},
                        {"scalars_geometry", r.scalars_geometry},
                        {"scalars_per_fine", r.scalars_per_fine},
                        {"scalars_per_coarse", r.scalars_per_coarse},
                        {"bytes_fine", r.bytes_fine},
                        {"bytes_coarse", r.bytes_coarse},
                        {"bytes_total", r.bytes_total},
                        {"mb_total", mb(r.bytes_total)},
                        {"pixelwise_count", r.pixelwise_count},
                        {"baseline_plain_bytes", r.baseline_plain_bytes},
                        {"baseline_plain_mb", mb(r.baseline_plain_bytes)},
                        {"baseline_semantic_bytes", r.baseline_semantic_bytes},
                        {"single_field_bytes", r.single_field_bytes}};
        };
        c.summary = [](const json& r) {
            return fmt::format("{} fine + {} coarse: {:.2f} MB (pixel-wise baseline {} primitives, {:.2f} MB)",
                               r["fine_count"].get<std::size_t>(), r["coarse_count"].get<std::size_t>(),
                               r["mb_total"].get<double>(), r["pixelwise_count"].get<std::size_t>(),
                               r["baseline_plain_mb"].get<double>());
        };
        return c;
    }

    // ------------------------------------------------------------------ bench

    struct BenchArgs {
        BenchSpec spec;
    };

    Command make_bench(CLI::App& app, const Globals& g, BenchArgs& a) {
        auto* sub = app.add_subcommand("bench", "Time the rasterizer and compare contrastive estimator work");
        sub->add_option("--size", a.spec.size, "Image side");
        sub->add_option("--primitives", a.spec.primitives, "Primitives in the random scene");
        sub->add_option("--reps", a.spec.reps, "Repetitions of each raster stage");
        sub->add_option("--sizes", a.spec.contrastive_sizes, "Estimator pixel counts, comma separated")->delimiter(',');
        sub->add_option("--instances", a.spec.instances, "Instances in the estimator workload");
        sub->add_option("--contrastive-reps", a.spec.contrastive_reps, "Repetitions of each estimator stage");
        sub->add_option("--seed", a.spec.seed, "Workload seed");
        Command c;
        c.app = sub;
        c.run = [&a, &g](RunManifest&) {
            a.spec.render = base_render(g);
            const BenchReport r = bench(a.spec);
            json stages = json::array(), work = json::array();
            for (const auto& s : r.stages)
                stages.push_back({{"stage", s.stage}, {"reps", s.reps}, {"median_ms", s.median_ms}, {"mean_ms", s.mean_ms}});
            for (const auto& w : r.work)
                work.push_back({{"n", w.n},
                                {"instances", w.instances},
                                {"exact_intra", w.exact.intra_similarity},
                                {"exact_inter", w.exact.inter_similarity},
                                {"linear_intra", w.linear.intra_similarity},
                                {"linear_inter", w.linear.inter_similarity}});
            return json{{"stages", stages}, {"estimator_work", work}};
        };
        c.summary = [](const json& r) {
            std::string s;
            for (const auto& st : r["stages"])
                s += fmt::format("{:<28} median {:9.3f} ms  mean {:9.3f} ms  ({} reps)\n",
                                 st["stage"].get<std::string>(), st["median_ms"].get<double>(),
                                 st["mean_ms"].get<double>(), st["reps"].get<std::size_t>());
            for (const auto& w : r["estimator_work"])
                s += fmt::format("n = {:>6}: exact intra {:>12}  linear intra {:>8}\n", w["n"].get<std::size_t>(),
                                 w["exact_intra"].get<std::uint64_t>(), w["linear_intra"].get<std::uint64_t>());
            if (!s.empty())
                s.pop_back();
            return s;
        };
        return c;
    }

} // namespace

int run(int argc, char** argv) {
    CLI::App app{"Dual-field Gaussian splatting toolkit", "splatfield"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    Globals g;
    bool version = false;
    app.add_flag("--version", version, "Print version and file-format versions");
    app.add_flag("--json", g.json, "Machine-readable JSON on stdout");
    app.add_option("--threads", g.threads, "Cap on worker threads (fallback: SPLATFIELD_THREADS)");
    app.add_flag("--deterministic", g.deterministic, "Sequential rasterizer with a fixed evaluation order");
    app.add_option("--manifest", g.manifest, "Where to write the run manifest");

    SynthArgs synth;
    RenderArgs render_args;
    OptimizeArgs optimize;
    PruneArgs prune_args;
    QueryArgs query_args;
    LossArgs loss;
    GradArgs grad;
    MetricsArgs metrics;
    AccountArgs account_args;
    BenchArgs bench_args;
    std::vector<Command> commands{make_synth(app, g, synth),        make_render(app, g, render_args),
                                  make_optimize(app, g, optimize),  make_prune(app, g, prune_args),
                                  make_query(app, g, query_args),   make_losscheck(app, g, loss),
                                  make_gradcheck(app, g, grad),     make_metrics(app, g, metrics),
                                  make_account(app, g, account_args), make_bench(app, g, bench_args)};

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << " (see --help)\n";
        return kExitValidation;
    }
    if (version) {
        std::cout << version_banner() << "\n";
        return kExitOk;
    }
    const auto it = std::find_if(commands.begin(), commands.end(), [](const Command& c) { return c.app->parsed(); });
    if (it == commands.end()) {
        std::cerr << "error: a subcommand is required (see --help)\n";
        return kExitValidation;
    }

    const std::string name = it->app->get_name();
    RunManifest manifest(name);
    try {
        json flags = flags_of(&app);
        flags.update(flags_of(it->app));
        manifest.set_flags(flags);
        const json result = it->run(manifest);
        std::optional<fs::path> mpath;
        if (!g.manifest.empty())
            mpath = fs::path(g.manifest);
        const fs::path where = manifest.default_path(mpath);
        manifest.write(where);
        if (g.json)
            std::cout << json{{"subcommand", name}, {"version", kVersion}, {"manifest", where.string()}, {"result", result}}
                             .dump(2)
                      << "\n";
        else
            std::cout << it->summary(result) << "\n";
        if (name == "gradcheck" && !result["passed"].get<bool>())
            return kExitValidation;
        return kExitOk;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

} // namespace splatfield::cli

int main(int argc, char** argv) { return splatfield::cli::run(argc, argv); }
