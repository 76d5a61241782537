#include "splatfield/dualfield.hpp"
#include "splatfield/errors.hpp"
#include "splatfield/eval.hpp"
#include "splatfield/io.hpp"
#include "splatfield/loss.hpp"
#include "splatfield/raster.hpp"
#include "splatfield/sgm.hpp"
#include "splatfield/synth.hpp"
#include "splatfield/version.hpp"

#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace py = pybind11;
namespace sf = splatfield;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IdArray = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const sf::FeatureMap& map) {
    py::array_t<double> out({py::ssize_t(map.height), py::ssize_t(map.width), py::ssize_t(map.channels)});
    std::copy(map.data.begin(), map.data.end(), out.mutable_data());
    return out;
}

// Accepts (H, W) as a single-channel map or (H, W, C).
sf::FeatureMap from_numpy(const DoubleArray& a) {
    if (a.ndim() != 2 && a.ndim() != 3)
        throw sf::ValidationError("feature map must be a 2-D or 3-D array");
    const auto c = a.ndim() == 3 ? static_cast<std::uint32_t>(a.shape(2)) : 1u;
    sf::FeatureMap map(static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(1)), c);
    std::copy(a.data(), a.data() + a.size(), map.data.begin());
    return map;
}

py::array_t<std::uint16_t> ids_to_numpy(const sf::InstanceMaskSet& m) {
    py::array_t<std::uint16_t> out({py::ssize_t(m.height), py::ssize_t(m.width)});
    std::copy(m.ids.begin(), m.ids.end(), out.mutable_data());
    return out;
}

// `m` defaults to the largest id present.
sf::InstanceMaskSet masks_from_numpy(const IdArray& a, std::optional<std::uint32_t> m) {
    if (a.ndim() != 2)
        throw sf::ValidationError("mask array must be 2-D");
    sf::InstanceMaskSet out;
    out.height = static_cast<std::uint32_t>(a.shape(0));
    out.width = static_cast<std::uint32_t>(a.shape(1));
    out.ids.assign(a.data(), a.data() + a.size());
    out.m = m ? *m : (out.ids.empty() ? 0u : *std::max_element(out.ids.begin(), out.ids.end()));
    return out;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
    const std::string s = b;
    return {s.begin(), s.end()};
}

py::array_t<double> betas_of(const std::vector<sf::GaussianPrimitive>& field) {
    py::array_t<double> out(py::ssize_t(field.size()));
    auto* p = out.mutable_data();
    for (const auto& g : field)
        *p++ = g.beta;
    return out;
}

void set_betas(std::vector<sf::GaussianPrimitive>& field, const DoubleArray& a) {
    if (a.ndim() != 1 || static_cast<std::size_t>(a.shape(0)) != field.size())
        throw sf::ValidationError("beta array length does not match the field");
    for (std::size_t i = 0; i < field.size(); ++i)
        field[i].beta = a.data()[i];
}

sf::RenderOptions render_options(const std::string& gate, double tau, bool deterministic) {
    sf::RenderOptions o;
    if (gate == "identity")
        o.gate_mode = sf::GateMode::identity;
    else if (gate == "leaky")
        o.gate_mode = sf::GateMode::leaky;
    else
        throw sf::ValidationError("gate must be 'identity' or 'leaky'");
    o.gate.tau = tau;
    o.deterministic = deterministic;
    return o;
}

const char* kind_name(sf::FormatError::Kind k) {
    switch (k) {
    case sf::FormatError::Kind::bad_magic: return "bad_magic";
    case sf::FormatError::Kind::bad_version: return "bad_version";
    case sf::FormatError::Kind::truncated: return "truncated";
    case sf::FormatError::Kind::bad_counts: return "bad_counts";
    case sf::FormatError::Kind::invalid_content: return "invalid_content";
    }
    return "unknown";
}

py::dict prune_report(const sf::PruneReport& r) {
    py::dict d;
    d["fine_before"] = r.fine_before;
    d["fine_kept"] = r.fine_kept;
    d["fine_discarded"] = r.fine_discarded;
    d["coarse_before"] = r.coarse_before;
    d["coarse_kept"] = r.coarse_kept;
    d["kept_fine_indices"] = r.kept_fine_indices;
    if (r.confusion) {
        py::dict c;
        c["redundant_discarded"] = r.confusion->redundant_discarded;
        c["redundant_kept"] = r.confusion->redundant_kept;
        c["needed_discarded"] = r.confusion->needed_discarded;
        c["needed_kept"] = r.confusion->needed_kept;
        c["redundant_recall"] = r.confusion->redundant_recall();
        d["confusion"] = c;
    } else {
        d["confusion"] = py::none();
    }
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Importance-gated Gaussian splatting with a dual semantic field";
    m.attr("__version__") = sf::kVersion;
    m.def("version_banner", &sf::version_banner);

    // Exception hierarchy mirrors the C++ one; FormatError also carries kind and offset.
    static py::exception<sf::Error> error(m, "Error", PyExc_RuntimeError);
    static py::exception<sf::ValidationError> validation(m, "ValidationError", error.ptr());
    static py::exception<sf::IoError> io(m, "IoError", error.ptr());
    static py::exception<sf::FormatError> format(m, "FormatError", error.ptr());
    static py::exception<sf::NumericError> numeric(m, "NumericError", error.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p)
                std::rethrow_exception(p);
        } catch (const sf::FormatError& e) {
            py::object exc = py::reinterpret_borrow<py::object>(format.ptr())(e.what());
            exc.attr("kind") = kind_name(e.kind());
            exc.attr("offset") = e.offset();
            PyErr_SetObject(format.ptr(), exc.ptr());
        } catch (const sf::ValidationError& e) {
            py::set_error(validation, e.what());
        } catch (const sf::IoError& e) {
            py::set_error(io, e.what());
        } catch (const sf::NumericError& e) {
            py::set_error(numeric, e.what());
        } catch (const sf::Error& e) {
            py::set_error(error, e.what());
        }
    });

    py::class_<sf::SceneDims>(m, "SceneDims")
        .def(py::init<>())
        .def_readwrite("views", &sf::SceneDims::views)
        .def_readwrite("height", &sf::SceneDims::height)
        .def_readwrite("width", &sf::SceneDims::width)
        .def_readwrite("downsample", &sf::SceneDims::downsample)
        .def_readwrite("n_dim", &sf::SceneDims::n_dim)
        .def_readwrite("m_dim", &sf::SceneDims::m_dim)
        .def_readwrite("sh_degree", &sf::SceneDims::sh_degree)
        .def("pixelwise_fine_count", &sf::SceneDims::pixelwise_fine_count)
        .def("pixelwise_coarse_count", &sf::SceneDims::pixelwise_coarse_count)
        .def(py::self == py::self)
        .def("__repr__", [](const sf::SceneDims& d) {
            return "SceneDims(views=" + std::to_string(d.views) + ", height=" + std::to_string(d.height) +
                   ", width=" + std::to_string(d.width) + ", downsample=" + std::to_string(d.downsample) +
                   ", n_dim=" + std::to_string(d.n_dim) + ", m_dim=" + std::to_string(d.m_dim) +
                   ", sh_degree=" + std::to_string(d.sh_degree) + ")";
        });

    py::class_<sf::Camera>(m, "Camera")
        .def(py::init<>())
        .def_readwrite("fx", &sf::Camera::fx)
        .def_readwrite("fy", &sf::Camera::fy)
        .def_readwrite("cx", &sf::Camera::cx)
        .def_readwrite("cy", &sf::Camera::cy)
        .def_readwrite("R", &sf::Camera::R)
        .def_readwrite("t", &sf::Camera::t)
        .def_readwrite("width", &sf::Camera::width)
        .def_readwrite("height", &sf::Camera::height)
        .def("center", &sf::Camera::center)
        .def("to_json", [](const sf::Camera& c) { return sf::camera_to_json(c); })
        .def_static("from_json", [](const std::string& s) { return sf::camera_from_json(s); })
        .def(py::self == py::self);
    m.def("load_cameras", &sf::load_cameras, py::arg("path"));

    py::class_<sf::SceneBundle>(m, "Bundle")
        .def(py::init<>())
        .def_readwrite("dims", &sf::SceneBundle::dims)
        .def_readwrite("provenance", &sf::SceneBundle::provenance)
        .def_property_readonly("fine_count", [](const sf::SceneBundle& b) { return b.fine.size(); })
        .def_property_readonly("coarse_count", [](const sf::SceneBundle& b) { return b.coarse.size(); })
        .def_property(
            "fine_betas", [](const sf::SceneBundle& b) { return betas_of(b.fine); },
            [](sf::SceneBundle& b, const DoubleArray& a) { set_betas(b.fine, a); })
        .def_property(
            "coarse_betas", [](const sf::SceneBundle& b) { return betas_of(b.coarse); },
            [](sf::SceneBundle& b, const DoubleArray& a) { set_betas(b.coarse, a); })
        .def("fine_means",
             [](const sf::SceneBundle& b) {
                 py::array_t<double> out({py::ssize_t(b.fine.size()), py::ssize_t(3)});
                 auto* p = out.mutable_data();
                 for (const auto& g : b.fine)
                     p = std::copy(g.mu.begin(), g.mu.end(), p);
                 return out;
             })
        .def("validate",
             [](const sf::SceneBundle& b) {
                 std::vector<std::string> out;
                 for (const auto& v : sf::validate_bundle(b))
                     out.push_back(sf::describe(v));
                 return out;
             })
        .def("encode", [](const sf::SceneBundle& b) { return to_bytes(sf::encode_bundle(b)); })
        .def_static("decode", [](const py::bytes& data) { return sf::decode_bundle(from_bytes(data)); })
        .def("save", [](const sf::SceneBundle& b, const std::filesystem::path& p) { sf::save_bundle(b, p); })
        .def_static("load", [](const std::filesystem::path& p) { return sf::load_bundle(p); })
        .def("redundancy_labels",
             [](const sf::SceneBundle& b) -> std::optional<std::vector<std::uint8_t>> {
                 return sf::redundancy_labels(b);
             })
        .def(py::self == py::self);

    m.def(
        "synth",
        [](std::uint64_t seed, std::uint32_t size, std::uint32_t views, std::uint32_t objects, double overlap,
           double noise, std::uint32_t downsample, std::uint32_t n_dim, std::uint32_t m_dim, std::uint32_t sh_degree) {
            sf::SynthSpec s;
            s.seed = seed;
            s.height = s.width = size;
            s.views = views;
            s.objects = objects;
            s.overlap = overlap;
            s.noise = noise;
            s.downsample = downsample;
            s.n_dim = n_dim;
            s.m_dim = m_dim;
            s.sh_degree = sh_degree;
            const auto scene = sf::synth_scene(s);
            py::dict d;
            d["bundle"] = scene.bundle;
            d["cameras"] = scene.cameras;
            py::list rgb, sem, masks, classes;
            for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
                rgb.append(to_numpy(scene.rgb[v]));
                sem.append(to_numpy(scene.sem[v]));
                masks.append(ids_to_numpy(scene.masks[v]));
                classes.append(ids_to_numpy(scene.classes[v]));
            }
            d["rgb"] = rgb;
            d["sem"] = sem;
            d["masks"] = masks;
            d["classes"] = classes;
            d["heldout_camera"] = scene.heldout_camera;
            d["heldout_rgb"] = to_numpy(scene.heldout_rgb);
            d["heldout_classes"] = ids_to_numpy(scene.heldout_classes);
            d["redundant"] = py::array_t<std::uint8_t>(py::ssize_t(scene.redundant.size()), scene.redundant.data());
            d["fine_class"] =
                py::array_t<std::uint16_t>(py::ssize_t(scene.fine_class.size()), scene.fine_class.data());
            return d;
        },
        py::arg("seed") = 1, py::arg("size") = 32, py::arg("views") = 2, py::arg("objects") = 3,
        py::arg("overlap") = 0.5, py::arg("noise") = 0.0, py::arg("downsample") = 8, py::arg("n_dim") = 8,
        py::arg("m_dim") = 512, py::arg("sh_degree") = 0,
        "Synthetic multi-view scene; returns a dict of bundle, cameras and per-view targets.");

    m.def(
        "render",
        [](const sf::SceneBundle& b, const sf::Camera& cam, const std::string& gate, double tau, bool deterministic) {
            const auto r = sf::render(b, cam, render_options(gate, tau, deterministic));
            py::dict d;
            d["rgb"] = to_numpy(r.output.rgb);
            d["inst"] = to_numpy(r.output.inst);
            d["sem"] = to_numpy(r.output.sem);
            d["acc"] = to_numpy(r.output.acc);
            return d;
        },
        py::arg("bundle"), py::arg("camera"), py::arg("gate") = "identity", py::arg("tau") = 0.5,
        py::arg("deterministic") = true);

    m.def(
        "gate",
        [](double beta, double tau, double leak) {
            sf::GateConfig c{tau, leak};
            sf::check_gate_config(c);
            return sf::gate(beta, c);
        },
        py::arg("beta"), py::arg("tau") = 0.5, py::arg("leak") = 1e-3);

    m.def(
        "gate_loss",
        [](const DoubleArray& betas, double tau) {
            sf::GateConfig c;
            c.tau = tau;
            const auto g = sf::gate_loss(std::span<const double>(betas.data(), betas.size()), c);
            py::dict d;
            d["value"] = g.value;
            d["bce"] = g.bce;
            d["regularizer"] = g.regularizer;
            d["grad"] = py::array_t<double>(py::ssize_t(g.grad.size()), g.grad.data());
            return d;
        },
        py::arg("betas"), py::arg("tau") = 0.5);

    m.def(
        "prune",
        [](const sf::SceneBundle& b, double tau, bool prune_coarse) {
            sf::GateConfig c;
            c.tau = tau;
            c.prune_coarse = prune_coarse;
            const auto labels = sf::redundancy_labels(b);
            std::optional<std::span<const std::uint8_t>> red;
            if (labels)
                red = std::span<const std::uint8_t>(*labels);
            auto r = sf::prune(b, c, red);
            return py::make_tuple(std::move(r.bundle), prune_report(r.report));
        },
        py::arg("bundle"), py::arg("tau") = 0.5, py::arg("prune_coarse") = false,
        "Drops fine primitives with beta <= tau; returns (bundle, report).");

    m.def(
        "contrastive",
        [](const DoubleArray& inst, const IdArray& masks, const std::string& estimator, std::uint64_t seed,
           std::optional<std::uint32_t> m) {
            const auto f = from_numpy(inst);
            const auto mk = masks_from_numpy(masks, m);
            sf::ContrastiveResult r;
            if (estimator == "exact")
                r = sf::contrastive_exact(f, mk);
            else if (estimator == "linear")
                r = sf::contrastive_linear(f, mk, seed);
            else
                throw sf::ValidationError("estimator must be 'exact' or 'linear'");
            py::dict d;
            d["value"] = r.value;
            d["intra"] = r.intra;
            d["inter"] = r.inter;
            d["grad"] = to_numpy(r.grad);
            return d;
        },
        py::arg("inst"), py::arg("masks"), py::arg("estimator") = "exact", py::arg("seed") = 0,
        py::arg("m") = py::none());

    m.def(
        "combine",
        [](double photometric, double importance, double contrastive, double semantic, double lambda1,
           double lambda2, double lambda3) {
            sf::LossWeights w;
            w.lambda1 = lambda1;
            w.lambda2 = lambda2;
            w.lambda3 = lambda3;
            return sf::combine({photometric, importance, contrastive, semantic}, w);
        },
        py::arg("photometric"), py::arg("importance"), py::arg("contrastive"), py::arg("semantic"),
        py::arg("lambda1") = 0.01, py::arg("lambda2") = 0.2, py::arg("lambda3") = 1.0);

    m.def(
        "query",
        [](const sf::SceneBundle& b, const DoubleArray& queries, const sf::Camera& cam, double sim_threshold) {
            if (queries.ndim() != 2)
                throw sf::ValidationError("queries must be a (Q, M) array");
            std::vector<std::vector<double>> q(queries.shape(0));
            for (std::size_t i = 0; i < q.size(); ++i)
                q[i].assign(queries.data(i, 0), queries.data(i, 0) + queries.shape(1));
            const auto cl = sf::attach_semantics(sf::cluster_instances(b.fine, sim_threshold), b.coarse);
            const auto r = sf::query(cl, q, b, cam);
            py::dict d;
            d["labels"] = ids_to_numpy(r.labels);
            d["acc"] = to_numpy(r.acc);
            d["cluster_labels"] = r.cluster_labels;
            d["clusters"] = cl.size();
            return d;
        },
        py::arg("bundle"), py::arg("queries"), py::arg("camera"), py::arg("sim_threshold") = 0.9);

    m.def(
        "psnr", [](const DoubleArray& a, const DoubleArray& b) { return sf::psnr(from_numpy(a), from_numpy(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "ssim", [](const DoubleArray& a, const DoubleArray& b) { return sf::ssim(from_numpy(a), from_numpy(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "seg_metrics",
        [](const IdArray& pred, const IdArray& gt, std::uint32_t class_count,
           std::optional<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>> valid) {
            std::vector<std::uint8_t> v;
            if (valid)
                v.assign(valid->data(), valid->data() + valid->size());
            const auto r = sf::seg_metrics(masks_from_numpy(pred, class_count - 1),
                                           masks_from_numpy(gt, class_count - 1), class_count, v);
            py::dict d;
            d["miou"] = r.miou;
            d["accuracy"] = r.accuracy;
            d["iou"] = r.iou;
            d["classes_present"] = r.classes_present;
            d["pixels"] = r.pixels;
            return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("class_count"), py::arg("valid") = py::none());
    m.def(
        "adjusted_rand_index",
        [](const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
            return sf::adjusted_rand_index(a, b);
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "account_counts",
        [](std::size_t fine, std::size_t coarse, const sf::SceneDims& dims, bool include_beta) {
            sf::StorageLayout layout;
            layout.sh_degree = dims.sh_degree;
            layout.include_beta = include_beta;
            const auto r = sf::account_counts(fine, coarse, dims, layout);
            py::dict d;
            d["scalars_geometry"] = r.scalars_geometry;
            d["scalars_per_fine"] = r.scalars_per_fine;
            d["scalars_per_coarse"] = r.scalars_per_coarse;
            d["bytes_fine"] = r.bytes_fine;
            d["bytes_coarse"] = r.bytes_coarse;
            d["bytes_total"] = r.bytes_total;
            d["pixelwise_count"] = r.pixelwise_count;
            d["baseline_plain_bytes"] = r.baseline_plain_bytes;
            d["single_field_bytes"] = r.single_field_bytes;
            d["mb_total"] = static_cast<double>(r.bytes_total) / sf::kBytesPerMB;
            return d;
        },
        py::arg("fine_count"), py::arg("coarse_count"), py::arg("dims"), py::arg("include_beta") = false);
}
