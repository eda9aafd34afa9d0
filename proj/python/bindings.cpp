#include "dibrqa/dataset_io.hpp"
#include "dibrqa/error.hpp"
#include "dibrqa/eval.hpp"
#include "dibrqa/gan.hpp"
#include "dibrqa/maskgen.hpp"
#include "dibrqa/regressor.hpp"
#include "dibrqa/synthetic.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <memory>
#include <numeric>

namespace py = pybind11;
using namespace dibrqa;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

ImageRGB to_image(const FloatArray& a) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw Error(Errc::DimMismatch, "expected an H x W x 3 array");
    ImageRGB img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy_n(a.data(), img.size(), img.data().begin());
    return img;
}

FloatArray from_image(const ImageRGB& img) {
    FloatArray a({img.height(), img.width(), 3});
    std::copy(img.data().begin(), img.data().end(), a.mutable_data());
    return a;
}

BinaryMask to_mask(const ByteArray& a) {
    if (a.ndim() != 2)
        throw Error(Errc::DimMismatch, "expected an H x W mask");
    BinaryMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    for (std::size_t i = 0; i < m.data().size(); ++i)
        m.data()[i] = a.data()[i] != 0 ? 1 : 0;
    return m;
}

ByteArray from_mask(const BinaryMask& m) {
    ByteArray a({m.height(), m.width()});
    std::copy(m.data().begin(), m.data().end(), a.mutable_data());
    return a;
}

py::array_t<int> from_labels(const std::vector<int>& labels, int h, int w) {
    py::array_t<int> a({h, w});
    std::copy(labels.begin(), labels.end(), a.mutable_data());
    return a;
}

SuperpixelLabels to_superpixels(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2)
        throw Error(Errc::DimMismatch, "expected an H x W label array");
    SuperpixelLabels sp;
    sp.height = static_cast<int>(a.shape(0));
    sp.width = static_cast<int>(a.shape(1));
    sp.labels.assign(a.data(), a.data() + a.size());
    sp.n_segments = sp.labels.empty() ? 0 : *std::max_element(sp.labels.begin(), sp.labels.end()) + 1;
    return sp;
}

SegmentationMap to_segmentation(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2)
        throw Error(Errc::DimMismatch, "expected an H x W class array");
    return {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), std::vector<int>(a.data(), a.data() + a.size())};
}

// Owns the bundle and a scorer bound to it.
class PyMetric {
public:
    explicit PyMetric(const std::filesystem::path& path)
        : tm_(std::make_unique<TrainedMetric>(load_metric(path))), scorer_(std::make_unique<MetricScorer>(*tm_)) {}

    double score(const FloatArray& img) { return scorer_->score(to_image(img)); }
    std::vector<double> histogram(const FloatArray& img) { return scorer_->histogram(to_image(img)).mu; }
    int k() const { return tm_->codebook.k; }
    std::string arch() const { return tm_->arch.name; }
    std::string config() const { return tm_->config_json; }

private:
    std::unique_ptr<TrainedMetric> tm_;
    std::unique_ptr<MetricScorer> scorer_;
};

class PyCheckpoint {
public:
    explicit PyCheckpoint(const std::filesystem::path& path)
        : ckpt_(load_checkpoint(path)), inpainter_(std::make_unique<Inpainter>(ckpt_)) {}

    FloatArray inpaint(const FloatArray& img, const ByteArray& mask) {
        return from_image(inpainter_->inpaint(to_image(img), to_mask(mask)));
    }
    std::vector<py::dict> history() const {
        std::vector<py::dict> out;
        for (const auto& e : ckpt_.history)
            out.push_back(py::dict(py::arg("epoch") = e.epoch, py::arg("joint") = e.joint, py::arg("rec") = e.rec,
                                   py::arg("adv_g") = e.adv_g, py::arg("disc") = e.disc));
        return out;
    }
    std::string arch() const { return ckpt_.arch.name; }
    int epoch() const { return ckpt_.epoch; }

private:
    Checkpoint ckpt_;
    std::unique_ptr<Inpainter> inpainter_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bindings for the dibrqa core library";

    // leaked on purpose: the type must outlive any translator call at interpreter shutdown
    static py::handle error_type = py::exception<Error>(m, "DibrqaError", PyExc_RuntimeError).release();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p)
                std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = error_type(e.what());
            exc.attr("code") = std::string(to_string(e.code()));
            PyErr_SetObject(error_type.ptr(), exc.ptr());
        }
    });

    // images and masks
    m.def("load_image", [](const std::filesystem::path& p) { return from_image(load_image(p)); }, py::arg("path"),
          "Decode a PNG/BMP into an H x W x 3 float32 array in [0, 1].");
    m.def("save_image", [](const FloatArray& a, const std::filesystem::path& p) { save_image(to_image(a), p); },
          py::arg("image"), py::arg("path"));
    m.def("load_mask", [](const std::filesystem::path& p) { return from_mask(load_mask(p)); }, py::arg("path"));
    m.def("save_mask", [](const ByteArray& a, const std::filesystem::path& p) { save_mask(to_mask(a), p); },
          py::arg("mask"), py::arg("path"));
    m.def("rotate_ccw", [](const FloatArray& a, int q) { return from_image(rotate_ccw(to_image(a), q)); },
          py::arg("image"), py::arg("quarter_turns"));

    // masks
    m.def(
        "slic_segment",
        [](const FloatArray& a, int n, double compactness, int iters) {
            const auto sp = slic_segment(to_image(a), n, compactness, iters);
            return from_labels(sp.labels, sp.height, sp.width);
        },
        py::arg("image"), py::arg("n_segments") = 0, py::arg("compactness") = 10.0, py::arg("max_iters") = 10);
    m.def(
        "mask_type1", [](const py::array_t<int>& seg, int r) { return from_mask(mask_type1(to_segmentation(seg), r)); },
        py::arg("segmentation"), py::arg("dilation_radius") = 7);
    m.def(
        "mask_type2", [](const ByteArray& mask, int dx, int dy) { return from_mask(mask_type2(to_mask(mask), dx, dy)); },
        py::arg("mask"), py::arg("dx") = 10, py::arg("dy") = 0);
    m.def(
        "mask_type3",
        [](const py::array_t<int>& labels, const std::string& size, std::uint64_t seed, double fraction) {
            const SegmentSize cls = size == "small" ? SegmentSize::Small : SegmentSize::Medium;
            if (size != "small" && size != "medium")
                throw Error(Errc::InvalidParam, "size class must be small or medium");
            return from_mask(mask_type3(to_superpixels(labels), cls, seed, fraction));
        },
        py::arg("labels"), py::arg("size_class") = "medium", py::arg("seed") = 0, py::arg("fraction") = 0.25);
    m.def(
        "punch_holes",
        [](const FloatArray& a, const ByteArray& mask) { return from_image(punch_holes(to_image(a), to_mask(mask))); },
        py::arg("image"), py::arg("mask"));
    m.def(
        "synthetic_scene",
        [](int h, int w, std::uint64_t seed) {
            const auto s = synthetic_scene(h, w, seed);
            return py::make_tuple(from_image(s.image), from_labels(s.segmentation.classes, h, w));
        },
        py::arg("height"), py::arg("width"), py::arg("seed"));
    m.def(
        "synthetic_hole_mask",
        [](const py::array_t<int>& seg, double coverage, std::uint64_t seed) {
            return from_mask(synthetic_hole_mask(to_segmentation(seg), coverage, seed));
        },
        py::arg("segmentation"), py::arg("coverage"), py::arg("seed"));

    // models
    py::class_<PyCheckpoint>(m, "Checkpoint")
        .def(py::init<const std::filesystem::path&>(), py::arg("path"))
        .def("inpaint", &PyCheckpoint::inpaint, py::arg("image"), py::arg("mask"))
        .def_property_readonly("history", &PyCheckpoint::history)
        .def_property_readonly("arch", &PyCheckpoint::arch)
        .def_property_readonly("epoch", &PyCheckpoint::epoch);
    py::class_<PyMetric>(m, "Metric")
        .def(py::init<const std::filesystem::path&>(), py::arg("path"))
        .def("score", &PyMetric::score, py::arg("image"), "Predicted DMOS (higher means worse quality).")
        .def("histogram", &PyMetric::histogram, py::arg("image"))
        .def_property_readonly("k", &PyMetric::k)
        .def_property_readonly("arch", &PyMetric::arch)
        .def_property_readonly("config", &PyMetric::config);
    m.def(
        "psnr", [](const FloatArray& a, const FloatArray& b) { return psnr(to_image(a), to_image(b)); },
        py::arg("reference"), py::arg("test"));
    m.def(
        "train_svr",
        [](const std::vector<std::vector<double>>& x, const std::vector<double>& y, double c, double tube) {
            SvrParams p;
            p.c = c;
            p.tube_epsilon = tube;
            const SvrModel model = train_svr(x, y, p);
            return py::make_tuple(model.weights, model.bias);
        },
        py::arg("features"), py::arg("targets"), py::arg("c") = 1.0, py::arg("tube_epsilon") = 0.1,
        "Linear epsilon-SVR; returns (weights, bias).");

    // statistics
    m.def("pcc", [](const std::vector<double>& a, const std::vector<double>& b) { return pcc(a, b); });
    m.def("scc", [](const std::vector<double>& a, const std::vector<double>& b) { return scc(a, b); });
    m.def("rmse", [](const std::vector<double>& a, const std::vector<double>& b) { return rmse(a, b); });
    m.def(
        "t_test",
        [](const std::vector<double>& a, const std::vector<double>& b, bool pooled) {
            const auto r = t_test(a, b, pooled ? TTest::Pooled : TTest::Welch);
            return py::make_tuple(r.t, r.df, r.p_two_sided);
        },
        py::arg("a"), py::arg("b"), py::arg("pooled") = false, "Returns (t, df, two-sided p).");
    m.def(
        "rank_algorithms",
        [](const std::vector<std::pair<std::string, double>>& scores, bool lower_is_better) {
            std::vector<AlgorithmScore> s;
            for (const auto& [alg, v] : scores)
                s.push_back({alg, v});
            std::vector<std::string> order;
            for (const auto& e : rank_algorithms(s, lower_is_better ? Better::Lower : Better::Higher))
                order.push_back(e.algorithm);
            return order;
        },
        py::arg("scores"), py::arg("lower_is_better") = false);
    m.def("kendall_tau", &kendall_tau, py::arg("a"), py::arg("b"));
    m.def("normalized_time", &normalized_time, py::arg("t_metric"), py::arg("t_psnr") = kReferencePsnrSeconds);

    // manifests and splits
    m.def(
        "read_manifest",
        [](const std::filesystem::path& p) {
            const Manifest man = read_manifest(p);
            std::vector<py::dict> out;
            for (const auto& r : man.records)
                out.push_back(py::dict(py::arg("image_path") = man.resolve(r.image_path).string(),
                                       py::arg("content_id") = r.content_id, py::arg("viewpoint_id") = r.viewpoint_id,
                                       py::arg("algorithm_id") = r.algorithm_id, py::arg("dmos") = r.dmos,
                                       py::arg("rotation") = r.rotation, py::arg("key") = r.key()));
            return out;
        },
        py::arg("path"));
    m.def(
        "make_split",
        [](const std::filesystem::path& p, std::uint64_t seed) {
            const SplitPlan s = make_split(read_manifest(p), seed);
            return py::make_tuple(s.validation_ids, s.eval_ids);
        },
        py::arg("manifest"), py::arg("seed"), "Returns (validation_ids, eval_ids).");
    m.def(
        "make_folds",
        [](const std::filesystem::path& p, int n_folds, std::uint64_t seed) {
            const Manifest man = read_manifest(p);
            RecordIds ids(man.size());
            std::iota(ids.begin(), ids.end(), std::size_t{0});
            std::vector<py::tuple> out;
            for (const auto& f : make_folds(ids, man.records, n_folds, seed))
                out.push_back(py::make_tuple(f.train_ids, f.test_ids));
            return out;
        },
        py::arg("manifest"), py::arg("n_folds"), py::arg("seed"), "Folds over every record: [(train_ids, test_ids)].");
}
