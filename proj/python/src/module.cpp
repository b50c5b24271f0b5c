#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "spaen/ablations.hpp"
#include "spaen/checkpoint.hpp"
#include "spaen/cli.hpp"
#include "spaen/eval.hpp"
#include "spaen/spaces.hpp"
#include "spaen/trainer.hpp"

namespace py = pybind11;
using namespace spaen;

namespace {

py::array_t<double> image_array(const Image& img) {
  py::array_t<double> out({img.channels, img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

py::array_t<double> tensor_array(const Tensor& t) {
  py::array_t<double> out(t.shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Tensor array_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

ScoreMatrix score_matrix(const Eigen::MatrixXd& scores, std::vector<int> class_ids,
                         std::vector<int> labels) {
  return {scores, std::move(class_ids), std::move(labels)};
}

}  // namespace

PYBIND11_MODULE(_spaen, m) {
  m.doc() = "Adversarial embedding networks for zero-shot recognition";

  py::enum_<Variant>(m, "Variant")
      .value("SPAEN", Variant::kSpAen)
      .value("CLS_ONLY", Variant::kClsOnly)
      .value("DIRECT_MAP", Variant::kDirectMap)
      .value("SAE", Variant::kSae)
      .value("SPLIT_BRANCH", Variant::kSplitBranch);
  m.def("parse_variant", &parse_variant);
  m.def("variant_name", &variant_name);

  py::enum_<ClsMode>(m, "ClsMode")
      .value("SAMPLED", ClsMode::kSampled)
      .value("FULL_SUM", ClsMode::kFullSum);
  py::enum_<AdvForm>(m, "AdvForm").value("WGAN", AdvForm::kWgan).value("LOG", AdvForm::kLog);
  py::enum_<Setting>(m, "Setting")
      .value("UNSEEN_UNSEEN", Setting::kUnseenUnseen)
      .value("UNSEEN_ALL", Setting::kUnseenAll)
      .value("SEEN_ALL", Setting::kSeenAll);

  py::class_<GenConfig>(m, "GenConfig")
      .def(py::init<>())
      .def_readwrite("num_classes", &GenConfig::num_classes)
      .def_readwrite("num_attributes", &GenConfig::num_attributes)
      .def_readwrite("n_per_class", &GenConfig::n_per_class)
      .def_readwrite("height", &GenConfig::height)
      .def_readwrite("width", &GenConfig::width)
      .def_readwrite("channels", &GenConfig::channels)
      .def_readwrite("noise_std", &GenConfig::noise_std)
      .def_readwrite("attribute_jitter_ratio", &GenConfig::attribute_jitter_ratio)
      .def_readwrite("low_variance_fraction", &GenConfig::low_variance_fraction)
      .def_readwrite("designated_unseen", &GenConfig::designated_unseen)
      .def_readwrite("seed", &GenConfig::seed);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("class_attributes", &Dataset::class_attributes)
      .def_readonly("class_names", &Dataset::class_names)
      .def_readonly("designated_unseen", &Dataset::designated_unseen)
      .def_readonly("low_variance_attributes", &Dataset::low_variance_attributes)
      .def_property_readonly("num_classes", &Dataset::num_classes)
      .def_property_readonly("num_attributes", &Dataset::num_attributes)
      .def("__len__", [](const Dataset& d) { return d.images.size(); })
      .def("image", [](const Dataset& d, std::size_t i) { return image_array(d.images.at(i)); },
           "Image i as a C x H x W array");

  py::class_<SplitSpec>(m, "SplitSpec")
      .def_readonly("seen_classes", &SplitSpec::seen_classes)
      .def_readonly("unseen_classes", &SplitSpec::unseen_classes)
      .def_readonly("val_classes", &SplitSpec::val_classes)
      .def_readonly("train_ids", &SplitSpec::train_ids)
      .def_readonly("seen_test_ids", &SplitSpec::seen_test_ids)
      .def_readonly("unseen_test_ids", &SplitSpec::unseen_test_ids)
      .def("train_classes", &SplitSpec::train_classes);

  m.def("generate_synthetic", &generate_synthetic, py::arg("config") = GenConfig{});
  m.def("make_splits", &make_splits, py::arg("dataset"), py::arg("unseen_count"),
        py::arg("val_count"), py::arg("seed") = 0, py::arg("seen_test_fraction") = 0.2);
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("splits"), py::arg("dir"),
        py::arg("config") = std::nullopt);
  m.def("load_dataset", &load_dataset);

  py::class_<NetConfig>(m, "NetConfig")
      .def(py::init<>())
      .def_readwrite("embedding_dim", &NetConfig::embedding_dim)
      .def_readwrite("height", &NetConfig::height)
      .def_readwrite("width", &NetConfig::width)
      .def_readwrite("channels", &NetConfig::channels)
      .def_readwrite("trunk_channels", &NetConfig::trunk_channels)
      .def_readwrite("head_hidden", &NetConfig::head_hidden)
      .def_readwrite("f_hidden", &NetConfig::f_hidden)
      .def_readwrite("g_hidden", &NetConfig::g_hidden)
      .def_readwrite("g_base_channels", &NetConfig::g_base_channels)
      .def_readwrite("g_channels", &NetConfig::g_channels)
      .def_readwrite("critic_hidden", &NetConfig::critic_hidden)
      .def_readwrite("phi_channels", &NetConfig::phi_channels)
      .def_readwrite("variant", &NetConfig::variant)
      .def_readwrite("seed", &NetConfig::seed);

  py::class_<HyperParams>(m, "HyperParams")
      .def(py::init<>())
      .def_readwrite("margin", &HyperParams::margin)
      .def_readwrite("lambda_p", &HyperParams::lambda_p)
      .def_readwrite("alpha", &HyperParams::alpha)
      .def_readwrite("beta", &HyperParams::beta)
      .def_readwrite("clip_c", &HyperParams::clip_c)
      .def_readwrite("n_critic", &HyperParams::n_critic)
      .def_readwrite("learning_rate", &HyperParams::learning_rate)
      .def_readwrite("critic_lr_scale", &HyperParams::critic_lr_scale)
      .def_readwrite("momentum", &HyperParams::momentum)
      .def_readwrite("batch_size", &HyperParams::batch_size)
      .def_readwrite("cls_mode", &HyperParams::cls_mode)
      .def_readwrite("adv_form", &HyperParams::adv_form)
      .def_readwrite("patience", &HyperParams::patience)
      .def_readwrite("min_lr", &HyperParams::min_lr);

  py::class_<ModelBundle>(m, "ModelBundle")
      .def_property_readonly("variant", &ModelBundle::variant)
      .def_readonly("config", &ModelBundle::config)
      .def("parameter_counts",
           [](const ModelBundle& b) {
             py::dict out;
             for (const ParamMap* map : b.maps()) out[py::str(map->name())] = map->param_count();
             return out;
           })
      .def("embed",
           [](const ModelBundle& b, const py::array_t<double>& images) {
             return tensor_array(classification_embedding(b, array_tensor(images)));
           },
           "E(x) for an N x C x H x W batch")
      .def("reconstruct", [](const ModelBundle& b, const py::array_t<double>& images) {
        return tensor_array(reconstruct(b, array_tensor(images)));
      });
  m.def("build_models", [](const NetConfig& c) { return build_models(c); });
  m.def("save_bundle", [](const ModelBundle& b, const std::filesystem::path& dir) {
    save_bundle(b, dir);
  });
  m.def("load_bundle", &load_bundle);

  py::class_<LossBreakdown>(m, "LossBreakdown")
      .def_readonly("cls", &LossBreakdown::cls)
      .def_readonly("feat", &LossBreakdown::feat)
      .def_readonly("pixel", &LossBreakdown::pixel)
      .def_readonly("rec", &LossBreakdown::rec)
      .def_readonly("adv_E", &LossBreakdown::adv_E)
      .def_readonly("adv_D", &LossBreakdown::adv_D)
      .def_readonly("total", &LossBreakdown::total);
  py::class_<EpochRow>(m, "EpochRow")
      .def_readonly("epoch", &EpochRow::epoch)
      .def_readonly("loss", &EpochRow::loss)
      .def_readonly("val_h", &EpochRow::val_h)
      .def_readonly("lr", &EpochRow::lr);

  m.def(
      "train",
      [](const Dataset& ds, const SplitSpec& splits, NetConfig net, const HyperParams& hyper,
         int epochs, std::uint64_t seed) {
        TrainOptions o;
        o.hyper = hyper;
        o.epochs = epochs;
        o.seed = seed;
        o = variant_options(net.variant, o);
        py::gil_scoped_release release;
        TrainResult r = train(ds, splits, net, o);
        return std::make_pair(std::move(r.bundle), r.report.rows);
      },
      py::arg("dataset"), py::arg("splits"), py::arg("net"), py::arg("hyper") = HyperParams{},
      py::arg("epochs") = 300, py::arg("seed") = 0,
      "Trains one variant (net.variant); returns (bundle, epoch rows)");

  py::class_<SucPoint>(m, "SucPoint")
      .def_readonly("gamma", &SucPoint::gamma)
      .def_readonly("acc_ut", &SucPoint::acc_ut)
      .def_readonly("acc_st", &SucPoint::acc_st);
  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("acc_uu", &MetricsReport::acc_uu)
      .def_readonly("acc_ut", &MetricsReport::acc_ut)
      .def_readonly("acc_st", &MetricsReport::acc_st)
      .def_readonly("h", &MetricsReport::h)
      .def_readonly("suc", &MetricsReport::suc)
      .def_readonly("ausuc", &MetricsReport::ausuc);
  m.def("evaluate_all", &evaluate_all, py::arg("bundle"), py::arg("dataset"), py::arg("splits"),
        py::arg("gamma_grid") = std::nullopt);
  m.def("evaluate", &evaluate);
  m.def("harmonic_mean", &harmonic_mean, py::arg("acc_seen"), py::arg("acc_unseen"));
  m.def(
      "predict",
      [](const Eigen::MatrixXd& scores, std::vector<int> class_ids) {
        return predict(score_matrix(scores, std::move(class_ids), {}));
      },
      "Row-wise argmax class id; ties go to the smallest id");
  m.def(
      "predict_calibrated",
      [](const Eigen::MatrixXd& scores, std::vector<int> class_ids,
         const std::vector<int>& seen, double gamma) {
        return predict_calibrated(score_matrix(scores, std::move(class_ids), {}), seen, gamma);
      });
  m.def("per_class_top1", py::overload_cast<const std::vector<int>&, const std::vector<int>&>(
                              &per_class_top1));
  m.def(
      "suc_curve",
      [](const Eigen::MatrixXd& scores, std::vector<int> class_ids, std::vector<int> labels,
         const std::vector<int>& seen, std::optional<std::vector<double>> grid) {
        const ScoreMatrix s = score_matrix(scores, std::move(class_ids), std::move(labels));
        return suc_curve(s, seen, grid ? *grid : default_gamma_grid(s));
      },
      py::arg("scores"), py::arg("class_ids"), py::arg("labels"), py::arg("seen_class_ids"),
      py::arg("gamma_grid") = std::nullopt);
  m.def("ausuc", &ausuc);

  m.def("variance_cosine", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return variance_cosine(attribute_variance(a), attribute_variance(b));
  }, "Cosine between the column variances of two attribute matrices");
  m.def("attribute_variance", [](const Eigen::MatrixXd& rows) {
    return attribute_variance(rows).variance;
  });

  py::class_<AblationRow>(m, "AblationRow")
      .def_readonly("variant", &AblationRow::variant)
      .def_readonly("metrics", &AblationRow::metrics)
      .def_readonly("recon_mse", &AblationRow::recon_mse);
  m.def(
      "run_variant",
      [](Variant v, const Dataset& ds, const SplitSpec& splits, const HyperParams& hyper,
         NetConfig net, int epochs, std::uint64_t seed) {
        AblationSpec spec{v, hyper, net, epochs, seed};
        py::gil_scoped_release release;
        VariantRun r = run_variant(spec, ds, splits);
        return std::make_pair(std::move(r.bundle), r.row);
      },
      py::arg("variant"), py::arg("dataset"), py::arg("splits"),
      py::arg("hyper") = HyperParams{}, py::arg("net") = NetConfig{}, py::arg("epochs") = 300,
      py::arg("seed") = 0, "Trains and evaluates one ablation variant");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs the command-line tool in process; returns (exit code, stdout, stderr)");
}
