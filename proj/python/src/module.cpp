#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/nn.hpp"
#include "advlab/objectives.hpp"
#include "advlab/theory.hpp"
#include "advlab/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <limits>

namespace py = pybind11;
using namespace advlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.vec().begin(), t.vec().end(), out.mutable_data());
  return out;
}

py::dict outcome_dict(const attacks::AttackOutcome& o) {
  py::dict d;
  d["perturbed"] = to_array(o.perturbed);
  d["success"] = o.success;
  d["class_before"] = o.class_before;
  d["class_after"] = o.class_after;
  d["loss_before"] = o.loss_before;
  d["loss_after"] = o.loss_after;
  d["l1"] = o.l1;
  d["l2"] = o.l2;
  d["linf"] = o.linf;
  d["reported_norm"] = o.reported_norm;
  d["zero_gradient"] = o.zero_gradient;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "advlab core: tensors, networks, attacks, theory checks";
  m.attr("__version__") = trainer::kCodeVersion;
  m.attr("inf") = std::numeric_limits<double>::infinity();

  py::class_<nn::Network>(m, "Network")
      .def_static(
          "standard",
          [](const std::string& arch, const Shape& input, std::size_t classes, std::uint64_t seed, std::size_t channels,
             std::vector<std::size_t> hidden) {
            nn::ArchOptions o;
            o.classes = classes;
            o.channels = channels;
            o.hidden = std::move(hidden);
            return nn::he_init(nn::standard_arch(arch, input, o), seed);
          },
          py::arg("arch"), py::arg("input"), py::arg("classes") = 10, py::arg("seed") = 0, py::arg("channels") = 16,
          py::arg("hidden") = std::vector<std::size_t>{}, "He-initialized named architecture")
      .def_static(
          "affine",
          [](std::size_t d, std::size_t classes, std::uint64_t seed) {
            nn::NetworkSpec s;
            s.name = "affine";
            s.input = {d};
            s.classes = classes;
            s.layers = {nn::Dense{d, classes, true}};
            return nn::he_init(s, seed);
          },
          py::arg("d"), py::arg("classes"), py::arg("seed") = 0, "single dense layer")
      .def_static("load", [](const std::string& path) { return nn::load_checkpoint(path); })
      .def("save", [](const nn::Network& n, const std::string& path) { nn::save_checkpoint(path, n, 0); })
      .def_property_readonly("num_params", &nn::Network::num_params)
      .def_property_readonly("input_shape", [](const nn::Network& n) { return n.spec.input; })
      .def_property_readonly("classes", [](const nn::Network& n) { return n.spec.classes; })
      .def_property_readonly("spec_json", [](const nn::Network& n) { return nn::to_json(n.spec).dump(); })
      .def("logits", [](const nn::Network& n, const Array& x) { return to_array(nn::logits(n, to_tensor(x))); })
      .def("input_gradient",
           [](const nn::Network& n, const Array& x, std::size_t c) { return to_array(nn::input_gradient(n, to_tensor(x), c)); },
           py::arg("x"), py::arg("label"), "gradient of the cross-entropy loss w.r.t. the input");

  m.def("fgsm", [](const nn::Network& n, const Array& x, std::size_t c, double eps) {
    return outcome_dict(attacks::fgsm(n, to_tensor(x), c, eps));
  });
  m.def("step_l2", [](const nn::Network& n, const Array& x, std::size_t c, double eps) {
    return outcome_dict(attacks::step_l2(n, to_tensor(x), c, eps));
  });
  m.def(
      "deepfool",
      [](const nn::Network& n, const Array& x, std::optional<std::size_t> label) {
        return outcome_dict(attacks::deepfool(n, to_tensor(x), attacks::AttackSpec::make(attacks::Method::DeepFool, 0.0), label));
      },
      py::arg("net"), py::arg("x"), py::arg("label") = py::none());
  m.def("calibrate_threshold", &attacks::calibrate_threshold, py::arg("p"), py::arg("eps_inf"), py::arg("d"));

  m.def("grad_penalty_loss", [](const nn::Network& n, const Array& x, std::size_t c, double q, double eps) {
    return objectives::grad_penalty_loss(n, to_tensor(x), c, q, eps);
  });
  m.def("duality_gap", [](const nn::Network& n, const Array& x, std::size_t c, double eps, double p) {
    return objectives::duality_gap(n, to_tensor(x), c, eps, p);
  });
  m.def("hein_bound", [](const nn::Network& n, const Array& x, double p) { return objectives::hein_bound(n, to_tensor(x), p); });

  m.def("dense_path_sum", [](const std::vector<std::size_t>& widths) { return theory::total_path_sum(theory::dense_dag(widths)); });
  m.def(
      "scaling_slope",
      [](const std::vector<std::size_t>& dims, const std::string& statistic, std::size_t seeds, std::size_t inputs,
         std::uint64_t seed) {
        const auto stat = statistic == "grad_l1"   ? theory::Statistic::LossGradL1
                          : statistic == "grad_l2" ? theory::Statistic::LossGradL2
                                                   : throw std::invalid_argument("statistic must be grad_l1 or grad_l2");
        auto family = [](std::size_t d) { return nn::standard_arch("mlp", {d}, {}); };
        const auto rep = theory::scaling_slope(family, dims, stat, seeds, inputs, seed);
        py::dict d;
        d["slope"] = rep.slope;
        d["ci"] = rep.ci;
        std::vector<double> means;
        for (const auto& r : rep.rows) means.push_back(r.summary.mean);
        d["means"] = means;
        return d;
      },
      py::arg("dims"), py::arg("statistic") = "grad_l1", py::arg("seeds") = 10, py::arg("inputs_per_seed") = 10,
      py::arg("seed") = 0);

  m.def(
      "synth_gaussian",
      [](std::size_t d, std::size_t classes, std::size_t n, std::uint64_t seed, double margin) {
        const auto ds = data::synth_gaussian(d, classes, n, seed, margin);
        return py::make_tuple(to_array(ds.samples), ds.labels);
      },
      py::arg("d"), py::arg("classes"), py::arg("n"), py::arg("seed") = 0, py::arg("margin") = 4.0);
  m.def("upsample_copy", [](const Array& x, std::size_t k) { return to_array(data::upsample_copy(to_tensor(x), k)); });

  m.def("records_header", &trainer::records_header);
  m.def("read_records_csv", [](const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    py::list out;
    for (const auto& r : trainer::read_records_csv(is)) {
      py::dict d;
      d["run_id"] = r.run_id;
      d["epoch"] = r.epoch;
      d["split"] = r.split;
      d["accuracy"] = r.accuracy;
      d["xent"] = r.xent;
      d["g1"] = r.g1;
      d["g2"] = r.g2;
      d["vuln_pgd"] = r.vuln_pgd;
      d["vuln_fgsm"] = r.vuln_fgsm;
      d["dmg01"] = r.dmg01;
      d["dmgxent"] = r.dmgxent;
      d["dmgxent_over_eps"] = r.dmgxent_over_eps;
      out.append(d);
    }
    return out;
  });
}
