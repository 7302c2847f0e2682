#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "vtla/cli.hpp"
#include "vtla/eval.hpp"
#include "vtla/preference.hpp"

namespace py = pybind11;
using namespace vtla;

namespace {

using Image = py::array_t<float, py::array::c_style | py::array::forcecast>;
using Triple = std::tuple<double, double, double>;

Image to_numpy(const RgbImage& img) {
  Image out({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

RgbImage from_numpy(const Image& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an H x W x 3 image");
  RgbImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Shape peg_of(const std::string& shape, std::optional<double> size) {
  const ShapeKind k = parse_shape(shape);
  return {k, size.value_or(default_peg_size(k))};
}

Pose pose_of(const Triple& p) { return {std::get<0>(p), std::get<1>(p), std::get<2>(p)}; }
Action action_of(const Triple& a) { return {std::get<0>(a), std::get<1>(a), std::get<2>(a)}; }
Triple triple(const Action& a) { return {a.dx, a.dy, a.drz}; }

py::dict observation_dict(const Observation& obs) {
  py::dict d;
  d["tactile_left"] = to_numpy(obs.tactile_left.image);
  d["tactile_right"] = to_numpy(obs.tactile_right.image);
  d["vision"] = to_numpy(obs.vision);
  d["contact"] = obs.contact;
  return d;
}

// Adapts a Python callable (observation dict, shape name) -> (x, y, rz).
// Shared by pointer so trials never touch the refcount without the GIL.
class CallablePolicy final : public Policy {
 public:
  explicit CallablePolicy(std::shared_ptr<py::function> fn) : fn_(std::move(fn)) {}
  Action act(const PolicyQuery& q) override {
    py::gil_scoped_acquire gil;
    return action_of((*fn_)(observation_dict(q.observation), std::string(shape_name(q.shape))).cast<Triple>());
  }

 private:
  std::shared_ptr<py::function> fn_;
};

std::vector<Action> actions_of(const std::vector<Triple>& v) {
  std::vector<Action> out;
  out.reserve(v.size());
  for (const auto& t : v) out.push_back(action_of(t));
  return out;
}

}  // namespace

PYBIND11_MODULE(_vtla, m) {
  m.doc() = "Peg-in-hole benchmark core";

  m.def("shapes", [] {
    std::vector<std::string> v;
    for (ShapeKind k : kAllShapes) v.emplace_back(shape_name(k));
    return v;
  });
  m.def("default_peg_size", [](const std::string& s) { return default_peg_size(parse_shape(s)); });
  m.def("is_in_distribution", [](const std::string& s) { return is_in_distribution(parse_shape(s)); });

  m.def(
      "fits_inside",
      [](const std::string& shape, double clearance, const Triple& pose, std::optional<double> size) {
        const Shape peg = peg_of(shape, size);
        return fits_inside(make_polygon(hole_for(peg, clearance)), make_polygon(peg), pose_of(pose));
      },
      py::arg("shape"), py::arg("clearance_mm"), py::arg("pose"), py::arg("peg_size_mm") = py::none());
  m.def(
      "containment_margin",
      [](const std::string& shape, double clearance, const Triple& pose, std::optional<double> size) {
        const Shape peg = peg_of(shape, size);
        return containment_margin(make_polygon(hole_for(peg, clearance)), make_polygon(peg), pose_of(pose));
      },
      py::arg("shape"), py::arg("clearance_mm"), py::arg("pose"), py::arg("peg_size_mm") = py::none());
  m.def(
      "max_admissible_offset",
      [](const std::string& shape, double clearance, double rz, std::optional<double> size) {
        return max_admissible_offset(peg_of(shape, size), clearance, rz);
      },
      py::arg("shape"), py::arg("clearance_mm"), py::arg("rz_deg") = 0.0, py::arg("peg_size_mm") = py::none());

  m.def("tokenize_action", [](const Triple& a) { return tokenize_action(action_of(a)).ids; });
  m.def("detokenize_action", [](const std::array<int, 3>& ids) { return triple(detokenize_action({ids})); });
  m.def("format_action_text", [](const Triple& a) { return format_action_text(action_of(a)); });
  m.def("instruction_text", [](const std::string& s) { return instruction_text(parse_shape(s)); });

  m.def(
      "render_observation",
      [](const std::string& shape, double clearance, const Triple& pose, std::uint64_t seed,
         std::uint64_t capture) {
        return observation_dict(
            render_observation(pose_of(pose), peg_of(shape, std::nullopt), clearance, sample_all(seed), capture));
      },
      py::arg("shape"), py::arg("clearance_mm"), py::arg("pose"), py::arg("seed"), py::arg("capture_index") = 0);

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, const std::map<std::string, int>& counts, double cmin, double cmax,
         std::uint64_t seed, int workers) {
        GenConfig cfg;
        for (ShapeKind k : kAllShapes) {
          const auto it = counts.find(std::string(shape_name(k)));
          if (it != counts.end()) cfg.counts.emplace_back(k, it->second);
        }
        if (cfg.counts.size() != counts.size()) throw std::invalid_argument("unknown shape in counts");
        cfg.clearance_min = cmin;
        cfg.clearance_max = cmax;
        cfg.seed = seed;
        cfg.workers = workers;
        GenSummary s;
        {
          py::gil_scoped_release nogil;
          s = generate_dataset(cfg, out);
        }
        int successes = 0;
        for (const auto& e : s.episodes) successes += e.phase == Phase::kSuccess;
        py::dict d;
        d["samples"] = s.samples;
        d["episodes"] = s.episodes.size();
        d["episode_successes"] = successes;
        return d;
      },
      py::arg("out_dir"), py::arg("counts"), py::arg("clearance_min") = 0.6, py::arg("clearance_max") = 2.0,
      py::arg("seed") = 0, py::arg("workers") = 1);
  m.def("_read_manifest_json", [](const std::filesystem::path& p) {
    std::vector<std::string> out;
    for (const auto& s : read_manifest(p)) out.push_back(to_json(s).dump());
    return out;
  });

  m.def(
      "goal_convergence_rate",
      [](const std::vector<Triple>& preds, const std::vector<Triple>& labels) {
        return goal_convergence_rate(actions_of(preds), actions_of(labels));
      },
      py::arg("preds"), py::arg("labels"));
  m.def(
      "l1_per_axis",
      [](const std::vector<Triple>& preds, const std::vector<Triple>& labels) {
        return l1_per_axis(actions_of(preds), actions_of(labels));
      },
      py::arg("preds"), py::arg("labels"));
  m.def("dpo_loss_from_margin", &dpo_loss_from_margin, py::arg("margin"), py::arg("beta"));

  py::class_<PolicyModel, std::shared_ptr<PolicyModel>>(m, "PolicyModel")
      .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<PolicyModel>(load_checkpoint(p)); })
      .def("save", [](const PolicyModel& self, const std::filesystem::path& p) { save_checkpoint(p, self); })
      .def_property_readonly("num_params", &PolicyModel::num_params)
      .def_property_readonly("params_hash", &PolicyModel::params_hash)
      .def_property_readonly("architecture", [](const PolicyModel& self) { return self.arch().to_json().dump(); })
      .def(
          "act",
          [](const PolicyModel& self, const Image& tl, const Image& tr, const Image& vis, const std::string& shape) {
            const auto f = featurize(from_numpy(tl), from_numpy(tr), from_numpy(vis), parse_shape(shape), self.arch());
            return triple(detokenize_action(greedy_tokens(self, f)));
          },
          py::arg("tactile_left"), py::arg("tactile_right"), py::arg("vision"), py::arg("shape"))
      .def_static(
          "initialized",
          [](std::uint64_t seed) { return std::make_shared<PolicyModel>(PolicyModel::initialized(Architecture{}, seed)); },
          py::arg("seed") = 0);

  m.def(
      "insertion_benchmark",
      [](py::object policy, const std::string& grid, int trials, std::uint64_t seed, const std::string& method) {
        PolicyFactory factory;
        if (py::isinstance<py::str>(policy)) {
          const std::string name = policy.cast<std::string>();
          if (name == "oracle") {
            factory = [](std::uint64_t) { return std::make_unique<OraclePolicy>(); };
          } else if (name == "random") {
            factory = [](std::uint64_t s) { return std::make_unique<RandomPolicy>(s); };
          } else if (name == "zero") {
            factory = [](std::uint64_t) { return std::make_unique<ZeroPolicy>(); };
          } else {
            throw std::invalid_argument("unknown built-in policy: " + name);
          }
        } else if (py::isinstance<PolicyModel>(policy)) {
          std::shared_ptr<const PolicyModel> model = policy.cast<std::shared_ptr<PolicyModel>>();
          factory = [model](std::uint64_t) { return std::make_unique<ModelPolicy>(model); };
        } else {
          auto fn = std::make_shared<py::function>(policy.cast<py::function>());
          factory = [fn](std::uint64_t) { return std::make_unique<CallablePolicy>(fn); };
        }
        const auto cells = grid_preset(grid);
        InsertionTable t;
        {
          py::gil_scoped_release nogil;
          t = insertion_benchmark(factory, cells, trials, seed, 1, method);
        }
        return to_json(t).dump();
      },
      py::arg("policy"), py::arg("grid") = "square@2.0", py::arg("trials") = 10, py::arg("seed") = 0,
      py::arg("method") = "python");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release nogil;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
