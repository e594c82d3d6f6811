#include "fracvolt/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fracvolt {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

void allow_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) fail("unknown key '" + item.key() + "' in " + where);
}

const Json& need(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(where + " needs '" + key + "'");
  return j.at(key);
}

double to_double(const Json& j, const std::string& what) {
  if (!j.is_number()) fail(what + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(what + " must be finite");
  return v;
}

std::int64_t to_int(const Json& j, const std::string& what) {
  if (!j.is_number_integer()) fail(what + " must be an integer");
  return j.get<std::int64_t>();
}

std::string to_str(const Json& j, const std::string& what) {
  if (!j.is_string()) fail(what + " must be a string");
  return j.get<std::string>();
}

std::vector<double> to_doubles(const Json& j, const std::string& what) {
  if (!j.is_array()) fail(what + " must be an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(to_double(j[i], what + "[" + std::to_string(i) + "]"));
  return out;
}

VectorXd to_vector(const Json& j, const std::string& what) {
  const auto v = to_doubles(j, what);
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

MatrixXd to_matrix(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) fail(what + " must be a non-empty array of rows");
  const Index rows = static_cast<Index>(j.size());
  Index cols = -1;
  MatrixXd m;
  for (Index i = 0; i < rows; ++i) {
    const auto row = to_doubles(j[static_cast<std::size_t>(i)], what + " row");
    if (cols < 0) {
      cols = static_cast<Index>(row.size());
      if (cols == 0) fail(what + " rows must be non-empty");
      m.resize(rows, cols);
    }
    if (static_cast<Index>(row.size()) != cols) fail(what + " rows must have equal length");
    for (Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

Json from_vector(const VectorXd& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json from_matrix(const MatrixXd& m) {
  Json a = Json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(from_vector(m.row(i).transpose()));
  return a;
}

// ---- sections ---------------------------------------------------------------

Experiment parse_experiment(const std::string& s) {
  for (auto e : {Experiment::resolvent, Experiment::cp_check, Experiment::converge, Experiment::simulate,
                 Experiment::verify_strong})
    if (to_string(e) == s) return e;
  fail("unknown experiment '" + s + "' (resolvent, cp-check, converge, simulate, verify-strong)");
}

Method parse_method(const std::string& s) {
  for (auto m : {Method::ml_spectral, Method::subordination, Method::volterra_step})
    if (to_string(m) == s) return m;
  fail("unknown method '" + s + "' (ml_spectral, subordination, volterra_step)");
}

operators::OperatorSpec parse_operator(const Json& j) {
  const std::string kind = to_str(need(j, "kind", "operator"), "operator.kind");
  if (kind == "laplacian_1d") {
    allow_keys(j, "operator", {"kind", "n", "length"});
    operators::Laplacian1d l;
    const auto n = to_int(need(j, "n", "operator"), "operator.n");
    if (n < 1 || n > 1'000'000) fail("operator.n must be a positive integer");
    l.n = static_cast<int>(n);
    if (j.contains("length")) l.length = to_double(j.at("length"), "operator.length");
    if (!(l.length > 0.0)) fail("operator.length must be positive");
    return {l};
  }
  if (kind == "dense") {
    allow_keys(j, "operator", {"kind", "matrix"});
    MatrixXd m = to_matrix(need(j, "matrix", "operator"), "operator.matrix");
    if (m.rows() != m.cols()) fail("operator.matrix must be square");
    return {operators::Dense{std::move(m)}};
  }
  if (kind == "spectral") {
    allow_keys(j, "operator", {"kind", "eigenvalues", "eigenvectors"});
    VectorXd eig = to_vector(need(j, "eigenvalues", "operator"), "operator.eigenvalues");
    if (eig.size() == 0) fail("operator.eigenvalues must be non-empty");
    if (!j.contains("eigenvectors")) return {operators::SpectralSpec{std::move(eig), std::nullopt}};
    MatrixXd vecs = to_matrix(j.at("eigenvectors"), "operator.eigenvectors");
    if (vecs.rows() != eig.size() || vecs.cols() != eig.size())
      fail("operator.eigenvectors must be square of the eigenvalue count");
    return {operators::SpectralSpec{std::move(eig), std::move(vecs)}};
  }
  fail("unknown operator kind '" + kind + "' (laplacian_1d, dense, spectral)");
}

Json dump_operator(const operators::OperatorSpec& spec) {
  Json j;
  if (const auto* l = std::get_if<operators::Laplacian1d>(&spec.kind)) {
    j["kind"] = "laplacian_1d";
    j["n"] = l->n;
    j["length"] = l->length;
  } else if (const auto* d = std::get_if<operators::Dense>(&spec.kind)) {
    j["kind"] = "dense";
    j["matrix"] = from_matrix(d->matrix);
  } else {
    const auto& s = std::get<operators::SpectralSpec>(spec.kind);
    j["kind"] = "spectral";
    j["eigenvalues"] = from_vector(s.eigenvalues);
    if (s.eigenvectors) j["eigenvectors"] = from_matrix(*s.eigenvectors);
  }
  return j;
}

Index operator_dim(const operators::OperatorSpec& spec) {
  if (const auto* l = std::get_if<operators::Laplacian1d>(&spec.kind)) return l->n;
  if (const auto* d = std::get_if<operators::Dense>(&spec.kind)) return d->matrix.rows();
  return std::get<operators::SpectralSpec>(spec.kind).eigenvalues.size();
}

kernels::KernelSpec parse_kernel(const Json& j) {
  const std::string kind = to_str(need(j, "kind", "kernel"), "kernel.kind");
  try {
    if (kind == "fractional") {
      allow_keys(j, "kernel", {"kind", "alpha"});
      return kernels::KernelSpec::fractional(to_double(need(j, "alpha", "kernel"), "kernel.alpha"));
    }
    if (kind == "exponential") {
      allow_keys(j, "kernel", {"kind", "rate", "scale"});
      const double scale = j.contains("scale") ? to_double(j.at("scale"), "kernel.scale") : 1.0;
      return kernels::KernelSpec::exponential(to_double(need(j, "rate", "kernel"), "kernel.rate"), scale);
    }
    if (kind == "constant_one") {
      allow_keys(j, "kernel", {"kind"});
      return kernels::KernelSpec::constant_one();
    }
    if (kind == "table") {
      allow_keys(j, "kernel", {"kind", "times", "values"});
      return kernels::KernelSpec::table(to_doubles(need(j, "times", "kernel"), "kernel.times"),
                                        to_doubles(need(j, "values", "kernel"), "kernel.values"));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const DomainError& e) {
    fail(e.what());
  }
  fail("unknown kernel kind '" + kind + "' (fractional, exponential, constant_one, table)");
}

Json dump_kernel(const kernels::KernelSpec& spec) {
  Json j;
  std::visit(
      [&j](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, kernels::Fractional>) {
          j["kind"] = "fractional";
          j["alpha"] = k.alpha;
        } else if constexpr (std::is_same_v<K, kernels::Exponential>) {
          j["kind"] = "exponential";
          j["rate"] = k.rate;
          j["scale"] = k.scale;
        } else if constexpr (std::is_same_v<K, kernels::ConstantOne>) {
          j["kind"] = "constant_one";
        } else {
          j["kind"] = "table";
          j["times"] = k.times;
          j["values"] = k.values;
        }
      },
      spec.kind);
  return j;
}

TimeGrid parse_grid(const Json& j) {
  allow_keys(j, "grid", {"t_end", "steps"});
  const double t_end = to_double(need(j, "t_end", "grid"), "grid.t_end");
  const auto steps = to_int(need(j, "steps", "grid"), "grid.steps");
  if (!(t_end > 0.0)) fail("grid.t_end must be positive");
  if (steps < 1 || steps > 100'000'000) fail("grid.steps must be a positive integer");
  return TimeGrid(t_end, static_cast<int>(steps));
}

// Psi matrices for "time_varying" need the grid, so it is passed in.
NoiseSpec parse_noise(const Json& j, const std::optional<TimeGrid>& grid) {
  allow_keys(j, "noise", {"q_eigs", "q_power", "dim_u", "psi"});
  VectorXd q;
  if (j.contains("q_eigs")) {
    if (j.contains("q_power") || j.contains("dim_u")) fail("noise takes either q_eigs or q_power with dim_u");
    q = to_vector(j.at("q_eigs"), "noise.q_eigs");
  } else {
    const double power = to_double(need(j, "q_power", "noise"), "noise.q_power");
    const auto dim_u = to_int(need(j, "dim_u", "noise"), "noise.dim_u");
    if (dim_u < 1) fail("noise.dim_u must be positive");
    q.resize(dim_u);
    for (Index i = 0; i < dim_u; ++i) q(i) = std::pow(static_cast<double>(i + 1), -power);
  }
  try {
    if (!j.contains("psi")) return NoiseSpec::identity(q);
    const Json& p = j.at("psi");
    if (p.is_string()) {
      if (p.get<std::string>() != "identity") fail("noise.psi string must be \"identity\"");
      return NoiseSpec::identity(q);
    }
    const std::string kind = to_str(need(p, "kind", "noise.psi"), "noise.psi.kind");
    if (kind == "identity") {
      allow_keys(p, "noise.psi", {"kind"});
      return NoiseSpec::identity(q);
    }
    if (kind == "constant") {
      allow_keys(p, "noise.psi", {"kind", "matrix"});
      return NoiseSpec::constant(to_matrix(need(p, "matrix", "noise.psi"), "noise.psi.matrix"), q);
    }
    if (kind == "time_varying") {
      allow_keys(p, "noise.psi", {"kind", "matrices"});
      if (!grid) fail("noise.psi time_varying needs a grid");
      const Json& ms = need(p, "matrices", "noise.psi");
      if (!ms.is_array()) fail("noise.psi.matrices must be an array");
      std::vector<MatrixXd> mats;
      for (const auto& m : ms) mats.push_back(to_matrix(m, "noise.psi.matrices[]"));
      return NoiseSpec::time_varying(*grid, std::move(mats), q);
    }
    fail("unknown noise.psi kind '" + kind + "' (identity, constant, time_varying)");
  } catch (const ConfigError&) {
    throw;
  } catch (const DomainError& e) {
    fail(e.what());
  }
}

Json dump_noise(const NoiseSpec& n) {
  Json j;
  j["q_eigs"] = from_vector(n.q_eigs);
  if (const auto* c = std::get_if<psi::Constant>(&n.psi)) {
    j["psi"] = {{"kind", "constant"}, {"matrix", from_matrix(c->c)}};
  } else if (const auto* tv = std::get_if<psi::TimeVarying>(&n.psi)) {
    Json ms = Json::array();
    for (const auto& m : tv->mats) ms.push_back(from_matrix(m));
    j["psi"] = {{"kind", "time_varying"}, {"matrices", ms}};
  } else {
    j["psi"] = "identity";
  }
  return j;
}

bool is_fractional_up_to(const kernels::KernelSpec& k, double max_alpha, bool open) {
  if (std::holds_alternative<kernels::ConstantOne>(k.kind)) return open ? 1.0 < max_alpha : 1.0 <= max_alpha;
  const auto* f = std::get_if<kernels::Fractional>(&k.kind);
  if (!f) return false;
  return open ? f->alpha < max_alpha : f->alpha <= max_alpha;
}

}  // namespace

std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::resolvent: return "resolvent";
    case Experiment::cp_check: return "cp-check";
    case Experiment::converge: return "converge";
    case Experiment::simulate: return "simulate";
    case Experiment::verify_strong: return "verify-strong";
  }
  return "?";
}

void validate(const ExperimentConfig& c) {
  const std::string what = to_string(c.experiment);
  auto require = [&](bool present, const char* field) {
    if (!present) fail("experiment '" + what + "' needs '" + field + "'");
  };
  require(c.kernel.has_value(), "kernel");
  require(c.grid.has_value(), "grid");
  if (c.out_dir.empty()) fail("'out_dir' must be set");
  if (c.experiment != Experiment::cp_check) require(c.op.has_value(), "operator");

  const bool stochastic = c.experiment == Experiment::simulate || c.experiment == Experiment::verify_strong ||
                          (c.experiment == Experiment::converge && c.noise.has_value());
  if (c.experiment == Experiment::simulate || c.experiment == Experiment::verify_strong)
    require(c.noise.has_value(), "noise");
  if (stochastic) {
    require(c.paths.has_value(), "paths");
    require(c.seed.has_value(), "seed");
    if (*c.paths < 2) fail("'paths' must be at least 2");
  }

  if (c.max_dim < 1) fail("'max_dim' must be positive");
  if (c.op) {
    const Index dim = operator_dim(*c.op);
    if (dim > c.max_dim) fail("operator dimension exceeds max_dim");
    if (c.noise) {
      try {
        c.noise->validate(dim, *c.grid);
      } catch (const DomainError& e) {
        fail(e.what());
      }
    }
  }

  if (c.method) {
    if (c.experiment != Experiment::resolvent) fail("'method' applies to the resolvent experiment only");
    if (*c.method == Method::ml_spectral && !is_fractional_up_to(*c.kernel, 2.0, false))
      fail("method ml_spectral needs a fractional kernel with alpha <= 2");
    if (*c.method == Method::subordination && !is_fractional_up_to(*c.kernel, 1.0, true))
      fail("method subordination needs a fractional kernel with alpha < 1");
  }
  if (c.residual_tol && !(*c.residual_tol > 0.0)) fail("'residual_tol' must be positive");
  if (c.mu_grid.empty()) fail("'mu_grid' must be non-empty");
  for (double mu : c.mu_grid)
    if (!(mu >= 0.0)) fail("'mu_grid' entries must be >= 0");
  if (!(c.tol >= 0.0)) fail("'tol' must be >= 0");
  if (c.n_list) {
    if (c.n_list->empty()) fail("'n_list' must be non-empty");
    for (std::size_t i = 0; i < c.n_list->size(); ++i) {
      if (!((*c.n_list)[i] > 0.0)) fail("'n_list' entries must be positive");
      if (i > 0 && !((*c.n_list)[i] > (*c.n_list)[i - 1])) fail("'n_list' must be strictly increasing");
    }
  }
  if (!(c.p >= 1.0)) fail("'p' must be >= 1");
  if (c.levels < 2 || c.levels > 8) fail("'levels' must be in [2, 8]");
  if (c.times) {
    if (c.times->empty()) fail("'times' must be non-empty");
    for (double t : *c.times)
      if (!(t > 0.0 && t <= c.grid->t_end)) fail("'times' entries must lie in (0, t_end]");
  }
}

ExperimentConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }
  allow_keys(j, "top level",
             {"experiment", "description", "operator", "kernel", "alpha", "grid", "noise", "n_list", "paths", "seed",
              "out_dir", "method", "residual_tol", "mu_grid", "tol", "p", "levels", "times", "max_dim"});

  ExperimentConfig c;
  c.experiment = parse_experiment(to_str(need(j, "experiment", "config"), "experiment"));
  if (j.contains("description")) c.description = to_str(j.at("description"), "description");
  if (j.contains("operator")) c.op = parse_operator(j.at("operator"));
  if (j.contains("kernel") && j.contains("alpha")) fail("give either 'kernel' or 'alpha', not both");
  if (j.contains("kernel")) c.kernel = parse_kernel(j.at("kernel"));
  if (j.contains("alpha")) {
    const double a = to_double(j.at("alpha"), "alpha");
    if (!(a > 0.0)) fail("'alpha' must be positive");
    c.kernel = kernels::KernelSpec::fractional(a);
  }
  if (j.contains("grid")) c.grid = parse_grid(j.at("grid"));
  if (j.contains("noise")) c.noise = parse_noise(j.at("noise"), c.grid);
  if (j.contains("n_list")) c.n_list = to_doubles(j.at("n_list"), "n_list");
  if (j.contains("paths")) {
    const auto p = to_int(j.at("paths"), "paths");
    if (p < 0 || p > 100'000'000) fail("'paths' out of range");
    c.paths = static_cast<int>(p);
  }
  if (j.contains("seed")) {
    const Json& s = j.at("seed");
    if (!s.is_number_unsigned()) fail("'seed' must be a non-negative integer");
    c.seed = s.get<std::uint64_t>();
  }
  if (j.contains("out_dir")) c.out_dir = to_str(j.at("out_dir"), "out_dir");
  if (j.contains("method")) c.method = parse_method(to_str(j.at("method"), "method"));
  if (j.contains("residual_tol")) c.residual_tol = to_double(j.at("residual_tol"), "residual_tol");
  if (j.contains("mu_grid")) c.mu_grid = to_doubles(j.at("mu_grid"), "mu_grid");
  if (j.contains("tol")) c.tol = to_double(j.at("tol"), "tol");
  if (j.contains("p")) c.p = to_double(j.at("p"), "p");
  if (j.contains("levels")) c.levels = static_cast<int>(to_int(j.at("levels"), "levels"));
  if (j.contains("times")) c.times = to_doubles(j.at("times"), "times");
  if (j.contains("max_dim")) c.max_dim = static_cast<Index>(to_int(j.at("max_dim"), "max_dim"));

  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  Json j;
  j["experiment"] = to_string(c.experiment);
  if (!c.description.empty()) j["description"] = c.description;
  if (c.op) j["operator"] = dump_operator(*c.op);
  if (c.kernel) j["kernel"] = dump_kernel(*c.kernel);
  if (c.grid) j["grid"] = {{"t_end", c.grid->t_end}, {"steps", c.grid->steps}};
  if (c.noise) j["noise"] = dump_noise(*c.noise);
  if (c.n_list) j["n_list"] = *c.n_list;
  if (c.paths) j["paths"] = *c.paths;
  if (c.seed) j["seed"] = *c.seed;
  j["out_dir"] = c.out_dir.generic_string();
  if (c.method) j["method"] = to_string(*c.method);
  if (c.residual_tol) j["residual_tol"] = *c.residual_tol;
  j["mu_grid"] = c.mu_grid;
  j["tol"] = c.tol;
  j["p"] = c.p;
  j["levels"] = c.levels;
  if (c.times) j["times"] = *c.times;
  j["max_dim"] = c.max_dim;
  return j.dump(2);
}

}  // namespace fracvolt
