#include "aslora/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace aslora {

namespace {

Matrix select_columns(const Matrix& m, std::span<const int> indices) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(indices[j]);
  return out;
}

void check_batch(const SyntheticTask& task, int n, std::span<const int> indices) {
  if (n < 0 || n >= task.num_layers()) throw ParameterError("layer index " + std::to_string(n) + " out of range");
  if (indices.empty()) throw ParameterError("empty sample index set");
  const int m = task.num_samples();
  for (int i : indices) {
    if (i < 0 || i >= m) throw ParameterError("sample index " + std::to_string(i) + " out of range");
  }
}

// ((W0 + sBA) X_sel - Y_sel) together with X_sel.
struct Residual {
  Matrix X;
  Matrix R;
};

Residual residual(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices) {
  check_batch(task, n, indices);
  Residual res;
  res.X = select_columns(task.X[static_cast<std::size_t>(n)], indices);
  res.R = effective_weight(layer) * res.X - select_columns(task.Y[static_cast<std::size_t>(n)], indices);
  return res;
}

}  // namespace

Matrix effective_weight(const LoraLayer& layer) { return layer.W0 + layer.scale() * (layer.B * layer.A); }

std::vector<int> all_indices(int m) {
  std::vector<int> idx(static_cast<std::size_t>(std::max(m, 0)));
  for (int i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

double layer_loss(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices) {
  const Residual res = residual(layer, task, n, indices);
  return res.R.squaredNorm() / (2.0 * static_cast<double>(indices.size()));
}

LayerGrads layer_grads(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices) {
  const Residual res = residual(layer, task, n, indices);
  const double s = layer.scale();
  const Matrix G = (res.R * res.X.transpose()) / static_cast<double>(indices.size());
  return {s * (layer.B.transpose() * G), s * (G * layer.A.transpose())};
}

Matrix grad_A(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices) {
  return layer_grads(layer, task, n, indices).gA;
}

Matrix grad_B(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices) {
  return layer_grads(layer, task, n, indices).gB;
}

std::vector<LayerGrads> per_sample_grads(const LoraLayer& layer, const SyntheticTask& task, int n,
                                         std::span<const int> indices) {
  const Residual res = residual(layer, task, n, indices);
  const double s = layer.scale();
  const Matrix Bt = layer.B.transpose();
  const Matrix At = layer.A.transpose();
  std::vector<LayerGrads> out;
  out.reserve(indices.size());
  for (Eigen::Index i = 0; i < res.X.cols(); ++i) {
    const Matrix G = res.R.col(i) * res.X.col(i).transpose();
    out.push_back({s * (Bt * G), s * (G * At)});
  }
  return out;
}

Matrix hessian_action(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices,
                      Component component, const Matrix& V) {
  check_batch(task, n, indices);
  const Matrix& target = layer.factor(component);
  if (V.rows() != target.rows() || V.cols() != target.cols()) {
    throw ParameterError(std::string("hessian_action: direction shape does not match component ") +
                         component_name(component));
  }
  const Matrix X = select_columns(task.X[static_cast<std::size_t>(n)], indices);
  const double s = layer.scale();
  const double c = s * s / static_cast<double>(indices.size());
  if (component == Component::B) {
    const Matrix AX = layer.A * X;
    return c * (V * (AX * AX.transpose()));
  }
  return c * ((layer.B.transpose() * layer.B) * V * (X * X.transpose()));
}

double global_loss(const ModelState& model, const SyntheticTask& task) {
  const std::vector<int> idx = all_indices(task.num_samples());
  double total = 0.0;
  for (int n = 0; n < model.num_layers(); ++n) total += layer_loss(model.layers[static_cast<std::size_t>(n)], task, n, idx);
  return model.num_layers() > 0 ? total / model.num_layers() : 0.0;
}

namespace {

// Orthonormal basis (as rows) of the row space of m.
Matrix row_basis(const Matrix& m) {
  const Svd d = svd(m);
  const int k = numerical_rank(m);
  return d.V.leftCols(k).transpose();
}

}  // namespace

GeneratedTask make_synthetic_task(const TaskOptions& o, RngStream& rng) {
  if (o.num_layers < 1) throw ParameterError("num_layers must be >= 1");
  if (o.rank < 1 || o.rank >= std::min(o.d_in, o.d_out)) throw ParameterError("rank must satisfy 1 <= r < min(d_in, d_out)");
  if (o.num_samples < o.d_in) throw ParameterError("num_samples must be >= d_in");
  if (o.delta0_targets.size() != 1 && o.delta0_targets.size() != static_cast<std::size_t>(o.num_layers)) {
    throw ParameterError("delta0_targets must have 1 or num_layers entries");
  }
  if (o.label_noise < 0.0) throw ParameterError("label_noise must be >= 0");

  GeneratedTask out;
  const double s = o.alpha_scale / o.rank;
  out.task.scale = s;

  for (int n = 0; n < o.num_layers; ++n) {
    RngStream lr = rng.derive("layer").derive(static_cast<std::uint64_t>(n));
    LoraLayer layer;
    layer.rank = o.rank;
    layer.alpha_scale = o.alpha_scale;
    layer.W0 = gaussian_matrix(o.d_out, o.d_in, 1.0 / std::sqrt(o.d_in), lr);
    Matrix astar = gaussian_matrix(o.rank, o.d_in, 1.0 / std::sqrt(o.d_in), lr);
    Matrix bstar = gaussian_matrix(o.d_out, o.rank, 1.0 / std::sqrt(o.rank), lr);
    Matrix X = gaussian_matrix(o.d_in, o.num_samples, 1.0, lr);
    if (o.whiten_inputs) {
      const Svd d = svd(X);
      X = std::sqrt(static_cast<double>(o.num_samples)) * (d.U * d.V.transpose());
    }
    if (numerical_rank(X) < o.d_in) throw Error("generated inputs are rank deficient for layer " + std::to_string(n));

    const Matrix target_update = bstar * astar;
    const double full = frobenius_norm(target_update);
    double target = o.delta0_targets.size() == 1 ? o.delta0_targets[0] : o.delta0_targets[static_cast<std::size_t>(n)];
    if (o.delta0_relative) target *= full;
    if (target < 0.0 || target > full * (1.0 + 1e-12)) {
      throw ParameterError("delta0 target " + std::to_string(target) + " outside [0, " + std::to_string(full) +
                           "] for layer " + std::to_string(n));
    }
    const double theta = std::asin(std::min(1.0, target / full));

    // Misalignment of row span {cos(theta) q_i + sin(theta) p_i} against
    // row(A*) is ||B*A*|| sin(theta) when p_i is orthonormal and orthogonal to row(A*).
    const Matrix q = row_basis(astar);
    Matrix u = q;
    if (theta > 0.0) {
      if (o.d_in < 2 * o.rank) {
        throw ParameterError("delta0 target unreachable: need d_in >= 2r for layer " + std::to_string(n));
      }
      const Matrix g = gaussian_matrix(o.rank, o.d_in, 1.0, lr);
      const Matrix p = row_basis(g - g * q.transpose() * q);
      if (p.rows() < o.rank) throw Error("could not build orthogonal complement for layer " + std::to_string(n));
      u = std::cos(theta) * q + std::sin(theta) * p;
    }
    // Keep the singular values of a N(0, 1/d_in) draw, replace its row space.
    const Matrix a_rand = gaussian_matrix(o.rank, o.d_in, 1.0 / std::sqrt(o.d_in), lr);
    const Svd da = svd(a_rand);
    layer.A = da.U * da.S.asDiagonal() * u;
    layer.B = Matrix::Zero(o.d_out, o.rank);

    Matrix Y = (layer.W0 + s * target_update) * X;
    if (o.label_noise > 0.0) Y += gaussian_matrix(Y.rows(), Y.cols(), o.label_noise, lr);

    out.task.X.push_back(std::move(X));
    out.task.Y.push_back(std::move(Y));
    out.task.Bstar.push_back(std::move(bstar));
    out.task.Astar.push_back(std::move(astar));
    out.model.layers.push_back(std::move(layer));
    out.model.trainable.push_back({});
  }
  return out;
}

namespace {

void write_matrix(std::ostream& out, const std::string& name, const Matrix& m) {
  out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), m(i, j));
      if (j > 0) out << ' ';
      out.write(buf, end - buf);
    }
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in, const std::string& expected_name) {
  std::string tag;
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  if (!(in >> tag >> name >> rows >> cols) || tag != "matrix") throw Error("task file: expected matrix header");
  if (name != expected_name) throw Error("task file: expected matrix " + expected_name + ", found " + name);
  if (rows < 0 || cols < 0) throw Error("task file: negative shape for " + name);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!(in >> m.data()[i])) throw Error("task file: truncated values for " + name);
  }
  return m;
}

}  // namespace

void write_task(std::ostream& out, const ModelState& model, const SyntheticTask& task) {
  out << "aslora-task v1\n";
  const LoraLayer& first = model.layers.front();
  out << "layers " << model.num_layers() << " rank " << first.rank << " alpha_scale ";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), first.alpha_scale);
  out.write(buf, end - buf);
  out << '\n';
  for (int n = 0; n < model.num_layers(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    const std::string sfx = "." + std::to_string(n);
    write_matrix(out, "W0" + sfx, model.layers[i].W0);
    write_matrix(out, "A" + sfx, model.layers[i].A);
    write_matrix(out, "B" + sfx, model.layers[i].B);
    write_matrix(out, "X" + sfx, task.X[i]);
    write_matrix(out, "Y" + sfx, task.Y[i]);
    write_matrix(out, "Bstar" + sfx, task.Bstar[i]);
    write_matrix(out, "Astar" + sfx, task.Astar[i]);
  }
}

GeneratedTask read_task(std::istream& in) {
  std::string header;
  std::getline(in, header);
  if (header != "aslora-task v1") throw Error("task file: unsupported header '" + header + "'");
  std::string k1, k2, k3;
  int layers = 0;
  int rank = 0;
  double alpha = 0.0;
  if (!(in >> k1 >> layers >> k2 >> rank >> k3 >> alpha) || k1 != "layers" || k2 != "rank" || k3 != "alpha_scale") {
    throw Error("task file: malformed layer line");
  }
  if (layers < 1 || rank < 1) throw Error("task file: invalid layer count or rank");
  GeneratedTask g;
  g.task.scale = alpha / rank;
  for (int n = 0; n < layers; ++n) {
    const std::string sfx = "." + std::to_string(n);
    LoraLayer layer;
    layer.rank = rank;
    layer.alpha_scale = alpha;
    layer.W0 = read_matrix(in, "W0" + sfx);
    layer.A = read_matrix(in, "A" + sfx);
    layer.B = read_matrix(in, "B" + sfx);
    g.task.X.push_back(read_matrix(in, "X" + sfx));
    g.task.Y.push_back(read_matrix(in, "Y" + sfx));
    g.task.Bstar.push_back(read_matrix(in, "Bstar" + sfx));
    g.task.Astar.push_back(read_matrix(in, "Astar" + sfx));
    g.model.layers.push_back(std::move(layer));
    g.model.trainable.push_back({});
  }
  return g;
}

}  // namespace aslora
