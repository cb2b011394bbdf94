#include "specstg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace specstg {

StgGraph::StgGraph(std::size_t num_nodes, std::vector<Edge> edges, Matrix adjacency)
    : num_nodes_(num_nodes), edges_(std::move(edges)), adjacency_(std::move(adjacency)) {
  const auto n = static_cast<Eigen::Index>(num_nodes_);
  if (adjacency_.rows() != n || adjacency_.cols() != n) {
    throw ShapeError("adjacency must be " + std::to_string(n) + " x " + std::to_string(n));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (adjacency_(i, i) != 0.0) throw InputError("adjacency diagonal must be zero");
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (adjacency_(i, j) != adjacency_(j, i)) throw InputError("adjacency must be symmetric");
    }
  }
  degree_ = adjacency_.rowwise().sum();
}

std::size_t StgGraph::num_edges() const {
  std::size_t count = 0;
  const auto n = adjacency_.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) count += adjacency_(i, j) != 0.0 ? 1 : 0;
  }
  return count;
}

StgGraph build_graph(const std::vector<Edge>& edges, std::size_t num_nodes,
                     const GraphOptions& options) {
  if (num_nodes == 0) throw InputError("graph needs at least one node");
  for (const auto& e : edges) {
    if (e.from >= num_nodes || e.to >= num_nodes) {
      throw InputError("edge (" + std::to_string(e.from) + ", " + std::to_string(e.to) +
                       ") out of range for " + std::to_string(num_nodes) + " nodes");
    }
    if (!std::isfinite(e.weight) || e.weight < 0.0) {
      throw InputError("edge (" + std::to_string(e.from) + ", " + std::to_string(e.to) +
                       ") has invalid weight " + std::to_string(e.weight));
    }
    if (e.from == e.to) throw InputError("self-loop at node " + std::to_string(e.from));
  }

  std::vector<double> weights(edges.size());
  if (!options.distance_mode) {
    std::transform(edges.begin(), edges.end(), weights.begin(),
                   [](const Edge& e) { return e.weight; });
  } else if (*options.distance_mode == EdgeWeighting::kBinary) {
    std::fill(weights.begin(), weights.end(), 1.0);
  } else {
    double max_w = 0.0;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      if (edges[i].weight <= 0.0) {
        throw InputError("inverse-distance weighting needs positive distances");
      }
      weights[i] = 1.0 / edges[i].weight;
      max_w = std::max(max_w, weights[i]);
    }
    for (auto& w : weights) w /= max_w;
  }

  const auto n = static_cast<Eigen::Index>(num_nodes);
  Matrix a = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(edges[i].from);
    const auto c = static_cast<Eigen::Index>(edges[i].to);
    a(r, c) = std::max(a(r, c), weights[i]);
  }
  if (options.symmetrize) {
    Matrix at = a.transpose();
    a = a.cwiseMax(at);
  } else if ((a - a.transpose()).cwiseAbs().maxCoeff() > 0.0) {
    throw InputError("edge list is not symmetric and symmetrize is off");
  }
  return StgGraph(num_nodes, edges, std::move(a));
}

Matrix normalized_laplacian(const StgGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Vector inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = g.degree()(i);
    inv_sqrt(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Matrix l = -(inv_sqrt.asDiagonal() * g.adjacency() * inv_sqrt.asDiagonal());
  l.diagonal().array() += 1.0;
  // Force exact symmetry; the two products above can differ in the last bit.
  Matrix sym = 0.5 * (l + l.transpose());
  return sym;
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  const auto n = a.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) s += a(i, j) * a(i, j);
    }
  }
  return std::sqrt(s);
}

}  // namespace

FourierBasis eigendecompose(const Matrix& laplacian, const JacobiOptions& options) {
  const auto n = laplacian.rows();
  if (laplacian.cols() != n || n == 0) throw ShapeError("eigendecompose needs a square matrix");
  if (!laplacian.allFinite()) throw InputError("eigendecompose: non-finite entries");
  if ((laplacian - laplacian.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw InputError("eigendecompose: input is not symmetric within 1e-10");
  }

  Matrix a = 0.5 * (laplacian + laplacian.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double threshold = options.tolerance * std::max(1.0, a.norm());

  int sweep = 0;
  for (; sweep < options.max_sweeps; ++sweep) {
    if (off_diagonal_norm(a) <= threshold) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (off_diagonal_norm(a) > threshold) {
    throw NumericError("Jacobi eigensolver did not converge after " + std::to_string(sweep) +
                       " sweeps");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });

  FourierBasis basis;
  basis.eigvecs.resize(n, n);
  basis.eigvals.resize(n);
  for (Eigen::Index col = 0; col < n; ++col) {
    const auto src = order[static_cast<std::size_t>(col)];
    basis.eigvals(col) = a(src, src);
    Vector vec = v.col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index k = 1; k < n; ++k) {
      // Near-equal magnitudes count as a tie so the lowest index wins.
      if (std::abs(vec(k)) > std::abs(vec(arg)) + 1e-12) arg = k;
    }
    if (vec(arg) < 0.0) vec = -vec;
    basis.eigvecs.col(col) = vec;
  }
  basis.lambda_max = basis.eigvals(n - 1);
  if (basis.lambda_max < 1e-12) basis.lambda_max = 2.0;
  basis.scaled_eigvals = (2.0 * basis.eigvals.array() / basis.lambda_max - 1.0).matrix();
  return basis;
}

FourierBasis fourier_basis(const StgGraph& g) { return eigendecompose(normalized_laplacian(g)); }

Matrix fourier_transform(const FourierBasis& basis, const Matrix& x) {
  if (static_cast<std::size_t>(x.rows()) != basis.num_nodes()) {
    throw ShapeError("fourier_transform: signal has " + std::to_string(x.rows()) +
                     " rows, basis has " + std::to_string(basis.num_nodes()));
  }
  return basis.eigvecs.transpose() * x;
}

Matrix fourier_reconstruct(const FourierBasis& basis, const Matrix& xt) {
  if (static_cast<std::size_t>(xt.rows()) != basis.num_nodes()) {
    throw ShapeError("fourier_reconstruct: signal has " + std::to_string(xt.rows()) +
                     " rows, basis has " + std::to_string(basis.num_nodes()));
  }
  return basis.eigvecs * xt;
}

MultiSignal fourier_transform_multivariate(const FourierBasis& basis, const MultiSignal& x) {
  if (x.empty()) throw ShapeError("multivariate signal needs at least one variable");
  MultiSignal out;
  out.reserve(x.size());
  for (const auto& slice : x) {
    if (slice.cols() != x.front().cols()) throw ShapeError("variables differ in length");
    out.push_back(fourier_transform(basis, slice));
  }
  return out;
}

MultiSignal fourier_reconstruct_multivariate(const FourierBasis& basis, const MultiSignal& xt) {
  if (xt.empty()) throw ShapeError("multivariate signal needs at least one variable");
  MultiSignal out;
  out.reserve(xt.size());
  for (const auto& slice : xt) {
    if (slice.cols() != xt.front().cols()) throw ShapeError("variables differ in length");
    out.push_back(fourier_reconstruct(basis, slice));
  }
  return out;
}

std::vector<Edge> read_distance_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open distance file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty distance file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "from,to,cost") {
    throw FormatError(path + ": expected header 'from,to,cost', got '" + line + "'");
  }
  std::vector<Edge> edges;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f, t, c;
    if (!std::getline(ss, f, ',') || !std::getline(ss, t, ',') || !std::getline(ss, c)) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    }
    try {
      const long from = std::stol(f);
      const long to = std::stol(t);
      const double cost = std::stod(c);
      if (from < 0 || to < 0) throw FormatError("negative node id");
      if (!(cost > 0.0) || !std::isfinite(cost)) throw FormatError("cost must be positive");
      edges.push_back({static_cast<std::size_t>(from), static_cast<std::size_t>(to), cost});
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": cannot parse '" + line + "'");
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return edges;
}

void write_adjacency_csv(const std::string& path, const StgGraph& g) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out.precision(17);
  const auto& a = g.adjacency();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (j) out << ',';
      out << a(i, j);
    }
    out << '\n';
  }
}

}  // namespace specstg
