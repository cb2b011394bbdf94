#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "specstg/tensor.hpp"

namespace specstg {

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  double weight = 1.0;
};

// Undirected weighted sensor graph. Adjacency is exactly symmetric with a
// zero diagonal; degree holds its row sums.
class StgGraph {
 public:
  StgGraph(std::size_t num_nodes, std::vector<Edge> edges, Matrix adjacency);

  std::size_t num_nodes() const { return num_nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Matrix& adjacency() const { return adjacency_; }
  const Vector& degree() const { return degree_; }
  // Number of undirected edges with nonzero weight.
  std::size_t num_edges() const;

 private:
  std::size_t num_nodes_;
  std::vector<Edge> edges_;
  Matrix adjacency_;
  Vector degree_;
};

enum class EdgeWeighting {
  // weight 1 for every listed pair
  kBinary,
  // weight 1/distance, then min-max normalized into (0, 1]
  kInverseDistance,
};

struct GraphOptions {
  bool symmetrize = true;
  // When set, edge weights are read as distances and converted according to
  // `weighting`; when unset, weights are used as given.
  std::optional<EdgeWeighting> distance_mode;
};

StgGraph build_graph(const std::vector<Edge>& edges, std::size_t num_nodes,
                     const GraphOptions& options = {});

// L = I - D^{-1/2} A D^{-1/2}; isolated nodes get identity rows.
Matrix normalized_laplacian(const StgGraph& g);

struct FourierBasis {
  Matrix eigvecs;  // columns are eigenvectors, ascending eigenvalue order
  Vector eigvals;
  double lambda_max = 2.0;
  Vector scaled_eigvals;  // 2 * eigvals / lambda_max - 1

  std::size_t num_nodes() const { return static_cast<std::size_t>(eigvals.size()); }
};

struct JacobiOptions {
  double tolerance = 1e-12;  // off-diagonal Frobenius norm
  int max_sweeps = 100;
};

// Cyclic Jacobi eigensolver for a symmetric matrix. Each eigenvector's
// largest-magnitude component is made positive (lowest index wins ties).
FourierBasis eigendecompose(const Matrix& laplacian, const JacobiOptions& options = {});

// Convenience: graph -> Laplacian -> basis.
FourierBasis fourier_basis(const StgGraph& g);

// X~ = U^T X for an N x T signal.
Matrix fourier_transform(const FourierBasis& basis, const Matrix& x);
// X = U X~.
Matrix fourier_reconstruct(const FourierBasis& basis, const Matrix& xt);

// N x D_x x T signal, stored as one N x T slice per variable.
using MultiSignal = std::vector<Matrix>;
MultiSignal fourier_transform_multivariate(const FourierBasis& basis, const MultiSignal& x);
MultiSignal fourier_reconstruct_multivariate(const FourierBasis& basis, const MultiSignal& xt);

// Distance list CSV with header `from,to,cost`, zero-based node ids.
std::vector<Edge> read_distance_csv(const std::string& path);
void write_adjacency_csv(const std::string& path, const StgGraph& g);

}  // namespace specstg
