#pragma once

#include <cstddef>
#include <ostream>
#include <vector>

#include "snowfuse/image_io.hpp"
#include "snowfuse/tensor.hpp"

namespace snowfuse {

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
/// vectors[k] is the unit eigenvector for values[k].
struct SymmetricEigen {
    std::vector<double> values;
    std::vector<std::vector<double>> vectors;
};

/// Cyclic Jacobi rotations on a row-major n x n symmetric matrix. Throws
/// std::invalid_argument when the matrix is not square or not symmetric.
SymmetricEigen jacobi_eigen(const std::vector<double>& matrix, std::size_t n);

struct PcaPoint {
    double x = 0.0;
    double y = 0.0;
    bool object = false;
};

struct PcaClusterResult {
    double object_distance = 0.0;
    double background_distance = 0.0;
    std::vector<double> eigenvalues;  // all C, descending
    std::vector<PcaPoint> points;     // one per pixel, row-major
};

/// Treats each pixel of a C x H x W feature map as a C-vector, projects the
/// mean-centred vectors onto the top two covariance eigenvectors, and reports
/// each cluster's mean Euclidean distance to its own 2-D centroid. Requires
/// C >= 2 and a mask with pixels on both sides. A zero covariance gives zero
/// projections and distances.
PcaClusterResult pca_cluster_distance(const Tensor& features, const BinaryMap& object_mask);

/// "x,y,object" header, one row per pixel.
void write_pca_csv(std::ostream& out, const PcaClusterResult& result);

}  // namespace snowfuse
