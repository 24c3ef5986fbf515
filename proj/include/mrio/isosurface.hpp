#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrio/geom3.hpp"
#include "mrio/mesh.hpp"

namespace mrio {

// Batch occupancy evaluation over points in the unit cube.
using FieldFn = std::function<void(const std::vector<Vec3>&, std::vector<double>&)>;

// Lattice of occupancy values over the unit cube: `res` cells per axis,
// (res+1)^3 vertex values, iso level tau. Inside means value > tau.
struct OccupancyGrid {
    size_t res = 0;
    std::vector<double> values;  // index (ix*(res+1)+iy)*(res+1)+iz
    double tau = 0.5;

    size_t nv() const { return res + 1; }
    double at(size_t ix, size_t iy, size_t iz) const {
        return values[(ix * nv() + iy) * nv() + iz];
    }
    Vec3 position(size_t ix, size_t iy, size_t iz) const {
        double h = 1.0 / double(res);
        return {double(ix) * h, double(iy) * h, double(iz) * h};
    }
    void validate() const;
};

// Dense decode at every lattice vertex.
OccupancyGrid evaluate_grid(const FieldFn& field, size_t res, double tau = 0.5);

// Multiresolution isosurface evaluation: decode the coarse lattice, then
// refine only cells whose corners straddle tau until target_res; untouched
// fine points inherit the sign of their governing coarse point. Requires
// target_res = coarse_res * 2^k. When the field's crossing band is resolved
// at the coarse level the result marches identically to dense evaluation.
OccupancyGrid mise(const FieldFn& field, size_t coarse_res, size_t target_res, double tau = 0.5,
                   size_t* evaluated_points = nullptr);

// Marching cubes over the 256 corner configurations; ambiguous faces are
// resolved with the bilinear saddle (asymptotic) test so adjacent cells always
// agree and complementing the field flips orientations only. Edge vertices are
// deduplicated by global edge identity.
TriangleMesh marching_cubes(const OccupancyGrid& grid);

// mise + marching_cubes.
TriangleMesh extract_mesh(const FieldFn& field, size_t coarse_res, size_t target_res,
                          double tau = 0.5);

}  // namespace mrio
