#pragma once

#include <cstdint>
#include <vector>

#include "occ/tensor.hpp"

namespace occ {

// vol [C,X,Y,Z], points [P,3] with normalized coords in [0,1]^3 mapped onto
// the node lattice (u=0 -> index 0, u=1 -> index X-1). Returns [C,P]; an
// out-of-bounds point yields zeros and valid[p]=0. Differentiable w.r.t. vol
// and points.
Tensor trilinear_sample(const Tensor& vol, const Tensor& points,
                        std::vector<uint8_t>* valid = nullptr);

// Sum-pool point features into voxels. feats [C,P]; voxel_of[p] is the flat
// destination cell or -1 for out-of-range (dropped). Returns [C,ncells].
Tensor scatter_sum(const Tensor& feats, const std::vector<int64_t>& voxel_of, int64_t ncells);

// Multi-head deformable read from a 2D feature map.
// value [C,H,W], points [Nq,heads,R,2] normalized (u->W-1 lattice, v->H-1),
// weights [Nq,heads,R]. Channel c is read by head c/(C/heads):
//   out[q,c] = sum_r weights[q,h(c),r] * bilerp(value[c], points[q,h(c),r]).
// Out-of-bounds samples contribute zero.
Tensor deform_attend_2d(const Tensor& value, const Tensor& points, const Tensor& weights);

// 3D counterpart. value [C,X,Y,Z], points [Nq,heads,R,3], weights [Nq,heads,R].
Tensor deform_attend_3d(const Tensor& value, const Tensor& points, const Tensor& weights);

// Running count of (query, head, ref) sample evaluations made by the two
// deformable ops; the attention-cost proxy used by scaling checks.
int64_t deform_sample_op_count();
void reset_deform_sample_op_count();

}  // namespace occ
