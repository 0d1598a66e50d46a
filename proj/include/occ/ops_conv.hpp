#pragma once

#include <array>

#include "occ/tensor.hpp"

namespace occ {

using Int3 = std::array<int, 3>;

// x [Cin,H,W], w [Cout,Cin,kh,kw], bias [Cout] (optional, pass undefined).
// Cross-correlation; out dims = floor((H+2p-k)/s)+1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

// x [Cin,X,Y,Z], w [Cout,Cin,kx,ky,kz]; per-axis stride/padding.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride, Int3 padding);

// x [Cin,X,Y,Z], w [Cin,Cout,kx,ky,kz]; out dim = (in-1)*s - 2p + k, or
// out_size when given (strided convs map several input sizes to one output
// size, so the adjoint's target dims are not always recoverable).
// Exact linear adjoint of conv3d with the same stride/padding when given the
// same weight buffer reinterpreted as [Cout_conv, Cin_conv, ...].
Tensor conv3d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride,
                        Int3 padding, Int3 out_size = {0, 0, 0});

}  // namespace occ
