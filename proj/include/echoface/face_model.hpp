#pragma once

// Linear blendshape face model with a single jaw joint. Expression parameters
// are rows u = (psi, jaw) with psi basis coefficients and jaw an axis-angle
// vector; decode produces vertex positions
//   V_i = (1 - w_i) * P_i + w_i * (R(jaw) * (P_i - pivot) + pivot),
//   P   = template + basis * psi,
// computed in the rearranged form P_i + w_i * (R - I)(P_i - pivot) so the
// zero-parameter case reproduces the template bitwise.
//
// Mesh sequences are stored as T x (3 n_v) matrices, frame rows flattened
// vertex-major: [v0x v0y v0z v1x ...]. basis row 3i+c addresses vertex i,
// coordinate c in the same layout.

#include <vector>

#include "echoface/ad.hpp"
#include "echoface/common.hpp"

namespace echoface {

struct FaceTemplate {
  Mat vertices;                               // n_v x 3
  Mat basis;                                  // 3 n_v x psi_dim
  Vec jaw_weights;                            // n_v, in [0, 1]
  Eigen::Vector3d jaw_pivot;
  Eigen::Matrix<int, Eigen::Dynamic, 3> faces;
  std::vector<int> mouth_idx, lip_idx, upper_idx;
  int upper_lip_mid = -1, lower_lip_mid = -1;
  // psi column layout: [0, n_mouth_channels) drive mouth vertices,
  // [n_mouth_channels, n_mouth_channels + n_upper_channels) drive upper-face
  // vertices, the rest drive the remaining region.
  int n_mouth_channels = 0;
  int n_upper_channels = 0;

  int n_v() const { return static_cast<int>(vertices.rows()); }
  int psi_dim() const { return static_cast<int>(basis.cols()); }
  int param_dim() const { return psi_dim() + 3; }

  void validate() const;
};

// Rodrigues rotation; series expansion below ||jaw|| = 1e-6 keeps it exact
// and differentiable at zero.
Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& jaw);

// Single frame: params is 1 x (psi_dim + 3); returns n_v x 3.
Mat decode(const FaceTemplate& tpl, const RowVec& params);

// T x (psi_dim + 3) -> T x (3 n_v).
Mat decode_sequence(const FaceTemplate& tpl, const Mat& seq);

// Differentiable decode for training graphs. Does not enforce the ||jaw|| < pi
// type invariant: intermediate training iterates may violate it while the
// math stays well defined. tpl must outlive the tape.
ad::Var decode_sequence_var(ad::Tape& tape, const FaceTemplate& tpl, ad::Var seq);

// Columns of the flattened mesh layout covered by a vertex index set.
std::vector<int> flat_coord_indices(const std::vector<int>& vertex_idx);

// Deterministic procedural template: clustered mouth region (lip subset with
// designated midpoints), upper-face region, jaw weights rising toward the
// chin, and a psi basis whose channel groups touch disjoint vertex regions.
FaceTemplate make_synthetic_template(std::uint64_t seed, int n_v, int psi_dim);

}  // namespace echoface
