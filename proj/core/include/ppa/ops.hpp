// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "ppa/tape.hpp"

namespace ppa {

// Differentiable operations. Matrices are rank-2, row-major; "rows" of a
// tensor are all leading dimensions flattened, and row-wise operations act
// on the last dimension. Every op registers its gradient rule on the tape of
// its operands.

inline constexpr float kLayerNormEps = 1e-12f;

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
/// Adds a length-n vector to every row of an [m, n] matrix.
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var x, float factor);
Var relu(Var x);
/// Exact (erf) GELU.
Var gelu(Var x);
Var softmax(Var x, int axis);
Var layer_norm(Var x, Var gain, Var bias, float eps = kLayerNormEps);
/// Row-wise L2 normalization; throws DegenerateInputError on a zero row.
Var l2_normalize(Var x);
/// -log softmax(logits)[target] for a single row of logits, as shape [1].
Var cross_entropy(Var logits, int target);
/// Mean cross entropy over rows of [m, c] logits.
Var cross_entropy_rows(Var logits, std::span<const int> targets);
/// Rows of a [V, d] table selected by id.
Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var x, std::span<const int> rows);
Var concat_cols(Var a, Var b);
/// Dot product of matching rows: [m, n] x [m, n] -> [m, 1].
Var rowwise_dot(Var a, Var b);
Var sum(Var x);
Var mean(Var x);
/// Mean over each packed segment of rows; offsets has segments + 1 entries.
Var segment_mean(Var x, std::span<const int> offsets);

/// Scaled dot-product self-attention over packed sequences.
///
/// q, k and v are [T, d] with T the total token count of all sequences in
/// the pack; offsets (size B + 1) delimits each sequence. Tokens only attend
/// within their own sequence. Heads split d into equal contiguous slices.
Var multi_head_attention(Var q, Var k, Var v, std::span<const int> offsets, int heads);

namespace kernels {
/// C[m, n] (+)= A[m, k] * B[k, n]. Each output row depends only on the
/// matching row of A, with a fixed summation order.
void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
/// Dot product of two length-n float arrays with a fixed summation order.
float dot(const float* a, const float* b, int n);
/// C[k, n] += A[m, k]^T * B[m, n].
void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n);
/// C[m, k] += A[m, n] * B[k, n]^T.
void gemm_nt_acc(const float* a, const float* b, float* c, int m, int n, int k);
}  // namespace kernels

}  // namespace ppa
