#pragma once

#include <vector>

#include "tape.hpp"

namespace cfmn {

// Per-channel running statistics for batchnorm. `initialized` flips on the
// first train-mode pass; eval mode before that is an error.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    bool initialized = false;

    explicit BatchNormState(int channels = 0) {
        if (channels > 0) {
            running_mean = Tensor({channels});
            running_var = Tensor({channels}, real(1));
        }
    }
};

enum class BnMode { train, eval };

namespace ops {

// [MxK] x [KxN] -> [MxN]
Var matmul(Tape& t, Var a, Var b);

// 2-d transpose
Var transpose(Tape& t, Var a);

// per-row softmax with max subtraction, [RxC] -> [RxC]
Var row_softmax(Tape& t, Var m);

// Cross-correlation. input [CinxHxW] or [BxCinxHxW], kernel [CoutxCinxkxk],
// bias [Cout]. Output rank matches input rank. `where` names the block in
// shape/config errors.
Var conv2d(Tape& t, Var input, Var kernel, Var bias, int stride, int padding,
           const char* where = "conv2d");

// Gradient routes to the first (row-major) maximum of each window.
Var maxpool2d(Tape& t, Var input, int window, int stride, const char* where = "maxpool2d");

// input [BxCxHxW]; gamma/beta [C]. Train mode normalizes with batch
// statistics (biased variance) and updates `state` unless update_running is
// false; eval mode uses the running statistics.
Var batchnorm(Tape& t, Var input, Var gamma, Var beta, BatchNormState& state, BnMode mode,
              real eps = real(1e-5), real momentum = real(0.1), bool update_running = true,
              const char* where = "batchnorm");

Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);

// x [in] or [Bxin], w [outxin], b [out]
Var fully_connected(Tape& t, Var x, Var w, Var b);

// [C1xHxW] + [C2xHxW] -> [(C1+C2)xHxW]
Var concat_channels(Tape& t, Var a, Var b);

// mean over k same-shaped tensors
Var elementwise_mean(Tape& t, const std::vector<Var>& xs);

// k x [CxHxW] -> [kxCxHxW] and back
Var stack_batch(Tape& t, const std::vector<Var>& xs);
Var slice_batch(Tape& t, Var x, int index);

// [CxHxW] <-> [(H*W)xC]; position i = row*W + col
Var spatial_flatten(Tape& t, Var x);
Var spatial_unflatten(Tape& t, Var x, int h, int w);

// any shape -> [numel]
Var flatten(Tape& t, Var x);

// lambda*b + (1-lambda)*a; lambda == 0 must leave `a` untouched bit-for-bit
Var blend(Tape& t, Var a, Var b, real lambda);

// n scalar vars -> [n]
Var concat_scalars(Tape& t, const std::vector<Var>& xs);

// mean((pred - target)^2) over all elements -> scalar
Var mse(Tape& t, Var pred, const Tensor& target);

// sum(w .* x) -> scalar; used to reduce op outputs for gradient checks
Var weighted_sum(Tape& t, Var x, Tensor w);

}  // namespace ops

// Output spatial extent of a conv/pool along one axis; throws ConfigError
// naming `where` when non-positive.
int conv_out_extent(int in, int kernel, int stride, int padding, const char* where);

}  // namespace cfmn
