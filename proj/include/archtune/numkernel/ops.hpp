#pragma once

#include <span>
#include <utility>
#include <vector>

#include "archtune/numkernel/tape.hpp"

// Differentiable primitives. Every op reads its operands from the tape,
// computes the forward value, and records a closure that accumulates input
// gradients during Tape::backward.
namespace archtune::nk::ops {

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
/// Weighted sum of scalars: sum_i w_i * s_i.
Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights);

Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var tanh(Tape& t, Var a);

/// input [N,Din], weight [Dout,Din], optional bias [Dout] -> [N,Dout].
Var linear(Tape& t, Var input, Var weight, Var bias);
Var linear(Tape& t, Var input, Var weight);

/// Cross-correlation. input [N,C,H,W], kernel [Co,C,k,k] -> [N,Co,H',W'] with
/// H' = (H + 2*padding - k) / stride + 1.
Var conv2d(Tape& t, Var input, Var kernel, int stride, int padding);

/// Per-channel normalization of [N,C,H,W] with batch statistics. The biased
/// batch mean and variance are written to the out parameters when non-null.
Var batch_norm_train(Tape& t, Var input, Var gamma, Var beta, double eps, NdArray* batch_mean = nullptr,
                     NdArray* batch_var = nullptr);
/// Per-channel affine normalization with fixed statistics.
Var batch_norm_eval(Tape& t, Var input, Var gamma, Var beta, const NdArray& mean, const NdArray& var, double eps);

/// [N,C,H,W] -> [N,C].
Var global_avg_pool(Tape& t, Var input);

Var softmax(Tape& t, Var logits);
Var log_softmax(Tape& t, Var logits);
/// Mean negative log-likelihood of `labels` under softmax(logits); [N,K] -> scalar.
Var cross_entropy(Tape& t, Var logits, std::span<const int> labels);

/// Columns [start, start+len) of a [N,D] array.
Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t len);
/// Row `row` of a [V,E] table as [1,E].
Var gather_row(Tape& t, Var table, std::size_t row);
/// Element (r, c) of a rank-2 array as a scalar.
Var pick(Tape& t, Var a, std::size_t r, std::size_t c);

struct LstmWeights {
    Var w_ih;  // [4H, E]
    Var w_hh;  // [4H, H]
    Var bias;  // [4H], gate order: input, forget, cell, output
};

/// Standard LSTM cell:
///   i = s(.), f = s(.), g = tanh(.), o = s(.)
///   c' = f*c + i*g,  h' = o*tanh(c')
std::pair<Var, Var> lstm_cell(Tape& t, Var x, Var h, Var c, const LstmWeights& w);

/// Forward-only row softmax, max-subtracted.
NdArray softmax_rows(const NdArray& logits);

}  // namespace archtune::nk::ops
