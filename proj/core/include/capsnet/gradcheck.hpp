#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "capsnet/decoder.hpp"
#include "capsnet/model.hpp"
#include "capsnet/tensor.hpp"

namespace capsnet::gradcheck {

struct Options {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Blocks smaller than this are checked at every coordinate; larger ones
  /// at `sampled_coords` seeded random coordinates.
  std::size_t full_block_limit = 10000;
  std::size_t sampled_coords = 500;
  std::uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-8;
};

/// A parameter tensor the loss reads, and the analytic gradient to test.
struct Block {
  std::string name;
  Tensor* value;
  const Tensor* analytic;
};

struct BlockResult {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

struct Result {
  std::vector<BlockResult> blocks;
  bool passed = true;

  double max_rel_error() const;
  void merge(const Result& other, const std::string& prefix);
  std::string render() const;
};

/// Central differences (f(x+h) - f(x-h)) / 2h of `loss` against each
/// block's analytic gradient. `loss` must only read the block tensors; it is
/// evaluated twice up front and a mismatch raises std::runtime_error.
Result check(const std::function<double()>& loss, std::span<const Block> blocks, const Options& options);

/// The desk-scale network: 8x8 inputs, 3x3 convolutions, 4 then 2 filters
/// giving P = 4 primary capsules of dimension 2, 3 classes, 2 routing
/// iterations, with a small decoder attached.
ModelConfig desk_model_config();
DecoderConfig desk_decoder_config();

/// Every parameter of model + decoder and the input batch, under the final
/// loss, in training mode with a frozen dropout mask.
Result check_full_graph(std::uint64_t seed, Options options);

/// Conv, linear, activations, softmax, norm, dropout, squash, prediction
/// vectors, routing, masking + decoder and the margin loss, each on its own.
Result check_components(std::uint64_t seed, const Options& options);

}  // namespace capsnet::gradcheck
