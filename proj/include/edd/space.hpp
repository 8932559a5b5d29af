#pragma once

#include <edd/tensor.hpp>

#include <string>
#include <vector>

namespace edd {

/// One entry of the candidate-operation menu: an MBConv with the given
/// depthwise kernel size and channel expansion ratio.
struct OpChoice {
  int kernel = 3;
  int expansion = 1;

  friend bool operator==(const OpChoice&, const OpChoice&) = default;
};

/// Weight bit-widths available to every operation, strictly increasing.
struct QuantLevels {
  std::vector<int> bits;

  int count() const { return static_cast<int>(bits.size()); }
  int operator[](int i) const { return bits.at(static_cast<std::size_t>(i)); }
  int index_of(int b) const;

  friend bool operator==(const QuantLevels&, const QuantLevels&) = default;
};

/// Geometry and menus of the searchable network.
struct SpaceConfig {
  int input_height = 16;
  int input_width = 16;
  int input_channels = 3;
  int stem_channels = 8;
  int num_classes = 4;
  /// Output channels of each block; its length is the block count N.
  std::vector<int> channels{8, 16, 16, 32};
  /// Depthwise stride of each block (1 or 2).
  std::vector<int> strides{1, 2, 1, 2};
  std::vector<OpChoice> ops{{3, 2}, {3, 4}, {5, 2}, {5, 4}};
  QuantLevels quant{{4, 8, 16}};
  /// One bit-width for the whole network (phi aliased across blocks/ops).
  bool shared_precision = false;

  int num_blocks() const { return static_cast<int>(channels.size()); }
  int num_ops() const { return static_cast<int>(ops.size()); }
  int num_quant() const { return quant.count(); }

  /// Throws ShapeError naming the offending block or field.
  void validate() const;

  friend bool operator==(const SpaceConfig&, const SpaceConfig&) = default;
};

/// Builds the menu k x ch in that nesting order (smaller kernel first).
std::vector<OpChoice> op_menu(const std::vector<int>& kernels, const std::vector<int>& expansions);

/// Concrete geometry of candidate m in block i.
struct OpSpec {
  int kernel = 3;
  int expansion = 1;
  int c_in = 1;
  int c_out = 1;
  int height = 1;  // input spatial size
  int width = 1;
  int stride = 1;

  int c_mid() const { return c_in * expansion; }
  int out_height() const;
  int out_width() const;
};

OpSpec op_spec(const SpaceConfig& space, int block, int op);

/// Spatial size entering each block, after the stride-1 stem.
std::pair<int, int> block_input_size(const SpaceConfig& space, int block);

enum class LayerKind { conv, dwconv, other };

/// One layer of an op as seen by the analytical latency model.
struct LayerGeometry {
  LayerKind kind = LayerKind::other;
  int kernel = 1;
  int height = 1;
  int width = 1;
  int c_in = 1;
  int c_out = 1;

  /// k^2 h w c_in c_out (conv), k^2 h w c_in (dwconv), h w c_in (other).
  double work() const;
};

/// The six latency-model layers of an MBConv op: expand conv1x1, affine+ReLU,
/// depthwise kxk, affine+ReLU, project conv1x1, affine+ReLU. Spatial sizes are
/// the output sizes of each layer.
std::vector<LayerGeometry> op_layers(const OpSpec& op);

/// Sum of layer work; latency at (pf, q) is q * 2^-pf * op_work.
double op_work(const OpSpec& op);

}  // namespace edd
