#include <edd/space.hpp>

#include <edd/ops.hpp>

#include <algorithm>
#include <tuple>

namespace edd {

int QuantLevels::index_of(int b) const {
  auto it = std::find(bits.begin(), bits.end(), b);
  if (it == bits.end()) return -1;
  return static_cast<int>(it - bits.begin());
}

void SpaceConfig::validate() const {
  auto fail = [](const std::string& what) { throw ShapeError("space: " + what); };
  if (input_height < 1 || input_width < 1 || input_channels < 1) fail("input size must be positive");
  if (stem_channels < 1) fail("stem_channels must be positive");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (channels.empty()) fail("at least one block is required");
  if (strides.size() != channels.size()) {
    fail("strides lists " + std::to_string(strides.size()) + " blocks but channels lists " +
         std::to_string(channels.size()));
  }
  if (ops.empty()) fail("op menu is empty");
  for (std::size_t m = 0; m < ops.size(); ++m) {
    if (ops[m].kernel < 1 || ops[m].kernel % 2 == 0) {
      fail("op " + std::to_string(m) + ": kernel must be odd and positive");
    }
    if (ops[m].expansion < 1) fail("op " + std::to_string(m) + ": expansion must be positive");
  }
  if (quant.bits.empty()) fail("quant levels are empty");
  for (std::size_t q = 0; q < quant.bits.size(); ++q) {
    if (quant.bits[q] < 2) fail("quant level " + std::to_string(quant.bits[q]) + " below 2 bits");
    if (q > 0 && quant.bits[q] <= quant.bits[q - 1]) fail("quant levels must strictly increase");
  }
  int h = input_height, w = input_width;
  for (int i = 0; i < num_blocks(); ++i) {
    const std::string tag = "block " + std::to_string(i) + ": ";
    if (channels[static_cast<std::size_t>(i)] < 1) fail(tag + "channels must be positive");
    const int s = strides[static_cast<std::size_t>(i)];
    if (s != 1 && s != 2) fail(tag + "stride must be 1 or 2");
    if (s == 2 && (h < 2 || w < 2)) {
      fail(tag + "cannot downsample " + std::to_string(h) + "x" + std::to_string(w) + " input");
    }
    h = static_cast<int>(conv_out_size(h, 1, s));
    w = static_cast<int>(conv_out_size(w, 1, s));
  }
}

std::vector<OpChoice> op_menu(const std::vector<int>& kernels, const std::vector<int>& expansions) {
  std::vector<OpChoice> menu;
  for (int k : kernels) {
    for (int ch : expansions) menu.push_back({k, ch});
  }
  return menu;
}

int OpSpec::out_height() const { return static_cast<int>(conv_out_size(height, kernel, stride)); }
int OpSpec::out_width() const { return static_cast<int>(conv_out_size(width, kernel, stride)); }

std::pair<int, int> block_input_size(const SpaceConfig& space, int block) {
  int h = space.input_height, w = space.input_width;
  for (int i = 0; i < block; ++i) {
    const int s = space.strides.at(static_cast<std::size_t>(i));
    h = static_cast<int>(conv_out_size(h, 1, s));
    w = static_cast<int>(conv_out_size(w, 1, s));
  }
  return {h, w};
}

OpSpec op_spec(const SpaceConfig& space, int block, int op) {
  if (block < 0 || block >= space.num_blocks() || op < 0 || op >= space.num_ops()) {
    throw ShapeError("op_spec: (block " + std::to_string(block) + ", op " + std::to_string(op) +
                     ") outside " + std::to_string(space.num_blocks()) + "x" +
                     std::to_string(space.num_ops()) + " space");
  }
  OpSpec s;
  const OpChoice& choice = space.ops[static_cast<std::size_t>(op)];
  s.kernel = choice.kernel;
  s.expansion = choice.expansion;
  s.c_in = block == 0 ? space.stem_channels : space.channels[static_cast<std::size_t>(block - 1)];
  s.c_out = space.channels[static_cast<std::size_t>(block)];
  std::tie(s.height, s.width) = block_input_size(space, block);
  s.stride = space.strides[static_cast<std::size_t>(block)];
  return s;
}

double LayerGeometry::work() const {
  const double hw = static_cast<double>(height) * width;
  switch (kind) {
    case LayerKind::conv:
      return static_cast<double>(kernel) * kernel * hw * c_in * c_out;
    case LayerKind::dwconv:
      return static_cast<double>(kernel) * kernel * hw * c_in;
    case LayerKind::other:
      break;
  }
  return hw * c_in;
}

std::vector<LayerGeometry> op_layers(const OpSpec& op) {
  const int mid = op.c_mid();
  const int ho = op.out_height(), wo = op.out_width();
  return {
      {LayerKind::conv, 1, op.height, op.width, op.c_in, mid},
      {LayerKind::other, 1, op.height, op.width, mid, mid},
      {LayerKind::dwconv, op.kernel, ho, wo, mid, mid},
      {LayerKind::other, 1, ho, wo, mid, mid},
      {LayerKind::conv, 1, ho, wo, mid, op.c_out},
      {LayerKind::other, 1, ho, wo, op.c_out, op.c_out},
  };
}

double op_work(const OpSpec& op) {
  double total = 0;
  for (const auto& l : op_layers(op)) total += l.work();
  return total;
}

}  // namespace edd
