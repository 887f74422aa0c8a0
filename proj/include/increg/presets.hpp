#pragma once

#include <cstddef>
#include <string>

#include "increg/error.hpp"
#include "increg/network.hpp"

namespace increg {

/// Two 3x3 conv layers with 18 and 27 lowered columns, for desk-scale pruning runs
/// on 2x8x8 synthetic inputs.
inline Architecture toy_architecture(Shape3 input = {2, 8, 8}, std::size_t classes = 4) {
  return {input,
          {LayerSpec::conv(3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv(6, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::fully_connected(classes), LayerSpec::softmax_xent()}};
}

/// Three 5x5 conv layers (32-32-64 filters) and one fully connected classifier for
/// 3x32x32 inputs. conv2 and conv3 lower to 800 columns each; conv1 (75 columns)
/// is exempt from pruning.
inline Architecture convnet_architecture(std::size_t classes = 10, Shape3 input = {3, 32, 32}) {
  return {input,
          {LayerSpec::conv(32, 5, 1, 2, /*exempt=*/true), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv(32, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv(64, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::fully_connected(classes), LayerSpec::softmax_xent()}};
}

inline Architecture preset_architecture(const std::string& name, Shape3 input, std::size_t classes) {
  if (name == "toy") return toy_architecture(input, classes);
  if (name == "convnet") return convnet_architecture(classes, input);
  throw ConfigError("unknown architecture preset '" + name + "'");
}

}  // namespace increg
