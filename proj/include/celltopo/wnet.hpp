#pragma once

// Generator (two cascaded U-Nets) and discriminator definitions.

#include "celltopo/grid.hpp"
#include "celltopo/optim.hpp"
#include "celltopo/oracle.hpp"
#include "celltopo/patterns.hpp"
#include "celltopo/tape.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace celltopo {

struct NetConfig {
  int resolution = 256;  // R = 2^m
  int base_channels = 16;
  int channel_cap = 256;
  int disc_layers = 4;

  static NetConfig desk() { return {64, 16, 256, 4}; }
  /// Halvings from R down to 1 x 1.
  int depth() const;
  int generator_layer_count() const { return 4 * depth() + 2; }
  /// Channels after `level` halvings: min(base * 2^level, cap).
  int channels_at(int level) const;
  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

enum class LayerKind { kConv, kConvTranspose, kLinear };
enum class Activation { kNone, kRelu, kSigmoid };
enum class ModelRole { kGenerator, kDiscriminator };

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  Activation activation = Activation::kRelu;
  int in_channels = 0;  // including concatenated skip channels
  int out_channels = 0;
  int kernel = 4;
  ConvGeometry geom;
  int in_size = 0;      // spatial side of the main input
  int out_size = 0;
  int skip_from = -1;   // layer whose output is concatenated onto the input
  int input_from = -1;  // layer feeding this one; -1 is the model input
  Grid weights;
  Grid bias;
  double weight_scale = 1.0;  // applied to the stored weights at run time
};

struct Model {
  ModelRole role = ModelRole::kGenerator;
  NetConfig config;
  std::vector<Layer> layers;

  std::vector<ParamRef> params();
  std::size_t parameter_count() const;
  int conv_layer_count() const;
};

/// Input embedding, two U-Nets with mirrored skips on every level except the
/// bottleneck, and a sigmoid projection. Weights are N(0, 0.02), biases 0.
Model build_generator(const NetConfig& cfg, std::uint64_t seed);
/// Four 4x4 convolutions with strides 2, 2, 2, 1, then global average,
/// affine and sigmoid.
Model build_discriminator(const NetConfig& cfg, std::uint64_t seed);

/// Records the model on `tape`. With trainable set, parameters are
/// differentiable leaves returned through `param_vars` in params() order.
Var forward(const Model& model, Tape& tape, Var input, bool trainable = false,
            std::vector<Var>* param_vars = nullptr);
/// Evaluation pass without gradient bookkeeping.
Grid evaluate(const Model& model, const Grid& input);

struct ConditionInput {
  FrameConfig frame;
  int day = 0;
  double density = 0.0;
  Grid planes;  // 3 x R x R: topography, day / 30, density noise
};

/// Plane C is uniform on [0, 2 rho] for rho <= 0.5 and on [2 rho - 1, 1]
/// above, so its mean is rho.
ConditionInput assemble_input(const TopographyRaster& raster, int day, double density, std::uint64_t seed);

FluorescenceImage generate(const Model& generator, const ConditionInput& input);

}  // namespace celltopo
