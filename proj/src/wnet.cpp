#include "celltopo/wnet.hpp"

#include "celltopo/random.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace celltopo {

int NetConfig::depth() const {
  int m = 0;
  while ((1 << m) < resolution) ++m;
  return m;
}

int NetConfig::channels_at(int level) const {
  long c = base_channels;
  for (int i = 0; i < level && c < channel_cap; ++i) c *= 2;
  return static_cast<int>(std::min<long>(c, channel_cap));
}

void NetConfig::validate() const {
  if (resolution < 16 || (resolution & (resolution - 1)) != 0) {
    throw std::invalid_argument("network resolution must be a power of two >= 16, got " + std::to_string(resolution));
  }
  if (base_channels < 1 || channel_cap < base_channels) {
    throw std::invalid_argument("base_channels must be >= 1 and channel_cap >= base_channels");
  }
  if (disc_layers != 4) throw std::invalid_argument("the discriminator has exactly 4 convolution layers");
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  for (Layer& l : layers) {
    out.push_back({l.name + ".weights", &l.weights});
    out.push_back({l.name + ".bias", &l.bias});
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

int Model::conv_layer_count() const {
  return static_cast<int>(std::count_if(layers.begin(), layers.end(), [](const Layer& l) { return l.kind != LayerKind::kLinear; }));
}

namespace {

// Inputs feeding one output value; a stride-2 transposed convolution sees a
// quarter of its kernel taps per output pixel.
double fan_in(const Layer& l) {
  switch (l.kind) {
    case LayerKind::kConv: return static_cast<double>(l.in_channels) * l.kernel * l.kernel;
    case LayerKind::kConvTranspose: return static_cast<double>(l.in_channels) * l.kernel * l.kernel / 4.0;
    case LayerKind::kLinear: break;
  }
  return static_cast<double>(l.in_channels);
}

// Unit-normal stored weights with a He-style constant applied at run time, so
// Adam's step size is the same relative change in every layer.
void init_weights(Layer& l, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : l.weights.values()) v = normal(rng);
  l.bias = Grid({l.out_channels});
  l.weight_scale = std::sqrt((l.activation == Activation::kRelu ? 2.0 : 1.0) / fan_in(l));
}

// Appends a layer, checks its wiring against earlier layers and returns its index.
int add_layer(Model& m, Layer l, Rng& rng) {
  const int index = static_cast<int>(m.layers.size());
  if (l.input_from >= index || l.skip_from >= index) throw std::logic_error("layer wired to a later layer");
  const int main_channels = l.input_from < 0 ? l.in_channels : m.layers[static_cast<std::size_t>(l.input_from)].out_channels;
  int channels = main_channels;
  if (l.input_from >= 0 && m.layers[static_cast<std::size_t>(l.input_from)].out_size != l.in_size) {
    throw std::logic_error(l.name + ": input size mismatch");
  }
  if (l.skip_from >= 0) {
    const Layer& s = m.layers[static_cast<std::size_t>(l.skip_from)];
    if (s.out_size != l.in_size) throw std::logic_error(l.name + ": skip from " + s.name + " has a different spatial size");
    channels += s.out_channels;
  }
  if (l.input_from >= 0 || l.skip_from >= 0) l.in_channels = channels;
  switch (l.kind) {
    case LayerKind::kConv:
      l.out_size = l.geom.output_extent(l.in_size, l.kernel);
      l.weights = Grid({l.out_channels, l.in_channels, l.kernel, l.kernel});
      break;
    case LayerKind::kConvTranspose:
      l.out_size = l.geom.transposed_extent(l.in_size, l.kernel);
      l.weights = Grid({l.in_channels, l.out_channels, l.kernel, l.kernel});
      break;
    case LayerKind::kLinear:
      l.out_size = 1;
      l.weights = Grid({l.out_channels, l.in_channels});
      break;
  }
  if (l.out_size < 1) throw std::logic_error(l.name + ": empty output");
  init_weights(l, rng);
  m.layers.push_back(std::move(l));
  return index;
}

// One U-Net whose input is the output of layer `from` (or the model input).
int add_unet(Model& m, const NetConfig& cfg, int from, int in_channels, const std::string& prefix, Rng& rng) {
  const int depth = cfg.depth();
  std::vector<int> encoder(static_cast<std::size_t>(depth) + 1, -1);
  encoder[0] = from;
  int size = cfg.resolution;
  for (int l = 1; l <= depth; ++l) {
    Layer down;
    down.name = prefix + ".down" + std::to_string(l);
    down.kind = LayerKind::kConv;
    down.in_channels = in_channels;
    down.out_channels = cfg.channels_at(l);
    down.geom = ConvGeometry::halving();
    down.in_size = size;
    down.input_from = encoder[static_cast<std::size_t>(l - 1)];
    encoder[static_cast<std::size_t>(l)] = add_layer(m, down, rng);
    size /= 2;
  }
  if (size != 1) throw std::logic_error(prefix + ": bottleneck is not 1x1");
  int prev = encoder[static_cast<std::size_t>(depth)];
  for (int l = depth; l >= 1; --l) {
    Layer up;
    up.name = prefix + ".up" + std::to_string(l);
    up.kind = LayerKind::kConvTranspose;
    up.out_channels = cfg.channels_at(l - 1);
    up.geom = ConvGeometry::halving();
    up.in_size = size;
    up.input_from = prev;
    if (l < depth) up.skip_from = encoder[static_cast<std::size_t>(l)];
    prev = add_layer(m, up, rng);
    size *= 2;
  }
  return prev;
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kNone: break;
  }
  return x;
}

}  // namespace

Model build_generator(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.role = ModelRole::kGenerator;
  m.config = cfg;
  Rng rng = make_rng(seed, "init", 0);
  const int b = cfg.base_channels;

  Layer embed;
  embed.name = "embed";
  embed.in_channels = 3;
  embed.out_channels = b;
  embed.geom = ConvGeometry::same(4);
  embed.in_size = cfg.resolution;
  const int e = add_layer(m, embed, rng);
  const int u1 = add_unet(m, cfg, e, b, "unet1", rng);
  const int u2 = add_unet(m, cfg, u1, b, "unet2", rng);

  Layer proj;
  proj.name = "project";
  proj.out_channels = 1;
  proj.geom = ConvGeometry::same(4);
  proj.in_size = cfg.resolution;
  proj.input_from = u2;
  proj.activation = Activation::kSigmoid;
  add_layer(m, proj, rng);

  if (static_cast<int>(m.layers.size()) != cfg.generator_layer_count() || m.layers.back().out_size != cfg.resolution) {
    throw std::logic_error("generator construction broke the 4m+2 layer contract");
  }
  return m;
}

Model build_discriminator(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.role = ModelRole::kDiscriminator;
  m.config = cfg;
  Rng rng = make_rng(seed, "init", 1);
  int prev = -1, size = cfg.resolution;
  for (int i = 0; i < 4; ++i) {
    Layer l;
    l.name = "disc" + std::to_string(i + 1);
    l.in_channels = i == 0 ? 1 : 0;
    l.out_channels = cfg.channels_at(i);
    l.geom = i < 3 ? ConvGeometry::halving() : ConvGeometry::same(4);
    l.in_size = size;
    l.input_from = prev;
    prev = add_layer(m, l, rng);
    size = m.layers.back().out_size;
  }
  if (size != cfg.resolution / 8) throw std::logic_error("discriminator feature map is not R/8");
  Layer head;
  head.name = "disc_head";
  head.kind = LayerKind::kLinear;
  head.activation = Activation::kSigmoid;
  head.out_channels = 1;
  head.in_size = size;
  head.input_from = prev;
  add_layer(m, head, rng);
  return m;
}

Var forward(const Model& model, Tape& tape, Var input, bool trainable, std::vector<Var>* param_vars) {
  const Grid& x = input.value();
  const int channels = model.role == ModelRole::kGenerator ? 3 : 1;
  if (x.shape() != Grid::Shape{channels, model.config.resolution, model.config.resolution}) {
    throw std::invalid_argument("model expects input " +
                                shape_string({channels, model.config.resolution, model.config.resolution}) +
                                ", got " + shape_string(x.shape()));
  }
  std::vector<Var> outputs;
  outputs.reserve(model.layers.size());
  for (const Layer& l : model.layers) {
    Var w = trainable ? tape.parameter(l.weights) : tape.constant(l.weights);
    Var b = trainable ? tape.parameter(l.bias) : tape.constant(l.bias);
    if (param_vars) {
      param_vars->push_back(w);
      param_vars->push_back(b);
    }
    if (l.weight_scale != 1.0) w = scale(w, l.weight_scale);
    Var in = l.input_from < 0 ? input : outputs[static_cast<std::size_t>(l.input_from)];
    if (l.skip_from >= 0) in = concat_channels(in, outputs[static_cast<std::size_t>(l.skip_from)]);
    Var y;
    switch (l.kind) {
      case LayerKind::kConv: y = conv2d(in, w, b, l.geom); break;
      case LayerKind::kConvTranspose: y = conv2d_transpose(in, w, b, l.geom); break;
      case LayerKind::kLinear: y = linear(global_avg_pool(in), w, b); break;
    }
    outputs.push_back(activate(y, l.activation));
  }
  return outputs.back();
}

Grid evaluate(const Model& model, const Grid& input) {
  Tape tape;
  return forward(model, tape, tape.input(input)).value();
}

ConditionInput assemble_input(const TopographyRaster& raster, int day, double density, std::uint64_t seed) {
  check_day_density(day, density);
  const int n = raster.frame.resolution;
  if (raster.values.shape() != Grid::Shape{1, n, n}) {
    throw std::invalid_argument("raster shape " + shape_string(raster.values.shape()) + " does not match its frame");
  }
  ConditionInput in;
  in.frame = raster.frame;
  in.day = day;
  in.density = density;
  in.planes = Grid({3, n, n});
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  Rng rng = make_rng(seed, "plane_c");
  const double lo = density <= 0.5 ? 0.0 : 2 * density - 1, hi = density <= 0.5 ? 2 * density : 1.0;
  std::uniform_real_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < plane; ++i) {
    in.planes[i] = std::clamp(raster.values[i], 0.0, 1.0);
    in.planes[plane + i] = day / 30.0;
    in.planes[2 * plane + i] = lo + (hi - lo) * noise(rng);
  }
  return in;
}

FluorescenceImage generate(const Model& generator, const ConditionInput& input) {
  if (generator.role != ModelRole::kGenerator) throw std::invalid_argument("generate needs a generator model");
  if (input.frame.resolution != generator.config.resolution) {
    throw std::invalid_argument("input resolution " + std::to_string(input.frame.resolution) +
                                " does not match the generator's " + std::to_string(generator.config.resolution));
  }
  return {input.frame, evaluate(generator, input.planes), Provenance::kPredicted};
}

}  // namespace celltopo
