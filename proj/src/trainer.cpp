#include "celltopo/trainer.hpp"

#include "celltopo/image_io.hpp"
#include "celltopo/random.hpp"
#include "celltopo/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace celltopo {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size != 1) throw std::invalid_argument("batch size is fixed at 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(lambda_rec >= 0) || !(lambda_adv >= 0)) throw std::invalid_argument("loss weights must be >= 0");
  if (!(adv_warmup >= 0 && adv_warmup <= adv_ramp_end && adv_ramp_end <= 1)) {
    throw std::invalid_argument("adversarial schedule needs 0 <= warmup <= ramp_end <= 1");
  }
  if (!(target_floor >= 0 && target_floor < 0.5)) throw std::invalid_argument("target floor must be in [0, 0.5)");
  if (max_iterations < 0 || checkpoint_every < 0) throw std::invalid_argument("iteration counts must be >= 0");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) {
    throw std::invalid_argument("checkpoint cadence set without a checkpoint directory");
  }
}

double adversarial_weight(const TrainConfig& cfg, std::int64_t iter, std::int64_t total) {
  const double t = static_cast<double>(iter), n = static_cast<double>(total);
  const double start = cfg.adv_warmup * n, end = cfg.adv_ramp_end * n;
  if (t < start) return 0.0;
  if (t >= end) return cfg.lambda_adv;
  return cfg.lambda_adv * (t - start) / (end - start);
}

namespace {

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " is not finite");
}

}  // namespace

double loss_generator(const Grid& pred, const Grid& target, double disc_score, double lambda_rec,
                      double lambda_adv) {
  if (!pred.same_shape(target)) {
    throw std::invalid_argument("prediction " + shape_string(pred.shape()) + " and target " +
                                shape_string(target.shape()) + " differ in shape");
  }
  if (!pred.all_finite() || !target.all_finite()) throw std::invalid_argument("non-finite image in generator loss");
  check_finite(disc_score, "discriminator score");
  if (!(disc_score > 0.0 && disc_score < 1.0)) throw std::invalid_argument("discriminator score outside (0, 1)");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
  return lambda_rec * s / static_cast<double>(pred.size()) + lambda_adv * -std::log(disc_score);
}

Var loss_generator(Var pred, Var target, Var disc_score, double lambda_rec, double lambda_adv) {
  Var rec = scale(mean(abs(sub(pred, target))), lambda_rec);
  if (lambda_adv == 0.0) return rec;
  return add(rec, scale(log(disc_score, kScoreEpsilon), -lambda_adv));
}

double loss_discriminator(double score_real, double score_fake, bool* clamped) {
  check_finite(score_real, "real score");
  check_finite(score_fake, "fake score");
  const double r = std::clamp(score_real, kScoreEpsilon, 1.0 - kScoreEpsilon);
  const double f = std::clamp(score_fake, kScoreEpsilon, 1.0 - kScoreEpsilon);
  if (clamped) *clamped = r != score_real || f != score_fake;
  return -std::log(r) - std::log(1.0 - f);
}

Var loss_discriminator(Var score_real, Var score_fake) {
  Var real_term = log(score_real, kScoreEpsilon);
  Var fake_term = log(add_scalar(scale(score_fake, -1.0), 1.0), kScoreEpsilon);
  return scale(add(real_term, fake_term), -1.0);
}

void LossTrace::write_csv(const fs::path& path) const {
  std::ostringstream out;
  out << "iter,l_rec,l_adv_gen,l_disc,lambda_adv\n";
  out.precision(17);
  for (const LossRecord& r : records) {
    out << r.iter << ',' << r.l_rec << ',' << r.l_adv_gen << ',' << r.l_disc << ',' << r.lambda_adv << '\n';
  }
  write_text_file(path, out.str());
}

LossTrace LossTrace::read_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "iter,l_rec,l_adv_gen,l_disc,lambda_adv") {
    throw std::runtime_error("not a loss trace CSV: " + path.string());
  }
  LossTrace t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    LossRecord r;
    char c = 0;
    if (!(ls >> r.iter >> c >> r.l_rec >> c >> r.l_adv_gen >> c >> r.l_disc >> c >> r.lambda_adv)) {
      throw std::runtime_error("malformed loss trace row: " + line);
    }
    t.records.push_back(r);
  }
  return t;
}

double LossTrace::mean_rec(std::size_t begin, std::size_t end) const {
  end = std::min(end, records.size());
  if (begin >= end) throw std::invalid_argument("empty loss trace range");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += records[i].l_rec;
  return s / static_cast<double>(end - begin);
}

Checkpoint Checkpoint::initial(const NetConfig& net, std::uint64_t seed, double learning_rate) {
  Checkpoint c;
  c.net = net;
  c.seed = seed;
  c.generator = build_generator(net, seed);
  c.discriminator = build_discriminator(net, seed);
  AdamConfig adam;
  adam.learning_rate = learning_rate;
  c.gen_opt = OptimState::for_params(c.generator.params(), adam);
  c.disc_opt = OptimState::for_params(c.discriminator.params(), adam);
  return c;
}

// ---- checkpoint file -------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'W', 'N', 'T', '1'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.append(p, sizeof v);
  }
  void put_grid(const Grid& g) { bytes.append(reinterpret_cast<const char*>(g.data()), g.size() * sizeof(double)); }
  std::string bytes;
};

class Reader {
 public:
  Reader(const std::string& b, std::size_t begin, std::size_t end, const fs::path& p)
      : bytes_(b), pos_(begin), end_(end), path_(p) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof v);
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  void get_grid(Grid& g) {
    need(g.size() * sizeof(double));
    std::memcpy(g.data(), bytes_.data() + pos_, g.size() * sizeof(double));
    pos_ += g.size() * sizeof(double);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > end_) throw std::runtime_error("checkpoint " + path_.string() + " is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_;
  std::size_t end_;
  fs::path path_;
};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) h = (h ^ static_cast<unsigned char>(data[i])) * 0x100000001b3ULL;
  return h;
}

void put_model(Writer& w, const Model& m) {
  for (const Layer& l : m.layers) {
    w.put_grid(l.weights);
    w.put_grid(l.bias);
  }
}

void get_model(Reader& r, Model& m) {
  for (Layer& l : m.layers) {
    r.get_grid(l.weights);
    r.get_grid(l.bias);
  }
}

void put_opt(Writer& w, const OptimState& s) {
  w.put<std::int64_t>(s.step);
  for (const Grid& g : s.first_moment) w.put_grid(g);
  for (const Grid& g : s.second_moment) w.put_grid(g);
}

void get_opt(Reader& r, OptimState& s) {
  s.step = r.get<std::int64_t>();
  for (Grid& g : s.first_moment) r.get_grid(g);
  for (Grid& g : s.second_moment) r.get_grid(g);
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const fs::path& path) {
  Writer head;
  head.bytes.append(kMagic, 4);
  head.put<std::uint32_t>(kCheckpointVersion);
  head.put<std::int32_t>(c.net.resolution);
  head.put<std::int32_t>(c.net.base_channels);
  head.put<std::int32_t>(c.net.channel_cap);
  head.put<std::int32_t>(c.net.disc_layers);
  head.put<std::uint64_t>(c.generator.parameter_count() + c.discriminator.parameter_count());
  head.put<std::int64_t>(c.iteration);
  head.put<std::uint64_t>(c.seed);
  head.put<double>(c.first_epoch_rec);
  head.put<double>(c.last_epoch_rec);
  head.put<double>(c.gen_opt.config.learning_rate);
  head.put<double>(c.gen_opt.config.beta1);
  head.put<double>(c.gen_opt.config.beta2);
  head.put<double>(c.gen_opt.config.epsilon);

  Writer body;
  put_model(body, c.generator);
  put_model(body, c.discriminator);
  put_opt(body, c.gen_opt);
  put_opt(body, c.disc_opt);
  const std::uint64_t checksum = fnv1a(body.bytes.data(), body.bytes.size());

  atomic_write(path, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(head.bytes.data(), static_cast<std::streamsize>(head.bytes.size()));
    out.write(body.bytes.data(), static_cast<std::streamsize>(body.bytes.size()));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
    out.close();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  });
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = read_text_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint " + path.string() + ": expected magic WNT1, found '" +
                             bytes.substr(0, std::min<std::size_t>(4, bytes.size())) + "'");
  }
  Reader r(bytes, 4, bytes.size(), path);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": expected format version " +
                             std::to_string(kCheckpointVersion) + ", found " + std::to_string(version));
  }
  Checkpoint c;
  c.net.resolution = r.get<std::int32_t>();
  c.net.base_channels = r.get<std::int32_t>();
  c.net.channel_cap = r.get<std::int32_t>();
  c.net.disc_layers = r.get<std::int32_t>();
  try {
    c.net.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("checkpoint " + path.string() + " holds an invalid network config: " + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  c.iteration = r.get<std::int64_t>();
  c.seed = r.get<std::uint64_t>();
  c.first_epoch_rec = r.get<double>();
  c.last_epoch_rec = r.get<double>();
  AdamConfig adam;
  adam.learning_rate = r.get<double>();
  adam.beta1 = r.get<double>();
  adam.beta2 = r.get<double>();
  adam.epsilon = r.get<double>();

  c.generator = build_generator(c.net, 0);
  c.discriminator = build_discriminator(c.net, 0);
  if (count != c.generator.parameter_count() + c.discriminator.parameter_count()) {
    throw std::runtime_error("checkpoint " + path.string() + ": parameter count " + std::to_string(count) +
                             " does not match its network config");
  }
  c.gen_opt = OptimState::for_params(c.generator.params(), adam);
  c.disc_opt = OptimState::for_params(c.discriminator.params(), adam);

  if (bytes.size() < r.pos() + sizeof(std::uint64_t)) throw std::runtime_error("checkpoint " + path.string() + " is truncated");
  const std::size_t body_begin = r.pos(), body_end = bytes.size() - sizeof(std::uint64_t);
  Reader body(bytes, body_begin, body_end, path);
  get_model(body, c.generator);
  get_model(body, c.discriminator);
  get_opt(body, c.gen_opt);
  get_opt(body, c.disc_opt);
  if (body.pos() != body_end) throw std::runtime_error("checkpoint " + path.string() + " has trailing bytes");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body_end, sizeof stored);
  if (stored != fnv1a(bytes.data() + body_begin, body_end - body_begin)) {
    throw std::runtime_error("checkpoint " + path.string() + ": checksum mismatch");
  }
  return c;
}

// ---- training loop ---------------------------------------------------------

namespace {

struct Sample {
  TopographyRaster raster;
  Grid target;
  int day = 0;
  double density = 0.0;
};

Sample load_sample(const DatasetManifest& m, std::size_t index) {
  const DatasetRecord& r = m.records[index];
  try {
    Sample s;
    s.raster.frame = m.frame;
    Grid topo = read_png_gray(m.root / r.topography_png);
    Grid cells = read_png_gray(m.root / r.fluorescence_png);
    if (!topo.same_shape(cells)) throw std::runtime_error("topography and fluorescence sizes differ");
    s.raster.values = std::move(topo);
    s.target = std::move(cells);
    s.day = r.day;
    s.density = r.density;
    return s;
  } catch (const std::exception& e) {
    throw std::runtime_error("cannot load training record " + std::to_string(index) + ": " + e.what());
  }
}

// Brings a sample to the network resolution: identity when it already
// matches, otherwise a shared seeded crop of twice the resolution (or the
// resolution itself when the image is smaller) averaged down.
void fit_sample(const Sample& s, int resolution, CropPolicy policy, std::uint64_t seed, TopographyRaster& raster,
                Grid& target) {
  const int h = s.target.dim(1), w = s.target.dim(2);
  if (h == resolution && w == resolution) {
    raster = s.raster;
    target = s.target;
    return;
  }
  if (policy == CropPolicy::kNone) {
    throw std::invalid_argument("record size " + std::to_string(h) + "x" + std::to_string(w) +
                                " needs a crop policy to reach " + std::to_string(resolution));
  }
  const int window = std::min(h, w) >= 2 * resolution ? 2 * resolution : resolution;
  raster.frame = FrameConfig::with_resolution(resolution);
  raster.values = crop_resize(s.raster.values, window, resolution, seed);
  for (double& v : raster.values.values()) v = v >= 0.5 ? 1.0 : 0.0;
  target = crop_resize(s.target, window, resolution, seed);
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const NetConfig& net, const TrainConfig& cfg,
                  const TrainProgress& progress) {
  cfg.validate();
  net.validate();
  if (manifest.records.empty()) throw std::invalid_argument("training manifest is empty");
  std::vector<Sample> samples;
  samples.reserve(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) samples.push_back(load_sample(manifest, i));

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck = Checkpoint::initial(net, cfg.seed, cfg.learning_rate);
  std::vector<ParamRef> gen_params = ck.generator.params(), disc_params = ck.discriminator.params();

  const auto n = static_cast<std::int64_t>(samples.size());
  std::int64_t total = cfg.epochs * n;
  if (cfg.max_iterations > 0) total = std::min(total, cfg.max_iterations);

  std::vector<std::size_t> order(samples.size());
  TopographyRaster raster;
  Grid target;
  for (std::int64_t iter = 0; iter < total; ++iter) {
    if (iter % n == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle = make_rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(iter / n));
      std::shuffle(order.begin(), order.end(), shuffle);
    }
    const Sample& s = samples[order[static_cast<std::size_t>(iter % n)]];
    fit_sample(s, net.resolution, cfg.crop, stream_seed(cfg.seed, "cropping", static_cast<std::uint64_t>(iter)), raster,
               target);
    if (cfg.target_floor > 0) {
      for (double& v : target.values()) v = cfg.target_floor + (1.0 - cfg.target_floor) * v;
    }
    const ConditionInput input =
        assemble_input(raster, s.day, s.density, stream_seed(cfg.seed, "plane_c", static_cast<std::uint64_t>(iter)));
    LossRecord rec;
    rec.iter = iter;
    rec.lambda_adv = adversarial_weight(cfg, iter, total);

    Tape gen_tape;
    std::vector<Var> gvars;
    Var fake = forward(ck.generator, gen_tape, gen_tape.input(input.planes), true, &gvars);

    // Discriminator step on the (real, fake) pair.
    {
      Tape t;
      std::vector<Var> dvars;
      Var real_score = forward(ck.discriminator, t, t.input(target), true, &dvars);
      std::vector<Var> unused;
      Var fake_score = forward(ck.discriminator, t, t.input(fake.value()), true, &unused);
      Var loss = loss_discriminator(real_score, fake_score);
      rec.l_disc = loss.value()[0];
      if (!std::isfinite(rec.l_disc)) {
        throw std::runtime_error("non-finite discriminator loss at iteration " + std::to_string(iter));
      }
      t.backward(loss);
      // Both passes share the parameters, so their gradients add.
      std::vector<Grid> summed;
      summed.reserve(dvars.size());
      for (std::size_t i = 0; i < dvars.size(); ++i) {
        Grid g = t.grad(dvars[i]);
        const Grid& other = t.grad(unused[i]);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += other[j];
        summed.push_back(std::move(g));
      }
      std::vector<const Grid*> grads;
      for (const Grid& g : summed) grads.push_back(&g);
      optim_step(disc_params, grads, ck.disc_opt);
    }

    // Generator step against the updated discriminator.
    Var score = forward(ck.discriminator, gen_tape, fake);
    Var target_var = gen_tape.input(target);
    const double fake_score = score.value()[0];
    rec.l_adv_gen = -std::log(std::max(fake_score, kScoreEpsilon));
    Var loss = loss_generator(fake, target_var, score, cfg.lambda_rec, rec.lambda_adv);
    {
      double s_abs = 0.0;
      const Grid& pv = fake.value();
      for (std::size_t i = 0; i < pv.size(); ++i) s_abs += std::fabs(pv[i] - target[i]);
      rec.l_rec = s_abs / static_cast<double>(pv.size());
    }
    if (!std::isfinite(loss.value()[0]) || !std::isfinite(rec.l_adv_gen)) {
      throw std::runtime_error("non-finite generator loss at iteration " + std::to_string(iter));
    }
    gen_tape.backward(loss);
    std::vector<const Grid*> grads;
    for (Var v : gvars) grads.push_back(&gen_tape.grad(v));
    optim_step(gen_params, grads, ck.gen_opt);

    ck.iteration = iter + 1;
    result.trace.records.push_back(rec);
    if (progress) progress(rec, total);
    if (cfg.checkpoint_every > 0 && ck.iteration % cfg.checkpoint_every == 0) {
      const std::size_t done = result.trace.records.size();
      ck.first_epoch_rec = result.trace.mean_rec(0, static_cast<std::size_t>(n));
      ck.last_epoch_rec = result.trace.mean_rec(done - std::min(done, static_cast<std::size_t>(n)), done);
      save_checkpoint(ck, cfg.checkpoint_dir / "checkpoint.wnt");
    }
  }
  const std::size_t done = result.trace.records.size();
  ck.first_epoch_rec = result.trace.mean_rec(0, static_cast<std::size_t>(n));
  ck.last_epoch_rec = result.trace.mean_rec(done - std::min(done, static_cast<std::size_t>(n)), done);
  return result;
}

}  // namespace celltopo
