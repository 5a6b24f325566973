#pragma once

#include "celltopo/oracle.hpp"
#include "celltopo/optim.hpp"
#include "celltopo/tape.hpp"
#include "celltopo/wnet.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace celltopo {

enum class CropPolicy { kNone, kRandom };

struct TrainConfig {
  int epochs = 25;
  int batch_size = 1;
  double learning_rate = 0.0005;
  double lambda_rec = 100.0;
  double lambda_adv = 1.0;          // value after the ramp
  double adv_warmup = 0.1;          // fraction of iterations with no adversarial term
  double adv_ramp_end = 0.5;        // fraction at which the ramp reaches lambda_adv
  // Targets (and real images shown to the discriminator) are lifted to
  // floor + (1 - floor) * t so a sigmoid output never chases an exact 0.
  double target_floor = 0.03;
  std::uint64_t seed = 0;
  CropPolicy crop = CropPolicy::kNone;
  std::int64_t max_iterations = 0;  // 0 = epochs x records
  std::int64_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

/// lambda_adv(iter): 0 before adv_warmup * total, linear up to lambda_adv at
/// adv_ramp_end * total, constant afterwards.
double adversarial_weight(const TrainConfig& cfg, std::int64_t iter, std::int64_t total);

/// lambda_rec * mean|pred - target| + lambda_adv * (-log disc_score).
double loss_generator(const Grid& pred, const Grid& target, double disc_score, double lambda_rec,
                      double lambda_adv);
Var loss_generator(Var pred, Var target, Var disc_score, double lambda_rec, double lambda_adv);

inline constexpr double kScoreEpsilon = 1e-7;
/// -log(real) - log(1 - fake) with both scores clamped to [eps, 1 - eps];
/// `clamped` reports whether clamping happened.
double loss_discriminator(double score_real, double score_fake, bool* clamped = nullptr);
Var loss_discriminator(Var score_real, Var score_fake);

struct LossRecord {
  std::int64_t iter = 0;
  double l_rec = 0.0;  // mean absolute error, unweighted
  double l_adv_gen = 0.0;
  double l_disc = 0.0;
  double lambda_adv = 0.0;
};

struct LossTrace {
  std::vector<LossRecord> records;
  void write_csv(const std::filesystem::path& path) const;
  static LossTrace read_csv(const std::filesystem::path& path);
  /// Mean l_rec over records [begin, end).
  double mean_rec(std::size_t begin, std::size_t end) const;
};

struct Checkpoint {
  NetConfig net;
  Model generator;
  Model discriminator;
  OptimState gen_opt;
  OptimState disc_opt;
  std::int64_t iteration = 0;
  std::uint64_t seed = 0;
  double first_epoch_rec = 0.0;  // loss trace summary
  double last_epoch_rec = 0.0;

  /// Fresh models and zero optimizer state.
  static Checkpoint initial(const NetConfig& net, std::uint64_t seed, double learning_rate);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  LossTrace trace;
};

using TrainProgress = std::function<void(const LossRecord&, std::int64_t total)>;

/// Alternating discriminator-then-generator updates, batch 1, over a seeded
/// per-epoch shuffle. Plane C is redrawn every iteration.
TrainResult train(const DatasetManifest& manifest, const NetConfig& net, const TrainConfig& cfg,
                  const TrainProgress& progress = {});

}  // namespace celltopo
