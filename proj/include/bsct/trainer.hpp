#pragma once

// Desk-scale training: weighted energy/force loss, AdamW with global-norm
// clipping, linear warmup + cosine schedule, and an EMA shadow of the weights.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bsct/potential.hpp"

namespace bsct {

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : Error("training diverged in epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

enum class LossType { l1, l2 };

struct TrainConfig {
  double energy_weight = 1.0;
  double force_weight = 2.0;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double warmup_factor = 0.2;
  double warmup_epochs = 1.0;
  int epochs = 100;
  double ema_decay = 0.999;
  double grad_clip = 100.0;
  int batch_size = 128;
  std::uint64_t seed = 0;
  LossType loss = LossType::l1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  bool fit_offsets = true;  // least-squares per-element offsets before training
  int jobs = 0;

  void validate() const;
  /// Keys are prefixed with "train.".
  FlatConfig to_flat() const;
  void apply(const FlatConfig& flat);
};

/// A labelled structure.
struct Sample {
  Structure structure;
  double energy = 0.0;
  std::vector<Vec3> forces;
};
using Dataset = std::vector<Sample>;

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// w_E * mean_b |dE_b| / N_b + w_F * mean over force components |dF| (or the
/// squared counterparts for L2).  `energy_norm` / `force_norm` override the
/// denominators so partial batches can be summed into the full-batch loss.
ad::Tensor loss_tensor(const ad::Tensor& pred_e, const ad::Array& ref_e, const std::vector<std::size_t>& n_atoms,
                       const ad::Tensor& pred_f, const ad::Array& ref_f, double w_e, double w_f, LossType type,
                       double energy_norm = 0.0, double force_norm = 0.0);

double loss_value(const std::vector<double>& pred_e, const std::vector<double>& ref_e,
                  const std::vector<std::size_t>& n_atoms, const std::vector<Vec3>& pred_f,
                  const std::vector<Vec3>& ref_f, double w_e, double w_f, LossType type);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Learning rate at optimizer step `step` (0-based).
double learning_rate(const TrainConfig& cfg, long step, long steps_per_epoch);

/// True for weight matrices (last name component starting with 'w'), which
/// are the only arrays subject to weight decay.
bool decays(const std::string& name);

double global_norm(const std::map<std::string, ad::Array>& grads);

struct AdamState {
  long step = 0;
  std::map<std::string, ad::Array> m, v;
};

/// One clipped AdamW update with decoupled weight decay at learning rate `lr`.
/// Returns the gradient norm before clipping.
double optimizer_step(Parameters& params, std::map<std::string, ad::Array> grads, const TrainConfig& cfg, double lr,
                      AdamState& state);

/// shadow <- decay * shadow + (1 - decay) * params
void ema_update(Parameters& shadow, const Parameters& params, double decay);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LossRecord {
  int epoch = 0;
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  Parameters params, ema;
  std::vector<LossRecord> history;  // one entry per optimizer step
  std::vector<double> epoch_loss;   // mean batch loss per epoch
};

/// Loss and parameter gradients at `params` on the samples with the given indices.
using BatchObjective = std::function<double(const Parameters& params, const std::vector<std::size_t>& batch,
                                            std::map<std::string, ad::Array>& grads)>;

/// Generic loop: shuffles [0, n_samples) every epoch, steps the optimizer on
/// each batch and tracks the EMA.  Throws TrainingDiverged on a non-finite
/// loss or gradient.
TrainResult train_loop(Parameters init, std::size_t n_samples, const TrainConfig& cfg, const BatchObjective& objective,
                       const std::function<void(const LossRecord&)>& on_step = {});

/// Least-squares per-element energy offsets (eV) from the dataset.
std::map<int, double> fit_offsets(const Dataset& data);

/// Loss and gradients of the potential on a batch.  The gradient head takes
/// parameter gradients through the force term (second order).
double potential_objective(const PotentialConfig& pcfg, const Parameters& params, const Dataset& data,
                           const std::vector<std::size_t>& batch, const TrainConfig& cfg,
                           std::map<std::string, ad::Array>& grads);

TrainResult train(const Dataset& data, const PotentialConfig& pcfg, const TrainConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_step = {});

std::string loss_history_csv(const TrainResult& r);

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

struct DatasetOptions {
  std::size_t samples_per_molecule = 40;
  double perturbation = 0.05;      // A, Gaussian per coordinate
  double stretch_fraction = 0.25;  // frames with one bond stretched or compressed
  double stretch_max = 0.6;        // A, max change of the bond length
  // Frames taken from short Langevin runs on the reference at a temperature
  // drawn uniformly from [thermal_min, thermal_max] K; the Gaussian
  // perturbation is not applied to them.
  double thermal_fraction = 0.0;
  double thermal_min = 100.0, thermal_max = 1000.0;
  long thermal_steps = 400;  // 0.5 fs steps
  // Frames where one non-bonded pair is pushed to contact_min..contact_max
  // times its covalent radii sum, so the repulsive wall is sampled.
  double contact_fraction = 0.0;
  double contact_min = 0.55, contact_max = 0.95;
  std::uint64_t seed = 0;
};

/// Relaxes each molecule on the reference potential, then samples perturbed,
/// thermal and bond-stretched frames labelled by the reference.  Bonds are
/// fixed to the input topology.
Dataset make_training_set(const std::vector<Structure>& molecules, const DatasetOptions& opt);

std::string dataset_json(const Dataset& d);
Dataset parse_dataset_json(const std::string& text);
void write_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace bsct
