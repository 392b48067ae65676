#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "onedm/diffusion.hpp"
#include "onedm/glyph_forge.hpp"
#include "onedm/model/model.hpp"
#include "onedm/train/checkpoint.hpp"
#include "onedm/train/config.hpp"

namespace onedm {

struct TrainSample {
  const WordRecord* target = nullptr;
  const WordRecord* style_ref = nullptr;
};

using TrainBatch = std::vector<TrainSample>;

// Writer-paired sampling over the train split: two targets per drawn writer,
// so the contrastive loss always has an in-batch positive. Style references
// come from the same writer; a different record whenever one exists.
TrainBatch build_batch(const DatasetManifest& data, int batch_size, Rng& rng);

// Moments stay float so a checkpoint round-trip is bitwise exact.
struct AdamState {
  std::vector<float> m, v;
  int64_t step = 0;
  void reset(size_t n) {
    m.assign(n, 0.0f);
    v.assign(n, 0.0f);
    step = 0;
  }
};

struct StepMetrics {
  double l_rec = 0.0;
  double l_nce = 0.0;
  double total = 0.0;
  int null_cond_uses = 0;
  std::vector<int> ts;  // per-sample diffusion timesteps drawn this step
};

// One optimization step over the batch. Accumulates into `grad` (resized and
// zeroed here) and applies AdamW to the model parameters in place.
StepMetrics train_step(Model<float>& model, const DiffusionSchedule& sched,
                       const TrainBatch& batch, const TrainConfig& cfg,
                       AdamState& opt, std::vector<float>& grad, Rng& rng);

void adamw_update(ParamStore<float>& ps, const std::vector<float>& grad,
                  AdamState& opt, double lr, double weight_decay);

Checkpoint snapshot(const Model<float>& model, const AdamState& opt,
                    const TrainConfig& cfg, int epoch, double best_loss);

// Copies parameters (and optimizer state when opt != nullptr) out of a loaded
// checkpoint after verifying the entry layout matches the live model.
void restore(const Checkpoint& ck, Model<float>& model, AdamState* opt);

// Sibling paths derived from the final checkpoint path.
std::string best_path_of(const std::string& out_path);
std::string metrics_path_of(const std::string& out_path);

struct TrainResult {
  std::string final_path;
  std::string best_path;
  std::string metrics_path;
  double best_loss = 0.0;
  int64_t steps = 0;
  double first_epoch_rec = 0.0;
  double last_epoch_rec = 0.0;
};

TrainResult train(const TrainConfig& cfg, const DatasetManifest& data,
                  const std::string& out_path,
                  const std::string& resume_path = "");

}  // namespace onedm
