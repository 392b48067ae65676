#pragma once
#include <map>
#include <string>
#include <vector>

#include "onedm/eval/fid.hpp"
#include "onedm/eval/sampler.hpp"
#include "onedm/glyph_forge.hpp"
#include "onedm/model/model.hpp"
#include "onedm/train/config.hpp"
#include "onedm/train/trainer.hpp"

namespace onedm {

// model + run config + matching schedule reconstructed from one checkpoint
struct ModelBundle {
  TrainConfig cfg;
  Model<float> model;
  DiffusionSchedule sched;
};

ModelBundle load_model_bundle(const std::string& ckpt_path);

// Top-1 nearest-neighbor writer match over style embeddings (inner product).
// Every writer present must contribute at least 2 items; ties keep the first
// candidate index.
double writer_retrieval(const Model<float>& model,
                        const std::vector<const WordRecord*>& items);

// convenience form running on a checkpoint and the test split of a corpus
double writer_retrieval(const std::string& ckpt_path,
                        const DatasetManifest& data);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct TransferStats {
  double slant_corr = 0.0;  // true writer slant vs mean estimated slant
  double ink_mae = 0.0;     // mean |estimated ink - true writer ink|
  int n_writers = 0;
  int n_gens = 0;
};

// One-reference style transfer onto the test-split writers: for each writer
// the first test record is the single style reference, then texts from that
// writer's remaining records are generated and measured. When dump_dir is
// nonempty, every generation is written there as reference/generation pairs.
TransferStats style_transfer_eval(const Model<float>& model,
                                  const DiffusionSchedule& sched,
                                  const DatasetManifest& data,
                                  int words_per_writer,
                                  const SampleOptions& opt,
                                  const std::string& dump_dir = "");

struct EchoRow {
  std::string variant;
  double fid = 0.0;
  double retrieval = 0.0;
  double slant_corr = 0.0;
};

struct EchoOptions {
  int words_per_writer = 8;    // generations per test writer
  int fid_min_images = 50;     // generation continues until both sides reach it
  SampleOptions sample;
  uint64_t feature_seed = 7;
  int feature_epochs = 8;
};

// One CSV row per variant checkpoint: fid_lite, writer retrieval, and the
// slant-transfer correlation. Keys must be within the five known variants
// and every named checkpoint must exist.
std::vector<EchoRow> ablation_echo(
    const std::map<std::string, std::string>& ckpt_of_variant,
    const DatasetManifest& data, const EchoOptions& opt);

void write_echo_csv(const std::string& path, const std::vector<EchoRow>& rows);

// reference stacked over generation, one PGM per pair
void dump_pair(const std::string& path, const Image& reference,
               const Image& generation);

}  // namespace onedm
