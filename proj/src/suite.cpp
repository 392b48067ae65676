#include "onedm/eval/suite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "onedm/eval/measures.hpp"
#include "onedm/image.hpp"

namespace onedm {

ModelBundle load_model_bundle(const std::string& ckpt_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  TrainConfig cfg = TrainConfig::parse(ck.config_text);
  cfg.validate();
  ModelBundle b{cfg,
                Model<float>(ModelDims::preset(cfg.preset),
                             ablation_parse(cfg.ablation)),
                linear_schedule(cfg.T, 1e-4, 0.02)};
  restore(ck, b.model, nullptr);
  return b;
}

double writer_retrieval(const Model<float>& model,
                        const std::vector<const WordRecord*>& items) {
  int N = int(items.size());
  if (N < 2) throw DataError("writer_retrieval: need at least 2 items");
  std::map<int, int> count;
  for (const WordRecord* r : items) ++count[r->writer_id];
  for (const auto& [wid, c] : count)
    if (c < 2)
      throw DataError("writer_retrieval: fewer than 2 samples for writer " +
                      std::to_string(wid));

  std::vector<Tensor<float>> z;
  z.reserve(size_t(N));
  for (const WordRecord* r : items)
    z.push_back(model.style_embedding(r->image));

  int hits = 0;
  for (int i = 0; i < N; ++i) {
    int best = -1;
    float best_ip = 0.0f;
    for (int j = 0; j < N; ++j) {
      if (j == i) continue;
      float ip = 0.0f;
      for (size_t k = 0; k < z[size_t(i)].numel(); ++k)
        ip += z[size_t(i)][k] * z[size_t(j)][k];
      if (best < 0 || ip > best_ip) {
        best = j;
        best_ip = ip;
      }
    }
    if (items[size_t(best)]->writer_id == items[size_t(i)]->writer_id) ++hits;
  }
  return double(hits) / double(N);
}

double writer_retrieval(const std::string& ckpt_path,
                        const DatasetManifest& data) {
  ModelBundle b = load_model_bundle(ckpt_path);
  std::vector<const WordRecord*> items;
  for (const auto& r : data.records)
    if (r.split == "test") items.push_back(&r);
  return writer_retrieval(b.model, items);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw UsageError("pearson: need two equal series of length >= 2");
  int n = int(a.size());
  double ma = 0.0, mb = 0.0;
  for (int i = 0; i < n; ++i) {
    ma += a[size_t(i)];
    mb += b[size_t(i)];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (int i = 0; i < n; ++i) {
    double da = a[size_t(i)] - ma, db = b[size_t(i)] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  // a flat series carries no correlation signal; 0 keeps reports total
  if (saa < 1e-30 || sbb < 1e-30) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

namespace {

// generation loop shared by the transfer report and the ablation table
TransferStats transfer_run(const Model<float>& model,
                           const DiffusionSchedule& sched,
                           const DatasetManifest& data, int words_per_writer,
                           const SampleOptions& opt,
                           const std::string& dump_dir,
                           std::vector<Image>* gens_out) {
  if (words_per_writer < 1)
    throw UsageError("style transfer: words_per_writer must be >= 1");
  std::vector<int> wids;
  for (int wid : data.writer_ids())
    if (!data.of_writer(wid, "test").empty()) wids.push_back(wid);
  if (wids.empty()) throw DataError("style transfer: no test writers");

  std::vector<double> true_slant, mean_est_slant;
  double ink_err = 0.0;
  int n_gens = 0;
  uint64_t seed = opt.seed;

  for (int wid : wids) {
    auto recs = data.of_writer(wid, "test");
    const WordRecord* ref = recs[0];
    double slant_sum = 0.0;
    int made = 0;
    for (int k = 0; k < words_per_writer; ++k) {
      // one reference per writer; texts cycle over its remaining records
      const std::string& text =
          recs.size() > 1 ? recs[1 + size_t(k) % (recs.size() - 1)]->text
                          : ref->text;
      SampleOptions o = opt;
      o.seed = seed++;
      Image gen = sample_word(model, sched, ref->image, text, o);
      if (gens_out) gens_out->push_back(gen);
      if (!dump_dir.empty())
        dump_pair(dump_dir + "/w" + std::to_string(wid) + "_" +
                      std::to_string(k) + ".pgm",
                  ref->image, gen);
      double s = 0.0, ink = 0.0;
      try {
        s = estimate_slant(gen);
        ink = estimate_ink(gen);
      } catch (const DataError&) {
        // a blank generation scores as maximally wrong, not as a crash
      }
      slant_sum += s;
      ink_err += std::fabs(ink - ref->style.ink);
      ++made;
      ++n_gens;
    }
    true_slant.push_back(ref->style.slant);
    mean_est_slant.push_back(slant_sum / made);
  }

  TransferStats st;
  st.n_writers = int(wids.size());
  st.n_gens = n_gens;
  st.ink_mae = ink_err / n_gens;
  st.slant_corr = wids.size() >= 2 ? pearson(true_slant, mean_est_slant) : 0.0;
  return st;
}

}  // namespace

TransferStats style_transfer_eval(const Model<float>& model,
                                  const DiffusionSchedule& sched,
                                  const DatasetManifest& data,
                                  int words_per_writer,
                                  const SampleOptions& opt,
                                  const std::string& dump_dir) {
  return transfer_run(model, sched, data, words_per_writer, opt, dump_dir,
                      nullptr);
}

std::vector<EchoRow> ablation_echo(
    const std::map<std::string, std::string>& ckpt_of_variant,
    const DatasetManifest& data, const EchoOptions& opt) {
  if (ckpt_of_variant.empty())
    throw UsageError("ablation_echo: no variants given");
  for (const auto& [name, path] : ckpt_of_variant) {
    ablation_parse(name);  // throws on anything outside the five
    if (!std::ifstream(path).good())
      throw DataError("ablation_echo: missing checkpoint for " + name + ": " +
                      path);
  }

  std::vector<const WordRecord*> test_items;
  std::vector<const Image*> real;
  int n_test_writers = 0;
  for (const auto& r : data.records) {
    if (r.split == "test") test_items.push_back(&r);
    real.push_back(&r.image);
  }
  for (int wid : data.writer_ids())
    if (!data.of_writer(wid, "test").empty()) ++n_test_writers;
  if (n_test_writers == 0) throw DataError("ablation_echo: no test writers");

  // same feature net for every variant keeps the scores comparable
  FeatureNet net = train_feature_net(data, opt.feature_epochs,
                                     opt.feature_seed);

  int per_writer = std::max(
      opt.words_per_writer,
      (opt.fid_min_images + n_test_writers - 1) / n_test_writers);

  std::vector<EchoRow> rows;
  for (const auto& [name, path] : ckpt_of_variant) {
    ModelBundle b = load_model_bundle(path);
    if (b.cfg.ablation != name)
      throw DataError("ablation_echo: checkpoint for " + name +
                      " was trained as " + b.cfg.ablation);
    std::vector<Image> gens;
    TransferStats st = transfer_run(b.model, b.sched, data, per_writer,
                                    opt.sample, "", &gens);
    std::vector<const Image*> gp;
    gp.reserve(gens.size());
    for (const Image& g : gens) gp.push_back(&g);
    EchoRow row;
    row.variant = name;
    row.fid = fid_lite(real, gp, net).fid;
    row.retrieval = writer_retrieval(b.model, test_items);
    row.slant_corr = st.slant_corr;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_echo_csv(const std::string& path, const std::vector<EchoRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("ablation_echo: cannot write " + path);
  f << "variant,fid,retrieval,slant_corr\n";
  f.precision(10);
  for (const EchoRow& r : rows)
    f << r.variant << "," << r.fid << "," << r.retrieval << ","
      << r.slant_corr << "\n";
}

void dump_pair(const std::string& path, const Image& reference,
               const Image& generation) {
  save_pgm(path, vstack_with_rule(reference, generation));
}

}  // namespace onedm
