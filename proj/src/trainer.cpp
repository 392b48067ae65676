#include "onedm/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace onedm {

TrainBatch build_batch(const DatasetManifest& data, int batch_size, Rng& rng) {
  if (batch_size < 2)
    throw UsageError("build_batch: batch_size must be >= 2");

  std::vector<int> paired;
  for (int w : data.writer_ids())
    if (data.of_writer(w, "train").size() >= 2) paired.push_back(w);
  if (paired.empty())
    throw DataError(
        "build_batch: batch error, no writer has two train records");

  TrainBatch batch;
  batch.reserve(size_t(batch_size));
  while (int(batch.size()) < batch_size) {
    int w = paired[size_t(rng.randint(0, int64_t(paired.size()) - 1))];
    auto recs = data.of_writer(w, "train");
    int n = int(recs.size());
    int a = int(rng.randint(0, n - 1));
    int b = a;
    while (b == a) b = int(rng.randint(0, n - 1));
    for (int tgt : {a, b}) {
      if (int(batch.size()) == batch_size) break;
      int r = tgt;
      while (recs[size_t(r)]->id == recs[size_t(tgt)]->id)
        r = int(rng.randint(0, n - 1));
      batch.push_back({recs[size_t(tgt)], recs[size_t(r)]});
    }
  }
  return batch;
}

void adamw_update(ParamStore<float>& ps, const std::vector<float>& grad,
                  AdamState& opt, double lr, double weight_decay) {
  size_t n = ps.size();
  if (grad.size() != n || opt.m.size() != n || opt.v.size() != n)
    throw UsageError("adamw_update: state size mismatch");
  opt.step += 1;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, double(opt.step));
  const double c2 = 1.0 - std::pow(b2, double(opt.step));
  float* p = ps.raw().data();
  for (size_t i = 0; i < n; ++i) {
    double g = double(grad[i]);
    double m = b1 * double(opt.m[i]) + (1.0 - b1) * g;
    double v = b2 * double(opt.v[i]) + (1.0 - b2) * g * g;
    opt.m[i] = float(m);
    opt.v[i] = float(v);
    double upd = lr * ((m / c1) / (std::sqrt(v / c2) + eps)) +
                 lr * weight_decay * double(p[i]);
    p[i] = float(double(p[i]) - upd);
  }
}

StepMetrics train_step(Model<float>& model, const DiffusionSchedule& sched,
                       const TrainBatch& batch, const TrainConfig& cfg,
                       AdamState& opt, std::vector<float>& grad, Rng& rng) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const int B = int(batch.size());
  const int H = model.dims.canvas_h, W = model.dims.canvas_w;
  const size_t px = size_t(H) * size_t(W);

  grad.assign(model.params().size(), 0.0f);

  struct Rec {
    int mse = -1, z = -1, t = 0, writer = 0;
    double mse_val = 0.0;
  };
  std::vector<Rec> recs(static_cast<size_t>(B));
  // tape closures capture their own address, so the tapes must stay put
  std::deque<Tape<float>> tapes;
  StepMetrics out;

  for (int i = 0; i < B; ++i) {
    const TrainSample& s = batch[size_t(i)];
    int t_i = int(rng.randint(1, cfg.T));
    Tensor<float> eps({1, H, W});
    for (size_t k = 0; k < px; ++k) eps[k] = float(rng.normal());
    bool drop = rng.uniform() < cfg.cfg_dropout_prob;

    tapes.emplace_back(&model.params(), &grad);
    Tape<float>& tp = tapes.back();

    CondNodes<float> cn;
    int cond;
    if (drop) {
      cn = model.encode_style(tp, s.style_ref->image);
      cond = model.null_condition(tp);
      ++out.null_cond_uses;
    } else {
      cn = model.encode_condition(tp, s.style_ref->image, s.target->text);
      cond = cn.g;
    }

    Tensor<float> x0std({1, H, W});
    for (size_t k = 0; k < px; ++k)
      x0std[k] = 2.0f * s.target->image[k] - 1.0f;
    int xt = tp.constant(q_sample(x0std, t_i, eps, sched));
    int x0hat = model.predict_x0(tp, xt, t_i, cond);
    int mn = tp.mse_to(x0hat, std::move(x0std));

    recs[size_t(i)] = {mn, cn.z, t_i, s.target->writer_id,
                       double(tp.val(mn)[0])};
    out.ts.push_back(t_i);
  }

  for (const Rec& r : recs) out.l_rec += r.mse_val;
  out.l_rec /= double(B);

  std::vector<Tensor<float>> dz;
  int P = 0;
  if (model.contrastive_on()) {
    std::vector<Tensor<float>> zs;
    std::vector<int> writers;
    for (int i = 0; i < B; ++i) {
      zs.push_back(tapes[size_t(i)].val(recs[size_t(i)].z));
      writers.push_back(recs[size_t(i)].writer);
    }
    P = zs[0].dim(1);
    out.l_nce = double(
        lap_nce_loss<float>(zs, writers, float(cfg.tau), &dz));
  }
  out.total = out.l_rec + out.l_nce;

  bool bad = !std::isfinite(out.l_rec) || !std::isfinite(out.l_nce);
  for (const Rec& r : recs) bad = bad || !std::isfinite(r.mse_val);
  if (bad) {
    std::ostringstream os;
    os << "train_step: non-finite loss, L_rec=" << out.l_rec
       << " L_lapNCE=" << out.l_nce << " t=[";
    for (int i = 0; i < B; ++i) os << (i ? " " : "") << recs[size_t(i)].t;
    os << "] writers=[";
    for (int i = 0; i < B; ++i) os << (i ? " " : "") << recs[size_t(i)].writer;
    os << "]";
    throw NumericError(os.str());
  }

  for (int i = 0; i < B; ++i) {
    Tensor<float> seed({1});
    seed[0] = float(1.0 / double(B));
    std::vector<std::pair<int, Tensor<float>>> seeds;
    seeds.emplace_back(recs[size_t(i)].mse, std::move(seed));
    if (!dz.empty())
      seeds.emplace_back(recs[size_t(i)].z,
                         Tensor<float>({1, P}, dz[size_t(i)].v));
    tapes[size_t(i)].backward(seeds);
  }
  tapes.clear();

  adamw_update(model.params(), grad, opt, cfg.lr, cfg.weight_decay);
  return out;
}

Checkpoint snapshot(const Model<float>& model, const AdamState& opt,
                    const TrainConfig& cfg, int epoch, double best_loss) {
  const ParamStore<float>& ps = model.params();
  Checkpoint ck;
  ck.config_text = cfg.serialize();
  ck.step = opt.step;
  ck.epoch = epoch;
  ck.best_loss = best_loss;
  for (int i = 0; i < ps.n_entries(); ++i) {
    const ParamInfo& e = ps.info(i);
    ck.add(e.name, e.shape, ps.ptr(i));
  }
  int n = int(ps.size());
  ck.add("opt/m", {n}, opt.m.data());
  ck.add("opt/v", {n}, opt.v.data());
  return ck;
}

void restore(const Checkpoint& ck, Model<float>& model, AdamState* opt) {
  ParamStore<float>& ps = model.params();
  if (int(ck.entries.size()) < ps.n_entries())
    throw DataError("checkpoint: layout mismatch, too few entries");
  for (int i = 0; i < ps.n_entries(); ++i) {
    const ParamInfo& e = ps.info(i);
    const CkptEntry& c = ck.entries[size_t(i)];
    if (c.name != e.name || c.shape != e.shape || c.offset != e.offset * 4)
      throw DataError("checkpoint: layout mismatch at " + c.name);
  }
  size_t n = ps.size();
  std::copy(ck.payload.data(), ck.payload.data() + n, ps.raw().data());
  if (opt) {
    const CkptEntry& m = ck.entry("opt/m");
    const CkptEntry& v = ck.entry("opt/v");
    if (m.count() != n || v.count() != n)
      throw DataError("checkpoint: optimizer state size mismatch");
    opt->m.assign(ck.data_of(m), ck.data_of(m) + n);
    opt->v.assign(ck.data_of(v), ck.data_of(v) + n);
    opt->step = ck.step;
  }
}

static void split_path(const std::string& p, std::string* stem,
                       std::string* ext) {
  size_t slash = p.find_last_of('/');
  size_t dot = p.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    *stem = p;
    ext->clear();
  } else {
    *stem = p.substr(0, dot);
    *ext = p.substr(dot);
  }
}

std::string best_path_of(const std::string& out_path) {
  std::string stem, ext;
  split_path(out_path, &stem, &ext);
  return stem + ".best" + ext;
}

std::string metrics_path_of(const std::string& out_path) {
  std::string stem, ext;
  split_path(out_path, &stem, &ext);
  return stem + ".metrics.csv";
}

TrainResult train(const TrainConfig& cfg, const DatasetManifest& data,
                  const std::string& out_path, const std::string& resume_path) {
  cfg.validate();
  ModelDims dims = ModelDims::preset(cfg.preset);
  Model<float> model(dims, ablation_parse(cfg.ablation));
  DiffusionSchedule sched = linear_schedule(cfg.T, 1e-4, 0.02);

  int n_train = 0;
  for (const auto& r : data.records)
    if (r.split == "train") ++n_train;
  if (n_train == 0) throw DataError("train: dataset has no train records");

  AdamState opt;
  opt.reset(model.params().size());
  std::vector<float> grad;
  int completed = 0;
  double best = std::numeric_limits<double>::max();
  bool resumed = !resume_path.empty();

  if (resumed) {
    Checkpoint ck = load_checkpoint(resume_path);
    TrainConfig old = TrainConfig::parse(ck.config_text);
    if (old.preset != cfg.preset || old.ablation != cfg.ablation)
      throw DataError("train: resume config mismatch, checkpoint is " +
                      old.preset + "/" + old.ablation);
    restore(ck, model, &opt);
    completed = ck.epoch;
    best = ck.best_loss;
  } else {
    Rng init_rng = Rng(cfg.seed).fork("init");
    model.init(init_rng);
  }

  TrainResult res;
  res.final_path = out_path;
  res.best_path = best_path_of(out_path);
  res.metrics_path = metrics_path_of(out_path);

  std::ofstream csv;
  if (resumed && std::ifstream(res.metrics_path).good()) {
    csv.open(res.metrics_path, std::ios::app);
  } else {
    csv.open(res.metrics_path, std::ios::trunc);
    csv << "step,L_rec,L_lapNCE\n";
  }
  if (!csv) throw DataError("train: cannot open metrics file " +
                            res.metrics_path);
  csv << std::setprecision(10);

  int bpe = std::max(1, n_train / cfg.batch_size);
  bool have_first = false;
  for (int e = completed; e < cfg.epochs; ++e) {
    Rng er = Rng(cfg.seed).fork("epoch" + std::to_string(e));
    double tot = 0.0, rec = 0.0;
    for (int b = 0; b < bpe; ++b) {
      TrainBatch batch = build_batch(data, cfg.batch_size, er);
      StepMetrics m = train_step(model, sched, batch, cfg, opt, grad, er);
      csv << opt.step << "," << m.l_rec << "," << m.l_nce << "\n";
      tot += m.total;
      rec += m.l_rec;
    }
    tot /= double(bpe);
    rec /= double(bpe);
    if (!have_first) {
      res.first_epoch_rec = rec;
      have_first = true;
    }
    res.last_epoch_rec = rec;
    completed = e + 1;
    if (tot < best) {
      best = tot;
      save_checkpoint(res.best_path, snapshot(model, opt, cfg, completed, best));
    }
  }

  res.best_loss = best;
  res.steps = opt.step;
  save_checkpoint(out_path, snapshot(model, opt, cfg, completed, best));
  if (!std::ifstream(res.best_path).good())
    save_checkpoint(res.best_path, snapshot(model, opt, cfg, completed, best));
  return res;
}

}  // namespace onedm
