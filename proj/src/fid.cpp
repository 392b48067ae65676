#include "onedm/eval/fid.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <sstream>

#include "onedm/train/trainer.hpp"

namespace onedm {

FeatureNet::FeatureNet(int H, int W, int n_classes)
    : H_(H), W_(W), ncls_(n_classes) {
  if (H % 8 != 0 || W % 8 != 0)
    throw UsageError("feature net: canvas must be divisible by 8");
  if (n_classes < 2) throw UsageError("feature net: need at least 2 classes");
  c1w_ = ps_.add("c1/w", {16, 1, 3, 3}, Init::KaimingConv);
  c1b_ = ps_.add("c1/b", {16}, Init::Zeros);
  c2w_ = ps_.add("c2/w", {32, 16, 3, 3}, Init::KaimingConv);
  c2b_ = ps_.add("c2/b", {32}, Init::Zeros);
  c3w_ = ps_.add("c3/w", {kFeatureDim, 32, 3, 3}, Init::KaimingConv);
  c3b_ = ps_.add("c3/b", {kFeatureDim}, Init::Zeros);
  f1w_ = ps_.add("f1/w", {kFeatureDim, kFeatureDim}, Init::XavierLinear);
  f1b_ = ps_.add("f1/b", {kFeatureDim}, Init::Zeros);
  f2w_ = ps_.add("f2/w", {kFeatureDim, n_classes}, Init::XavierLinear);
  f2b_ = ps_.add("f2/b", {n_classes}, Init::Zeros);
  ps_.finalize();
}

int FeatureNet::forward_features(Tape<float>& t, const Image& img) const {
  if (img.dim(0) != H_ || img.dim(1) != W_)
    throw DataError("feature net: image does not match canvas");
  int x = t.constant(Tensor<float>({1, H_, W_}, img.v));
  x = t.conv2d(x, t.param(c1w_), t.param(c1b_), 2);
  x = t.silu(x);
  x = t.conv2d(x, t.param(c2w_), t.param(c2b_), 2);
  x = t.silu(x);
  x = t.conv2d(x, t.param(c3w_), t.param(c3b_), 2);
  x = t.silu(x);
  x = t.chw_to_tokens(x);
  x = t.mean_rows(x);
  x = t.reshape(x, {1, kFeatureDim});
  return t.linear(x, t.param(f1w_), t.param(f1b_));
}

int FeatureNet::forward_logits(Tape<float>& t, int feat) const {
  int h = t.silu(feat);
  return t.linear(h, t.param(f2w_), t.param(f2b_));
}

Tensor<float> FeatureNet::features(const Image& img) const {
  Tape<float> t(&ps_, nullptr);
  return t.val(forward_features(t, img));
}

void FeatureNet::save(const std::string& path) const {
  Checkpoint ck;
  std::ostringstream cfg;
  cfg << "h=" << H_ << "\nw=" << W_ << "\nn_classes=" << ncls_ << "\n";
  ck.config_text = cfg.str();
  for (const auto& e : ps_.entries())
    ck.add(e.name, e.shape, ps_.raw().data() + e.offset);
  save_checkpoint(path, ck);
}

FeatureNet FeatureNet::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  int h = 0, w = 0, ncls = 0;
  std::istringstream in(ck.config_text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    int v = std::stoi(line.substr(eq + 1));
    if (k == "h") h = v;
    else if (k == "w") w = v;
    else if (k == "n_classes") ncls = v;
  }
  if (h <= 0 || w <= 0 || ncls <= 0)
    throw DataError("feature net: checkpoint missing dimensions");
  FeatureNet net(h, w, ncls);
  const auto& live = net.ps_.entries();
  if (ck.entries.size() != live.size())
    throw DataError("feature net: checkpoint layout mismatch");
  for (size_t i = 0; i < live.size(); ++i) {
    const auto& c = ck.entries[i];
    const auto& e = live[i];
    if (c.name != e.name || c.shape != e.shape ||
        c.offset != int64_t(e.offset) * 4)
      throw DataError("feature net: checkpoint layout mismatch at " + c.name);
  }
  std::copy(ck.payload.begin(), ck.payload.end(), net.ps_.raw().begin());
  return net;
}

FeatureNet train_feature_net(const DatasetManifest& data, int epochs,
                             uint64_t seed, double* acc_out) {
  std::vector<const WordRecord*> recs;
  std::map<int, int> label_of;
  for (const auto& r : data.records)
    if (r.split == "train") {
      recs.push_back(&r);
      label_of.emplace(r.writer_id, 0);
    }
  if (recs.size() < 2)
    throw DataError("feature net: need at least 2 training images");
  if (label_of.size() < 2)
    throw DataError("feature net: need at least 2 writers");
  int next = 0;
  for (auto& [wid, lab] : label_of) lab = next++;

  int H = recs[0]->image.dim(0), W = recs[0]->image.dim(1);
  FeatureNet net(H, W, int(label_of.size()));
  Rng init_rng = Rng(seed).fork("finit");
  net.init(init_rng);

  AdamState opt;
  opt.reset(net.params().size());
  std::vector<float> grad;
  std::vector<size_t> order(recs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  const int B = int(std::min<size_t>(16, recs.size()));

  for (int e = 0; e < epochs; ++e) {
    Rng er = Rng(seed).fork("fepoch" + std::to_string(e));
    er.shuffle(order.begin(), order.end());
    for (size_t at = 0; at + size_t(B) <= order.size(); at += size_t(B)) {
      grad.assign(net.params().size(), 0.0f);
      Tape<float> t(&net.params(), &grad);
      std::vector<int> rows, labels;
      for (int i = 0; i < B; ++i) {
        const WordRecord* r = recs[order[at + size_t(i)]];
        int feat = net.forward_features(t, r->image);
        rows.push_back(net.forward_logits(t, feat));
        labels.push_back(label_of.at(r->writer_id));
      }
      int logits = t.concat_rows(rows);
      int loss = t.softmax_xent(logits, labels);
      t.backward({{loss, Tensor<float>({1}, {1.0f})}});
      adamw_update(net.params(), grad, opt, 1e-3, 1e-4);
    }
  }

  if (acc_out) {
    int hit = 0;
    for (const WordRecord* r : recs) {
      Tape<float> t(&net.params(), nullptr);
      Tensor<float> lg = t.val(net.forward_logits(t, net.forward_features(t, r->image)));
      int arg = 0;
      for (int j = 1; j < int(lg.numel()); ++j)
        if (lg[size_t(j)] > lg[size_t(arg)]) arg = j;
      if (arg == label_of.at(r->writer_id)) ++hit;
    }
    *acc_out = double(hit) / double(recs.size());
  }
  return net;
}

namespace {

using Mat = Eigen::MatrixXd;

// symmetric PSD square root with the explicit eigenvalue policy
Mat sqrt_psd(const Mat& m, const char* who) {
  Mat s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.info() != Eigen::Success)
    throw NumericError(std::string(who) + ": eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues();
  for (int i = 0; i < lam.size(); ++i) {
    if (lam[i] < -1e-6)
      throw NumericError(std::string(who) +
                         ": negative eigenvalue beyond tolerance");
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return es.eigenvectors() * lam.asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace

double frechet_from_stats(const std::vector<double>& mu1,
                          const std::vector<double>& cov1,
                          const std::vector<double>& mu2,
                          const std::vector<double>& cov2, int dim) {
  size_t d = size_t(dim);
  if (dim < 1 || mu1.size() != d || mu2.size() != d ||
      cov1.size() != d * d || cov2.size() != d * d)
    throw UsageError("frechet: moment sizes do not match dim");

  // the closed form is symmetric in its arguments; evaluating with the sides
  // in a canonical order makes the floating-point value exactly symmetric too
  const std::vector<double>* ma = &mu1;
  const std::vector<double>* ca = &cov1;
  const std::vector<double>* mb = &mu2;
  const std::vector<double>* cb = &cov2;
  bool swap_sides =
      std::lexicographical_compare(mb->begin(), mb->end(), ma->begin(), ma->end()) ||
      (*mb == *ma &&
       std::lexicographical_compare(cb->begin(), cb->end(), ca->begin(), ca->end()));
  if (swap_sides) {
    std::swap(ma, mb);
    std::swap(ca, cb);
  }

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat s1 = Eigen::Map<const RowMat>(ca->data(), dim, dim);
  Mat s2 = Eigen::Map<const RowMat>(cb->data(), dim, dim);

  double dmu = 0.0;
  for (size_t i = 0; i < d; ++i) {
    double t = (*ma)[i] - (*mb)[i];
    dmu += t * t;
  }

  Mat r1 = sqrt_psd(s1, "frechet");
  Mat inner = r1 * s2 * r1;
  Mat root = sqrt_psd(inner, "frechet");

  double fid = dmu + s1.trace() + s2.trace() - 2.0 * root.trace();
  return std::max(fid, 0.0);
}

void feature_moments(const std::vector<const Image*>& imgs,
                     const FeatureNet& net, std::vector<double>* mu,
                     std::vector<double>* cov) {
  int n = int(imgs.size());
  if (n < 2) throw DataError("feature_moments: need at least 2 images");
  const int D = FeatureNet::kFeatureDim;
  std::vector<std::vector<double>> f(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(D)));
  for (int i = 0; i < n; ++i) {
    Tensor<float> ft = net.features(*imgs[size_t(i)]);
    for (int j = 0; j < D; ++j) f[size_t(i)][size_t(j)] = double(ft[size_t(j)]);
  }
  mu->assign(size_t(D), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < D; ++j) (*mu)[size_t(j)] += f[size_t(i)][size_t(j)];
  for (auto& v : *mu) v /= double(n);
  cov->assign(size_t(D) * D, 0.0);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < D; ++a) {
      double da = f[size_t(i)][size_t(a)] - (*mu)[size_t(a)];
      for (int b = 0; b < D; ++b)
        (*cov)[size_t(a) * D + b] +=
            da * (f[size_t(i)][size_t(b)] - (*mu)[size_t(b)]);
    }
  for (auto& v : *cov) v /= double(n - 1);
}

FidLiteReport fid_lite(const std::vector<const Image*>& real,
                       const std::vector<const Image*>& gen,
                       const FeatureNet& net) {
  if (real.size() < 50 || gen.size() < 50)
    throw DataError("fid_lite: need at least 50 images per side");
  std::vector<double> mu1, cov1, mu2, cov2;
  feature_moments(real, net, &mu1, &cov1);
  feature_moments(gen, net, &mu2, &cov2);
  FidLiteReport rep;
  rep.feature_dim = FeatureNet::kFeatureDim;
  rep.n_real = int(real.size());
  rep.n_gen = int(gen.size());
  rep.fid = frechet_from_stats(mu1, cov1, mu2, cov2, FeatureNet::kFeatureDim);
  return rep;
}

}  // namespace onedm
