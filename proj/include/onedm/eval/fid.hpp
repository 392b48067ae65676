#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "onedm/glyph_forge.hpp"
#include "onedm/image.hpp"
#include "onedm/nn/tape.hpp"
#include "onedm/train/checkpoint.hpp"

namespace onedm {

struct FidLiteReport {
  double fid = 0.0;
  int feature_dim = 0;
  int n_real = 0;
  int n_gen = 0;
};

// Small writer classifier whose 64-dim penultimate layer is the feature map
// for the Frechet score. Trained on the corpus itself, so scores are
// comparable across variants of this pipeline and nothing else.
class FeatureNet {
 public:
  static constexpr int kFeatureDim = 64;

  FeatureNet(int H, int W, int n_classes);

  ParamStore<float>& params() { return ps_; }
  const ParamStore<float>& params() const { return ps_; }
  void init(Rng& rng) { ps_.init_params(rng); }

  int n_classes() const { return ncls_; }
  int canvas_h() const { return H_; }
  int canvas_w() const { return W_; }

  // penultimate feature node (1, 64) for one [0,1] image
  int forward_features(Tape<float>& t, const Image& img) const;
  // classifier head on top of a feature node
  int forward_logits(Tape<float>& t, int feat) const;

  // inference-only feature vector
  Tensor<float> features(const Image& img) const;

  void save(const std::string& path) const;
  static FeatureNet load(const std::string& path);

 private:
  int H_ = 0, W_ = 0, ncls_ = 0;
  ParamStore<float> ps_;
  ParamId c1w_, c1b_, c2w_, c2b_, c3w_, c3b_, f1w_, f1b_, f2w_, f2b_;
};

// Writer classification on the train split; deterministic in the seed.
// Returns the trained net and leaves the final train accuracy in *acc_out
// when given.
FeatureNet train_feature_net(const DatasetManifest& data, int epochs,
                             uint64_t seed, double* acc_out = nullptr);

// Closed-form Frechet distance between two Gaussians given as moments:
// |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)). Covariances are dense
// row-major (dim x dim). The matrix square root goes through a symmetric
// eigendecomposition; eigenvalues below -1e-6 raise NumericError, small
// negatives clamp to zero. The arguments are put into a canonical order
// first so the floating-point result is exactly symmetric.
double frechet_from_stats(const std::vector<double>& mu1,
                          const std::vector<double>& cov1,
                          const std::vector<double>& mu2,
                          const std::vector<double>& cov2, int dim);

// Feature moments of an image set: mean and unbiased covariance.
void feature_moments(const std::vector<const Image*>& imgs,
                     const FeatureNet& net, std::vector<double>* mu,
                     std::vector<double>* cov);

FidLiteReport fid_lite(const std::vector<const Image*>& real,
                       const std::vector<const Image*>& gen,
                       const FeatureNet& net);

}  // namespace onedm
