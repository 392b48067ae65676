#include "onedm/eval/measures.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "onedm/core/errors.hpp"
#include "onedm/glyph_forge.hpp"

namespace onedm {

namespace {

float mask_threshold(const Image& img, const char* who) {
  float mx = 0.f;
  for (float p : img.v) mx = std::max(mx, p);
  if (mx <= 0.f) throw DataError(std::string(who) + ": blank image");
  return 0.5f * mx;
}

}  // namespace

double estimate_slant(const Image& img) {
  float tau = mask_threshold(img, "estimate_slant");
  int H = img.dim(0), W = img.dim(1);

  // generous bins for columns shifted by up to 0.8 * canvas height
  int margin = int(std::ceil(0.8 * H)) + 2;
  std::vector<double> bins(static_cast<size_t>(W + 2 * margin));

  double best_score = -1.0, best_s = 0.0;
  for (int k = 0; k <= 40; ++k) {
    for (int sign = (k == 0 ? 1 : -1); sign <= 1; sign += 2) {
      double s = 0.02 * k * sign;
      std::fill(bins.begin(), bins.end(), 0.0);
      for (int y = 0; y < H; ++y) {
        double off = s * double(kBaselineRow - y);
        for (int x = 0; x < W; ++x) {
          if (img.at(y, x) < tau) continue;
          int c = int(std::lround(double(x) - off)) + margin;
          bins[size_t(c)] += 1.0;
        }
      }
      double score = 0.0;
      for (double b : bins) score += b * b;
      // strict improvement keeps earlier (smaller magnitude) candidates on ties
      if (score > best_score) {
        best_score = score;
        best_s = s;
      }
    }
  }
  return best_s;
}

double estimate_thickness(const Image& img) {
  float tau = mask_threshold(img, "estimate_thickness");
  int H = img.dim(0), W = img.dim(1);
  auto on = [&](int y, int x) {
    return y >= 0 && y < H && x >= 0 && x < W && img.at(y, x) >= tau;
  };
  long area = 0, perim = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!on(y, x)) continue;
      ++area;
      perim += !on(y - 1, x);
      perim += !on(y + 1, x);
      perim += !on(y, x - 1);
      perim += !on(y, x + 1);
    }
  if (perim == 0) return 0.0;  // unreachable for finite ink, keeps math safe
  return 2.0 * double(area) / double(perim);
}

double estimate_ink(const Image& img) {
  float tau = mask_threshold(img, "estimate_ink");
  double sum = 0.0;
  long n = 0;
  for (float p : img.v)
    if (p >= tau) {
      sum += double(p);
      ++n;
    }
  return sum / double(n);
}

namespace {

// bilinear deskew: undo a shear of `s` about the baseline row
Image deskew(const Image& img, double s) {
  int H = img.dim(0), W = img.dim(1);
  Image out({H, W});
  for (int y = 0; y < H; ++y) {
    double off = s * double(kBaselineRow - y);
    for (int x = 0; x < W; ++x) {
      double xs = double(x) + off;
      int xi = int(std::floor(xs));
      double f = xs - double(xi);
      double a = (xi >= 0 && xi < W) ? img.at(y, xi) : 0.0;
      double b = (xi + 1 >= 0 && xi + 1 < W) ? img.at(y, xi + 1) : 0.0;
      out.at(y, x) = float((1.0 - f) * a + f * b);
    }
  }
  return out;
}

struct Window {
  double px[kGlyphPx * kGlyphPx];
  double mean = 0.0, var = 0.0;
};

bool grab_window(const Image& img, int y0, int x0, Window* w) {
  int H = img.dim(0), W = img.dim(1);
  double sum = 0.0;
  for (int y = 0; y < kGlyphPx; ++y)
    for (int x = 0; x < kGlyphPx; ++x) {
      int yy = y0 + y, xx = x0 + x;
      double v =
          (yy >= 0 && yy < H && xx >= 0 && xx < W) ? double(img.at(yy, xx)) : 0.0;
      w->px[y * kGlyphPx + x] = v;
      sum += v;
    }
  int n = kGlyphPx * kGlyphPx;
  w->mean = sum / n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = w->px[i] - w->mean;
    var += d * d;
  }
  w->var = var;
  return var > 1e-12;
}

struct TemplateBank {
  // zero-mean templates with their variances, in charset order
  std::vector<std::vector<double>> t;
  std::vector<double> var;

  TemplateBank() {
    int n = kGlyphPx * kGlyphPx;
    for (const char* c = kCharset; *c; ++c) {
      Image g = glyph_canvas(*c);
      std::vector<double> z(static_cast<size_t>(n));
      double mean = 0.0;
      for (int i = 0; i < n; ++i) mean += double(g[size_t(i)]);
      mean /= n;
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        z[size_t(i)] = double(g[size_t(i)]) - mean;
        v += z[size_t(i)] * z[size_t(i)];
      }
      t.push_back(std::move(z));
      var.push_back(v);
    }
  }
};

double ncc(const Window& w, const std::vector<double>& tz, double tvar) {
  if (w.var <= 1e-12 || tvar <= 1e-12) return -2.0;
  double dot = 0.0;
  int n = kGlyphPx * kGlyphPx;
  for (int i = 0; i < n; ++i) dot += (w.px[i] - w.mean) * tz[size_t(i)];
  return dot / std::sqrt(w.var * tvar);
}

}  // namespace

double content_accuracy(const Image& img, const std::string& text) {
  if (text.empty()) throw DataError("content_accuracy: empty text");
  for (char c : text)
    if (charset_index(c) < 0)
      throw DataError(
          std::string("content_accuracy: character not in charset '") + c +
          "'");
  static const TemplateBank bank;
  const int G = int(text.size());
  const int n_tpl = int(bank.t.size());

  double s_hat = 0.0;
  try {
    s_hat = estimate_slant(img);
  } catch (const DataError&) {
    return 0.0;  // blank image: no slot can match
  }
  const double shears[5] = {0.0, s_hat, s_hat - 0.04, s_hat + 0.04,
                            s_hat * 0.5};

  double best_total = -1e18;
  std::vector<int> best_pick(static_cast<size_t>(G), -1);

  for (double s : shears) {
    Image d = deskew(img, s);
    float tau = 0.0;
    {
      float mx = 0.f;
      for (float p : d.v) mx = std::max(mx, p);
      if (mx <= 0.f) continue;
      tau = 0.5f * mx;
    }
    int W = d.dim(1);
    int bx0 = W, bx1 = -1;
    for (int y = 0; y < d.dim(0); ++y)
      for (int x = 0; x < W; ++x)
        if (d.at(y, x) >= tau) {
          bx0 = std::min(bx0, x);
          bx1 = std::max(bx1, x);
        }
    if (bx1 < 0) continue;

    // renderer layout family: glyph cells at x_start + i*adv, glyphs sit in
    // rows 8..23; thickness can pad the ink box by a couple of pixels
    for (int adv = kGlyphPx + 1; adv <= kGlyphPx + 8; ++adv) {
      if (G == 1 && adv > kGlyphPx + 1) break;  // advance is moot for one slot
      for (int xs = bx0 - 14; xs <= bx0 + 2; ++xs) {
        double total = 0.0;
        std::vector<int> pick(static_cast<size_t>(G), -1);
        for (int i = 0; i < G; ++i) {
          double slot_best = -1e9;
          int slot_pick = -1;
          for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
              Window w;
              if (!grab_window(d, 8 + dy, xs + i * adv + dx, &w)) continue;
              for (int k = 0; k < n_tpl; ++k) {
                double c = ncc(w, bank.t[size_t(k)], bank.var[size_t(k)]);
                if (c > slot_best) {
                  slot_best = c;
                  slot_pick = k;
                }
              }
            }
          if (slot_pick < 0) {
            slot_best = -4.0;  // slot saw only flat windows, cannot match
          }
          total += slot_best;
          pick[size_t(i)] = slot_pick;
        }
        if (total > best_total) {
          best_total = total;
          best_pick = pick;
        }
      }
    }
  }

  int hits = 0;
  for (int i = 0; i < G; ++i)
    if (best_pick[size_t(i)] == charset_index(text[size_t(i)])) ++hits;
  return double(hits) / double(G);
}

}  // namespace onedm
