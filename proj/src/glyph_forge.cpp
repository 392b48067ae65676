#include "onedm/glyph_forge.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "onedm/core/errors.hpp"
#include "onedm/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace onedm {

bool style_valid(const StyleParams& s) {
  return s.slant >= -0.6 && s.slant <= 0.6 && s.thickness >= 1.0 &&
         s.thickness <= 3.0 && s.spacing >= 1.0 && s.spacing <= 8.0 &&
         s.ink >= 0.3 && s.ink <= 1.0 && s.noise >= 0.0 && s.noise <= 0.15;
}

double style_separation(const StyleParams& a, const StyleParams& b) {
  double d = 0.0;
  d = std::max(d, std::abs(a.slant - b.slant) / 1.2);
  d = std::max(d, std::abs(a.thickness - b.thickness) / 2.0);
  d = std::max(d, std::abs(a.spacing - b.spacing) / 7.0);
  d = std::max(d, std::abs(a.ink - b.ink) / 0.7);
  d = std::max(d, std::abs(a.noise - b.noise) / 0.15);
  return d;
}

std::vector<int> DatasetManifest::writer_ids() const {
  std::set<int> s;
  for (const auto& r : records) s.insert(r.writer_id);
  return std::vector<int>(s.begin(), s.end());
}

std::vector<const WordRecord*> DatasetManifest::of_writer(
    int writer_id, const std::string& split) const {
  std::vector<const WordRecord*> out;
  for (const auto& r : records)
    if (r.writer_id == writer_id && (split.empty() || r.split == split))
      out.push_back(&r);
  return out;
}

// margin + shear overhang bookkeeping; shear pivots on the baseline row so
// ascenders lean one way and descenders slightly the other
static void shear_overhang(const StyleParams& s, int& left, int& right) {
  // ink can appear from row 6 (dilated ascender) to row 25 (dilated descender)
  double up = double(kBaselineRow - 6);    // rows above baseline
  double down = double(25 - kBaselineRow); // rows below
  double max_shift = std::max(up * s.slant, -down * s.slant);
  double min_shift = std::min(-down * s.slant, up * s.slant);
  right = int(std::ceil(std::max(0.0, max_shift)));
  left = int(std::ceil(std::max(0.0, -min_shift)));
}

int max_word_len(const StyleParams& s) {
  int ohl, ohr;
  shear_overhang(s, ohl, ohr);
  int adv = kGlyphPx + int(std::lround(s.spacing));
  int avail = kCanvasW - 4 - ohl - ohr + int(std::lround(s.spacing));
  return std::max(0, avail / adv);
}

Image render_word(const std::string& text, const StyleParams& style,
                  uint64_t seed) {
  if (text.empty()) throw DataError("charset error: empty text");
  if (!style_valid(style)) throw DataError("style out of range");
  for (char c : text)
    if (charset_index(c) < 0)
      throw DataError(std::string("charset error: unsupported character '") + c +
                      "'");
  if (int(text.size()) > max_word_len(style))
    throw DataError("layout error: '" + text + "' does not fit the canvas");

  int ohl, ohr;
  shear_overhang(style, ohl, ohr);
  int x0 = 2 + ohl;
  int adv = kGlyphPx + int(std::lround(style.spacing));

  // 1) stamp the upright binary word
  Image mask({kCanvasH, kCanvasW});
  for (size_t i = 0; i < text.size(); ++i) {
    Image g = glyph_canvas(text[i]);
    int gx = x0 + int(i) * adv;
    for (int y = 0; y < kGlyphPx; ++y)
      for (int x = 0; x < kGlyphPx; ++x)
        if (g.at(y, x) > 0.f) mask.at(8 + y, gx + x) = 1.f;
  }

  // 2) thicken: coverage = clamp(r + 1 - dist_to_stroke, 0, 1) with
  //    r = thickness - 1, so thickness 1 reproduces the font exactly
  float r = float(style.thickness) - 1.f;
  Image thick({kCanvasH, kCanvasW});
  for (int y = 0; y < kCanvasH; ++y)
    for (int x = 0; x < kCanvasW; ++x) {
      if (mask.at(y, x) > 0.f) {
        thick.at(y, x) = 1.f;
        continue;
      }
      if (r <= 0.f) continue;
      float d2min = 1e9f;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= kCanvasH || xx < 0 || xx >= kCanvasW) continue;
          if (mask.at(yy, xx) > 0.f)
            d2min = std::min(d2min, float(dy * dy + dx * dx));
        }
      if (d2min < 1e8f) {
        float cov = r + 1.f - std::sqrt(d2min);
        thick.at(y, x) = std::min(1.f, std::max(0.f, cov));
      }
    }

  // 3) shear each row about the baseline (bilinear; slant 0 is an exact copy)
  Image out({kCanvasH, kCanvasW});
  for (int y = 0; y < kCanvasH; ++y) {
    float off = float(style.slant) * float(kBaselineRow - y);
    for (int x = 0; x < kCanvasW; ++x) {
      float xs = float(x) - off;
      int xi = int(std::floor(xs));
      float f = xs - float(xi);
      float a = (xi >= 0 && xi < kCanvasW) ? thick.at(y, xi) : 0.f;
      float b = (xi + 1 >= 0 && xi + 1 < kCanvasW) ? thick.at(y, xi + 1) : 0.f;
      out.at(y, x) = (1.f - f) * a + f * b;
    }
  }

  // 4) ink level, then clipped background speckle
  for (auto& p : out.v) p *= float(style.ink);
  if (style.noise > 0.0) {
    Rng rng(seed);
    for (auto& p : out.v) {
      p += float(style.noise * rng.uniform());
      p = std::min(1.f, std::max(0.f, p));
    }
  }
  snap_u8(out);
  return out;
}

static StyleParams sample_style(Rng& rng) {
  StyleParams s;
  s.slant = rng.uniform(-0.6, 0.6);
  s.thickness = rng.uniform(1.0, 3.0);
  s.spacing = rng.uniform(1.0, 8.0);
  s.ink = rng.uniform(0.3, 1.0);
  s.noise = rng.uniform(0.0, 0.15);
  return s;
}

DatasetManifest forge_corpus(int n_writers, int words_per_writer, uint64_t seed,
                             int test_writers, int test_words) {
  if (n_writers < 1 || words_per_writer < 1)
    throw DataError("forge_corpus: writer/word counts must be positive");
  if (test_writers < 0) test_writers = std::max(1, n_writers / 4);
  if (test_words < 0) test_words = std::max(2, words_per_writer / 4);

  DatasetManifest m;
  m.seed = seed;
  Rng style_rng = Rng(seed).fork("styles");
  Rng text_rng = Rng(seed).fork("texts");
  Rng noise_rng = Rng(seed).fork("noise");

  std::vector<StyleParams> writers;
  int total_writers = n_writers + test_writers;
  for (int w = 0; w < total_writers; ++w) {
    StyleParams cand;
    int tries = 0;
    for (;;) {
      cand = sample_style(style_rng);
      bool ok = true;
      for (const auto& prev : writers)
        if (style_separation(cand, prev) <= 0.05) {
          ok = false;
          break;
        }
      if (ok) break;
      if (++tries > 10000)
        throw DataError("forge_corpus: cannot separate this many writers");
    }
    writers.push_back(cand);
  }

  for (int w = 0; w < total_writers; ++w) {
    bool is_test = w >= n_writers;
    int n_words = is_test ? test_words : words_per_writer;
    int len_cap = std::min(7, max_word_len(writers[w]));
    std::set<std::string> seen;
    for (int i = 0; i < n_words; ++i) {
      std::string text;
      for (int tries = 0; tries < 20; ++tries) {
        int len = int(text_rng.randint(1, len_cap));
        text.clear();
        for (int k = 0; k < len; ++k)
          text += kCharset[text_rng.randint(0, 35)];
        if (seen.insert(text).second) break;
      }
      WordRecord r;
      r.id = "w" + std::to_string(w) + "_" + std::to_string(i);
      r.writer_id = w;
      r.text = text;
      r.style = writers[w];
      r.split = is_test ? "test" : "train";
      r.image = render_word(text, r.style, noise_rng.raw());
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

static json style_to_json(const StyleParams& s) {
  return json{{"slant", s.slant},
              {"thickness", s.thickness},
              {"spacing", s.spacing},
              {"ink", s.ink},
              {"noise", s.noise}};
}

static StyleParams style_from_json(const json& j) {
  StyleParams s;
  s.slant = j.at("slant").get<double>();
  s.thickness = j.at("thickness").get<double>();
  s.spacing = j.at("spacing").get<double>();
  s.ink = j.at("ink").get<double>();
  s.noise = j.at("noise").get<double>();
  return s;
}

void save_dataset(const DatasetManifest& m, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "img");
  json meta{{"seed", m.seed},
            {"charset", m.charset},
            {"canvas", {{"h", kCanvasH}, {"w", kCanvasW}}}};
  std::ofstream mf(fs::path(dir) / "meta.json");
  mf << meta.dump(2) << "\n";

  std::ofstream man(fs::path(dir) / "manifest.jsonl");
  for (const auto& r : m.records) {
    std::string rel = "img/" + r.id + ".pgm";
    save_pgm((fs::path(dir) / rel).string(), r.image);
    json line{{"id", r.id},         {"writer_id", r.writer_id},
              {"text", r.text},     {"style", style_to_json(r.style)},
              {"path", rel},        {"split", r.split}};
    man << line.dump() << "\n";
  }
  if (!man) throw DataError("save_dataset: write failed in " + dir);
}

DatasetManifest load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw DataError("load_dataset: missing meta.json in " + dir);
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    throw DataError(std::string("load_dataset: bad meta.json: ") + e.what());
  }

  DatasetManifest m;
  m.seed = meta.at("seed").get<uint64_t>();
  m.charset = meta.at("charset").get<std::string>();
  if (m.charset != kCharset)
    throw DataError("load_dataset: charset mismatch");

  std::ifstream man(fs::path(dir) / "manifest.jsonl");
  if (!man) throw DataError("load_dataset: missing manifest.jsonl in " + dir);
  std::string line;
  std::set<std::string> ids;
  int lineno = 0;
  while (std::getline(man, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("load_dataset: manifest.jsonl line " +
                      std::to_string(lineno) + ": " + e.what());
    }
    WordRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      r.writer_id = j.at("writer_id").get<int>();
      r.text = j.at("text").get<std::string>();
      r.style = style_from_json(j.at("style"));
      r.split = j.at("split").get<std::string>();
      std::string rel = j.at("path").get<std::string>();
      r.image = load_pgm((fs::path(dir) / rel).string());
    } catch (const json::exception& e) {
      throw DataError("load_dataset: record " + r.id + ": " + e.what());
    }
    if (!ids.insert(r.id).second)
      throw DataError("load_dataset: duplicate id " + r.id);
    if (r.image.dim(0) != kCanvasH || r.image.dim(1) != kCanvasW)
      throw DataError("load_dataset: bad canvas dims for " + r.id);
    if (r.split != "train" && r.split != "test")
      throw DataError("load_dataset: bad split for " + r.id);
    for (char c : r.text)
      if (charset_index(c) < 0)
        throw DataError("load_dataset: bad text for " + r.id);
    if (!style_valid(r.style))
      throw DataError("load_dataset: style out of range for " + r.id);
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw DataError("load_dataset: empty manifest");
  return m;
}

}  // namespace onedm
