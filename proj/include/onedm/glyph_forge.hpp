#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "onedm/core/rng.hpp"
#include "onedm/core/tensor.hpp"

namespace onedm {

inline constexpr const char* kCharset = "abcdefghijklmnopqrstuvwxyz0123456789";
inline constexpr int kCanvasH = 32;
inline constexpr int kCanvasW = 128;
inline constexpr int kGlyphPx = 16;     // 8x8 font cells scaled 2x
inline constexpr int kBaselineRow = 23; // glyph box occupies rows 8..23

// -1 if not in charset
int charset_index(char c);

// 16x16 binary glyph canvas (the content branch consumes these too)
Image glyph_canvas(char c);

struct StyleParams {
  double slant = 0.0;      // horizontal shift per vertical px, [-0.6, 0.6]
  double thickness = 1.0;  // stroke radius px, [1, 3]; 1 leaves the font as-is
  double spacing = 1.0;    // inter-glyph gap px, [1, 8]
  double ink = 1.0;        // foreground darkness, [0.3, 1]
  double noise = 0.0;      // background speckle amplitude, [0, 0.15]
};

bool style_valid(const StyleParams& s);

// L-inf distance after normalizing every field to [0,1] by its range
double style_separation(const StyleParams& a, const StyleParams& b);

struct WordRecord {
  std::string id;
  int writer_id = -1;
  std::string text;
  StyleParams style;
  Image image;
  std::string split;  // "train" | "test"
};

struct DatasetManifest {
  uint64_t seed = 0;
  std::string charset = kCharset;
  std::vector<WordRecord> records;

  std::vector<int> writer_ids() const;
  std::vector<const WordRecord*> of_writer(int writer_id, const std::string& split) const;
};

// longest word that fits the canvas for this style
int max_word_len(const StyleParams& s);

// Pure function of its arguments; the seed only drives the speckle noise.
// Throws DataError("charset error ...") / DataError("layout error ...").
Image render_word(const std::string& text, const StyleParams& style, uint64_t seed);

// Writers are drawn uniformly within the StyleParams ranges, re-drawn until
// separated from all previous writers by style_separation > 0.05. Test
// writers are unseen (separated from train writers as well).
DatasetManifest forge_corpus(int n_writers, int words_per_writer, uint64_t seed,
                             int test_writers = -1, int test_words = -1);

// dir layout: meta.json, manifest.jsonl, img/<id>.pgm
void save_dataset(const DatasetManifest& m, const std::string& dir);
DatasetManifest load_dataset(const std::string& dir);

}  // namespace onedm
