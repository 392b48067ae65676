#include "onedm/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "onedm/core/errors.hpp"

namespace onedm {

static unsigned char to_u8(float v) {
  float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return (unsigned char)std::lround(c * 255.f);
}

void save_pgm(const std::string& path, const Image& img) {
  if (img.ndim() != 2) throw DataError("save_pgm: image must be 2d");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("save_pgm: cannot open " + path);
  f << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  std::vector<unsigned char> row(size_t(img.dim(1)));
  for (int y = 0; y < img.dim(0); ++y) {
    for (int x = 0; x < img.dim(1); ++x) row[size_t(x)] = to_u8(img.at(y, x));
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!f) throw DataError("save_pgm: write failed for " + path);
}

// reads one whitespace-delimited token, skipping '#' comments
static int read_pnm_int(std::istream& in, const std::string& path) {
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF) throw DataError("load_pgm: truncated header in " + path);
  int val = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    val = val * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw DataError("load_pgm: bad header token in " + path);
  return val;
}

Image load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_pgm: cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '5') throw DataError("load_pgm: not a P5 file: " + path);
  int w = read_pnm_int(f, path);
  int h = read_pnm_int(f, path);
  int maxval = read_pnm_int(f, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw DataError("load_pgm: unsupported header in " + path);
  // header parsing consumed exactly one whitespace byte after maxval
  Image img({h, w});
  std::vector<unsigned char> buf(size_t(w) * size_t(h));
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (f.gcount() != std::streamsize(buf.size()))
    throw DataError("load_pgm: truncated pixel data in " + path);
  for (size_t i = 0; i < buf.size(); ++i) img.v[i] = float(buf[i]) / 255.f;
  return img;
}

void snap_u8(Image& img) {
  for (auto& p : img.v) p = float(to_u8(p)) / 255.f;
}

Image vstack_with_rule(const Image& a, const Image& b) {
  if (a.dim(1) != b.dim(1)) throw DataError("vstack: width mismatch");
  Image out({a.dim(0) + 1 + b.dim(0), a.dim(1)});
  for (int y = 0; y < a.dim(0); ++y)
    for (int x = 0; x < a.dim(1); ++x) out.at(y, x) = a.at(y, x);
  for (int x = 0; x < a.dim(1); ++x) out.at(a.dim(0), x) = 0.5f;
  for (int y = 0; y < b.dim(0); ++y)
    for (int x = 0; x < b.dim(1); ++x) out.at(a.dim(0) + 1 + y, x) = b.at(y, x);
  return out;
}

}  // namespace onedm
