#include "onedm/core/errors.hpp"
#include "onedm/glyph_forge.hpp"

namespace onedm {

// 8x8 bitmaps for [a-z0-9], drawn by hand. Baseline sits on row 6; g/j/p/q/y
// use row 7 as descender space.
static const char* const kFont8[36][8] = {
    // a
    {"........", "........", ".#####..", "......#.", ".######.", "#.....#.",
     ".######.", "........"},
    // b
    {"#.......", "#.......", "#.####..", "##....#.", "#.....#.", "##....#.",
     "#.####..", "........"},
    // c
    {"........", "........", ".#####..", "#.......", "#.......", "#.......",
     ".#####..", "........"},
    // d
    {"......#.", "......#.", ".####.#.", "#....##.", "#.....#.", "#....##.",
     ".####.#.", "........"},
    // e
    {"........", "........", ".####...", "#....#..", "######..", "#.......",
     ".#####..", "........"},
    // f
    {"..###...", ".#......", ".#......", "####....", ".#......", ".#......",
     ".#......", "........"},
    // g
    {"........", "........", ".####.#.", "#....##.", "#.....#.", ".######.",
     "......#.", ".#####.."},
    // h
    {"#.......", "#.......", "#.####..", "##....#.", "#.....#.", "#.....#.",
     "#.....#.", "........"},
    // i
    {"..#.....", "........", ".##.....", "..#.....", "..#.....", "..#.....",
     ".###....", "........"},
    // j
    {"....#...", "........", "...##...", "....#...", "....#...", "....#...",
     "#...#...", ".###...."},
    // k
    {"#.......", "#.......", "#...#...", "#..#....", "###.....", "#..#....",
     "#...#...", "........"},
    // l
    {".##.....", "..#.....", "..#.....", "..#.....", "..#.....", "..#.....",
     ".###....", "........"},
    // m
    {"........", "........", "##.###..", "#..#..#.", "#..#..#.", "#..#..#.",
     "#..#..#.", "........"},
    // n
    {"........", "........", "#.####..", "##....#.", "#.....#.", "#.....#.",
     "#.....#.", "........"},
    // o
    {"........", "........", ".#####..", "#.....#.", "#.....#.", "#.....#.",
     ".#####..", "........"},
    // p
    {"........", "........", "#.####..", "##....#.", "##....#.", "#.####..",
     "#.......", "#......."},
    // q
    {"........", "........", ".####.#.", "#....##.", "#....##.", ".####.#.",
     "......#.", "......#."},
    // r
    {"........", "........", "#.###...", "##...#..", "#.......", "#.......",
     "#.......", "........"},
    // s
    {"........", "........", ".#####..", "#.......", ".####...", ".....#..",
     "#####...", "........"},
    // t
    {"..#.....", "..#.....", "#####...", "..#.....", "..#.....", "..#.....",
     "...##...", "........"},
    // u
    {"........", "........", "#.....#.", "#.....#.", "#.....#.", "#....##.",
     ".####.#.", "........"},
    // v
    {"........", "........", "#.....#.", "#.....#.", ".#...#..", ".#...#..",
     "..###...", "........"},
    // w
    {"........", "........", "#..#..#.", "#..#..#.", "#..#..#.", "#..#..#.",
     ".##.##..", "........"},
    // x
    {"........", "........", "#....#..", ".#..#...", "..##....", ".#..#...",
     "#....#..", "........"},
    // y
    {"........", "........", "#.....#.", "#.....#.", "#....##.", ".####.#.",
     "......#.", ".#####.."},
    // z
    {"........", "........", "######..", "....#...", "...#....", "..#.....",
     "######..", "........"},
    // 0
    {".#####..", "#....##.", "#...#.#.", "#..#..#.", "#.#...#.", "##....#.",
     ".#####..", "........"},
    // 1
    {"...#....", "..##....", "...#....", "...#....", "...#....", "...#....",
     "..###...", "........"},
    // 2
    {".#####..", "#.....#.", "......#.", "....##..", "..##....", ".#......",
     "#######.", "........"},
    // 3
    {".#####..", "#.....#.", "......#.", "...###..", "......#.", "#.....#.",
     ".#####..", "........"},
    // 4
    {"....##..", "...#.#..", "..#..#..", ".#...#..", "#######.", ".....#..",
     ".....#..", "........"},
    // 5
    {"#######.", "#.......", "#####...", ".....#..", "......#.", "#.....#.",
     ".#####..", "........"},
    // 6
    {"..####..", ".#......", "#.......", "######..", "#.....#.", "#.....#.",
     ".#####..", "........"},
    // 7
    {"#######.", "......#.", ".....#..", "....#...", "...#....", "..#.....",
     "..#.....", "........"},
    // 8
    {".#####..", "#.....#.", "#.....#.", ".#####..", "#.....#.", "#.....#.",
     ".#####..", "........"},
    // 9
    {".#####..", "#.....#.", "#.....#.", ".######.", "......#.", ".....#..",
     ".####...", "........"},
};

int charset_index(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  return -1;
}

Image glyph_canvas(char c) {
  int gi = charset_index(c);
  if (gi < 0)
    throw DataError(std::string("charset error: unsupported character '") + c + "'");
  Image out({kGlyphPx, kGlyphPx});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      if (kFont8[gi][y][x] == '#') {
        out.at(2 * y, 2 * x) = 1.f;
        out.at(2 * y, 2 * x + 1) = 1.f;
        out.at(2 * y + 1, 2 * x) = 1.f;
        out.at(2 * y + 1, 2 * x + 1) = 1.f;
      }
  return out;
}

}  // namespace onedm
