#include "fgmamba/image_io.hpp"

#include <cmath>
#include <fstream>

namespace fgmamba {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) continue;
    tok.push_back(static_cast<char>(c));
    while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#')
      tok.push_back(static_cast<char>(in.get()));
    return tok;
  }
  return tok;
}

}  // namespace

uint8_t quantize_unit(float v) {
  float scaled = v * 255.0f + 0.5f;
  if (!(scaled > 0.0f)) return 0;
  if (scaled >= 255.0f) return 255;
  return static_cast<uint8_t>(scaled);
}

Tensor<float> load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FGM_CHECK(in.good(), "image: cannot open " + path);
  std::string magic = next_token(in);
  FGM_CHECK(magic == "P5" || magic == "P6", "image: " + path + " is not binary PGM/PPM");
  int64_t channels = magic == "P5" ? 1 : 3;
  std::string ws = next_token(in), hs = next_token(in), ms = next_token(in);
  FGM_CHECK(!ws.empty() && !hs.empty() && !ms.empty(), "image: truncated header in " + path);
  int64_t w = std::stoll(ws), h = std::stoll(hs), maxval = std::stoll(ms);
  FGM_CHECK(w >= 1 && h >= 1, "image: bad extents in " + path);
  FGM_CHECK(maxval == 255, "image: only 8-bit rasters are supported (" + path + ")");
  int sep = in.get();  // exactly one whitespace byte separates header from raster
  FGM_CHECK(sep != EOF && std::isspace(sep), "image: missing raster separator in " + path);
  std::vector<uint8_t> raw(static_cast<size_t>(w * h * channels));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  FGM_CHECK(in.gcount() == static_cast<std::streamsize>(raw.size()),
            "image: truncated raster in " + path);
  Tensor<float> out({channels, h, w});
  auto dst = out.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < channels; ++c)
        dst[(c * h + y) * w + x] =
            static_cast<float>(raw[static_cast<size_t>((y * w + x) * channels + c)]) / 255.0f;
  return out;
}

void save_image(const std::string& path, const Tensor<float>& chw) {
  FGM_CHECK(chw.rank() == 3, "image: expected (C, H, W), got " + shape_str(chw.shape()));
  int64_t c = chw.size(0), h = chw.size(1), w = chw.size(2);
  FGM_CHECK(c == 1 || c == 3, "image: channel count must be 1 or 3");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FGM_CHECK(out.good(), "image: cannot open " + path + " for writing");
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << '\n' << 255 << '\n';
  auto src = chw.data();
  std::vector<uint8_t> raw(static_cast<size_t>(w * h * c));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ci = 0; ci < c; ++ci)
        raw[static_cast<size_t>((y * w + x) * c + ci)] = quantize_unit(src[(ci * h + y) * w + x]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  FGM_CHECK(out.good(), "image: write failed for " + path);
}

}  // namespace fgmamba
