#include "dstu/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "dstu/rng.hpp"

namespace dstu {

namespace {

constexpr std::size_t kGrid = 5;
constexpr double kBackgroundLo = 0.1, kBackgroundHi = 0.6;
constexpr double kBlobLo = 0.35, kBlobHi = 0.9;
constexpr double kTexture = 0.1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

struct Ellipse {
  double cy, cx, ry, rx, angle;
  std::array<double, 3> color;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx;
    const double v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

Sample synthetic_sample(std::size_t resolution, std::uint64_t seed, std::size_t index) {
  if (resolution < 8) throw std::invalid_argument("gen_synthetic: resolution must be at least 8");
  Rng rng = Rng::derive(seed, index + 1);
  const std::size_t r = resolution;
  const double rd = static_cast<double>(r);

  std::vector<double> grid(kGrid * kGrid * 3);
  for (auto& v : grid) v = rng.uniform(kBackgroundLo, kBackgroundHi);
  Tensor coarse({kGrid, kGrid, 3}, grid);
  Tensor image = resize_bilinear(coarse, r, r);

  std::vector<double> mask(r * r, 0.0);
  std::vector<Ellipse> blobs;
  for (;;) {
    blobs.clear();
    const std::size_t count = 1 + static_cast<std::size_t>(rng.below(3));
    for (std::size_t b = 0; b < count; ++b) {
      Ellipse e;
      e.cy = rng.uniform(0.15, 0.85) * rd;
      e.cx = rng.uniform(0.15, 0.85) * rd;
      e.ry = rng.uniform(0.08, 0.25) * rd;
      e.rx = rng.uniform(0.08, 0.25) * rd;
      e.angle = rng.uniform(0.0, std::numbers::pi);
      for (auto& c : e.color) c = rng.uniform(kBlobLo, kBlobHi);
      blobs.push_back(e);
    }
    std::size_t covered = 0;
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) {
        bool in = false;
        for (const auto& e : blobs) in = in || e.contains(y + 0.5, x + 0.5);
        mask[y * r + x] = in ? 1.0 : 0.0;
        covered += in;
      }
    const double frac = static_cast<double>(covered) / (rd * rd);
    if (frac >= 0.02 && frac <= 0.5) break;
  }

  auto img = image.mutable_data();
  for (std::size_t y = 0; y < r; ++y)
    for (std::size_t x = 0; x < r; ++x)
      for (const auto& e : blobs)
        if (e.contains(y + 0.5, x + 0.5))
          for (std::size_t c = 0; c < 3; ++c) img[(y * r + x) * 3 + c] = e.color[c];
  for (auto& v : img) v = std::clamp(v + rng.uniform(-kTexture, kTexture), 0.0, 1.0);

  char id[32];
  std::snprintf(id, sizeof id, "sample_%04zu", index);
  return {id, image.detach(), Tensor({r, r, 1}, std::move(mask))};
}

std::vector<Sample> gen_synthetic(std::size_t n, std::size_t resolution, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_synthetic: n must be at least 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic_sample(resolution, seed, i));
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (!image.defined() || image.rank() != 3) throw ShapeError("resize: image must be (H, W, C)");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h == height && w == width) return image.detach();
  std::vector<double> out(height * width * c);
  const auto src = image.data();
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = src[(y0 * w + x0) * c + k], b = src[(y0 * w + x1) * c + k];
        const double d = src[(y1 * w + x0) * c + k], e = src[(y1 * w + x1) * c + k];
        out[(y * width + x) * c + k] =
            (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * d + tx * e);
      }
    }
  }
  return Tensor({height, width, c}, std::move(out));
}

Tensor resize_nearest(const Tensor& map, std::size_t height, std::size_t width) {
  if (!map.defined() || map.rank() != 3) throw ShapeError("resize: map must be (H, W, C)");
  const std::size_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  if (h == height && w == width) return map.detach();
  std::vector<double> out(height * width * c);
  const auto src = map.data();
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(h - 1, y * h / height);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(w - 1, x * w / width);
      for (std::size_t k = 0; k < c; ++k) out[(y * width + x) * c + k] = src[(sy * w + sx) * c + k];
    }
  }
  return Tensor({height, width, c}, std::move(out));
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (!image.defined() || image.rank() != 3) throw ShapeError("write_image: image must be (H, W, C)");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("DSIM", 4);
  for (std::size_t d = 0; d < 3; ++d) put_u32(os, static_cast<std::uint32_t>(image.dim(d)));
  for (double v : image.data()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "DSIM")
    throw std::runtime_error(path.string() + ": bad image magic");
  const std::size_t h = get_u32(is), w = get_u32(is), c = get_u32(is);
  if (h == 0 || w == 0 || c == 0) throw std::runtime_error(path.string() + ": empty image");
  std::vector<double> values(h * w * c);
  for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(get_u32(is)));
  return Tensor({h, w, c}, std::move(values));
}

void write_mask_pgm(const std::filesystem::path& path, const std::vector<unsigned char>& mask,
                    std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw ShapeError("write_mask_pgm: size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << width << ' ' << height << "\n255\n";
  for (unsigned char v : mask) os.put(static_cast<char>(v ? 255 : 0));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

Tensor read_mask_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t += ch;
    }
    return t;
  };
  if (token() != "P5") throw std::runtime_error(path.string() + ": not a binary PGM");
  const std::size_t w = std::stoul(token()), h = std::stoul(token()), maxval = std::stoul(token());
  if (maxval == 0 || maxval > 255) throw std::runtime_error(path.string() + ": unsupported maxval");
  std::vector<double> values(h * w);
  for (auto& v : values) {
    char ch;
    if (!is.get(ch)) throw std::runtime_error(path.string() + ": truncated pixel data");
    v = static_cast<unsigned char>(ch) * 2 > maxval ? 1.0 : 0.0;
  }
  return Tensor({h, w, 1}, std::move(values));
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  for (const auto& s : samples) {
    write_image(dir / (s.id + ".img"), s.image);
    std::vector<unsigned char> m(s.mask.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = s.mask.data()[i] > 0.5 ? 1 : 0;
    write_mask_pgm(dir / (s.id + ".mask.pgm"), m, s.mask.dim(0), s.mask.dim(1));
  }
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("dataset directory not found: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".img") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  std::vector<Sample> out;
  for (const auto& id : ids) {
    Sample s{id, read_image(dir / (id + ".img")), read_mask_pgm(dir / (id + ".mask.pgm"))};
    if (s.image.dim(0) != s.mask.dim(0) || s.image.dim(1) != s.mask.dim(1))
      throw std::runtime_error(id + ": image and mask extents differ");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("no samples in " + dir.string());
  return out;
}

}  // namespace dstu
