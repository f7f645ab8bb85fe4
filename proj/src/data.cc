#include "natseg/data.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>

#include "natseg/ops.h"
#include "natseg/raster.h"
#include "natseg/rng.h"

namespace natseg {

namespace fs = std::filesystem;

std::int64_t SamplePair::positives() const {
  std::int64_t n = 0;
  for (Real v : mask.data()) n += v != Real(0);
  return n;
}

double SamplePair::mask_fraction() const {
  return static_cast<double>(positives()) / static_cast<double>(mask.numel());
}

void validate_sample(const SamplePair& s) {
  const Shape& a = s.image.shape();
  const Shape& b = s.mask.shape();
  if (a.n != 1 || a.c != 3) throw ShapeError("sample '" + s.id + "': image must be (1,3,h,w), got " + a.str());
  if (b.n != 1 || b.c != 1) throw ShapeError("sample '" + s.id + "': mask must be (1,1,h,w), got " + b.str());
  if (a.h != b.h || a.w != b.w) {
    throw ShapeError("sample '" + s.id + "': image " + a.str() + " and mask " + b.str() + " not aligned");
  }
  for (Real v : s.mask.data()) {
    if (v != Real(0) && v != Real(1)) throw NumericError("sample '" + s.id + "': mask is not binary");
  }
}

void SynthConfig::validate() const {
  if (size < 8) throw ConfigError("synth.size: must be >= 8");
  if (num_samples < 1) throw ConfigError("synth.num_samples: must be >= 1");
  if (min_lines < 1 || max_lines < min_lines) throw ConfigError("synth.lines: need 1 <= min <= max");
  if (min_width <= 0.0 || max_width < min_width) throw ConfigError("synth.width: need 0 < min <= max");
  if (texture_amplitude < 0.0 || noise_std < 0.0) throw ConfigError("synth: amplitude and noise must be >= 0");
}

double distance_to_segment(double px, double py, const RoadSegment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.x0 + t * dx - px, ey = s.y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

Tensor rasterize_mask(int size, const std::vector<RoadSegment>& roads) {
  Tensor mask = Tensor::create(Shape{1, 1, size, size});
  auto m = mask.mutable_data();
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      for (const auto& s : roads) {
        if (distance_to_segment(c + 0.5, r + 0.5, s) < 0.5 * s.width) {
          m[static_cast<std::size_t>(r) * size + c] = 1;
          break;
        }
      }
    }
  }
  return mask;
}

SamplePair render_sample(const SynthConfig& cfg, const std::vector<RoadSegment>& roads,
                         std::uint64_t seed, std::string id) {
  const int n = cfg.size;
  Rng rng(seed);
  // Field-like background: a base colour plus two oriented sinusoid layers.
  const double base[3] = {rng.uniform(0.25, 0.4), rng.uniform(0.3, 0.45), rng.uniform(0.2, 0.35)};
  const double road[3] = {rng.uniform(0.65, 0.8), rng.uniform(0.65, 0.8), rng.uniform(0.6, 0.75)};
  const double two_pi = 2.0 * std::numbers::pi;
  double fx[2], fy[2], ph[2];
  for (int k = 0; k < 2; ++k) {
    fx[k] = rng.uniform(-0.3, 0.3);
    fy[k] = rng.uniform(-0.3, 0.3);
    ph[k] = rng.uniform(0.0, two_pi);
  }
  SamplePair s;
  s.id = std::move(id);
  s.mask = rasterize_mask(n, roads);
  s.image = Tensor::create(Shape{1, 3, n, n});
  auto img = s.image.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      const double tex = cfg.texture_amplitude *
                         (0.6 * std::sin(fx[0] * x + fy[0] * y + ph[0]) +
                          0.4 * std::sin(fx[1] * x + fy[1] * y + ph[1]));
      // Anti-aliased coverage: a one-pixel linear ramp around the edge.
      double cover = 0.0;
      for (const auto& seg : roads) {
        const double d = distance_to_segment(x, y, seg);
        cover = std::max(cover, std::clamp(0.5 * seg.width + 0.5 - d, 0.0, 1.0));
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = (base[ch] + tex) * (1.0 - cover) + road[ch] * cover;
        if (cfg.noise_std > 0.0) v += cfg.noise_std * rng.normal();
        img[ch * plane + static_cast<std::size_t>(r) * n + c] = static_cast<Real>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

namespace {

// Point on side 0..3 (top, right, bottom, left) of a square of side n.
void border_point(Rng& rng, int side, double n, double& x, double& y) {
  const double t = rng.uniform(0.1 * n, 0.9 * n);
  switch (side) {
    case 0: x = t; y = 0.0; break;
    case 1: x = n; y = t; break;
    case 2: x = t; y = n; break;
    default: x = 0.0; y = t; break;
  }
}

}  // namespace

std::vector<SamplePair> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SamplePair> out;
  out.reserve(static_cast<std::size_t>(cfg.num_samples));
  const double n = cfg.size;
  for (int i = 0; i < cfg.num_samples; ++i) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    char id[32];
    std::snprintf(id, sizeof(id), "synth%05d", i);
    for (;;) {
      const int lines = cfg.min_lines +
                        static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_lines - cfg.min_lines + 1)));
      std::vector<RoadSegment> roads;
      for (int k = 0; k < lines; ++k) {
        const int a = static_cast<int>(rng.below(4));
        const int b = (a + 1 + static_cast<int>(rng.below(3))) % 4;
        RoadSegment s{};
        border_point(rng, a, n, s.x0, s.y0);
        border_point(rng, b, n, s.x1, s.y1);
        s.width = rng.uniform(cfg.min_width, cfg.max_width);
        roads.push_back(s);
      }
      SamplePair sample = render_sample(cfg, roads, rng.next_u64(), id);
      const double f = sample.mask_fraction();
      if (f > 0.0 && f < 0.5) {
        out.push_back(std::move(sample));
        break;
      }
    }
  }
  return out;
}

namespace {

void require_rgb(const Raster& img, const std::string& path) {
  if (img.channels != 3 && img.channels != 4) {
    throw IoError("image '" + path + "': expected 3 (RGB) or 4 (RGBA) channels, got " +
                  std::to_string(img.channels));
  }
}

// Alpha (if any) is ignored.
Tensor raster_to_image(const Raster& img) {
  const int h = img.height, w = img.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor t = Tensor::create(Shape{1, 3, h, w});
  auto im = t.mutable_data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      for (int c = 0; c < 3; ++c) im[c * plane + p] = static_cast<Real>(img.at(y, x, c) / 255.0);
    }
  }
  return t;
}

}  // namespace

Tensor load_image(const std::string& path) {
  const Raster img = read_png(path);
  require_rgb(img, path);
  return raster_to_image(img);
}

SamplePair load_tile_pair(const std::string& image_path, const std::string& mask_path,
                          std::string id) {
  const Raster img = read_png(image_path);
  const Raster msk = read_png(mask_path);
  require_rgb(img, image_path);
  if (img.width != msk.width || img.height != msk.height) {
    throw IoError("size mismatch: image '" + image_path + "' is " + std::to_string(img.width) +
                  "x" + std::to_string(img.height) + ", mask '" + mask_path + "' is " +
                  std::to_string(msk.width) + "x" + std::to_string(msk.height));
  }
  if (id.empty()) id = fs::path(image_path).stem().string();
  const int h = img.height, w = img.width;
  SamplePair s;
  s.id = std::move(id);
  s.image = raster_to_image(img);
  s.mask = Tensor::create(Shape{1, 1, h, w});
  auto mk = s.mask.mutable_data();
  // Colour channels collapse by max.
  const int mask_colour = msk.channels >= 3 ? 3 : 1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int v = 0;
      for (int c = 0; c < mask_colour; ++c) v = std::max<int>(v, msk.at(y, x, c));
      mk[static_cast<std::size_t>(y) * w + x] = v > 127 ? Real(1) : Real(0);
    }
  }
  return s;
}

void save_tile_pair(const SamplePair& s, const std::string& image_path,
                    const std::string& mask_path) {
  validate_sample(s);
  const int h = s.height(), w = s.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Raster img{w, h, 3, std::vector<std::uint8_t>(plane * 3)};
  Raster msk{w, h, 1, std::vector<std::uint8_t>(plane)};
  auto im = s.image.data();
  auto mk = s.mask.data();
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(im[c * plane + p]), 0.0, 1.0);
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    msk.pixels[p] = mk[p] != Real(0) ? 255 : 0;
  }
  write_png(image_path, img);
  write_png(mask_path, msk);
}

std::vector<int> grid_offsets(int extent, int patch, int stride) {
  if (patch < 1 || stride < 1) throw ConfigError("patches: patch size and stride must be >= 1");
  if (patch > extent) {
    throw ConfigError("patches: patch size " + std::to_string(patch) + " exceeds source extent " +
                      std::to_string(extent));
  }
  std::vector<int> out;
  int o = 0;
  for (; o + patch <= extent; o += stride) out.push_back(o);
  if (out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

SamplePair crop(const SamplePair& pair, int y, int x, int h, int w, std::string id) {
  const int H = pair.height(), W = pair.width();
  if (y < 0 || x < 0 || y + h > H || x + w > W) throw ShapeError("crop: window outside source");
  SamplePair out;
  out.id = std::move(id);
  out.image = Tensor::create(Shape{1, 3, h, w});
  out.mask = Tensor::create(Shape{1, 1, h, w});
  const auto copy = [&](const Tensor& src, Tensor& dst, int channels) {
    auto s = src.data();
    auto d = dst.mutable_data();
    for (int c = 0; c < channels; ++c) {
      for (int r = 0; r < h; ++r) {
        const auto* from = s.data() + (static_cast<std::size_t>(c) * H + y + r) * W + x;
        std::copy(from, from + w, d.data() + (static_cast<std::size_t>(c) * h + r) * w);
      }
    }
  };
  copy(pair.image, out.image, 3);
  copy(pair.mask, out.mask, 1);
  return out;
}

std::vector<SamplePair> extract_patches(const SamplePair& pair, int patch_size, int stride) {
  const auto ys = grid_offsets(pair.height(), patch_size, stride);
  const auto xs = grid_offsets(pair.width(), patch_size, stride);
  std::vector<SamplePair> out;
  out.reserve(ys.size() * xs.size());
  for (int y : ys) {
    for (int x : xs) {
      out.push_back(crop(pair, y, x, patch_size, patch_size,
                         pair.id + "@" + std::to_string(y) + "_" + std::to_string(x)));
    }
  }
  return out;
}

std::string source_id(const std::string& sample_id) {
  return sample_id.substr(0, sample_id.find('@'));
}

DataSplit split(const std::vector<SamplePair>& samples, const SplitFractions& f,
                std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must be non-negative and sum to 1");
  }
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < samples.size(); ++i) by_source[source_id(samples[i].id)].push_back(i);
  std::vector<std::string> sources;
  for (const auto& kv : by_source) sources.push_back(kv.first);
  Rng rng(seed);
  rng.shuffle(sources);
  const double total = static_cast<double>(sources.size());
  // Small epsilon guards exact products such as 0.1 * 100 against round-down.
  const auto n_val = static_cast<std::size_t>(std::floor(f.val * total + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(f.test * total + 1e-9));
  DataSplit out;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    auto& dst = k < n_val ? out.val : (k < n_val + n_test ? out.test : out.train);
    for (std::size_t i : by_source[sources[k]]) dst.push_back(samples[i]);
  }
  for (auto* part : {&out.train, &out.val, &out.test}) {
    std::sort(part->begin(), part->end(),
              [](const SamplePair& a, const SamplePair& b) { return a.id < b.id; });
  }
  return out;
}

std::vector<SamplePair> load_split_dir(const std::string& root, const std::string& split_name) {
  const fs::path sat = fs::path(root) / split_name / "sat";
  const fs::path map = fs::path(root) / split_name / "map";
  if (!fs::is_directory(sat)) throw IoError("missing image directory '" + sat.string() + "'");
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(sat)) {
    if (e.is_regular_file() && e.path().extension() == ".png") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  std::vector<SamplePair> out;
  for (const auto& p : images) {
    const fs::path m = map / (p.stem().string() + ".png");
    if (!fs::exists(m)) throw IoError("no mask for '" + p.string() + "' (expected '" + m.string() + "')");
    out.push_back(load_tile_pair(p.string(), m.string(), p.stem().string()));
  }
  return out;
}

void write_dataset(const std::string& root, const DataSplit& data) {
  std::ofstream manifest;
  fs::create_directories(root);
  manifest.open(fs::path(root) / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest under '" + root + "'");
  manifest << "id,split,path_image,path_mask\n";
  const std::pair<const char*, const std::vector<SamplePair>*> parts[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (const auto& [name, samples] : parts) {
    const fs::path sat = fs::path(root) / name / "sat";
    const fs::path map = fs::path(root) / name / "map";
    fs::create_directories(sat);
    fs::create_directories(map);
    for (const auto& s : *samples) {
      const std::string file = s.id + ".png";
      save_tile_pair(s, (sat / file).string(), (map / file).string());
      manifest << s.id << "," << name << "," << (fs::path(name) / "sat" / file).string() << ","
               << (fs::path(name) / "map" / file).string() << "\n";
    }
  }
}

void make_batch(const std::vector<SamplePair>& samples, const std::vector<std::size_t>& indices,
                Tensor& images, Tensor& masks) {
  std::vector<Tensor> im, mk;
  for (std::size_t i : indices) {
    im.push_back(samples.at(i).image);
    mk.push_back(samples.at(i).mask);
  }
  images = stack_batch(im);
  masks = stack_batch(mk);
}

}  // namespace natseg
