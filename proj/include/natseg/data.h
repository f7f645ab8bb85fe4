#ifndef NATSEG_DATA_H_
#define NATSEG_DATA_H_

#include <cstdint>
#include <string>
#include <vector>

#include "natseg/tensor.h"

namespace natseg {

// image: (1,3,h,w) in [0,1]; mask: (1,1,h,w) in {0,1}.
struct SamplePair {
  Tensor image;
  Tensor mask;
  std::string id;

  int height() const { return image.shape().h; }
  int width() const { return image.shape().w; }
  std::int64_t positives() const;
  double mask_fraction() const;
};

// Throws ShapeError/NumericError if the pair breaks the layout or binarity rules.
void validate_sample(const SamplePair& s);

struct SynthConfig {
  int size = 48;
  int num_samples = 32;
  int min_lines = 1;
  int max_lines = 3;
  double min_width = 2.0;
  double max_width = 4.0;
  double texture_amplitude = 0.12;
  double noise_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

// A road: segment (x0,y0)-(x1,y1) in pixel coordinates (pixel (r,c) has its
// centre at (c+0.5, r+0.5)) with full width `width`.
struct RoadSegment {
  double x0, y0, x1, y1, width;
};

double distance_to_segment(double px, double py, const RoadSegment& s);

// Mask rule: a pixel is road iff its centre lies strictly closer than
// width/2 to the segment.
Tensor rasterize_mask(int size, const std::vector<RoadSegment>& roads);

// Renders one sample with a given geometry. The texture and noise draw from
// `seed`; with noise_std 0 the image depends only on geometry and seed.
SamplePair render_sample(const SynthConfig& cfg, const std::vector<RoadSegment>& roads,
                         std::uint64_t seed, std::string id);

// Sample i draws from mix_seed(cfg.seed, i); geometries whose mask fraction
// falls outside (0, 0.5) are redrawn.
std::vector<SamplePair> generate_synthetic(const SynthConfig& cfg);

// Reads an RGB(A) image and a mask raster of matching size. Any mask channel
// layout is collapsed by taking the max over colour channels, then > 127.
SamplePair load_tile_pair(const std::string& image_path, const std::string& mask_path,
                          std::string id = "");

// RGB(A) PNG as a (1,3,h,w) tensor in [0,1].
Tensor load_image(const std::string& path);

// Writes image as RGB and mask as single-channel {0,255}.
void save_tile_pair(const SamplePair& s, const std::string& image_path,
                    const std::string& mask_path);

// Grid offsets along one axis; the final window is shifted inward so it ends
// at the border.
std::vector<int> grid_offsets(int extent, int patch, int stride);

// Patch ids are "<source>@<y>_<x>".
std::vector<SamplePair> extract_patches(const SamplePair& pair, int patch_size, int stride);
std::string source_id(const std::string& sample_id);

SamplePair crop(const SamplePair& pair, int y, int x, int h, int w, std::string id);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DataSplit {
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;
  std::vector<SamplePair> test;
};

// Source-level split: val and test get floor(fraction * sources), train the
// remainder. Each output list is ordered by id.
DataSplit split(const std::vector<SamplePair>& samples, const SplitFractions& fractions,
                std::uint64_t seed);

// <root>/<split>/{sat,map}/<id>.png. Pairs are matched by file stem and
// returned sorted by id; a missing mask is an IoError.
std::vector<SamplePair> load_split_dir(const std::string& root, const std::string& split_name);

// Writes all three splits plus <root>/manifest.csv (id,split,path_image,path_mask).
void write_dataset(const std::string& root, const DataSplit& data);

// Concatenates samples [first, first+count) into a batch.
void make_batch(const std::vector<SamplePair>& samples, const std::vector<std::size_t>& indices,
                Tensor& images, Tensor& masks);

}  // namespace natseg

#endif  // NATSEG_DATA_H_
