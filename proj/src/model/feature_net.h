#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.h"
#include "image/image.h"

namespace nvs {

template <class S>
struct FeatureMapsT {
  TensorT<S> coarse, fine;  // [ceil(H/4), ceil(W/4), d] each
};
using FeatureMaps = FeatureMapsT<float>;

// Convolutional encoder-decoder: three stride-2 encoder blocks (16/32/64
// channels, ELU), one upsample+skip decoder block, and a 1x1 head whose 2d
// channels split into the coarse and fine feature sets at 1/4 resolution.
template <class S>
class FeatureNetT {
 public:
  explicit FeatureNetT(int d = 32, uint64_t seed = 0);

  // image: [H, W, 3] with H, W >= 16.
  FeatureMapsT<S> extract(const TensorT<S>& image) const;

  std::vector<std::pair<std::string, TensorT<S>>> named_params();
  int d() const { return d_; }
  int64_t num_params() const;

 private:
  int d_;
  TensorT<S> w1_, b1_, w2_, b2_, w3_, b3_, wd_, bd_, wh_, bh_;
};
using FeatureNet = FeatureNetT<float>;

// Bilinear fetch of per-sample feature vectors. Coordinates are full-res
// image pixels (pixel centers at x+0.5); the map lives at 1/4 resolution
// with texel centers at image coordinate 4k+2. Rows that are flagged
// invalid, or whose 2x2 footprint leaves the map, come back as zeros; the
// effective flags land in valid_out when it is non-null.
template <class S>
TensorT<S> fetch_features(const TensorT<S>& fmap, const std::vector<double>& u_img,
                          const std::vector<double>& v_img,
                          const std::vector<uint8_t>& valid_in,
                          std::vector<uint8_t>* valid_out = nullptr);

// Same interface against the full-res image [H, W, 3]: texel k sits at
// image coordinate k+0.5.
template <class S>
TensorT<S> fetch_colors(const TensorT<S>& image, const std::vector<double>& u_img,
                        const std::vector<double>& v_img,
                        const std::vector<uint8_t>& valid_in,
                        std::vector<uint8_t>* valid_out = nullptr);

template <class S>
TensorT<S> image_to_tensor(const Image& img);

}  // namespace nvs
