#include "model/feature_net.h"

#include <cmath>

#include "core/error.h"
#include "core/rng.h"

namespace nvs {

namespace {

template <class S>
TensorT<S> param_zeros(int64_t n) {
  return TensorT<S>::zeros({n}, true);
}

int64_t out_dim(int64_t in, int stride) { return (in + 2 - 3) / stride + 1; }

// 3x3 conv with pad 1: [H, W, Cin] -> [outH, outW, Cout].
template <class S>
TensorT<S> conv3x3(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                   int stride) {
  const int64_t oh = out_dim(x.dim(0), stride);
  const int64_t ow = out_dim(x.dim(1), stride);
  TensorT<S> cols = im2col(x, 3, 3, stride, 1);
  TensorT<S> y = linear(cols, w, b);
  return reshape(y, {oh, ow, w.dim(1)});
}

}  // namespace

template <class S>
FeatureNetT<S>::FeatureNetT(int d, uint64_t seed) : d_(d) {
  if (d < 1) throw ContractError("feature net: d must be positive");
  auto mk = [&](int64_t fan_in, int64_t fan_out, uint64_t tag) {
    Rng rng = keyed_rng(seed, 0x66656174ULL, tag);
    return xavier_uniform<S>(fan_in, fan_out, rng);
  };
  w1_ = mk(9 * 3, 16, 1);
  b1_ = param_zeros<S>(16);
  w2_ = mk(9 * 16, 32, 2);
  b2_ = param_zeros<S>(32);
  w3_ = mk(9 * 32, 64, 3);
  b3_ = param_zeros<S>(64);
  wd_ = mk(9 * (64 + 32), 64, 4);
  bd_ = param_zeros<S>(64);
  wh_ = mk(64, 2 * d, 5);
  bh_ = param_zeros<S>(2 * d);
}

template <class S>
FeatureMapsT<S> FeatureNetT<S>::extract(const TensorT<S>& image) const {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ContractError("extract: image must be [H, W, 3], got " +
                        shape_str(image.shape()));
  const int64_t h = image.dim(0), w = image.dim(1);
  if (h < 16 || w < 16)
    throw ContractError("extract: image must be at least 16x16, got " +
                        std::to_string(h) + "x" + std::to_string(w));

  TensorT<S> e1 = elu(conv3x3(image, w1_, b1_, 2));  // ceil(H/2)
  TensorT<S> e2 = elu(conv3x3(e1, w2_, b2_, 2));     // ceil(H/4)
  TensorT<S> e3 = elu(conv3x3(e2, w3_, b3_, 2));     // ceil(H/8)

  TensorT<S> up = upsample2x(e3);
  if (up.dim(0) > e2.dim(0)) up = narrow(up, 0, 0, e2.dim(0));
  if (up.dim(1) > e2.dim(1)) up = narrow(up, 1, 0, e2.dim(1));
  TensorT<S> dec = elu(conv3x3(concat(std::vector<TensorT<S>>{up, e2}, 2),
                               wd_, bd_, 1));

  TensorT<S> flat = reshape(dec, {dec.dim(0) * dec.dim(1), dec.dim(2)});
  TensorT<S> head = reshape(linear(flat, wh_, bh_),
                            {dec.dim(0), dec.dim(1), 2 * d_});
  FeatureMapsT<S> out;
  out.coarse = narrow(head, 2, 0, d_);
  out.fine = narrow(head, 2, d_, d_);
  return out;
}

template <class S>
std::vector<std::pair<std::string, TensorT<S>>> FeatureNetT<S>::named_params() {
  return {{"feat.enc1.w", w1_}, {"feat.enc1.b", b1_}, {"feat.enc2.w", w2_},
          {"feat.enc2.b", b2_}, {"feat.enc3.w", w3_}, {"feat.enc3.b", b3_},
          {"feat.dec.w", wd_},  {"feat.dec.b", bd_},  {"feat.head.w", wh_},
          {"feat.head.b", bh_}};
}

template <class S>
int64_t FeatureNetT<S>::num_params() const {
  int64_t n = 0;
  for (const auto& p : const_cast<FeatureNetT<S>*>(this)->named_params())
    n += p.second.size();
  return n;
}

namespace {

template <class S>
TensorT<S> fetch_at(const TensorT<S>& map, const std::vector<double>& u_img,
                    const std::vector<double>& v_img,
                    const std::vector<uint8_t>& valid_in,
                    std::vector<uint8_t>* valid_out, double scale, double shift) {
  if (u_img.size() != v_img.size() || u_img.size() != valid_in.size())
    throw ShapeError("fetch: coordinate and validity lists differ in length");
  const size_t n = u_img.size();
  std::vector<double> tu(n), tv(n);
  for (size_t i = 0; i < n; ++i) {
    tu[i] = u_img[i] * scale + shift;
    tv[i] = v_img[i] * scale + shift;
  }
  if (valid_out) {
    valid_out->assign(n, 0);
    const double wmax = static_cast<double>(map.dim(1) - 1);
    const double hmax = static_cast<double>(map.dim(0) - 1);
    for (size_t i = 0; i < n; ++i)
      (*valid_out)[i] = valid_in[i] && map.dim(0) >= 2 && map.dim(1) >= 2 &&
                        tu[i] >= 0 && tu[i] <= wmax && tv[i] >= 0 && tv[i] <= hmax;
  }
  return bilinear_gather(map, tu, tv, valid_in);
}

}  // namespace

template <class S>
TensorT<S> fetch_features(const TensorT<S>& fmap, const std::vector<double>& u_img,
                          const std::vector<double>& v_img,
                          const std::vector<uint8_t>& valid_in,
                          std::vector<uint8_t>* valid_out) {
  return fetch_at(fmap, u_img, v_img, valid_in, valid_out, 0.25, -0.5);
}

template <class S>
TensorT<S> fetch_colors(const TensorT<S>& image, const std::vector<double>& u_img,
                        const std::vector<double>& v_img,
                        const std::vector<uint8_t>& valid_in,
                        std::vector<uint8_t>* valid_out) {
  return fetch_at(image, u_img, v_img, valid_in, valid_out, 1.0, -0.5);
}

template <class S>
TensorT<S> image_to_tensor(const Image& img) {
  std::vector<S> vals(img.data.begin(), img.data.end());
  return TensorT<S>::from_data({img.height, img.width, 3}, std::move(vals));
}

#define NVS_INSTANTIATE_FEAT(S)                                               \
  template class FeatureNetT<S>;                                              \
  template TensorT<S> fetch_features<S>(                                      \
      const TensorT<S>&, const std::vector<double>&, const std::vector<double>&, \
      const std::vector<uint8_t>&, std::vector<uint8_t>*);                    \
  template TensorT<S> fetch_colors<S>(                                        \
      const TensorT<S>&, const std::vector<double>&, const std::vector<double>&, \
      const std::vector<uint8_t>&, std::vector<uint8_t>*);                    \
  template TensorT<S> image_to_tensor<S>(const Image&);

NVS_INSTANTIATE_FEAT(float)
NVS_INSTANTIATE_FEAT(double)

}  // namespace nvs
