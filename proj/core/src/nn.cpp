#include "mmfuse/nn.hpp"

#include <cmath>
#include <cstring>

#include "mmfuse/error.hpp"

namespace mmfuse::nn {

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> trainable(Shape shape, T value) {
  auto t = Tensor<T>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

std::string join(const std::string& prefix, const char* name) {
  return prefix.empty() ? std::string(name) : prefix + "." + name;
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> Module<T>::named_tensors() {
  std::vector<NamedTensor<T>> out;
  collect("", out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Module<T>::parameters() {
  std::vector<Tensor<T>> out;
  for (auto& nt : named_tensors()) {
    if (nt.trainable) out.push_back(nt.tensor);
  }
  return out;
}

template <typename T>
void Module<T>::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding,
                  bool with_bias, Rng& rng)
    : weight(he_normal<T>({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng)),
      geometry{stride, padding} {
  if (with_bias) bias = trainable<T>({out_ch}, T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  return ops::conv2d(x, weight, bias, geometry);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({join(prefix, "weight"), weight, true});
  if (bias.defined()) out.push_back({join(prefix, "bias"), bias, true});
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                                    std::size_t padding, std::size_t out_pad, bool with_bias, Rng& rng)
    : weight(he_normal<T>({in_ch, out_ch, kernel, kernel}, in_ch * kernel * kernel / (stride * stride), rng)),
      geometry{stride, padding},
      output_padding(out_pad) {
  if (with_bias) bias = trainable<T>({out_ch}, T(0));
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x) const {
  return ops::conv_transpose2d(x, weight, bias, geometry, output_padding);
}

template <typename T>
void ConvTranspose2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({join(prefix, "weight"), weight, true});
  if (bias.defined()) out.push_back({join(prefix, "bias"), bias, true});
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : scale(trainable<T>({channels}, T(1))),
      shift(trainable<T>({channels}, T(0))),
      running_mean(Tensor<T>::full({channels}, T(0))),
      running_var(Tensor<T>::full({channels}, T(1))) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x) {
  return ops::batch_norm(x, scale, shift, running_mean, running_var, training, static_cast<T>(kDecay),
                         static_cast<T>(kEpsilon));
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({join(prefix, "scale"), scale, true});
  out.push_back({join(prefix, "shift"), shift, true});
  out.push_back({join(prefix, "running_mean"), running_mean, false});
  out.push_back({join(prefix, "running_var"), running_var, false});
}

template <typename T>
InstanceNorm2d<T>::InstanceNorm2d(std::size_t channels)
    : scale(trainable<T>({channels}, T(1))), shift(trainable<T>({channels}, T(0))) {}

template <typename T>
Tensor<T> InstanceNorm2d<T>::forward(const Tensor<T>& x) const {
  return ops::instance_norm(x, scale, shift, static_cast<T>(1e-5));
}

template <typename T>
void InstanceNorm2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({join(prefix, "scale"), scale, true});
  out.push_back({join(prefix, "shift"), shift, true});
}

template <typename T>
LinearNoBias<T>::LinearNoBias(std::size_t in_features, std::size_t out_features, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in_features)));
  std::vector<T> v(in_features * out_features);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  weight = Tensor<T>({in_features, out_features}, std::move(v));
  weight.set_requires_grad(true);
}

template <typename T>
Tensor<T> LinearNoBias<T>::forward(const Tensor<T>& v) const {
  return ops::matmul(v, weight);
}

template <typename T>
void LinearNoBias<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({join(prefix, "weight"), weight, true});
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride, Rng& rng)
    : conv1(in_ch, out_ch, 3, stride, 1, false, rng), bn1(out_ch), conv2(out_ch, out_ch, 3, 1, 1, false, rng), bn2(out_ch) {
  if (stride != 1 || in_ch != out_ch) {
    projection_.emplace(in_ch, out_ch, 1, stride, 0, false, rng);
    projection_bn_.emplace(out_ch);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x) {
  auto y = ops::relu(bn1.forward(conv1.forward(x)));
  y = bn2.forward(conv2.forward(y));
  auto skip = projection_ ? projection_bn_->forward(projection_->forward(x)) : x;
  return ops::relu(ops::add(y, skip));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  conv1.collect(join(prefix, "conv1"), out);
  bn1.collect(join(prefix, "bn1"), out);
  conv2.collect(join(prefix, "conv2"), out);
  bn2.collect(join(prefix, "bn2"), out);
  if (projection_) {
    projection_->collect(join(prefix, "proj"), out);
    projection_bn_->collect(join(prefix, "proj_bn"), out);
  }
}

template <typename T>
void ResidualBlock<T>::set_training(bool on) {
  bn1.set_training(on);
  bn2.set_training(on);
  if (projection_bn_) projection_bn_->set_training(on);
}

template <typename T>
Snapshot<T> snapshot(Module<T>& module) {
  Snapshot<T> snap;
  for (auto& nt : module.named_tensors()) {
    auto d = nt.tensor.data();
    snap.emplace_back(nt.name, std::vector<T>(d.begin(), d.end()));
  }
  return snap;
}

template <typename T>
void restore(Module<T>& module, const Snapshot<T>& snap) {
  auto tensors = module.named_tensors();
  expects(tensors.size() == snap.size(), "restore: snapshot has " + std::to_string(snap.size()) +
                                             " tensors, module has " + std::to_string(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    expects(tensors[i].name == snap[i].first && tensors[i].tensor.numel() == snap[i].second.size(),
            "restore: snapshot entry '" + snap[i].first + "' does not match '" + tensors[i].name + "'");
    std::copy(snap[i].second.begin(), snap[i].second.end(), tensors[i].tensor.data().begin());
  }
}

template <typename T>
std::uint64_t parameter_hash(Module<T>& module, const std::string& prefix) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto& nt : module.named_tensors()) {
    if (nt.name.compare(0, prefix.size(), prefix) != 0) continue;
    feed(nt.name.data(), nt.name.size());
    auto d = nt.tensor.data();
    feed(d.data(), d.size_bytes());
  }
  return h;
}

#define MMFUSE_INSTANTIATE_NN(T)                                          \
  template class Module<T>;                                               \
  template class Conv2d<T>;                                               \
  template class ConvTranspose2d<T>;                                      \
  template class BatchNorm2d<T>;                                          \
  template class InstanceNorm2d<T>;                                       \
  template class LinearNoBias<T>;                                         \
  template class ResidualBlock<T>;                                        \
  template Snapshot<T> snapshot<T>(Module<T>&);                           \
  template void restore<T>(Module<T>&, const Snapshot<T>&);               \
  template std::uint64_t parameter_hash<T>(Module<T>&, const std::string&);

MMFUSE_INSTANTIATE_NN(float)
MMFUSE_INSTANTIATE_NN(double)

}  // namespace mmfuse::nn
