#pragma once

// Dual-view residual backbone: a trunk of shared blocks followed by two
// independent per-view heads. No global pooling — both views emit spatial
// feature maps.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/rng.hpp"
#include "bml/core/tensor.hpp"
#include "bml/model/layers.hpp"

namespace bml::model {

struct BackboneConfig {
  std::array<int, 4> block_channels{64, 160, 320, 640};
  int shared_depth = 3;  // blocks [0, shared_depth) are shared between views
  int input_size = 84;
  bool dropblock_enabled = false;
  bool desk_scale = false;

  void validate() const {
    check(shared_depth >= 0 && shared_depth <= 4, "shared_depth must be in [0,4], got ",
          shared_depth);
    for (int c : block_channels) check(c > 0, "block channels must be positive");
    check(input_size >= 16, "input_size too small: ", input_size);
  }

  static BackboneConfig desk() {
    BackboneConfig cfg;
    cfg.block_channels = {16, 32, 64, 128};
    cfg.input_size = 32;
    cfg.desk_scale = true;
    return cfg;
  }

  int feature_channels() const { return block_channels[3]; }
  // Four stride-2 poolings with floor division; convolutions preserve size.
  int map_size() const {
    int s = input_size;
    for (int i = 0; i < 4; ++i) s /= 2;
    return s;
  }
  int flat_dim() const { return map_size() * map_size() * feature_channels(); }
};

template <typename T>
struct DualViewFeatures {
  Tensor4<T> global_map, local_map;
};

/// Three 3x3 conv+bn stages (leaky-relu after the first two), a 1x1 projection
/// shortcut, post-sum activation, then 2x2 max pooling.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, conv3, conv_sc;
  BatchNorm2d<T> bn1, bn2, bn3, bn_sc;
  LeakyReLU<T> act1, act2, act3;
  MaxPool2<T> pool;
  DropBlock<T> drop;
  bool use_dropblock = false;

  ResidualBlock() = default;
  ResidualBlock(int in_c, int out_c, bool dropblock)
      : conv1(in_c, out_c), conv2(out_c, out_c), conv3(out_c, out_c),
        conv_sc(in_c, out_c, 1, 1, 0), bn1(out_c), bn2(out_c), bn3(out_c), bn_sc(out_c),
        use_dropblock(dropblock) {}

  void init(uint64_t seed, const std::string& prefix) {
    // One derived stream per weight tensor so initialization is independent of
    // construction order.
    auto seeded = [&](const char* name) { return Rng(derive_seed(seed, {hash_str(prefix + name)})); };
    Rng r1 = seeded(".conv1.w");
    conv1.init(r1);
    Rng r2 = seeded(".conv2.w");
    conv2.init(r2);
    Rng r3 = seeded(".conv3.w");
    conv3.init(r3);
    Rng rs = seeded(".conv_sc.w");
    conv_sc.init(rs);
  }

  Tensor4<T> forward(const Tensor4<T>& x, bool train, Rng* drop_rng) {
    Tensor4<T> a = act1.forward(bn1.forward(conv1.forward(x), train));
    Tensor4<T> b = act2.forward(bn2.forward(conv2.forward(a), train));
    Tensor4<T> c = bn3.forward(conv3.forward(b), train);
    Tensor4<T> s = bn_sc.forward(conv_sc.forward(x), train);
    check(c.same_shape(s), "residual add shape mismatch");
    for (std::size_t i = 0; i < c.v.size(); ++i) c.v[i] += s.v[i];
    Tensor4<T> p = pool.forward(act3.forward(c));
    if (use_dropblock && drop_rng != nullptr) return drop.forward(p, train, *drop_rng);
    return p;
  }

  Tensor4<T> backward(const Tensor4<T>& dy_in) {
    Tensor4<T> dy = use_dropblock ? drop.backward(dy_in) : dy_in;
    Tensor4<T> dsum = act3.backward(pool.backward(dy));
    Tensor4<T> dx_sc = conv_sc.backward(bn_sc.backward(dsum));
    Tensor4<T> db = conv3.backward(bn3.backward(dsum));
    Tensor4<T> da = conv2.backward(bn2.backward(act2.backward(db)));
    Tensor4<T> dx = conv1.backward(bn1.backward(act1.backward(da)));
    check(dx.same_shape(dx_sc), "residual backward shape mismatch");
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dx_sc.v[i];
    return dx;
  }

  void for_each_param(const std::string& prefix, const ParamFn<T>& fn) {
    conv1.for_each_param(prefix + ".conv1", fn);
    bn1.for_each_param(prefix + ".bn1", fn);
    conv2.for_each_param(prefix + ".conv2", fn);
    bn2.for_each_param(prefix + ".bn2", fn);
    conv3.for_each_param(prefix + ".conv3", fn);
    bn3.for_each_param(prefix + ".bn3", fn);
    conv_sc.for_each_param(prefix + ".conv_sc", fn);
    bn_sc.for_each_param(prefix + ".bn_sc", fn);
  }
  void for_each_buffer(const std::string& prefix, const BufferFn<T>& fn) {
    bn1.for_each_buffer(prefix + ".bn1", fn);
    bn2.for_each_buffer(prefix + ".bn2", fn);
    bn3.for_each_buffer(prefix + ".bn3", fn);
    bn_sc.for_each_buffer(prefix + ".bn_sc", fn);
  }
};

/// Trainable scalars of one residual block.
inline long block_param_count(int in_c, int out_c) {
  const long conv = 9L * in_c * out_c + 2L * 9 * out_c * out_c + 1L * in_c * out_c;
  const long bn = 4L * 2 * out_c;  // gamma+beta for bn1..bn3 and the shortcut bn
  return conv + bn;
}

/// Trainable scalars of the dual network (classifiers are counted separately):
/// shared blocks once, per-view blocks twice.
inline long parameter_count(const BackboneConfig& cfg) {
  cfg.validate();
  long total = 0;
  int in_c = 3;
  for (int i = 0; i < 4; ++i) {
    const long p = block_param_count(in_c, cfg.block_channels[static_cast<std::size_t>(i)]);
    total += i < cfg.shared_depth ? p : 2 * p;
    in_c = cfg.block_channels[static_cast<std::size_t>(i)];
  }
  return total;
}

template <typename T>
struct DualViewNet {
  BackboneConfig cfg;
  std::vector<ResidualBlock<T>> trunk, head_g, head_l;

  static DualViewNet create(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    DualViewNet net;
    net.cfg = cfg;
    int in_c = 3;
    for (int i = 0; i < 4; ++i) {
      const int out_c = cfg.block_channels[static_cast<std::size_t>(i)];
      // Block-structured dropout regularizes the last two stages only.
      const bool drop = cfg.dropblock_enabled && i >= 2;
      if (i < cfg.shared_depth) {
        net.trunk.emplace_back(in_c, out_c, drop);
        net.trunk.back().init(seed, "trunk" + std::to_string(i));
      } else {
        net.head_g.emplace_back(in_c, out_c, drop);
        net.head_g.back().init(seed, "head_g" + std::to_string(i));
        net.head_l.emplace_back(in_c, out_c, drop);
        net.head_l.back().init(seed, "head_l" + std::to_string(i));
      }
      in_c = out_c;
    }
    return net;
  }

  DualViewFeatures<T> forward(const Tensor4<T>& images, bool train, Rng* drop_rng = nullptr) {
    check(images.c == 3, "expected 3-channel input, got ", images.c);
    check(images.h == cfg.input_size && images.w == cfg.input_size,
          "input is ", images.h, "x", images.w, ", config wants ", cfg.input_size);
    Tensor4<T> shared = images;
    for (auto& b : trunk) shared = b.forward(shared, train, drop_rng);
    // With no head blocks (fully shared) both views are the trunk output.
    Tensor4<T> g = shared, l = std::move(shared);
    for (auto& b : head_g) g = b.forward(g, train, drop_rng);
    for (auto& b : head_l) l = b.forward(l, train, drop_rng);
    return {std::move(g), std::move(l)};
  }

  /// Propagates view gradients back to the input (returned mostly for tests).
  Tensor4<T> backward(const Tensor4<T>& dglobal, const Tensor4<T>& dlocal) {
    Tensor4<T> dg = dglobal, dl = dlocal;
    for (std::size_t i = head_g.size(); i-- > 0;) dg = head_g[i].backward(dg);
    for (std::size_t i = head_l.size(); i-- > 0;) dl = head_l[i].backward(dl);
    check(dg.same_shape(dl), "view gradient shape mismatch");
    for (std::size_t i = 0; i < dg.v.size(); ++i) dg.v[i] += dl.v[i];
    for (std::size_t i = trunk.size(); i-- > 0;) dg = trunk[i].backward(dg);
    return dg;
  }

  void for_each_param(const ParamFn<T>& fn) {
    for (std::size_t i = 0; i < trunk.size(); ++i)
      trunk[i].for_each_param("trunk" + std::to_string(i), fn);
    for (std::size_t i = 0; i < head_g.size(); ++i) {
      const std::string suffix = std::to_string(i + trunk.size());
      head_g[i].for_each_param("head_g" + suffix, fn);
      head_l[i].for_each_param("head_l" + suffix, fn);
    }
  }
  void for_each_buffer(const BufferFn<T>& fn) {
    for (std::size_t i = 0; i < trunk.size(); ++i)
      trunk[i].for_each_buffer("trunk" + std::to_string(i), fn);
    for (std::size_t i = 0; i < head_g.size(); ++i) {
      const std::string suffix = std::to_string(i + trunk.size());
      head_g[i].for_each_buffer("head_g" + suffix, fn);
      head_l[i].for_each_buffer("head_l" + suffix, fn);
    }
  }

  void zero_grad() {
    for_each_param([](const std::string&, std::vector<T>&, std::vector<T>& g) {
      std::fill(g.begin(), g.end(), T(0));
    });
  }

  long parameter_count_actual() {
    long n = 0;
    for_each_param([&](const std::string&, std::vector<T>& p, std::vector<T>&) {
      n += static_cast<long>(p.size());
    });
    return n;
  }
};

}  // namespace bml::model
