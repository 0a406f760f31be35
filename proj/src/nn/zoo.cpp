#include "dynkd/nn/zoo.hpp"

#include <array>

#include "dynkd/error.hpp"

namespace dynkd::nn {

namespace {

using kernels::ConvGeometry;

ConvGeometry k3(int stride = 1) { return {3, stride, 1, 1}; }
ConvGeometry k1(int stride = 1) { return {1, stride, 0, 1}; }
ConvGeometry depthwise(int channels, int stride = 1) { return {3, stride, 1, channels}; }

void conv_bn_act(Sequential& s, int cin, int cout, ConvGeometry g, real cap = 0.0) {
  s.emplace<Conv2d>(cin, cout, g);
  s.emplace<BatchNorm2d>(cout);
  s.emplace<Activation>(cap);
}

void conv_bn(Sequential& s, int cin, int cout, ConvGeometry g) {
  s.emplace<Conv2d>(cin, cout, g);
  s.emplace<BatchNorm2d>(cout);
}

// 3x3 conv blocks, each followed by 2x2 max pooling; 112 channels at 2x2.
Sequential tiny_teacher() {
  Sequential s;
  conv_bn_act(s, 3, 24, k3());
  s.emplace<MaxPool2d>();
  conv_bn_act(s, 24, 48, k3());
  s.emplace<MaxPool2d>();
  conv_bn_act(s, 48, 96, k3());
  s.emplace<MaxPool2d>();
  conv_bn_act(s, 96, 112, k3());
  s.emplace<MaxPool2d>();
  s.emplace<GlobalAvgPool>();
  return s;
}

// Three plain conv blocks and one depthwise-separable block; 128 channels.
Sequential tiny_student() {
  Sequential s;
  conv_bn_act(s, 3, 16, k3());
  s.emplace<MaxPool2d>();
  conv_bn_act(s, 16, 32, k3());
  s.emplace<MaxPool2d>();
  conv_bn_act(s, 32, 64, k3());
  s.emplace<MaxPool2d>();
  conv_bn_act(s, 64, 64, depthwise(64));
  conv_bn_act(s, 64, 128, k1());
  s.emplace<GlobalAvgPool>();
  return s;
}

Sequential basic_block(int cin, int cout, int stride) {
  Sequential main;
  conv_bn_act(main, cin, cout, k3(stride));
  conv_bn(main, cout, cout, k3());
  Sequential shortcut;
  if (stride != 1 || cin != cout) conv_bn(shortcut, cin, cout, k1(stride));
  Sequential wrapped;
  wrapped.emplace<Residual>(std::move(main), std::move(shortcut), true);
  return wrapped;
}

Sequential bottleneck(int cin, int width, int stride) {
  const int cout = width * 4;
  Sequential main;
  conv_bn_act(main, cin, width, k1());
  conv_bn_act(main, width, width, k3(stride));
  conv_bn(main, width, cout, k1());
  Sequential shortcut;
  if (stride != 1 || cin != cout) conv_bn(shortcut, cin, cout, k1(stride));
  Sequential wrapped;
  wrapped.emplace<Residual>(std::move(main), std::move(shortcut), true);
  return wrapped;
}

Sequential resnet(bool use_bottleneck) {
  constexpr std::array<int, 4> blocks{3, 4, 6, 3};
  constexpr std::array<int, 4> widths{64, 128, 256, 512};
  Sequential s;
  conv_bn_act(s, 3, 64, k3());
  int cin = 64;
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < blocks[stage]; ++b) {
      const int stride = (b == 0 && stage > 0) ? 2 : 1;
      if (use_bottleneck) {
        s.add(std::make_unique<Sequential>(bottleneck(cin, widths[stage], stride)));
        cin = widths[stage] * 4;
      } else {
        s.add(std::make_unique<Sequential>(basic_block(cin, widths[stage], stride)));
        cin = widths[stage];
      }
    }
  }
  s.emplace<GlobalAvgPool>();
  return s;
}

Sequential vgg16() {
  constexpr std::array<int, 18> cfg{64, 64, 0, 128, 128, 0, 256, 256, 256,
                                    0,  512, 512, 512, 0, 512, 512, 512, 0};
  Sequential s;
  int cin = 3;
  for (int v : cfg) {
    if (v == 0) {
      s.emplace<MaxPool2d>();
    } else {
      conv_bn_act(s, cin, v, k3());
      cin = v;
    }
  }
  return s;
}

Sequential mobilenet_v2() {
  struct Stage {
    int expand, channels, repeats, stride;
  };
  constexpr std::array<Stage, 7> stages{{{1, 16, 1, 1},
                                         {6, 24, 2, 1},
                                         {6, 32, 3, 2},
                                         {6, 64, 4, 2},
                                         {6, 96, 3, 1},
                                         {6, 160, 3, 2},
                                         {6, 320, 1, 1}}};
  Sequential s;
  conv_bn_act(s, 3, 32, k3(), 6.0);
  int cin = 32;
  for (const Stage& st : stages) {
    for (int r = 0; r < st.repeats; ++r) {
      const int stride = r == 0 ? st.stride : 1;
      const int hidden = cin * st.expand;
      Sequential main;
      if (st.expand != 1) conv_bn_act(main, cin, hidden, k1(), 6.0);
      conv_bn_act(main, hidden, hidden, depthwise(hidden, stride), 6.0);
      conv_bn(main, hidden, st.channels, k1());
      if (stride == 1 && cin == st.channels) {
        s.emplace<Residual>(std::move(main), Sequential{}, false);
      } else {
        s.add(std::make_unique<Sequential>(std::move(main)));
      }
      cin = st.channels;
    }
  }
  conv_bn_act(s, cin, 1280, k1(), 6.0);
  s.emplace<GlobalAvgPool>();
  return s;
}

}  // namespace

const std::vector<ZooEntry>& model_zoo() {
  static const std::vector<ZooEntry> zoo{
      {"tiny_teacher", "4 conv3x3 blocks (24-48-96-112) with max pooling, global pool",
       ZooRole::teacher, ZooScale::tiny},
      {"tiny_student", "3 conv3x3 blocks (16-32-64) + depthwise-separable 64->128, global pool",
       ZooRole::student, ZooScale::tiny},
      {"resnet34", "ResNet-34, 32x32 stem, basic blocks [3,4,6,3]", ZooRole::either,
       ZooScale::full},
      {"resnet50", "ResNet-50, 32x32 stem, bottleneck blocks [3,4,6,3]", ZooRole::teacher,
       ZooScale::full},
      {"vgg16", "VGG-16 with batch norm, 512-d pre-flatten features", ZooRole::student,
       ZooScale::full},
      {"mobilenet_v2", "MobileNetV2, stride-1 stem for 32x32 inputs", ZooRole::student,
       ZooScale::full},
  };
  return zoo;
}

const ZooEntry& zoo_entry(std::string_view id) {
  for (const auto& e : model_zoo()) {
    if (e.id == id) return e;
  }
  std::string known;
  for (const auto& e : model_zoo()) known += (known.empty() ? "" : ", ") + e.id;
  throw ConfigError("unknown model '" + std::string(id) + "' (known: " + known + ")");
}

Model build_model(std::string_view id, int num_classes, std::uint64_t seed,
                  bool allow_full_scale) {
  const ZooEntry& entry = zoo_entry(id);
  if (entry.scale == ZooScale::full && !allow_full_scale) {
    throw ConfigError("model '" + entry.id +
                      "' is full-scale; enable models.allow_full_scale to build it");
  }
  if (id == "tiny_teacher") return Model(entry.id, num_classes, seed, tiny_teacher(), FeatureTap::global_pool);
  if (id == "tiny_student") return Model(entry.id, num_classes, seed, tiny_student(), FeatureTap::global_pool);
  if (id == "resnet34") return Model(entry.id, num_classes, seed, resnet(false), FeatureTap::global_pool);
  if (id == "resnet50") return Model(entry.id, num_classes, seed, resnet(true), FeatureTap::global_pool);
  if (id == "vgg16") return Model(entry.id, num_classes, seed, vgg16(), FeatureTap::pre_flatten);
  return Model(entry.id, num_classes, seed, mobilenet_v2(), FeatureTap::global_pool);
}

}  // namespace dynkd::nn
