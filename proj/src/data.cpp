#include "mixmatch/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>

#include "binary_io.hpp"

namespace mixmatch {
namespace {

constexpr std::array<char, 8> kMagic = {'M', 'M', 'D', 'A', 'T', 'A', '\0', '\1'};
constexpr std::uint32_t kVersion = 1;
constexpr double kDepthAmplitude = 0.04;
constexpr double kMinDepthGap = 0.1;
constexpr double kNearest = 0.15;
constexpr double kFarthest = 0.9;

enum class Shape2D { kRect, kEllipse };
enum class Profile { kFlat, kRampX, kRampY, kDome };

struct ClassLook {
  Shape2D shape;
  Profile profile;
  std::array<double, 3> color;
  double size_scale;
};

// Pairs (1, 2) and (3, 5) share nearly the same color and differ only in
// outline or shading direction.
constexpr std::array<std::array<double, 3>, 7> kPalette = {{
    {0.85, 0.25, 0.20},
    {0.80, 0.30, 0.25},
    {0.20, 0.65, 0.30},
    {0.25, 0.35, 0.85},
    {0.28, 0.62, 0.34},
    {0.90, 0.80, 0.20},
    {0.60, 0.30, 0.75},
}};

ClassLook look_of(int cls) {
  const int k = cls - 1;
  ClassLook look;
  look.shape = k % 2 == 0 ? Shape2D::kRect : Shape2D::kEllipse;
  look.profile = static_cast<Profile>((k / 2) % 4);
  look.color = kPalette[static_cast<std::size_t>(k % 7)];
  look.size_scale = k < 7 ? 1.0 : 0.65;
  return look;
}

// Uniform in [0, 1) from the top 53 bits, independent of the standard
// library's distribution implementations.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }
int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

std::mt19937_64 scene_rng(std::uint64_t split_seed, std::uint64_t scene) {
  std::seed_seq seq{static_cast<std::uint32_t>(split_seed), static_cast<std::uint32_t>(split_seed >> 32),
                    static_cast<std::uint32_t>(scene), static_cast<std::uint32_t>(scene >> 32),
                    0x5ce9e5u};
  return std::mt19937_64(seq);
}

struct Object {
  int cls;
  ClassLook look;
  double cx, cy, a, b;
  double base_depth;
  std::array<double, 3> color;
};

}  // namespace

void SplitSpec::validate() const {
  if (n_d1 <= 0 || n_d2 <= 0 || n_d3 <= 0) {
    throw ConfigError("split sizes n_d1, n_d2, n_d3 must be positive");
  }
  if (n_val < 0) throw ConfigError("n_val must be >= 0");
  if (num_classes < 2 || num_classes > 14) {
    throw ConfigError("num_classes must lie in [2, 14], got " + std::to_string(num_classes));
  }
  if (height < 16 || width < 16) {
    throw DimensionError("scene resolution must be at least 16x16, got " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
}

SceneTriplet generate_scene(std::uint64_t scene, const SplitSpec& spec,
                            std::optional<int> object_count) {
  spec.validate();
  const int H = spec.height;
  const int W = spec.width;
  const auto plane = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
  auto rng = scene_rng(spec.seed, scene);

  const int count = object_count ? *object_count : uniform_int(rng, 3, 6);
  if (count < 0) throw ParameterError("object_count must be >= 0");
  const double slack = (kFarthest - kNearest) - kMinDepthGap * std::max(count - 1, 0);
  if (slack < 0) throw ParameterError("too many objects for distinct depth layers");

  std::vector<double> offsets(static_cast<std::size_t>(count));
  for (auto& o : offsets) o = uniform(rng, 0.0, slack);
  std::sort(offsets.begin(), offsets.end());
  std::vector<double> depths(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    depths[i] = kNearest + offsets[i] + kMinDepthGap * static_cast<double>(i);
  }
  std::shuffle(depths.begin(), depths.end(), rng);

  std::vector<Object> objects;
  for (int i = 0; i < count; ++i) {
    Object o;
    o.cls = uniform_int(rng, 1, spec.num_classes - 1);
    o.look = look_of(o.cls);
    o.cx = uniform(rng, 0.1, 0.9) * W;
    o.cy = uniform(rng, 0.1, 0.9) * H;
    o.a = uniform(rng, 0.15, 0.32) * W * o.look.size_scale;
    o.b = uniform(rng, 0.15, 0.32) * H * o.look.size_scale;
    o.base_depth = depths[static_cast<std::size_t>(i)];
    for (int ch = 0; ch < 3; ++ch) {
      o.color[static_cast<std::size_t>(ch)] =
          o.look.color[static_cast<std::size_t>(ch)] + uniform(rng, -0.06, 0.06);
    }
    objects.push_back(o);
  }
  // Paint far to near so the nearest object owns each pixel.
  std::sort(objects.begin(), objects.end(),
            [](const Object& l, const Object& r) { return l.base_depth > r.base_depth; });

  std::array<double, 3> background;
  const double grey = uniform(rng, 0.35, 0.55);
  for (auto& c : background) c = grey + uniform(rng, -0.05, 0.05);

  SceneTriplet out;
  out.scene = scene;
  out.rgb.assign(3 * plane, 0.0f);
  out.depth.assign(plane, 1.0f);
  out.seg.assign(plane, 0);
  std::vector<std::array<double, 3>> color(plane, background);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto p = static_cast<std::size_t>(y * W + x);
      const double fy = static_cast<double>(y) / (H - 1);
      for (auto& c : color[p]) c -= 0.1 * (fy - 0.5);
    }
  }
  for (const auto& o : objects) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double u = (x + 0.5 - o.cx) / o.a;
        const double v = (y + 0.5 - o.cy) / o.b;
        const bool inside = o.look.shape == Shape2D::kRect ? (std::abs(u) <= 1 && std::abs(v) <= 1)
                                                           : (u * u + v * v <= 1);
        if (!inside) continue;
        double shape = 0.0;
        switch (o.look.profile) {
          case Profile::kFlat: break;
          case Profile::kRampX: shape = u; break;
          case Profile::kRampY: shape = v; break;
          case Profile::kDome: shape = -(1.0 - std::min(1.0, 0.5 * (u * u + v * v))); break;
        }
        const double d = o.base_depth + kDepthAmplitude * shape;
        const auto p = static_cast<std::size_t>(y * W + x);
        out.depth[p] = static_cast<float>(d);
        out.seg[p] = o.cls;
        const double shade = 1.15 - 0.7 * d;
        for (std::size_t ch = 0; ch < 3; ++ch) color[p][ch] = o.color[ch] * shade;
      }
    }
  }
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double c = std::clamp(color[p][ch] + uniform(rng, -0.02, 0.02), 0.0, 1.0);
      out.rgb[ch * plane + p] = static_cast<float>(2.0 * c - 1.0);
    }
  }
  return out;
}

Splits make_splits(const SplitSpec& spec) {
  spec.validate();
  Splits s;
  s.spec = spec;
  for (auto* d : {&s.d1.spec, &s.d2.spec, &s.d3.spec, &s.val_seg.spec, &s.val_depth.spec}) {
    *d = spec;
  }
  std::uint64_t next = 0;
  const auto take = [&](std::int64_t n, auto&& sink) {
    for (std::int64_t i = 0; i < n; ++i) sink(generate_scene(next++, spec));
  };
  take(spec.n_d1, [&](SceneTriplet t) {
    s.d1.items.push_back({t.scene, std::move(t.rgb), std::move(t.seg)});
  });
  take(spec.n_d2, [&](SceneTriplet t) {
    s.d2.items.push_back({t.scene, std::move(t.rgb), std::move(t.depth)});
  });
  take(spec.n_d3, [&](SceneTriplet t) { s.d3.items.push_back(std::move(t)); });
  take(spec.n_val, [&](SceneTriplet t) {
    s.val_seg.items.push_back({t.scene, std::move(t.rgb), std::move(t.seg)});
  });
  take(spec.n_val, [&](SceneTriplet t) {
    s.val_depth.items.push_back({t.scene, std::move(t.rgb), std::move(t.depth)});
  });
  return s;
}

namespace {

template <class Sample>
constexpr std::uint32_t kind_of() {
  if constexpr (std::is_same_v<Sample, SegSample>) return 1;
  if constexpr (std::is_same_v<Sample, DepthSample>) return 2;
  return 3;
}

template <class T>
void append_plane(std::vector<unsigned char>& raw, const std::vector<T>& values) {
  for (T v : values) {
    v = io::to_little_endian(v);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    raw.insert(raw.end(), p, p + sizeof(T));
  }
}

template <class T>
std::vector<T> take_plane(const std::vector<unsigned char>& raw, std::size_t& pos, std::size_t n) {
  std::vector<T> out(n);
  for (auto& v : out) {
    std::memcpy(&v, raw.data() + pos, sizeof(T));
    v = io::to_little_endian(v);
    pos += sizeof(T);
  }
  return out;
}

template <class Sample>
std::vector<unsigned char> pack(const Sample& s) {
  std::vector<unsigned char> raw;
  append_plane(raw, s.rgb);
  if constexpr (!std::is_same_v<Sample, SegSample>) append_plane(raw, s.depth);
  if constexpr (!std::is_same_v<Sample, DepthSample>) append_plane(raw, s.seg);
  return raw;
}

template <class Sample>
std::size_t record_bytes(const SplitSpec& spec) {
  const auto plane = static_cast<std::size_t>(spec.height) * static_cast<std::size_t>(spec.width);
  std::size_t bytes = 3 * plane * sizeof(float);
  if constexpr (!std::is_same_v<Sample, SegSample>) bytes += plane * sizeof(float);
  if constexpr (!std::is_same_v<Sample, DepthSample>) bytes += plane * sizeof(std::int32_t);
  return bytes;
}

template <class Sample>
Sample unpack(const std::vector<unsigned char>& raw, std::uint64_t scene, const SplitSpec& spec) {
  const auto plane = static_cast<std::size_t>(spec.height) * static_cast<std::size_t>(spec.width);
  std::size_t pos = 0;
  Sample s;
  s.scene = scene;
  s.rgb = take_plane<float>(raw, pos, 3 * plane);
  if constexpr (!std::is_same_v<Sample, SegSample>) s.depth = take_plane<float>(raw, pos, plane);
  if constexpr (!std::is_same_v<Sample, DepthSample>) {
    s.seg = take_plane<std::int32_t>(raw, pos, plane);
  }
  return s;
}

}  // namespace

template <class Sample>
void save_dataset(const Dataset<Sample>& data, const std::filesystem::path& path) {
  const auto& spec = data.spec;
  io::ByteWriter out;
  out.bytes(kMagic.data(), kMagic.size());
  out.put<std::uint32_t>(kVersion);
  out.put<std::uint32_t>(kind_of<Sample>());
  out.put<std::uint64_t>(spec.seed);
  for (std::int64_t n : {spec.n_d1, spec.n_d2, spec.n_d3, spec.n_val}) out.put<std::int64_t>(n);
  for (std::int32_t v : {spec.num_classes, spec.height, spec.width}) out.put<std::int32_t>(v);
  out.put<std::uint64_t>(data.items.size());
  const std::size_t expected = record_bytes<Sample>(spec);
  for (const auto& item : data.items) {
    const auto raw = pack(item);
    if (raw.size() != expected) {
      throw DimensionError("dataset record " + std::to_string(item.scene) +
                           " does not match the declared resolution");
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
      throw FormatError("zlib compression failed for record " + std::to_string(item.scene));
    }
    out.put<std::uint64_t>(item.scene);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(raw.size()));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(packed_len));
    out.bytes(packed.data(), packed_len);
  }
  out.save(path);
}

template <class Sample>
Dataset<Sample> load_dataset(const std::filesystem::path& path) {
  const std::string where = path.string();
  io::ByteReader in(io::read_file(path), where);
  std::array<char, 8> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw FormatError(where + ": not a dataset file (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError(where + ": dataset version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kVersion) + ")");
  }
  const auto kind = in.get<std::uint32_t>();
  if (kind != kind_of<Sample>()) {
    throw FormatError(where + ": dataset kind " + std::to_string(kind) + ", expected " +
                      std::to_string(kind_of<Sample>()));
  }
  Dataset<Sample> data;
  auto& spec = data.spec;
  spec.seed = in.get<std::uint64_t>();
  spec.n_d1 = in.get<std::int64_t>();
  spec.n_d2 = in.get<std::int64_t>();
  spec.n_d3 = in.get<std::int64_t>();
  spec.n_val = in.get<std::int64_t>();
  spec.num_classes = in.get<std::int32_t>();
  spec.height = in.get<std::int32_t>();
  spec.width = in.get<std::int32_t>();
  try {
    spec.validate();
  } catch (const Error& e) {
    throw FormatError(where + ": corrupt header (" + e.what() + ")");
  }
  const auto count = in.get<std::uint64_t>();
  const std::size_t expected = record_bytes<Sample>(spec);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto scene = in.get<std::uint64_t>();
    const auto raw_len = in.get<std::uint32_t>();
    const auto packed_len = in.get<std::uint32_t>();
    if (raw_len != expected) {
      throw FormatError(where + ": record " + std::to_string(k) + " has " +
                        std::to_string(raw_len) + " bytes, expected " + std::to_string(expected));
    }
    std::vector<unsigned char> packed(packed_len);
    in.bytes(packed.data(), packed.size());
    std::vector<unsigned char> raw(raw_len);
    uLongf out_len = raw_len;
    if (uncompress(raw.data(), &out_len, packed.data(), packed_len) != Z_OK || out_len != raw_len) {
      throw FormatError(where + ": record " + std::to_string(k) + " is corrupt");
    }
    data.items.push_back(unpack<Sample>(raw, scene, spec));
    if constexpr (!std::is_same_v<Sample, DepthSample>) {
      for (auto label : data.items.back().seg) {
        if (label < 0 || label >= spec.num_classes) {
          throw FormatError(where + ": record " + std::to_string(k) + " has label " +
                            std::to_string(label) + " outside [0, " +
                            std::to_string(spec.num_classes) + ")");
        }
      }
    }
  }
  if (!in.at_end()) throw FormatError(where + ": trailing bytes after the last record");
  return data;
}

template void save_dataset(const Dataset<SegSample>&, const std::filesystem::path&);
template void save_dataset(const Dataset<DepthSample>&, const std::filesystem::path&);
template void save_dataset(const Dataset<EvalSample>&, const std::filesystem::path&);
template Dataset<SegSample> load_dataset(const std::filesystem::path&);
template Dataset<DepthSample> load_dataset(const std::filesystem::path&);
template Dataset<EvalSample> load_dataset(const std::filesystem::path&);

void save_splits(const Splits& splits, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(splits.d1, dir / "d1.mmd");
  save_dataset(splits.d2, dir / "d2.mmd");
  save_dataset(splits.d3, dir / "d3.mmd");
  save_dataset(splits.val_seg, dir / "val_seg.mmd");
  save_dataset(splits.val_depth, dir / "val_depth.mmd");
}

Splits load_splits(const std::filesystem::path& dir) {
  Splits s;
  s.d1 = load_dataset<SegSample>(dir / "d1.mmd");
  s.d2 = load_dataset<DepthSample>(dir / "d2.mmd");
  s.d3 = load_dataset<EvalSample>(dir / "d3.mmd");
  s.val_seg = load_dataset<SegSample>(dir / "val_seg.mmd");
  s.val_depth = load_dataset<DepthSample>(dir / "val_depth.mmd");
  s.spec = s.d1.spec;
  for (const auto* d : {&s.d2.spec, &s.d3.spec, &s.val_seg.spec, &s.val_depth.spec}) {
    if (!(*d == s.spec)) throw FormatError(dir.string() + ": split files come from different specs");
  }
  return s;
}

namespace {

template <class Real, class Sample, class Field>
BasicTensor<Real> stack(const Dataset<Sample>& data, std::span<const std::size_t> indices,
                        int channels, Field field) {
  const auto& spec = data.spec;
  const Shape shape{static_cast<std::int64_t>(indices.size()), channels, spec.height, spec.width};
  auto out = BasicTensor<Real>::zeros(shape);
  auto dst = out.mutable_values();
  std::size_t pos = 0;
  for (std::size_t i : indices) {
    if (i >= data.items.size()) throw ParameterError("batch index out of range");
    for (float v : field(data.items[i])) dst[pos++] = static_cast<Real>(v);
  }
  return out;
}

template <class Sample>
LabelMap labels_of(const Dataset<Sample>& data, std::span<const std::size_t> indices) {
  LabelMap labels;
  labels.n = static_cast<std::int64_t>(indices.size());
  labels.h = data.spec.height;
  labels.w = data.spec.width;
  for (std::size_t i : indices) {
    if (i >= data.items.size()) throw ParameterError("batch index out of range");
    const auto& seg = data.items[i].seg;
    labels.labels.insert(labels.labels.end(), seg.begin(), seg.end());
  }
  return labels;
}

}  // namespace

template <class Real>
SegPairBatch<Real> make_seg_batch(const Dataset<SegSample>& data,
                                  std::span<const std::size_t> indices) {
  SegPairBatch<Real> b;
  b.rgb = stack<Real>(data, indices, 3, [](const SegSample& s) -> const auto& { return s.rgb; });
  b.labels = labels_of(data, indices);
  b.seg_onehot = one_hot<Real>(b.labels, data.spec.num_classes);
  return b;
}

template <class Real>
DepthPairBatch<Real> make_depth_batch(const Dataset<DepthSample>& data,
                                      std::span<const std::size_t> indices) {
  DepthPairBatch<Real> b;
  b.rgb = stack<Real>(data, indices, 3, [](const DepthSample& s) -> const auto& { return s.rgb; });
  b.depth = stack<Real>(data, indices, 1, [](const DepthSample& s) -> const auto& { return s.depth; });
  return b;
}

template <class Real>
EvalBatch<Real> make_eval_batch(const Dataset<EvalSample>& data, std::size_t begin,
                                std::size_t end) {
  if (begin >= end || end > data.items.size()) throw ParameterError("invalid evaluation range");
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  EvalBatch<Real> b;
  b.rgb = stack<Real>(data, idx, 3, [](const EvalSample& s) -> const auto& { return s.rgb; });
  b.depth = stack<Real>(data, idx, 1, [](const EvalSample& s) -> const auto& { return s.depth; });
  b.labels = labels_of(data, idx);
  b.seg_onehot = one_hot<Real>(b.labels, data.spec.num_classes);
  return b;
}

template SegPairBatch<float> make_seg_batch(const Dataset<SegSample>&, std::span<const std::size_t>);
template SegPairBatch<double> make_seg_batch(const Dataset<SegSample>&, std::span<const std::size_t>);
template DepthPairBatch<float> make_depth_batch(const Dataset<DepthSample>&, std::span<const std::size_t>);
template DepthPairBatch<double> make_depth_batch(const Dataset<DepthSample>&, std::span<const std::size_t>);
template EvalBatch<float> make_eval_batch(const Dataset<EvalSample>&, std::size_t, std::size_t);
template EvalBatch<double> make_eval_batch(const Dataset<EvalSample>&, std::size_t, std::size_t);

}  // namespace mixmatch
