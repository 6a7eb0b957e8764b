#include "mixmatch/network.hpp"

#include <cmath>

namespace mixmatch {

std::string to_string(SideInfo mode) {
  switch (mode) {
    case SideInfo::kPoolingIndices: return "pooling";
    case SideInfo::kSkipConnections: return "skip";
    case SideInfo::kNone: return "none";
  }
  return "?";
}

SideInfo parse_side_info(const std::string& text) {
  if (text == "pooling" || text == "pooling_indices") return SideInfo::kPoolingIndices;
  if (text == "skip" || text == "skip_connections") return SideInfo::kSkipConnections;
  if (text == "none") return SideInfo::kNone;
  throw ConfigError("unknown side-information mode '" + text + "'");
}

std::string to_string(ScalePreset preset) {
  switch (preset) {
    case ScalePreset::kPaper: return "paper";
    case ScalePreset::kDesk: return "desk";
    case ScalePreset::kCustom: return "custom";
  }
  return "?";
}

ArchConfig ArchConfig::paper() {
  return {{{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}}, 256, 256, 3, ScalePreset::kPaper};
}

ArchConfig ArchConfig::desk() {
  return {{{2, 16}, {2, 32}, {2, 64}}, 32, 32, 3, ScalePreset::kDesk};
}

ArchConfig ArchConfig::from_name(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown architecture preset '" + name + "'");
}

void ArchConfig::validate() const {
  if (stages.empty()) throw ConfigError("architecture needs at least one stage");
  for (const auto& s : stages) {
    if (s.num_convs < 1 || s.out_channels < 1) {
      throw ConfigError("architecture stages need >= 1 conv and >= 1 channel");
    }
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("kernel_size must be odd and positive");
  }
  const int factor = 1 << num_stages();
  if (height < 1 || width < 1 || height % factor != 0 || width % factor != 0) {
    throw DimensionError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by 2^" + std::to_string(num_stages()));
  }
}

ModalitySpec ModalitySpec::rgb() {
  return {"rgb", 3, LossKind::kRgbL2Gan, SideInfo::kNone, OutputActivation::kTanh};
}

ModalitySpec ModalitySpec::depth(SideInfo side) {
  return {"depth", 1, LossKind::kDepthBerhu, side, OutputActivation::kLinear};
}

ModalitySpec ModalitySpec::segmentation(int num_classes, SideInfo side) {
  return {"seg", num_classes, LossKind::kSegmentationCe, side, OutputActivation::kLogits};
}

void ModalitySpec::validate() const {
  if (name.empty()) throw ConfigError("modality needs a name");
  if (channels < 1) throw ConfigError("modality '" + name + "' needs >= 1 channel");
  if (loss_kind == LossKind::kRgbL2Gan && decoder_side_info != SideInfo::kNone) {
    throw ConfigError("the RGB decoder does not take side information");
  }
}

template <class Real>
ConvBlock<Real> ConvBlock<Real>::create(int in_ch, int out_ch, int kernel, int stride,
                                        bool normalize, Activation activation,
                                        std::mt19937_64& rng) {
  ConvBlock block;
  const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> w(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel);
  for (auto& v : w) v = static_cast<Real>(dist(rng));
  block.weight = BasicTensor<Real>::from({out_ch, in_ch, kernel, kernel}, std::move(w), true);
  block.normalize = normalize;
  if (normalize) {
    block.gamma = BasicTensor<Real>::full({1, out_ch, 1, 1}, Real(1), true);
    block.beta = BasicTensor<Real>::zeros({1, out_ch, 1, 1}, true);
    block.stats = RunningStats<Real>::create(out_ch);
  } else {
    block.bias = BasicTensor<Real>::zeros({1, out_ch, 1, 1}, true);
  }
  block.stride = stride;
  block.pad = kernel / 2;
  block.activation = activation;
  return block;
}

template <class Real>
BasicTensor<Real> ConvBlock<Real>::forward(const BasicTensor<Real>& x, Mode mode,
                                           bool update_running) {
  auto h = conv2d(x, weight, bias, stride, pad);
  if (normalize) {
    BatchNormOptions opts;
    opts.mode = mode;
    opts.update_running = update_running;
    h = batchnorm(h, gamma, beta, &stats, opts);
  }
  switch (activation) {
    case Activation::kRelu: return relu(h);
    case Activation::kLeakyRelu: return leaky_relu(h, Real(0.2));
    case Activation::kNone: return h;
  }
  return h;
}

template <class Real>
void ConvBlock<Real>::collect_parameters(std::vector<BasicTensor<Real>>& out) const {
  out.push_back(weight);
  if (bias.defined()) out.push_back(bias);
  if (normalize) {
    out.push_back(gamma);
    out.push_back(beta);
  }
}

template <class Real>
void ConvBlock<Real>::collect_state(const std::string& prefix, NamedTensors<Real>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  if (normalize) {
    out.emplace_back(prefix + ".bn.gamma", gamma);
    out.emplace_back(prefix + ".bn.beta", beta);
    out.emplace_back(prefix + ".bn.running_mean", stats.mean);
    out.emplace_back(prefix + ".bn.running_var", stats.var);
  }
}

namespace {

std::string block_name(std::size_t stage, std::size_t conv) {
  return "stage" + std::to_string(stage) + ".conv" + std::to_string(conv);
}

template <class Real>
std::vector<BasicTensor<Real>> gather(const std::vector<std::vector<ConvBlock<Real>>>& stages) {
  std::vector<BasicTensor<Real>> out;
  for (const auto& stage : stages) {
    for (const auto& block : stage) block.collect_parameters(out);
  }
  return out;
}

template <class Real>
NamedTensors<Real> gather_state(const std::vector<std::vector<ConvBlock<Real>>>& stages,
                                const std::string& prefix) {
  NamedTensors<Real> out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t k = 0; k < stages[s].size(); ++k) {
      stages[s][k].collect_state(prefix + "." + block_name(s, k), out);
    }
  }
  return out;
}

}  // namespace

template <class Real>
Encoder<Real>::Encoder(ModalitySpec spec, ArchConfig arch, std::mt19937_64& rng)
    : spec_(std::move(spec)), arch_(std::move(arch)) {
  spec_.validate();
  arch_.validate();
  int in_ch = spec_.channels;
  for (const auto& stage : arch_.stages) {
    std::vector<ConvBlock<Real>> blocks;
    for (int k = 0; k < stage.num_convs; ++k) {
      blocks.push_back(ConvBlock<Real>::create(in_ch, stage.out_channels, arch_.kernel_size, 1,
                                               true, Activation::kRelu, rng));
      in_ch = stage.out_channels;
    }
    stages_.push_back(std::move(blocks));
  }
}

template <class Real>
EncoderOutput<Real> Encoder<Real>::encode(const BasicTensor<Real>& x, double noise_sigma,
                                          Mode mode, std::mt19937_64* rng) {
  const Shape xs = x.shape();
  if (xs.c != spec_.channels) {
    throw DimensionError("encoder '" + spec_.name + "' expects " + std::to_string(spec_.channels) +
                         " input channels, got " + std::to_string(xs.c));
  }
  if (xs.h != arch_.height || xs.w != arch_.width) {
    throw DimensionError("encoder '" + spec_.name + "' expects " + std::to_string(arch_.height) +
                         "x" + std::to_string(arch_.width) + " inputs, got " + xs.str());
  }
  EncoderOutput<Real> out;
  BasicTensor<Real> h = x;
  for (auto& stage : stages_) {
    for (auto& block : stage) h = block.forward(h, mode, !frozen_);
    out.skip_features.push_back(h);
    auto [pooled, idx] = maxpool2_indices(h);
    out.indices.push_back(std::move(idx));
    h = std::move(pooled);
  }
  out.clean_latent = h;
  if (mode == Mode::kTrain && noise_sigma > 0.0) {
    if (rng == nullptr) throw ContractError("encode: train-mode noise needs an rng");
    h = add_gaussian_noise(h, noise_sigma, *rng);
  } else if (noise_sigma < 0.0) {
    throw ParameterError("encode: noise sigma must be >= 0");
  }
  out.latent = h;
  return out;
}

template <class Real>
std::vector<BasicTensor<Real>> Encoder<Real>::parameters() const {
  return gather(stages_);
}

template <class Real>
NamedTensors<Real> Encoder<Real>::state(const std::string& prefix) const {
  return gather_state(stages_, prefix);
}

template <class Real>
void Encoder<Real>::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : parameters()) {
    p.set_requires_grad(!frozen);
    p.zero_grad();
  }
}

template <class Real>
Decoder<Real>::Decoder(ModalitySpec spec, ArchConfig arch, std::mt19937_64& rng)
    : spec_(std::move(spec)), arch_(std::move(arch)) {
  spec_.validate();
  arch_.validate();
  const int num_stages = arch_.num_stages();
  const bool compact = spec_.loss_kind == LossKind::kRgbL2Gan;
  const bool skip = spec_.decoder_side_info == SideInfo::kSkipConnections;
  for (int s = 0; s < num_stages; ++s) {
    const int e = num_stages - 1 - s;  // mirrored encoder stage
    const int width = arch_.stages[e].out_channels;
    const int next = e > 0 ? arch_.stages[e - 1].out_channels : spec_.channels;
    const bool last_stage = e == 0;
    // RGB decoders use one conv per stage; the others mirror the encoder.
    const int convs = compact ? 1 : arch_.stages[e].num_convs;
    std::vector<ConvBlock<Real>> blocks;
    for (int k = 0; k < convs; ++k) {
      const int in_ch = (k == 0 && skip) ? 2 * width : width;
      const bool last_conv = k == convs - 1;
      const int out_ch = last_conv ? next : width;
      if (last_stage && last_conv) {
        blocks.push_back(ConvBlock<Real>::create(in_ch, out_ch, arch_.kernel_size, 1, false,
                                                 Activation::kNone, rng));
      } else {
        blocks.push_back(ConvBlock<Real>::create(in_ch, out_ch, arch_.kernel_size, 1, true,
                                                 Activation::kRelu, rng));
      }
    }
    stages_.push_back(std::move(blocks));
  }
}

template <class Real>
BasicTensor<Real> Decoder<Real>::decode(const BasicTensor<Real>& latent,
                                        const EncoderOutput<Real>* side, Mode mode) {
  const int num_stages = arch_.num_stages();
  const SideInfo side_mode = spec_.decoder_side_info;
  const Shape ls = latent.shape();
  const std::int64_t latent_ch = arch_.stages.back().out_channels;
  if (ls.c != latent_ch || ls.h != arch_.latent_height() || ls.w != arch_.latent_width()) {
    throw DimensionError("decoder '" + spec_.name + "' expects latents [*," +
                         std::to_string(latent_ch) + "," + std::to_string(arch_.latent_height()) +
                         "," + std::to_string(arch_.latent_width()) + "], got " + ls.str());
  }
  if (side_mode != SideInfo::kNone) {
    if (side == nullptr) {
      throw ContractError("decoder '" + spec_.name + "' requires side information (" +
                          to_string(side_mode) + ")");
    }
    const std::size_t provided = side_mode == SideInfo::kPoolingIndices
                                     ? side->indices.size()
                                     : side->skip_features.size();
    if (provided != static_cast<std::size_t>(num_stages)) {
      throw DimensionError("decoder '" + spec_.name + "' has " + std::to_string(num_stages) +
                           " stages but side information covers " + std::to_string(provided));
    }
  }

  BasicTensor<Real> h = latent;
  for (int s = 0; s < num_stages; ++s) {
    const int e = num_stages - 1 - s;
    switch (side_mode) {
      case SideInfo::kPoolingIndices: {
        const PoolingIndices& idx = side->indices[static_cast<std::size_t>(e)];
        if (idx.input_shape.n != h.shape().n) {
          throw DimensionError("pooling indices batch " + std::to_string(idx.input_shape.n) +
                               " does not match latent batch " + std::to_string(h.shape().n));
        }
        h = maxunpool2(h, idx, idx.input_shape);
        break;
      }
      case SideInfo::kSkipConnections:
        h = concat_channels(upsample_nearest2(h), side->skip_features[static_cast<std::size_t>(e)]);
        break;
      case SideInfo::kNone:
        h = upsample_nearest2(h);
        break;
    }
    for (auto& block : stages_[static_cast<std::size_t>(s)]) h = block.forward(h, mode, true);
  }
  switch (spec_.output_activation) {
    case OutputActivation::kTanh: return tanh_act(h);
    case OutputActivation::kLinear:
    case OutputActivation::kLogits: return h;
  }
  return h;
}

template <class Real>
std::vector<BasicTensor<Real>> Decoder<Real>::parameters() const {
  return gather(stages_);
}

template <class Real>
NamedTensors<Real> Decoder<Real>::state(const std::string& prefix) const {
  return gather_state(stages_, prefix);
}

template <class Real>
Discriminator<Real>::Discriminator(ArchConfig arch, std::mt19937_64& rng) : arch_(std::move(arch)) {
  arch_.validate();
  int in_ch = 3;
  for (int k = 0; k < arch_.discriminator_blocks(); ++k) {
    const int out_ch = arch_.stages[static_cast<std::size_t>(k)].out_channels;
    blocks_.push_back(ConvBlock<Real>::create(in_ch, out_ch, 5, 2, true, Activation::kLeakyRelu, rng));
    in_ch = out_ch;
  }
  blocks_.push_back(ConvBlock<Real>::create(in_ch, 1, 3, 1, false, Activation::kNone, rng));
}

template <class Real>
BasicTensor<Real> Discriminator<Real>::discriminate(const BasicTensor<Real>& x, Mode mode) {
  const Shape xs = x.shape();
  if (xs.c != 3) {
    throw DimensionError("discriminator expects 3-channel RGB input, got " + std::to_string(xs.c) +
                         " channels");
  }
  if (xs.h != arch_.height || xs.w != arch_.width) {
    throw DimensionError("discriminator expects " + std::to_string(arch_.height) + "x" +
                         std::to_string(arch_.width) + " inputs, got " + xs.str());
  }
  BasicTensor<Real> h = x;
  for (auto& block : blocks_) h = block.forward(h, mode, true);
  return h;
}

template <class Real>
std::vector<BasicTensor<Real>> Discriminator<Real>::parameters() const {
  std::vector<BasicTensor<Real>> out;
  for (const auto& b : blocks_) b.collect_parameters(out);
  return out;
}

template <class Real>
NamedTensors<Real> Discriminator<Real>::state(const std::string& prefix) const {
  NamedTensors<Real> out;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    blocks_[k].collect_state(prefix + ".block" + std::to_string(k), out);
  }
  return out;
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace mixmatch
