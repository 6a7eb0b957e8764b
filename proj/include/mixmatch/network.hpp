#pragma once

// Modality-specific encoders and decoders, and the RGB discriminator, built
// from a stage list. Every encoder built from one ArchConfig produces latents,
// pooling indices and skip features of identical shapes, which is what lets
// any decoder consume any encoder's output.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mixmatch/checkpoint.hpp"
#include "mixmatch/ops.hpp"
#include "mixmatch/tensor.hpp"

namespace mixmatch {

enum class LossKind { kRgbL2Gan, kDepthBerhu, kSegmentationCe };
enum class SideInfo { kPoolingIndices, kSkipConnections, kNone };
enum class OutputActivation { kTanh, kLinear, kLogits };
enum class ScalePreset { kPaper, kDesk, kCustom };

std::string to_string(SideInfo mode);
SideInfo parse_side_info(const std::string& text);
std::string to_string(ScalePreset preset);

struct StageSpec {
  int num_convs = 0;
  int out_channels = 0;
  bool operator==(const StageSpec&) const = default;
};

struct ArchConfig {
  std::vector<StageSpec> stages;
  int height = 32;
  int width = 32;
  int kernel_size = 3;
  ScalePreset preset = ScalePreset::kCustom;

  // VGG-16 layout at 256x256: [(2,64),(2,128),(3,256),(3,512),(3,512)].
  static ArchConfig paper();
  // Three-stage reduction at 32x32 for CPU training.
  static ArchConfig desk();
  static ArchConfig from_name(const std::string& name);

  void validate() const;
  int num_stages() const { return static_cast<int>(stages.size()); }
  int latent_height() const { return height >> num_stages(); }
  int latent_width() const { return width >> num_stages(); }
  // One stride-2 block per stage, capped at four.
  int discriminator_blocks() const { return std::min(num_stages(), 4); }
  bool operator==(const ArchConfig&) const = default;
};

struct ModalitySpec {
  std::string name;
  int channels = 0;
  LossKind loss_kind = LossKind::kRgbL2Gan;
  SideInfo decoder_side_info = SideInfo::kNone;
  OutputActivation output_activation = OutputActivation::kLinear;

  static ModalitySpec rgb();
  static ModalitySpec depth(SideInfo side);
  static ModalitySpec segmentation(int num_classes, SideInfo side);

  void validate() const;
};

template <class Real>
struct EncoderOutput {
  BasicTensor<Real> latent;        // what decoders consume (noisy in train mode)
  BasicTensor<Real> clean_latent;  // before latent noise
  std::vector<PoolingIndices> indices;           // one per stage, shallow first
  std::vector<BasicTensor<Real>> skip_features;  // pre-pooling, shallow first
};

enum class Activation { kRelu, kLeakyRelu, kNone };

/// conv -> [batchnorm] -> activation. Convs followed by batchnorm carry no
/// bias (it would be cancelled by the normalization).
template <class Real>
struct ConvBlock {
  BasicTensor<Real> weight;
  BasicTensor<Real> bias;  // only for un-normalized convs
  BasicTensor<Real> gamma;
  BasicTensor<Real> beta;
  RunningStats<Real> stats;
  bool normalize = true;
  int stride = 1;
  int pad = 1;
  Activation activation = Activation::kRelu;

  static ConvBlock create(int in_ch, int out_ch, int kernel, int stride, bool normalize,
                          Activation activation, std::mt19937_64& rng);

  BasicTensor<Real> forward(const BasicTensor<Real>& x, Mode mode, bool update_running);
  void collect_parameters(std::vector<BasicTensor<Real>>& out) const;
  void collect_state(const std::string& prefix, NamedTensors<Real>& out) const;
};

template <class Real>
class Encoder {
 public:
  Encoder(ModalitySpec spec, ArchConfig arch, std::mt19937_64& rng);

  /// Noise is added to the latent only in train mode; rng is required then.
  EncoderOutput<Real> encode(const BasicTensor<Real>& x, double noise_sigma, Mode mode,
                             std::mt19937_64* rng = nullptr);

  std::vector<BasicTensor<Real>> parameters() const;
  NamedTensors<Real> state(const std::string& prefix) const;

  // A frozen encoder records no gradients and keeps its running statistics.
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  const ModalitySpec& spec() const { return spec_; }
  const ArchConfig& arch() const { return arch_; }
  const std::vector<std::vector<ConvBlock<Real>>>& stages() const { return stages_; }

 private:
  ModalitySpec spec_;
  ArchConfig arch_;
  std::vector<std::vector<ConvBlock<Real>>> stages_;
  bool frozen_ = false;
};

template <class Real>
class Decoder {
 public:
  Decoder(ModalitySpec spec, ArchConfig arch, std::mt19937_64& rng);

  /// side must be provided iff the decoder uses side information. It may come
  /// from any encoder built with the same ArchConfig.
  BasicTensor<Real> decode(const BasicTensor<Real>& latent, const EncoderOutput<Real>* side,
                           Mode mode);

  std::vector<BasicTensor<Real>> parameters() const;
  NamedTensors<Real> state(const std::string& prefix) const;

  const ModalitySpec& spec() const { return spec_; }
  const ArchConfig& arch() const { return arch_; }
  // stages()[s] runs at encoder stage (S-1-s)'s resolution.
  const std::vector<std::vector<ConvBlock<Real>>>& stages() const { return stages_; }
  ConvBlock<Real>& head() { return stages_.back().back(); }

 private:
  ModalitySpec spec_;
  ArchConfig arch_;
  std::vector<std::vector<ConvBlock<Real>>> stages_;
};

/// Patch discriminator: stride-2 5x5 conv blocks with LeakyReLU(0.2), then a
/// 3x3 one-channel score head with no sigmoid.
template <class Real>
class Discriminator {
 public:
  Discriminator(ArchConfig arch, std::mt19937_64& rng);

  BasicTensor<Real> discriminate(const BasicTensor<Real>& x, Mode mode);

  std::vector<BasicTensor<Real>> parameters() const;
  NamedTensors<Real> state(const std::string& prefix) const;
  const std::vector<ConvBlock<Real>>& blocks() const { return blocks_; }

 private:
  ArchConfig arch_;
  std::vector<ConvBlock<Real>> blocks_;
};

}  // namespace mixmatch
