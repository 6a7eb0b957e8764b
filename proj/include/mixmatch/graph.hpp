#pragma once

// Registry of modalities with one encoder and one decoder each, the set of
// trained (directed) pairs, and composition of arbitrary encoder/decoder
// chains at test time.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixmatch/network.hpp"

namespace mixmatch {

template <class Real>
class TranslationGraph;

/// Encode with the first modality, decode with the last. Multi-hop paths
/// fully decode to each intermediate modality and re-encode it.
template <class Real>
class Translator {
 public:
  Translator(TranslationGraph<Real>* graph, std::vector<std::string> path)
      : graph_(graph), path_(std::move(path)) {}

  // Raw decoder output of the final hop (tanh image, depth map or logits).
  BasicTensor<Real> operator()(const BasicTensor<Real>& input) const;

  const std::vector<std::string>& path() const { return path_; }
  const std::string& source() const { return path_.front(); }
  const std::string& target() const { return path_.back(); }

 private:
  TranslationGraph<Real>* graph_;
  std::vector<std::string> path_;
};

struct FusionSpec {
  double alpha = 0.2;  // weight of the second input; first gets 1 - alpha
  std::string index_source = "rgb";

  void validate() const;
};

template <class Real>
struct WeightedEncoding {
  std::string modality;
  const EncoderOutput<Real>* output = nullptr;
  double weight = 0.0;
};

/// Weighted average of aligned latents; side information (indices and skip
/// features) is taken wholly from index_source. Zero-weight inputs are
/// skipped, so a single unit-weight input is passed through unchanged.
template <class Real>
EncoderOutput<Real> fuse_latents(std::span<const WeightedEncoding<Real>> inputs,
                                 const std::string& index_source);

enum class ModuleStrategy { kMixMatchAnchor, kPairwise };

struct ModuleCount {
  std::int64_t encoders = 0;
  std::int64_t decoders = 0;
  std::int64_t trained_pairs = 0;
};

/// Modules and trained pairs needed to cover every translation among n
/// domains: N encoders/decoders with N-1 anchor pairs, versus N(N-1)/2
/// independently trained translators.
ModuleCount count_trained_modules(std::int64_t n_domains, ModuleStrategy strategy);

template <class Real>
class TranslationGraph {
 public:
  TranslationGraph(ArchConfig arch, std::uint64_t seed);
  TranslationGraph(const TranslationGraph&) = delete;
  TranslationGraph& operator=(const TranslationGraph&) = delete;

  TranslationGraph& register_modality(const ModalitySpec& spec);
  // Registers (a, b) and (b, a).
  TranslationGraph& register_training_pair(const std::string& a, const std::string& b);
  void set_autoencoders_enabled(bool enabled) { autoencoders_enabled_ = enabled; }
  bool autoencoders_enabled() const { return autoencoders_enabled_; }

  bool has_modality(const std::string& name) const;
  const ModalitySpec& modality(const std::string& name) const;
  const std::vector<ModalitySpec>& modalities() const { return modalities_; }
  // Name of the modality with the given loss kind; CompositionError if absent.
  const std::string& name_for(LossKind kind) const;

  Encoder<Real>& encoder(const std::string& name);
  Decoder<Real>& decoder(const std::string& name);
  Discriminator<Real>& discriminator();
  bool has_discriminator() const { return discriminator_ != nullptr; }

  const std::set<std::pair<std::string, std::string>>& trained_pairs() const {
    return trained_pairs_;
  }
  bool encoder_aligned(const std::string& name) const;
  bool decoder_aligned(const std::string& name) const;

  Translator<Real> compose(const std::string& from, const std::string& to);
  Translator<Real> compose_cascade(const std::vector<std::string>& path);

  // Runs one hop's encoder in eval mode without noise.
  EncoderOutput<Real> encode_eval(const std::string& name, const BasicTensor<Real>& x);
  // Decodes with side information from `side` when the decoder uses it.
  BasicTensor<Real> decode_eval(const std::string& name, const EncoderOutput<Real>& side);

  std::vector<BasicTensor<Real>> generator_parameters() const;

  const ArchConfig& arch() const { return arch_; }

  // Writes graph.json plus one checkpoint per modality per role
  // (enc_<name>.ckpt, dec_<name>.ckpt, disc_rgb.ckpt).
  void save(const std::filesystem::path& dir) const;
  static std::unique_ptr<TranslationGraph> load(const std::filesystem::path& dir);
  std::vector<std::pair<std::string, NamedTensors<Real>>> checkpoint_files() const;

 private:
  const ModalitySpec& require(const std::string& name) const;

  ArchConfig arch_;
  std::uint64_t seed_;
  std::mt19937_64 init_rng_;
  std::vector<ModalitySpec> modalities_;
  std::map<std::string, std::unique_ptr<Encoder<Real>>> encoders_;
  std::map<std::string, std::unique_ptr<Decoder<Real>>> decoders_;
  std::unique_ptr<Discriminator<Real>> discriminator_;
  std::set<std::pair<std::string, std::string>> trained_pairs_;
  bool autoencoders_enabled_ = true;
};

/// Converts a decoder output into the representation the same modality's
/// encoder expects (segmentation logits become one-hot maps).
template <class Real>
BasicTensor<Real> to_encoder_input(const ModalitySpec& spec, const BasicTensor<Real>& decoded);

/// Resolves "R"/"D"/"S" shorthands and full names.
std::string canonical_modality(const std::string& text);

}  // namespace mixmatch
