#include "mixmatch/graph.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

namespace mixmatch {

using nlohmann::json;

void FusionSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("fusion alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (index_source.empty()) throw ParameterError("fusion needs an index source");
}

std::string canonical_modality(const std::string& text) {
  if (text == "R" || text == "r" || text == "rgb") return "rgb";
  if (text == "D" || text == "d" || text == "depth") return "depth";
  if (text == "S" || text == "s" || text == "seg" || text == "segmentation") return "seg";
  return text;
}

template <class Real>
EncoderOutput<Real> fuse_latents(std::span<const WeightedEncoding<Real>> inputs,
                                 const std::string& index_source) {
  if (inputs.empty()) throw ContractError("fuse_latents: no inputs");
  const WeightedEncoding<Real>* source = nullptr;
  for (const auto& in : inputs) {
    if (in.output == nullptr) throw ContractError("fuse_latents: null encoder output");
    if (in.output->latent.shape() != inputs[0].output->latent.shape()) {
      throw DimensionError("fuse_latents: latent shapes differ " +
                           in.output->latent.shape().str() + " vs " +
                           inputs[0].output->latent.shape().str());
    }
    if (!std::isfinite(in.weight) || in.weight < 0.0) {
      throw ParameterError("fuse_latents: weights must be finite and >= 0");
    }
    if (in.modality == index_source) source = &in;
  }
  if (source == nullptr) {
    throw ParameterError("fuse_latents: index source '" + index_source + "' is not among the inputs");
  }
  std::vector<BasicTensor<Real>> parts;
  std::vector<BasicTensor<Real>> clean_parts;
  std::vector<Real> weights;
  for (const auto& in : inputs) {
    if (in.weight == 0.0) continue;
    parts.push_back(in.output->latent);
    clean_parts.push_back(in.output->clean_latent);
    weights.push_back(static_cast<Real>(in.weight));
  }
  if (parts.empty()) throw ParameterError("fuse_latents: all weights are zero");
  EncoderOutput<Real> out;
  if (parts.size() == 1 && weights[0] == Real(1)) {
    out.latent = parts[0];
    out.clean_latent = clean_parts[0];
  } else {
    out.latent = weighted_sum<Real>(parts, weights);
    out.clean_latent = weighted_sum<Real>(clean_parts, weights);
  }
  out.indices = source->output->indices;
  out.skip_features = source->output->skip_features;
  return out;
}

ModuleCount count_trained_modules(std::int64_t n, ModuleStrategy strategy) {
  if (n < 2) throw ParameterError("count_trained_modules: need at least two domains");
  switch (strategy) {
    case ModuleStrategy::kMixMatchAnchor: return {n, n, n - 1};
    case ModuleStrategy::kPairwise: {
      const std::int64_t pairs = n * (n - 1) / 2;
      return {pairs, pairs, pairs};
    }
  }
  return {};
}

template <class Real>
BasicTensor<Real> to_encoder_input(const ModalitySpec& spec, const BasicTensor<Real>& decoded) {
  if (spec.loss_kind == LossKind::kSegmentationCe) {
    return one_hot<Real>(argmax_channels(decoded), spec.channels);
  }
  return decoded;
}

template <class Real>
BasicTensor<Real> Translator<Real>::operator()(const BasicTensor<Real>& input) const {
  NoGradScope<Real> no_grad;
  BasicTensor<Real> current = input;
  BasicTensor<Real> decoded;
  for (std::size_t hop = 0; hop + 1 < path_.size(); ++hop) {
    if (hop > 0) current = to_encoder_input(graph_->modality(path_[hop]), decoded);
    const auto encoded = graph_->encode_eval(path_[hop], current);
    decoded = graph_->decode_eval(path_[hop + 1], encoded);
  }
  return decoded;
}

template <class Real>
TranslationGraph<Real>::TranslationGraph(ArchConfig arch, std::uint64_t seed)
    : arch_(std::move(arch)), seed_(seed), init_rng_(seed) {
  arch_.validate();
}

template <class Real>
TranslationGraph<Real>& TranslationGraph<Real>::register_modality(const ModalitySpec& spec) {
  spec.validate();
  if (has_modality(spec.name)) {
    throw ConfigError("modality '" + spec.name + "' is already registered");
  }
  modalities_.push_back(spec);
  encoders_[spec.name] = std::make_unique<Encoder<Real>>(spec, arch_, init_rng_);
  decoders_[spec.name] = std::make_unique<Decoder<Real>>(spec, arch_, init_rng_);
  if (spec.loss_kind == LossKind::kRgbL2Gan && !discriminator_) {
    discriminator_ = std::make_unique<Discriminator<Real>>(arch_, init_rng_);
  }
  return *this;
}

template <class Real>
TranslationGraph<Real>& TranslationGraph<Real>::register_training_pair(const std::string& a,
                                                                       const std::string& b) {
  require(a);
  require(b);
  if (a == b) throw ConfigError("a training pair needs two distinct modalities");
  trained_pairs_.emplace(a, b);
  trained_pairs_.emplace(b, a);
  return *this;
}

template <class Real>
bool TranslationGraph<Real>::has_modality(const std::string& name) const {
  return encoders_.count(name) != 0;
}

template <class Real>
const ModalitySpec& TranslationGraph<Real>::require(const std::string& name) const {
  for (const auto& m : modalities_) {
    if (m.name == name) return m;
  }
  throw CompositionError("unknown modality '" + name + "'");
}

template <class Real>
const ModalitySpec& TranslationGraph<Real>::modality(const std::string& name) const {
  return require(name);
}

template <class Real>
const std::string& TranslationGraph<Real>::name_for(LossKind kind) const {
  for (const auto& m : modalities_) {
    if (m.loss_kind == kind) return m.name;
  }
  throw CompositionError("graph has no modality network for the requested loss kind");
}

template <class Real>
Encoder<Real>& TranslationGraph<Real>::encoder(const std::string& name) {
  require(name);
  return *encoders_.at(name);
}

template <class Real>
Decoder<Real>& TranslationGraph<Real>::decoder(const std::string& name) {
  require(name);
  return *decoders_.at(name);
}

template <class Real>
Discriminator<Real>& TranslationGraph<Real>::discriminator() {
  if (!discriminator_) throw CompositionError("graph has no RGB modality, hence no discriminator");
  return *discriminator_;
}

template <class Real>
bool TranslationGraph<Real>::encoder_aligned(const std::string& name) const {
  require(name);
  if (autoencoders_enabled_) return true;
  for (const auto& [from, to] : trained_pairs_) {
    if (from == name) return true;
  }
  return false;
}

template <class Real>
bool TranslationGraph<Real>::decoder_aligned(const std::string& name) const {
  require(name);
  if (autoencoders_enabled_) return true;
  for (const auto& [from, to] : trained_pairs_) {
    if (to == name) return true;
  }
  return false;
}

template <class Real>
Translator<Real> TranslationGraph<Real>::compose(const std::string& from, const std::string& to) {
  require(from);
  require(to);
  if (!encoder_aligned(from)) {
    throw CompositionError("encoder '" + from + "' never took part in a training pair or autoencoder");
  }
  if (!decoder_aligned(to)) {
    throw CompositionError("decoder '" + to + "' never took part in a training pair or autoencoder");
  }
  return Translator<Real>(this, {from, to});
}

template <class Real>
Translator<Real> TranslationGraph<Real>::compose_cascade(const std::vector<std::string>& path) {
  if (path.size() < 2) {
    throw CompositionError("a cascade needs at least a source and a target modality");
  }
  for (std::size_t k = 0; k + 1 < path.size(); ++k) compose(path[k], path[k + 1]);
  return Translator<Real>(this, path);
}

template <class Real>
EncoderOutput<Real> TranslationGraph<Real>::encode_eval(const std::string& name,
                                                        const BasicTensor<Real>& x) {
  NoGradScope<Real> no_grad;
  return encoder(name).encode(x, 0.0, Mode::kEval);
}

template <class Real>
BasicTensor<Real> TranslationGraph<Real>::decode_eval(const std::string& name,
                                                      const EncoderOutput<Real>& side) {
  NoGradScope<Real> no_grad;
  auto& dec = decoder(name);
  const bool wants_side = dec.spec().decoder_side_info != SideInfo::kNone;
  return dec.decode(side.latent, wants_side ? &side : nullptr, Mode::kEval);
}

template <class Real>
std::vector<BasicTensor<Real>> TranslationGraph<Real>::generator_parameters() const {
  std::vector<BasicTensor<Real>> out;
  for (const auto& m : modalities_) {
    for (auto& p : encoders_.at(m.name)->parameters()) out.push_back(p);
    for (auto& p : decoders_.at(m.name)->parameters()) out.push_back(p);
  }
  return out;
}

template <class Real>
std::vector<std::pair<std::string, NamedTensors<Real>>> TranslationGraph<Real>::checkpoint_files()
    const {
  std::vector<std::pair<std::string, NamedTensors<Real>>> files;
  for (const auto& m : modalities_) {
    files.emplace_back("enc_" + m.name, encoders_.at(m.name)->state("enc_" + m.name));
    files.emplace_back("dec_" + m.name, decoders_.at(m.name)->state("dec_" + m.name));
  }
  if (discriminator_) files.emplace_back("disc_rgb", discriminator_->state("disc_rgb"));
  return files;
}

namespace {

const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kRgbL2Gan: return "rgb_l2_gan";
    case LossKind::kDepthBerhu: return "depth_berhu";
    case LossKind::kSegmentationCe: return "segmentation_ce";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "rgb_l2_gan") return LossKind::kRgbL2Gan;
  if (s == "depth_berhu") return LossKind::kDepthBerhu;
  if (s == "segmentation_ce") return LossKind::kSegmentationCe;
  throw FormatError("unknown loss kind '" + s + "'");
}

const char* activation_name(OutputActivation a) {
  switch (a) {
    case OutputActivation::kTanh: return "tanh";
    case OutputActivation::kLinear: return "linear";
    case OutputActivation::kLogits: return "logits";
  }
  return "?";
}

OutputActivation parse_activation(const std::string& s) {
  if (s == "tanh") return OutputActivation::kTanh;
  if (s == "linear") return OutputActivation::kLinear;
  if (s == "logits") return OutputActivation::kLogits;
  throw FormatError("unknown output activation '" + s + "'");
}

}  // namespace

template <class Real>
void TranslationGraph<Real>::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json manifest;
  json stages = json::array();
  for (const auto& s : arch_.stages) stages.push_back({s.num_convs, s.out_channels});
  manifest["arch"] = {{"stages", stages},
                      {"height", arch_.height},
                      {"width", arch_.width},
                      {"kernel_size", arch_.kernel_size},
                      {"preset", to_string(arch_.preset)}};
  manifest["seed"] = seed_;
  json mods = json::array();
  for (const auto& m : modalities_) {
    mods.push_back({{"name", m.name},
                    {"channels", m.channels},
                    {"loss_kind", loss_kind_name(m.loss_kind)},
                    {"decoder_side_info", to_string(m.decoder_side_info)},
                    {"output_activation", activation_name(m.output_activation)}});
  }
  manifest["modalities"] = mods;
  json pairs = json::array();
  for (const auto& [a, b] : trained_pairs_) pairs.push_back({a, b});
  manifest["trained_pairs"] = pairs;
  manifest["autoencoders_enabled"] = autoencoders_enabled_;
  std::ofstream(dir / "graph.json") << manifest.dump(2) << '\n';
  for (const auto& [file, tensors] : checkpoint_files()) {
    save_tensors(dir / (file + ".ckpt"), tensors);
  }
}

template <class Real>
std::unique_ptr<TranslationGraph<Real>> TranslationGraph<Real>::load(
    const std::filesystem::path& dir) {
  std::ifstream in(dir / "graph.json");
  if (!in) throw FormatError("no graph.json in " + dir.string());
  json manifest;
  try {
    in >> manifest;
    ArchConfig arch;
    arch.stages.clear();
    for (const auto& s : manifest.at("arch").at("stages")) {
      arch.stages.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
    }
    arch.height = manifest["arch"].at("height").get<int>();
    arch.width = manifest["arch"].at("width").get<int>();
    arch.kernel_size = manifest["arch"].at("kernel_size").get<int>();
    const auto preset = manifest["arch"].value("preset", std::string("custom"));
    arch.preset = preset == "paper" ? ScalePreset::kPaper
                  : preset == "desk" ? ScalePreset::kDesk
                                     : ScalePreset::kCustom;
    auto graph = std::make_unique<TranslationGraph<Real>>(arch, manifest.at("seed").get<std::uint64_t>());
    for (const auto& m : manifest.at("modalities")) {
      ModalitySpec spec{m.at("name").get<std::string>(), m.at("channels").get<int>(),
                        parse_loss_kind(m.at("loss_kind").get<std::string>()),
                        parse_side_info(m.at("decoder_side_info").get<std::string>()),
                        parse_activation(m.at("output_activation").get<std::string>())};
      graph->register_modality(spec);
    }
    for (const auto& p : manifest.at("trained_pairs")) {
      graph->trained_pairs_.emplace(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    }
    graph->autoencoders_enabled_ = manifest.at("autoencoders_enabled").get<bool>();
    for (const auto& [file, tensors] : graph->checkpoint_files()) {
      load_tensors(dir / (file + ".ckpt"), tensors);
    }
    return graph;
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/graph.json: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(dir.string() + "/graph.json: " + e.what());
  }
}

template class Translator<float>;
template class Translator<double>;
template class TranslationGraph<float>;
template class TranslationGraph<double>;
template EncoderOutput<float> fuse_latents(std::span<const WeightedEncoding<float>>, const std::string&);
template EncoderOutput<double> fuse_latents(std::span<const WeightedEncoding<double>>, const std::string&);
template BasicTensor<float> to_encoder_input(const ModalitySpec&, const BasicTensor<float>&);
template BasicTensor<double> to_encoder_input(const ModalitySpec&, const BasicTensor<double>&);

}  // namespace mixmatch
