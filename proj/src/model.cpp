#include "verse/model.hpp"

#include "verse/errors.hpp"

namespace verse {

void ModelConfig::validate() const {
  if (image_size < 8 || image_size % 8 != 0) throw ConfigError("image_size must be a positive multiple of 8");
  if (target_names.empty()) throw ConfigError("model needs at least one target");
  int expect = 0;
  for (const auto& [id, name] : target_names)
    if (id != expect++) throw ConfigError("target ids must be 0..N-1");
  if (queries_per_target < 1) throw ConfigError("queries_per_target must be positive");
  if (n1 < 1) throw ConfigError("n1 must be positive");
  if (window_radius < 0) throw ConfigError("window_radius must be non-negative");
  if (encoder.channels != decoder.channels) throw ConfigError("encoder and decoder channel counts differ");
  encoder.validate();
  decoder.validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json names = nlohmann::json::object();
  for (const auto& [id, name] : c.target_names) names[std::to_string(id)] = name;
  nlohmann::json enc = c.encoder, dec = c.decoder;
  enc.erase("channels");
  dec.erase("channels");
  j = {{"image_size", c.image_size},
       {"channels", c.channels()},
       {"target_names", names},
       {"queries_per_target", c.queries_per_target},
       {"n1", c.n1},
       {"window_radius", c.window_radius},
       {"encoder", enc},
       {"decoder", dec}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("target_names")) {
    c.target_names.clear();
    for (const auto& [k, v] : j.at("target_names").items()) c.target_names[std::stoi(k)] = v.get<std::string>();
  }
  c.queries_per_target = j.value("queries_per_target", c.queries_per_target);
  c.n1 = j.value("n1", c.n1);
  c.window_radius = j.value("window_radius", c.window_radius);
  if (j.contains("encoder")) from_json(j.at("encoder"), c.encoder);
  if (j.contains("decoder")) from_json(j.at("decoder"), c.decoder);
  c.set_channels(j.value("channels", c.channels()));
}

template <typename T>
VerseModel<T>::VerseModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg.validate();
  nn::Rng rng(init_seed);
  const int c = cfg.channels();
  image_encoder_ = ImageEncoder<T>(store_, cfg.encoder, rng);
  prompt_encoder_ = PromptEncoder<T>(store_, cfg.encoder, rng);
  bank_ = ObjectQueryBank<T>(store_, cfg.num_targets(), cfg.queries_per_target, c, rng);
  points_ = PointEncoder<T>(store_, c, rng);
  if (cfg.decoder.use_semantic_queries) semantic_ = SemanticQueryExtractor<T>(store_, c, cfg.window_radius, rng);
  decoder_ = Decoder<T>(store_, cfg.decoder, rng);
}

template <typename T>
FeaturePyramid<T> VerseModel<T>::encode_image(const Image& image) const {
  return encode_image(ad::constant(image.template cast<T>()));
}

template <typename T>
FeaturePyramid<T> VerseModel<T>::encode_image(const ad::Var<T>& image) const {
  return image_encoder_.encode(image);
}

template <typename T>
Prediction<T> VerseModel<T>::predict(const FeaturePyramid<T>& image_features, const PromptRequest& req,
                                     DecoderTrace<T>* trace, bool layer_outputs) const {
  const int h = image_features.levels[2].value().dim(0) * 2, w = image_features.levels[2].value().dim(1) * 2;
  if (req.mode < 1 || req.mode > 3) throw ContractError("mode must be 1, 2 or 3");
  if (req.mode != 3 && !req.target_id) throw ContractError("modes 1 and 2 require a target id");
  if (req.target_id && (*req.target_id < 0 || *req.target_id >= cfg_.num_targets()))
    throw NotFoundError("unknown target id " + std::to_string(*req.target_id));

  const ClickSet empty;
  const ClickSet& clicks = req.mode == 1 ? empty : req.clicks;
  Tensor<float> prev = req.mode == 1 || !req.prev_mask.defined() ? Tensor<float>({h, w}) : req.prev_mask;
  if (prev.shape() != Shape{h, w}) throw ContractError("previous mask must match the image size");

  const DensePrompt dense = rasterize(clicks, prev);
  const FeaturePyramid<T> prompt = prompt_encoder_.encode(ad::constant(dense.template cast<T>()));
  const FeaturePyramid<T> fused = fuse(image_features, prompt);

  const PaddedClicks padded = pad(clicks, cfg_.n1);
  const SparsePositionalQueries<T> sparse = points_.encode(padded, h, w);
  SemanticFeatureQueries<T> semantic;
  const bool semantic_on = cfg_.decoder.use_semantic_queries && req.mode != 1;
  if (semantic_on) semantic = semantic_.encode(fused.levels[0], 0, padded);
  const QuerySet<T> queries = assemble(req.mode, req.target_id, bank_, sparse, semantic_on ? &semantic : nullptr);

  DecoderInputs<T> in;
  in.pyramid = &fused;
  in.queries = &queries;
  in.clicks = &padded;
  in.semantic = semantic_on ? &semantic : nullptr;
  in.extractor = semantic_on ? &semantic_ : nullptr;
  in.height = h;
  in.width = w;
  in.layer_outputs = layer_outputs;
  DecoderOutput<T> out = decoder_.forward(in, trace);
  return {out.mask, std::move(out.layer_masks)};
}

template <typename T>
Archive VerseModel<T>::to_archive(const nlohmann::json& extra) const {
  Archive a;
  a.meta = {{"format", "verse-checkpoint"}, {"checkpoint_version", kCheckpointVersion}, {"config", cfg_}};
  if (!extra.empty()) a.meta["extra"] = extra;
  for (const auto& [name, v] : store_.entries()) a.add(name, v.value().template cast<float>());
  return a;
}

template <typename T>
void VerseModel<T>::load_archive(const Archive& archive) {
  if (archive.meta.value("format", "") != "verse-checkpoint") throw VersionError("archive is not a model checkpoint");
  if (archive.meta.value("checkpoint_version", -1) != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version");
  const nlohmann::json mine = cfg_;
  if (archive.meta.at("config") != mine)
    throw VersionError("checkpoint config does not match the model: " + archive.meta.at("config").dump());
  if (archive.arrays().size() != store_.entries().size())
    throw VersionError("checkpoint parameter count differs from the model");
  for (const auto& [name, v] : store_.entries()) {
    if (!archive.contains(name)) throw VersionError("checkpoint lacks parameter " + name);
    const Tensor<float>& src = archive.get(name);
    if (src.shape() != v.value().shape()) throw VersionError("parameter " + name + " has a different shape");
    ad::Var<T> handle = v;
    Tensor<T>& dst = handle.mutable_value();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

template <typename T>
void VerseModel<T>::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  write_archive(path, to_archive(extra));
}

namespace {

ModelConfig config_from_archive(const Archive& a) {
  if (a.meta.value("format", "") != "verse-checkpoint") throw VersionError("archive is not a model checkpoint");
  if (a.meta.value("checkpoint_version", -1) != kCheckpointVersion) throw VersionError("unsupported checkpoint version");
  try {
    return a.meta.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(std::string("unreadable checkpoint config: ") + e.what());
  }
}

}  // namespace

template <typename T>
std::unique_ptr<VerseModel<T>> VerseModel<T>::load(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  auto model = std::make_unique<VerseModel<T>>(config_from_archive(a), 0);
  model->load_archive(a);
  return model;
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) { return config_from_archive(read_archive(path)); }

namespace {

class PyramidContext : public ImageContext {
 public:
  PyramidContext(FeaturePyramid<float> p, int h, int w) : pyramid(std::move(p)), h_(h), w_(w) {}
  int height() const override { return h_; }
  int width() const override { return w_; }

  FeaturePyramid<float> pyramid;

 private:
  int h_, w_;
};

}  // namespace

VersePredictor::VersePredictor(std::shared_ptr<const VerseModel<float>> model) : model_(std::move(model)) {}

int VersePredictor::num_targets() const { return model_->config().num_targets(); }

std::shared_ptr<const ImageContext> VersePredictor::prepare(const Image& image) const {
  ad::NoGradGuard ng;
  return std::make_shared<PyramidContext>(model_->encode_image(image), image.dim(0), image.dim(1));
}

Tensor<float> VersePredictor::predict(const ImageContext& context, const PromptRequest& request) const {
  const auto* ctx = dynamic_cast<const PyramidContext*>(&context);
  if (!ctx) throw ContractError("image context was not prepared by this predictor");
  ad::NoGradGuard ng;
  return model_->predict(ctx->pyramid, request).mask.value();
}

template class VerseModel<float>;
template class VerseModel<double>;

}  // namespace verse
