#include "treeformer/model.hpp"

#include <algorithm>

namespace treeformer {
inline namespace TREEFORMER_PRECISION_NS {

Model::Model(const RunConfig& config)
    : config_(config),
      tree_config_(config.treeformer_config()),
      pre_config_(config.pre_encoder_config()),
      decoder_config_(config.decoder_config()) {
  config_.validate();
  Rng rng(config.seed);
  pre_ = PreEncoderParams::init(pre_config_, rng);
  tree_ = TreeformerParams::init(tree_config_, rng);
  pre_.register_into(store_, "encoder.");
  tree_.register_into(store_, "treeformer.");
  if (is_classification(config.task)) {
    classifier_ = ClassifierParams::init(config.dim, 2, rng);
    classifier_.register_into(store_, "classifier.");
  } else {
    decoder_ = DecoderParams::init(decoder_config_, rng);
    decoder_.register_into(store_, "decoder.");
  }
}

std::vector<SpanChart> Model::encode(const Batch& batch, const ForwardOptions& options) const {
  require(batch.size() > 0, ErrorKind::empty_input, "encode: empty batch");
  PreEncodeOptions pre_options;
  pre_options.training = options.training;
  pre_options.rng = options.rng;
  const Tensor tokens = pre_encode(batch.packed, batch.offsets, pre_config_, pre_, pre_options);
  EncodeOptions encode_options;
  encode_options.training = options.training;
  encode_options.rng = options.rng;
  encode_options.record_weights = options.record_weights;
  return encode_levelwise(tokens, batch.offsets, tree_config_, tree_, encode_options);
}

Tensor Model::class_logits(const Batch& batch, const ForwardOptions& options) const {
  require(is_classification(config_.task), ErrorKind::contract,
          "class_logits: model is not a classifier");
  const auto charts = encode(batch, options);
  return classify(charts, classifier_, config_.use_summary);
}

std::vector<TokenId> target_payload(const std::vector<TokenId>& target) {
  require(target.size() >= 2 && target.front() == kBosId && target.back() == kEosId,
          ErrorKind::format, "seq2seq target must be wrapped in bos/eos");
  return {target.begin() + 1, target.end() - 1};
}

Tensor Model::loss(const Batch& batch, const ForwardOptions& options) const {
  if (is_classification(config_.task)) {
    std::vector<TokenId> labels;
    for (const auto& t : batch.targets) {
      require(t.size() == 1 && t[0] < 2, ErrorKind::format, "classification label must be 0 or 1");
      labels.push_back(t[0]);
    }
    return cross_entropy(class_logits(batch, options), labels,
                         static_cast<Real>(config_.label_smoothing));
  }
  const auto charts = encode(batch, options);
  const EncoderMemory memory = build_memory(charts);
  std::vector<TokenId> targets;
  std::vector<std::size_t> offsets{0};
  for (const auto& t : batch.targets) {
    require(!t.empty() && t.front() == kBosId, ErrorKind::format,
            "seq2seq target must start with bos");
    targets.insert(targets.end(), t.begin() + 1, t.end());
    offsets.push_back(targets.size());
  }
  DecodeOptions decode_options;
  decode_options.training = options.training;
  decode_options.rng = options.rng;
  return decode_loss(memory, targets, offsets, decoder_config_, decoder_,
                     config_.label_smoothing, decode_options);
}

std::vector<TokenId> Model::predict_classes(const Batch& batch) const {
  const Tensor logits = class_logits(batch);
  std::vector<TokenId> out;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    out.push_back(static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

std::vector<std::vector<TokenId>> Model::generate(const Batch& batch, std::size_t beam,
                                                  double length_penalty) const {
  require(!is_classification(config_.task), ErrorKind::contract,
          "generate: model is not a seq2seq model");
  const auto charts = encode(batch);
  const EncoderMemory memory = build_memory(charts);
  if (beam == 1 && length_penalty == 0) {
    return generate_greedy(memory, decoder_config_, decoder_);
  }
  std::vector<std::vector<TokenId>> out;
  for (BeamResult& r : generate_beam(memory, decoder_config_, decoder_, beam, length_penalty)) {
    out.push_back(std::move(r.best.tokens));
  }
  return out;
}

Checkpoint Model::to_checkpoint(std::uint64_t step, double metric) const {
  Checkpoint c;
  c.config_text = config_.to_text();
  c.step = step;
  c.metric = metric;
  for (const auto& [name, tensor] : store_.entries()) {
    CheckpointTensor t;
    t.name = name;
    for (std::size_t d : tensor.shape()) {
      t.shape.push_back(d);
    }
    for (Real v : tensor.data()) {
      t.values.push_back(static_cast<float>(v));
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

Model Model::from_checkpoint(const Checkpoint& checkpoint) {
  Model model(RunConfig::parse(checkpoint.config_text));
  require(checkpoint.tensors.size() == model.store_.size(), ErrorKind::format,
          "checkpoint holds " + std::to_string(checkpoint.tensors.size()) +
              " tensors, the configured model has " + std::to_string(model.store_.size()));
  for (const CheckpointTensor& t : checkpoint.tensors) {
    require(model.store_.contains(t.name), ErrorKind::format,
            "checkpoint tensor '" + t.name + "' is not a model parameter");
    Tensor target = model.store_.get(t.name);
    const Shape& shape = target.shape();
    require(t.shape.size() == shape.size() && std::equal(shape.begin(), shape.end(), t.shape.begin()),
            ErrorKind::format, "checkpoint tensor '" + t.name + "' has the wrong shape");
    auto data = target.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = static_cast<Real>(t.values[i]);
    }
  }
  return model;
}

}  // namespace TREEFORMER_PRECISION_NS
}  // namespace treeformer
