#include "delta/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "delta/error.hpp"

namespace delta {

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim", "must be at least 1");
  for (std::size_t h : hidden_dims)
    if (h == 0) throw ConfigError("hidden_dims", "every width must be at least 1");
  if (embed_dim == 0) throw ConfigError("embed_dim", "must be at least 1");
  if (proj_dim == 0) throw ConfigError("proj_dim", "must be at least 1");
  if (num_classes_max == 0) throw ConfigError("num_classes_max", "must be at least 1");
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(name + ".weight", Matrix(in, out)), bias(name + ".bias", Matrix(1, out)) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> init(-limit, limit);
  for (double& v : weight.value.values()) v = init(rng);
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = matmul(x, weight.value);
  add_row_vector(y, bias.value.values());
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& grad_output) {
  if (weight.trainable) add_in_place(weight.gradient, matmul_at_b(x, grad_output));
  if (bias.trainable) accumulate_column_sums(grad_output, bias.gradient.values());
  return matmul_a_bt(grad_output, weight.value);
}

Network::Network(ModelConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), std::move(cfg))),
      projection_([&] {
        // Each head has its own generator, independent of the encoder widths.
        std::mt19937_64 rng(seed ^ 0x70726f6aULL);
        return Linear("projection", cfg_.embed_dim, cfg_.proj_dim, rng);
      }()),
      classifier_([&] {
        std::mt19937_64 rng(seed ^ 0x636c6173ULL);
        return Linear("classifier", cfg_.embed_dim, cfg_.num_classes_max, rng);
      }()) {
  std::mt19937_64 rng(seed);
  std::size_t in = cfg_.input_dim;
  std::size_t index = 0;
  for (std::size_t h : cfg_.hidden_dims) {
    encoder_.emplace_back("encoder." + std::to_string(index++), in, h, rng);
    in = h;
  }
  encoder_.emplace_back("encoder." + std::to_string(index), in, cfg_.embed_dim, rng);
  set_stage(Stage::one);
}

void Network::check_width(const Matrix& m, std::size_t expected, const char* op) const {
  if (m.cols() != expected && m.rows() != 0) {
    throw DimensionError(std::string(op) + ": expected width " + std::to_string(expected) +
                         ", got " + m.shape_string());
  }
}

EncoderTrace Network::encode_traced(const Matrix& x) const {
  check_width(x, cfg_.input_dim, "encode");
  EncoderTrace t;
  Matrix h = x.rows() == 0 ? Matrix(0, cfg_.input_dim) : x;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    t.layer_inputs.push_back(h);
    Matrix z = encoder_[i].forward(h);
    if (i + 1 < encoder_.size()) {
      h = relu(z);
      t.pre_activations.push_back(std::move(z));
    } else {
      t.raw_embedding = std::move(z);
    }
  }
  t.embedding = l2_normalize_rows(t.raw_embedding);
  return t;
}

ProjectionTrace Network::project_traced(const Matrix& e) const {
  check_width(e, cfg_.embed_dim, "project");
  ProjectionTrace t;
  t.raw = projection_.forward(e);
  t.projection = l2_normalize_rows(t.raw);
  return t;
}

Matrix Network::classify(const Matrix& e) const {
  check_width(e, cfg_.embed_dim, "classify");
  return classifier_.forward(e);
}

void Network::backward_encoder(const EncoderTrace& trace, const Matrix& grad_embedding) {
  Matrix g = l2_normalize_rows_backward(trace.raw_embedding, grad_embedding);
  for (std::size_t i = encoder_.size(); i-- > 0;) {
    if (i + 1 < encoder_.size()) g = relu_backward(trace.pre_activations[i], g);
    g = encoder_[i].backward(trace.layer_inputs[i], g);
  }
}

Matrix Network::backward_projection(const Matrix& embedding, const ProjectionTrace& trace,
                                    const Matrix& grad_projection) {
  const Matrix g = l2_normalize_rows_backward(trace.raw, grad_projection);
  return projection_.backward(embedding, g);
}

Matrix Network::backward_classifier(const Matrix& embedding, const Matrix& grad_logits) {
  return classifier_.backward(embedding, grad_logits);
}

void Network::set_stage(Stage stage) {
  const bool features = stage == Stage::one || stage == Stage::joint;
  const bool head = stage == Stage::two || stage == Stage::joint;
  for (ParamTensor* p : encoder_parameters()) p->trainable = features;
  for (ParamTensor* p : projection_parameters()) p->trainable = features;
  for (ParamTensor* p : classifier_parameters()) p->trainable = head;
}

std::vector<ParamTensor*> Network::encoder_parameters() {
  std::vector<ParamTensor*> out;
  for (auto& l : encoder_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<ParamTensor*> Network::projection_parameters() {
  return {&projection_.weight, &projection_.bias};
}

std::vector<ParamTensor*> Network::classifier_parameters() {
  return {&classifier_.weight, &classifier_.bias};
}

std::vector<ParamTensor*> Network::parameters() {
  auto out = encoder_parameters();
  for (ParamTensor* p : projection_parameters()) out.push_back(p);
  for (ParamTensor* p : classifier_parameters()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> Network::parameters() const {
  auto mutable_params = const_cast<Network*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

namespace {

std::uint64_t hash_layers(std::initializer_list<const Linear*> layers) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Linear* l : layers) {
    h = content_hash(l->weight.value, h);
    h = content_hash(l->bias.value, h);
  }
  return h;
}

}  // namespace

std::uint64_t Network::encoder_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : encoder_) {
    h = content_hash(l.weight.value, h);
    h = content_hash(l.bias.value, h);
  }
  return h;
}

std::uint64_t Network::projection_hash() const { return hash_layers({&projection_}); }
std::uint64_t Network::classifier_hash() const { return hash_layers({&classifier_}); }

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const ParamTensor* p : parameters()) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  const auto& cfg = net.config();
  nlohmann::json j;
  j["format"] = "delta-checkpoint";
  j["version"] = 1;
  j["config"] = {{"input_dim", cfg.input_dim},
                 {"hidden_dims", cfg.hidden_dims},
                 {"embed_dim", cfg.embed_dim},
                 {"proj_dim", cfg.proj_dim},
                 {"num_classes_max", cfg.num_classes_max}};
  nlohmann::json params = nlohmann::json::array();
  for (const ParamTensor* p : net.parameters()) {
    params.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"trainable", p->trainable},
                      {"values", std::vector<double>(p->value.values().begin(),
                                                     p->value.values().end())}});
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump();
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.filename().string() + ": " + e.what(), e.byte);
  }
  if (j.value("format", "") != "delta-checkpoint")
    throw FormatError(path.filename().string() + ": not a checkpoint", 0);

  try {
    ModelConfig cfg;
    const auto& c = j.at("config");
    cfg.input_dim = c.at("input_dim").get<std::size_t>();
    cfg.hidden_dims = c.at("hidden_dims").get<std::vector<std::size_t>>();
    cfg.embed_dim = c.at("embed_dim").get<std::size_t>();
    cfg.proj_dim = c.at("proj_dim").get<std::size_t>();
    cfg.num_classes_max = c.at("num_classes_max").get<std::size_t>();
    Network net(cfg, 0);

    const auto& params = j.at("params");
    auto targets = net.parameters();
    if (params.size() != targets.size())
      throw FormatError(path.filename().string() + ": parameter count mismatch", 0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto& p = params[i];
      ParamTensor& t = *targets[i];
      if (p.at("name").get<std::string>() != t.name ||
          p.at("rows").get<std::size_t>() != t.value.rows() ||
          p.at("cols").get<std::size_t>() != t.value.cols()) {
        throw FormatError(path.filename().string() + ": tensor " + t.name + " does not match", 0);
      }
      auto values = p.at("values").get<std::vector<double>>();
      t.value = Matrix(t.value.rows(), t.value.cols(), std::move(values));
      t.trainable = p.at("trainable").get<bool>();
      t.zero_grad();
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.filename().string() + ": " + e.what(), 0);
  }
}

}  // namespace delta
