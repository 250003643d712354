#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adacap/autodiff.hpp"
#include "adacap/rng.hpp"

namespace adacap::models {

using autodiff::Tape;
using autodiff::Value;
using linalg::Matrix;

enum class Family { mlp, resnet };
enum class Activation { relu, glu, grelu, identity };
enum class HeadKind { linear, adacap };
enum class Schedule { constant, one_cycle };

inline const char* to_string(Family f) { return f == Family::mlp ? "mlp" : "resnet"; }
inline const char* to_string(HeadKind h) { return h == HeadKind::linear ? "linear" : "adacap"; }
inline const char* to_string(Schedule s) { return s == Schedule::constant ? "constant" : "one_cycle"; }
inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::glu: return "glu";
    case Activation::grelu: return "grelu";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "mlp") return Family::mlp;
  if (s == "resnet") return Family::resnet;
  throw std::invalid_argument("unknown family '" + s + "' (expected mlp or resnet)");
}
inline HeadKind parse_head(const std::string& s) {
  if (s == "linear") return HeadKind::linear;
  if (s == "adacap") return HeadKind::adacap;
  throw std::invalid_argument("unknown head '" + s + "' (expected linear or adacap)");
}
inline Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "one_cycle") return Schedule::one_cycle;
  throw std::invalid_argument("unknown scheduler '" + s + "' (expected constant or one_cycle)");
}
inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "glu") return Activation::glu;
  if (s == "grelu") return Activation::grelu;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct ArchitectureSpec {
  std::string name = "MLP";
  Family family = Family::mlp;
  std::size_t depth = 4;
  std::size_t hidden = 256;
  Activation activation = Activation::relu;
  std::size_t embedding_dim = 256;
  HeadKind head = HeadKind::linear;
  Schedule scheduler = Schedule::constant;

  void validate() const {
    if (depth < 1) throw std::invalid_argument("architecture '" + name + "': depth must be >= 1");
    if (hidden < 1) throw std::invalid_argument("architecture '" + name + "': hidden must be >= 1");
    if (embedding_dim < 1) {
      throw std::invalid_argument("architecture '" + name + "': embedding_dim must be >= 1");
    }
  }
};

/// The named variants: {MLP, ResNet} x {base, Deeper, GLU, GReLUOneCycleLR}.
inline ArchitectureSpec named_architecture(const std::string& name, HeadKind head = HeadKind::linear) {
  ArchitectureSpec s;
  s.name = name;
  s.head = head;
  std::string variant;
  if (name.rfind("MLP", 0) == 0) {
    s.family = Family::mlp;
    variant = name.substr(3);
  } else if (name.rfind("ResNet", 0) == 0) {
    s.family = Family::resnet;
    variant = name.substr(6);
  } else {
    throw std::invalid_argument("unknown architecture '" + name + "'");
  }
  if (variant.empty()) {
  } else if (variant == "-Deeper") {
    s.depth = 8;
  } else if (variant == "-GLU") {
    s.activation = Activation::glu;
  } else if (variant == "-GReLUOneCycleLR") {
    s.activation = Activation::grelu;
    s.scheduler = Schedule::one_cycle;
  } else {
    throw std::invalid_argument("unknown architecture variant '" + name + "'");
  }
  return s;
}

inline const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names{
      "MLP",    "MLP-Deeper",    "MLP-GLU",    "MLP-GReLUOneCycleLR",
      "ResNet", "ResNet-Deeper", "ResNet-GLU", "ResNet-GReLUOneCycleLR"};
  return names;
}

struct InputSchema {
  std::size_t n_numeric = 0;
  std::vector<std::size_t> cardinalities;  // one per categorical feature

  std::size_t n_categorical() const noexcept { return cardinalities.size(); }
  bool operator==(const InputSchema&) const = default;
};

/// Model input rows: standardized numerics plus row-major category indices.
struct Batch {
  Matrix numeric;                       // n x n_numeric
  std::vector<std::size_t> categorical; // n x n_categorical
  std::size_t n_categorical = 0;

  std::size_t rows() const noexcept {
    if (numeric.cols() > 0 || n_categorical == 0) return numeric.rows();
    return categorical.size() / n_categorical;
  }

  Batch select(std::span<const std::size_t> rows_idx) const {
    Batch b;
    b.n_categorical = n_categorical;
    b.numeric = Matrix(rows_idx.size(), numeric.cols());
    b.categorical.resize(rows_idx.size() * n_categorical);
    for (std::size_t i = 0; i < rows_idx.size(); ++i) {
      const std::size_t r = rows_idx[i];
      if (numeric.cols() > 0) {
        const auto src = numeric.row(r);
        std::copy(src.begin(), src.end(), b.numeric.row(i).begin());
      }
      for (std::size_t j = 0; j < n_categorical; ++j)
        b.categorical[i * n_categorical + j] = categorical[r * n_categorical + j];
    }
    return b;
  }
};

struct Parameter {
  std::string name;
  Matrix value;
};

struct ModelParams {
  std::vector<Parameter> params;
  std::uint64_t seed = 0;

  std::size_t scalar_count() const {
    std::size_t c = 0;
    for (const auto& p : params) c += p.value.size();
    return c;
  }
  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name == name) return i;
    throw std::out_of_range("no parameter named '" + name + "'");
  }
  Matrix& at(const std::string& name) { return params[index_of(name)].value; }
  const Matrix& at(const std::string& name) const { return params[index_of(name)].value; }
};

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Model {
  struct Affine {
    std::size_t w = kNone;
    std::size_t b = kNone;
    std::string name;
  };
  struct ActParams {
    std::size_t alpha = kNone;
    std::size_t beta = kNone;
  };
  struct Layer {
    Affine fc;
    ActParams act;
  };
  struct Block {
    Affine fc1;
    ActParams act1;
    Affine fc2;
    ActParams act2;
  };

  ArchitectureSpec spec;
  InputSchema schema;
  ModelParams params;
  std::vector<std::size_t> embeddings;
  Affine input_projection;  // resnet only
  std::vector<Layer> layers;  // mlp
  std::vector<Block> blocks;  // resnet
  std::size_t head_w = kNone;
  std::size_t head_b = kNone;
  std::size_t log_lambda = kNone;

  std::size_t representation_dim() const noexcept { return spec.hidden; }
  std::size_t input_dim() const noexcept {
    return schema.n_numeric + schema.n_categorical() * spec.embedding_dim;
  }
};

namespace detail {

inline std::size_t add_param(Model& m, std::string name, Matrix value) {
  m.params.params.push_back({std::move(name), std::move(value)});
  return m.params.params.size() - 1;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline Model::Affine add_affine(Model& m, const std::string& name, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  CounterRng rng(derive_seed(m.params.seed, name));
  Matrix w(in, out);
  for (double& x : w.values()) x = rng.uniform(-bound, bound);
  Matrix b(1, out);
  for (double& x : b.values()) x = rng.uniform(-bound, bound);
  Model::Affine a;
  a.name = name;
  a.w = add_param(m, name + ".weight", std::move(w));
  a.b = add_param(m, name + ".bias", std::move(b));
  return a;
}

inline Model::ActParams add_activation(Model& m, const std::string& name) {
  Model::ActParams a;
  if (m.spec.activation == Activation::grelu) {
    a.alpha = add_param(m, name + ".alpha", Matrix::scalar(0.01));
    a.beta = add_param(m, name + ".beta", Matrix::scalar(0.0));
  }
  return a;
}

inline std::size_t pre_activation_width(const ArchitectureSpec& s) {
  return s.activation == Activation::glu ? 2 * s.hidden : s.hidden;
}

}  // namespace detail

/// Builds parameters for a spec and input schema; deterministic in `seed`.
/// Each parameter draws from its own stream keyed by name, so backbone
/// initialization does not depend on the head.
inline Model build(const ArchitectureSpec& spec, const InputSchema& schema, std::uint64_t seed) {
  spec.validate();
  if (schema.n_numeric + schema.n_categorical() == 0) {
    throw std::invalid_argument("build: schema has no features");
  }
  for (std::size_t c : schema.cardinalities)
    if (c < 1) throw std::invalid_argument("build: categorical cardinality must be >= 1");
  Model m;
  m.spec = spec;
  m.schema = schema;
  m.params.seed = seed;

  for (std::size_t j = 0; j < schema.n_categorical(); ++j) {
    const std::string name = "embedding" + std::to_string(j);
    CounterRng rng(derive_seed(seed, name));
    // Last row is reserved for categories unseen at training time.
    Matrix table(schema.cardinalities[j] + 1, spec.embedding_dim);
    for (double& x : table.values()) x = rng.normal();
    m.embeddings.push_back(detail::add_param(m, name, std::move(table)));
  }

  const std::size_t pre = detail::pre_activation_width(spec);
  if (spec.family == Family::mlp) {
    std::size_t in = m.input_dim();
    for (std::size_t l = 0; l < spec.depth; ++l) {
      const std::string name = "layer" + std::to_string(l);
      Model::Layer layer;
      layer.fc = detail::add_affine(m, name, in, pre);
      layer.act = detail::add_activation(m, name + ".act");
      m.layers.push_back(layer);
      in = spec.hidden;
    }
  } else {
    m.input_projection = detail::add_affine(m, "input", m.input_dim(), spec.hidden);
    for (std::size_t b = 0; b < spec.depth; ++b) {
      const std::string name = "block" + std::to_string(b);
      Model::Block block;
      block.fc1 = detail::add_affine(m, name + ".fc1", spec.hidden, pre);
      block.act1 = detail::add_activation(m, name + ".act1");
      block.fc2 = detail::add_affine(m, name + ".fc2", spec.hidden, pre);
      block.act2 = detail::add_activation(m, name + ".act2");
      m.blocks.push_back(block);
    }
  }

  if (spec.head == HeadKind::linear) {
    const Model::Affine head = detail::add_affine(m, "head", spec.hidden, 1);
    m.head_w = head.w;
    m.head_b = head.b;
  } else {
    m.log_lambda = detail::add_param(m, "head.log_lambda", Matrix::scalar(0.0));
  }
  return m;
}

struct BoundParams {
  std::vector<Value> values;
  const Value& operator[](std::size_t i) const { return values.at(i); }
};

inline BoundParams bind(Tape& tape, const Model& m, bool requires_grad = true) {
  BoundParams b;
  b.values.reserve(m.params.params.size());
  for (const auto& p : m.params.params) b.values.push_back(tape.leaf(p.value, requires_grad));
  return b;
}

struct ForwardResult {
  Value h;
  std::optional<Value> prediction;  // linear head only
};

namespace detail {

inline void check_finite(const Value& v, const std::string& where) {
  if (!v.data().all_finite()) throw NumericalError("non-finite activation in layer '" + where + "'");
}

inline Value affine(const BoundParams& p, const Model::Affine& a, const Value& x) {
  Value z = autodiff::add_bias_row(autodiff::matmul(x, p[a.w]), p[a.b]);
  check_finite(z, a.name);
  return z;
}

inline Value activate(const Model& m, const BoundParams& p, const Model::ActParams& a, const Value& z) {
  switch (m.spec.activation) {
    case Activation::relu: return autodiff::relu(z);
    case Activation::glu: return autodiff::glu(z);
    case Activation::grelu: return autodiff::grelu(z, p[a.alpha], p[a.beta]);
    case Activation::identity: return z;
  }
  return z;
}

}  // namespace detail

/// Runs the backbone; H is the last hidden activation. A ResNet block is
/// x + act(fc2(act(fc1(x)))).
inline ForwardResult forward(Tape& tape, const Model& m, const BoundParams& p, const Batch& batch) {
  const std::size_t n = batch.rows();
  if (batch.numeric.cols() != m.schema.n_numeric || batch.n_categorical != m.schema.n_categorical() ||
      batch.categorical.size() != n * batch.n_categorical) {
    throw std::invalid_argument("forward: batch does not match model schema (" +
                                std::to_string(batch.numeric.cols()) + " numeric, " +
                                std::to_string(batch.n_categorical) + " categorical; expected " +
                                std::to_string(m.schema.n_numeric) + ", " +
                                std::to_string(m.schema.n_categorical()) + ")");
  }
  std::vector<Value> parts;
  if (m.schema.n_numeric > 0) parts.push_back(tape.constant(batch.numeric));
  for (std::size_t j = 0; j < m.schema.n_categorical(); ++j) {
    std::vector<std::size_t> idx(n);
    const std::size_t unseen = m.schema.cardinalities[j];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = batch.categorical[i * batch.n_categorical + j];
      idx[i] = c < unseen ? c : unseen;
    }
    parts.push_back(autodiff::embedding_lookup(p[m.embeddings[j]], idx));
  }
  Value x = parts.size() == 1 ? parts.front() : autodiff::concat_cols(parts);

  if (m.spec.family == Family::mlp) {
    for (const auto& layer : m.layers) x = detail::activate(m, p, layer.act, detail::affine(p, layer.fc, x));
  } else {
    x = detail::affine(p, m.input_projection, x);
    for (const auto& block : m.blocks) {
      Value u = detail::activate(m, p, block.act1, detail::affine(p, block.fc1, x));
      Value v = detail::activate(m, p, block.act2, detail::affine(p, block.fc2, u));
      x = autodiff::add(x, v);
    }
  }
  ForwardResult r{x, std::nullopt};
  if (m.spec.head == HeadKind::linear) {
    r.prediction = autodiff::add_bias_row(autodiff::matmul(x, p[m.head_w]), p[m.head_b]);
  }
  return r;
}

}  // namespace adacap::models
