#include "cem/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cem {

namespace {

Tensor copy_tensor(const Tensor& t, bool requires_grad) {
  std::vector<double> v(t.values().begin(), t.values().end());
  return requires_grad ? Tensor::variable(t.shape(), std::move(v))
                       : Tensor::constant(t.shape(), std::move(v));
}

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 2) return x;
  if (x.rank() == 1) return reshape(x, {1, x.size()});
  throw ShapeError("as_batch", "scalar input");
}

Tensor row_tensor(std::span<const double> x) {
  return Tensor::constant({1, x.size()}, std::vector<double>(x.begin(), x.end()));
}

}  // namespace

// ---- Encoder -----------------------------------------------------------------

Encoder Encoder::identity(std::size_t dim) {
  Encoder e;
  e.input_dim_ = dim;
  e.feature_dim_ = dim;
  return e;
}

Encoder Encoder::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                     std::size_t feature_dim, Activation activation, Rng& rng) {
  Encoder e;
  e.input_dim_ = input_dim;
  e.feature_dim_ = feature_dim;
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(feature_dim);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    std::vector<double> w(in * out);
    for (double& v : w) v = init(rng);
    e.layers_.push_back({LayerKind::kAffine, Tensor::variable({in, out}, std::move(w)),
                         Tensor::zeros({out}, true)});
    if (l + 2 < widths.size()) {
      e.layers_.push_back({activation == Activation::kTanh ? LayerKind::kTanh
                                                           : LayerKind::kRelu,
                           {}, {}});
    }
  }
  return e;
}

Encoder Encoder::linear(const Matrix& weight, std::vector<double> bias) {
  Encoder e;
  e.input_dim_ = weight.rows;
  e.feature_dim_ = weight.cols;
  Tensor b;
  if (!bias.empty()) {
    if (bias.size() != weight.cols) {
      throw ShapeError("Encoder::linear", Shape{weight.rows, weight.cols}, Shape{bias.size()});
    }
    b = Tensor::vector(std::move(bias), true);
  }
  e.layers_.push_back({LayerKind::kAffine, Tensor::from_matrix(weight, true), b});
  return e;
}

Encoder Encoder::squared_norm(std::size_t dim) {
  Encoder e;
  e.input_dim_ = dim;
  e.feature_dim_ = 1;
  e.layers_.push_back({LayerKind::kSquaredNorm, {}, {}});
  return e;
}

Encoder Encoder::default_mlp(std::size_t input_dim, Rng& rng) {
  return mlp(input_dim, {64, 64}, 16, Activation::kTanh, rng);
}

Tensor Encoder::forward(const Tensor& inputs) const {
  Tensor h = as_batch(inputs);
  if (h.cols() != input_dim_) {
    throw ShapeError("Encoder::forward", h.shape(), Shape{h.rows(), input_dim_});
  }
  for (const Layer& layer : layers_) {
    switch (layer.kind) {
      case LayerKind::kAffine:
        h = matmul(h, layer.weight);
        if (layer.bias.defined()) h = add_row(h, layer.bias);
        break;
      case LayerKind::kTanh:
        h = tanh(h);
        break;
      case LayerKind::kRelu:
        h = relu(h);
        break;
      case LayerKind::kSquaredNorm:
        h = reshape(sq_norm(h), {h.rows(), 1});
        break;
    }
  }
  return h;
}

std::vector<std::pair<std::string, Tensor>> Encoder::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind != LayerKind::kAffine) continue;
    out.emplace_back("enc." + std::to_string(i) + ".weight", layers_[i].weight);
    if (layers_[i].bias.defined()) {
      out.emplace_back("enc." + std::to_string(i) + ".bias", layers_[i].bias);
    }
  }
  return out;
}

std::string Encoder::architecture() const {
  std::ostringstream out;
  out << input_dim_ << "|";
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i > 0) out << ",";
    const Layer& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kAffine:
        out << "affine:" << l.weight.rows() << "x" << l.weight.cols()
            << (l.bias.defined() ? "+b" : "");
        break;
      case LayerKind::kTanh:
        out << "tanh";
        break;
      case LayerKind::kRelu:
        out << "relu";
        break;
      case LayerKind::kSquaredNorm:
        out << "sqnorm";
        break;
    }
  }
  return out.str();
}

Encoder Encoder::from_architecture(const std::string& arch) {
  const auto bar = arch.find('|');
  if (bar == std::string::npos) throw ContractError("bad encoder architecture: " + arch);
  Encoder e;
  e.input_dim_ = std::stoul(arch.substr(0, bar));
  std::size_t dim = e.input_dim_;
  std::stringstream rest(arch.substr(bar + 1));
  std::string token;
  while (std::getline(rest, token, ',')) {
    if (token.rfind("affine:", 0) == 0) {
      const auto x = token.find('x');
      const std::size_t in = std::stoul(token.substr(7, x - 7));
      const bool has_bias = token.size() >= 2 && token.substr(token.size() - 2) == "+b";
      const std::size_t out =
          std::stoul(token.substr(x + 1, token.size() - x - 1 - (has_bias ? 2 : 0)));
      if (in != dim) throw ContractError("encoder architecture width mismatch: " + arch);
      e.layers_.push_back({LayerKind::kAffine, Tensor::zeros({in, out}, true),
                           has_bias ? Tensor::zeros({out}, true) : Tensor{}});
      dim = out;
    } else if (token == "tanh") {
      e.layers_.push_back({LayerKind::kTanh, {}, {}});
    } else if (token == "relu") {
      e.layers_.push_back({LayerKind::kRelu, {}, {}});
    } else if (token == "sqnorm") {
      e.layers_.push_back({LayerKind::kSquaredNorm, {}, {}});
      dim = 1;
    } else {
      throw ContractError("unknown encoder layer '" + token + "'");
    }
  }
  e.feature_dim_ = dim;
  return e;
}

Encoder Encoder::clone() const {
  Encoder e;
  e.input_dim_ = input_dim_;
  e.feature_dim_ = feature_dim_;
  for (const Layer& l : layers_) {
    Layer c{l.kind, {}, {}};
    if (l.weight.defined()) c.weight = copy_tensor(l.weight, l.weight.requires_grad());
    if (l.bias.defined()) c.bias = copy_tensor(l.bias, l.bias.requires_grad());
    e.layers_.push_back(std::move(c));
  }
  return e;
}

// ---- GridDomain --------------------------------------------------------------

GridDomain::GridDomain(Matrix pts, double weight) : points(std::move(pts)), cell_weight(weight) {
  if (!(cell_weight > 0.0)) throw ContractError("GridDomain: cell_weight must be positive");
}

GridDomain GridDomain::square(double lo, double hi, std::size_t per_axis) {
  if (per_axis < 2 || !(hi > lo)) throw ContractError("GridDomain::square: bad extent");
  const double step = (hi - lo) / static_cast<double>(per_axis - 1);
  Matrix pts(per_axis * per_axis, 2);
  for (std::size_t i = 0; i < per_axis; ++i)
    for (std::size_t j = 0; j < per_axis; ++j) {
      pts(i * per_axis + j, 0) = lo + step * static_cast<double>(i);
      pts(i * per_axis + j, 1) = lo + step * static_cast<double>(j);
    }
  return GridDomain(std::move(pts), step * step);
}

GridDomain GridDomain::default_2d() { return square(-3.0, 3.0, 41); }

GridDomain GridDomain::line(double lo, double hi, std::size_t count) {
  if (count < 2 || !(hi > lo)) throw ContractError("GridDomain::line: bad extent");
  const double step = (hi - lo) / static_cast<double>(count - 1);
  Matrix pts(count, 1);
  for (std::size_t i = 0; i < count; ++i) pts(i, 0) = lo + step * static_cast<double>(i);
  return GridDomain(std::move(pts), step);
}

// ---- PCemModel / NPCemModel -------------------------------------------------------

PCemModel::PCemModel(Encoder encoder, Tensor class_weights)
    : encoder_(std::move(encoder)), class_weights_(std::move(class_weights)) {
  if (class_weights_.rank() != 2 || class_weights_.rows() != encoder_.feature_dim()) {
    throw ShapeError("PCemModel", class_weights_.shape(),
                     Shape{encoder_.feature_dim(), class_weights_.size()});
  }
}

PCemModel PCemModel::random(Encoder encoder, std::size_t num_classes, Rng& rng) {
  const std::size_t m = encoder.feature_dim();
  std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
  std::vector<double> w(m * num_classes);
  for (double& v : w) v = init(rng);
  return PCemModel(std::move(encoder), Tensor::variable({m, num_classes}, std::move(w)));
}

PCemModel PCemModel::fixture_lin() {
  return PCemModel(Encoder::identity(2), Tensor::constant({2, 2}, {1.0, 0.0, 0.0, 1.0}));
}

Tensor PCemModel::logits(const Tensor& inputs) const {
  return matmul(encoder_.forward(inputs), class_weights_);
}

std::vector<std::pair<std::string, Tensor>> PCemModel::parameters() const {
  auto out = encoder_.parameters();
  if (class_weights_.requires_grad()) out.emplace_back("W", class_weights_);
  return out;
}

PCemModel PCemModel::clone() const {
  return PCemModel(encoder_.clone(),
                   copy_tensor(class_weights_, class_weights_.requires_grad()));
}

std::vector<std::pair<std::string, Tensor>> NPCemModel::parameters() const {
  return encoder_.parameters();
}

NPCemModel NPCemModel::clone() const { return NPCemModel(encoder_.clone()); }

// ---- scalar queries -------------------------------------------------------------

Tensor energy_pcem(const PCemModel& model, const Tensor& x, std::size_t y) {
  if (y >= model.num_classes()) {
    throw ContractError("energy_pcem: class index " + std::to_string(y) +
                        " out of range for " + std::to_string(model.num_classes()) +
                        " classes");
  }
  const std::size_t label[1] = {y};
  return sum(pick(model.logits(x), label));
}

double energy_pcem(const PCemModel& model, std::span<const double> x, std::size_t y) {
  return energy_pcem(model, row_tensor(x), y).item();
}

Tensor energy_npcem(const NPCemModel& model, const Tensor& x, const Tensor& x_prime) {
  if (x.size() != x_prime.size()) {
    throw ContractError("energy_npcem: input dimensions differ " + shape_string(x.shape()) +
                        " vs " + shape_string(x_prime.shape()));
  }
  return sum(rows_dot(model.features(x), model.features(x_prime)));
}

double energy_npcem(const NPCemModel& model, std::span<const double> x,
                    std::span<const double> x_prime) {
  return energy_npcem(model, row_tensor(x), row_tensor(x_prime)).item();
}

std::vector<double> cond_label_prob(const PCemModel& model, std::span<const double> x) {
  Tensor p = softmax(model.logits(row_tensor(x)));
  return {p.values().begin(), p.values().end()};
}

Tensor marginal_score(const PCemModel& model, const Tensor& x) {
  return sum(logsumexp(model.logits(x)));
}

double marginal_score(const PCemModel& model, std::span<const double> x) {
  return marginal_score(model, row_tensor(x)).item();
}

// ---- grid oracles -----------------------------------------------------------------

Tensor log_partition(const PCemModel& model, const GridDomain& grid) {
  if (grid.points.rows == 0) throw ContractError("exact_partition: empty grid");
  Tensor logits = model.logits(Tensor::from_matrix(grid.points));
  Tensor flat = reshape(logits, {logits.size()});
  return add_scalar(logsumexp(flat), std::log(grid.cell_weight));
}

Partition exact_partition(const PCemModel& model, const GridDomain& grid) {
  Partition p;
  p.log_z = log_partition(model, grid).item();
  p.z = std::exp(p.log_z);
  return p;
}

Matrix exact_joint_grid(const PCemModel& model, const GridDomain& grid) {
  if (grid.points.rows == 0) throw ContractError("exact_joint_grid: empty grid");
  Tensor logits = model.logits(Tensor::from_matrix(grid.points));
  const double log_z = log_partition(model, grid).item();
  const double log_w = std::log(grid.cell_weight);
  Matrix table(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < table.size(); ++i) {
    table.data[i] = std::exp(logits[i] + log_w - log_z);
  }
  return table;
}

std::vector<double> exact_marginal_grid(const PCemModel& model, const GridDomain& grid) {
  Matrix joint = exact_joint_grid(model, grid);
  std::vector<double> out(joint.rows, 0.0);
  for (std::size_t i = 0; i < joint.rows; ++i)
    for (std::size_t k = 0; k < joint.cols; ++k) out[i] += joint(i, k);
  return out;
}

// ---- weights files ------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'E', 'M', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_u64(std::istream& in, int bytes = 8) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == EOF) throw std::runtime_error("weights file truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

std::uint32_t get_u32(std::istream& in) { return static_cast<std::uint32_t>(get_u64(in, 4)); }

std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("weights file truncated");
  return s;
}

void write_model(const std::string& path, ModelKind kind, const std::string& arch,
                 std::size_t num_classes,
                 const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(kind));
  put_string(out, arch);
  put_u32(out, static_cast<std::uint32_t>(num_classes));
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace

void save_weights(const std::string& path, const PCemModel& model) {
  auto tensors = model.encoder().parameters();
  tensors.emplace_back("W", model.class_weights());
  write_model(path, ModelKind::kPCem, model.encoder().architecture(), model.num_classes(),
              tensors);
}

void save_weights(const std::string& path, const NPCemModel& model) {
  write_model(path, ModelKind::kNPCem, model.encoder().architecture(), 0,
              model.encoder().parameters());
}

LoadedModel load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic)) {
    throw std::runtime_error(path + ": not a weights file");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) {
    throw std::runtime_error(path + ": unsupported weights version " + std::to_string(version));
  }
  const auto kind = static_cast<ModelKind>(get_u32(in));
  if (kind != ModelKind::kPCem && kind != ModelKind::kNPCem) {
    throw std::runtime_error(path + ": unknown model kind");
  }
  Encoder encoder = Encoder::from_architecture(get_string(in));
  const std::uint32_t num_classes = get_u32(in);
  const std::uint32_t count = get_u32(in);

  auto params = encoder.parameters();
  Tensor class_weights;
  if (kind == ModelKind::kPCem) {
    class_weights = Tensor::zeros({encoder.feature_dim(), num_classes}, true);
    params.emplace_back("W", class_weights);
  }
  if (count != params.size()) {
    throw std::runtime_error(path + ": expected " + std::to_string(params.size()) +
                             " tensors, found " + std::to_string(count));
  }
  for (auto& [name, t] : params) {
    const std::string stored = get_string(in);
    if (stored != name) throw std::runtime_error(path + ": unexpected tensor " + stored);
    const std::uint32_t rank = get_u32(in);
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(in);
    if (shape != t.shape()) throw ShapeError("load_weights:" + name, shape, t.shape());
    auto values = t.mutable_values();
    for (double& v : values) v = std::bit_cast<double>(get_u64(in));
  }

  LoadedModel loaded{kind, {}, {}};
  if (kind == ModelKind::kPCem) {
    loaded.pcem = PCemModel(std::move(encoder), class_weights);
  } else {
    loaded.npcem = NPCemModel(std::move(encoder));
  }
  return loaded;
}

}  // namespace cem
