#include "sitfuse/numcore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sitfuse/error.hpp"
#include "sitfuse/rng.hpp"

namespace sitfuse {

DenseNet::DenseNet(std::vector<LayerShape> layers) : layers_(std::move(layers)) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerShape& l = layers_[i];
    if (l.in < 1 || l.out < 1) throw ConfigError("layer dimensions must be positive");
    if (i > 0 && layers_[i - 1].out != l.in) throw ConfigError("adjacent layer dimensions do not match");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(l.in) * l.out + l.out;
  }
  params_.assign(total, 0.0);
  grads_.assign(total, 0.0);
}

namespace {
std::vector<LayerShape> shapes_from_sizes(const std::vector<int>& sizes, Activation hidden) {
  if (sizes.size() < 2) throw ConfigError("a network needs at least input and output sizes");
  std::vector<LayerShape> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
    layers.push_back({sizes[i], sizes[i + 1], i + 2 == sizes.size() ? Activation::identity : hidden});
  return layers;
}
}  // namespace

DenseNet::DenseNet(const std::vector<int>& sizes, Activation hidden) : DenseNet(shapes_from_sizes(sizes, hidden)) {}

void DenseNet::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerShape& l = layers_[i];
    const double limit = std::sqrt(6.0 / (l.in + l.out));
    double* w = params_.data() + offsets_[i];
    const std::size_t nw = static_cast<std::size_t>(l.in) * l.out;
    for (std::size_t k = 0; k < nw; ++k) w[k] = rng.uniform(-limit, limit);
    std::fill(w + nw, w + nw + l.out, 0.0);
  }
  zero_grad();
}

void DenseNet::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

std::vector<double> DenseNet::forward(std::span<const double> input, Cache* cache) const {
  if (layers_.empty()) throw ConfigError("forward on an empty network");
  if (static_cast<int>(input.size()) != input_dim())
    throw ConfigError("input length " + std::to_string(input.size()) + " does not match network input " +
                      std::to_string(input_dim()));
  if (cache) {
    cache->inputs.resize(layers_.size());
    cache->pre.resize(layers_.size());
  }
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerShape& l = layers_[i];
    const double* w = params_.data() + offsets_[i];
    const double* b = w + static_cast<std::size_t>(l.in) * l.out;
    std::vector<double> z(l.out);
    for (int o = 0; o < l.out; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * l.in;
      double acc = b[o];
      for (int k = 0; k < l.in; ++k) acc += row[k] * x[k];
      z[o] = acc;
    }
    if (cache) {
      cache->inputs[i] = std::move(x);
      cache->pre[i] = z;
    }
    if (l.activation == Activation::relu)
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    x = std::move(z);
  }
  return x;
}

std::vector<double> DenseNet::backward(const Cache& cache, std::span<const double> grad_output) {
  if (static_cast<int>(grad_output.size()) != output_dim()) throw ConfigError("gradient length mismatch");
  std::vector<double> g(grad_output.begin(), grad_output.end());
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const LayerShape& l = layers_[i];
    if (l.activation == Activation::relu)
      for (int o = 0; o < l.out; ++o)
        if (cache.pre[i][o] <= 0.0) g[o] = 0.0;
    const double* w = params_.data() + offsets_[i];
    double* gw = grads_.data() + offsets_[i];
    double* gb = gw + static_cast<std::size_t>(l.in) * l.out;
    const std::vector<double>& x = cache.inputs[i];
    std::vector<double> gx(l.in, 0.0);
    for (int o = 0; o < l.out; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      gb[o] += go;
      const double* row = w + static_cast<std::size_t>(o) * l.in;
      double* grow = gw + static_cast<std::size_t>(o) * l.in;
      for (int k = 0; k < l.in; ++k) {
        grow[k] += go * x[k];
        gx[k] += go * row[k];
      }
    }
    g = std::move(gx);
  }
  return g;
}

nlohmann::json DenseNet::architecture() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerShape& l : layers_)
    layers.push_back({{"in", l.in}, {"out", l.out}, {"activation", l.activation == Activation::relu ? "relu" : "identity"}});
  return layers;
}

DenseNet DenseNet::from_architecture(const nlohmann::json& j) {
  std::vector<LayerShape> layers;
  for (const auto& l : j) {
    const std::string act = l.at("activation").get<std::string>();
    if (act != "relu" && act != "identity") throw DataError("unknown activation '" + act + "'");
    layers.push_back({l.at("in").get<int>(), l.at("out").get<int>(), act == "relu" ? Activation::relu : Activation::identity});
  }
  return DenseNet(std::move(layers));
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad_probs) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_probs[i];
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_probs[i] - dot);
  return g;
}

LossGrad cross_entropy(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) throw ConfigError("label out of range");
  LossGrad out;
  out.grad.assign(probs.size(), 0.0);
  const double p = probs[label];
  if (p > kProbabilityFloor) {
    out.loss = -std::log(p);
    out.grad[label] = -1.0 / p;
  } else {
    out.loss = -std::log(kProbabilityFloor);
  }
  return out;
}

LossGrad softmax_cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw ConfigError("label out of range");
  LossGrad out;
  out.grad = softmax(logits);
  out.loss = -std::log(std::max(out.grad[label], kProbabilityFloor));
  out.grad[label] -= 1.0;
  return out;
}

AdamState::AdamState(std::size_t param_count, AdamConfig cfg) : cfg_(cfg), m_(param_count, 0.0), v_(param_count, 0.0) {}

void AdamState::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ConfigError("Adam state shape mismatch");
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
  }
}

double LrSchedule::at(int iteration) const {
  double lr = base;
  for (int m : milestones)
    if (iteration >= m) lr *= factor;
  return lr;
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

GradCheckResult grad_check(const std::function<double()>& objective, std::span<double> params,
                           std::span<const double> analytic, double h) {
  if (params.size() != analytic.size()) throw ConfigError("gradient length mismatch");
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = objective();
    params[i] = saved - h;
    const double down = objective();
    params[i] = saved;
    const double err = relative_error(analytic[i], (up - down) / (2.0 * h));
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

GradCheckResult grad_check(DenseNet& net, std::span<const double> input, std::uint64_t seed, double h) {
  Rng rng(seed);
  std::vector<double> weights(net.output_dim());
  for (double& w : weights) w = rng.uniform(-1.0, 1.0);
  auto objective = [&] {
    const auto out = net.forward(input);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    return s;
  };
  DenseNet::Cache cache;
  net.zero_grad();
  net.forward(input, &cache);
  net.backward(cache, weights);
  const std::vector<double> analytic(net.grads().begin(), net.grads().end());
  return grad_check(objective, net.params(), analytic, h);
}

void write_param_blob(const std::string& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write parameter blob '" + path + "'");
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw DataError("failed writing parameter blob '" + path + "'");
}

std::vector<double> read_param_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read parameter blob '" + path + "'");
  std::vector<double> values;
  unsigned char bytes[8];
  while (in.read(reinterpret_cast<char*>(bytes), 8)) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    values.push_back(std::bit_cast<double>(bits));
  }
  if (in.gcount() != 0) throw DataError("parameter blob '" + path + "' has a truncated trailing value");
  return values;
}

}  // namespace sitfuse
