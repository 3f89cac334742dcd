#pragma once

// Dense ReLU network with softmax output, CE/UCE losses, hand-written
// backward pass and local SGD.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedosd/error.hpp"
#include "fedosd/matrix.hpp"
#include "fedosd/random.hpp"

namespace fedosd {

using Label = std::uint32_t;

struct LayerShape {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  std::size_t param_count() const { return in_dim * out_dim + out_dim; }
  bool operator==(const LayerShape&) const = default;
};

/// Flat parameter vector plus the layer layout it encodes. Each layer stores
/// its in_dim x out_dim row-major weight block followed by out_dim biases.
struct ModelParams {
  std::vector<double> flat;
  std::vector<LayerShape> shapes;

  static std::size_t count_params(std::span<const LayerShape> shapes) {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.param_count();
    return n;
  }

  static ModelParams zeros(std::vector<LayerShape> shapes) {
    ModelParams m;
    m.flat.assign(count_params(shapes), 0.0);
    m.shapes = std::move(shapes);
    return m;
  }

  std::size_t size() const { return flat.size(); }
  std::size_t input_dim() const { return shapes.empty() ? 0 : shapes.front().in_dim; }
  std::size_t num_classes() const { return shapes.empty() ? 0 : shapes.back().out_dim; }

  void validate() const {
    if (shapes.empty()) throw ConfigError("model has no layers");
    for (std::size_t l = 1; l < shapes.size(); ++l) {
      if (shapes[l].in_dim != shapes[l - 1].out_dim)
        throw ConfigError("layer " + std::to_string(l) + " input does not match previous output");
    }
    if (flat.size() != count_params(shapes))
      throw ConfigError("parameter vector length " + std::to_string(flat.size()) +
                        " does not match layer shapes (" +
                        std::to_string(count_params(shapes)) + ")");
  }

  bool operator==(const ModelParams&) const = default;
};

struct GradVec {
  std::vector<double> flat;

  GradVec() = default;
  explicit GradVec(std::size_t n, double fill = 0.0) : flat(n, fill) {}
  explicit GradVec(std::vector<double> v) : flat(std::move(v)) {}

  std::size_t size() const { return flat.size(); }
  bool operator==(const GradVec&) const = default;
};

struct Batch {
  Matrix features;
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }

  Batch subset(std::span<const std::size_t> rows) const {
    Batch out;
    out.features = Matrix(rows.size(), features.cols);
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = features.row(rows[i]);
      std::copy(src.begin(), src.end(), out.features.row(i).begin());
      out.labels.push_back(labels[rows[i]]);
    }
    return out;
  }

  bool operator==(const Batch&) const = default;
};

enum class Loss { CrossEntropy, Unlearning };

inline const char* to_string(Loss loss) {
  return loss == Loss::CrossEntropy ? "ce" : "uce";
}

// Lower clamp on p inside log() for the CE loss.
inline constexpr double kProbFloor = 1e-12;

/// Glorot-uniform weights, zero biases.
inline ModelParams init_model(std::vector<LayerShape> shapes, Rng& rng) {
  ModelParams m = ModelParams::zeros(std::move(shapes));
  m.validate();
  std::size_t offset = 0;
  for (const auto& s : m.shapes) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
    for (std::size_t k = 0; k < s.in_dim * s.out_dim; ++k)
      m.flat[offset + k] = rng.uniform(-limit, limit);
    offset += s.param_count();
  }
  return m;
}

/// Builds input -> hidden... -> classes layer shapes.
inline std::vector<LayerShape> mlp_shapes(std::size_t input_dim,
                                          std::span<const std::size_t> hidden,
                                          std::size_t classes) {
  std::vector<LayerShape> shapes;
  std::size_t prev = input_dim;
  for (std::size_t h : hidden) {
    shapes.push_back({prev, h});
    prev = h;
  }
  shapes.push_back({prev, classes});
  return shapes;
}

namespace detail {

// Pre-activations of every layer plus the final softmax.
struct ForwardTrace {
  std::vector<Matrix> pre;   // z_l, one per layer
  std::vector<Matrix> post;  // a_l; post[0] is the input, post.back() the probabilities
};

inline void check_input(const ModelParams& model, const Batch& batch) {
  model.validate();
  if (batch.features.rows != batch.labels.size())
    throw ConfigError("batch has " + std::to_string(batch.features.rows) + " rows but " +
                      std::to_string(batch.labels.size()) + " labels");
  if (batch.dim() != model.input_dim())
    throw ConfigError("batch input dim " + std::to_string(batch.dim()) +
                      " does not match model input dim " + std::to_string(model.input_dim()));
}

inline void softmax_rows(Matrix& z) {
  for (std::size_t i = 0; i < z.rows; ++i) {
    auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
}

inline ForwardTrace forward_trace(const ModelParams& model, const Matrix& x) {
  ForwardTrace t;
  t.post.push_back(x);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < model.shapes.size(); ++l) {
    const auto& s = model.shapes[l];
    const Matrix& a = t.post.back();
    Matrix z(a.rows, s.out_dim);
    const double* w = model.flat.data() + offset;
    const double* b = w + s.in_dim * s.out_dim;
    for (std::size_t i = 0; i < a.rows; ++i) {
      auto zr = z.row(i);
      for (std::size_t j = 0; j < s.out_dim; ++j) zr[j] = b[j];
      for (std::size_t k = 0; k < s.in_dim; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        const double* wk = w + k * s.out_dim;
        for (std::size_t j = 0; j < s.out_dim; ++j) zr[j] += aik * wk[j];
      }
    }
    Matrix act = z;
    if (l + 1 < model.shapes.size()) {
      for (double& v : act.data) v = v > 0.0 ? v : 0.0;
    } else {
      softmax_rows(act);
    }
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(act));
    offset += s.param_count();
  }
  return t;
}

inline void check_labels(const Matrix& probs, std::span<const Label> labels) {
  if (probs.rows != labels.size())
    throw ConfigError("probability rows do not match label count");
  for (Label y : labels)
    if (y >= probs.cols)
      throw ConfigError("label " + std::to_string(y) + " out of range for " +
                        std::to_string(probs.cols) + " classes");
}

}  // namespace detail

/// Class-probability matrix (batch x classes).
inline Matrix forward(const ModelParams& model, const Batch& batch) {
  detail::check_input(model, batch);
  return std::move(detail::forward_trace(model, batch.features).post.back());
}

/// Mean of -log p[o, y_o], with p clamped below at kProbFloor.
inline double ce_loss(const Matrix& probs, std::span<const Label> labels) {
  detail::check_labels(probs, labels);
  if (labels.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    s -= std::log(std::max(probs(i, labels[i]), kProbFloor));
  return s / static_cast<double>(labels.size());
}

/// Mean of -log(1 - p[o, y_o] / 2); lies in [0, log 2].
inline double uce_loss(const Matrix& probs, std::span<const Label> labels) {
  detail::check_labels(probs, labels);
  if (labels.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) s -= std::log1p(-0.5 * probs(i, labels[i]));
  return s / static_cast<double>(labels.size());
}

inline double loss_value(Loss loss, const Matrix& probs, std::span<const Label> labels) {
  return loss == Loss::CrossEntropy ? ce_loss(probs, labels) : uce_loss(probs, labels);
}

inline double evaluate_loss(const ModelParams& model, const Batch& batch, Loss loss) {
  return loss_value(loss, forward(model, batch), batch.labels);
}

/// Gradient of the mean loss over `batch` with respect to every parameter.
inline GradVec backward(const ModelParams& model, const Batch& batch, Loss loss) {
  detail::check_input(model, batch);
  auto trace = detail::forward_trace(model, batch.features);
  const Matrix& probs = trace.post.back();
  detail::check_labels(probs, batch.labels);

  const std::size_t n = batch.size();
  GradVec grad(model.size());
  if (n == 0) return grad;
  const double inv_n = 1.0 / static_cast<double>(n);

  // dL/dz at the output layer.
  Matrix delta(n, probs.cols);
  for (std::size_t i = 0; i < n; ++i) {
    const Label y = batch.labels[i];
    const double py = probs(i, y);
    if (loss == Loss::CrossEntropy) {
      if (py < kProbFloor) continue;  // clamped region has zero slope
      for (std::size_t k = 0; k < probs.cols; ++k)
        delta(i, k) = (probs(i, k) - (k == y ? 1.0 : 0.0)) * inv_n;
    } else {
      // d/dp_y [-log(1 - p_y/2)] = 1/(2 - p_y); dp_y/dz_k = p_y (1[k=y] - p_k)
      const double coef = py / (2.0 - py) * inv_n;
      for (std::size_t k = 0; k < probs.cols; ++k)
        delta(i, k) = coef * ((k == y ? 1.0 : 0.0) - probs(i, k));
    }
  }

  std::vector<std::size_t> offsets(model.shapes.size());
  for (std::size_t l = 0, off = 0; l < model.shapes.size(); ++l) {
    offsets[l] = off;
    off += model.shapes[l].param_count();
  }

  for (std::size_t l = model.shapes.size(); l-- > 0;) {
    const auto& s = model.shapes[l];
    const Matrix& a = trace.post[l];
    double* gw = grad.flat.data() + offsets[l];
    double* gb = gw + s.in_dim * s.out_dim;
    for (std::size_t i = 0; i < n; ++i) {
      const auto dr = delta.row(i);
      for (std::size_t k = 0; k < s.in_dim; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        double* gwk = gw + k * s.out_dim;
        for (std::size_t j = 0; j < s.out_dim; ++j) gwk[j] += aik * dr[j];
      }
      for (std::size_t j = 0; j < s.out_dim; ++j) gb[j] += dr[j];
    }
    if (!all_finite({gw, s.param_count()}))
      throw NumericalError("non-finite gradient in layer " + std::to_string(l));
    if (l == 0) break;

    // Propagate through W_l and the ReLU of layer l-1.
    const double* w = model.flat.data() + offsets[l];
    const Matrix& z_prev = trace.pre[l - 1];
    Matrix next(n, s.in_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto dr = delta.row(i);
      for (std::size_t k = 0; k < s.in_dim; ++k) {
        if (z_prev(i, k) <= 0.0) continue;
        const double* wk = w + k * s.out_dim;
        double acc = 0.0;
        for (std::size_t j = 0; j < s.out_dim; ++j) acc += wk[j] * dr[j];
        next(i, k) = acc;
      }
    }
    delta = std::move(next);
  }
  return grad;
}

struct LocalUpdate {
  ModelParams weights;  // omega_i after local training
  GradVec gradient;     // (omega - omega_i) / lr
};

/// Local SGD from `model`. `batch_size` of 0 (or >= N) means full batch.
/// Row order is reshuffled with `rng` at the start of every epoch.
inline LocalUpdate local_train(const ModelParams& model, const Batch& data, double lr,
                               int epochs, std::size_t batch_size, Loss loss, Rng& rng) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs < 1) throw ConfigError("local epochs must be >= 1");
  if (data.size() == 0) throw ConfigError("local training on an empty dataset");
  detail::check_input(model, data);

  const std::size_t n = data.size();
  const std::size_t bs = (batch_size == 0 || batch_size >= n) ? n : batch_size;

  ModelParams w = model;
  for (int e = 0; e < epochs; ++e) {
    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      const Batch mb = data.subset(std::span(order).subspan(start, stop - start));
      const GradVec g = backward(w, mb, loss);
      axpy(-lr, g.flat, w.flat);
    }
  }

  GradVec g(model.size());
  for (std::size_t i = 0; i < g.size(); ++i) g.flat[i] = (model.flat[i] - w.flat[i]) / lr;
  return {std::move(w), std::move(g)};
}

inline std::vector<Label> predict(const ModelParams& model, const Batch& batch) {
  const Matrix probs = forward(model, batch);
  std::vector<Label> out(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const auto r = probs.row(i);
    out[i] = static_cast<Label>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

inline double accuracy(const ModelParams& model, const Batch& batch) {
  if (batch.size() == 0) return 0.0;
  const auto pred = predict(model, batch);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == batch.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace fedosd
