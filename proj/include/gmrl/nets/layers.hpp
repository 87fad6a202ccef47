#pragma once

#include <string>
#include <vector>

#include "gmrl/ad/graph.hpp"
#include "gmrl/ad/param_store.hpp"
#include "gmrl/util/random.hpp"

namespace gmrl::nets {

using ad::Tensor;
using ad::Var;

enum class Activation { kNone, kTanh, kRelu };

template <typename T>
Var<T> activate(const Var<T>& x, Activation a) {
  switch (a) {
    case Activation::kTanh: return ad::tanh(x);
    case Activation::kRelu: return ad::relu(x);
    default: return x;
  }
}

template <typename T>
struct Linear {
  Var<T> weight;
  Var<T> bias;

  static Linear make(ad::ParamStore<T>& store, const std::string& name,
                     std::size_t in, std::size_t out, double gain, Rng& rng) {
    Linear l;
    l.weight = store.add_uniform(name + "/w", in, out, gain, rng);
    l.bias = store.add(name + "/b", Tensor<T>(1, out));
    return l;
  }

  Var<T> operator()(const Var<T>& x) const { return ad::affine(x, weight, bias); }
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

// Stack of dense layers; hidden layers use `hidden_act`, the last layer
// `output_act`.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Activation hidden_act = Activation::kTanh;
  Activation output_act = Activation::kNone;

  static Mlp make(ad::ParamStore<T>& store, const std::string& name,
                  const std::vector<std::size_t>& widths, Activation hidden,
                  Activation output, double output_gain, Rng& rng) {
    Mlp m;
    m.hidden_act = hidden;
    m.output_act = output;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      m.layers.push_back(Linear<T>::make(store, name + "/l" + std::to_string(i),
                                         widths[i], widths[i + 1],
                                         last ? output_gain : 1.0, rng));
    }
    return m;
  }

  Var<T> operator()(Var<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = activate(layers[i](x), i + 1 == layers.size() ? output_act : hidden_act);
    }
    return x;
  }
};

// Gated recurrent cell:
//   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
//   n = tanh(x Wn + bn + r * (h Un + bu)), h' = (1 - z) * n + z * h
template <typename T>
struct Gru {
  Linear<T> input;   // x -> [z r n]
  Linear<T> hidden;  // h -> [z r n]
  std::size_t width = 0;

  static Gru make(ad::ParamStore<T>& store, const std::string& name,
                  std::size_t in, std::size_t width, Rng& rng) {
    Gru g;
    g.width = width;
    g.input = Linear<T>::make(store, name + "/x", in, 3 * width, 1.0, rng);
    g.hidden = Linear<T>::make(store, name + "/h", width, 3 * width, 1.0, rng);
    return g;
  }

  Var<T> operator()(const Var<T>& x, const Var<T>& h) const {
    const Var<T> gx = input(x);
    const Var<T> gh = hidden(h);
    const std::size_t w = width;
    const Var<T> z = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, w), ad::slice_cols(gh, 0, w)));
    const Var<T> r = ad::sigmoid(ad::add(ad::slice_cols(gx, w, w), ad::slice_cols(gh, w, w)));
    const Var<T> n = ad::tanh(
        ad::add(ad::slice_cols(gx, 2 * w, w), ad::mul(r, ad::slice_cols(gh, 2 * w, w))));
    const Var<T> keep = ad::add_scalar(ad::neg(z), T(1));
    return ad::add(ad::mul(keep, n), ad::mul(z, h));
  }
};

}  // namespace gmrl::nets
