#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmrl/ad/param_store.hpp"
#include "gmrl/nets/features.hpp"
#include "gmrl/nets/layers.hpp"
#include "gmrl/util/errors.hpp"
#include "json.hpp"

namespace gmrl::nets {

inline constexpr std::size_t kActionCount = 3;

struct EncoderConfig {
  std::size_t embed = 32;        // per-row embedding width
  std::size_t pooled = 32;       // pooled feature width
  std::size_t hidden = 64;       // recurrent state width
  std::size_t head_hidden = 64;  // policy/value head width
  std::size_t latent = 4;        // inference latent dimension L
  std::size_t history = 10;      // inference history length H
  std::size_t traj_hidden = 16;  // inference recurrent width

  void validate() const {
    for (std::size_t v : {embed, pooled, hidden, head_hidden, latent, history, traj_hidden}) {
      if (v == 0) throw ConfigError("network: all widths must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"embed", c.embed},     {"pooled", c.pooled},   {"hidden", c.hidden},
       {"head_hidden", c.head_hidden}, {"latent", c.latent},
       {"history", c.history}, {"traj_hidden", c.traj_hidden}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  static const std::vector<std::string> known{"embed", "pooled", "hidden", "head_hidden",
                                              "latent", "history", "traj_hidden"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("network: unknown key '" + it.key() + "'");
    }
  }
  c.embed = j.value("embed", c.embed);
  c.pooled = j.value("pooled", c.pooled);
  c.hidden = j.value("hidden", c.hidden);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.latent = j.value("latent", c.latent);
  c.history = j.value("history", c.history);
  c.traj_hidden = j.value("traj_hidden", c.traj_hidden);
  c.validate();
}

// Deep-set encoder with recurrent memory: embed every row, mean-pool over
// the set, concatenate the viewer's own embedding, then one recurrent step.
template <typename T>
struct SetEncoder {
  Mlp<T> embed;
  Gru<T> cell;

  static SetEncoder make(ad::ParamStore<T>& store, const std::string& name,
                         std::size_t row_width, const EncoderConfig& c, Rng& rng) {
    SetEncoder e;
    e.embed = Mlp<T>::make(store, name + "/embed", {row_width, c.embed, c.pooled},
                           Activation::kRelu, Activation::kRelu, 1.0, rng);
    e.cell = Gru<T>::make(store, name + "/gru", 2 * c.pooled, c.hidden, rng);
    return e;
  }

  struct Output {
    Var<T> pooled;  // (sets x pooled)
    Var<T> own;     // (sets x pooled)
    Var<T> hidden;  // (sets x hidden), the new recurrent state
  };

  Output operator()(const Var<T>& rows, const std::vector<int>& offsets,
                    const std::vector<int>& viewer, const Var<T>& h_prev) const {
    Output o;
    const Var<T> e = embed(rows);
    o.pooled = ad::segment_mean(e, offsets);
    o.own = ad::gather_rows(e, viewer);
    o.hidden = cell(ad::concat_cols<T>({o.pooled, o.own}), h_prev);
    return o;
  }
};

struct HeadSpec {
  std::string name;
  bool uses_beta = false;
};

template <typename T>
struct PolicyHead {
  HeadSpec spec;
  Mlp<T> policy;
  Mlp<T> value;
};

template <typename T>
struct HeadOutput {
  Var<T> logits;  // (sets x 3)
  Var<T> value;   // (sets x 1)
};

// Shared encoder plus named policy/value heads. Heads flagged uses_beta
// receive the viewer's preference concatenated to the recurrent feature.
template <typename T>
class PolicyNet {
 public:
  PolicyNet(std::size_t row_width, EncoderConfig config, std::vector<HeadSpec> heads,
            std::uint64_t seed)
      : row_width_(row_width), config_(config) {
    config_.validate();
    Rng rng(seed);
    encoder_ = SetEncoder<T>::make(store_, "backbone", row_width, config_, rng);
    for (const auto& spec : heads) {
      const std::size_t in = config_.hidden + (spec.uses_beta ? 1 : 0);
      PolicyHead<T> h;
      h.spec = spec;
      h.policy = Mlp<T>::make(store_, spec.name + "/pi", {in, config_.head_hidden, kActionCount},
                              Activation::kTanh, Activation::kNone, 0.01, rng);
      h.value = Mlp<T>::make(store_, spec.name + "/v", {in, config_.head_hidden, 1},
                             Activation::kTanh, Activation::kNone, 1.0, rng);
      heads_.push_back(std::move(h));
    }
  }

  PolicyNet(const PolicyNet&) = delete;
  PolicyNet& operator=(const PolicyNet&) = delete;

  ad::ParamStore<T>& store() { return store_; }
  const ad::ParamStore<T>& store() const { return store_; }
  const EncoderConfig& config() const { return config_; }
  std::size_t row_width() const { return row_width_; }
  std::size_t hidden_width() const { return config_.hidden; }
  std::size_t head_count() const { return heads_.size(); }
  const HeadSpec& head_spec(std::size_t k) const { return heads_.at(k).spec; }

  std::size_t head_index(const std::string& name) const {
    for (std::size_t k = 0; k < heads_.size(); ++k) {
      if (heads_[k].spec.name == name) return k;
    }
    throw std::out_of_range("PolicyNet: unknown head '" + name + "'");
  }

  std::vector<std::string> head_names() const {
    std::vector<std::string> out;
    for (const auto& h : heads_) out.push_back(h.spec.name);
    return out;
  }

  typename SetEncoder<T>::Output encode(const SetBatch& batch, const Tensor<T>& h_prev) const {
    if (batch.width != row_width_) {
      throw std::invalid_argument("PolicyNet: row width " + std::to_string(batch.width) +
                                  ", expected " + std::to_string(row_width_));
    }
    if (h_prev.rows() != batch.size() || h_prev.cols() != config_.hidden) {
      throw std::invalid_argument("PolicyNet: recurrent state shape " + h_prev.shape_string());
    }
    return encoder_(Var<T>::constant(batch.tensor<T>()), batch.offsets, batch.viewer,
                    Var<T>::constant(h_prev));
  }

  // `beta` is (sets x 1) and only read by heads that use it.
  HeadOutput<T> head(std::size_t k, const Var<T>& features, const Var<T>& beta) const {
    const auto& h = heads_.at(k);
    Var<T> in = features;
    if (h.spec.uses_beta) {
      if (!beta.valid() || beta.rows() != features.rows() || beta.cols() != 1) {
        throw std::invalid_argument("PolicyNet: head '" + h.spec.name + "' needs a beta column");
      }
      in = ad::concat_cols<T>({features, beta});
    }
    return {h.policy(in), h.value(in)};
  }

  static Var<T> beta_column(const std::vector<double>& beta) {
    Tensor<T> t(beta.size(), 1);
    for (std::size_t i = 0; i < beta.size(); ++i) t[i] = T(beta[i]);
    return Var<T>::constant(std::move(t));
  }

 private:
  std::size_t row_width_;
  EncoderConfig config_;
  ad::ParamStore<T> store_;
  SetEncoder<T> encoder_;
  std::vector<PolicyHead<T>> heads_;
};

// Deterministic recurrent autoencoder over one vehicle's recent history.
template <typename T>
class TrajectoryAutoencoder {
 public:
  TrajectoryAutoencoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    cell_ = Gru<T>::make(store_, "traj/enc", kHistoryWidth, config_.traj_hidden, rng);
    to_latent_ = Linear<T>::make(store_, "traj/latent", config_.traj_hidden,
                                 config_.latent, 1.0, rng);
    decoder_ = Mlp<T>::make(store_, "traj/dec",
                            {config_.latent, 32, config_.history * kHistoryWidth},
                            Activation::kTanh, Activation::kNone, 1.0, rng);
  }

  TrajectoryAutoencoder(const TrajectoryAutoencoder&) = delete;
  TrajectoryAutoencoder& operator=(const TrajectoryAutoencoder&) = delete;

  ad::ParamStore<T>& store() { return store_; }
  const ad::ParamStore<T>& store() const { return store_; }
  const EncoderConfig& config() const { return config_; }
  std::size_t input_width() const { return config_.history * kHistoryWidth; }

  // histories: (batch x H*4), oldest step first.
  Var<T> encode(const Var<T>& histories) const {
    if (histories.cols() != input_width()) {
      throw std::invalid_argument("traj_encode: expected width " +
                                  std::to_string(input_width()));
    }
    if (histories.rows() == 0) throw std::invalid_argument("traj_encode: empty history");
    Var<T> h = Var<T>::constant(Tensor<T>(histories.rows(), config_.traj_hidden));
    for (std::size_t k = 0; k < config_.history; ++k) {
      h = cell_(ad::slice_cols(histories, k * kHistoryWidth, kHistoryWidth), h);
    }
    return ad::tanh(to_latent_(h));
  }

  Var<T> decode(const Var<T>& latent) const { return decoder_(latent); }

  // Mean squared reconstruction error.
  Var<T> recon_loss(const Var<T>& histories) const {
    return ad::mean_all(ad::square(ad::sub(decode(encode(histories)), histories)));
  }

 private:
  EncoderConfig config_;
  ad::ParamStore<T> store_;
  Gru<T> cell_;
  Linear<T> to_latent_;
  Mlp<T> decoder_;
};

inline std::vector<HeadSpec> meta_heads() { return {{"meta", true}}; }

inline std::string guide_head_name(std::size_t k) { return "guide" + std::to_string(k); }

inline std::vector<HeadSpec> guide_heads(std::size_t anchors) {
  std::vector<HeadSpec> out;
  for (std::size_t k = 0; k < anchors; ++k) out.push_back({guide_head_name(k), false});
  return out;
}

inline std::vector<HeadSpec> ego_heads() { return {{"ego", false}}; }

inline std::size_t ego_row_width(const EncoderConfig& c) { return kEgoBaseWidth + c.latent; }

}  // namespace gmrl::nets
