#include "homofm/model/params.hpp"

#include <cmath>
#include <cstdlib>

#include "homofm/data/rng.hpp"
#include "homofm/error.hpp"

namespace homofm::model {

namespace {

enum class Init { kKaiming, kSmall, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in;
};

void conv_specs(std::vector<ParamSpec>& out, const std::string& name, std::size_t out_ch,
                std::size_t in_ch, std::size_t k, Init init = Init::kKaiming) {
  out.push_back({name + ".w", {out_ch, in_ch, k, k}, init, in_ch * k * k});
  out.push_back({name + ".b", {out_ch}, Init::kZero, 0});
}

void linear_specs(std::vector<ParamSpec>& out, const std::string& name, std::size_t in,
                  std::size_t out_dim, Init init = Init::kKaiming) {
  out.push_back({name + ".w", {in, out_dim}, init, in});
  out.push_back({name + ".b", {out_dim}, Init::kZero, 0});
}

std::vector<ParamSpec> layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  const std::size_t c = cfg.encoder.base_channels;
  const std::size_t f = cfg.encoder.feature_channels();
  conv_specs(specs, "enc.conv1", c, cfg.encoder.in_channels, 3);
  conv_specs(specs, "enc.conv2", f, c, 3);
  conv_specs(specs, "enc.conv3", f, f, 3);
  conv_specs(specs, "enc.conv4", f, f, 3);
  conv_specs(specs, "enc.conv5", f, f, 3);
  conv_specs(specs, "enc.fuse", f, 2 * f, 1);

  const std::size_t blocks = cfg.head.n_residual_blocks;
  if (cfg.head_kind == HeadKind::kFlowMatching) {
    const std::size_t h = cfg.head.hidden_channels;
    const std::size_t d = cfg.head.time_embed_dim;
    linear_specs(specs, "head.temb.l1", d, d);
    linear_specs(specs, "head.temb.l2", d, d);
    conv_specs(specs, "head.in", h, 2 + 2 * f, 3);
    for (std::size_t k = 0; k < blocks; ++k) {
      const std::string block = "head.block" + std::to_string(k);
      conv_specs(specs, block + ".conv", h, h, 3);
      linear_specs(specs, block + ".film", d, 2 * h, Init::kSmall);
    }
    conv_specs(specs, "head.out", 2, h, 3, Init::kZero);
  } else {
    const std::size_t h = direct_head_width(cfg);
    conv_specs(specs, "head.in", h, 2 * f, 3);
    for (std::size_t k = 0; k < blocks; ++k) {
      const std::string block = "head.block" + std::to_string(k);
      conv_specs(specs, block + ".conv", h, h, 3);
      specs.push_back({block + ".gamma", {1, h, 1, 1}, Init::kOne, 0});
      specs.push_back({block + ".beta", {1, h, 1, 1}, Init::kZero, 0});
    }
    conv_specs(specs, "head.out", 2, h, 3, Init::kZero);
  }

  linear_specs(specs, "disc.l1", f, cfg.discriminator.hidden_dim);
  linear_specs(specs, "disc.l2", cfg.discriminator.hidden_dim, 1, Init::kZero);
  return specs;
}

std::size_t count_specs(const std::vector<ParamSpec>& specs, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& s : specs) {
    if (s.name.rfind(prefix, 0) == 0) n += shape_numel(s.shape);
  }
  return n;
}

}  // namespace

std::size_t fm_head_param_count(const ModelConfig& cfg) {
  ModelConfig fm = cfg;
  fm.head_kind = HeadKind::kFlowMatching;
  return count_specs(layout(fm), "head.");
}

std::size_t direct_head_param_count(const ModelConfig& cfg, std::size_t hidden) {
  const std::size_t f = cfg.encoder.feature_channels();
  const std::size_t n = cfg.head.n_residual_blocks;
  return hidden * 2 * f * 9 + hidden + n * (hidden * hidden * 9 + hidden + 2 * hidden) +
         2 * hidden * 9 + 2;
}

std::size_t direct_head_width(const ModelConfig& cfg) {
  if (cfg.direct_hidden > 0) return cfg.direct_hidden;
  const std::size_t target = fm_head_param_count(cfg);
  std::size_t best = 1;
  std::size_t best_gap = static_cast<std::size_t>(-1);
  for (std::size_t h = 1; h <= 4 * cfg.head.hidden_channels + 8; ++h) {
    const std::size_t count = direct_head_param_count(cfg, h);
    const std::size_t gap = count > target ? count - target : target - count;
    if (gap < best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  return best;
}

template <typename T>
void ModelParams<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name) != 0) throw ConfigError("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
}

template <typename T>
const Tensor<T>& ModelParams<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].second;
}

template <typename T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::tensors(const std::string& prefix) const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : entries_) {
    if (name.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  return cast<T>();
}

template <typename T>
Model<T> Model<T>::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  Model<T> m;
  m.config = cfg;
  const data::Rng root(seed);
  for (const ParamSpec& spec : layout(cfg)) {
    const std::size_t n = shape_numel(spec.shape);
    std::vector<T> values(n, T{0});
    switch (spec.init) {
      case Init::kZero:
        break;
      case Init::kOne:
        std::fill(values.begin(), values.end(), T{1});
        break;
      case Init::kKaiming:
      case Init::kSmall: {
        data::Rng rng = root.split(fnv1a64(spec.name));
        double std = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
        if (spec.init == Init::kSmall) std *= 0.1;
        for (T& v : values) v = static_cast<T>(std * rng.normal());
        break;
      }
    }
    m.params.add(spec.name, Tensor<T>(spec.shape, std::move(values), true));
  }
  return m;
}

template class ModelParams<float>;
template class ModelParams<double>;
template struct Model<float>;
template struct Model<double>;

}  // namespace homofm::model
