#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "renil/asle/layers.hpp"

namespace renil::asle {

inline constexpr std::size_t kInputChannels = 6;
inline constexpr std::size_t kOutputWidth = 4;

struct AsleConfig {
  std::size_t patch_length = 100;
  std::size_t embed_channels = 32;
  std::size_t embed_kernel = 3;
  std::size_t embed_stride = 3;
  std::size_t embed_layers = 2;
  std::size_t group_size = 4;
  double gn_eps = 1e-5;
  std::vector<std::size_t> extractor_channels{64, 128, 256, 512};
  std::size_t extractor_kernel = 3;
  std::size_t context_blocks = 2;
  std::size_t context_channels = 512;
  std::size_t context_kernel = 3;
  std::vector<PoolSpec> context_pools{
      {PoolKind::kAvg, 1}, {PoolKind::kAvg, 2}, {PoolKind::kAvg, 3}, {PoolKind::kMax, 3}};
  std::size_t head_hidden = 1024;
  double dropout = 0.2;

  bool operator==(const AsleConfig&) const = default;

  // A reduced network that trains in minutes on one CPU core.
  static AsleConfig small() {
    AsleConfig c;
    c.embed_channels = 16;
    c.extractor_channels = {16, 32, 64, 64};
    c.context_channels = 64;
    c.head_hidden = 128;
    return c;
  }

  std::size_t extractor_out() const {
    return extractor_channels.empty() ? embed_channels : extractor_channels.back();
  }
  std::size_t context_out() const { return context_blocks == 0 ? extractor_out() : context_channels; }

  std::size_t embed_width() const {
    std::size_t w = patch_length;
    for (std::size_t i = 0; i < embed_layers; ++i) w = same_out(w, embed_stride);
    return w;
  }

  std::size_t pooled_width() const {
    std::size_t bins = 0;
    for (const PoolSpec& p : context_pools) bins += p.bins;
    return extractor_out() + context_out() * bins;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw std::invalid_argument(std::string("config: ") + what + " must be positive");
    };
    positive(patch_length, "patch_length");
    positive(embed_channels, "embed_channels");
    positive(embed_kernel, "embed_kernel");
    positive(embed_stride, "embed_stride");
    positive(embed_layers, "embed_layers");
    positive(group_size, "group_size");
    positive(extractor_kernel, "extractor_kernel");
    positive(context_kernel, "context_kernel");
    positive(head_hidden, "head_hidden");
    if (extractor_kernel % 2 == 0 || context_kernel % 2 == 0) {
      throw std::invalid_argument("config: residual kernels must be odd");
    }
    if (patch_length < embed_stride) throw std::invalid_argument("config: patch_length shorter than stride");
    if (!(gn_eps > 0.0)) throw std::invalid_argument("config: gn_eps must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config: dropout must be in [0, 1)");
    if (context_blocks > 0) positive(context_channels, "context_channels");
    if (context_pools.empty()) throw std::invalid_argument("config: context_pools is empty");
    for (const PoolSpec& p : context_pools) positive(p.bins, "pool bins");
    auto divisible = [&](std::size_t c) {
      if (c == 0 || c % group_size != 0) {
        throw std::invalid_argument("config: channel count " + std::to_string(c) +
                                    " not divisible by group_size");
      }
    };
    divisible(embed_channels);
    for (std::size_t c : extractor_channels) divisible(c);
    if (context_blocks > 0) divisible(context_channels);
  }
};

inline void to_json(nlohmann::json& j, const PoolSpec& p) {
  j = nlohmann::json{{"kind", p.kind == PoolKind::kAvg ? "avg" : "max"}, {"bins", p.bins}};
}

inline void from_json(const nlohmann::json& j, PoolSpec& p) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "avg") {
    p.kind = PoolKind::kAvg;
  } else if (kind == "max") {
    p.kind = PoolKind::kMax;
  } else {
    throw std::invalid_argument("unknown pool kind '" + kind + "'");
  }
  p.bins = j.at("bins").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const AsleConfig& c) {
  j = nlohmann::json{{"patch_length", c.patch_length},
                     {"embed_channels", c.embed_channels},
                     {"embed_kernel", c.embed_kernel},
                     {"embed_stride", c.embed_stride},
                     {"embed_layers", c.embed_layers},
                     {"group_size", c.group_size},
                     {"gn_eps", c.gn_eps},
                     {"extractor_channels", c.extractor_channels},
                     {"extractor_kernel", c.extractor_kernel},
                     {"context_blocks", c.context_blocks},
                     {"context_channels", c.context_channels},
                     {"context_kernel", c.context_kernel},
                     {"context_pools", c.context_pools},
                     {"head_hidden", c.head_hidden},
                     {"dropout", c.dropout}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, AsleConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  nlohmann::json known;
  to_json(known, AsleConfig{});
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("patch_length", c.patch_length);
  get("embed_channels", c.embed_channels);
  get("embed_kernel", c.embed_kernel);
  get("embed_stride", c.embed_stride);
  get("embed_layers", c.embed_layers);
  get("group_size", c.group_size);
  get("gn_eps", c.gn_eps);
  get("extractor_channels", c.extractor_channels);
  get("extractor_kernel", c.extractor_kernel);
  get("context_blocks", c.context_blocks);
  get("context_channels", c.context_channels);
  get("context_kernel", c.context_kernel);
  get("context_pools", c.context_pools);
  get("head_hidden", c.head_hidden);
  get("dropout", c.dropout);
}

}  // namespace renil::asle
