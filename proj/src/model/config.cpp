#include "homofm/model/config.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "homofm/error.hpp"

namespace homofm::model {

void ModelConfig::validate() const {
  if (encoder.in_channels == 0 || encoder.base_channels == 0) {
    throw ConfigError("encoder widths must be positive");
  }
  if (head.hidden_channels == 0 || head.n_residual_blocks == 0) {
    throw ConfigError("velocity head widths must be positive");
  }
  if (head.time_embed_dim < 2 || head.time_embed_dim % 2 != 0) {
    throw ConfigError("time_embed_dim must be even and at least 2");
  }
  if (discriminator.hidden_dim == 0) throw ConfigError("discriminator hidden_dim must be positive");
  if (!(discriminator.alpha_max >= 0.0)) throw ConfigError("alpha_max must be non-negative");
}

std::string head_kind_name(HeadKind kind) {
  return kind == HeadKind::kFlowMatching ? "fm" : "direct_regression";
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "fm") return HeadKind::kFlowMatching;
  if (name == "direct_regression" || name == "direct") return HeadKind::kDirectRegression;
  throw ConfigError("unknown head kind '" + name + "'");
}

std::string ModelConfig::architecture_text() const {
  std::ostringstream os;
  os << "in_channels=" << encoder.in_channels << "\n"
     << "base_channels=" << encoder.base_channels << "\n"
     << "hidden_channels=" << head.hidden_channels << "\n"
     << "n_residual_blocks=" << head.n_residual_blocks << "\n"
     << "time_embed_dim=" << head.time_embed_dim << "\n"
     << "disc_hidden_dim=" << discriminator.hidden_dim << "\n"
     << "head_kind=" << head_kind_name(head_kind) << "\n"
     << "direct_hidden=" << direct_hidden << "\n";
  return os.str();
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(architecture_text()); }

ModelConfig parse_architecture_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed architecture line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) -> std::string {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("architecture text lacks key " + key);
    return it->second;
  };
  auto take_size = [&](const std::string& key) -> std::size_t {
    const std::string v = take(key);
    try {
      std::size_t used = 0;
      const unsigned long long n = std::stoull(v, &used);
      if (used != v.size()) throw ConfigError("bad integer for " + key + ": " + v);
      return static_cast<std::size_t>(n);
    } catch (const std::logic_error&) {
      throw ConfigError("bad integer for " + key + ": " + v);
    }
  };
  ModelConfig cfg;
  cfg.encoder.in_channels = take_size("in_channels");
  cfg.encoder.base_channels = take_size("base_channels");
  cfg.head.hidden_channels = take_size("hidden_channels");
  cfg.head.n_residual_blocks = take_size("n_residual_blocks");
  cfg.head.time_embed_dim = take_size("time_embed_dim");
  cfg.discriminator.hidden_dim = take_size("disc_hidden_dim");
  cfg.head_kind = parse_head_kind(take("head_kind"));
  cfg.direct_hidden = take_size("direct_hidden");
  cfg.validate();
  return cfg;
}

double grl_alpha(const DomainDiscriminatorConfig& cfg, std::size_t iter, std::size_t total_iters,
                 std::size_t warmup_iters) {
  if (iter < warmup_iters) return 0.0;
  if (cfg.schedule == AlphaSchedule::kConstant) return cfg.alpha_max;
  const std::size_t span = total_iters > warmup_iters ? total_iters - warmup_iters : 1;
  const double progress =
      span <= 1 ? 1.0 : static_cast<double>(iter - warmup_iters) / static_cast<double>(span - 1);
  return cfg.alpha_max * std::min(1.0, progress);
}

}  // namespace homofm::model
