// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Line-oriented key=value configuration. Files hold one `key = value` per
// line, '#' starts a comment. Later assignments override earlier ones, so
// the CLI applies: built-in defaults, then --config file, then --set
// overrides, then dedicated flags.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "molf/moe.hpp"
#include "molf/vae.hpp"

namespace molf {

inline constexpr const char* kVersion = "0.4.0";

class KeyValues {
 public:
  /// Parse text; malformed lines raise ConfigError with the line number.
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }
  void merge(const KeyValues& other);

  // Typed field access used by the config structs below. Values that fail
  // to parse raise ConfigError naming the key.
  void put(const std::string& key, double v);
  void put(const std::string& key, std::size_t v);
  void put(const std::string& key, bool v);
  void put(const std::string& key, const std::string& v) { set(key, v); }
  void put(const std::string& key, const std::vector<std::size_t>& v);
  void put(const std::string& key, const std::vector<double>& v);

  void take(const std::string& key, double& v) const;
  void take(const std::string& key, std::size_t& v) const;
  void take(const std::string& key, bool& v) const;
  void take(const std::string& key, std::string& v) const;
  void take(const std::string& key, std::vector<std::size_t>& v) const;
  void take(const std::string& key, std::vector<double>& v) const;

  /// "key=value" lines in key order.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Every tunable of both training stages, sampling and selection, with
/// defaults for the pan-cancer setting.
struct RunConfig {
  std::uint64_t seed = 0;

  // Stage I
  std::size_t latent_dim = 128;
  std::size_t vae_epochs = 1000;
  double vae_lr = 5e-5;
  std::size_t vae_batch = 256;
  double vae_beta = 1e-3;
  std::size_t vae_tokens = 8;
  std::size_t vae_hidden = 512;
  std::size_t vae_heads = 4;
  std::vector<std::size_t> vae_decoder_hidden = {512, 512};

  // Stage II
  std::size_t flow_epochs = 500;
  double flow_lr = 5e-5;
  double gate_lr = 1e-5;
  double weight_decay = 0.01;
  double lambda_flow = 1.0;
  double lambda_gene = 1.0;
  double lambda_aux = 1.0;
  double p_drop = 0.1;
  std::size_t patience = 50;
  bool moe = true;
  bool pe = true;
  std::size_t experts = 6;
  std::size_t top_k = 2;
  std::size_t hidden = 256;
  std::size_t heads = 4;
  std::size_t expert_heads = 4;
  std::size_t ffn_mult = 4;
  std::vector<std::size_t> gate_hidden = {128};
  std::size_t chunk_cap = 1024;

  // Sampling and guidance selection
  double w = 1.0;
  std::size_t sample_steps = 1;
  double tau = 0.05;
  std::vector<double> cfg_scales = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  // Held-out fraction of slides for validation (at least one slide is kept
  // for training).
  double val_fraction = 0.2;

  KeyValues to_kv() const;
  /// Apply every key of `kv`; unknown keys raise ConfigError naming them.
  void apply(const KeyValues& kv);
  void validate() const;
  /// FNV-1a of the canonical key=value text.
  std::uint64_t hash() const;

  VaeConfig vae_config(std::size_t gene_dim) const;
  VelocityConfig velocity_config(std::size_t feature_dim,
                                 std::size_t num_types) const;
};

std::string hex64(std::uint64_t v);

/// Comment header for every CSV the tools write: version, config hash, seed
/// and the full configuration.
void write_csv_header(std::ostream& os, const RunConfig& cfg,
                      const std::string& command);
/// Same layout for commands whose settings live outside RunConfig.
void write_csv_header(std::ostream& os, const KeyValues& settings, std::uint64_t seed,
                      const std::string& command);

KeyValues to_kv(const VaeConfig& c);
VaeConfig vae_config_from(const KeyValues& kv);
KeyValues to_kv(const VelocityConfig& c);
VelocityConfig velocity_config_from(const KeyValues& kv);

}  // namespace molf
