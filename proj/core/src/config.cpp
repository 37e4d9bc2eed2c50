// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "molf/hash.hpp"

namespace molf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || p != end)
    throw ConfigError("config: " + key + " expects a number, got '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& s) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || p != end)
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" +
                      s + "'");
  return v;
}

template <class Cfg, class F>
void run_fields(Cfg& c, F&& f) {
  f("seed", c.seed);
  f("latent_dim", c.latent_dim);
  f("vae_epochs", c.vae_epochs);
  f("vae_lr", c.vae_lr);
  f("vae_batch", c.vae_batch);
  f("vae_beta", c.vae_beta);
  f("vae_tokens", c.vae_tokens);
  f("vae_hidden", c.vae_hidden);
  f("vae_heads", c.vae_heads);
  f("vae_decoder_hidden", c.vae_decoder_hidden);
  f("flow_epochs", c.flow_epochs);
  f("flow_lr", c.flow_lr);
  f("gate_lr", c.gate_lr);
  f("weight_decay", c.weight_decay);
  f("lambda_flow", c.lambda_flow);
  f("lambda_gene", c.lambda_gene);
  f("lambda_aux", c.lambda_aux);
  f("p_drop", c.p_drop);
  f("patience", c.patience);
  f("moe", c.moe);
  f("pe", c.pe);
  f("experts", c.experts);
  f("top_k", c.top_k);
  f("hidden", c.hidden);
  f("heads", c.heads);
  f("expert_heads", c.expert_heads);
  f("ffn_mult", c.ffn_mult);
  f("gate_hidden", c.gate_hidden);
  f("chunk_cap", c.chunk_cap);
  f("w", c.w);
  f("sample_steps", c.sample_steps);
  f("tau", c.tau);
  f("cfg_scales", c.cfg_scales);
  f("val_fraction", c.val_fraction);
}

template <class Cfg, class F>
void vae_fields(Cfg& c, F&& f) {
  f("gene_dim", c.gene_dim);
  f("latent_dim", c.latent_dim);
  f("tokens", c.tokens);
  f("hidden", c.hidden);
  f("heads", c.heads);
  f("layers", c.layers);
  f("ffn_mult", c.ffn_mult);
  f("decoder_hidden", c.decoder_hidden);
  f("beta", c.beta);
  f("log_sigma_min", c.log_sigma_min);
  f("log_sigma_max", c.log_sigma_max);
  f("zero_init_decoder_output", c.zero_init_decoder_output);
}

template <class Cfg, class F>
void velocity_fields(Cfg& c, F&& f) {
  f("latent_dim", c.latent_dim);
  f("condition_dim", c.condition_dim);
  f("num_types", c.num_types);
  f("spatial", c.spatial);
  f("hidden", c.hidden);
  f("heads", c.heads);
  f("pe_enabled", c.pe_enabled);
  f("pe_base", c.pe_base);
  f("moe", c.moe);
  f("experts", c.experts);
  f("top_k", c.top_k);
  f("expert_dim", c.expert_dim);
  f("expert_heads", c.expert_heads);
  f("ffn_mult", c.ffn_mult);
  f("gate_hidden", c.gate_hidden);
  f("gate_time_dim", c.gate_time_dim);
  f("time_base", c.time_base);
  f("time_scale", c.time_scale);
}

template <class Cfg, class Visit>
KeyValues write_fields(const Cfg& c, Visit visit) {
  KeyValues kv;
  visit(c, [&](const char* name, const auto& v) { kv.put(name, v); });
  return kv;
}

// Every key must name a field; fields absent from kv keep their value.
template <class Cfg, class Visit>
void read_fields(Cfg& c, const KeyValues& kv, Visit visit, const char* what) {
  std::set<std::string> known;
  visit(c, [&](const char* name, auto& v) {
    known.insert(name);
    if (kv.has(name)) kv.take(name, v);
  });
  for (const auto& [k, v] : kv.entries())
    if (!known.count(k))
      throw ConfigError(std::string(what) + ": unknown field '" + k + "'");
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void KeyValues::set(const std::string& key, std::string value) {
  values_[key] = std::move(value);
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: missing field '" + key + "'");
  return it->second;
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

void KeyValues::put(const std::string& key, double v) { set(key, format_double(v)); }
void KeyValues::put(const std::string& key, std::size_t v) { set(key, std::to_string(v)); }
void KeyValues::put(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

void KeyValues::put(const std::string& key, const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  set(key, s);
}

void KeyValues::put(const std::string& key, const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  set(key, s);
}

void KeyValues::take(const std::string& key, double& v) const {
  v = parse_double(key, get(key));
}

void KeyValues::take(const std::string& key, std::size_t& v) const {
  v = parse_size(key, get(key));
}

void KeyValues::take(const std::string& key, bool& v) const {
  const auto& s = get(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on")
    v = true;
  else if (s == "false" || s == "0" || s == "no" || s == "off")
    v = false;
  else
    throw ConfigError("config: " + key + " expects true/false, got '" + s + "'");
}

void KeyValues::take(const std::string& key, std::string& v) const { v = get(key); }

void KeyValues::take(const std::string& key, std::vector<std::size_t>& v) const {
  v.clear();
  for (const auto& item : split_list(get(key))) v.push_back(parse_size(key, item));
}

void KeyValues::take(const std::string& key, std::vector<double>& v) const {
  v.clear();
  for (const auto& item : split_list(get(key))) v.push_back(parse_double(key, item));
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

KeyValues RunConfig::to_kv() const {
  return write_fields(*this, [](auto& c, auto&& f) { run_fields(c, f); });
}

void RunConfig::apply(const KeyValues& kv) {
  read_fields(*this, kv, [](auto& c, auto&& f) { run_fields(c, f); }, "config");
}

void RunConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0.0)) throw ConfigError("config: " + std::string(name) + " must be positive");
  };
  positive("latent_dim", static_cast<double>(latent_dim));
  positive("vae_lr", vae_lr);
  positive("flow_lr", flow_lr);
  positive("gate_lr", gate_lr);
  positive("vae_batch", static_cast<double>(vae_batch));
  positive("chunk_cap", static_cast<double>(chunk_cap));
  positive("sample_steps", static_cast<double>(sample_steps));
  positive("experts", static_cast<double>(experts));
  if (moe && (top_k < 1 || top_k > experts))
    throw ConfigError("config: top_k must lie in [1, experts]");
  for (auto [name, v] : {std::pair{"lambda_flow", lambda_flow},
                         std::pair{"lambda_gene", lambda_gene},
                         std::pair{"lambda_aux", lambda_aux},
                         std::pair{"weight_decay", weight_decay},
                         std::pair{"vae_beta", vae_beta}})
    if (!(v >= 0.0)) throw ConfigError("config: " + std::string(name) + " must be >= 0");
  if (!(p_drop >= 0.0 && p_drop <= 1.0))
    throw ConfigError("config: p_drop must lie in [0, 1]");
  if (!(w >= 0.0)) throw ConfigError("config: w must be >= 0");
  if (!(tau >= 0.0)) throw ConfigError("config: tau must be >= 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("config: val_fraction must lie in [0, 1)");
  if (cfg_scales.empty()) throw ConfigError("config: cfg_scales must not be empty");
  for (double s : cfg_scales)
    if (!(s >= 0.0)) throw ConfigError("config: cfg_scales must be >= 0");
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_kv().to_text()); }

VaeConfig RunConfig::vae_config(std::size_t gene_dim) const {
  VaeConfig c;
  c.gene_dim = gene_dim;
  c.latent_dim = latent_dim;
  c.tokens = vae_tokens;
  c.hidden = vae_hidden;
  c.heads = vae_heads;
  c.decoder_hidden = vae_decoder_hidden;
  c.beta = vae_beta;
  return c;
}

VelocityConfig RunConfig::velocity_config(std::size_t feature_dim,
                                          std::size_t num_types) const {
  VelocityConfig c;
  c.latent_dim = latent_dim;
  c.condition_dim = feature_dim;
  c.num_types = num_types;
  c.spatial = true;
  c.hidden = hidden;
  c.heads = heads;
  c.pe_enabled = pe;
  c.moe = moe;
  c.experts = experts;
  c.top_k = top_k;
  c.expert_dim = hidden;
  c.expert_heads = expert_heads;
  c.ffn_mult = ffn_mult;
  c.gate_hidden = gate_hidden;
  return c;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_csv_header(std::ostream& os, const RunConfig& cfg,
                      const std::string& command) {
  write_csv_header(os, cfg.to_kv(), cfg.seed, command);
}

void write_csv_header(std::ostream& os, const KeyValues& settings, std::uint64_t seed,
                      const std::string& command) {
  const auto text = settings.to_text();
  os << "# molf " << kVersion << " " << command << "\n";
  os << "# config_hash=" << hex64(fnv1a(text)) << " seed=" << seed << "\n";
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) os << "# " << line << "\n";
}

KeyValues to_kv(const VaeConfig& c) {
  return write_fields(c, [](auto& x, auto&& f) { vae_fields(x, f); });
}

VaeConfig vae_config_from(const KeyValues& kv) {
  VaeConfig c;
  read_fields(c, kv, [](auto& x, auto&& f) { vae_fields(x, f); }, "vae config");
  c.validate();
  return c;
}

KeyValues to_kv(const VelocityConfig& c) {
  return write_fields(c, [](auto& x, auto&& f) { velocity_fields(x, f); });
}

VelocityConfig velocity_config_from(const KeyValues& kv) {
  VelocityConfig c;
  read_fields(c, kv, [](auto& x, auto&& f) { velocity_fields(x, f); },
              "velocity config");
  c.validate();
  return c;
}

}  // namespace molf
