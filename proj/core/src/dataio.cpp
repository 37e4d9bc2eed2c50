// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/dataio.hpp"

#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "molf/hash.hpp"

namespace molf::io {

namespace fs = std::filesystem;

namespace {

constexpr char kMatrixMagic[4] = {'M', 'O', 'L', 'F'};
constexpr char kCheckpointMagic[8] = {'M', 'O', 'L', 'F', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    out_.append(static_cast<const char*>(p), n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void text32(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void text64(const std::string& s) {
    uint(static_cast<std::uint64_t>(s.size()));
    out_ += s;
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view in, std::string what) : in_(in), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (n > in_.size() - pos_)
      throw CorruptionError(what_ + ": truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto v = in_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::string text32() { return std::string(bytes(uint<std::uint32_t>())); }
  std::string text64() {
    const auto n = uint<std::uint64_t>();
    need(n);
    return std::string(bytes(static_cast<std::size_t>(n)));
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view in_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || s[0] == '-')
    throw ValidationError("manifest: " + what + " expects a count, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void atomic_write(const std::string& path, std::string_view bytes) {
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create directory for " + path + ": " + ec.message());
  }
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw IoError("write failed: " + tmp);
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
  }
}

// --- matrices ---------------------------------------------------------------

std::string encode_matrix(const Tensor<float>& m) {
  MOLF_EXPECT(m.rank() == 2, "write_matrix: need a rank-2 tensor, got " +
                                 shape_to_string(m.shape()));
  Writer w;
  w.bytes(kMatrixMagic, 4);
  w.uint(kMatrixVersion);
  w.uint(static_cast<std::uint64_t>(m.rows()));
  w.uint(static_cast<std::uint64_t>(m.cols()));
  w.str().reserve(kMatrixHeaderBytes + 4 * m.size());
  for (float v : m.values()) w.f32(v);
  return std::move(w.str());
}

Tensor<float> decode_matrix(std::string_view bytes, const std::string& what) {
  Reader r(bytes, what);
  if (bytes.size() < kMatrixHeaderBytes)
    throw CorruptionError(what + ": shorter than the matrix header");
  if (std::memcmp(r.bytes(4).data(), kMatrixMagic, 4) != 0)
    throw CorruptionError(what + ": bad magic");
  const auto version = r.uint<std::uint32_t>();
  if (version != kMatrixVersion)
    throw CorruptionError(what + ": unsupported matrix version " + std::to_string(version));
  const auto rows = r.uint<std::uint64_t>(), cols = r.uint<std::uint64_t>();
  if (cols != 0 && rows > (r.remaining() / 4) / cols)
    throw CorruptionError(what + ": payload shorter than " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  if (r.remaining() != rows * cols * 4)
    throw CorruptionError(what + ": payload is " + std::to_string(r.remaining()) +
                          " bytes, expected " + std::to_string(rows * cols * 4));
  Tensor<float> m(Shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
  for (auto& v : m.values()) v = r.f32();
  return m;
}

void write_matrix(const std::string& path, std::size_t rows, std::size_t cols,
                  std::span<const float> values) {
  MOLF_EXPECT(values.size() == rows * cols,
              "write_matrix: " + std::to_string(values.size()) + " values for " +
                  std::to_string(rows) + "x" + std::to_string(cols));
  write_matrix(path, Tensor<float>(Shape{rows, cols},
                                   std::vector<float>(values.begin(), values.end())));
}

void write_matrix(const std::string& path, const Tensor<float>& m) {
  atomic_write(path, encode_matrix(m));
}

Tensor<float> read_matrix(const std::string& path) {
  return decode_matrix(read_file(path), path);
}

// --- manifest ---------------------------------------------------------------

std::string DatasetManifest::resolve(const std::string& file) const {
  const fs::path p(file);
  if (p.is_absolute() || base_dir.empty()) return file;
  return (fs::path(base_dir) / p).string();
}

std::vector<std::string> DatasetManifest::vocabulary() const {
  std::set<std::string> labels;
  for (const auto& s : slides) labels.insert(s.type);
  return {labels.begin(), labels.end()};
}

std::size_t DatasetManifest::total_spots() const {
  std::size_t n = 0;
  for (const auto& s : slides) n += s.spots;
  return n;
}

DatasetManifest parse_manifest(const std::string& text, const std::string& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::istringstream is(text);
  std::size_t line_no = 0;
  bool have_header = false;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto tok = tokens(line);
    if (tok.empty()) continue;
    const std::string where = "manifest line " + std::to_string(line_no);
    const auto& key = tok[0];
    if (key == "molf_manifest") {
      if (tok.size() != 2) throw ValidationError(where + ": expected 'molf_manifest <version>'");
      m.version = static_cast<std::uint32_t>(parse_count(tok[1], "version"));
      if (m.version != 1)
        throw ValidationError(where + ": unsupported manifest version " + tok[1]);
      have_header = true;
    } else if (key == "feature_dim") {
      if (tok.size() != 2) throw ValidationError(where + ": expected 'feature_dim <n>'");
      m.feature_dim = parse_count(tok[1], "feature_dim");
    } else if (key == "genes") {
      m.genes.insert(m.genes.end(), tok.begin() + 1, tok.end());
    } else if (key == "slide") {
      SlideEntry s;
      bool have_spots = false;
      for (std::size_t i = 1; i < tok.size(); ++i) {
        const auto eq = tok[i].find('=');
        if (eq == std::string::npos)
          throw ValidationError(where + ": expected key=value, got '" + tok[i] + "'");
        const auto k = tok[i].substr(0, eq), v = tok[i].substr(eq + 1);
        if (k == "name") s.name = v;
        else if (k == "spots") { s.spots = parse_count(v, "spots"); have_spots = true; }
        else if (k == "expression") s.expression = v;
        else if (k == "features") s.features = v;
        else if (k == "coords") s.coords = v;
        else if (k == "type") s.type = v;
        else throw ValidationError(where + ": unknown slide field '" + k + "'");
      }
      for (auto [field, value] : {std::pair{"name", &s.name}, std::pair{"expression", &s.expression},
                                  std::pair{"features", &s.features}, std::pair{"coords", &s.coords},
                                  std::pair{"type", &s.type}})
        if (value->empty()) throw ValidationError(where + ": slide lacks " + field);
      if (!have_spots) throw ValidationError(where + ": slide lacks spots");
      m.slides.push_back(std::move(s));
    } else {
      throw ValidationError(where + ": unknown record '" + key + "'");
    }
  }
  if (!have_header) throw ValidationError("manifest: missing 'molf_manifest' header");
  if (m.slides.empty()) throw ValidationError("manifest: no slides");
  if (m.genes.empty()) throw ValidationError("manifest: no genes");
  if (m.feature_dim == 0) throw ValidationError("manifest: feature_dim must be positive");
  std::set<std::string> names;
  for (const auto& s : m.slides)
    if (!names.insert(s.name).second)
      throw ValidationError("manifest: duplicate slide name " + s.name);
  return m;
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "molf_manifest " << m.version << "\n";
  os << "feature_dim " << m.feature_dim << "\n";
  os << "genes";
  for (const auto& g : m.genes) os << " " << g;
  os << "\n";
  for (const auto& s : m.slides)
    os << "slide name=" << s.name << " spots=" << s.spots << " expression=" << s.expression
       << " features=" << s.features << " coords=" << s.coords << " type=" << s.type << "\n";
  return os.str();
}

namespace {

// Matrix header only: shape checks do not need the payload.
std::pair<std::size_t, std::size_t> matrix_shape(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("manifest: missing file " + path);
  char head[kMatrixHeaderBytes];
  in.read(head, sizeof head);
  if (in.gcount() != static_cast<std::streamsize>(sizeof head))
    throw CorruptionError(path + ": shorter than the matrix header");
  Reader r(std::string_view(head, sizeof head), path);
  if (std::memcmp(r.bytes(4).data(), kMatrixMagic, 4) != 0)
    throw CorruptionError(path + ": bad magic");
  r.uint<std::uint32_t>();
  const auto rows = r.uint<std::uint64_t>();
  const auto cols = r.uint<std::uint64_t>();
  return {static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
}

}  // namespace

void validate_manifest(const DatasetManifest& m) {
  std::vector<std::string> missing;
  for (const auto& s : m.slides)
    for (const auto* f : {&s.expression, &s.features, &s.coords})
      if (!fs::exists(m.resolve(*f))) missing.push_back(m.resolve(*f));
  if (!missing.empty()) {
    std::string msg = "manifest: missing file";
    for (const auto& p : missing) msg += " " + p;
    throw ValidationError(msg);
  }
  for (const auto& s : m.slides) {
    auto check = [&](const std::string& file, std::size_t cols, const char* what) {
      const auto [r, c] = matrix_shape(m.resolve(file));
      if (r != s.spots || c != cols)
        throw ValidationError("manifest: slide " + s.name + " " + what + " is " +
                              std::to_string(r) + "x" + std::to_string(c) + ", expected " +
                              std::to_string(s.spots) + "x" + std::to_string(cols));
    };
    check(s.expression, m.genes.size(), "expression");
    check(s.features, m.feature_dim, "features");
    check(s.coords, 2, "coords");
  }
}

DatasetManifest read_manifest(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw ValidationError("manifest: missing file " + path);
  }
  auto m = parse_manifest(text, fs::path(path).parent_path().string());
  validate_manifest(m);
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  atomic_write(path, format_manifest(m));
}

std::pair<std::size_t, std::size_t> Dataset::slide_range(std::size_t slide) const {
  MOLF_EXPECT(slide < slides.size(), "dataset: slide index out of range");
  std::size_t begin = 0;
  for (std::size_t i = 0; i < slide; ++i) begin += slides[i];
  return {begin, slides[slide]};
}

Dataset Dataset::select(const std::vector<std::size_t>& slide_indices) const {
  Dataset d;
  d.vocabulary = vocabulary;
  d.genes = genes;
  std::vector<std::size_t> rows;
  for (auto s : slide_indices) {
    const auto [begin, n] = slide_range(s);
    for (std::size_t i = 0; i < n; ++i) rows.push_back(begin + i);
    d.slides.push_back(n);
    d.slide_names.push_back(slide_names[s]);
  }
  auto take = [&](const Tensor<float>& x) {
    Tensor<float> out(Shape{rows.size(), x.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(x.data() + rows[i] * x.cols(), x.cols(), out.data() + i * x.cols());
    return out;
  };
  d.expression = take(expression);
  d.features = take(features);
  d.coords = take(coords);
  for (auto r : rows) d.types.push_back(types[r]);
  return d;
}

Dataset load_dataset(const DatasetManifest& m) {
  Dataset d;
  d.vocabulary = m.vocabulary();
  d.genes = m.genes;
  const std::size_t n = m.total_spots(), g = m.genes.size(), f = m.feature_dim;
  d.expression = Tensor<float>(Shape{n, g});
  d.features = Tensor<float>(Shape{n, f});
  d.coords = Tensor<float>(Shape{n, 2});
  std::size_t row = 0;
  for (const auto& s : m.slides) {
    auto put = [&](Tensor<float>& dst, const std::string& file, std::size_t cols,
                   const char* what) {
      auto x = read_matrix(m.resolve(file));
      if (x.rows() != s.spots || x.cols() != cols)
        throw ValidationError("manifest: slide " + s.name + " " + what + " is " +
                              shape_to_string(x.shape()) + ", expected " +
                              std::to_string(s.spots) + "x" + std::to_string(cols));
      std::copy(x.values().begin(), x.values().end(), dst.data() + row * cols);
    };
    put(d.expression, s.expression, g, "expression");
    put(d.features, s.features, f, "features");
    put(d.coords, s.coords, 2, "coords");
    const auto label = static_cast<std::size_t>(
        std::lower_bound(d.vocabulary.begin(), d.vocabulary.end(), s.type) -
        d.vocabulary.begin());
    d.types.insert(d.types.end(), s.spots, label);
    d.slides.push_back(s.spots);
    d.slide_names.push_back(s.name);
    row += s.spots;
  }
  return d;
}

Tensor<float> log1p_normalize(const Tensor<float>& raw, double target) {
  MOLF_EXPECT(raw.rank() == 2, "log1p_normalize: need a matrix");
  if (!(target > 0.0)) throw ConfigError("log1p_normalize: target must be positive");
  Tensor<float> out(raw.shape());
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < raw.cols(); ++c) {
      const double v = raw.at(r, c);
      if (!(v >= 0.0))
        throw ValidationError("log1p_normalize: spot " + std::to_string(r) + " gene " +
                              std::to_string(c) + " has count " + std::to_string(v));
      total += v;
    }
    if (total == 0.0) continue;
    for (std::size_t c = 0; c < raw.cols(); ++c)
      out.at(r, c) = static_cast<float>(std::log1p(raw.at(r, c) * target / total));
  }
  return out;
}

// --- checkpoints ------------------------------------------------------------

const char* stage_name(Stage s) { return s == Stage::vae ? "vae" : "flow"; }

std::string encode_checkpoint(const CheckpointBundle& b) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.uint(kCheckpointVersion);
  w.uint(static_cast<std::uint32_t>(b.stage));
  w.text64(b.config.to_text());
  w.text64(b.meta.to_text());
  w.uint(static_cast<std::uint64_t>(b.tensors.size()));
  for (const auto& t : b.tensors) {
    w.text32(t.name);
    w.text32(t.group);
    w.uint(static_cast<std::uint8_t>(t.frozen));
    w.uint(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.uint(static_cast<std::uint64_t>(d));
    for (float v : t.value.values()) w.f32(v);
  }
  const auto sum = fnv1a(w.str().data(), w.str().size());
  w.uint(sum);
  return std::move(w.str());
}

CheckpointBundle decode_checkpoint(std::string_view bytes, const std::string& what) {
  if (bytes.size() < 8 + 4 + 4 + 8)
    throw CorruptionError(what + ": truncated checkpoint");
  const auto body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8), what);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CorruptionError(what + ": bad magic");
  if (tail.uint<std::uint64_t>() != fnv1a(body.data(), body.size()))
    throw CorruptionError(what + ": checksum mismatch");

  Reader r(body, what);
  r.bytes(8);
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CorruptionError(what + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointBundle b;
  const auto stage = r.uint<std::uint32_t>();
  if (stage != 1 && stage != 2)
    throw CorruptionError(what + ": unknown stage tag " + std::to_string(stage));
  b.stage = static_cast<Stage>(stage);
  try {
    b.config = KeyValues::parse(r.text64());
    b.meta = KeyValues::parse(r.text64());
  } catch (const ConfigError& e) {
    throw CorruptionError(what + ": " + e.what());
  }
  const auto count = r.uint<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.text32();
    t.group = r.text32();
    t.frozen = r.uint<std::uint8_t>() != 0;
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 2) throw CorruptionError(what + ": tensor " + t.name + " has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>()));
      if (shape.back() != 0 && numel > (r.remaining() / 4) / shape.back())
        throw CorruptionError(what + ": tensor " + t.name + " exceeds the file");
      numel *= shape.back();
    }
    r.need(static_cast<std::size_t>(numel) * 4);
    t.value = Tensor<float>(std::move(shape));
    for (auto& v : t.value.values()) v = r.f32();
    b.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw CorruptionError(what + ": trailing bytes");
  return b;
}

void save_checkpoint(const CheckpointBundle& b, const std::string& path) {
  atomic_write(path, encode_checkpoint(b));
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("checkpoint not found: " + path);
  }
  return decode_checkpoint(bytes, path);
}

CheckpointBundle load_checkpoint(const std::string& path, Stage required) {
  auto b = load_checkpoint(path);
  if (b.stage != required)
    throw ConfigError(path + " is a " + stage_name(b.stage) + " checkpoint, expected " +
                      stage_name(required));
  return b;
}

ad::ParameterStore<float> params_from(const CheckpointBundle& b) {
  ad::ParameterStore<float> store;
  for (const auto& t : b.tensors) store.add(t.name, t.value, t.group).set_frozen(t.frozen);
  return store;
}

namespace {

std::vector<NamedTensor> tensors_of(const ad::ParameterStore<float>& store) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < store.size(); ++i)
    out.push_back({store[i].name(), store[i].group(), store[i].frozen(), store[i].value()});
  return out;
}

}  // namespace

CheckpointBundle make_checkpoint(const VaeModel<float>& vae, KeyValues meta) {
  return {Stage::vae, to_kv(vae.config), std::move(meta), tensors_of(vae.params)};
}

CheckpointBundle make_checkpoint(const FlowModel& model, KeyValues meta) {
  return {Stage::flow, to_kv(model.config), std::move(meta), tensors_of(model.params)};
}

VaeModel<float> vae_from_checkpoint(const CheckpointBundle& b) {
  if (b.stage != Stage::vae)
    throw ConfigError(std::string("expected a vae checkpoint, got ") + stage_name(b.stage));
  auto vae = VaeModel<float>::from_params(vae_config_from(b.config), params_from(b));
  if (vae.params.size() != b.tensors.size())
    throw CorruptionError("vae checkpoint: " + std::to_string(b.tensors.size()) +
                          " tensors for a model with " + std::to_string(vae.params.size()));
  vae.params.set_frozen(true);
  return vae;
}

FlowModel flow_from_checkpoint(const CheckpointBundle& b) {
  if (b.stage != Stage::flow)
    throw ConfigError(std::string("expected a flow checkpoint, got ") + stage_name(b.stage));
  auto model = FlowModel::from_params(velocity_config_from(b.config), params_from(b));
  if (model.params.size() != b.tensors.size())
    throw CorruptionError("flow checkpoint: " + std::to_string(b.tensors.size()) +
                          " tensors for a model with " + std::to_string(model.params.size()));
  return model;
}

}  // namespace molf::io
