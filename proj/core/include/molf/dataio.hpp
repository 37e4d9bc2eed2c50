// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk formats. All integers and floats are little-endian.
//
// Matrix file (".molf"):
//   0  "MOLF"            4 bytes
//   4  version           u32 (= 1)
//   8  rows              u64
//   16 cols              u64
//   24 values            rows * cols f32, row-major
//
// Manifest: text, one record per line, '#' comments.
//   molf_manifest 1
//   feature_dim 16
//   genes G0 G1 G2
//   slide name=s0 spots=128 expression=s0.x.molf features=s0.f.molf coords=s0.xy.molf type=BRCA
// Paths are relative to the manifest's directory.
//
// Checkpoint:
//   "MOLFCKPT" 8 bytes, version u32 (= 1), stage u32 (1 vae, 2 flow),
//   config text (u64 length + bytes), meta text (u64 length + bytes),
//   tensor count u64, then per tensor: name (u32 length + bytes),
//   group (u32 length + bytes), frozen u8, rank u32, dims u64 x rank,
//   values f32 x numel; finally a u64 FNV-1a of every preceding byte.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "molf/config.hpp"
#include "molf/flow.hpp"
#include "molf/vae.hpp"

namespace molf::io {

inline constexpr std::uint32_t kMatrixVersion = 1;
inline constexpr std::size_t kMatrixHeaderBytes = 24;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr double kLibrarySize = 1e4;

/// Whole-file read; IoError when the file cannot be opened.
std::string read_file(const std::string& path);
/// Write to a temporary sibling, then rename over `path`.
void atomic_write(const std::string& path, std::string_view bytes);

std::string encode_matrix(const Tensor<float>& m);
Tensor<float> decode_matrix(std::string_view bytes, const std::string& what);
void write_matrix(const std::string& path, std::size_t rows, std::size_t cols,
                  std::span<const float> values);
void write_matrix(const std::string& path, const Tensor<float>& m);
Tensor<float> read_matrix(const std::string& path);

struct SlideEntry {
  std::string name;
  std::size_t spots = 0;
  std::string expression, features, coords;  // as written in the manifest
  std::string type;
};

struct DatasetManifest {
  std::uint32_t version = 1;
  std::size_t feature_dim = 0;
  std::vector<std::string> genes;
  std::vector<SlideEntry> slides;
  std::string base_dir;  // directory the relative paths resolve against

  std::string resolve(const std::string& file) const;
  /// Sorted distinct cancer-type labels; the one-hot order.
  std::vector<std::string> vocabulary() const;
  std::size_t total_spots() const;
};

/// Parse without touching referenced files.
DatasetManifest parse_manifest(const std::string& text, const std::string& base_dir);
std::string format_manifest(const DatasetManifest& m);
/// Checks every referenced file exists and agrees with the declared shapes.
void validate_manifest(const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& m);

/// All slides of a manifest, concatenated in manifest order.
struct Dataset {
  Tensor<float> expression;  // [S, G]
  Tensor<float> features;    // [S, F]
  Tensor<float> coords;      // [S, 2]
  std::vector<std::size_t> types;  // index into vocabulary
  ad::Segments slides;             // spots per slide
  std::vector<std::string> slide_names;
  std::vector<std::string> vocabulary;
  std::vector<std::string> genes;

  std::size_t rows() const { return expression.rank() == 2 ? expression.rows() : 0; }
  /// The listed slides, in the given order.
  Dataset select(const std::vector<std::size_t>& slide_indices) const;
  /// Rows of the given slide.
  std::pair<std::size_t, std::size_t> slide_range(std::size_t slide) const;
};

Dataset load_dataset(const DatasetManifest& m);

/// Scale each spot to kLibrarySize total counts (`target`), then ln(1 + v).
/// All-zero spots stay zero; negative counts raise ValidationError.
Tensor<float> log1p_normalize(const Tensor<float>& raw, double target = kLibrarySize);

enum class Stage : std::uint32_t { vae = 1, flow = 2 };
const char* stage_name(Stage s);

struct NamedTensor {
  std::string name;
  std::string group;
  bool frozen = false;
  Tensor<float> value;
};

struct CheckpointBundle {
  Stage stage = Stage::vae;
  KeyValues config;  // model architecture
  KeyValues meta;    // run information (seed, config hash, parent checksum)
  std::vector<NamedTensor> tensors;
};

std::string encode_checkpoint(const CheckpointBundle& b);
/// CorruptionError on bad magic, truncation or checksum mismatch.
CheckpointBundle decode_checkpoint(std::string_view bytes, const std::string& what);
void save_checkpoint(const CheckpointBundle& b, const std::string& path);
CheckpointBundle load_checkpoint(const std::string& path);
/// As above, but a stage other than `required` raises ConfigError.
CheckpointBundle load_checkpoint(const std::string& path, Stage required);

ad::ParameterStore<float> params_from(const CheckpointBundle& b);
CheckpointBundle make_checkpoint(const VaeModel<float>& vae, KeyValues meta = {});
CheckpointBundle make_checkpoint(const FlowModel& model, KeyValues meta = {});
/// The returned VAE is frozen.
VaeModel<float> vae_from_checkpoint(const CheckpointBundle& b);
FlowModel flow_from_checkpoint(const CheckpointBundle& b);

}  // namespace molf::io
