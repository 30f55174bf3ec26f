#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "okapi/core.hpp"

namespace okapi {

enum class EmbeddingFormat { Binary, Csv };

// ".csv" selects Csv; anything else is treated as the binary format.
EmbeddingFormat format_from_path(const std::filesystem::path& path);

// Binary layout (little-endian):
//   "OKPI" | u32 version=1 | u64 N | u32 d | u32 domain_count | u8 flags (bit0 = has_target)
//   per row: u64 id | u32 domain | [f64 target] | d x f32 embedding
// A missing target inside a has_target file is stored as a quiet NaN.
//
// CSV layout: header `id,domain[,target],e0,...,e{d-1}`; an empty target cell
// means the sample is unlabelled. domain_count is one past the largest label.
EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format);
void save_embeddings(const EmbeddingSet& data, const std::filesystem::path& path, EmbeddingFormat format);

// In-memory codecs behind the file functions.
std::vector<std::uint8_t> encode_binary(const EmbeddingSet& data);
EmbeddingSet decode_binary(std::span<const std::uint8_t> bytes);
std::string encode_csv(const EmbeddingSet& data);
EmbeddingSet decode_csv(const std::string& text);

// One JSON object per line:
//   {"query_id":u64,"neighbor_ids":[u64],"distances":[f64],"filtered":"none"|"query_caliper"|"no_valid_keys"}
std::string match_record_to_json(const MatchRecord& record);
MatchRecord match_record_from_json(const std::string& line);
void save_matches(std::span<const MatchRecord> records, const std::filesystem::path& path);
std::vector<MatchRecord> load_matches(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

// Little-endian byte stream helpers shared by the binary formats.
class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);
  void f64s(std::span<const double> v);

  const std::vector<std::uint8_t>& buffer() const { return out_; }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  std::vector<double> f64s();

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace okapi
