#include "okapi/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace okapi {
namespace {

constexpr std::uint8_t kMagic[4] = {'O', 'K', 'P', 'I'};
constexpr std::uint32_t kBinaryVersion = 1;
constexpr std::uint8_t kFlagHasTarget = 0x1;

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw FormatError("line " + std::to_string(line_no) + ": cannot parse '" + std::string(field) + "'");
  return value;
}

template <typename T>
void append_number(std::string& out, T value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, ptr);
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u64(s.size());
  out_.insert(out_.end(), s.begin(), s.end());
}

void ByteWriter::f64s(std::span<const double> v) {
  u64(v.size());
  for (double x : v) f64(x);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (remaining() < n) throw FormatError("unexpected end of data");
  auto out = in_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return bytes(1)[0]; }

std::uint32_t ByteReader::u32() {
  auto b = bytes(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = bytes(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint64_t n = u64();
  if (n > remaining()) throw FormatError("string length exceeds data");
  auto b = bytes(static_cast<std::size_t>(n));
  return {b.begin(), b.end()};
}

std::vector<double> ByteReader::f64s() {
  const std::uint64_t n = u64();
  if (n > remaining() / 8) throw FormatError("array length exceeds data");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& x : out) x = f64();
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

EmbeddingFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EmbeddingFormat::Csv : EmbeddingFormat::Binary;
}

std::vector<std::uint8_t> encode_binary(const EmbeddingSet& data) {
  const bool has_target = data.any_target();
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kBinaryVersion);
  w.u64(data.size());
  w.u32(static_cast<std::uint32_t>(data.dim()));
  w.u32(data.domain_count());
  w.u8(has_target ? kFlagHasTarget : 0);
  for (const Sample& s : data.samples()) {
    w.u64(s.id);
    w.u32(s.domain.value);
    if (has_target) w.f64(s.target.value_or(std::numeric_limits<double>::quiet_NaN()));
    for (float v : s.embedding) w.f32(v);
  }
  return w.take();
}

EmbeddingSet decode_binary(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw FormatError("bad magic: not an OKPI embedding file");
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kBinaryVersion) throw FormatError("unsupported embedding file version " + std::to_string(version));
  const std::uint64_t n = r.u64();
  const std::uint32_t dim = r.u32();
  const std::uint32_t domain_count = r.u32();
  const std::uint8_t flags = r.u8();
  if (flags & ~kFlagHasTarget) throw FormatError("unknown flag bits in embedding file");
  const bool has_target = flags & kFlagHasTarget;

  const std::uint64_t row_bytes = 12 + (has_target ? 8 : 0) + 4ull * dim;
  if (dim == 0 || n > r.remaining() / row_bytes || n * row_bytes != r.remaining())
    throw FormatError("embedding file size does not match its header");

  std::vector<Sample> samples(static_cast<std::size_t>(n));
  for (auto& s : samples) {
    s.id = r.u64();
    s.domain = DomainLabel(r.u32());
    if (has_target) {
      const double t = r.f64();
      if (!std::isnan(t)) s.target = t;
    }
    s.embedding.resize(dim);
    for (auto& v : s.embedding) v = r.f32();
  }
  return EmbeddingSet(dim, domain_count, std::move(samples));
}

std::string encode_csv(const EmbeddingSet& data) {
  const bool has_target = data.any_target();
  std::string out = has_target ? "id,domain,target" : "id,domain";
  for (std::size_t j = 0; j < data.dim(); ++j) out += ",e" + std::to_string(j);
  out += '\n';
  for (const Sample& s : data.samples()) {
    append_number(out, s.id);
    out += ',';
    append_number(out, s.domain.value);
    if (has_target) {
      out += ',';
      if (s.target) append_number(out, *s.target);
    }
    for (float v : s.embedding) {
      out += ',';
      append_number(out, v);
    }
    out += '\n';
  }
  return out;
}

EmbeddingSet decode_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "domain")
    throw FormatError("CSV header must start with id,domain");
  const bool has_target = header[2] == "target";
  const std::size_t first_e = has_target ? 3 : 2;
  const std::size_t dim = header.size() - first_e;
  if (dim == 0) throw FormatError("CSV header declares no embedding columns");
  for (std::size_t j = 0; j < dim; ++j)
    if (header[first_e + j] != "e" + std::to_string(j))
      throw FormatError("CSV embedding columns must be named e0..e{d-1}");

  std::vector<Sample> samples;
  std::uint32_t max_domain = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size())
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(fields.size()));
    Sample s;
    s.id = parse_number<std::uint64_t>(fields[0], line_no);
    s.domain = DomainLabel(parse_number<std::uint32_t>(fields[1], line_no));
    if (has_target && !fields[2].empty()) s.target = parse_number<double>(fields[2], line_no);
    s.embedding.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j) s.embedding.push_back(parse_number<float>(fields[first_e + j], line_no));
    max_domain = std::max(max_domain, s.domain.value);
    samples.push_back(std::move(s));
  }
  const std::uint32_t domain_count = samples.empty() ? 1 : max_domain + 1;
  return EmbeddingSet(dim, domain_count, std::move(samples));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
  auto bytes = read_file(path);
  if (format == EmbeddingFormat::Binary) return decode_binary(bytes);
  return decode_csv(std::string(bytes.begin(), bytes.end()));
}

void save_embeddings(const EmbeddingSet& data, const std::filesystem::path& path, EmbeddingFormat format) {
  if (format == EmbeddingFormat::Binary) {
    write_file(path, encode_binary(data));
  } else {
    write_text(path, encode_csv(data));
  }
}

std::string match_record_to_json(const MatchRecord& record) {
  nlohmann::ordered_json j;
  j["query_id"] = record.query_id;
  j["neighbor_ids"] = record.neighbor_ids;
  j["distances"] = record.distances;
  j["filtered"] = std::string(to_string(record.filtered));
  return j.dump();
}

MatchRecord match_record_from_json(const std::string& line) {
  MatchRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.query_id = j.at("query_id").get<std::uint64_t>();
    r.neighbor_ids = j.at("neighbor_ids").get<std::vector<std::uint64_t>>();
    r.distances = j.at("distances").get<std::vector<double>>();
    r.filtered = filter_reason_from_string(j.at("filtered").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed match record: ") + e.what());
  }
  validate(r);
  return r;
}

void save_matches(std::span<const MatchRecord> records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) {
    validate(r);
    out += match_record_to_json(r);
    out += '\n';
  }
  write_text(path, out);
}

std::vector<MatchRecord> load_matches(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<MatchRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(match_record_from_json(line));
  }
  return out;
}

}  // namespace okapi
