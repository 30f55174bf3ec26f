// Training-state snapshots. Layout (little-endian, version 1):
//   "OKCK" | u32 version | u8 method | u64 step
//   shape: u64 input, hidden, embed, outputs
//   f64[] encoder | f64[] head | f64[] shadow | u64 ema step
//   propensity: u64 dim | u64 domain_count | f64[] weights | f64[] bias
//   bank: u64 capacity | u64 cursor | u64 n | n x (u64 id | u32 domain | f64[] z)
//   rng state string | u64 n | n x u64 order | u64 order cursor
//   stats: u64 queries, matched, pairs, violations | f64 distance_sum
//   history: u64 n | n x (u64 step | 6 x f64)
// f64[] is a u64 length followed by the values.

#include <algorithm>

#include "okapi/io.hpp"
#include "okapi/toytrain.hpp"

namespace okapi {
namespace {

constexpr std::uint8_t kCheckpointMagic[4] = {'O', 'K', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

std::vector<std::uint8_t> Trainer::checkpoint() const {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u8(method_ == Method::Okapi ? 1 : 0);
  w.u64(step_);
  w.u64(model_.shape.input_dim);
  w.u64(model_.shape.hidden);
  w.u64(model_.shape.embed_dim);
  w.u64(model_.shape.outputs);
  w.f64s(model_.encoder);
  w.f64s(model_.head);
  w.f64s(ema_.shadow);
  w.u64(ema_.step);
  w.u64(scorer_.dim);
  w.u64(scorer_.domain_count);
  w.f64s(scorer_.weights);
  w.f64s(scorer_.bias);
  w.u64(bank_.capacity());
  w.u64(bank_.write_cursor());
  w.u64(bank_.slots().size());
  for (const auto& e : bank_.slots()) {
    w.u64(e.id);
    w.u32(e.s.value);
    w.f64s(e.z);
  }
  w.str(rng_.state());
  w.u64(order_.size());
  for (auto i : order_) w.u64(i);
  w.u64(order_cursor_);
  w.u64(stats_.queries);
  w.u64(stats_.matched);
  w.u64(stats_.pairs);
  w.u64(stats_.cross_domain_violations);
  w.f64(stats_.distance_sum);
  w.u64(history_.size());
  for (const auto& r : history_) {
    w.u64(r.step);
    for (double v : {r.l_sup, r.l_unsup, r.lambda, r.retention, r.id_acc, r.ood_acc}) w.f64(v);
  }
  return w.take();
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { write_file(path, checkpoint()); }

Trainer Trainer::resume(const SynthData& data, TrainConfig cfg, std::span<const std::uint8_t> blob) {
  if (blob.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, blob.begin()))
    throw FormatError("bad magic: not an OKCK checkpoint");
  ByteReader r(blob);
  r.bytes(4);
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  const Method method = r.u8() ? Method::Okapi : Method::Erm;

  Trainer t(data, std::move(cfg), method);
  t.step_ = r.u64();
  ModelShape shape;
  shape.input_dim = r.u64();
  shape.hidden = r.u64();
  shape.embed_dim = r.u64();
  shape.outputs = r.u64();
  if (!(shape == t.cfg_.shape)) throw FormatError("checkpoint model shape differs from the configuration");
  t.model_.encoder = r.f64s();
  t.model_.head = r.f64s();
  t.ema_.shadow = r.f64s();
  t.ema_.step = r.u64();
  if (t.model_.encoder.size() != shape.encoder_size() || t.model_.head.size() != shape.head_size() ||
      t.ema_.shadow.size() != shape.encoder_size())
    throw FormatError("checkpoint parameter vectors have the wrong length");
  t.scorer_.dim = r.u64();
  t.scorer_.domain_count = r.u64();
  t.scorer_.weights = r.f64s();
  t.scorer_.bias = r.f64s();
  try {
    t.scorer_.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint propensity model: ") + e.what());
  }

  const std::size_t capacity = r.u64();
  const std::size_t cursor = r.u64();
  const std::size_t slots = r.u64();
  if (slots > capacity) throw FormatError("checkpoint bank holds more entries than its capacity");
  std::vector<BankEntry> entries(slots);
  for (auto& e : entries) {
    e.id = r.u64();
    e.s = DomainLabel(r.u32());
    e.z = r.f64s();
  }
  t.bank_ = MemoryBank::restore(capacity, cursor, std::move(entries));

  t.rng_.set_state(r.str());
  const std::size_t n = r.u64();
  if (n != t.train_.size()) throw FormatError("checkpoint was taken on a different training set");
  for (auto& i : t.order_) {
    i = r.u64();
    if (i >= n) throw FormatError("checkpoint sample order is corrupt");
  }
  t.order_cursor_ = r.u64();
  t.stats_.queries = r.u64();
  t.stats_.matched = r.u64();
  t.stats_.pairs = r.u64();
  t.stats_.cross_domain_violations = r.u64();
  t.stats_.distance_sum = r.f64();
  const std::size_t rows = r.u64();
  if (rows > r.remaining() / 56) throw FormatError("checkpoint history is truncated");
  t.history_.resize(rows);
  for (auto& row : t.history_) {
    row.step = r.u64();
    for (double* v : {&row.l_sup, &row.l_unsup, &row.lambda, &row.retention, &row.id_acc, &row.ood_acc}) *v = r.f64();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return t;
}

Trainer Trainer::resume(const SynthData& data, TrainConfig cfg, const std::filesystem::path& path) {
  return resume(data, std::move(cfg), read_file(path));
}

}  // namespace okapi
