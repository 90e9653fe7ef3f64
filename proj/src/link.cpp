#include "dbot/link.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dbot {

std::optional<std::size_t> payload_size(std::uint8_t kind) {
  switch (static_cast<FrameKind>(kind)) {
    case FrameKind::CmdVel:
      return 4;
    case FrameKind::EStop:
    case FrameKind::Resume:
    case FrameKind::Lock:
    case FrameKind::Unlock:
      return 0;
    case FrameKind::Status:
      return 12;
  }
  return std::nullopt;
}

namespace {

void put_u16le(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v & 0xFF);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}
void put_u32le(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
std::uint16_t get_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t get_u32le(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::int16_t to_centi(double rad_s) {
  const double c = std::round(rad_s * 100.0);
  return static_cast<std::int16_t>(std::clamp(c, -32768.0, 32767.0));
}

constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> t{};
  for (unsigned i = 0; i < 256; ++i) {
    std::uint16_t c = static_cast<std::uint16_t>(i << 8);
    for (int b = 0; b < 8; ++b) {
      c = (c & 0x8000) ? static_cast<std::uint16_t>((c << 1) ^ 0x1021) : static_cast<std::uint16_t>(c << 1);
    }
    t[i] = c;
  }
  return t;
}

constexpr auto kCrcTable = make_crc_table();

}  // namespace

CmdVelPayload CmdVelPayload::from_wheels(const WheelSpeeds& w) {
  return {to_centi(w.left), to_centi(w.right)};
}

WheelSpeeds CmdVelPayload::to_wheels() const { return {left / 100.0, right / 100.0}; }

Frame make_frame(FrameKind kind, std::uint16_t seq) {
  Frame f;
  f.kind = kind;
  f.seq = seq;
  f.len = static_cast<std::uint8_t>(payload_size(static_cast<std::uint8_t>(kind)).value_or(0));
  return f;
}

Frame make_cmd_vel(std::uint16_t seq, const CmdVelPayload& p) {
  Frame f = make_frame(FrameKind::CmdVel, seq);
  put_u16le(&f.payload[0], static_cast<std::uint16_t>(p.left));
  put_u16le(&f.payload[2], static_cast<std::uint16_t>(p.right));
  return f;
}

Frame make_status(std::uint16_t seq, const StatusPayload& p) {
  Frame f = make_frame(FrameKind::Status, seq);
  f.payload[0] = p.mode;
  f.payload[1] = p.lock;
  put_u16le(&f.payload[2], p.battery_mv);
  put_u32le(&f.payload[4], static_cast<std::uint32_t>(p.left_ticks));
  put_u32le(&f.payload[8], static_cast<std::uint32_t>(p.right_ticks));
  return f;
}

CmdVelPayload parse_cmd_vel(const Frame& f) {
  if (f.kind != FrameKind::CmdVel || f.len != 4) throw EncodingError("not a CmdVel frame");
  return {static_cast<std::int16_t>(get_u16le(&f.payload[0])),
          static_cast<std::int16_t>(get_u16le(&f.payload[2]))};
}

StatusPayload parse_status(const Frame& f) {
  if (f.kind != FrameKind::Status || f.len != 12) throw EncodingError("not a Status frame");
  StatusPayload p;
  p.mode = f.payload[0];
  p.lock = f.payload[1];
  p.battery_mv = get_u16le(&f.payload[2]);
  p.left_ticks = static_cast<std::int32_t>(get_u32le(&f.payload[4]));
  p.right_ticks = static_cast<std::int32_t>(get_u32le(&f.payload[8]));
  return p;
}

std::uint16_t crc16(std::span<const std::uint8_t> bytes) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : bytes) {
    crc = static_cast<std::uint16_t>((crc << 8) ^ kCrcTable[((crc >> 8) ^ b) & 0xFF]);
  }
  return crc;
}

std::uint16_t crc16_bitwise(std::span<const std::uint8_t> bytes) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : bytes) {
    for (int i = 7; i >= 0; --i) {
      const bool in = (b >> i) & 1;
      const bool top = crc & 0x8000;
      crc = static_cast<std::uint16_t>(crc << 1);
      if (in != top) crc ^= 0x1021;
    }
  }
  return crc;
}

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  const auto expected = payload_size(static_cast<std::uint8_t>(f.kind));
  if (f.len > kMaxPayload) throw EncodingError("payload exceeds 64 bytes");
  if (!expected || *expected != f.len) throw EncodingError("payload length does not match frame kind");

  std::vector<std::uint8_t> out(kFrameOverhead + f.len);
  out[0] = kSync0;
  out[1] = kSync1;
  out[2] = f.len;
  out[3] = static_cast<std::uint8_t>(f.kind);
  put_u16le(&out[4], f.seq);
  std::memcpy(out.data() + 6, f.payload.data(), f.len);
  const std::uint16_t crc = crc16({out.data() + 2, 4u + f.len});
  out[6 + f.len] = static_cast<std::uint8_t>(crc >> 8);
  out[7 + f.len] = static_cast<std::uint8_t>(crc & 0xFF);
  return out;
}

FrameDecoder::Status FrameDecoder::check() const {
  if (n_ == 0) return Status::NeedMore;
  if (buf_[0] != kSync0) return Status::Garbage;
  if (n_ < 2) return Status::NeedMore;
  if (buf_[1] != kSync1) return Status::Garbage;
  if (n_ < 3) return Status::NeedMore;
  const std::size_t len = buf_[2];
  if (len > kMaxPayload) return Status::Invalid;
  if (n_ < 4) return Status::NeedMore;
  const auto expected = payload_size(buf_[3]);
  if (!expected || *expected != len) return Status::Invalid;
  if (n_ < kFrameOverhead + len) return Status::NeedMore;
  const std::uint16_t crc = crc16({buf_.data() + 2, 4 + len});
  const std::uint16_t got = static_cast<std::uint16_t>((buf_[6 + len] << 8) | buf_[7 + len]);
  return crc == got ? Status::Complete : Status::Invalid;
}

Frame FrameDecoder::take() {
  Frame f;
  f.len = buf_[2];
  f.kind = static_cast<FrameKind>(buf_[3]);
  f.seq = get_u16le(&buf_[4]);
  std::memcpy(f.payload.data(), buf_.data() + 6, f.len);
  drop_front(kFrameOverhead + f.len);
  return f;
}

void FrameDecoder::drop_front(std::size_t k) {
  std::memmove(buf_.data(), buf_.data() + k, n_ - k);
  n_ -= k;
}

void FrameDecoder::note_seq(std::uint16_t seq) {
  if (last_seq_) {
    const auto gap = static_cast<std::uint16_t>(seq - *last_seq_ - 1);
    seq_gaps_ += gap;
  }
  last_seq_ = seq;
}

std::vector<Frame> FrameDecoder::feed(std::span<const std::uint8_t> chunk) {
  std::vector<Frame> out;
  feed(chunk, [&](const Frame& f) { out.push_back(f); });
  return out;
}

DecodeResult feed_decoder(FrameDecoder& d, std::span<const std::uint8_t> chunk) {
  const auto before = d.errors();
  DecodeResult r;
  r.frames = d.feed(chunk);
  r.error_count = d.errors() - before;
  return r;
}

void ChannelModel::validate() const {
  if (!(latency >= 0.0)) throw ParameterError("channel latency must be >= 0");
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) throw ParameterError("drop_prob must be in [0, 1]");
  if (!(corrupt_prob >= 0.0 && corrupt_prob <= 1.0)) throw ParameterError("corrupt_prob must be in [0, 1]");
  auto sorted = blackout_intervals;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (!(sorted[i].second >= sorted[i].first)) throw ParameterError("blackout interval end < start");
    if (i > 0 && sorted[i].first <= sorted[i - 1].second) {
      throw ParameterError("blackout intervals overlap");
    }
  }
}

bool ChannelModel::in_blackout(double t) const {
  return std::any_of(blackout_intervals.begin(), blackout_intervals.end(),
                     [t](const auto& iv) { return t >= iv.first && t <= iv.second; });
}

Channel::Channel(ChannelModel model, RngStream rng) : model_(std::move(model)), rng_(rng) {
  model_.validate();
}

void Channel::send(std::span<const std::uint8_t> bytes, double t_send) {
  ++sent_;
  // Four draws per frame regardless of outcome.
  const bool drop = rng_.bernoulli(model_.drop_prob);
  const bool corrupt = rng_.bernoulli(model_.corrupt_prob);
  const std::uint64_t byte_draw = rng_.next_u64();
  const std::uint64_t bit_draw = rng_.next_u64();
  if (model_.in_blackout(t_send)) {
    ++blacked_out_;
    return;
  }
  if (drop || bytes.empty()) {
    ++dropped_;
    return;
  }
  InFlight f{t_send + model_.latency, {bytes.begin(), bytes.end()}};
  if (corrupt) {
    ++corrupted_;
    f.bytes[byte_draw % f.bytes.size()] ^= static_cast<std::uint8_t>(1u << (bit_draw % 8));
  }
  inflight_.push_back(std::move(f));
}

std::vector<std::uint8_t> Channel::deliver(double t_now) {
  std::vector<std::uint8_t> out;
  while (!inflight_.empty() && inflight_.front().deliver_at <= t_now) {
    InFlight f = std::move(inflight_.front());
    inflight_.pop_front();
    if (model_.in_blackout(f.deliver_at)) {
      ++blacked_out_;
      continue;
    }
    out.insert(out.end(), f.bytes.begin(), f.bytes.end());
  }
  return out;
}

}  // namespace dbot
