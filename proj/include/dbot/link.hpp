#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dbot/kinematics.hpp"
#include "dbot/rng.hpp"

namespace dbot {

// Wire layout (all frames):
//   0xAA 0x55 | len:u8 | kind:u8 | seq:u16 LE | payload[len] | crc:u16 BE
// crc = CRC-16/CCITT-FALSE over len..payload.
inline constexpr std::uint8_t kSync0 = 0xAA;
inline constexpr std::uint8_t kSync1 = 0x55;
inline constexpr std::size_t kMaxPayload = 64;
inline constexpr std::size_t kFrameOverhead = 8;
inline constexpr std::size_t kMaxFrameBytes = kMaxPayload + kFrameOverhead;

enum class FrameKind : std::uint8_t {
  CmdVel = 0x01,
  EStop = 0x02,
  Resume = 0x03,
  Lock = 0x04,
  Unlock = 0x05,
  Status = 0x10,
};

// Fixed payload length for kind, or nullopt for an unknown kind byte.
std::optional<std::size_t> payload_size(std::uint8_t kind);

struct EncodingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Frame {
  FrameKind kind = FrameKind::EStop;
  std::uint16_t seq = 0;
  std::uint8_t len = 0;
  std::array<std::uint8_t, kMaxPayload> payload{};

  std::span<const std::uint8_t> bytes() const { return {payload.data(), len}; }
  friend bool operator==(const Frame& a, const Frame& b) {
    return a.kind == b.kind && a.seq == b.seq && a.len == b.len &&
           std::equal(a.payload.begin(), a.payload.begin() + a.len, b.payload.begin());
  }
};

struct CmdVelPayload {
  std::int16_t left = 0;   // centi-rad/s
  std::int16_t right = 0;

  static CmdVelPayload from_wheels(const WheelSpeeds& w);
  WheelSpeeds to_wheels() const;
};

enum class LockState : std::uint8_t { Locked = 0, Unlocked = 1 };

struct StatusPayload {
  std::uint8_t mode = 0;
  std::uint8_t lock = 0;
  std::uint16_t battery_mv = 0;
  std::int32_t left_ticks = 0;
  std::int32_t right_ticks = 0;
};

Frame make_frame(FrameKind kind, std::uint16_t seq);
Frame make_cmd_vel(std::uint16_t seq, const CmdVelPayload& p);
Frame make_status(std::uint16_t seq, const StatusPayload& p);
// Throw EncodingError when the frame's payload does not match the schema.
CmdVelPayload parse_cmd_vel(const Frame& f);
StatusPayload parse_status(const Frame& f);

std::uint16_t crc16(std::span<const std::uint8_t> bytes);
// Bit-at-a-time reference used to cross-check the table-driven crc16.
std::uint16_t crc16_bitwise(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_frame(const Frame& f);

// Incremental byte-stream parser. Holds at most one frame's worth of bytes;
// output is independent of how the stream is chunked.
class FrameDecoder {
 public:
  template <class Sink>
  void feed(std::span<const std::uint8_t> chunk, Sink&& sink) {
    for (std::uint8_t b : chunk) push(b, sink);
  }
  std::vector<Frame> feed(std::span<const std::uint8_t> chunk);

  std::uint64_t frames() const { return frames_; }
  std::uint64_t errors() const { return errors_; }
  std::uint64_t skipped_bytes() const { return skipped_; }
  std::uint64_t seq_gaps() const { return seq_gaps_; }

 private:
  template <class Sink>
  void push(std::uint8_t b, Sink& sink) {
    buf_[n_++] = b;
    scan(sink);
  }

  // Consumes as much of buf_ as possible; after a rejected candidate it
  // restarts the search one byte past the rejected sync byte.
  template <class Sink>
  void scan(Sink& sink) {
    for (;;) {
      const Status st = check();
      if (st == Status::NeedMore) return;
      if (st == Status::Garbage) {
        ++skipped_;
        drop_front(1);
        continue;
      }
      if (st == Status::Invalid) {
        ++errors_;
        drop_front(1);
        continue;
      }
      Frame f = take();
      note_seq(f.seq);
      ++frames_;
      sink(f);
    }
  }

  enum class Status { NeedMore, Garbage, Invalid, Complete };
  Status check() const;
  Frame take();
  void drop_front(std::size_t k);
  void note_seq(std::uint16_t seq);

  std::array<std::uint8_t, kMaxFrameBytes> buf_{};
  std::size_t n_ = 0;
  std::uint64_t frames_ = 0;
  std::uint64_t errors_ = 0;
  std::uint64_t skipped_ = 0;
  std::uint64_t seq_gaps_ = 0;
  std::optional<std::uint16_t> last_seq_;
};

struct DecodeResult {
  std::vector<Frame> frames;
  std::uint64_t error_count = 0;
};

// Functional form: the decoder is advanced in place, errors counted for this call.
DecodeResult feed_decoder(FrameDecoder& d, std::span<const std::uint8_t> chunk);

struct ChannelModel {
  double latency = 0.0;
  double drop_prob = 0.0;
  double corrupt_prob = 0.0;
  std::vector<std::pair<double, double>> blackout_intervals;  // closed [start, end]

  void validate() const;
  bool in_blackout(double t) const;
};

// One direction of the serial link. Frames are the unit of loss and delay.
class Channel {
 public:
  Channel(ChannelModel model, RngStream rng);

  void send(std::span<const std::uint8_t> bytes, double t_send);
  // Bytes whose delivery time is <= t_now, in send order.
  std::vector<std::uint8_t> deliver(double t_now);

  const ChannelModel& model() const { return model_; }
  std::uint64_t sent() const { return sent_; }
  std::uint64_t dropped() const { return dropped_; }
  std::uint64_t corrupted() const { return corrupted_; }
  std::uint64_t blacked_out() const { return blacked_out_; }
  std::size_t in_flight() const { return inflight_.size(); }

 private:
  struct InFlight {
    double deliver_at;
    std::vector<std::uint8_t> bytes;
  };
  ChannelModel model_;
  RngStream rng_;
  std::deque<InFlight> inflight_;
  std::uint64_t sent_ = 0, dropped_ = 0, corrupted_ = 0, blacked_out_ = 0;
};

}  // namespace dbot
