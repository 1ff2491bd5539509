#pragma once

// Binary wire framing for live magnetometer streams.
//
// Frame layout (198 bytes total):
//   sync     0xAA 0x55
//   seq      u16 little-endian, wrapping counter
//   payload  48 f32 little-endian, taxel-major: taxel (0,0) x,y,z; (0,1) ...
//   crc      u16 little-endian, CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF,
//            MSB-first, no reflection) over seq + payload
//
// The decoder is a single-consumer state machine over an arbitrary byte
// stream: it scans for the sync pair, verifies the CRC, drops and counts bad
// frames, and rescans from the next byte so no valid frame is ever missed.

#include <cstdint>
#include <cstring>
#include <deque>
#include <stdexcept>
#include <utility>
#include <vector>

#include "supermag/types.hpp"

namespace supermag {

inline constexpr std::size_t kFramePayload = kReadingLen * 4;          // 192
inline constexpr std::size_t kFrameSize = 2 + 2 + kFramePayload + 2;   // 198
inline constexpr std::uint8_t kSync0 = 0xAA;
inline constexpr std::uint8_t kSync1 = 0x55;

inline std::uint16_t crc16_ccitt(const std::uint8_t* data, std::size_t len, std::uint16_t crc = 0xFFFF) {
    for (std::size_t i = 0; i < len; ++i) {
        crc ^= static_cast<std::uint16_t>(data[i]) << 8;
        for (int b = 0; b < 8; ++b)
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021) : static_cast<std::uint16_t>(crc << 1);
    }
    return crc;
}

inline std::vector<std::uint8_t> encode_frame(const MagReading& reading, std::uint16_t seq) {
    if (reading.unit_state != UnitState::raw)
        throw std::invalid_argument("encode_frame: wire frames carry raw readings");
    std::vector<std::uint8_t> frame(kFrameSize);
    frame[0] = kSync0;
    frame[1] = kSync1;
    frame[2] = static_cast<std::uint8_t>(seq & 0xFF);
    frame[3] = static_cast<std::uint8_t>(seq >> 8);
    std::memcpy(frame.data() + 4, reading.values.data(), kFramePayload);
    const std::uint16_t crc = crc16_ccitt(frame.data() + 2, 2 + kFramePayload);
    frame[4 + kFramePayload] = static_cast<std::uint8_t>(crc & 0xFF);
    frame[5 + kFramePayload] = static_cast<std::uint8_t>(crc >> 8);
    return frame;
}

struct StreamDiagnostics {
    std::uint64_t frames_decoded = 0;
    std::uint64_t crc_errors = 0;
    std::uint64_t bytes_skipped = 0;
};

class StreamDecoder {
public:
    void feed(const std::uint8_t* data, std::size_t n) {
        buf_.insert(buf_.end(), data, data + n);
        scan();
    }

    void feed(const std::vector<std::uint8_t>& data) { feed(data.data(), data.size()); }

    // Pops the next decoded frame, oldest first.
    bool next(std::uint16_t& seq, MagReading& out) {
        if (decoded_.empty()) return false;
        seq = decoded_.front().first;
        out = decoded_.front().second;
        decoded_.pop_front();
        return true;
    }

    const StreamDiagnostics& stats() const { return stats_; }
    std::size_t pending_bytes() const { return buf_.size() - head_; }

private:
    void scan() {
        while (true) {
            // find the next sync pair at or after head_
            std::size_t p = head_;
            while (p + 1 < buf_.size() && !(buf_[p] == kSync0 && buf_[p + 1] == kSync1)) ++p;
            if (p + 1 >= buf_.size()) {
                // no sync pair; keep a trailing 0xAA in case its partner is next
                std::size_t keep = (!buf_.empty() && buf_.back() == kSync0) ? buf_.size() - 1 : buf_.size();
                if (keep > head_) {
                    stats_.bytes_skipped += keep - head_;
                    head_ = keep;
                }
                break;
            }
            if (buf_.size() - p < kFrameSize) {
                // sync found but the frame is incomplete; skip the garbage
                // before it and wait for more bytes
                stats_.bytes_skipped += p - head_;
                head_ = p;
                break;
            }
            const std::uint8_t* f = buf_.data() + p;
            const std::uint16_t expect = static_cast<std::uint16_t>(f[4 + kFramePayload]) |
                                         static_cast<std::uint16_t>(f[5 + kFramePayload]) << 8;
            if (crc16_ccitt(f + 2, 2 + kFramePayload) == expect) {
                stats_.bytes_skipped += p - head_;
                const std::uint16_t seq = static_cast<std::uint16_t>(f[2]) | static_cast<std::uint16_t>(f[3]) << 8;
                MagReading r;
                r.unit_state = UnitState::raw;
                std::memcpy(r.values.data(), f + 4, kFramePayload);
                decoded_.emplace_back(seq, r);
                ++stats_.frames_decoded;
                head_ = p + kFrameSize;
            } else {
                // bad CRC: drop the frame candidate, resume scanning one byte
                // past its sync so an overlapping real frame is still found
                ++stats_.crc_errors;
                stats_.bytes_skipped += p + 1 - head_;
                head_ = p + 1;
            }
            compact();
        }
        compact();
    }

    void compact() {
        if (head_ > 65536 && head_ > buf_.size() / 2) {
            buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(head_));
            head_ = 0;
        }
    }

    std::vector<std::uint8_t> buf_;
    std::size_t head_ = 0;
    std::deque<std::pair<std::uint16_t, MagReading>> decoded_;
    StreamDiagnostics stats_;
};

// Decode a complete byte buffer in one go.
inline std::pair<std::vector<std::pair<std::uint16_t, MagReading>>, StreamDiagnostics> decode_stream(
    const std::vector<std::uint8_t>& bytes) {
    StreamDecoder dec;
    dec.feed(bytes);
    std::vector<std::pair<std::uint16_t, MagReading>> out;
    std::uint16_t seq;
    MagReading r;
    while (dec.next(seq, r)) out.emplace_back(seq, r);
    return {std::move(out), dec.stats()};
}

}  // namespace supermag
