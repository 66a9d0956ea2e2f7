#include "wplus/stego.hpp"

#include <bit>
#include <random>
#include <unordered_map>

#include "binary.hpp"
#include "wplus/error.hpp"
#include "wplus/latent_io.hpp"

namespace wplus {
namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'D', 'H', '1'};
constexpr int kMagicBits = 32;
// a magic this close to the expected one is a damaged frame, not an absent one
constexpr int kDamagedMagicDistance = 6;

// First `count` entries of a key-seeded permutation of [0, n).
class PartialPermutation {
 public:
  PartialPermutation(std::uint64_t n, std::uint64_t key) : n_(n), rng_(key ^ 0x5344483153444831ULL) {}
  std::uint64_t next() {
    const std::uint64_t j = i_ + std::uniform_int_distribution<std::uint64_t>(0, n_ - i_ - 1)(rng_);
    const std::uint64_t vj = at(j);
    swapped_[j] = at(i_);
    ++i_;
    return vj;
  }

 private:
  std::uint64_t at(std::uint64_t k) const {
    auto it = swapped_.find(k);
    return it == swapped_.end() ? k : it->second;
  }
  std::uint64_t n_;
  std::uint64_t i_ = 0;
  std::mt19937_64 rng_;
  std::unordered_map<std::uint64_t, std::uint64_t> swapped_;
};

bool bit_of(std::span<const std::uint8_t> bytes, std::size_t i) { return (bytes[i / 8] >> (7 - i % 8)) & 1u; }

}  // namespace

long long payload_bits(int n_codes, int dim, Dtype dtype) {
  return 8LL * static_cast<long long>(kStegoHeaderBytes + wlat_body_size(n_codes, dim, dtype));
}

std::vector<std::uint8_t> frame_payload(const LatentCode& secret, Dtype dtype) {
  const auto body = encode_latent(secret, dtype, false);
  std::vector<std::uint8_t> out;
  detail::ByteWriter w(out);
  w.bytes(std::span<const std::uint8_t>(kMagic, 4));
  w.u32(static_cast<std::uint32_t>(body.size()));
  w.u32(detail::crc32_of(body));
  w.bytes(body);
  return out;
}

LatentCode unframe_payload(std::span<const std::uint8_t> frame) {
  if (frame.size() < kStegoHeaderBytes) throw FormatError("stego frame shorter than its header");
  if (!std::equal(kMagic, kMagic + 4, frame.begin())) throw FormatError("no stego frame (bad magic)");
  detail::ByteReader r(frame.subspan(4));
  const std::uint32_t len = r.u32();
  const std::uint32_t crc = r.u32();
  if (len != frame.size() - kStegoHeaderBytes)
    throw CorruptionError("stego frame length field disagrees with the payload");
  const auto body = frame.subspan(kStegoHeaderBytes);
  if (detail::crc32_of(body) != crc) throw CorruptionError("stego payload CRC mismatch (wrong key or damaged image)");
  return decode_latent_body(body);
}

long long LsbPermutationCodec::capacity_bits(const Rgb8Image& carrier) const {
  return static_cast<long long>(carrier.pixels.size());
}

Rgb8Image LsbPermutationCodec::embed(const Rgb8Image& carrier, std::span<const std::uint8_t> frame,
                                     std::uint64_t key) const {
  const long long need = 8LL * static_cast<long long>(frame.size());
  const long long have = capacity_bits(carrier);
  if (frame.size() < 4 || !std::equal(kMagic, kMagic + 4, frame.begin()))
    throw ValidationError("embed expects a framed payload");
  if (need > have)
    throw CapacityError("payload needs " + std::to_string(need) + " bits, carrier offers " + std::to_string(have));
  Rgb8Image out = carrier;
  auto put = [&](std::uint64_t pos, bool b) { out.pixels[pos] = static_cast<std::uint8_t>((out.pixels[pos] & 0xFE) | b); };
  for (int i = 0; i < kMagicBits; ++i) put(i, bit_of(frame, i));
  PartialPermutation perm(have - kMagicBits, key);
  for (long long i = kMagicBits; i < need; ++i) put(kMagicBits + perm.next(), bit_of(frame, i));
  return out;
}

std::vector<std::uint8_t> LsbPermutationCodec::extract(const Rgb8Image& stego, std::uint64_t key) const {
  const long long have = capacity_bits(stego);
  if (have < 8LL * static_cast<long long>(kStegoHeaderBytes)) throw FormatError("image too small to hold a stego frame");
  std::uint32_t magic = 0;
  for (int i = 0; i < kMagicBits; ++i) magic = (magic << 1) | (stego.pixels[i] & 1u);
  const std::uint32_t expect = (std::uint32_t(kMagic[0]) << 24) | (std::uint32_t(kMagic[1]) << 16) |
                               (std::uint32_t(kMagic[2]) << 8) | std::uint32_t(kMagic[3]);
  const int distance = std::popcount(magic ^ expect);
  if (distance > kDamagedMagicDistance) throw FormatError("no stego frame in this image (bad magic)");
  if (distance > 0) throw CorruptionError("stego frame header is damaged");

  PartialPermutation perm(have - kMagicBits, key);
  std::vector<std::uint8_t> frame(kStegoHeaderBytes, 0);
  for (int i = 0; i < 4; ++i) frame[i] = kMagic[i];
  auto read_bits = [&](std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i) {
      const bool b = stego.pixels[kMagicBits + perm.next()] & 1u;
      frame[i / 8] |= static_cast<std::uint8_t>(b << (7 - i % 8));
    }
  };
  read_bits(kMagicBits, 8 * kStegoHeaderBytes);
  const std::uint32_t len = detail::ByteReader(std::span<const std::uint8_t>(frame).subspan(4, 4)).u32();
  if (8ULL * (kStegoHeaderBytes + static_cast<unsigned long long>(len)) > static_cast<unsigned long long>(have))
    throw CorruptionError("stego length field exceeds the image capacity (wrong key or damaged image)");
  frame.resize(kStegoHeaderBytes + len, 0);
  read_bits(8 * kStegoHeaderBytes, 8 * frame.size());
  return frame;
}

const StegoCodec& default_codec() {
  static const LsbPermutationCodec codec;
  return codec;
}

Rgb8Image hide(const LatentCode& secret, const Rgb8Image& carrier, std::uint64_t key, Dtype dtype,
               const StegoCodec& codec) {
  secret.validate();
  return codec.embed(carrier, frame_payload(secret, dtype), key);
}

ImageTensor hide(const LatentCode& secret, const ImageTensor& carrier, std::uint64_t key, Dtype dtype,
                 const StegoCodec& codec) {
  return from_rgb8(hide(secret, to_rgb8(carrier), key, dtype, codec));
}

LatentCode reveal(const Rgb8Image& stego, std::uint64_t key, const StegoCodec& codec) {
  return unframe_payload(codec.extract(stego, key));
}

LatentCode reveal(const ImageTensor& stego, std::uint64_t key, const StegoCodec& codec) {
  return reveal(to_rgb8(stego), key, codec);
}

}  // namespace wplus
