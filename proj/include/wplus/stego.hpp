#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wplus/image.hpp"
#include "wplus/latent.hpp"

namespace wplus {

/// Payload frame: "SDH1" | payload_length u32 | crc32(body) u32 | body, where body
/// is the WLAT header and values of the secret latent (no WLAT trailer).
inline constexpr std::size_t kStegoHeaderBytes = 12;

std::vector<std::uint8_t> frame_payload(const LatentCode& secret, Dtype dtype = Dtype::F16);
/// Throws FormatError on a bad magic, CorruptionError on length or CRC mismatch.
LatentCode unframe_payload(std::span<const std::uint8_t> frame);

/// Bits needed to hide an n_codes x dim latent.
long long payload_bits(int n_codes, int dim, Dtype dtype = Dtype::F16);

/// Embeds and extracts bytes in 8-bit RGB pixels.
class StegoCodec {
 public:
  virtual ~StegoCodec() = default;
  virtual std::string name() const = 0;
  virtual long long capacity_bits(const Rgb8Image& carrier) const = 0;
  /// Throws CapacityError when the frame does not fit.
  virtual Rgb8Image embed(const Rgb8Image& carrier, std::span<const std::uint8_t> frame, std::uint64_t key) const = 0;
  /// Returns the frame bytes; throws FormatError when no frame is present.
  virtual std::vector<std::uint8_t> extract(const Rgb8Image& stego, std::uint64_t key) const = 0;
};

/// One bit per channel value. The 32 magic bits occupy the first channel values in
/// order; everything after them goes to key-permuted positions.
class LsbPermutationCodec final : public StegoCodec {
 public:
  std::string name() const override { return "lsb-permutation"; }
  long long capacity_bits(const Rgb8Image& carrier) const override;
  Rgb8Image embed(const Rgb8Image& carrier, std::span<const std::uint8_t> frame, std::uint64_t key) const override;
  std::vector<std::uint8_t> extract(const Rgb8Image& stego, std::uint64_t key) const override;
};

const StegoCodec& default_codec();

/// Quantizes the carrier to 8 bits and hides the framed latent in it.
Rgb8Image hide(const LatentCode& secret, const Rgb8Image& carrier, std::uint64_t key, Dtype dtype = Dtype::F16,
               const StegoCodec& codec = default_codec());
ImageTensor hide(const LatentCode& secret, const ImageTensor& carrier, std::uint64_t key, Dtype dtype = Dtype::F16,
                 const StegoCodec& codec = default_codec());

LatentCode reveal(const Rgb8Image& stego, std::uint64_t key, const StegoCodec& codec = default_codec());
LatentCode reveal(const ImageTensor& stego, std::uint64_t key, const StegoCodec& codec = default_codec());

}  // namespace wplus
