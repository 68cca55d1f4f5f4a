#pragma once

// Feature disentanglement network: per-domain encoders and decoders, the
// structure/texture swap generator, the swap discriminator, and their losses.

#include <array>

#include "udagcn/autodiff.hpp"
#include "udagcn/nn.hpp"

namespace udagcn {

/// Architecture of the disentanglement network. Structure grids sit at a
/// quarter of the input resolution.
struct FdnConfig {
  std::size_t channels = 1;
  std::size_t image_size = 32;
  std::array<std::size_t, 3> widths{64, 32, 32};
  std::size_t d_tex = 32;
  std::size_t str_channels = 1;
  std::array<std::size_t, 3> disc_widths{32, 32, 64};

  std::size_t grid() const { return image_size / 4; }
  Shape image_shape() const { return {channels, image_size, image_size}; }
  Shape str_shape() const { return {str_channels, grid(), grid()}; }
  std::size_t str_size() const { return str_channels * grid() * grid(); }
  /// Node feature width when a code is flattened as [z_tex, z_str].
  std::size_t code_size() const { return d_tex + str_size(); }

  /// Throws ConfigError on unusable values.
  void validate() const;

  /// 256×256 inputs, 256-d texture, 64×64 structure grid.
  static FdnConfig reference_scale();
};

/// Texture and structure codes of a batch, on a tape.
struct LatentBatch {
  Var tex;  // N × d_tex
  Var str;  // N × str_channels × grid × grid
};

/// Disentangled code of one image.
struct LatentCode {
  Tensor tex;  // d_tex
  Tensor str;  // str_channels × grid × grid
};

/// Three conv blocks (max pooling after the first two), a convolutional
/// structure head and a pooled linear texture head.
struct Encoder {
  Conv3x3 block1, block2, block3, str_head;
  Linear tex_head;

  Encoder() = default;
  Encoder(const std::string& name, const FdnConfig& cfg, Rng& rng);
  ParamRefs parameters();
};

/// Mirror of the encoder. Texture is projected, tiled over the structure
/// grid and concatenated with it; the output passes through a sigmoid.
struct Decoder {
  Linear tex_proj;
  Conv3x3 block1, block2, out;

  Decoder() = default;
  Decoder(const std::string& name, const FdnConfig& cfg, Rng& rng);
  ParamRefs parameters();
};

/// Image discriminator: three conv blocks, global average pool, linear, sigmoid.
struct SwapDiscriminator {
  Conv3x3 block1, block2, block3;
  Linear head;

  SwapDiscriminator() = default;
  SwapDiscriminator(const std::string& name, const FdnConfig& cfg, Rng& rng);
  ParamRefs parameters();
  /// Pre-sigmoid scores, length N.
  Var logits(Tape& tape, const Var& images);
  /// Probability that each image is a real target-domain image, length N.
  Var operator()(Tape& tape, const Var& images) { return sigmoid(logits(tape, images)); }
};

enum class Side { Source, Target };

struct FdnParams {
  FdnConfig config;
  Encoder enc_s, enc_t;
  Decoder dec_s, dec_t;
  SwapDiscriminator disc;

  FdnParams() = default;
  FdnParams(const FdnConfig& cfg, Rng& rng);

  Encoder& encoder(Side s) { return s == Side::Source ? enc_s : enc_t; }
  Decoder& decoder(Side s) { return s == Side::Source ? dec_s : dec_t; }

  /// Encoders and decoders of both domains.
  ParamRefs generator_parameters();
  ParamRefs disc_parameters() { return disc.parameters(); }
  ParamRefs parameters();
};

/// Accepts C×H×W or N×C×H×W images and returns codes for the batch.
LatentBatch encode(Tape& tape, Encoder& enc, const FdnConfig& cfg, const Var& images);
/// Value-only encoding of a single image.
LatentCode encode(Encoder& enc, const FdnConfig& cfg, const Tensor& image);

Var decode(Tape& tape, Decoder& dec, const FdnConfig& cfg, const LatentBatch& code);
Tensor decode(Decoder& dec, const FdnConfig& cfg, const LatentCode& code);

/// G_T applied to source structure combined with target texture.
Var swap_generate(Tape& tape, FdnParams& fdn, const Var& str_src, const Var& tex_tgt);

enum class RecNorm { L1, L2 };

/// Mean per-pixel |r − x| (L1) or (r − x)² (L2).
Var reconstruction_error(const Var& recon, const Var& input, RecNorm norm);

/// Source autoencoder error plus target autoencoder error.
Var loss_rec(Tape& tape, FdnParams& fdn, const Var& batch_s, const Var& batch_t, RecNorm norm);

/// Discriminator side of the swap game: real target → 1, swapped → 0.
Var disc_loss_swap(Tape& tape, SwapDiscriminator& disc, const Var& real_t, const Var& fake);
/// Non-saturating generator side: swapped images → 1.
Var gen_loss_swap(Tape& tape, SwapDiscriminator& disc, const Var& fake);

/// Mean over rows of 1 − cos(flat z_i, flat z_ij); both N×...
Var loss_str(const Var& str_i, const Var& str_ij);

/// rec + λ1·swap + λ2·str. Negative weights throw ConfigError.
Var loss_disent(const Var& rec, const Var& swap, const Var& str, double lambda1, double lambda2);

}  // namespace udagcn
