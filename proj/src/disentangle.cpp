#include "udagcn/disentangle.hpp"

namespace udagcn {

void FdnConfig::validate() const {
  if (channels == 0) throw ConfigError("model.channels must be positive");
  if (image_size < 4 || image_size % 4)
    throw ConfigError("model.image_size must be a positive multiple of 4");
  for (auto w : widths)
    if (w == 0) throw ConfigError("model.widths entries must be positive");
  for (auto w : disc_widths)
    if (w == 0) throw ConfigError("model.disc_widths entries must be positive");
  if (d_tex == 0) throw ConfigError("model.d_tex must be positive");
  if (str_channels == 0) throw ConfigError("model.str_channels must be positive");
}

FdnConfig FdnConfig::reference_scale() {
  FdnConfig c;
  c.image_size = 256;
  c.d_tex = 256;
  return c;
}

Encoder::Encoder(const std::string& name, const FdnConfig& cfg, Rng& rng)
    : block1(name + ".block1", cfg.channels, cfg.widths[0], rng),
      block2(name + ".block2", cfg.widths[0], cfg.widths[1], rng),
      block3(name + ".block3", cfg.widths[1], cfg.widths[2], rng),
      str_head(name + ".str_head", cfg.widths[2], cfg.str_channels, rng),
      tex_head(name + ".tex_head", cfg.widths[2], cfg.d_tex, rng) {}

ParamRefs Encoder::parameters() {
  return join({block1.parameters(), block2.parameters(), block3.parameters(),
               str_head.parameters(), tex_head.parameters()});
}

Decoder::Decoder(const std::string& name, const FdnConfig& cfg, Rng& rng)
    : tex_proj(name + ".tex_proj", cfg.d_tex, cfg.widths[2], rng),
      block1(name + ".block1", cfg.str_channels + cfg.widths[2], cfg.widths[1], rng),
      block2(name + ".block2", cfg.widths[1], cfg.widths[0], rng),
      out(name + ".out", cfg.widths[0], cfg.channels, rng) {}

ParamRefs Decoder::parameters() {
  return join({tex_proj.parameters(), block1.parameters(), block2.parameters(), out.parameters()});
}

SwapDiscriminator::SwapDiscriminator(const std::string& name, const FdnConfig& cfg, Rng& rng)
    : block1(name + ".block1", cfg.channels, cfg.disc_widths[0], rng),
      block2(name + ".block2", cfg.disc_widths[0], cfg.disc_widths[1], rng),
      block3(name + ".block3", cfg.disc_widths[1], cfg.disc_widths[2], rng),
      head(name + ".head", cfg.disc_widths[2], 1, rng) {}

ParamRefs SwapDiscriminator::parameters() {
  return join({block1.parameters(), block2.parameters(), block3.parameters(), head.parameters()});
}

Var SwapDiscriminator::logits(Tape& tape, const Var& images) {
  Var h = maxpool2d(relu(block1(tape, images)));
  h = maxpool2d(relu(block2(tape, h)));
  h = relu(block3(tape, h));
  return reshape(head(tape, global_avg_pool(h)), Shape{images.dim(0)});
}

FdnParams::FdnParams(const FdnConfig& cfg, Rng& rng)
    : config(cfg),
      enc_s("enc_s", cfg, rng),
      enc_t("enc_t", cfg, rng),
      dec_s("dec_s", cfg, rng),
      dec_t("dec_t", cfg, rng),
      disc("disc_fd", cfg, rng) {
  cfg.validate();
}

ParamRefs FdnParams::generator_parameters() {
  return join({enc_s.parameters(), enc_t.parameters(), dec_s.parameters(), dec_t.parameters()});
}

ParamRefs FdnParams::parameters() { return join({generator_parameters(), disc_parameters()}); }

namespace {

Var as_batch(const Var& images, const FdnConfig& cfg) {
  const Shape want = cfg.image_shape();
  const Shape& s = images.shape();
  if (s == want) {
    Shape b{1};
    b.insert(b.end(), want.begin(), want.end());
    return reshape(images, b);
  }
  if (s.size() == 4 && std::equal(want.begin(), want.end(), s.begin() + 1)) return images;
  throw DimensionError("expected images of shape " + shape_str(want) + " (optionally batched), got " +
                       shape_str(s));
}

}  // namespace

LatentBatch encode(Tape& tape, Encoder& enc, const FdnConfig& cfg, const Var& images) {
  Var x = as_batch(images, cfg);
  Var h = maxpool2d(relu(enc.block1(tape, x)));
  h = maxpool2d(relu(enc.block2(tape, h)));
  h = relu(enc.block3(tape, h));
  return LatentBatch{enc.tex_head(tape, global_avg_pool(h)), enc.str_head(tape, h)};
}

LatentCode encode(Encoder& enc, const FdnConfig& cfg, const Tensor& image) {
  Tape tape;
  LatentBatch z = encode(tape, enc, cfg, tape.constant(image));
  return LatentCode{z.tex.value().reshaped({cfg.d_tex}), z.str.value().reshaped(cfg.str_shape())};
}

Var decode(Tape& tape, Decoder& dec, const FdnConfig& cfg, const LatentBatch& code) {
  const Shape& ss = code.str.shape();
  const Shape& ts = code.tex.shape();
  const Shape want = cfg.str_shape();
  if (ss.size() != 4 || !std::equal(want.begin(), want.end(), ss.begin() + 1))
    throw DimensionError("decode: structure code must be N×" + shape_str(want) + ", got " +
                         shape_str(ss));
  if (ts.size() != 2 || ts[1] != cfg.d_tex || ts[0] != ss[0])
    throw DimensionError("decode: texture code must be " + std::to_string(ss[0]) + "×" +
                         std::to_string(cfg.d_tex) + ", got " + shape_str(ts));
  Var tex = tile_spatial(dec.tex_proj(tape, code.tex), cfg.grid(), cfg.grid());
  const Var parts[] = {code.str, tex};
  Var h = upsample2x(relu(dec.block1(tape, concat(parts, 1))));
  h = upsample2x(relu(dec.block2(tape, h)));
  return sigmoid(dec.out(tape, h));
}

Tensor decode(Decoder& dec, const FdnConfig& cfg, const LatentCode& code) {
  Tape tape;
  LatentBatch z{tape.constant(code.tex.reshaped({1, cfg.d_tex})),
                tape.constant(code.str.reshaped({1, cfg.str_channels, cfg.grid(), cfg.grid()}))};
  return decode(tape, dec, cfg, z).value().reshaped(cfg.image_shape());
}

Var swap_generate(Tape& tape, FdnParams& fdn, const Var& str_src, const Var& tex_tgt) {
  return decode(tape, fdn.dec_t, fdn.config, LatentBatch{tex_tgt, str_src});
}

Var reconstruction_error(const Var& recon, const Var& input, RecNorm norm) {
  if (input.size() == 0) throw ContractError("reconstruction of an empty batch");
  Var diff = sub(recon, input);
  return mean(norm == RecNorm::L1 ? abs(diff) : square(diff));
}

Var loss_rec(Tape& tape, FdnParams& fdn, const Var& batch_s, const Var& batch_t, RecNorm norm) {
  if (batch_s.size() == 0 || batch_t.size() == 0) throw ContractError("loss_rec on an empty batch");
  const FdnConfig& cfg = fdn.config;
  Var xs = as_batch(batch_s, cfg);
  Var xt = as_batch(batch_t, cfg);
  Var rs = decode(tape, fdn.dec_s, cfg, encode(tape, fdn.enc_s, cfg, xs));
  Var rt = decode(tape, fdn.dec_t, cfg, encode(tape, fdn.enc_t, cfg, xt));
  return add(reconstruction_error(rs, xs, norm), reconstruction_error(rt, xt, norm));
}

// Printed form of the swap objective:
//   L_swap = E_{x_j~p_T}[log(1 − D_FD(x_j))] + E_{x_i~p_S, x_j~p_T}[log D_FD(G_T([z_i^str, z_j^tex]))]
// It is played here as the standard game: D_FD labels real target images 1
// and swapped images 0, the generator pushes swapped images toward 1. Losses
// are taken on logits so a saturated discriminator still gets a gradient.
Var disc_loss_swap(Tape& tape, SwapDiscriminator& disc, const Var& real_t, const Var& fake) {
  if (real_t.size() == 0 || fake.size() == 0) throw ContractError("disc_loss_swap on an empty batch");
  return add(binary_cross_entropy_logits(disc.logits(tape, real_t), 1.0),
             binary_cross_entropy_logits(disc.logits(tape, fake), 0.0));
}

Var gen_loss_swap(Tape& tape, SwapDiscriminator& disc, const Var& fake) {
  if (fake.size() == 0) throw ContractError("gen_loss_swap on an empty batch");
  return binary_cross_entropy_logits(disc.logits(tape, fake), 1.0);
}

Var loss_str(const Var& str_i, const Var& str_ij) {
  if (str_i.shape() != str_ij.shape())
    throw DimensionError("loss_str: structure grids differ: " + shape_str(str_i.shape()) + " vs " +
                         shape_str(str_ij.shape()));
  Var cos = cosine_rows(flatten_rows(str_i), flatten_rows(str_ij));
  return add_scalar(scale(mean(cos), -1.0), 1.0);
}

Var loss_disent(const Var& rec, const Var& swap, const Var& str, double lambda1, double lambda2) {
  if (lambda1 < 0.0) throw ConfigError("lambda1 must be nonnegative");
  if (lambda2 < 0.0) throw ConfigError("lambda2 must be nonnegative");
  return add(rec, add(scale(swap, lambda1), scale(str, lambda2)));
}

}  // namespace udagcn
