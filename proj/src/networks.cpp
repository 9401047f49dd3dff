#include "sucode/networks.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "sucode/errors.hpp"

namespace sucode {

namespace F = torch::nn::functional;

namespace {

thread_local CostScope* g_scope = nullptr;

void record(std::int64_t n) {
  if (g_scope) g_scope->add(n);
}

torch::Tensor swish(const torch::Tensor& x) { return x * torch::sigmoid(x); }

// Keeps at least two channels per group so the norm never degenerates to a
// per-channel instance norm on small toy widths.
int64_t group_count(int64_t channels) {
  for (int64_t g = std::min<int64_t>(32, std::max<int64_t>(1, channels / 2)); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

torch::nn::GroupNorm group_norm(int64_t channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(channels), channels).eps(1e-6));
}

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t groups = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).groups(groups));
}

torch::Tensor leaky(const torch::Tensor& x, double slope = 0.2) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(slope));
}

// Channel-split gating: first half times second half.
torch::Tensor simple_gate(const torch::Tensor& x) {
  auto halves = x.chunk(2, 1);
  return halves[0] * halves[1];
}

void check_backbone(const BackboneOptions& o) {
  if (o.channel_mult.empty()) throw ConfigInvalid("channel_mult");
  if (o.base_channels < 1) throw ConfigInvalid("base_channels");
}

}  // namespace

CostScope::CostScope() : previous_(g_scope) { g_scope = this; }
CostScope::~CostScope() {
  if (previous_) previous_->add(mult_adds_);
  g_scope = previous_;
}
CostScope* CostScope::active() { return g_scope; }

torch::Tensor conv_forward(torch::nn::Conv2d& c, const torch::Tensor& x) {
  auto y = c->forward(x);
  if (g_scope) {
    const auto& o = c->options;
    const auto k = (*o.kernel_size())[0] * (*o.kernel_size())[1];
    g_scope->add(y.numel() * (o.in_channels() / o.groups()) * k);
  }
  return y;
}

torch::Tensor linear_forward(torch::nn::Linear& fc, const torch::Tensor& x) {
  auto y = fc->forward(x);
  record(y.numel() * fc->options.in_features());
  return y;
}

BackboneOptions BackboneOptions::encoder(const RunConfig& cfg) {
  BackboneOptions o;
  o.in_channels = 3;
  o.out_channels = cfg.embed_dim;
  o.base_channels = cfg.base_channels;
  o.channel_mult = cfg.channel_mult;
  o.res_blocks = cfg.res_blocks;
  return o;
}

BackboneOptions BackboneOptions::decoder(const RunConfig& cfg) {
  BackboneOptions o = encoder(cfg);
  o.in_channels = cfg.embed_dim;
  o.out_channels = 3;
  return o;
}

// ---------------------------------------------------------------------------

LayerNorm2dImpl::LayerNorm2dImpl(int64_t channels) {
  weight = register_parameter("weight", torch::ones({1, channels, 1, 1}));
  bias = register_parameter("bias", torch::zeros({1, channels, 1, 1}));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
  auto mu = x.mean(1, true);
  auto var = (x - mu).pow(2).mean(1, true);
  return (x - mu) / torch::sqrt(var + 1e-6) * weight + bias;
}

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out) {
  norm1 = register_module("norm1", group_norm(in));
  conv1 = register_module("conv1", conv(in, out, 3));
  norm2 = register_module("norm2", group_norm(out));
  conv2 = register_module("conv2", conv(out, out, 3));
  if (in != out) skip = register_module("skip", conv(in, out, 1));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv_forward(conv1, swish(norm1(x)));
  h = conv_forward(conv2, swish(norm2(h)));
  return (skip ? conv_forward(skip, x) : x) + h;
}

AttnBlockImpl::AttnBlockImpl(int64_t c) {
  norm = register_module("norm", group_norm(c));
  q = register_module("q", conv(c, c, 1));
  k = register_module("k", conv(c, c, 1));
  v = register_module("v", conv(c, c, 1));
  proj = register_module("proj", conv(c, c, 1));
}

torch::Tensor AttnBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto n = norm(x);
  auto qq = conv_forward(q, n).reshape({b, c, h * w}).transpose(1, 2);
  auto kk = conv_forward(k, n).reshape({b, c, h * w});
  auto vv = conv_forward(v, n).reshape({b, c, h * w});
  auto attn = torch::softmax(torch::bmm(qq, kk) / std::sqrt(static_cast<double>(c)), -1);
  auto out = torch::bmm(vv, attn.transpose(1, 2)).reshape({b, c, h, w});
  record(2 * b * h * w * h * w * c);
  return x + conv_forward(proj, out);
}

// ---------------------------------------------------------------------------

GcamImpl::GcamImpl(int64_t c) : channels(c) {
  norm = register_module("norm", LayerNorm2d(c));
  expand = register_module("expand", conv(c, 2 * c, 1));
  depthwise = register_module("depthwise", conv(2 * c, 2 * c, 3, 1, 2 * c));
  attn = register_module("attn", conv(c, c, 1));
  mlp_in = register_module("mlp_in", conv(c, 2 * c, 1));
  proj = register_module("proj", conv(c, c, 1));
}

torch::Tensor GcamImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels)
    throw ShapeError("GCAM expects " + std::to_string(channels) + " channels");
  auto y = simple_gate(conv_forward(depthwise, conv_forward(expand, norm(x))));
  y = y * torch::sigmoid(conv_forward(attn, y.mean({2, 3}, true)));
  y = simple_gate(conv_forward(mlp_in, y));
  return x + conv_forward(proj, y);
}

void GcamImpl::zero_inner_projection() {
  torch::NoGradGuard ng;
  proj->weight.zero_();
  proj->bias.zero_();
}

// ---------------------------------------------------------------------------

SpectralPair spectral_decompose(const torch::Tensor& f) {
  if (f.dim() < 2) throw ShapeError("spectral input needs two spatial axes");
  auto spec = torch::fft::rfft2(f, c10::nullopt, {-2, -1});
  auto phase = torch::angle(spec);
  phase = torch::where(phase <= -std::numbers::pi, phase + 2.0 * std::numbers::pi, phase);
  return {torch::abs(spec), phase};
}

torch::Tensor spectral_reconstruct(const SpectralPair& s, int64_t height, int64_t width) {
  if (s.magnitude.sizes() != s.phase.sizes()) throw ShapeError("magnitude and phase differ in shape");
  if (s.magnitude.dim() < 2 || s.magnitude.size(-2) != height || s.magnitude.size(-1) != width / 2 + 1)
    throw ShapeError("spectrum does not match target size " + std::to_string(height) + "x" +
                     std::to_string(width));
  // Mapped magnitudes may go negative; polar()'s backward assumes they do not.
  auto spec = torch::complex(s.magnitude * torch::cos(s.phase), s.magnitude * torch::sin(s.phase));
  return torch::fft::irfft2(spec, std::vector<int64_t>{height, width}, {-2, -1});
}

FaffImpl::FaffImpl(int64_t c) : channels(c) {
  fuse = register_module("fuse", conv(2 * c, c, 3));
  norm = register_module("norm", LayerNorm2d(c));
  mapper1 = register_module("mapper1", conv(c, c, 1));
  mapper2 = register_module("mapper2", conv(c, c, 1));
  gamma = register_parameter("gamma", torch::zeros({1, c, 1, 1}));
  scale = register_module("scale", conv(c, c, 3));
  shift = register_module("shift", conv(c, c, 3));
  torch::NoGradGuard ng;
  // Start as a pass-through of the enhancement stream: scale 1, shift 0.
  scale->weight.zero_();
  scale->bias.fill_(1.0);
  shift->weight.zero_();
  shift->bias.zero_();
}

FaffTrace FaffImpl::trace(const torch::Tensor& f_r, const torch::Tensor& f_e) {
  if (f_r.sizes() != f_e.sizes()) throw ShapeError("FAFF inputs differ in shape");
  if (f_r.dim() != 4 || f_r.size(1) != channels)
    throw ShapeError("FAFF expects " + std::to_string(channels) + " channels");
  FaffTrace t;
  t.f_in = norm(conv_forward(fuse, torch::cat({f_r, f_e}, 1)));
  auto spec = spectral_decompose(t.f_in);
  t.phase_decomposed = spec.phase;
  t.magnitude_mapped =
      identity_mapper ? spec.magnitude : conv_forward(mapper2, leaky(conv_forward(mapper1, spec.magnitude), 0.1));
  t.phase_reconstructed = spec.phase;
  t.f_freq = spectral_reconstruct({t.magnitude_mapped, t.phase_reconstructed}, t.f_in.size(2), t.f_in.size(3));
  t.f_fus = t.f_in + gamma * (t.f_in * t.f_freq);
  t.out = leaky(conv_forward(scale, t.f_fus)) * f_e + leaky(conv_forward(shift, t.f_fus));
  return t;
}

torch::Tensor FaffImpl::forward(const torch::Tensor& f_r, const torch::Tensor& f_e) { return trace(f_r, f_e).out; }

// ---------------------------------------------------------------------------

EncoderImpl::EncoderImpl(const BackboneOptions& o) : levels_(static_cast<int>(o.channel_mult.size())) {
  check_backbone(o);
  const int64_t ch = o.base_channels;
  conv_in = register_module("conv_in", conv(o.in_channels, ch * o.channel_mult[0], 3));
  down = register_module("down", torch::nn::ModuleList());
  int64_t in = ch * o.channel_mult[0];
  for (int lvl = 0; lvl < levels_; ++lvl) {
    const int64_t out = ch * o.channel_mult[lvl];
    torch::nn::ModuleList level;
    for (int r = 0; r < o.res_blocks; ++r) {
      level->push_back(ResBlock(in, out));
      in = out;
    }
    level->push_back(conv(out, out, 3, 2));
    down->push_back(level);
  }
  mid1 = register_module("mid1", ResBlock(in, in));
  mid_attn = register_module("mid_attn", AttnBlock(in));
  mid2 = register_module("mid2", ResBlock(in, in));
  norm_out = register_module("norm_out", group_norm(in));
  conv_out = register_module("conv_out", conv(in, o.out_channels, 3));
  semantic_proj = register_module("semantic_proj", conv(o.out_channels, kSemanticWidth, 1));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  const auto f = downsample_factor();
  if (x.dim() != 4 || x.size(2) % f != 0 || x.size(3) % f != 0)
    throw ShapeError("encoder input must be [B, 3, H, W] with H, W divisible by " + std::to_string(f));
  auto h = conv_forward(conv_in, x);
  for (const auto& lvl : *down) {
    auto& level = *lvl->as<torch::nn::ModuleListImpl>();
    for (std::size_t i = 0; i + 1 < level.size(); ++i) h = level[i]->as<ResBlockImpl>()->forward(h);
    auto ds = torch::nn::Conv2d(level.ptr<torch::nn::Conv2dImpl>(level.size() - 1));
    h = conv_forward(ds, h);
  }
  h = mid2(mid_attn(mid1(h)));
  return conv_forward(conv_out, swish(norm_out(h)));
}

// ---------------------------------------------------------------------------

DecoderImpl::DecoderImpl(const BackboneOptions& o, DecoderKind kind, bool faff_all_scales)
    : levels_(static_cast<int>(o.channel_mult.size())), kind_(kind) {
  check_backbone(o);
  const int64_t ch = o.base_channels;
  int64_t in = ch * o.channel_mult.back();
  conv_in = register_module("conv_in", conv(o.in_channels, in, 3));
  mid1 = register_module("mid1", ResBlock(in, in));
  mid_attn = register_module("mid_attn", AttnBlock(in));
  mid2 = register_module("mid2", ResBlock(in, in));
  up = register_module("up", torch::nn::ModuleList());
  upsample = register_module("upsample", torch::nn::ModuleList());
  gcams = register_module("gcam", torch::nn::ModuleList());
  faffs = register_module("faff", torch::nn::ModuleList());
  faff_slot_.assign(levels_, -1);
  for (int s = 0; s < levels_; ++s) {
    const int64_t out = ch * o.channel_mult[levels_ - 1 - s];
    torch::nn::ModuleList level;
    for (int r = 0; r < o.res_blocks; ++r) {
      level->push_back(ResBlock(in, out));
      in = out;
    }
    up->push_back(level);
    upsample->push_back(conv(out, out, 3));
    if (kind != DecoderKind::Plain) gcams->push_back(Gcam(out));
    // Without the all-scales switch only the finest scale is fused.
    if (kind == DecoderKind::Fused && (faff_all_scales || s == levels_ - 1)) {
      faff_slot_[s] = static_cast<int>(faffs->size());
      faffs->push_back(Faff(out));
    }
  }
  norm_out = register_module("norm_out", group_norm(in));
  conv_out = register_module("conv_out", conv(in, o.out_channels, 3));
}

bool DecoderImpl::has_faff(int scale) const {
  return scale >= 0 && scale < levels_ && faff_slot_[scale] >= 0;
}

Gcam DecoderImpl::gcam(int i) const { return Gcam(gcams->ptr<GcamImpl>(i)); }

Faff DecoderImpl::faff(int scale) const {
  if (!has_faff(scale)) return Faff(nullptr);
  return Faff(faffs->ptr<FaffImpl>(faff_slot_[scale]));
}

DecodeOutput DecoderImpl::run(const torch::Tensor& z, const std::vector<torch::Tensor>* raw_taps) {
  if (z.dim() != 4) throw ShapeError("decoder input must be [B, n_z, h, w]");
  DecodeOutput out;
  auto h = mid2(mid_attn(mid1(conv_forward(conv_in, z))));
  for (int s = 0; s < levels_; ++s) {
    auto& level = *up[s]->as<torch::nn::ModuleListImpl>();
    for (const auto& blk : level) h = blk->as<ResBlockImpl>()->forward(h);
    if (kind_ != DecoderKind::Plain) h = gcams[s]->as<GcamImpl>()->forward(h);
    out.taps.push_back(h);
    if (raw_taps && has_faff(s) && !bypass_faff) {
      const auto& fr = (*raw_taps)[s];
      if (fr.sizes() != h.sizes()) throw ShapeError("tap " + std::to_string(s) + " does not match decoder scale");
      h = faffs[faff_slot_[s]]->as<FaffImpl>()->forward(fr, h);
    }
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    auto c = torch::nn::Conv2d(upsample->ptr<torch::nn::Conv2dImpl>(s));
    h = conv_forward(c, h);
  }
  out.image = conv_forward(conv_out, swish(norm_out(h)));
  return out;
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) { return run(z, nullptr).image; }

DecodeOutput DecoderImpl::forward_with_taps(const torch::Tensor& z) { return run(z, nullptr); }

torch::Tensor DecoderImpl::forward_fused(const torch::Tensor& z, const std::vector<torch::Tensor>& raw_taps) {
  if (kind_ != DecoderKind::Fused) throw ShapeError("decoder has no fusion blocks");
  if (static_cast<int>(raw_taps.size()) != levels_)
    throw ShapeError("expected " + std::to_string(levels_) + " taps, got " + std::to_string(raw_taps.size()));
  return run(z, &raw_taps).image;
}

// ---------------------------------------------------------------------------

WeightPredictorImpl::WeightPredictorImpl(int64_t embed_dim, int64_t classes, int64_t window, int64_t heads)
    : dim_(embed_dim), classes_(classes), window_(std::max<int64_t>(1, window)),
      heads_(std::gcd(embed_dim, std::max<int64_t>(1, heads))) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim_})));
  qkv = register_module("qkv", torch::nn::Linear(dim_, 3 * dim_));
  proj = register_module("proj", torch::nn::Linear(dim_, dim_));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim_})));
  fc1 = register_module("fc1", torch::nn::Linear(dim_, 4 * dim_));
  fc2 = register_module("fc2", torch::nn::Linear(4 * dim_, dim_));
  const auto span = 2 * window_ - 1;
  rel_bias = register_parameter("rel_bias", torch::randn({span * span, heads_}) * 0.02);
  // Index of the (dy, dx) offset between every pair of positions in a window.
  auto coords = torch::stack(torch::meshgrid({torch::arange(window_), torch::arange(window_)}, "ij")).flatten(1);
  auto rel = coords.unsqueeze(2) - coords.unsqueeze(1);
  rel_index = ((rel[0] + window_ - 1) * span + (rel[1] + window_ - 1)).reshape({-1});
  out = register_module("out", conv(dim_, classes_, 1));
}

torch::Tensor WeightPredictorImpl::logits(const torch::Tensor& z) {
  if (z.dim() != 4 || z.size(1) != dim_) throw ShapeError("weight predictor expects " + std::to_string(dim_) + " channels");
  const auto b = z.size(0), h = z.size(2), w = z.size(3), win = window_;
  const auto ph = (win - h % win) % win, pw = (win - w % win) % win;
  auto x = z.permute({0, 2, 3, 1});
  if (ph || pw) x = F::pad(x, F::PadFuncOptions({0, 0, 0, pw, 0, ph}));
  const auto hh = h + ph, ww = w + pw, n = win * win, hd = dim_ / heads_;
  // [B*nW, n, D] windows
  auto windows = x.reshape({b, hh / win, win, ww / win, win, dim_})
                     .permute({0, 1, 3, 2, 4, 5})
                     .reshape({-1, n, dim_});
  auto t = norm1(windows);
  auto qkv_t = linear_forward(qkv, t).reshape({-1, n, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
  auto q = qkv_t[0] / std::sqrt(static_cast<double>(hd)), k = qkv_t[1], v = qkv_t[2];
  auto bias = rel_bias.index_select(0, rel_index).reshape({n, n, heads_}).permute({2, 0, 1});
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) + bias, -1);
  auto y = torch::matmul(attn, v).transpose(1, 2).reshape({-1, n, dim_});
  record(2 * windows.size(0) * n * n * dim_);
  windows = windows + linear_forward(proj, y);
  auto m = F::gelu(linear_forward(fc1, norm2(windows)));
  windows = windows + linear_forward(fc2, m);
  x = windows.reshape({b, hh / win, ww / win, win, win, dim_})
          .permute({0, 1, 3, 2, 4, 5})
          .reshape({b, hh, ww, dim_});
  x = x.narrow(1, 0, h).narrow(2, 0, w).permute({0, 3, 1, 2});
  return conv_forward(out, x);
}

torch::Tensor WeightPredictorImpl::normalize(const torch::Tensor& logits) { return torch::softmax(logits, 1); }

torch::Tensor WeightPredictorImpl::forward(const torch::Tensor& z) { return normalize(logits(z)); }

// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(int64_t base) {
  convs = register_module("convs", torch::nn::ModuleList());
  int64_t in = 3;
  for (int i = 0; i < 4; ++i) {
    const int64_t out = base << i;
    convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    in = out;
  }
  logit = register_module("logit", conv(in, 1, 3));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (std::size_t i = 0; i < convs->size(); ++i) {
    auto c = torch::nn::Conv2d(convs->ptr<torch::nn::Conv2dImpl>(i));
    h = leaky(conv_forward(c, h));
  }
  return conv_forward(logit, h);
}

int64_t discriminator_grid(int64_t side) {
  for (int i = 0; i < 4; ++i) side = (side + 2 - 4) / 2 + 1;
  return side;
}

}  // namespace sucode
