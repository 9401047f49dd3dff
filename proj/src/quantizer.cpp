#include "sucode/quantizer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "sucode/errors.hpp"
#include "sucode/kernels.hpp"

namespace sucode {

QuantizerCounters& quantizer_counters() {
  static QuantizerCounters counters;
  return counters;
}

CodebookSet init_codebooks(const RunConfig& cfg, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const double bound = 1.0 / cfg.codebook_entries;
  auto books = torch::rand({cfg.class_count, cfg.codebook_entries, cfg.embed_dim}, gen,
                           torch::TensorOptions().dtype(torch::kFloat32));
  return CodebookSet{books * (2.0 * bound) - bound, false};
}

std::pair<std::int64_t, std::vector<float>> nearest_code(std::span<const float> feature,
                                                         std::span<const float> book, std::int64_t entries) {
  const auto dim = static_cast<std::int64_t>(feature.size());
  if (entries <= 0 || static_cast<std::int64_t>(book.size()) != entries * dim)
    throw ShapeError("book size does not match feature dimension");
  std::int64_t index = 0;
  kernels::serial::assign_codes(feature, {}, book, {1, entries, dim}, std::span(&index, 1));
  return {index, std::vector<float>(book.begin() + index * dim, book.begin() + (index + 1) * dim)};
}

torch::Tensor downsample_mask_batch(const torch::Tensor& masks, int factor) {
  if (masks.dim() != 3) throw MaskInvalid("mask batch must be [B, H, W]");
  const auto b = masks.size(0), h = masks.size(1), w = masks.size(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0)
    throw MaskInvalid("mask size " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by " + std::to_string(factor));
  auto src = masks.to(torch::kInt64).contiguous();
  if (src.numel() && src.min().item<std::int64_t>() < 0) throw MaskInvalid("negative label");
  auto out = torch::empty({b, h / factor, w / factor}, torch::kInt64);
  const auto in_plane = h * w;
  const auto out_plane = (h / factor) * (w / factor);
  for (std::int64_t i = 0; i < b; ++i) {
    kernels::omp::majority_downsample(
        std::span<const std::int64_t>(src.data_ptr<std::int64_t>() + i * in_plane, in_plane),
        static_cast<int>(h), static_cast<int>(w), factor,
        std::span<std::int64_t>(out.data_ptr<std::int64_t>() + i * out_plane, out_plane));
  }
  return out;
}

torch::Tensor downsample_mask(const SemanticMask& mask, int factor) {
  return downsample_mask_batch(mask.labels().unsqueeze(0), factor).squeeze(0);
}

namespace {

torch::Tensor latent_rows(const torch::Tensor& z_hat) {
  return z_hat.detach().to(torch::kFloat32).permute({0, 2, 3, 1}).reshape({-1, z_hat.size(1)}).contiguous();
}

torch::Tensor rows_to_latent(const torch::Tensor& rows, const torch::Tensor& z_hat) {
  return rows.view({z_hat.size(0), z_hat.size(2), z_hat.size(3), z_hat.size(1)}).permute({0, 3, 1, 2});
}

void check_latent(const torch::Tensor& z_hat, const CodebookSet& books) {
  if (z_hat.dim() != 4) throw ShapeError("latent must be [B, n_z, h, w]");
  if (!books.books.defined() || books.books.dim() != 3) throw ShapeError("codebooks must be [C, N, n_z]");
  if (z_hat.size(1) != books.dim())
    throw ShapeError("latent has " + std::to_string(z_hat.size(1)) + " channels, codebooks " +
                     std::to_string(books.dim()));
}

}  // namespace

QuantizationResult quantize_with_mask(const torch::Tensor& z_hat, const torch::Tensor& mask_lowres,
                                      const CodebookSet& books) {
  check_latent(z_hat, books);
  auto mask = mask_lowres.dim() == 2 ? mask_lowres.unsqueeze(0) : mask_lowres;
  if (mask.dim() != 3 || mask.size(0) != z_hat.size(0) || mask.size(1) != z_hat.size(2) ||
      mask.size(2) != z_hat.size(3))
    throw MaskInvalid("low-resolution mask does not match latent grid");
  auto classes = mask.to(torch::kInt64).contiguous();
  if (classes.numel() &&
      (classes.min().item<std::int64_t>() < 0 || classes.max().item<std::int64_t>() >= books.classes()))
    throw MaskInvalid("mask label outside [0, " + std::to_string(books.classes()) + ")");
  ++quantizer_counters().with_mask;

  auto rows = latent_rows(z_hat);
  auto book_data = books.books.detach().to(torch::kFloat32).contiguous();
  auto idx = torch::empty({rows.size(0)}, torch::kInt64);
  kernels::omp::assign_codes(std::span<const float>(rows.data_ptr<float>(), rows.numel()),
                             std::span<const std::int64_t>(classes.data_ptr<std::int64_t>(), classes.numel()),
                             std::span<const float>(book_data.data_ptr<float>(), book_data.numel()),
                             {books.classes(), books.entries(), books.dim()},
                             std::span<std::int64_t>(idx.data_ptr<std::int64_t>(), idx.numel()));

  QuantizationResult r;
  auto flat_cls = classes.view({-1});
  r.z_selected = rows_to_latent(books.books.index({flat_cls, idx}), z_hat).to(z_hat.scalar_type());
  r.z_q = z_hat + (r.z_selected - z_hat).detach();
  r.indices = idx.view_as(classes);
  r.class_of_location = classes;
  r.commit_term = (z_hat - r.z_selected.detach()).pow(2).mean();
  r.codebook_term = (z_hat.detach() - r.z_selected).pow(2).mean();
  return r;
}

PerClassQuantization quantize_per_class(const torch::Tensor& z_hat, const CodebookSet& books) {
  check_latent(z_hat, books);
  ++quantizer_counters().per_class;
  auto rows = latent_rows(z_hat);
  auto book_data = books.books.detach().to(torch::kFloat32).contiguous();
  PerClassQuantization out;
  for (std::int64_t c = 0; c < books.classes(); ++c) {
    auto idx = torch::empty({rows.size(0)}, torch::kInt64);
    const auto stride = books.entries() * books.dim();
    kernels::omp::assign_codes(std::span<const float>(rows.data_ptr<float>(), rows.numel()), {},
                               std::span<const float>(book_data.data_ptr<float>() + c * stride, stride),
                               {1, books.entries(), books.dim()},
                               std::span<std::int64_t>(idx.data_ptr<std::int64_t>(), idx.numel()));
    auto selected = rows_to_latent(books.books[c].index_select(0, idx), z_hat).to(z_hat.scalar_type());
    out.maps.push_back(z_hat + (selected - z_hat).detach());
    out.selected.push_back(selected);
    out.indices.push_back(idx.view({z_hat.size(0), z_hat.size(2), z_hat.size(3)}));
  }
  return out;
}

torch::Tensor aggregate_weighted(const std::vector<torch::Tensor>& maps, const torch::Tensor& weights) {
  if (maps.empty()) throw AggregateInvalid("no maps to aggregate");
  const auto& ref = maps.front();
  if (weights.dim() != 4 || weights.size(0) != ref.size(0) ||
      weights.size(1) != static_cast<std::int64_t>(maps.size()) || weights.size(2) != ref.size(2) ||
      weights.size(3) != ref.size(3))
    throw AggregateInvalid("weights must be [B, C, h, w] matching the maps");
  torch::Tensor out = weights.narrow(1, 0, 1) * maps[0];
  for (std::size_t c = 1; c < maps.size(); ++c) {
    if (maps[c].sizes() != ref.sizes()) throw AggregateInvalid("maps differ in shape");
    out = out + weights.narrow(1, static_cast<std::int64_t>(c), 1) * maps[c];
  }
  return out;
}

UsageStats usage_stats(std::span<const QuantizationResult> results, std::int64_t classes,
                       std::int64_t entries) {
  UsageStats s;
  s.counts = torch::zeros({classes, entries}, torch::kInt64);
  auto* counts = s.counts.data_ptr<std::int64_t>();
  for (const auto& r : results) {
    auto idx = r.indices.contiguous();
    auto cls = r.class_of_location.contiguous();
    const auto* ip = idx.data_ptr<std::int64_t>();
    const auto* cp = cls.data_ptr<std::int64_t>();
    for (std::int64_t i = 0; i < idx.numel(); ++i) {
      if (cp[i] < 0 || cp[i] >= classes || ip[i] < 0 || ip[i] >= entries)
        throw ShapeError("quantization result does not match codebook geometry");
      ++counts[cp[i] * entries + ip[i]];
    }
  }
  for (std::int64_t c = 0; c < classes; ++c) {
    std::int64_t total = 0;
    for (std::int64_t j = 0; j < entries; ++j) total += counts[c * entries + j];
    double entropy = 0.0;
    for (std::int64_t j = 0; j < entries && total > 0; ++j) {
      const auto n = counts[c * entries + j];
      if (n == 0) continue;
      const double p = static_cast<double>(n) / static_cast<double>(total);
      entropy -= p * std::log(p);
    }
    s.perplexity_per_class.push_back(std::exp(entropy));
  }
  return s;
}

}  // namespace sucode
