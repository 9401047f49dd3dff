#include "doctest_torch.hpp"

#include <random>

#include "sucode/errors.hpp"
#include "sucode/quantizer.hpp"
#include "support.hpp"

using namespace sucode;
using sucode::testing::brute_force_nearest;

namespace {

CodebookSet random_books(int c, int n, int d, std::uint64_t seed) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  return {torch::randn({c, n, d}, g), false};
}

torch::Tensor random_latent(int h, int w, int d, std::uint64_t seed) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn({1, d, h, w}, g);
}

torch::Tensor rows_of(const torch::Tensor& z) { return z.permute({0, 2, 3, 1}).reshape({-1, z.size(1)}); }

}  // namespace

TEST_CASE("init_codebooks shape, range and determinism") {
  RunConfig cfg;
  const auto full = init_codebooks(cfg, 1);
  CHECK(full.books.sizes() == torch::IntArrayRef({8, 256, 256}));
  CHECK(full.books.abs().max().item<float>() <= 1.0f / 256);
  CHECK(torch::equal(full.books, init_codebooks(cfg, 1).books));
  cfg.class_count = 3;
  cfg.codebook_entries = 32;
  cfg.embed_dim = 16;
  CHECK(init_codebooks(cfg, 2).books.sizes() == torch::IntArrayRef({3, 32, 16}));
}

TEST_CASE("nearest_code examples") {
  const std::vector<float> two{0, 0, 1, 1};
  CHECK(nearest_code(std::vector<float>{0.9f, 0.8f}, two, 2).first == 1);

  auto book = torch::randn({10, 4});
  auto row5 = book[5].contiguous();
  auto [idx, code] = nearest_code(std::span<const float>(row5.data_ptr<float>(), 4),
                                  std::span<const float>(book.data_ptr<float>(), 40), 10);
  CHECK(idx == 5);
  CHECK(std::equal(code.begin(), code.end(), row5.data_ptr<float>()));

  book[7] = book[2];
  auto near = (book[2] + 1e-3).contiguous();
  CHECK(nearest_code(std::span<const float>(near.data_ptr<float>(), 4),
                     std::span<const float>(book.data_ptr<float>(), 40), 10).first == 2);
}

TEST_CASE("downsample_mask majority and ties") {
  CHECK(torch::equal(downsample_mask(SemanticMask(torch::full({8, 8}, 3, torch::kInt64)), 4),
                     torch::full({2, 2}, 3, torch::kInt64)));
  CHECK(downsample_mask(SemanticMask(torch::tensor({0, 0, 1, 2}, torch::kInt64).view({2, 2})), 2).item<int64_t>() == 0);
  CHECK(downsample_mask(SemanticMask(torch::tensor({1, 1, 2, 2}, torch::kInt64).view({2, 2})), 2).item<int64_t>() == 1);
  CHECK(downsample_mask(SemanticMask(torch::tensor({2, 1, 1, 2}, torch::kInt64).view({2, 2})), 2).item<int64_t>() == 1);
  CHECK_THROWS_AS(downsample_mask(SemanticMask(torch::zeros({6, 6}, torch::kInt64)), 4), MaskInvalid);
}

TEST_CASE("quantize_with_mask against brute force") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 1 + rng() % 8, w = 1 + rng() % 8, c = 1 + rng() % 4, n = 2 + rng() % 15, d = 1 + rng() % 8;
    const auto books = random_books(c, n, d, trial);
    const auto z = random_latent(h, w, d, 100 + trial);
    const auto mask = torch::randint(0, c, {1, h, w}, torch::kInt64);
    const auto q = quantize_with_mask(z, mask, books);
    const auto rows = rows_of(z);
    const auto cls = mask.view({-1});
    for (std::int64_t i = 0; i < rows.size(0); ++i) {
      const auto k = cls[i].item<int64_t>();
      const auto want = brute_force_nearest(rows[i].unsqueeze(0), books.books[k])[0];
      REQUIRE(q.indices.view({-1})[i].item<int64_t>() == want);
    }
    // The gathered rows are the book entries; the straight-through output
    // carries their values up to rounding.
    const auto sel = rows_of(q.z_selected);
    for (std::int64_t i = 0; i < rows.size(0); ++i)
      CHECK(torch::equal(sel[i], books.books[cls[i].item<int64_t>()][q.indices.view({-1})[i].item<int64_t>()]));
    CHECK(torch::allclose(q.z_q, q.z_selected, 0, 1e-6));
  }
}

TEST_CASE("uniform class mask reduces to quantizing against one book") {
  const auto books = random_books(4, 6, 3, 1);
  const auto z = random_latent(4, 4, 3, 2);
  const auto q = quantize_with_mask(z, torch::full({1, 4, 4}, 3, torch::kInt64), books);
  const auto per = quantize_per_class(z, books);
  CHECK(torch::equal(q.indices, per.indices[3]));
  CHECK(torch::equal(q.z_q, per.maps[3]));
}

TEST_CASE("latents built from book entries quantize with zero loss and are idempotent") {
  const auto books = random_books(2, 3, 5, 3);
  auto mask = torch::tensor({0, 1, 1, 0}, torch::kInt64).view({1, 2, 2});
  auto picks = torch::tensor({2, 0, 1, 1}, torch::kInt64);
  auto rows = books.books.index({mask.view({-1}), picks});
  auto z = rows.view({1, 2, 2, 5}).permute({0, 3, 1, 2}).contiguous();
  const auto q = quantize_with_mask(z, mask, books);
  CHECK(q.commit_term.item<double>() == 0.0);
  CHECK(q.codebook_term.item<double>() == 0.0);
  CHECK(torch::equal(q.indices.view({-1}), picks));
  const auto again = quantize_with_mask(q.z_q.detach(), mask, books);
  CHECK(torch::equal(again.indices, q.indices));
  CHECK(again.commit_term.item<double>() == 0.0);
}

TEST_CASE("out-of-range mask labels are rejected") {
  const auto books = random_books(2, 3, 2, 4);
  CHECK_THROWS_AS(quantize_with_mask(random_latent(2, 2, 2, 1), torch::full({1, 2, 2}, 2, torch::kInt64), books),
                  MaskInvalid);
}

TEST_CASE("quantize_per_class against brute force") {
  const auto books = random_books(3, 4, 6, 7);
  const auto z = random_latent(4, 4, 6, 8);
  const auto per = quantize_per_class(z, books);
  REQUIRE(per.maps.size() == 3);
  for (int c = 0; c < 3; ++c) {
    const auto want = brute_force_nearest(rows_of(z), books.books[c]);
    const auto got = per.indices[c].view({-1});
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i].item<int64_t>() == want[i]);
  }
  // C = 1 matches the masked route under a uniform class-0 mask.
  CodebookSet one{books.books.narrow(0, 0, 1).clone(), false};
  CHECK(torch::equal(quantize_per_class(z, one).maps[0], quantize_with_mask(z, torch::zeros({1, 4, 4}, torch::kInt64), one).z_q));
  // Identical books give identical maps.
  CodebookSet same{books.books.narrow(0, 0, 1).repeat({3, 1, 1}), false};
  const auto s = quantize_per_class(z, same);
  CHECK(torch::equal(s.maps[0], s.maps[1]));
  CHECK(torch::equal(s.maps[1], s.maps[2]));
}

TEST_CASE("aggregate_weighted") {
  std::vector<torch::Tensor> maps{torch::randn({1, 3, 2, 2}), torch::randn({1, 3, 2, 2}), torch::randn({1, 3, 2, 2})};
  auto onehot = torch::zeros({1, 3, 2, 2});
  onehot.select(1, 2).fill_(1);
  CHECK(torch::equal(aggregate_weighted(maps, onehot), maps[2]));

  std::vector<torch::Tensor> same(3, maps[0]);
  CHECK(torch::allclose(aggregate_weighted(same, torch::full({1, 3, 2, 2}, 1.0 / 3)), maps[0], 1e-6, 1e-6));

  std::vector<torch::Tensor> two{maps[0], maps[1]};
  auto w = torch::zeros({1, 2, 2, 2});
  w.select(1, 0).fill_(0.25);
  w.select(1, 1).fill_(0.75);
  const auto out = aggregate_weighted(two, w);
  CHECK(torch::allclose(out, 0.25 * maps[0] + 0.75 * maps[1], 0, 1e-7));

  // Convex hull: each coordinate lies between the per-location min and max.
  auto rw = torch::softmax(torch::randn({1, 3, 2, 2}), 1);
  const auto mix = aggregate_weighted(maps, rw);
  const auto stack = torch::stack(maps);
  CHECK((mix >= std::get<0>(stack.min(0)) - 1e-6).all().item<bool>());
  CHECK((mix <= std::get<0>(stack.max(0)) + 1e-6).all().item<bool>());

  CHECK_THROWS_AS(aggregate_weighted(maps, torch::zeros({1, 2, 2, 2})), AggregateInvalid);
}

TEST_CASE("straight-through: gradient at the encoder equals gradient at the quantizer output") {
  const auto books = random_books(2, 5, 4, 9);
  auto z = random_latent(3, 3, 4, 10).requires_grad_(true);
  const auto q = quantize_with_mask(z, torch::randint(0, 2, {1, 3, 3}, torch::kInt64), books);
  auto zq = q.z_q;
  zq.retain_grad();
  auto target = torch::randn_like(zq);
  ((zq * zq.sin()) - target).abs().sum().backward();
  CHECK(torch::equal(z.grad(), zq.grad()));
}

TEST_CASE("usage_stats") {
  QuantizationResult r;
  r.indices = torch::zeros({1, 4, 4}, torch::kInt64);
  r.class_of_location = torch::zeros({1, 4, 4}, torch::kInt64);
  auto s = usage_stats(std::span<const QuantizationResult>(&r, 1), 2, 4);
  CHECK(s.counts[0][0].item<int64_t>() == 16);
  CHECK(s.perplexity_per_class[0] == doctest::Approx(1.0));
  CHECK(s.total() == 16);

  QuantizationResult u;
  u.indices = torch::arange(4, torch::kInt64).repeat({2}).view({1, 2, 4});
  u.class_of_location = torch::ones({1, 2, 4}, torch::kInt64);
  const auto su = usage_stats(std::span<const QuantizationResult>(&u, 1), 2, 4);
  CHECK(su.perplexity_per_class[1] == doctest::Approx(4.0));

  std::vector<QuantizationResult> both{r, u};
  const auto sb = usage_stats(both, 2, 4);
  CHECK(torch::equal(sb.counts, s.counts + su.counts));
  for (double p : sb.perplexity_per_class) {
    CHECK(p >= 1.0 - 1e-12);
    CHECK(p <= 4.0 + 1e-12);
  }
}

TEST_CASE("route counters") {
  const auto books = random_books(2, 3, 2, 11);
  const auto z = random_latent(2, 2, 2, 12);
  quantizer_counters().reset();
  quantize_with_mask(z, torch::zeros({1, 2, 2}, torch::kInt64), books);
  quantize_per_class(z, books);
  quantize_per_class(z, books);
  CHECK(quantizer_counters().with_mask == 1);
  CHECK(quantizer_counters().per_class == 2);
}
