#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "vqcpc/gradcheck.hpp"
#include "vqcpc/quantizer.hpp"
#include "vqcpc/rng.hpp"

using namespace vqcpc;

namespace {

Codebook<double> two_centroids() {
  Tensor<double> c({2, 3}, {0, 0, 0, 1, 1, 1});
  return Codebook<double>(Var<double>::leaf(std::move(c), true), 0.25);
}

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("quantize picks the nearest centroid") {
  Codebook<double> book = two_centroids();
  Assignment<double> a = quantize<double>({0.2, 0.1, 0.0}, book);
  CHECK(a.index == 0);
  CHECK(a.distance == doctest::Approx(0.05));
}

TEST_CASE("quantize of an exact centroid has zero distance") {
  Codebook<double> book = two_centroids();
  Assignment<double> a = quantize<double>({1.0, 1.0, 1.0}, book);
  CHECK(a.index == 1);
  CHECK(a.distance == 0.0);
  CHECK(a.centroid == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("quantize breaks ties toward the lower index") {
  Codebook<double> book = two_centroids();
  Assignment<double> a = quantize<double>({0.5, 0.5, 0.5}, book);
  CHECK(a.index == 0);
}

TEST_CASE("quantize rejects a dimension mismatch") {
  Codebook<double> book = two_centroids();
  CHECK_THROWS_AS(quantize<double>({1.0, 2.0}, book), std::invalid_argument);
}

TEST_CASE("quantize is idempotent") {
  Rng rng(3);
  Tensor<double> c = random_tensor({8, 3}, rng);
  Codebook<double> book(Var<double>::leaf(c, false), 0.25);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x = {rng.next_normal(), rng.next_normal(), rng.next_normal()};
    Assignment<double> a = quantize(x, book);
    Assignment<double> b = quantize(a.centroid, book);
    CHECK(b.index == a.index);
  }
}

TEST_CASE("quantize is invariant under a common translation (away from ties)") {
  Rng rng(5);
  Tensor<double> c = random_tensor({6, 3}, rng);
  Codebook<double> book(Var<double>::leaf(c, false), 0.25);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 50; ++trial) {
    std::vector<double> x = {rng.next_normal(), rng.next_normal(), rng.next_normal()};
    // skip near-ties where floating-point reordering could flip the argmin
    std::vector<double> dists;
    for (std::size_t k = 0; k < 6; ++k) {
      double d = 0;
      for (int j = 0; j < 3; ++j) {
        const double diff = x[j] - c.at2(k, j);
        d += diff * diff;
      }
      dists.push_back(d);
    }
    std::sort(dists.begin(), dists.end());
    if (dists[1] - dists[0] < 1e-6) continue;
    ++checked;
    const int base = quantize(x, book).index;
    const double t[3] = {rng.next_normal(), rng.next_normal(), rng.next_normal()};
    Tensor<double> shifted_c = c;
    std::vector<double> shifted_x = x;
    for (std::size_t k = 0; k < 6; ++k)
      for (int j = 0; j < 3; ++j) shifted_c.at2(k, j) += t[j];
    for (int j = 0; j < 3; ++j) shifted_x[j] += t[j];
    Codebook<double> shifted_book(Var<double>::leaf(shifted_c, false), 0.25);
    CHECK(quantize(shifted_x, shifted_book).index == base);
  }
  CHECK(checked >= 50);
}

TEST_CASE("straight_through forward is bit-equal to the assigned centroid") {
  Rng rng(7);
  Tensor<double> c = random_tensor({4, 3}, rng);
  auto centroids = Var<double>::leaf(c, true);
  Tensor<double> x = random_tensor({10, 3}, rng);
  auto xv = Var<double>::leaf(x, true);
  Var<double> zq = straight_through(xv, centroids);
  const auto idx = quantize_batch(x, c);
  for (std::size_t i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) {
      const double expect = c.at2(idx[i], j);
      const double got = zq.value().at2(i, j);
      CHECK(std::memcmp(&expect, &got, sizeof(double)) == 0);
    }
}

TEST_CASE("straight_through gradient: identity into x, zero into centroids") {
  Rng rng(9);
  Tensor<double> c = random_tensor({4, 3}, rng);
  auto centroids = Var<double>::leaf(c, true);
  Tensor<double> x = random_tensor({5, 3}, rng);
  auto xv = Var<double>::leaf(x, true);
  Var<double> loss = sum_all(straight_through(xv, centroids));
  backward(loss);
  REQUIRE(xv.grad().size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(xv.grad()[i] == 1.0);
  CHECK(centroids.grad().size() == 0);
}

TEST_CASE("straight_through at a centroid is a fixed point") {
  Rng rng(11);
  Tensor<double> c = random_tensor({4, 3}, rng);
  auto centroids = Var<double>::leaf(c, true);
  Tensor<double> x({1, 3});
  for (int j = 0; j < 3; ++j) x.at2(0, j) = c.at2(2, j);
  auto xv = Var<double>::leaf(x, true);
  Var<double> zq = straight_through(xv, centroids);
  for (int j = 0; j < 3; ++j) CHECK(zq.value().at2(0, j) == x.at2(0, j));
  backward(sum_all(zq));
  for (int j = 0; j < 3; ++j) CHECK(xv.grad()[j] == 1.0);
}

TEST_CASE("vq_loss hand-computed value") {
  Tensor<double> c({1, 3}, {0, 0, 0});
  // force assignment to the single centroid
  Tensor<double> cc({2, 3}, {0, 0, 0, 100, 100, 100});
  auto centroids = Var<double>::leaf(cc, true);
  Tensor<double> x({1, 3}, {2, 0, 0});
  auto xv = Var<double>::leaf(x, true);
  Codebook<double> book(centroids, 0.25);
  Var<double> loss = vq_loss(xv, book);
  CHECK(loss.value()[0] == doctest::Approx(4.0 + 0.25 * 4.0));
}

TEST_CASE("vq_loss is zero iff inputs sit on their centroids") {
  Rng rng(13);
  Tensor<double> c = random_tensor({4, 3}, rng);
  auto centroids = Var<double>::leaf(c, true);
  Codebook<double> book(centroids, 0.25);
  Tensor<double> x({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) x.at2(i, j) = c.at2(i, j);
  auto xv = Var<double>::leaf(x, true);
  CHECK(vq_loss(xv, book).value()[0] == 0.0);
  Tensor<double> y = x;
  y.at2(1, 2) += 0.25;
  CHECK(vq_loss(Var<double>::leaf(y, true), book).value()[0] > 0.0);
}

TEST_CASE("vq_loss gradient w.r.t. the centroid matches the hand adjoint") {
  Tensor<double> cc({2, 3}, {0, 0, 0, 100, 100, 100});
  auto centroids = Var<double>::leaf(cc, true);
  Tensor<double> x({1, 3}, {2, 0, 0});
  auto xv = Var<double>::leaf(x, true);
  Codebook<double> book(centroids, 0.25);
  Var<double> loss = vq_loss(xv, book);
  backward(loss);
  // first term: d/dc ||sg[x] - c||^2 = 2 (c - x) = (-4, 0, 0)
  CHECK(centroids.grad().at2(0, 0) == doctest::Approx(-4.0));
  CHECK(centroids.grad().at2(0, 1) == doctest::Approx(0.0));
  CHECK(centroids.grad().at2(0, 2) == doctest::Approx(0.0));
  // commitment term only touches x
  CHECK(xv.grad().at2(0, 0) == doctest::Approx(2 * 0.25 * 2.0));
}

TEST_CASE("vq_loss rejects an empty batch shape") {
  Tensor<double> cc({2, 3}, {0, 0, 0, 1, 1, 1});
  auto centroids = Var<double>::leaf(cc, true);
  Codebook<double> book(centroids, 0.25);
  Tensor<double> x({1, 3}, {0, 0, 0});
  auto xv = Var<double>::leaf(x, false);
  CHECK_THROWS(vq_loss(xv, centroids, 0.25, std::vector<int>{0, 1}));
}

TEST_CASE("vq_loss passes gradcheck through encoder-style inputs") {
  Rng rng(15);
  Tensor<double> c = random_tensor({4, 3}, rng);
  auto centroids = Var<double>::leaf(c, true);
  Tensor<double> x = random_tensor({6, 3}, rng);
  auto xv = Var<double>::leaf(x, true);
  Codebook<double> book(centroids, 0.25);
  std::vector<NamedParam<double>> params = {{"x", xv}, {"centroids", centroids}};
  auto builder = [&]() { return vq_loss(xv, book); };
  CHECK(gradcheck_params<double>(builder, params, 1e-3).pass);
}

TEST_CASE("usage_stats hand values") {
  UsageStats uniform = usage_stats(std::vector<int>{0, 1, 2, 3}, 4);
  CHECK(uniform.perplexity == doctest::Approx(4.0));

  UsageStats single = usage_stats(std::vector<int>(10, 2), 16);
  CHECK(single.perplexity == doctest::Approx(1.0));

  UsageStats skew = usage_stats(std::vector<int>{0, 0, 0, 1}, 2);
  const double h = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  CHECK(skew.perplexity == doctest::Approx(std::exp(h)));
  CHECK(skew.perplexity == doctest::Approx(1.7548).epsilon(1e-4));
  CHECK(skew.counts == std::vector<std::size_t>{3, 1});

  CHECK_THROWS_AS(usage_stats({}, 4), std::invalid_argument);
}

TEST_CASE("uniform over 16 codes reaches the maximum perplexity") {
  std::vector<int> codes;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 16; ++c) codes.push_back(c);
  CHECK(usage_stats(codes, 16).perplexity == doctest::Approx(16.0));
}

TEST_CASE("init_codebook draws distinct sample rows, seeded") {
  Rng rng(17);
  Tensor<double> samples = random_tensor({1000, 3}, rng);
  Tensor<double> book = init_codebook(samples, 32, 9);
  Tensor<double> again = init_codebook(samples, 32, 9);
  for (std::size_t i = 0; i < book.size(); ++i) CHECK(book[i] == again[i]);

  std::set<std::vector<double>> rows;
  for (std::size_t i = 0; i < 32; ++i) {
    std::vector<double> row(book.data() + i * 3, book.data() + (i + 1) * 3);
    rows.insert(row);
    bool found = false;
    for (std::size_t s = 0; s < 1000 && !found; ++s)
      found = std::equal(row.begin(), row.end(), samples.data() + s * 3);
    CHECK(found);
  }
  CHECK(rows.size() == 32);
}

TEST_CASE("init_codebook with exactly C samples is a permutation") {
  Rng rng(19);
  Tensor<double> samples = random_tensor({16, 3}, rng);
  Tensor<double> book = init_codebook(samples, 16, 1);
  std::multiset<std::vector<double>> want, got;
  for (std::size_t i = 0; i < 16; ++i) {
    want.insert({samples.data() + i * 3, samples.data() + (i + 1) * 3});
    got.insert({book.data() + i * 3, book.data() + (i + 1) * 3});
  }
  CHECK(want == got);
  CHECK_THROWS_AS(init_codebook(samples, 17, 1), std::invalid_argument);
}
