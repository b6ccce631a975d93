#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "ctxst/rng.hpp"
#include "ctxst/tensor.hpp"
#include "doctest.h"

using namespace ctxst;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad = false,
                     double scale = 1.0) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * scale;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Reference matmul, written as differently from the library kernel as a
// matmul can be (j-inner accumulate per output cell).
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  return out;
}

// Total CTC probability by enumerating every frame-level labelling and
// collapsing it (merge repeats, then drop blanks). Only usable for tiny
// T and class counts, which is the point: it shares no code with the
// dynamic-programming implementation.
double ctc_brute_force_nll(const std::vector<double>& lp, std::size_t t_frames,
                           std::size_t classes, const std::vector<int>& target) {
  std::vector<std::size_t> path(t_frames, 0);
  std::vector<double> terms;
  while (true) {
    std::vector<int> collapsed;
    std::size_t prev = classes;  // sentinel unequal to any class
    for (std::size_t t = 0; t < t_frames; ++t) {
      if (path[t] != prev && path[t] != 0) collapsed.push_back(static_cast<int>(path[t]) - 1);
      prev = path[t];
    }
    if (collapsed == target) {
      double s = 0.0;
      for (std::size_t t = 0; t < t_frames; ++t) s += lp[t * classes + path[t]];
      terms.push_back(s);
    }
    std::size_t i = 0;
    while (i < t_frames && ++path[i] == classes) {
      path[i] = 0;
      ++i;
    }
    if (i == t_frames) break;
  }
  REQUIRE(!terms.empty());
  double mx = terms[0];
  for (double t : terms) mx = std::max(mx, t);
  double z = 0.0;
  for (double t : terms) z += std::exp(t - mx);
  return -(mx + std::log(z));
}

}  // namespace

TEST_CASE("matmul forward matches a triple-loop oracle") {
  Rng rng(derive_seed(11, "matmul"));
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(6);
    const std::size_t k = 1 + rng.uniform_index(6);
    const std::size_t n = 1 + rng.uniform_index(6);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tape tape;
    Tensor c = matmul(tape, a, b);
    const std::vector<double> want = matmul_oracle(a.values(), b.values(), m, k, n);
    REQUIRE(c.shape() == std::vector<std::size_t>{m, n});
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(std::abs(c.values()[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions and names the shapes") {
  Tape tape;
  Tensor a({2, 3}, 0.5);
  Tensor b({4, 5}, 0.5);
  CHECK_THROWS_WITH_AS(matmul(tape, a, b), doctest::Contains("2x3"), Error);
  try {
    matmul(tape, a, b);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("4x5") != std::string::npos);
  }
}

TEST_CASE("per-op gradients agree with central differences") {
  Rng rng(derive_seed(11, "grad-per-op"));
  const double tol = 1e-4;

  SUBCASE("matmul both sides") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 2}, rng);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, matmul(t, v, w)); }, x) < tol);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, matmul(t, x, v)); }, w) < tol);
  }
  SUBCASE("add, add_row, mul, scale, transpose") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    CHECK(gradient_check([&](Tape& t, Tensor& v) { return sum(t, add(t, v, y)); }, x) < tol);
    CHECK(gradient_check([&](Tape& t, Tensor& v) { return sum(t, add_row(t, x, v)); }, b) < tol);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, mul(t, v, y)); }, x) < tol);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, scale(t, v, -1.7)); }, x) < tol);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, transpose(t, v)); }, x) < tol);
  }
  SUBCASE("relu away from the kink") {
    Tensor x = random_tensor({3, 4}, rng);
    for (double& v : x.values())
      if (std::abs(v) < 0.05) v = 0.1;  // keep the finite difference clean
    CHECK(gradient_check([&](Tape& t, Tensor& v) { return sum(t, relu(t, v)); }, x) < tol);
  }
  SUBCASE("softmax and log_softmax need a non-linear readout to be visible") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor r = random_tensor({3, 4}, rng);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, mul(t, softmax_rows(t, v), r)); }, x) < tol);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, mul(t, log_softmax(t, v), r)); }, x) < tol);
  }
  SUBCASE("layer_norm_rows for input, gain and bias") {
    Tensor x = random_tensor({3, 5}, rng);
    Tensor g = random_tensor({5}, rng);
    Tensor b = random_tensor({5}, rng);
    Tensor r = random_tensor({3, 5}, rng);
    auto readout = [&](Tape& t, Tensor ln) { return sum(t, mul(t, ln, r)); };
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return readout(t, layer_norm_rows(t, v, g, b)); }, x) <
          tol);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return readout(t, layer_norm_rows(t, x, v, b)); }, g) <
          tol);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return readout(t, layer_norm_rows(t, x, g, v)); }, b) <
          tol);
  }
  SUBCASE("embed, slice_cols, concat_cols") {
    Tensor table = random_tensor({6, 3}, rng);
    std::vector<int> ids = {4, 0, 4, 2};  // repeated id checks accumulation
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, embed(t, v, ids)); }, table) < tol);
    Tensor x = random_tensor({3, 6}, rng);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) { return sum(t, slice_cols(t, v, 1, 3)); }, x) < tol);
    Tensor y = random_tensor({3, 2}, rng);
    CHECK(gradient_check(
              [&](Tape& t, Tensor& v) {
                return sum(t, concat_cols(t, {slice_cols(t, v, 0, 2), y, v}));
              },
              x) < tol);
  }
}

TEST_CASE("composite network gradient stays under 1e-4 across 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(seed, "grad-composite"));
    Tensor x = random_tensor({4, 5}, rng);
    Tensor w1 = random_tensor({5, 6}, rng, false, 0.5);
    Tensor b1 = random_tensor({6}, rng, false, 0.1);
    Tensor g = Tensor({6}, 1.0);
    Tensor bb = Tensor({6}, 0.0);
    Tensor w2 = random_tensor({6, 3}, rng, false, 0.5);
    std::vector<int> targets = {2, 0, 1, 2};
    std::vector<char> mask = {1, 0, 1, 1};
    auto f = [&](Tape& t, Tensor& v) {
      Tensor h = add_row(t, matmul(t, v, w1), b1);
      h = layer_norm_rows(t, relu(t, h), g, bb);
      Tensor logits = matmul(t, h, w2);
      return masked_cross_entropy(t, logits, targets, mask);
    };
    CHECK(gradient_check(f, x) < 1e-4);
  }
}

TEST_CASE("masked_cross_entropy value and masking semantics") {
  // Two rows of hand-checkable logits. Row 1 is masked out.
  Tensor logits({2, 3}, {1.0, 2.0, 3.0, 5.0, 5.0, 5.0}, true);
  std::vector<int> targets = {2, 0};
  std::vector<char> mask = {1, 0};
  Tape tape;
  Tensor loss = masked_cross_entropy(tape, logits, targets, mask);
  // -log softmax([1,2,3])[2] = log(exp(-2) + exp(-1) + 1)
  const double want = std::log(std::exp(-2.0) + std::exp(-1.0) + 1.0);
  CHECK(loss.value() == doctest::Approx(want).epsilon(1e-12));
  tape.backward(loss);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(logits.grad()[0 * 3 + j] != 0.0);
    CHECK(logits.grad()[1 * 3 + j] == 0.0);  // exactly zero, not merely small
  }
}

TEST_CASE("masked_cross_entropy with no active positions is an error") {
  Tensor logits({2, 3}, 0.1, true);
  std::vector<int> targets = {0, 1};
  std::vector<char> mask = {0, 0};
  Tape tape;
  CHECK_THROWS_WITH_AS(masked_cross_entropy(tape, logits, targets, mask),
                       doctest::Contains("empty loss support"), Error);
}

TEST_CASE("ctc_loss matches exhaustive alignment enumeration") {
  Rng rng(derive_seed(11, "ctc-oracle"));
  struct Case {
    std::size_t t, classes;
    std::vector<int> target;
  };
  const std::vector<Case> cases = {
      {1, 2, {}},           // all-blank path only
      {2, 3, {0}},          // single token
      {3, 3, {0, 0}},       // repeat needs a separating blank
      {4, 4, {2, 1}},       //
      {5, 4, {1, 1, 2}},    //
      {6, 4, {0, 2, 0}},    //
      {6, 3, {1, 1, 1}},    // tightest feasible repeat case
  };
  for (const Case& c : cases) {
    CAPTURE(c.t);
    CAPTURE(c.target.size());
    std::vector<double> logits(c.t * c.classes);
    for (double& v : logits) v = rng.normal();
    Tensor raw({c.t, c.classes}, logits, true);
    Tape tape;
    Tensor lp = log_softmax(tape, raw);
    Tensor loss = ctc_loss(tape, lp, c.target);
    const double want = ctc_brute_force_nll(lp.values(), c.t, c.classes, c.target);
    CHECK(std::abs(loss.value() - want) < 1e-9);
  }
}

TEST_CASE("ctc_loss gradient agrees with central differences") {
  Rng rng(derive_seed(13, "ctc-grad"));
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({5, 4}, rng);
    std::vector<int> target = {2, 0};
    // The loss reads arbitrary score matrices, so checking through a
    // log_softmax exercises the chain as training will use it.
    auto f = [&](Tape& t, Tensor& v) { return ctc_loss(t, log_softmax(t, v), target); };
    CHECK(gradient_check(f, x) < 1e-4);
  }
}

TEST_CASE("ctc_loss rejects targets that cannot fit the frames") {
  Tensor lp({2, 3}, -1.0);
  Tape tape;
  std::vector<int> too_long = {0, 1, 0};
  CHECK_THROWS_WITH_AS(ctc_loss(tape, lp, too_long),
                       doctest::Contains("target longer than input"), Error);
  // A repeat costs one extra frame: "1 1" needs 3 frames, only 2 provided.
  std::vector<int> repeat = {1, 1};
  CHECK(ctc_min_frames(repeat) == 3);
  CHECK_THROWS_WITH_AS(ctc_loss(tape, lp, repeat),
                       doctest::Contains("target longer than input"), Error);
}

TEST_CASE("tape refuses a second backward pass") {
  Tensor x({2, 2}, 1.5, true);
  Tape tape;
  Tensor loss = sum(tape, mul(tape, x, x));
  tape.backward(loss);
  CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("twice"), Error);
}

TEST_CASE("backward needs a scalar that requires grad") {
  Tensor x({2, 2}, 1.0, true);
  Tape tape;
  Tensor y = relu(tape, x);
  CHECK_THROWS_AS(tape.backward(y), Error);
  Tensor z = Tensor::scalar(3.0, false);
  Tape tape2;
  CHECK_THROWS_AS(tape2.backward(z), Error);
}

TEST_CASE("gradients accumulate until explicitly zeroed") {
  Tensor x({3}, {1.0, -2.0, 0.5}, true);
  for (int pass = 1; pass <= 2; ++pass) {
    Tape tape;
    Tensor loss = sum(tape, mul(tape, x, x));
    tape.backward(loss);
  }
  // d/dx sum(x*x) = 2x, accumulated twice
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-8.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("tensors reject non-finite values at construction") {
  CHECK_THROWS_AS(Tensor({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
  CHECK_THROWS_AS(Tensor({1}, std::numeric_limits<double>::infinity()), Error);
}

TEST_CASE("softmax rows sum to one even with an additive attention mask") {
  // The causal mask adds -1e9 to blocked positions; the result must stay
  // finite and normalized.
  Tensor x({2, 3}, {0.3, -1e9, -1e9, 1.2, 0.7, -1e9});
  Tape tape;
  Tensor s = softmax_rows(tape, x);
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) z += s.values()[i * 3 + j];
    CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(s.values()[1] == doctest::Approx(0.0));
  Tensor l = log_softmax(tape, x);
  for (double v : l.values()) CHECK(std::isfinite(v));
}
