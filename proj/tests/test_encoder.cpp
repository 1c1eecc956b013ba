#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "nst/encoder.hpp"

using namespace nst;

namespace {

// Independent straight-line forward pass for a 1-layer, 1-head encoder,
// written against the block structure directly.
std::vector<double> naive_forward(const EncoderParams<double>& p, const std::vector<int>& ids) {
  int L = static_cast<int>(ids.size());
  int d = p.cfg.d_model;
  int dff = p.cfg.d_ff;
  auto ln = [&](const std::vector<double>& x, const Tensor<double>& g, const Tensor<double>& b) {
    std::vector<double> y(x.size());
    for (int i = 0; i < L; ++i) {
      double mu = 0.0, var = 0.0;
      for (int j = 0; j < d; ++j) mu += x[i * d + j];
      mu /= d;
      for (int j = 0; j < d; ++j) var += (x[i * d + j] - mu) * (x[i * d + j] - mu);
      var /= d;
      double is = 1.0 / std::sqrt(var + 1e-5);
      for (int j = 0; j < d; ++j)
        y[i * d + j] = g.w[j] * (x[i * d + j] - mu) * is + b.w[j];
    }
    return y;
  };
  auto affine = [&](const std::vector<double>& x, const Tensor<double>& w,
                    const Tensor<double>& b, int in, int out) {
    std::vector<double> y(static_cast<size_t>(L) * out, 0.0);
    for (int i = 0; i < L; ++i)
      for (int o = 0; o < out; ++o) {
        double acc = b.w[o];
        for (int k = 0; k < in; ++k) acc += x[i * in + k] * w.w[static_cast<size_t>(k) * out + o];
        y[static_cast<size_t>(i) * out + o] = acc;
      }
    return y;
  };

  std::vector<double> x(static_cast<size_t>(L) * d);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < d; ++j)
      x[i * d + j] = p.tok_emb.w[static_cast<size_t>(ids[i]) * d + j] + p.pos_emb.w[i * d + j];

  const auto& lp = p.layers[0];
  std::vector<double> x1 = ln(x, lp.ln1_g, lp.ln1_b);
  std::vector<double> q = affine(x1, lp.wq, lp.bq, d, d);
  std::vector<double> k = affine(x1, lp.wk, lp.bk, d, d);
  std::vector<double> v = affine(x1, lp.wv, lp.bv, d, d);

  std::vector<double> att(static_cast<size_t>(L) * d, 0.0);
  for (int i = 0; i < L; ++i) {
    std::vector<double> s(L);
    double mx = -1e30;
    for (int j = 0; j < L; ++j) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += q[i * d + c] * k[j * d + c];
      s[j] = acc / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (int j = 0; j < L; ++j) {
      s[j] = std::exp(s[j] - mx);
      z += s[j];
    }
    for (int j = 0; j < L; ++j)
      for (int c = 0; c < d; ++c) att[i * d + c] += (s[j] / z) * v[j * d + c];
  }
  std::vector<double> proj = affine(att, lp.wo, lp.bo, d, d);
  std::vector<double> h2(x.size());
  for (size_t i = 0; i < x.size(); ++i) h2[i] = x[i] + proj[i];

  std::vector<double> x2 = ln(h2, lp.ln2_g, lp.ln2_b);
  std::vector<double> u = affine(x2, lp.w1, lp.b1, d, dff);
  for (auto& e : u) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
  std::vector<double> f = affine(u, lp.w2, lp.b2, dff, d);
  std::vector<double> h3(h2.size());
  for (size_t i = 0; i < h2.size(); ++i) h3[i] = h2[i] + f[i];

  return ln(h3, p.lnf_g, p.lnf_b);
}

EncoderParams<double> tiny_params(int layers, int heads, int d, int dff, int vocab, uint64_t seed) {
  EncoderConfig cfg;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.d_model = d;
  cfg.d_ff = dff;
  cfg.max_len = 16;
  cfg.dropout = 0.0;
  EncoderParams<double> p;
  rng::Engine eng(seed);
  p.init(cfg, vocab, eng);
  return p;
}

}  // namespace

TEST_CASE("evaluation-mode forward is deterministic and well-shaped") {
  EncoderParams<double> p = tiny_params(2, 2, 8, 16, 12, 3);
  std::vector<int> ids = {0, 5, 3, 7, 1};
  EncoderTrace<double> a, b;
  encoder_forward(p, std::span<const int>(ids), a);
  encoder_forward(p, std::span<const int>(ids), b);
  CHECK(a.h == b.h);
  CHECK(a.h.size() == ids.size() * 8);
  CHECK(a.len == 5);
}

TEST_CASE("forward matches a naive single-layer recomputation") {
  EncoderParams<double> p = tiny_params(1, 1, 4, 8, 6, 11);
  std::vector<int> ids = {2, 5};
  EncoderTrace<double> trace;
  encoder_forward(p, std::span<const int>(ids), trace);
  std::vector<double> expected = naive_forward(p, ids);
  REQUIRE(trace.h.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i)
    CHECK(trace.h[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("self-attention probabilities are row-stochastic") {
  EncoderParams<double> p = tiny_params(2, 2, 8, 16, 12, 5);
  std::vector<int> ids = {1, 2, 3, 4};
  EncoderTrace<double> trace;
  encoder_forward(p, std::span<const int>(ids), trace);
  for (const auto& layer : trace.layers) {
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 4; ++j) {
          double pr = layer.probs[static_cast<size_t>(h) * 16 + i * 4 + j];
          CHECK(pr >= 0.0);
          sum += pr;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("positional embeddings make the encoder permutation-sensitive") {
  EncoderParams<double> p = tiny_params(1, 1, 8, 16, 12, 7);
  std::vector<int> ids = {4, 9, 2};
  std::vector<int> swapped = {9, 4, 2};
  EncoderTrace<double> a, b;
  encoder_forward(p, std::span<const int>(ids), a);
  encoder_forward(p, std::span<const int>(swapped), b);
  double diff = 0.0;
  for (size_t i = 0; i < a.h.size(); ++i) diff += std::abs(a.h[i] - b.h[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("length and id violations are rejected") {
  EncoderParams<double> p = tiny_params(1, 1, 4, 8, 6, 1);
  std::vector<int> too_long(17, 1);
  EncoderTrace<double> trace;
  CHECK_THROWS_AS(encoder_forward(p, std::span<const int>(too_long), trace), Error);
  std::vector<int> bad_id = {0, 6};
  CHECK_THROWS_AS(encoder_forward(p, std::span<const int>(bad_id), trace), Error);
  std::vector<int> empty;
  CHECK_THROWS_AS(encoder_forward(p, std::span<const int>(empty), trace), Error);
}

TEST_CASE("encoder gradients match central finite differences") {
  EncoderParams<double> p = tiny_params(1, 1, 8, 16, 10, 17);
  std::vector<int> ids = {1, 4, 2, 7, 7};
  size_t out_size = ids.size() * 8;

  // probe loss: sum(H * R) for a fixed random R
  std::vector<double> probe(out_size);
  rng::Engine eng(99);
  for (auto& r : probe) r = eng.normal();

  auto loss_of = [&]() {
    EncoderTrace<double> t;
    encoder_forward(p, std::span<const int>(ids), t);
    double acc = 0.0;
    for (size_t i = 0; i < out_size; ++i) acc += t.h[i] * probe[i];
    return acc;
  };

  EncoderTrace<double> trace;
  encoder_forward(p, std::span<const int>(ids), trace);
  std::vector<ParamRef<double>> refs;
  p.collect("enc", ParamGroup::Encoder, refs);
  for (auto& r : refs) r.tensor->zero_grad();
  encoder_backward(p, std::span<const int>(ids), trace, probe);

  size_t checked = 0, failed = 0;
  for (auto& ref : refs) {
    for (size_t k = 0; k < ref.tensor->size(); ++k) {
      double saved = ref.tensor->w[k];
      double h = 1e-5 * std::max(1.0, std::abs(saved));
      ref.tensor->w[k] = saved + h;
      double lp = loss_of();
      ref.tensor->w[k] = saved - h;
      double lm = loss_of();
      ref.tensor->w[k] = saved;
      double fd = (lp - lm) / (2.0 * h);
      double an = ref.tensor->g[k];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4});
      if (rel >= 1e-4) ++failed;
      ++checked;
    }
  }
  CHECK(checked > 500);
  CHECK(failed == 0);
}
