#include <doctest.h>

#include <cmath>
#include <vector>

#include "kat/gradcheck.hpp"
#include "kat/kernels.hpp"
#include "kat/rng.hpp"
#include "kat/tensor.hpp"

using namespace kat;
using namespace kat::kernels;

namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from_data({n}, std::move(v));
}

KernelSpec spec_of(KernelKind kind, int d, double tau = 1.0, double gamma = 0.0) {
  return make_spec(kind, d, tau, gamma, true);
}

}  // namespace

TEST_CASE("kernel kind names round-trip") {
  for (KernelKind k : kAllKinds) {
    auto parsed = kind_from_name(kind_name(k));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == k);
  }
  CHECK_FALSE(kind_from_name("cubic").has_value());
}

TEST_CASE("kernel_eval closed forms") {
  CHECK(kernel_eval(spec_of(KernelKind::EDP, 1), vec({1}), vec({1})).item() ==
        doctest::Approx(std::exp(1.0)).epsilon(1e-12));

  for (double tau : {0.25, 1.0, 3.0}) {
    Tensor q = vec({0.3, -0.7, 1.1});
    CHECK(kernel_eval(spec_of(KernelKind::RBF, 3, tau), q, q).item() ==
          doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(kernel_eval(spec_of(KernelKind::RBF, 1), vec({0}), vec({2})).item() ==
        doctest::Approx(std::exp(-4.0)).epsilon(1e-12));

  CHECK(kernel_eval(spec_of(KernelKind::L2, 4), vec({0, 0, 0, 0}), vec({1, 1, 1, 1})).item() ==
        doctest::Approx(1.0).epsilon(1e-12));

  CHECK(kernel_eval(spec_of(KernelKind::ExpIntersection, 2), vec({1, 2}), vec({2, 1})).item() ==
        doctest::Approx(std::exp(2.0)).epsilon(1e-12));

  // d=4 with q.k = 2 and gamma = 0: (2/2 + 0)^2 = 1
  CHECK(kernel_eval(spec_of(KernelKind::Quadratic, 4), vec({1, 1, 0, 0}), vec({1, 1, 0, 0})).item() ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kernel_eval rejects mismatched lengths and bad specs") {
  CHECK_THROWS_AS(kernel_eval(spec_of(KernelKind::EDP, 3), vec({1, 2}), vec({1, 2, 3})),
                  std::invalid_argument);
  KernelSpec broken = spec_of(KernelKind::EDP, 2);
  broken.theta_tau = Tensor::scalar(0.0);
  CHECK_THROWS_AS(kernel_eval(broken, vec({1, 2}), vec({1, 2})), std::invalid_argument);
  CHECK_THROWS_AS(make_spec(KernelKind::RBF, 2, -1.0), std::invalid_argument);
}

TEST_CASE("tau stays positive under arbitrary theta") {
  KernelSpec spec = spec_of(KernelKind::RBF, 2, 1.0);
  for (double theta : {-25.0, -1.0, 0.0, 4.0}) {
    spec.theta_tau.data_mut()[0] = theta;
    CHECK(spec.tau() > 0.0);
    const double val = kernel_eval(spec, vec({0.4, -0.2}), vec({-1.0, 0.6})).item();
    CHECK(val >= 0.0);
    CHECK(std::isfinite(val));
  }
}

TEST_CASE("non-negativity on random inputs for the whole catalog") {
  Rng rng(31);
  for (KernelKind kind : kAllKinds) {
    KernelSpec spec = spec_of(kind, 6, 0.7, -0.4);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor q = randu(rng, {6}, -3.0, 3.0);
      Tensor k = randu(rng, {6}, -3.0, 3.0);
      const double val = kernel_eval(spec, q, k).item();
      CHECK(val >= 0.0);
      CHECK(std::isfinite(val));
    }
  }
}

TEST_CASE("symmetry: swapping arguments leaves every catalog kernel unchanged") {
  Rng rng(32);
  for (KernelKind kind : kAllKinds) {
    KernelSpec spec = spec_of(kind, 5, 1.3, 0.8);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor q = randu(rng, {5}, -2.0, 2.0);
      Tensor k = randu(rng, {5}, -2.0, 2.0);
      CHECK(kernel_eval(spec, q, k).item() ==
            doctest::Approx(kernel_eval(spec, k, q).item()).epsilon(1e-15));
    }
  }
}

TEST_CASE("cross_gram matches looped kernel_eval bit for bit") {
  Rng rng(33);
  for (KernelKind kind : kAllKinds) {
    KernelSpec spec = spec_of(kind, 2, 0.8, 0.3);
    Tensor queries = randu(rng, {3, 2}, -1.5, 1.5);
    Tensor keys = randu(rng, {2, 2}, -1.5, 1.5);
    Tensor gram = cross_gram(spec, queries, keys);
    REQUIRE(gram.shape() == Shape{3, 2});
    for (std::size_t i = 0; i < 3; ++i) {
      Tensor q = select_rows(queries, {i});
      for (std::size_t j = 0; j < 2; ++j) {
        Tensor k = select_rows(keys, {j});
        const double looped = kernel_eval(spec, reshape(q, {2}), reshape(k, {2})).item();
        CHECK(gram.at(i, j) == looped);  // exact: same arithmetic
      }
    }
  }
}

TEST_CASE("cross_gram trivial cases") {
  KernelSpec spec = spec_of(KernelKind::EDP, 3);
  Tensor q = Tensor::zeros({4, 3});
  Tensor k = Tensor::zeros({2, 3});
  Tensor gram = cross_gram(spec, q, k);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) CHECK(gram.at(i, j) == 1.0);
  }

  // T = S = 1 reduces to kernel_eval
  Rng rng(34);
  Tensor q1 = randu(rng, {1, 3}, -1, 1);
  Tensor k1 = randu(rng, {1, 3}, -1, 1);
  CHECK(cross_gram(spec, q1, k1).at(0, 0) ==
        kernel_eval(spec, reshape(q1, {3}), reshape(k1, {3})).item());

  CHECK_THROWS_AS(cross_gram(spec, Tensor::zeros({2, 4}), Tensor::zeros({2, 3})),
                  std::invalid_argument);
}

TEST_CASE("normalize_rows hand examples") {
  Tensor w = kernels::normalize_rows(Tensor::from_data({1, 4}, {1, 1, 1, 1}), std::nullopt);
  for (std::size_t j = 0; j < 4; ++j) CHECK(w.at(0, j) == doctest::Approx(0.25).epsilon(1e-15));

  Tensor w2 = kernels::normalize_rows(Tensor::from_data({1, 3}, {2, 0, 0}), std::nullopt);
  CHECK(w2.at(0, 0) == doctest::Approx(1.0));
  CHECK(w2.at(0, 1) == 0.0);
  CHECK(w2.at(0, 2) == 0.0);

  // softmax identity: EDP values exp(a), exp(a + ln 2) normalize to 1/3, 2/3
  const double a = 0.37;
  Tensor w3 = kernels::normalize_rows(
      Tensor::from_data({1, 2}, {std::exp(a), std::exp(a + std::log(2.0))}), std::nullopt);
  CHECK(w3.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(w3.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("normalize_rows errors and fallbacks") {
  CHECK_THROWS_AS(kernels::normalize_rows(Tensor::from_data({1, 2}, {1.0, -0.5}), std::nullopt),
                  std::domain_error);

  std::vector<std::uint8_t> mask = {0, 0, 0};
  CHECK_THROWS_AS(kernels::normalize_rows(Tensor::from_data({1, 3}, {1, 2, 3}), mask),
                  std::domain_error);

  // all-zero row falls back to uniform weights over valid entries
  std::vector<std::uint8_t> partial = {1, 0, 1, 1};
  Tensor w = kernels::normalize_rows(Tensor::from_data({1, 4}, {0, 5, 0, 0}), partial);
  CHECK(w.at(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(w.at(0, 1) == 0.0);
  CHECK(w.at(0, 2) == doctest::Approx(1.0 / 3.0));
  CHECK(w.at(0, 3) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("EDP weights equal softmax to 1e-12 on random grams") {
  Rng rng(35);
  const int d = 8;
  KernelSpec spec = spec_of(KernelKind::EDP, d);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor queries = randu(rng, {5, d}, -1.0, 1.0);
    Tensor keys = randu(rng, {7, d}, -1.0, 1.0);
    Tensor weights = kernels::normalize_rows(cross_gram(spec, queries, keys), std::nullopt);
    // independent softmax of q.k/sqrt(d) with max subtraction
    for (std::size_t i = 0; i < 5; ++i) {
      double logits[7];
      double m = -1e300;
      for (std::size_t j = 0; j < 7; ++j) {
        double dot = 0.0;
        for (int l = 0; l < d; ++l) {
          dot += queries.at(i, static_cast<std::size_t>(l)) * keys.at(j, static_cast<std::size_t>(l));
        }
        logits[j] = dot / std::sqrt(static_cast<double>(d));
        m = std::max(m, logits[j]);
      }
      double denom = 0.0;
      for (double l : logits) denom += std::exp(l - m);
      for (std::size_t j = 0; j < 7; ++j) {
        const double softmax = std::exp(logits[j] - m) / denom;
        CHECK(weights.at(i, j) == doctest::Approx(softmax).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("RBF at tau=1/2 is the normalized exponentiated dot product") {
  Rng rng(36);
  const int d = 5;
  KernelSpec rbf = spec_of(KernelKind::RBF, d, 0.5);
  KernelSpec edp = spec_of(KernelKind::EDP, d);
  const double root_d = std::sqrt(static_cast<double>(d));
  for (int trial = 0; trial < 30; ++trial) {
    Tensor q = randu(rng, {d}, -1.5, 1.5);
    Tensor k = randu(rng, {d}, -1.5, 1.5);
    double qq = 0.0, kk = 0.0;
    for (int l = 0; l < d; ++l) {
      qq += q.at(static_cast<std::size_t>(l)) * q.at(static_cast<std::size_t>(l));
      kk += k.at(static_cast<std::size_t>(l)) * k.at(static_cast<std::size_t>(l));
    }
    const double expected = kernel_eval(edp, q, k).item() * std::exp(-qq / (2.0 * root_d)) *
                            std::exp(-kk / (2.0 * root_d));
    CHECK(kernel_eval(rbf, q, k).item() == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("grad_check passes for every kernel through both evaluation routes") {
  Rng rng(37);
  const int d = 4;
  for (KernelKind kind : kAllKinds) {
    CAPTURE(kind_name(kind));
    for (int trial = 0; trial < 20; ++trial) {
      KernelSpec spec = spec_of(kind, d, rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0));
      std::vector<Tensor> scalars = scalar_params(spec);

      // route 1: composed primitives on vectors
      {
        std::vector<Tensor> inputs = {randu(rng, {d}, -1.2, 1.2), randu(rng, {d}, -1.2, 1.2)};
        for (const Tensor& s : scalars) inputs.push_back(s.detached());
        auto f = [&](const std::vector<Tensor>& in) {
          KernelSpec probe = spec;
          if (spec.theta_tau.valid()) probe.theta_tau = in[2];
          if (spec.gamma.valid()) probe.gamma = in[2];
          return kernel_eval(probe, in[0], in[1]);
        };
        auto report = grad_check(f, inputs, 1e-5, 1e-5);
        CHECK(report.passed);
      }
      // route 2: the fused cross-Gram node
      {
        std::vector<Tensor> inputs = {randu(rng, {3, d}, -1.2, 1.2), randu(rng, {2, d}, -1.2, 1.2)};
        for (const Tensor& s : scalars) inputs.push_back(s.detached());
        auto f = [&](const std::vector<Tensor>& in) {
          KernelSpec probe = spec;
          if (spec.theta_tau.valid()) probe.theta_tau = in[2];
          if (spec.gamma.valid()) probe.gamma = in[2];
          Rng r(7);
          Tensor w = randu(r, {3, 2}, 0.5, 1.5);
          return sum(multiply(cross_gram(probe, in[0], in[1]), w));
        };
        auto report = grad_check(f, inputs, 1e-5, 1e-5);
        CHECK(report.passed);
      }
    }
  }
}

TEST_CASE("normalize_rows gradient (with and without mask)") {
  Rng rng(38);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor kmat = randu(rng, {3, 4}, 0.1, 2.0);
    auto f_plain = [](const std::vector<Tensor>& in) {
      Rng r(9);
      Tensor w = randu(r, {3, 4}, 0.5, 1.5);
      return sum(multiply(kernels::normalize_rows(in[0], std::nullopt), w));
    };
    CHECK(grad_check(f_plain, {kmat}, 1e-6, 1e-5).passed);

    std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0};
    auto f_masked = [&mask](const std::vector<Tensor>& in) {
      Rng r(9);
      Tensor w = randu(r, {3, 4}, 0.5, 1.5);
      return sum(multiply(kernels::normalize_rows(in[0], mask), w));
    };
    CHECK(grad_check(f_masked, {kmat}, 1e-6, 1e-5).passed);
  }
}
