#include <doctest.h>

#include <cmath>
#include <cstring>

#include "distilkit/grad_check.hpp"
#include "distilkit/tensor.hpp"
#include "test_util.hpp"

using namespace distilkit;
using testutil::random_matrix;
using testutil::to_mat;

TEST_CASE("matmul basics") {
  Tensor eye = Tensor::from_matrix(Matrix::Identity(2, 2));
  Tensor m = Tensor::from_matrix((Matrix(2, 2) << 5, 6, 7, 8).finished());
  CHECK(matmul(eye, m).value() == m.value());

  Tensor a = Tensor::from_matrix((Matrix(2, 2) << 1, 2, 3, 4).finished());
  Tensor b = Tensor::from_matrix((Matrix(2, 1) << 1, 1).finished());
  Matrix c = matmul(a, b).value();
  CHECK(c(0, 0) == 3.0);
  CHECK(c(1, 0) == 7.0);

  Tensor row = Tensor::from_matrix((Matrix(1, 2) << 1, 2).finished());
  CHECK_THROWS_AS(matmul(row, row), DimensionMismatch);
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Index m = 1 + static_cast<Index>(rng.uniform_int(6));
    Index k = 1 + static_cast<Index>(rng.uniform_int(6));
    Index n = 1 + static_cast<Index>(rng.uniform_int(6));
    Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
    Matrix got = matmul(Tensor::from_matrix(a), Tensor::from_matrix(b)).value();
    oracle::Mat want = oracle::matmul(to_mat(a), to_mat(b));
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j)
        CHECK(got(i, j) ==
              doctest::Approx(want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
                  .epsilon(1e-12));
  }
}

TEST_CASE("softmax") {
  Tensor flat = Tensor::from_matrix(Matrix::Zero(1, 3));
  Matrix sm = softmax(flat, 1).value();
  for (int j = 0; j < 3; ++j) CHECK(sm(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Tensor two = Tensor::from_matrix((Matrix(1, 2) << 0.0, std::log(2.0)).finished());
  Matrix got = softmax(two, 1).value();
  CHECK(got(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(got(0, 1) == doctest::Approx(2.0 / 3).epsilon(1e-14));

  SUBCASE("rows sum to one and shifts cancel") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix x = random_matrix(4, 5, rng, 3.0);
      Matrix y = softmax(Tensor::from_matrix(x), 1).value();
      for (Index i = 0; i < y.rows(); ++i)
        CHECK(std::abs(y.row(i).sum() - 1.0) <= 1e-12);
      double c = rng.normal(0.0, 10.0);
      Matrix shifted = softmax(Tensor::from_matrix((x.array() + c).matrix()), 1).value();
      CHECK((shifted - y).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("axis 0 matches transposed axis 1") {
    Rng rng(8);
    Matrix x = random_matrix(3, 4, rng);
    Matrix a0 = softmax(Tensor::from_matrix(x), 0).value();
    Matrix a1t = softmax(Tensor::from_matrix(Matrix(x.transpose())), 1).value().transpose();
    CHECK((a0 - a1t).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(softmax(flat, 2), InvalidAxis);
}

TEST_CASE("layer_norm") {
  Tensor gamma = Tensor::from_matrix(Matrix::Ones(1, 4));
  Tensor beta = Tensor::from_matrix(Matrix::Zero(1, 4));

  Tensor constant_row = Tensor::from_matrix(Matrix::Constant(1, 4, 5.0));
  Matrix zeroed = layer_norm(constant_row, gamma, beta, 1e-12).value();
  CHECK(zeroed.cwiseAbs().maxCoeff() == 0.0);

  Tensor pair = Tensor::from_matrix((Matrix(1, 2) << 1.0, 3.0).finished());
  Tensor g2 = Tensor::from_matrix(Matrix::Ones(1, 2));
  Tensor b2 = Tensor::from_matrix(Matrix::Zero(1, 2));
  Matrix normed = layer_norm(pair, g2, b2, 1e-15).value();
  CHECK(normed(0, 0) == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(normed(0, 1) == doctest::Approx(1.0).epsilon(1e-7));

  SUBCASE("gamma zero broadcasts beta") {
    Rng rng(3);
    Tensor x = Tensor::from_matrix(random_matrix(3, 4, rng));
    Tensor g0 = Tensor::from_matrix(Matrix::Zero(1, 4));
    Tensor b = Tensor::from_matrix(random_matrix(1, 4, rng));
    Matrix out = layer_norm(x, g0, b, 1e-9).value();
    for (Index i = 0; i < 3; ++i) CHECK((out.row(i) - b.value().row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("normalized rows have mean 0 and unit variance") {
    Rng rng(4);
    Matrix x = random_matrix(5, 8, rng, 2.0);
    Matrix out = layer_norm(Tensor::from_matrix(x), Tensor::from_matrix(Matrix::Ones(1, 8)),
                            Tensor::from_matrix(Matrix::Zero(1, 8)), 1e-12)
                     .value();
    for (Index i = 0; i < out.rows(); ++i) {
      double mu = out.row(i).mean();
      double var = (out.row(i).array() - mu).square().sum() / 8.0;
      CHECK(std::abs(mu) <= 1e-9);
      CHECK(std::abs(var - 1.0) <= 1e-6);
    }
  }
  CHECK_THROWS_AS(layer_norm(pair, gamma, beta, 1e-9), DimensionMismatch);
}

TEST_CASE("backward basics") {
  SUBCASE("sum of squares") {
    Tensor x = Tensor::from_matrix((Matrix(1, 2) << 1.0, -2.0).finished(), true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
    CHECK(x.grad()(0, 1) == doctest::Approx(-4.0));
  }
  SUBCASE("disconnected leaf keeps no gradient") {
    Tensor x = Tensor::from_matrix(Matrix::Ones(1, 2), true);
    Tensor y = Tensor::from_matrix(Matrix::Ones(1, 2), true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK_FALSE(y.has_grad());
  }
  SUBCASE("repeated backward accumulates until grads are zeroed") {
    Tensor x = Tensor::from_matrix(Matrix::Ones(1, 3), true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad()(0, 0) == doctest::Approx(4.0));
    x.zero_grad();
    tape.backward(loss);
    CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
  }
  SUBCASE("gradient linearity over summed losses") {
    Rng rng(11);
    Tensor x = Tensor::from_matrix(random_matrix(2, 3, rng), true);
    Matrix grad_sum, grad_parts;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor l = add(sum(mul(x, x)), mean(gelu(x)));
      tape.backward(l);
      grad_sum = x.grad();
    }
    x.zero_grad();
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(mul(x, x)));
      tape.backward(mean(gelu(x)));
      grad_parts = x.grad();
    }
    CHECK((grad_sum - grad_parts).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("error paths") {
    Tensor x = Tensor::from_matrix(Matrix::Ones(2, 2), true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), NonScalarLoss);
    Tensor stray = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(stray), DetachedGraph);
    CHECK_THROWS_AS(Tensor::scalar(2.0).backward(), DetachedGraph);
  }
}

TEST_CASE("matmul chain MSE gradients match finite differences") {
  Rng rng(21);
  Tensor a = Tensor::from_matrix(random_matrix(3, 3, rng), true);
  Tensor b = Tensor::from_matrix(random_matrix(3, 3, rng), true);
  Tensor target = Tensor::from_matrix(random_matrix(3, 3, rng));
  ScalarFn f = [&](const std::vector<Tensor>& in) {
    return mse(matmul(in[0], in[1]), target);
  };
  CheckReport report = grad_check(f, {a, b}, 1e-5, 1e-4);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("every primitive op passes grad_check across seeds") {
  auto check_op = [](const char* name, const ScalarFn& f, const std::vector<Tensor>& inputs) {
    CheckReport report = grad_check(f, inputs, 1e-5, 1e-4);
    INFO(name, " max rel err ", report.max_rel_err);
    CHECK(report.pass);
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Index r = 2 + static_cast<Index>(rng.uniform_int(4));
    Index c = 2 + static_cast<Index>(rng.uniform_int(4));
    Tensor w = Tensor::from_matrix(random_matrix(r, c, rng));
    Tensor x = Tensor::from_matrix(random_matrix(r, c, rng), true);
    Tensor y = Tensor::from_matrix(random_matrix(r, c, rng), true);
    auto weighted = [&w](const Tensor& t) { return sum(mul(t, w)); };

    check_op("add", [&](const std::vector<Tensor>& in) { return weighted(add(in[0], in[1])); },
             {x, y});
    check_op("sub", [&](const std::vector<Tensor>& in) { return weighted(sub(in[0], in[1])); },
             {x, y});
    check_op("mul", [&](const std::vector<Tensor>& in) { return weighted(mul(in[0], in[1])); },
             {x, y});
    Tensor row = Tensor::from_matrix(random_matrix(1, c, rng), true);
    check_op("add_row",
             [&](const std::vector<Tensor>& in) { return weighted(add_row(in[0], in[1])); },
             {x, row});
    check_op("add_scalar",
             [&](const std::vector<Tensor>& in) { return weighted(add_scalar(in[0], 1.7)); }, {x});
    check_op("scale", [&](const std::vector<Tensor>& in) { return weighted(scale(in[0], -2.3)); },
             {x});
    Tensor s = Tensor::from_matrix(Matrix::Constant(1, 1, 0.7 + rng.uniform()), true);
    check_op("scale_by",
             [&](const std::vector<Tensor>& in) { return weighted(scale_by(in[0], in[1])); },
             {x, s});
    check_op("recip", [&](const std::vector<Tensor>& in) { return sum(recip(in[0])); }, {s});
    Tensor pos = Tensor::from_matrix((random_matrix(r, c, rng).array().abs() + 0.5).matrix(), true);
    check_op("sqrt", [&](const std::vector<Tensor>& in) { return weighted(sqrt(in[0])); }, {pos});
    check_op("log_floor",
             [&](const std::vector<Tensor>& in) { return weighted(log_floor(in[0], 1e-12)); },
             {pos});
    Tensor a = Tensor::from_matrix(random_matrix(r, 3, rng), true);
    Tensor b = Tensor::from_matrix(random_matrix(3, c, rng), true);
    check_op("matmul",
             [&](const std::vector<Tensor>& in) { return weighted(matmul(in[0], in[1])); },
             {a, b});
    Tensor wt = Tensor::from_matrix(random_matrix(c, r, rng));
    check_op("transpose",
             [&](const std::vector<Tensor>& in) { return sum(mul(transpose(in[0]), wt)); }, {x});
    check_op("softmax1",
             [&](const std::vector<Tensor>& in) { return weighted(softmax(in[0], 1)); }, {x});
    check_op("softmax0",
             [&](const std::vector<Tensor>& in) { return weighted(softmax(in[0], 0)); }, {x});
    check_op("log_softmax",
             [&](const std::vector<Tensor>& in) { return weighted(log_softmax(in[0], 1)); }, {x});
    Tensor gamma = Tensor::from_matrix(random_matrix(1, c, rng), true);
    Tensor beta = Tensor::from_matrix(random_matrix(1, c, rng), true);
    check_op("layer_norm",
             [&](const std::vector<Tensor>& in) {
               return weighted(layer_norm(in[0], in[1], in[2], 1e-5));
             },
             {x, gamma, beta});
    check_op("gelu", [&](const std::vector<Tensor>& in) { return weighted(gelu(in[0])); }, {x});
    check_op("sum", [&](const std::vector<Tensor>& in) { return sum(in[0]); }, {x});
    check_op("mean", [&](const std::vector<Tensor>& in) { return mean(in[0]); }, {x});
    std::vector<Index> ridx{0, r - 1, 0};
    Tensor wr = Tensor::from_matrix(random_matrix(3, c, rng));
    check_op("select_rows",
             [&](const std::vector<Tensor>& in) { return sum(mul(select_rows(in[0], ridx), wr)); },
             {x});
    std::vector<Index> cidx{c - 1, 0};
    Tensor wc = Tensor::from_matrix(random_matrix(r, 2, rng));
    check_op("select_cols",
             [&](const std::vector<Tensor>& in) { return sum(mul(select_cols(in[0], cidx), wc)); },
             {x});
    Tensor wcat = Tensor::from_matrix(random_matrix(r, 2 * c, rng));
    check_op("concat_cols",
             [&](const std::vector<Tensor>& in) {
               return sum(mul(concat_cols({in[0], in[1]}), wcat));
             },
             {x, y});
  }
}

TEST_CASE("grad_check harness") {
  SUBCASE("exactly linear function has zero error") {
    Tensor x = Tensor::from_matrix(Matrix::Ones(2, 3), true);
    CheckReport report =
        grad_check([](const std::vector<Tensor>& in) { return sum(in[0]); }, {x}, 1e-5, 1e-4);
    CHECK(report.max_rel_err == 0.0);
  }
  SUBCASE("planted 2x backward fails") {
    // hand-registered op with a doubled gradient
    auto buggy_double = [](const Tensor& x) {
      Tensor out = Tensor::from_matrix(x.value());
      Tape* tape = Tape::current();
      if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        int ix = tape->ensure_id(x), io = tape->ensure_id(out);
        auto xn = x.shared_node();
        tape->push_record({OpKind::Scale,
                           {ix},
                           io,
                           [ix, io](Tape& t) { t.adj_add(ix, 2.0 * t.adj(io)); },
                           [xn]() -> Matrix { return xn->value; }});
      }
      return out;
    };
    Rng rng(5);
    Tensor x = Tensor::from_matrix(random_matrix(2, 2, rng), true);
    CheckReport report = grad_check(
        [&](const std::vector<Tensor>& in) { return sum(buggy_double(in[0])); }, {x}, 1e-5, 1e-4);
    CHECK_FALSE(report.pass);
  }
  SUBCASE("nondeterministic function is rejected") {
    Tensor x = Tensor::from_matrix(Matrix::Ones(1, 1), true);
    int calls = 0;
    ScalarFn flaky = [&calls](const std::vector<Tensor>& in) {
      ++calls;
      return add_scalar(sum(in[0]), static_cast<double>(calls));
    };
    CHECK_THROWS_AS(grad_check(flaky, {x}, 1e-5, 1e-4), NonDeterministicFunction);
  }
}

TEST_CASE("forward replay is deterministic") {
  Rng rng(17);
  Tensor x = Tensor::from_matrix(random_matrix(4, 6, rng), true);
  Tensor w = Tensor::from_matrix(random_matrix(6, 6, rng), true);
  Tape tape;
  TapeScope scope(tape);
  Tensor out = softmax(matmul(gelu(x), w), 1);
  Tensor loss = mean(out);
  (void)loss;
  CHECK(tape.replay_check());

  // two independent forward passes agree bitwise
  Matrix first, second;
  {
    NoGradScope no_grad;
    first = softmax(matmul(gelu(x), w), 1).value();
    second = softmax(matmul(gelu(x), w), 1).value();
  }
  CHECK(std::memcmp(first.data(), second.data(),
                    sizeof(Scalar) * static_cast<std::size_t>(first.size())) == 0);
}

TEST_CASE("tensor shape invariants") {
  Tensor t = Tensor::zeros(3, 4);
  CHECK(t.shape() == std::vector<Index>{3, 4});
  CHECK(t.size() == 12);
  Tensor d = t.detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.node() != t.node());
  CHECK(d.value() == t.value());
}
