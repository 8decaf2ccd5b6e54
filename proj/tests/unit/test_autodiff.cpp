#include <doctest.h>

#include <functional>

#include "helpers.hpp"
#include "sgec/autodiff.hpp"

using namespace sgec;
using ad::Tape;
using ad::Tensor;

namespace {

// Contracts a tensor with a fixed random weight so every output entry
// contributes a distinct coefficient to the scalar.
Tensor project(const Tensor& t, std::uint64_t seed = 99) {
  return ad::sum(ad::mul(t, Tensor(test::random_matrix(t.rows(), t.cols(), seed))));
}

struct UnaryCase {
  const char* name;
  std::function<Tensor(const Tensor&)> op;
  Index rows, cols;
  enum Domain { kAny, kAwayFromZero, kPositive } domain;
};

Matrix sample(const UnaryCase& c, std::uint64_t seed) {
  switch (c.domain) {
    case UnaryCase::kAwayFromZero: return test::random_away_from_zero(c.rows, c.cols, seed);
    case UnaryCase::kPositive: return test::random_matrix(c.rows, c.cols, seed, 0.1, 2.0);
    default: return test::random_matrix(c.rows, c.cols, seed);
  }
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("forward examples") {
    const Matrix x = test::random_matrix(3, 4, 1);
    CHECK(ad::matmul(Tensor(Matrix::Identity(3, 3)), Tensor(x)).value() == x);

    const Matrix pos = test::random_matrix(3, 4, 2, 0.1, 3.0);
    CHECK((ad::exp(ad::log(Tensor(pos))).value() - pos).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(ad::matmul(Tensor(Matrix::Zero(2, 3)), Tensor(Matrix::Zero(2, 3))), ShapeError);
    CHECK_THROWS_AS(ad::add(Tensor(Matrix::Zero(2, 3)), Tensor(Matrix::Zero(3, 2))), ShapeError);
    CHECK_THROWS(ad::log(Tensor(Matrix::Constant(1, 1, -1.0))));
    CHECK_THROWS(ad::div(Tensor(Matrix::Ones(1, 1)), Tensor(Matrix::Zero(1, 1))));
  }

  TEST_CASE("backward examples") {
    SUBCASE("sum gives ones") {
      Tape tape;
      Tensor x = tape.variable(test::random_matrix(2, 3, 3));
      tape.backward(ad::sum(x));
      CHECK(x.grad() == Matrix::Ones(2, 3));
    }
    SUBCASE("sum of squares") {
      Tape tape;
      Matrix v(1, 2);
      v << 1.0, 2.0;
      Tensor x = tape.variable(v);
      tape.backward(ad::sum(ad::mul(x, x)));
      CHECK(x.grad()(0, 0) == 2.0);
      CHECK(x.grad()(0, 1) == 4.0);
    }
    SUBCASE("reuse accumulates") {
      Tape tape;
      Tensor x = tape.variable(Matrix::Constant(1, 1, 3.0));
      tape.backward(ad::sum(ad::add(x, x)));
      CHECK(x.grad()(0, 0) == 2.0);
    }
    SUBCASE("untracked loss is rejected") {
      Tape tape;
      CHECK_THROWS(tape.backward(Tensor::scalar(1.0)));
    }
    SUBCASE("non-scalar loss is rejected") {
      Tape tape;
      Tensor x = tape.variable(Matrix::Ones(2, 2));
      CHECK_THROWS(tape.backward(ad::scale(x, 2.0)));
    }
    SUBCASE("stop_gradient blocks flow") {
      Tape tape;
      Tensor x = tape.variable(Matrix::Constant(1, 1, 2.0));
      tape.backward(ad::sum(ad::add(ad::mul(x, ad::stop_gradient(x)), x)));
      CHECK(x.grad()(0, 0) == 3.0);
    }
    SUBCASE("param binding accumulates across uses") {
      Tape tape;
      Matrix w = Matrix::Constant(1, 1, 4.0);
      Tensor a = tape.param(w);
      Tensor b = tape.param(w);
      tape.backward(ad::sum(ad::mul(a, b)));
      CHECK(tape.grad_of(w)(0, 0) == 8.0);
    }
  }

  TEST_CASE("finite differences on the documented examples") {
    CHECK(ad::finite_diff_check([](Tape&, const Tensor& x) { return ad::sum(ad::mul(x, x)); },
                                test::random_matrix(3, 3, 4)) < 1e-7);
    const double err = ad::finite_diff_check(
        [](Tape&, const Tensor& x) {
          const std::vector<Index> first{0};
          return ad::sum(ad::transpose(ad::gather_rows(ad::transpose(ad::row_softmax(x)), first)));
        },
        test::random_matrix(4, 3, 5));
    CHECK(err < 1e-5);
  }

  TEST_CASE("finite_diff_check rejects non-scalar functions") {
    CHECK_THROWS(ad::finite_diff_check([](Tape&, const Tensor& x) { return x; }, Matrix::Ones(2, 2)));
  }

  TEST_CASE("every unary and shape op passes finite differences on 10 seeds") {
    const std::vector<Index> rows{2, 0, 2, 1};
    const std::vector<UnaryCase> cases{
        {"transpose", [](const Tensor& a) { return ad::transpose(a); }, 3, 4, UnaryCase::kAny},
        {"scale", [](const Tensor& a) { return ad::scale(a, -1.7); }, 3, 4, UnaryCase::kAny},
        {"add_scalar", [](const Tensor& a) { return ad::add_scalar(a, 0.3); }, 3, 4, UnaryCase::kAny},
        {"neg", [](const Tensor& a) { return ad::neg(a); }, 3, 4, UnaryCase::kAny},
        {"exp", [](const Tensor& a) { return ad::exp(a); }, 3, 4, UnaryCase::kAny},
        {"log", [](const Tensor& a) { return ad::log(a); }, 3, 4, UnaryCase::kPositive},
        {"abs", [](const Tensor& a) { return ad::abs(a); }, 3, 4, UnaryCase::kAwayFromZero},
        {"relu", [](const Tensor& a) { return ad::relu(a); }, 3, 4, UnaryCase::kAwayFromZero},
        {"leaky_relu", [](const Tensor& a) { return ad::leaky_relu(a, 0.2); }, 3, 4, UnaryCase::kAwayFromZero},
        {"row_softmax", [](const Tensor& a) { return ad::row_softmax(a); }, 3, 4, UnaryCase::kAny},
        {"sum_rows", [](const Tensor& a) { return ad::sum_rows(a); }, 3, 4, UnaryCase::kAny},
        {"sum_cols", [](const Tensor& a) { return ad::sum_cols(a); }, 3, 4, UnaryCase::kAny},
        {"sum", [](const Tensor& a) { return ad::sum(a); }, 3, 4, UnaryCase::kAny},
        {"mean", [](const Tensor& a) { return ad::mean(a); }, 3, 4, UnaryCase::kAny},
        {"gather_rows", [rows](const Tensor& a) { return ad::gather_rows(a, rows); }, 3, 4, UnaryCase::kAny},
        {"scatter_add_rows", [rows](const Tensor& a) { return ad::scatter_add_rows(a, rows, 5); }, 4, 3,
         UnaryCase::kAny},
        {"sparse_matmul",
         [](const Tensor& a) {
           SparseMatrix s = test::random_matrix(5, 3, 17).sparseView();
           return ad::sparse_matmul(s, a);
         },
         3, 4, UnaryCase::kAny},
    };
    for (const auto& c : cases) {
      CAPTURE(c.name);
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const double err =
            ad::finite_diff_check([&](Tape&, const Tensor& x) { return project(c.op(x)); }, sample(c, seed));
        CHECK(err < 1e-5);
      }
    }
  }

  TEST_CASE("every binary op passes finite differences in both inputs on 10 seeds") {
    struct BinaryCase {
      const char* name;
      std::function<Tensor(const Tensor&, const Tensor&)> op;
      Index ar, ac, br, bc;
    };
    const std::vector<BinaryCase> cases{
        {"matmul", [](const Tensor& a, const Tensor& b) { return ad::matmul(a, b); }, 3, 4, 4, 2},
        {"add", [](const Tensor& a, const Tensor& b) { return ad::add(a, b); }, 3, 4, 3, 4},
        {"sub", [](const Tensor& a, const Tensor& b) { return ad::sub(a, b); }, 3, 4, 3, 4},
        {"mul", [](const Tensor& a, const Tensor& b) { return ad::mul(a, b); }, 3, 4, 3, 4},
        {"div", [](const Tensor& a, const Tensor& b) { return ad::div(a, ad::add_scalar(ad::abs(b), 0.5)); }, 3,
         4, 3, 4},
        {"add_row", [](const Tensor& a, const Tensor& b) { return ad::add_row(a, b); }, 3, 4, 1, 4},
        {"concat_cols",
         [](const Tensor& a, const Tensor& b) {
           const std::vector<Tensor> parts{a, b, a};
           return ad::concat_cols(parts);
         },
         3, 2, 3, 4},
    };
    for (const auto& c : cases) {
      CAPTURE(c.name);
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::vector<Matrix> xs{test::random_matrix(c.ar, c.ac, 2 * seed),
                                     test::random_away_from_zero(c.br, c.bc, 2 * seed + 1)};
        const double err = ad::finite_diff_check(
            [&](Tape&, std::span<const Tensor> in) { return project(c.op(in[0], in[1])); }, xs);
        CHECK(err < 1e-5);
      }
    }
  }

  TEST_CASE("row_softmax rows are distributions") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix s = ad::row_softmax(Tensor(test::random_matrix(5, 7, seed, -30.0, 30.0))).value();
      CHECK(s.minCoeff() >= 0.0);
      CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("backward is bit-reproducible") {
    auto run = [] {
      Tape tape;
      Tensor x = tape.variable(test::random_matrix(4, 4, 8));
      Tensor y = ad::row_softmax(ad::matmul(x, ad::transpose(x)));
      tape.backward(project(ad::exp(y)));
      return x.grad();
    };
    CHECK(run() == run());
  }

  TEST_CASE("non-finite forward values raise") {
    CHECK_THROWS_AS(ad::exp(Tensor(Matrix::Constant(1, 1, 1e6))), NumericError);
  }

  TEST_CASE("tensors from different tapes cannot mix") {
    Tape t1, t2;
    Tensor a = t1.variable(Matrix::Ones(1, 1));
    Tensor b = t2.variable(Matrix::Ones(1, 1));
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  }
}
