#include <cmath>

#include "doctest.h"
#include "prime/adam.hpp"
#include "prime/errors.hpp"
#include "prime/rng.hpp"
#include "prime/tape.hpp"

using namespace prime;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-2.0, 2.0);
  return t;
}

}  // namespace

TEST_CASE("tensor construction checks sizes") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ContractViolation);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(Tensor::vector({1, 2, 3}).rows() == 1);
  CHECK(Tensor::scalar(4).item() == 4);
  t[1] = NAN;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("backward: w*w at 3 has gradient 6") {
  Tape tape;
  const NodeId w = tape.leaf(Tensor({1, 1}, 3.0));
  const NodeId loss = tape.matmul(w, w);
  CHECK(tape.value(loss).item() == 9.0);
  CHECK(backward(tape, loss)[w].item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward: sum over 4 entries gives all-ones") {
  Tape tape;
  const NodeId w = tape.leaf(Tensor::vector({0.3, -1.0, 2.0, 7.0}));
  const Gradients g = backward(tape, tape.sum(w));
  for (double v : g[w].data()) CHECK(v == 1.0);
}

TEST_CASE("backward: log softmax at [0,0], index 0 gives [0.5, -0.5]") {
  Tape tape;
  const NodeId w = tape.leaf(Tensor({1, 2}, 0.0));
  const NodeId picked = tape.gather_cols(tape.log_softmax(w), {0});
  const Gradients g = backward(tape, tape.sum(picked));
  CHECK(g[w][0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g[w][1] == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("backward: unused leaves get zero gradients of their shape") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor({2, 3}, 1.0));
  const NodeId unused = tape.leaf(Tensor({4}, 5.0));
  const Gradients g = backward(tape, tape.sum(a));
  CHECK(g[unused].shape() == std::vector<std::size_t>{4});
  for (double v : g[unused].data()) CHECK(v == 0.0);
}

TEST_CASE("backward: non-scalar loss is a contract violation") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor({2}, 1.0));
  CHECK_THROWS_AS(backward(tape, a), ContractViolation);
}

TEST_CASE("non-finite values raise a numeric fault naming the node") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor({1, 1}, 1e200));
  try {
    tape.matmul(a, a);
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(e.node() == 1);
  }
}

TEST_CASE("grad_check: quadratic is exact, constant gives zero error") {
  const Tensor w({1}, 3.0);
  const double err = grad_check([](const Tensor& p) { return p[0] * p[0]; },
                                Tensor({1}, 6.0), w, 1e-5);
  CHECK(err < 1e-6);
  CHECK(grad_check([](const Tensor&) { return 2.5; }, Tensor({1}, 0.0), w, 1e-5) == 0.0);
  CHECK_THROWS_AS(grad_check([](const Tensor&) { return 1.0; }, Tensor({1}, 0.0), w, 1e-2),
                  ContractViolation);
  CHECK_THROWS_AS(grad_check([](const Tensor&) { return NAN; }, Tensor({1}, 0.0), w, 1e-5),
                  NumericFault);
}

TEST_CASE("every primitive matches central differences on inputs in [-2, 2]") {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {3, 4});
  const Tensor w = random_tensor(rng, {4, 5});
  const Tensor b = random_tensor(rng, {5});
  const Tensor mix = random_tensor(rng, {1, 3});
  auto reduce = [&](Tape& t, NodeId n) { return t.sum(t.matmul(t.leaf(mix), t.gather_cols(n, {0, 4, 2}))); };
  SUBCASE("matmul") {
    CHECK(grad_check([&](Tape& t, NodeId p) { return t.sum(t.matmul(p, t.leaf(w))); }, x, 1e-6) < 1e-4);
    CHECK(grad_check([&](Tape& t, NodeId p) { return t.sum(t.tanh(t.matmul(t.leaf(x), p))); }, w, 1e-6) < 1e-4);
  }
  SUBCASE("add and add_bias") {
    CHECK(grad_check([&](Tape& t, NodeId p) {
      const NodeId xw = t.matmul(t.leaf(x), t.leaf(w));
      return t.sum(t.tanh(t.add(xw, t.add_bias(xw, p))));
    }, b, 1e-6) < 1e-4);
  }
  SUBCASE("tanh and log_softmax") {
    CHECK(grad_check([&](Tape& t, NodeId p) {
      return reduce(t, t.log_softmax(t.tanh(t.matmul(p, t.leaf(w)))));
    }, x, 1e-6) < 1e-4);
  }
  SUBCASE("gather_rows") {
    const Tensor table = random_tensor(rng, {3, 2});
    CHECK(grad_check([&](Tape& t, NodeId p) {
      const NodeId e = t.gather_rows(p, {2, 0, 1, 1, 0, 2, 2, 2}, 2);  // 4 x 4
      return t.sum(t.tanh(t.matmul(e, t.leaf(w))));
    }, table, 1e-6) < 1e-4);
  }
  SUBCASE("scale") {
    CHECK(grad_check([&](Tape& t, NodeId p) { return t.scale(t.sum(t.tanh(p)), -3.5); }, x, 1e-6) < 1e-4);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {2, 3});
  const Tensor w = random_tensor(rng, {3, 3});
  auto grads = [&](int which) {
    Tape t;
    const NodeId p = t.leaf(x);
    const NodeId h = t.tanh(t.matmul(p, t.leaf(w)));
    const NodeId l1 = t.sum(t.log_softmax(h));
    const NodeId l2 = t.scale(t.sum(h), 2.0);
    const NodeId loss = which == 0 ? l1 : which == 1 ? l2 : t.add(l1, l2);
    return backward(t, loss)[p];
  };
  const Tensor g1 = grads(0), g2 = grads(1), g12 = grads(2);
  for (std::size_t i = 0; i < g12.size(); ++i) CHECK(std::abs(g12[i] - g1[i] - g2[i]) < 1e-12);
}

TEST_CASE("backward is deterministic") {
  Rng rng(9);
  const Tensor x = random_tensor(rng, {4, 4});
  auto run = [&] {
    Tape t;
    const NodeId p = t.leaf(x);
    return backward(t, t.sum(t.log_softmax(t.tanh(t.matmul(p, p)))))[p];
  };
  CHECK(run() == run());
}

TEST_CASE("adam: first step moves by lr against the gradient sign") {
  AdamState st;
  st.cfg.lr = 1e-3;
  Tensor p({1}, 0.5);
  adam_step(p, Tensor({1}, 1.0), st);
  CHECK(p[0] - 0.5 == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(st.t == 1);

  AdamState neg;
  neg.cfg.lr = 1e-3;
  Tensor q({1}, 0.5);
  adam_step(q, Tensor({1}, -1.0), neg);
  CHECK(q[0] - 0.5 == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam: zero gradient leaves params, counts the step") {
  AdamState st;
  Tensor p = Tensor::vector({1.0, -2.0, 3.0});
  const Tensor before = p;
  adam_step(p, Tensor::zeros_like(p), st);
  adam_step(p, Tensor::zeros_like(p), st);
  CHECK(p == before);
  CHECK(st.t == 2);
  for (double v : st.v.data()) CHECK(v >= 0.0);
}

TEST_CASE("adam: decoupled weight decay is multiplicative") {
  AdamState st;
  st.cfg.lr = 0.1;
  st.cfg.weight_decay = 0.5;
  Tensor p({1}, 2.0);
  adam_step(p, Tensor({1}, 0.0), st);
  CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
}

TEST_CASE("adam: shape mismatch is a contract violation") {
  AdamState st;
  Tensor p({2}, 0.0);
  CHECK_THROWS_AS(adam_step(p, Tensor({3}, 0.0), st), ContractViolation);
}
