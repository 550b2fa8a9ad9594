#include "doctest.h"

#include <cstring>

#include "sail/common.hpp"
#include "sail/ops.hpp"
#include "sail/tensor.hpp"

using namespace sail;

TEST_CASE("tensor construction and shape checks") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_FALSE(t.requires_grad());
    CHECK(t.is_leaf());

    CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({2, 2}).value(), ShapeError);
    CHECK(Tensor::scalar(4.5).value() == 4.5);
}

TEST_CASE("detached copy shares nothing") {
    Tensor a = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor b = a.detached_copy();
    b.data()[0] = 9.0;
    CHECK(a.data()[0] == 1.0);
    CHECK_FALSE(a.same_storage(b));
    Tensor c = a;
    CHECK(a.same_storage(c));
}

TEST_CASE("backward requires active tape and scalar loss") {
    Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    CHECK_THROWS_AS(backward(sum(x)), Error);  // no tape
    Tape tape;
    Tensor v = relu(x);
    CHECK_THROWS_AS(backward(v), ShapeError);  // non-scalar
}

TEST_CASE("sum backward gives all-ones; repeated backward accumulates") {
    Tensor x = Tensor::from_data({2, 2}, {1.0, -2.0, 3.0, 0.5}, true);
    Tape tape;
    Tensor loss = sum(x);
    backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(x.grad_vec()[i] == 1.0);
    backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(x.grad_vec()[i] == 2.0);
}

TEST_CASE("sum of x*x backward gives 2x") {
    Tensor x = Tensor::from_data({3}, {1.5, -0.5, 2.0}, true);
    Tape tape;
    backward(sum(mul(x, x)));
    CHECK(x.grad_vec()[0] == doctest::Approx(3.0));
    CHECK(x.grad_vec()[1] == doctest::Approx(-1.0));
    CHECK(x.grad_vec()[2] == doctest::Approx(4.0));
}

TEST_CASE("no recording happens without requires_grad or without tape") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0});
    {
        Tape tape;
        Tensor y = relu(x);
        CHECK_FALSE(y.requires_grad());
        CHECK(tape.node_count() == 0);
    }
    Tensor xg = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = relu(xg);  // no tape
    CHECK(y.requires_grad());
    CHECK_FALSE(y.is_leaf());
}

TEST_CASE("nested tapes restore the outer tape") {
    Tape outer;
    CHECK(Tape::active() == &outer);
    {
        Tape inner;
        CHECK(Tape::active() == &inner);
    }
    CHECK(Tape::active() == &outer);
}

TEST_CASE("rng determinism and range") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK(a.uniform() != c.uniform());
    CHECK(mix_seed(7, 0) != mix_seed(7, 1));
    CHECK(mix_seed(7, 1) == mix_seed(7, 1));
}

TEST_CASE("rng shuffle is a permutation") {
    Rng r(5);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    r.shuffle(v);
    std::vector<int> s = v;
    std::sort(s.begin(), s.end());
    CHECK(s == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("crc32 and fnv1a64 known vectors") {
    const char* s = "123456789";
    CHECK(crc32(s, 9) == 0xCBF43926u);
    CHECK(crc32(s, 0) == 0u);
    // incremental == one-shot
    CHECK(crc32(s + 4, 5, crc32(s, 4)) == 0xCBF43926u);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}
