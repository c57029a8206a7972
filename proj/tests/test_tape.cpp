#include <doctest.h>

#include <functional>

#include "packdit/rng.hpp"
#include "packdit/tape.hpp"

using namespace packdit;

namespace {

using MatD = Mat<double>;

MatD randm(int r, int c, Rng& rng, double scale = 1.0) {
  MatD m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  return m;
}

// Central-difference check of d(loss)/d(param) for every parameter entry.
void check_grads(ParamStore<double>& ps,
                 const std::function<int(Tape<double>&, ParamStore<double>&)>& build,
                 double tol = 1e-6) {
  auto grads = ps.zero_grads();
  {
    Tape<double> tp(&grads);
    tp.backward(build(tp, ps));
  }
  auto eval = [&] {
    Tape<double> tp;
    return tp.val(build(tp, ps))(0, 0);
  };
  const double h = 1e-6;
  for (size_t p = 0; p < ps.count(); ++p) {
    for (Eigen::Index i = 0; i < ps.values[p].rows(); ++i) {
      for (Eigen::Index j = 0; j < ps.values[p].cols(); ++j) {
        const double save = ps.values[p](i, j);
        ps.values[p](i, j) = save + h;
        const double lp = eval();
        ps.values[p](i, j) = save - h;
        const double lm = eval();
        ps.values[p](i, j) = save;
        const double fd = (lp - lm) / (2 * h);
        const double an = grads[p](i, j);
        const double err = std::abs(fd - an) / std::max(1.0, std::abs(fd));
        CAPTURE(p);
        CAPTURE(i);
        CAPTURE(j);
        CHECK(err < tol);
      }
    }
  }
}

int sq_loss(Tape<double>& tp, int node) {
  const auto& v = tp.val(node);
  return tp.mean_sq_diff(node, tp.input(MatD::Zero(v.rows(), v.cols())));
}

}  // namespace

TEST_CASE("tape basic arithmetic gradients") {
  Rng rng(11);
  ParamStore<double> ps;
  ps.add("a", randm(3, 4, rng));
  ps.add("b", randm(3, 4, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    const int a = tp.param(s, 0), b = tp.param(s, 1);
    return sq_loss(tp, tp.mul(tp.add(a, b), tp.sub(a, tp.scale(b, 0.5))));
  });
}

TEST_CASE("tape matmul gradients") {
  Rng rng(12);
  ParamStore<double> ps;
  ps.add("a", randm(3, 5, rng));
  ps.add("b", randm(5, 2, rng));
  ps.add("c", randm(3, 5, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    const int m = tp.matmul(tp.param(s, 0), tp.param(s, 1));
    const int nt = tp.matmul_nt(tp.param(s, 0), tp.param(s, 2));
    return tp.add(sq_loss(tp, m), sq_loss(tp, nt));
  });
}

TEST_CASE("tape rowvec broadcast gradients") {
  Rng rng(13);
  ParamStore<double> ps;
  ps.add("x", randm(4, 6, rng));
  ps.add("v", randm(1, 6, rng));
  ps.add("w", randm(1, 6, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    const int x = tp.param(s, 0);
    const int y = tp.add_rowvec(x, tp.param(s, 1));
    return sq_loss(tp, tp.mul_rowvec(y, tp.param(s, 2)));
  });
}

TEST_CASE("tape modulate gradients") {
  Rng rng(14);
  ParamStore<double> ps;
  ps.add("x", randm(4, 6, rng));
  ps.add("scale", randm(1, 6, rng, 0.3));
  ps.add("shift", randm(1, 6, rng, 0.3));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    return sq_loss(
        tp, tp.modulate(tp.param(s, 0), tp.param(s, 1), tp.param(s, 2)));
  });
}

TEST_CASE("tape softmax and layernorm gradients") {
  Rng rng(15);
  ParamStore<double> ps;
  ps.add("x", randm(3, 7, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    const int x = tp.param(s, 0);
    return tp.add(sq_loss(tp, tp.softmax_rows(x)),
                  sq_loss(tp, tp.layernorm_rows(x)));
  });
}

TEST_CASE("tape activation gradients") {
  Rng rng(16);
  ParamStore<double> ps;
  ps.add("x", randm(3, 5, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    const int x = tp.param(s, 0);
    const int l = tp.add(sq_loss(tp, tp.silu(x)), sq_loss(tp, tp.gelu(x)));
    return tp.add(l, sq_loss(tp, tp.tanh_op(x)));
  });
}

TEST_CASE("tape slice and stack gradients") {
  Rng rng(17);
  ParamStore<double> ps;
  ps.add("x", randm(4, 6, rng));
  ps.add("y", randm(4, 6, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    const int x = tp.param(s, 0), y = tp.param(s, 1);
    const int h = tp.hstack({tp.slice_cols(x, 1, 3), tp.slice_cols(y, 0, 2)});
    const int v = tp.vstack({tp.slice_rows(x, 0, 2), tp.slice_rows(y, 1, 3)});
    return tp.add(sq_loss(tp, h), sq_loss(tp, v));
  });
}

TEST_CASE("tape gather gradients") {
  Rng rng(18);
  ParamStore<double> ps;
  ps.add("emb", randm(6, 4, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    return sq_loss(tp, tp.gather_rows(tp.param(s, 0), {2, 0, 2, 5}));
  });
}

TEST_CASE("tape cross entropy gradients") {
  Rng rng(19);
  ParamStore<double> ps;
  ps.add("logits", randm(5, 4, rng));
  check_grads(ps, [](Tape<double>& tp, ParamStore<double>& s) {
    return tp.cross_entropy_rows(tp.param(s, 0), {1, 0, 3, 2, 1},
                                 {1.0, 1.0, 0.0, 1.0, 1.0});
  });
}

TEST_CASE("gradients pool across tapes through the sink") {
  Rng rng(20);
  ParamStore<double> ps;
  ps.add("x", randm(2, 3, rng));
  auto grads = ps.zero_grads();
  for (int rep = 0; rep < 3; ++rep) {
    Tape<double> tp(&grads);
    tp.backward(sq_loss(tp, tp.param(ps, 0)));
  }
  Tape<double> tp;
  auto single = ps.zero_grads();
  {
    Tape<double> t1(&single);
    t1.backward(sq_loss(t1, t1.param(ps, 0)));
  }
  CHECK((grads[0] - 3.0 * single[0]).norm() < 1e-12);
}
