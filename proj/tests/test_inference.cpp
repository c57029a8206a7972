#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "packdit/inference.hpp"
#include "test_util.hpp"

using namespace packdit;
using namespace packdit::testutil;

namespace {

SampleRequest quick_request(uint64_t seed) {
  SampleRequest req;
  req.steps = 8;
  req.seed = seed;
  req.n_frames = 32;
  return req;
}

}  // namespace

TEST_CASE("unconditional motion sampling shape and determinism") {
  const Bundle b = tiny_bundle(50);
  const auto req = quick_request(1);
  const auto a = sample_uncond_motion(b, req);
  const auto c = sample_uncond_motion(b, req);
  CHECK(a.n_frames() == 32);
  CHECK(a.data.cols() == 8);
  CHECK(a.data == c.data);

  auto req2 = req;
  req2.seed = 2;
  CHECK(a.data != sample_uncond_motion(b, req2).data);
}

TEST_CASE("t2m is deterministic and caption-sensitive") {
  const Bundle b = tiny_bundle(51);
  auto req = quick_request(3);
  req.caption = "a point moves left slowly";
  const auto a = sample_t2m(b, req);
  CHECK(a.data == sample_t2m(b, req).data);

  auto req2 = req;
  req2.caption = "a point moves right quickly";
  CHECK(a.data != sample_t2m(b, req2).data);

  auto bad = req;
  bad.caption = "";
  CHECK_THROWS_AS((void)sample_t2m(b, bad), ValidationError);
}

TEST_CASE("t2m with mutual blocks disabled collapses to unconditional") {
  const Bundle b = tiny_bundle(52);
  auto req = quick_request(4);
  req.caption = "a point moves up quickly";
  req.disable_mutual = true;
  const auto cond = sample_t2m(b, req);
  const auto unc = sample_uncond_motion(b, quick_request(4));
  CHECK(cond.data == unc.data);
}

TEST_CASE("condition caching is bit-identical") {
  const Bundle b = tiny_bundle(53);
  auto req = quick_request(5);
  req.caption = "a point moves down slowly";
  const auto plain = sample_t2m(b, req);
  req.cache_condition = true;
  CHECK(plain.data == sample_t2m(b, req).data);
}

TEST_CASE("m2t and uncond text produce deterministic captions") {
  const Bundle b = tiny_bundle(54);
  Rng rng(6);
  ToyMotionSpec spec;
  spec.shape = ToyShape::Circle;
  spec.direction = ToyDirection::Cw;
  spec.speed = ToySpeed::Fast;
  auto req = quick_request(7);
  req.motion = generate_item(spec, 0.002, rng).first;
  CHECK(sample_m2t(b, req) == sample_m2t(b, req));
  CHECK(sample_uncond_text(b, quick_request(8)) ==
        sample_uncond_text(b, quick_request(8)));

  auto bad = quick_request(9);
  CHECK_THROWS_AS((void)sample_m2t(b, bad), ValidationError);
}

TEST_CASE("joint sampling shares the timestep ladder") {
  const Bundle b = tiny_bundle(55);
  const auto req = quick_request(10);
  TraceSink trace;
  const auto [motion, caption] = sample_joint(b, req, &trace);
  CHECK(motion.n_frames() == 32);
  CHECK(!trace.empty());
  for (const auto& st : trace) {
    CHECK(st.t_motion == st.t_text);
    CHECK(st.motion.size() > 0);
    CHECK(st.text.size() > 0);
  }
  CHECK(trace.back().t_motion == 0);

  const auto [m2, c2] = sample_joint(b, req);
  CHECK(motion.data == m2.data);
  CHECK(caption == c2);
}

TEST_CASE("inpainting enforces the hard constraint") {
  const Bundle b = tiny_bundle(56);
  Rng rng(11);
  ToyMotionSpec spec;
  spec.shape = ToyShape::Line;
  spec.direction = ToyDirection::Right;
  spec.speed = ToySpeed::Slow;
  spec.n_frames = 32;
  const auto known = generate_item(spec, 0.002, rng).first;

  auto req = quick_request(12);
  req.motion = known;

  SUBCASE("prefix mask") { req.keep_mask = predict_mask(32, 0.5); }
  SUBCASE("prefix plus suffix mask") { req.keep_mask = inbetween_mask(32); }
  SUBCASE("all true mask") { req.keep_mask.assign(32, true); }

  const auto out = sample_inpaint(b, req);
  REQUIRE(out.n_frames() == 32);
  int kept = 0;
  for (int f = 0; f < 32; ++f) {
    if (!req.keep_mask[f]) continue;
    ++kept;
    CHECK(out.data.row(f) == known.data.row(f));
  }
  CHECK(kept > 0);
}

TEST_CASE("all-false inpainting equals unconditional sampling") {
  const Bundle b = tiny_bundle(57);
  Rng rng(13);
  ToyMotionSpec spec;
  spec.n_frames = 32;
  auto req = quick_request(14);
  req.motion = generate_item(spec, 0.002, rng).first;
  req.keep_mask.assign(32, false);
  const auto inp = sample_inpaint(b, req);
  const auto unc = sample_uncond_motion(b, quick_request(14));
  CHECK(inp.data == unc.data);
}

TEST_CASE("inpainting validates the mask") {
  const Bundle b = tiny_bundle(58);
  Rng rng(15);
  ToyMotionSpec spec;
  spec.n_frames = 32;
  auto req = quick_request(16);
  req.motion = generate_item(spec, 0.002, rng).first;
  req.keep_mask.assign(7, true);  // wrong length
  CHECK_THROWS_AS((void)sample_inpaint(b, req), ValidationError);
  req.keep_mask.clear();
  CHECK_THROWS_AS((void)sample_inpaint(b, req), ValidationError);
}

TEST_CASE("mask builders") {
  const auto p = predict_mask(32, 0.5);
  CHECK(std::count(p.begin(), p.end(), true) == 16);
  CHECK(p[0]);
  CHECK(!p[16]);
  const auto ib = inbetween_mask(32);
  CHECK(ib[0]);
  CHECK(ib[31]);
  CHECK(!ib[16]);
  CHECK(std::count(ib.begin(), ib.end(), true) == 16);
}

TEST_CASE("trace file round trip") {
  namespace fs = std::filesystem;
  const Bundle b = tiny_bundle(59);
  TraceSink trace;
  sample_uncond_motion(b, quick_request(17), &trace);
  const auto path = fs::temp_directory_path() / "pk_trace.bin";
  write_trace(path.string(), trace);
  const auto back = read_trace(path.string());
  REQUIRE(back.size() == trace.size());
  for (size_t i = 0; i < trace.size(); ++i) {
    CHECK(back[i].t_motion == trace[i].t_motion);
    CHECK(back[i].motion == trace[i].motion);
  }
  fs::remove(path);
}
