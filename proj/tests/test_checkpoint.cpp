#include "sfanet/checkpoint.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace sfanet;
using testutil::TempDir;

namespace {

ModelConfig mini(bool amp = true) {
  ModelConfig c;
  c.width_multiplier = 0.125;
  c.amp_enabled = amp;
  return c;
}

Tensor<float> input(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  auto x = Tensor<float>::zeros({1, 3, 32, 32});
  for (Index i = 0; i < x.numel(); ++i) x.data()[i] = d(rng);
  return x;
}

std::vector<std::uint8_t> bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Checkpoint, RoundTripGivesBitwiseIdenticalForward) {
  TempDir dir("ckpt");
  Model<float> a(mini());
  NoGradGuard g;
  a.forward(input(1), Mode::Train);  // populate running statistics
  save_checkpoint<float>(a, nullptr, dir / "a.sfac");
  ModelConfig other = mini();
  other.init_seed = 5;
  Model<float> b(other);
  load_checkpoint(dir / "a.sfac", b, true);
  const auto x = input(2);
  const auto oa = a.forward(x, Mode::Eval), ob = b.forward(x, Mode::Eval);
  EXPECT_TRUE((oa.density.data() == ob.density.data()).all());
  EXPECT_TRUE((oa.attention.data() == ob.attention.data()).all());
}

TEST(Checkpoint, HeaderLayout) {
  TempDir dir("ckpt");
  write_checkpoint_records(dir / "r.sfac", {{"w", {2, 1}, {1.0f, -2.0f}}});
  const auto b = bytes(dir / "r.sfac");
  const std::vector<std::uint8_t> expected = {'S', 'F', 'A', 'C', 1, 0, 0, 0, 1, 0, 0, 0,  // magic, version, count
                                              1, 0, 0, 0, 'w',                               // name
                                              2, 0, 0, 0,                                    // rank
                                              2, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0,
                                              0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(b, expected);
  const auto back = read_checkpoint_records(dir / "r.sfac");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].shape, (Shape{2, 1}));
  EXPECT_EQ(back[0].values, (std::vector<float>{1.0f, -2.0f}));
}

TEST(Checkpoint, NonStrictBackboneImportLeavesDecoderAlone) {
  TempDir dir("ckpt");
  Model<float> src(mini());
  std::vector<CheckpointRecord> fme;
  for (const auto& p : src.parameters()) {
    if (p.name.rfind("fme.", 0) != 0) continue;
    fme.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().data(), p.tensor.data().data() + p.tensor.numel())});
    for (auto& v : fme.back().values) v += 1.0f;
  }
  write_checkpoint_records(dir / "fme.sfac", fme);
  Model<float> dst(mini());
  Model<float> before = dst.clone();
  EXPECT_THROW(load_checkpoint(dir / "fme.sfac", dst, true), CheckpointError);
  load_checkpoint(dir / "fme.sfac", dst, false);
  const auto after = dst.parameters(), orig = before.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    const bool backbone = after[i].name.rfind("fme.", 0) == 0;
    EXPECT_EQ((after[i].tensor.data() == orig[i].tensor.data()).all(), !backbone) << after[i].name;
  }
}

TEST(Checkpoint, CorruptMagicLeavesModelUnmodified) {
  TempDir dir("ckpt");
  Model<float> a(mini());
  save_checkpoint<float>(a, nullptr, dir / "a.sfac");
  auto b = bytes(dir / "a.sfac");
  b[0] = 'X';
  std::ofstream(dir / "bad.sfac", std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());
  ModelConfig other = mini();
  other.init_seed = 3;
  Model<float> m(other);
  Model<float> before = m.clone();
  EXPECT_THROW(load_checkpoint(dir / "bad.sfac", m, true), CheckpointError);
  const auto p = m.parameters(), q = before.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_TRUE((p[i].tensor.data() == q[i].tensor.data()).all());
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  TempDir dir("ckpt");
  Model<float> a(mini());
  save_checkpoint<float>(a, nullptr, dir / "a.sfac");
  auto b = bytes(dir / "a.sfac");
  b.resize(b.size() - 3);
  std::ofstream(dir / "t.sfac", std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());
  EXPECT_THROW(read_checkpoint_records(dir / "t.sfac"), CheckpointError);
}

TEST(Checkpoint, StrictShapeMismatchNamesTheParameter) {
  TempDir dir("ckpt");
  Model<float> a(mini());
  auto records = std::vector<CheckpointRecord>{};
  for (const auto& p : a.parameters()) {
    records.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.numel(), 0.0f)});
  }
  records[3].shape = {static_cast<Index>(records[3].values.size()), 1};
  write_checkpoint_records(dir / "s.sfac", records);
  try {
    load_checkpoint(dir / "s.sfac", a, false);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find(records[3].name), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, OptimizerStateRoundTrips) {
  TempDir dir("ckpt");
  Model<float> a(mini());
  AdamState<float> st;
  st.step = 7;
  st.batches = 9;
  const auto params = a.parameters();
  st.exp_avg[params[0].name] = Buffer<float>::Constant(params[0].tensor.numel(), 0.25f);
  st.exp_avg_sq[params[0].name] = Buffer<float>::Constant(params[0].tensor.numel(), 0.5f);
  save_checkpoint(a, &st, dir / "o.sfac");
  AdamState<float> back;
  load_checkpoint(dir / "o.sfac", a, true, &back);
  EXPECT_EQ(back.step, 7);
  EXPECT_EQ(back.batches, 9);
  EXPECT_TRUE((back.exp_avg.at(params[0].name) == 0.25f).all());
  EXPECT_TRUE((back.exp_avg_sq.at(params[0].name) == 0.5f).all());
}

TEST(Checkpoint, MissingFileIsAnError) {
  Model<float> a(mini());
  EXPECT_THROW(load_checkpoint("/nonexistent/x.sfac", a, true), CheckpointError);
}
