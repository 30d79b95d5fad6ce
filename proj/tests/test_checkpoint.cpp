// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "amuse/checkpoint.hpp"
#include "amuse/experiments.hpp"

using namespace amuse;

namespace {

std::vector<unsigned char> as_bytes(const std::vector<char>& v) { return {v.begin(), v.end()}; }

FormatError::Kind decode_error(const std::vector<unsigned char>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode_checkpoint did not throw";
  return FormatError::Kind::io;
}

TrainConfig config() {
  TrainConfig c;
  c.model = MlpSpec{5, {7, 6}, 3, Activation::tanh, false};
  c.opt.kind = OptimizerKind::amuse;
  c.opt.lr = 0.01;
  c.opt.rho = 0.6;
  c.opt.warmup_steps = 4;
  c.seed = 2;
  c.steps = 12;
  c.batch_size = 10;
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  const Dataset ds = synthetic_gaussian(1, 60, 5, 3, 3.0);
  Trainer tr(config(), ds);
  for (int i = 0; i < 7; ++i) tr.advance();
  EigenBasis basis;
  basis.eigenvalues = {2.0, 1.0};
  basis.residuals = {1e-6, 2e-6};
  basis.eigenvectors = {FlatVector(tr.model().parameter_count(), 0.25), FlatVector(tr.model().parameter_count(), -0.5)};

  const auto bytes = encode_checkpoint(tr.model(), &tr.optimizer().state(), &basis);
  const Checkpoint ck = decode_checkpoint(as_bytes(bytes));
  EXPECT_TRUE(ck.model.params() == tr.model().params());
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_TRUE(*ck.optimizer == tr.optimizer().state());
  ASSERT_TRUE(ck.basis.has_value());
  EXPECT_EQ(ck.basis->eigenvalues, basis.eigenvalues);
  EXPECT_EQ(ck.basis->eigenvectors, basis.eigenvectors);
  EXPECT_EQ(encode_checkpoint(ck.model, &*ck.optimizer, &*ck.basis), bytes);

  const Checkpoint bare = decode_checkpoint(as_bytes(encode_checkpoint(tr.model())));
  EXPECT_FALSE(bare.optimizer.has_value());
  EXPECT_FALSE(bare.basis.has_value());
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const Dataset ds = synthetic_gaussian(1, 60, 5, 3, 3.0);
  Trainer full(config(), ds);
  for (int i = 0; i < 12; ++i) full.advance();

  Trainer first(config(), ds);
  for (int i = 0; i < 5; ++i) first.advance();
  const auto path = std::filesystem::temp_directory_path() / "amuse_resume.bin";
  save_checkpoint(path, first.model(), &first.optimizer().state());
  const Checkpoint ck = load_checkpoint(path);
  Trainer resumed(config(), ds, ck.model, *ck.optimizer);
  EXPECT_EQ(resumed.step(), 5u);
  for (int i = 0; i < 7; ++i) resumed.advance();
  EXPECT_TRUE(resumed.model().params() == full.model().params());
  EXPECT_TRUE(resumed.optimizer().state() == full.optimizer().state());
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const MlpModel m = MlpModel::init(MlpSpec{3, {4}, 2, Activation::tanh, false}, 1);
  const auto good = as_bytes(encode_checkpoint(m));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), FormatError::Kind::bad_magic);
  EXPECT_EQ(decode_error({good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2)}),
            FormatError::Kind::truncated);
  auto version = good;
  version[4] = 99;
  EXPECT_EQ(decode_error(version), FormatError::Kind::version);
  EXPECT_THROW(load_checkpoint("/nonexistent/amuse.bin"), FormatError);
}
