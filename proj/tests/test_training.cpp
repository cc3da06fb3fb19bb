#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "dcgct/checkpoint.hpp"
#include "dcgct/training.hpp"

using namespace dcgct;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.channels = 16;
  c.local_channels = 4;
  c.global_channels = 12;
  c.heads = 2;
  c.mlp_expansion = 2;
  return c;
}

train::TrainConfig quick_train(std::size_t epochs = 2) {
  train::TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.lr0 = 1e-3;
  c.seed = 7;
  return c;
}

data::Dataset synth(std::size_t count, std::uint64_t seed) {
  return data::synth_generate(graph::h36m17(), {count, 1, 0.0, seed});
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / name; }

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const train::TrainConfig cfg;
  CHECK(train::lr_at_epoch(0, cfg) == doctest::Approx(5e-4));
  CHECK(train::lr_at_epoch(1, cfg) == doctest::Approx(4.75e-4).epsilon(1e-12));
  CHECK(train::lr_at_epoch(5, cfg) == doctest::Approx(5e-4 * std::pow(0.95, 5) * 0.5).epsilon(1e-12));
  CHECK(train::lr_at_epoch(5, cfg) == doctest::Approx(1.9345e-4).epsilon(1e-4));
  CHECK(train::TrainConfig::defaults_for(ModelConfig::video(27)).lr0 == 1e-3);
  CHECK(train::TrainConfig::defaults_for(ModelConfig::paper()).lr0 == 5e-4);
}

TEST_CASE("first adaptive-moment step moves by the learning rate") {
  ad::Tensor<float> p = ad::Tensor<float>::full({1}, 1.0f, true);
  {
    ad::Tape<float> tape;
    ad::TapeScope<float> scope(tape);
    tape.backward(ad::sum(p));
  }
  std::vector<ad::Tensor<float>> params{p};
  auto state = train::OptimizerState::for_parameters(params, train::TrainConfig{});
  train::optimizer_step(params, state, 0.1);
  CHECK(state.step == 1);
  CHECK(p.at(0) == doctest::Approx(0.9).epsilon(1e-6));

  std::vector<ad::Tensor<float>> bare{ad::Tensor<float>::full({1}, 1.0f, true)};
  auto bare_state = train::OptimizerState::for_parameters(bare, train::TrainConfig{});
  CHECK_THROWS_WITH(train::optimizer_step(bare, bare_state, 0.1), doctest::Contains("missing gradient"));
}

TEST_CASE("weighted pose loss by hand") {
  const ad::Tensor<double> pred = ad::Tensor<double>::zeros({1, 2, 3});
  const ad::Tensor<double> target({1, 2, 3}, {3, 4, 0, 0, 0, 0});
  const std::vector<double> w12{1.0, 2.0}, w21{2.0, 1.0};
  CHECK(train::weighted_pose_loss(pred, target, w12).item() == doctest::Approx(2.5));
  CHECK(train::weighted_pose_loss(pred, target, w21).item() == doctest::Approx(5.0));
  const std::vector<double> w1{1.0};
  CHECK_THROWS_AS(train::weighted_pose_loss(pred, target, w1), ad::ShapeError);
}

TEST_CASE("paired flip leaves the loss of a flip-equivariant predictor unchanged") {
  const auto topo = graph::h36m17();
  const auto ds = synth(4, 3);
  const std::vector<double> ones(17, 1.0);
  // Identity-lift stub: (u, v) -> (1000u, 1000v, 0) commutes with mirroring.
  auto lift = [](std::span<const float> in2d) {
    std::vector<double> out;
    for (std::size_t j = 0; j < in2d.size() / 2; ++j) {
      out.push_back(1000.0 * in2d[2 * j]);
      out.push_back(1000.0 * in2d[2 * j + 1]);
      out.push_back(0.0);
    }
    return out;
  };
  for (const auto& s : ds.samples) {
    const std::vector<double> target(s.target3d_mm.begin(), s.target3d_mm.end());
    const auto flipped_in = graph::flip_pose<float>(s.input2d, 2, topo);
    const auto flipped_target = graph::flip_pose<double>(target, 3, topo);
    const double plain =
        train::weighted_pose_loss(ad::Tensor<double>({1, 17, 3}, lift(s.input2d)), ad::Tensor<double>({1, 17, 3}, target), ones)
            .item();
    const double flipped = train::weighted_pose_loss(ad::Tensor<double>({1, 17, 3}, lift(flipped_in)),
                                                     ad::Tensor<double>({1, 17, 3}, flipped_target), ones)
                               .item();
    CHECK(flipped == doctest::Approx(plain).epsilon(1e-12));
  }
}

TEST_CASE("training config validation") {
  auto cfg = quick_train();
  CHECK_NOTHROW(cfg.validate(17));
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(17), train::TrainingError);
  cfg = quick_train();
  cfg.lr0 = -1.0;
  CHECK_THROWS_AS(cfg.validate(17), train::TrainingError);
  cfg = quick_train();
  cfg.per_epoch_decay = 1.5;
  CHECK_THROWS_AS(cfg.validate(17), train::TrainingError);
  cfg = quick_train();
  cfg.joint_weights = {1.0, 2.0};
  CHECK_THROWS_WITH(cfg.validate(17), doctest::Contains("expected 17"));
  cfg.joint_weights.assign(17, 1.0);
  cfg.joint_weights[3] = 0.0;
  CHECK_THROWS_AS(cfg.validate(17), train::TrainingError);
}

TEST_CASE("training config JSON") {
  auto cfg = quick_train();
  cfg.joint_weights.assign(17, 1.5);
  cfg.flip_augment = false;
  CHECK(train::train_config_from_json(train::to_json(cfg)) == cfg);
  CHECK_THROWS_WITH(train::train_config_from_json(nlohmann::json{{"epoch", 3}}), doctest::Contains("unknown"));

  const auto plain = temp_path("dcgct_weights_a.json");
  const auto wrapped = temp_path("dcgct_weights_b.json");
  write_bytes(plain, "[1, 2, 3]");
  write_bytes(wrapped, R"({"weights": [1, 2, 3]})");
  CHECK(train::load_joint_weights(plain) == std::vector<double>{1, 2, 3});
  CHECK(train::load_joint_weights(wrapped) == std::vector<double>{1, 2, 3});
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto ds = synth(8, 4);
  ds.samples[0].input2d[0] = std::numeric_limits<float>::quiet_NaN();
  model::Model<float> m(tiny_config(), graph::h36m17(), 1);
  auto cfg = quick_train(1);
  cfg.flip_augment = false;
  CHECK_THROWS_WITH_AS(train::train(m, ds, nullptr, cfg), doctest::Contains("non-finite loss at epoch 0, batch 0"),
                       train::NumericalAbort);
}

TEST_CASE("empty training set") {
  model::Model<float> m(tiny_config(), graph::h36m17(), 1);
  data::Dataset empty;
  empty.joints = 17;
  CHECK_THROWS_AS(train::train(m, empty, nullptr, quick_train()), train::TrainingError);
}

TEST_CASE("fixed seed reproduces the epoch-0 loss") {
  const auto ds = synth(32, 5);
  model::Model<float> a(tiny_config(), graph::h36m17(), 3), b(tiny_config(), graph::h36m17(), 3);
  const auto ra = train::train(a, ds, nullptr, quick_train(1));
  const auto rb = train::train(b, ds, nullptr, quick_train(1));
  CHECK(ra.epochs[0].train_loss == rb.epochs[0].train_loss);
  CHECK(ra.epochs[0].val_mpjpe_mm == rb.epochs[0].val_mpjpe_mm);
  CHECK(ra.epochs[0].train_loss < 1e5);
}

TEST_CASE("checkpoint round trip and failure modes") {
  const auto ds = synth(16, 6);
  model::Model<float> m(tiny_config(), graph::h36m17(), 8);
  auto tc = quick_train(1);
  train::train(m, ds, nullptr, tc);
  const auto path = temp_path("dcgct_test.ckpt");
  train::save_checkpoint(path, m, nullptr, &tc);

  const auto ckpt = train::read_checkpoint(path);
  CHECK(ckpt.config == m.config());
  REQUIRE(ckpt.train_config.has_value());
  CHECK(*ckpt.train_config == tc);
  const auto loaded = train::load_model(ckpt);
  const auto pa = m.named_parameters(), pb = loaded.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::memcmp(pa[i].second.data().data(), pb[i].second.data().data(), pa[i].second.size() * sizeof(float)) == 0);
  }
  CHECK(train::predict(m, ds) == train::predict(loaded, ds));

  const std::string bytes = read_bytes(path);
  SUBCASE("truncated") {
    const auto cut = temp_path("dcgct_cut.ckpt");
    write_bytes(cut, bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_WITH_AS(train::read_checkpoint(cut), doctest::Contains("truncated checkpoint"), train::CheckpointError);
    write_bytes(cut, bytes.substr(0, 5));
    CHECK_THROWS_WITH_AS(train::read_checkpoint(cut), doctest::Contains("truncated checkpoint"), train::CheckpointError);
  }
  SUBCASE("bad magic") {
    const auto bad = temp_path("dcgct_magic.ckpt");
    write_bytes(bad, "NOTACKPT" + bytes.substr(8));
    CHECK_THROWS_WITH_AS(train::read_checkpoint(bad), doctest::Contains("bad magic"), train::CheckpointError);
  }
  SUBCASE("version mismatch") {
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, sizeof(len));
    auto header = nlohmann::json::parse(bytes.substr(16, len));
    header["format_version"] = 99;
    const std::string h = header.dump();
    std::uint64_t new_len = h.size();
    std::string out = bytes.substr(0, 8);
    out.append(reinterpret_cast<const char*>(&new_len), sizeof(new_len));
    out += h;
    out += bytes.substr(16 + len);
    const auto bumped = temp_path("dcgct_version.ckpt");
    write_bytes(bumped, out);
    CHECK_THROWS_WITH_AS(train::read_checkpoint(bumped), doctest::Contains("version mismatch"), train::CheckpointError);
  }
  SUBCASE("config mismatch") {
    auto other = tiny_config();
    other.channels = 20;
    other.global_channels = 16;
    model::Model<float> wrong(other, graph::h36m17(), 1);
    CHECK_THROWS_WITH_AS(train::restore_model(wrong, ckpt), doctest::Contains("config mismatch"), train::CheckpointError);
  }
}

TEST_CASE("checkpoint bytes are deterministic") {
  const auto ds = synth(16, 9);
  model::Model<float> a(tiny_config(), graph::h36m17(), 2), b(tiny_config(), graph::h36m17(), 2);
  train::train(a, ds, nullptr, quick_train(2));
  train::train(b, ds, nullptr, quick_train(2));
  train::save_checkpoint(temp_path("dcgct_det_a.ckpt"), a);
  train::save_checkpoint(temp_path("dcgct_det_b.ckpt"), b);
  CHECK(read_bytes(temp_path("dcgct_det_a.ckpt")) == read_bytes(temp_path("dcgct_det_b.ckpt")));
}

TEST_CASE("prediction does not depend on the worker count") {
  const auto ds = synth(40, 10);
  model::Model<float> m(tiny_config(), graph::h36m17(), 4);
  train::train(m, ds, nullptr, quick_train(1));
  ::setenv("DCGCT_THREADS", "1", 1);
  const auto one = train::predict(m, ds, 8);
  ::setenv("DCGCT_THREADS", "3", 1);
  CHECK(train::worker_count() == 3);
  const auto three = train::predict(m, ds, 8);
  ::unsetenv("DCGCT_THREADS");
  CHECK(one == three);
  CHECK(one.size() == 40 * 17 * 3);
}
