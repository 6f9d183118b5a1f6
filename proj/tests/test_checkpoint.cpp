#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "wmtl/checkpoint.hpp"
#include "wmtl/rng.hpp"

using namespace wmtl;

namespace {

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.obs_dim = 16;
  spec.deter_dim = 3;
  spec.stoch_dim = 2;
  spec.hidden_dim = 4;
  spec.encoder_widths = {8, 6, 4};
  spec.decoder_widths = {4, 6, 8};
  spec.head_widths = {4, 3};
  spec.action_dim = 2;
  return spec;
}

AgentCheckpoint sample_checkpoint() {
  ModelSpec spec = tiny_spec();
  RngStream build = RngStream::root(100).split("build");
  AgentCheckpoint ckpt;
  ckpt.params = build_agent(spec, build);
  ckpt.metadata["domains"] = std::vector<std::string>{"pendulum"};
  ckpt.metadata["model_spec"] = spec_to_json(spec);
  ckpt.metadata["env_steps"] = 12345;
  ckpt.metadata["encoder_fingerprint"] = encoder_fingerprint(ckpt.params);

  // Give the optimizer record non-trivial moments by taking two real steps.
  AdamState opt({.learning_rate = 0.01}, ckpt.params, ckpt.params.paths_of_model("reward"));
  for (int i = 0; i < 2; ++i) {
    ckpt.params.zero_grads();
    for (const std::string& path : opt.paths()) {
      auto& g = ckpt.params.at(path).grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = 0.1 + static_cast<double>(k % 7);
    }
    opt.step(ckpt.params);
  }
  OptimizerRecord rec;
  rec.config = opt.config();
  rec.step_count = opt.step_count();
  for (const std::string& path : opt.paths()) rec.slots[path] = opt.slot(path);
  ckpt.optimizers["reward"] = std::move(rec);
  return ckpt;
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::filesystem::remove(path); }
};

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("sha256 matches the published test vectors") {
  Sha256 empty;
  REQUIRE(empty.hex_digest() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  Sha256 abc;
  abc.update(std::string("abc"));
  REQUIRE(abc.hex_digest() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("model specs round-trip through json") {
  ModelSpec spec = tiny_spec();
  spec.meta_input_width = 6;
  ModelSpec back = spec_from_json(spec_to_json(spec));
  REQUIRE(back.obs_dim == spec.obs_dim);
  REQUIRE(back.deter_dim == spec.deter_dim);
  REQUIRE(back.stoch_dim == spec.stoch_dim);
  REQUIRE(back.hidden_dim == spec.hidden_dim);
  REQUIRE(back.encoder_widths == spec.encoder_widths);
  REQUIRE(back.decoder_widths == spec.decoder_widths);
  REQUIRE(back.head_widths == spec.head_widths);
  REQUIRE(back.action_dim == spec.action_dim);
  REQUIRE(back.meta_input_width == spec.meta_input_width);
  REQUIRE(back.min_std == spec.min_std);
}

TEST_CASE("checkpoints survive a save/load round trip bit for bit") {
  AgentCheckpoint ckpt = sample_checkpoint();
  TempFile file("ckpt_roundtrip.wmtl");
  save_checkpoint(ckpt, file.path);
  AgentCheckpoint back = load_checkpoint(file.path);

  REQUIRE(back.format_version == ckpt.format_version);
  REQUIRE(back.metadata == ckpt.metadata);
  REQUIRE(back.load_warnings.empty());
  REQUIRE(back.params.paths() == ckpt.params.paths());
  for (const std::string& path : ckpt.params.paths()) {
    REQUIRE(back.params.at(path).shape() == ckpt.params.at(path).shape());
    REQUIRE(back.params.at(path).values() == ckpt.params.at(path).values());
    REQUIRE(back.params.role(path) == ckpt.params.role(path));
  }
  REQUIRE(back.optimizers.size() == 1);
  const OptimizerRecord& rec = back.optimizers.at("reward");
  const OptimizerRecord& orig = ckpt.optimizers.at("reward");
  REQUIRE(rec.step_count == orig.step_count);
  REQUIRE(rec.config.learning_rate == orig.config.learning_rate);
  REQUIRE(rec.config.beta1 == orig.config.beta1);
  REQUIRE(rec.config.beta2 == orig.config.beta2);
  REQUIRE(rec.config.epsilon == orig.config.epsilon);
  REQUIRE(rec.config.clip_norm == orig.config.clip_norm);
  REQUIRE(rec.slots.size() == orig.slots.size());
  for (const auto& [path, slot] : orig.slots) {
    REQUIRE(rec.slots.at(path).m == slot.m);
    REQUIRE(rec.slots.at(path).v == slot.v);
  }
}

TEST_CASE("serialization is canonical") {
  AgentCheckpoint ckpt = sample_checkpoint();
  const std::string once = serialize_checkpoint(ckpt);
  const std::string twice = serialize_checkpoint(ckpt);
  REQUIRE(once == twice);

  TempFile file("ckpt_canonical.wmtl");
  save_checkpoint(ckpt, file.path);
  AgentCheckpoint back = load_checkpoint(file.path);
  REQUIRE(serialize_checkpoint(back) == once);
}

TEST_CASE("an empty tensor table loads with a warning") {
  AgentCheckpoint empty;
  TempFile file("ckpt_empty.wmtl");
  save_checkpoint(empty, file.path);
  AgentCheckpoint back = load_checkpoint(file.path);
  REQUIRE(back.load_warnings == std::vector<std::string>{"empty tensor table"});
  REQUIRE(inspect_checkpoint(back).find("EMPTY tensor table") != std::string::npos);
}

TEST_CASE("corrupt files are rejected with the failing section named") {
  AgentCheckpoint ckpt = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(ckpt);
  TempFile file("ckpt_corrupt.wmtl");

  SECTION("bad magic") {
    write_bytes(file.path, "NOPE" + bytes.substr(4));
    REQUIRE_THROWS_WITH(load_checkpoint(file.path),
                        Catch::Matchers::ContainsSubstring("bad magic"));
  }

  SECTION("unsupported version") {
    std::string v = bytes;
    v[4] = 2;
    write_bytes(file.path, v);
    REQUIRE_THROWS_WITH(load_checkpoint(file.path),
                        Catch::Matchers::ContainsSubstring("unsupported format version"));
  }

  SECTION("metadata is not json") {
    std::string v = bytes;
    v[12] = 'x';  // first byte of the length-prefixed metadata blob
    write_bytes(file.path, v);
    REQUIRE_THROWS_WITH(load_checkpoint(file.path),
                        Catch::Matchers::ContainsSubstring("not valid JSON"));
  }

  SECTION("truncation anywhere") {
    for (const std::size_t cut :
         {std::size_t{5}, std::size_t{10}, bytes.size() / 3, bytes.size() / 2, bytes.size() - 1}) {
      write_bytes(file.path, bytes.substr(0, cut));
      REQUIRE_THROWS_AS(load_checkpoint(file.path), FormatError);
    }
  }

  SECTION("unknown role byte") {
    const std::string meta = ckpt.metadata.dump();
    const std::string first_path = ckpt.params.paths().front();
    const std::size_t role_at = 4 + 4 + 4 + meta.size() + 8 + 4 + first_path.size();
    std::string v = bytes;
    v[role_at] = 9;
    write_bytes(file.path, v);
    REQUIRE_THROWS_WITH(load_checkpoint(file.path),
                        Catch::Matchers::ContainsSubstring("unknown role tag"));

    v = bytes;
    v[role_at + 1] = 3;  // dtype byte follows the role byte
    write_bytes(file.path, v);
    REQUIRE_THROWS_WITH(load_checkpoint(file.path),
                        Catch::Matchers::ContainsSubstring("unknown dtype"));
  }

  SECTION("trailing bytes") {
    write_bytes(file.path, bytes + "x");
    REQUIRE_THROWS_WITH(load_checkpoint(file.path),
                        Catch::Matchers::ContainsSubstring("trailing bytes"));
  }
}

TEST_CASE("io failures surface as io errors") {
  AgentCheckpoint ckpt;
  REQUIRE_THROWS_AS(save_checkpoint(ckpt, "/nonexistent_dir/x.wmtl"), IoError);
  REQUIRE_THROWS_AS(load_checkpoint("no_such_file.wmtl"), IoError);
}

TEST_CASE("inspection summarizes the contents") {
  AgentCheckpoint ckpt = sample_checkpoint();
  const std::string text = inspect_checkpoint(ckpt);
  REQUIRE(text.find("format version: 1") != std::string::npos);
  REQUIRE(text.find("encoder/fc1/weight") != std::string::npos);
  REQUIRE(text.find("optimizer 'reward'") != std::string::npos);
  REQUIRE(text.find("total scalars") != std::string::npos);
  REQUIRE(text.find("role=") != std::string::npos);
}
