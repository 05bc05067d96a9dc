#pragma once

// Run configuration read from an INI file.
//
//   [section]
//   key = value      ; or # comments
//
// Sections: data, model, env, pretrain, train, reward, weights, eval, output.
// Every key is optional; unknown sections or keys are a ConfigError.
// [weights] maps component names to weights for the weighted aggregator.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "molbuild/env.hpp"
#include "molbuild/fingerprint.hpp"
#include "molbuild/policy.hpp"
#include "molbuild/rewards.hpp"
#include "molbuild/trainer.hpp"

namespace molbuild {

struct RunConfig {
  // [data]
  std::string corpus;
  std::string split;
  std::string pretrain_corpus;
  bool strict = false;  // fail on unparseable corpus lines instead of skipping
  SplitOptions split_options;

  PolicyConfig model;           // [model]
  std::uint64_t model_seed = 0;
  EnvConfig env;                // [env]
  PretrainConfig pretrain;      // [pretrain]
  TrainConfig train;            // [train]
  int checkpoint_every = 0;
  bool log_wall_time = false;
  RewardSpec reward;            // [reward] and [weights]
  EvalOptions eval;             // [eval]
  std::string output_dir = "out";  // [output]

  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::filesystem::path& path);

  // Every key with its effective value, in a fixed order.
  std::string resolved() const;
  std::uint64_t digest() const;
};

}  // namespace molbuild
