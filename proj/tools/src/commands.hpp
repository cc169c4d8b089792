#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace fairlatent::cli {

struct SynthOptions {
  std::string out;
  std::optional<std::string> config;
  std::optional<std::size_t> n, d, attrs;
  std::optional<double> rho, eval_rho, sigma, signal_y, signal_s;
  std::optional<std::uint64_t> seed, map_seed;
};

struct TrainOptions {
  std::optional<std::string> data, config, out, ablation;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool small = false;
  bool ablation_grid = false;  // run every cumulative row instead of one model
};

struct EvalOptions {
  std::string data, ckpt, split = "test";
  std::optional<std::string> out;
};

struct CounterfactOptions {
  std::string data, ckpt, dir = "label", mode = "trajectory", out;
  std::string alpha_grid = "-3,-1.5,0,1.5,3";
  std::string split = "test";
  std::string probe_split = "val";
  std::size_t n_samples = 1000;
  std::size_t limit = 16;
  std::uint64_t seed = 99;
};

struct DiagOptions {
  std::string check;
  std::optional<std::string> data, ckpt, out;
  std::string split = "test";
  double lambda = 1.0;
  std::optional<double> threshold;
  std::uint64_t seed = 0;
};

int run_synth(const SynthOptions& o);
int run_train(const TrainOptions& o);
int run_eval(const EvalOptions& o);
int run_counterfact(const CounterfactOptions& o);
int run_diag(const DiagOptions& o);

}  // namespace fairlatent::cli
