#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "commands.hpp"
#include "fairlatent/errors.hpp"
#include "run_config.hpp"

// Exit codes: 0 ok, 1 numeric failure, 2 usage or config error, 3 malformed input file.
namespace {

constexpr int kNumeric = 1;
constexpr int kUsage = 2;
constexpr int kFormat = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace fairlatent::cli;
  CLI::App app{"Fair latent decomposition with invertible flows"};
  app.require_subcommand(1);

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic embedding dataset (FLE1)");
  synth->add_option("--out", so.out, "Output dataset path")->required();
  synth->add_option("--config", so.config, "Run config with synth.* keys");
  synth->add_option("--n", so.n, "Sample count");
  synth->add_option("--d", so.d, "Embedding width");
  synth->add_option("--attrs", so.attrs, "Number of binary sensitive attributes");
  synth->add_option("--rho", so.rho, "corr(y, s) in the train split");
  synth->add_option("--eval-rho", so.eval_rho, "corr(y, s) in val/test");
  synth->add_option("--sigma", so.sigma, "Noise scale");
  synth->add_option("--signal-y", so.signal_y, "Label signal amplitude");
  synth->add_option("--signal-s", so.signal_s, "Attribute signal amplitude");
  synth->add_option("--seed", so.seed, "Sampling seed");
  synth->add_option("--map-seed", so.map_seed, "Entangling map seed");

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train a flow with fairness losses");
  train->add_option("--data", to.data, "Dataset (FLE1)");
  train->add_option("--config", to.config, "Run config");
  train->add_option("--out", to.out, "Output directory");
  train->add_option("--ablation", to.ablation, "Loss preset")->check(CLI::IsMember({"inn", "dgeq", "di", "full"}));
  train->add_option("--seed", to.seed, "Training seed");
  train->add_option("--epochs", to.epochs, "Epoch count");
  train->add_flag("--small", to.small, "Desk-scale profile");
  train->add_flag("--ablation-grid", to.ablation_grid, "Train every cumulative ablation row");

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "Fairness report for a checkpoint");
  eval->add_option("--data", eo.data, "Dataset (FLE1)")->required();
  eval->add_option("--ckpt", eo.ckpt, "Checkpoint (FLCK)")->required();
  eval->add_option("--split", eo.split, "train, val or test");
  eval->add_option("--out", eo.out, "Output directory");

  CounterfactOptions co;
  auto* cf = app.add_subcommand("counterfact", "Latent shifts mapped back to embedding space");
  cf->add_option("--data", co.data, "Dataset (FLE1)")->required();
  cf->add_option("--ckpt", co.ckpt, "Checkpoint (FLCK)")->required();
  cf->add_option("--out", co.out, "Output path prefix")->required();
  cf->add_option("--dir", co.dir, "Probe direction")->check(CLI::IsMember({"label", "sensitive"}));
  cf->add_option("--mode", co.mode, "Output kind")
      ->check(CLI::IsMember({"trajectory", "figure4-left", "figure4-right"}));
  cf->add_option("--alpha-grid", co.alpha_grid, "Comma list or lo:hi:step");
  cf->add_option("--split", co.split, "Split to shift");
  cf->add_option("--probe-split", co.probe_split, "Split for the embedding-space probe");
  cf->add_option("--n-samples", co.n_samples, "Prior samples per alpha");
  cf->add_option("--limit", co.limit, "Rows exported in trajectory mode");
  cf->add_option("--seed", co.seed, "Sampling seed");

  DiagOptions dopt;
  auto* dg = app.add_subcommand("diag", "Numerical and theoretical checks");
  dg->add_option("--check", dopt.check, "gradcheck, jensen, nce, ib or norm")
      ->required()
      ->check(CLI::IsMember({"gradcheck", "jensen", "nce", "ib", "norm"}));
  dg->add_option("--data", dopt.data, "Dataset (FLE1)");
  dg->add_option("--ckpt", dopt.ckpt, "Checkpoint (FLCK)");
  dg->add_option("--out", dopt.out, "Output directory");
  dg->add_option("--split", dopt.split, "Split for ib and norm");
  dg->add_option("--lambda", dopt.lambda, "Trade-off for the ib check");
  dg->add_option("--threshold", dopt.threshold, "Pass threshold override");
  dg->add_option("--seed", dopt.seed, "Seed for random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    thread_cap();
    if (*synth) return run_synth(so);
    if (*train) return run_train(to);
    if (*eval) return run_eval(eo);
    if (*cf) return run_counterfact(co);
    if (*dg) return run_diag(dopt);
  } catch (const fairlatent::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kFormat;
  } catch (const fairlatent::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const fairlatent::DimensionError& e) {
    std::fprintf(stderr, "dimension error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  }
  return kUsage;
}
