#include "run_config.hpp"

#include <cstdlib>
#include <fstream>

#include "fairlatent/binary_io.hpp"
#include "fairlatent/errors.hpp"

namespace fairlatent::cli {

namespace {

const std::set<std::string, std::less<>>& synth_keys() {
  static const std::set<std::string, std::less<>> keys = {
      "synth.n",         "synth.d",           "synth.signal_y",      "synth.signal_s",       "synth.rho",
      "synth.eval_rho",  "synth.sigma",       "synth.attr_count",    "synth.val_fraction",   "synth.test_fraction",
      "synth.map_seed",  "synth.seed"};
  return keys;
}

}  // namespace

KeyValueText load_run_config(const std::optional<std::filesystem::path>& path) {
  if (!path) return {};
  const auto bytes = io::read_file(*path);
  const KeyValueText text = KeyValueText::parse(std::string(bytes.begin(), bytes.end()));
  std::set<std::string, std::less<>> allowed = TrainConfig::known_keys();
  allowed.insert(synth_keys().begin(), synth_keys().end());
  allowed.insert({"data", "out", "threads"});
  text.require_known(allowed);
  return text;
}

SynthConfig synth_from_text(const KeyValueText& t, SynthConfig c) {
  auto count = [&](const char* key, std::size_t fallback) {
    const auto v = t.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be nonnegative");
    return static_cast<std::size_t>(v);
  };
  c.n = count("synth.n", c.n);
  c.d = count("synth.d", c.d);
  c.attr_count = count("synth.attr_count", c.attr_count);
  c.signal_y = t.get_double("synth.signal_y", c.signal_y);
  c.signal_s = t.get_double("synth.signal_s", c.signal_s);
  c.rho = t.get_double("synth.rho", c.rho);
  c.eval_rho = t.get_double("synth.eval_rho", c.eval_rho);
  c.sigma = t.get_double("synth.sigma", c.sigma);
  c.val_fraction = t.get_double("synth.val_fraction", c.val_fraction);
  c.test_fraction = t.get_double("synth.test_fraction", c.test_fraction);
  c.map_seed = static_cast<std::uint64_t>(t.get_int("synth.map_seed", static_cast<std::int64_t>(c.map_seed)));
  c.seed = static_cast<std::uint64_t>(t.get_int("synth.seed", static_cast<std::int64_t>(c.seed)));
  return c;
}

void synth_to_text(const SynthConfig& c, KeyValueText& t) {
  t.set("synth.n", c.n);
  t.set("synth.d", c.d);
  t.set("synth.signal_y", c.signal_y);
  t.set("synth.signal_s", c.signal_s);
  t.set("synth.rho", c.rho);
  t.set("synth.eval_rho", c.eval_rho);
  t.set("synth.sigma", c.sigma);
  t.set("synth.attr_count", c.attr_count);
  t.set("synth.val_fraction", c.val_fraction);
  t.set("synth.test_fraction", c.test_fraction);
  t.set("synth.map_seed", static_cast<std::int64_t>(c.map_seed));
  t.set("synth.seed", static_cast<std::int64_t>(c.seed));
}

int thread_cap() {
  const char* raw = std::getenv("FAIRLATENT_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1 || v > 4096)
    throw ConfigError(std::string("FAIRLATENT_THREADS must be a positive integer, got '") + raw + "'");
  return static_cast<int>(v);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  io::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_resolved(const std::filesystem::path& path, KeyValueText text) {
  text.set("threads", thread_cap());
  write_text(path, text.to_string());
}

}  // namespace fairlatent::cli
