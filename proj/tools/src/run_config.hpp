#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "fairlatent/config_text.hpp"
#include "fairlatent/data.hpp"
#include "fairlatent/trainer.hpp"

namespace fairlatent::cli {

/// Run configuration file: TrainConfig keys, `synth.*` keys for the generator,
/// and the `data` / `out` paths. Unknown keys are rejected.
KeyValueText load_run_config(const std::optional<std::filesystem::path>& path);

SynthConfig synth_from_text(const KeyValueText& text, SynthConfig base = {});
void synth_to_text(const SynthConfig& c, KeyValueText& out);

/// Worker-thread cap from FAIRLATENT_THREADS (default 1). ConfigError on a
/// value that is not a positive integer.
int thread_cap();

void write_text(const std::filesystem::path& path, const std::string& text);

/// Writes `text` plus `threads` to `path`.
void write_resolved(const std::filesystem::path& path, KeyValueText text);

}  // namespace fairlatent::cli
