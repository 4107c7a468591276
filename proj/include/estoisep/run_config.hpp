#pragma once

#include <map>
#include <string>
#include <vector>

#include "estoisep/data.hpp"
#include "estoisep/dsp.hpp"
#include "estoisep/loss.hpp"
#include "estoisep/trainer.hpp"

namespace estoisep {

/// Declarative run configuration: a TOML-style file of `[section]` blocks
/// of `key = value` pairs (strings, numbers, booleans, string arrays).
/// Flag overrides are applied as dotted `section.key=value` strings and win
/// over the file.
struct RunConfig {
    StftConfig stft;
    double bands_lowest_center = 150.0;
    double bands_max_freq = 8000.0;
    double loss_segment_ms = 384.0;
    double loss_epsilon = 1e-9;
    ModelSpec model;
    TrainConfig training;
    int augmentation_shifts = 30;
    std::string manifest_path;
    std::string speaker_a;
    std::string speaker_b;
    SplitAssignment splits;
    int bss_filter_len = 512;
    bool standard_estoi = false;

    /// Parse a config file, then apply overrides.
    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {});
    static RunConfig from_text(const std::string& text,
                               const std::vector<std::string>& overrides = {});

    /// Validate every derived module config; throws before any output is
    /// produced on bad settings.
    void validate_modules() const;

    /// Band/segment settings materialized against the configured STFT.
    EstoiLossConfig make_loss_config() const;

    /// Serialized back to TOML for the effective-config dump.
    std::string to_toml() const;
};

}  // namespace estoisep
