#pragma once

#include "volformer/config.hpp"
#include "volformer/error.hpp"

#include <cstdint>
#include <string>

namespace volformer {

inline constexpr const char* kVersion = "1.0.0";

struct CliOptions {
    std::string config_path;
    bool dry_run = false;
    bool has_seed_override = false;
    std::uint64_t seed_override = 0;
    std::string out_override; // empty = keep the config's paths.out
};

// Exit codes: 0 success, 1 usage/config error, 2 data/file error, 3 numeric
// failure.
int exit_code_for(ErrorKind kind);

// Parallelism cap: min(6, hardware threads), further capped by the
// VOLFORMER_THREADS environment variable when set.
int threads_from_env();

// Runs one subcommand (synth, match, split, import, train, eval, rollout)
// against a loaded config; prints an error and returns the mapped exit code
// on failure.
int run_command(const std::string& command, const CliOptions& opt);

// Command bodies; they throw volformer::Error on failure.
void cmd_synth(const RunConfig& cfg);
void cmd_match(const RunConfig& cfg);
void cmd_split(const RunConfig& cfg);
void cmd_import(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_rollout(const RunConfig& cfg);

} // namespace volformer
