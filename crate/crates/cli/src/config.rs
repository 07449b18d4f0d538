//! Flat `key = value` configuration files for the `train` subcommand.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Every
//! key has a documented default, unknown keys are rejected by name, and the
//! effective configuration (defaults, then file, then flag overrides) is
//! echoed into the run directory in a canonical form that parses back to the
//! same typed configuration, so any run can be reproduced from its echo.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use dsrl_core::{Architecture, Mode, RewardSpec, TaskKind, TaskMixEntry, TrainConfig};

use crate::error::{CliError, CliResult};

/// File name of the effective-config echo inside a run directory.
pub const CONFIG_FILE_NAME: &str = "config.txt";

/// The vocabulary is the fixed 20-token set (digits, letters a-f, BOS, EOS,
/// PAD, SEP); it is not configurable, so the architecture keys stop short of
/// a vocabulary size.
const VOCAB_SIZE: usize = 20;

struct KeySpec {
    name: &'static str,
    default: &'static str,
    doc: &'static str,
}

/// Canonical key order; this is also the echo order.
const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "mode",
        default: "grpo",
        doc: "training mode: grpo, dr_grpo, rloo, dapo_clip_higher, prerl, psr_prerl, nsr_prerl, psr_rl, nsr_rl, dsrl",
    },
    KeySpec {
        name: "tasks",
        default: "last_token:1-4:1",
        doc: "comma-separated task mix, each entry kind[:MIN-MAX[:WEIGHT]]",
    },
    KeySpec { name: "prompt_batch", default: "16", doc: "prompts sampled per step (B)" },
    KeySpec { name: "group_size", default: "8", doc: "rollouts per prompt (G), at least 2" },
    KeySpec { name: "temperature", default: "1", doc: "sampling temperature, positive" },
    KeySpec { name: "max_response", default: "16", doc: "maximum response tokens per rollout" },
    KeySpec { name: "learning_rate", default: "0.0003", doc: "Adam learning rate" },
    KeySpec { name: "adam_beta1", default: "0.9", doc: "Adam first-moment decay" },
    KeySpec { name: "adam_beta2", default: "0.999", doc: "Adam second-moment decay" },
    KeySpec { name: "adam_eps", default: "0.00000001", doc: "Adam denominator epsilon" },
    KeySpec { name: "total_steps", default: "2000", doc: "training steps to run" },
    KeySpec {
        name: "dsrl_threshold",
        default: "20",
        doc: "last step of the warmup phase in dsrl mode (S)",
    },
    KeySpec { name: "clip_low", default: "0.2", doc: "lower ratio clip width" },
    KeySpec {
        name: "clip_high",
        default: "0.2",
        doc: "upper ratio clip width; defaults to 0.28 under mode=dapo_clip_higher unless set",
    },
    KeySpec { name: "kl_beta", default: "0", doc: "KL penalty coefficient against the frozen reference" },
    KeySpec { name: "seed", default: "42", doc: "master seed; fixes every random draw of the run" },
    KeySpec {
        name: "checkpoint_interval",
        default: "100",
        doc: "steps between periodic checkpoints; 0 writes only the final one",
    },
    KeySpec {
        name: "workers",
        default: "0",
        doc: "worker threads; 0 uses all processors; never changes results",
    },
    KeySpec { name: "reward_success", default: "1", doc: "reward for a verified response" },
    KeySpec { name: "reward_failure", default: "0", doc: "reward for a failed response" },
    KeySpec { name: "arch_layers", default: "2", doc: "transformer blocks" },
    KeySpec { name: "arch_width", default: "32", doc: "model width (divisible by arch_heads)" },
    KeySpec { name: "arch_heads", default: "2", doc: "attention heads" },
    KeySpec { name: "arch_ffn", default: "64", doc: "feed-forward hidden width" },
    KeySpec { name: "arch_context", default: "64", doc: "maximum context length" },
];

fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// One line per key: `name` padded, default, and doc. Used by `--help-config`.
pub fn describe_keys() -> String {
    let mut out = String::new();
    for k in KEYS {
        out.push_str(&format!("{:<20} default {:<22} {}\n", k.name, k.default, k.doc));
    }
    out
}

/// Accumulates configuration from defaults, a file, and overrides, in that
/// order, tracking which keys were set explicitly.
pub struct ConfigBuilder {
    values: BTreeMap<&'static str, String>,
    explicit: BTreeSet<&'static str>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        let values = KEYS.iter().map(|k| (k.name, k.default.to_string())).collect();
        ConfigBuilder { values, explicit: BTreeSet::new() }
    }

    /// Sets one key, rejecting names that are not in the documented set.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let spec = key_spec(key)
            .ok_or_else(|| CliError::usage(format!("unknown config key \"{key}\"")))?;
        if value.is_empty() {
            return Err(CliError::usage(format!("config key \"{key}\": empty value")));
        }
        self.values.insert(spec.name, value.to_string());
        self.explicit.insert(spec.name);
        Ok(())
    }

    /// Parses a `KEY=VALUE` override as given to `--set`.
    pub fn set_override(&mut self, spec: &str) -> CliResult<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override \"{spec}\": expected KEY=VALUE")))?;
        self.set(key.trim(), value.trim())
    }

    /// Reads a flat config file and applies every pair.
    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        self.apply_text(&text)
    }

    /// Applies config-file text: `key = value` lines with `#` comments.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("config line {}: expected `key = value`", idx + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::usage(format!("config line {}: {e}", idx + 1)))?;
        }
        Ok(())
    }

    fn get(&self, key: &str) -> &str {
        self.values.get(key).expect("all keys preseeded")
    }

    /// Produces the typed training configuration, validating every value.
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mode_name = self.get("mode");
        let mode = Mode::parse(mode_name).ok_or_else(|| {
            CliError::usage(format!(
                "config key \"mode\": unknown mode \"{mode_name}\" (expected one of: {})",
                mode_names().join(", ")
            ))
        })?;
        let mut cfg = TrainConfig::for_mode(mode);
        cfg.tasks = parse_tasks(self.get("tasks"))?;
        cfg.prompt_batch = parse_usize("prompt_batch", self.get("prompt_batch"))?;
        cfg.group_size = parse_usize("group_size", self.get("group_size"))?;
        cfg.temperature = parse_f64("temperature", self.get("temperature"))?;
        cfg.max_response = parse_usize("max_response", self.get("max_response"))?;
        cfg.learning_rate = parse_f64("learning_rate", self.get("learning_rate"))?;
        cfg.adam_beta1 = parse_f64("adam_beta1", self.get("adam_beta1"))?;
        cfg.adam_beta2 = parse_f64("adam_beta2", self.get("adam_beta2"))?;
        cfg.adam_eps = parse_f64("adam_eps", self.get("adam_eps"))?;
        cfg.total_steps = parse_u64("total_steps", self.get("total_steps"))?;
        cfg.dsrl_threshold = parse_u64("dsrl_threshold", self.get("dsrl_threshold"))?;
        cfg.clip_low = parse_f64("clip_low", self.get("clip_low"))?;
        // `for_mode` already applied the mode-specific upper clip; an explicit
        // value, from the file or an override, wins over that preset.
        if self.explicit.contains("clip_high") {
            cfg.clip_high = parse_f64("clip_high", self.get("clip_high"))?;
        }
        cfg.kl_beta = parse_f64("kl_beta", self.get("kl_beta"))?;
        cfg.seed = parse_u64("seed", self.get("seed"))?;
        cfg.checkpoint_interval = parse_u64("checkpoint_interval", self.get("checkpoint_interval"))?;
        cfg.workers = parse_usize("workers", self.get("workers"))?;
        let success = parse_f64("reward_success", self.get("reward_success"))?;
        let failure = parse_f64("reward_failure", self.get("reward_failure"))?;
        cfg.reward_spec =
            RewardSpec::new(success, failure).map_err(|e| CliError::usage(e.to_string()))?;
        cfg.arch = Architecture {
            layers: parse_usize("arch_layers", self.get("arch_layers"))?,
            width: parse_usize("arch_width", self.get("arch_width"))?,
            heads: parse_usize("arch_heads", self.get("arch_heads"))?,
            ffn_width: parse_usize("arch_ffn", self.get("arch_ffn"))?,
            max_context: parse_usize("arch_context", self.get("arch_context"))?,
            vocab_size: VOCAB_SIZE,
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn mode_names() -> Vec<&'static str> {
    Mode::ALL.iter().map(|m| m.name()).collect()
}

/// Canonical text form of the effective configuration. Parsing this text
/// back through [`ConfigBuilder`] resolves to the same typed configuration,
/// which is what makes the echoed file sufficient to reproduce a run.
pub fn effective_text(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    out.push_str("# Effective configuration: defaults, then config file, then overrides.\n");
    out.push_str("# Passing this file to `dsrl train --config` reproduces the run bit for bit.\n");
    let pair = |k: &str, v: String| format!("{k} = {v}\n");
    out.push_str(&pair("mode", cfg.mode.name().to_string()));
    out.push_str(&pair("tasks", format_tasks(&cfg.tasks)));
    out.push_str(&pair("prompt_batch", cfg.prompt_batch.to_string()));
    out.push_str(&pair("group_size", cfg.group_size.to_string()));
    out.push_str(&pair("temperature", cfg.temperature.to_string()));
    out.push_str(&pair("max_response", cfg.max_response.to_string()));
    out.push_str(&pair("learning_rate", cfg.learning_rate.to_string()));
    out.push_str(&pair("adam_beta1", cfg.adam_beta1.to_string()));
    out.push_str(&pair("adam_beta2", cfg.adam_beta2.to_string()));
    out.push_str(&pair("adam_eps", cfg.adam_eps.to_string()));
    out.push_str(&pair("total_steps", cfg.total_steps.to_string()));
    out.push_str(&pair("dsrl_threshold", cfg.dsrl_threshold.to_string()));
    out.push_str(&pair("clip_low", cfg.clip_low.to_string()));
    out.push_str(&pair("clip_high", cfg.clip_high.to_string()));
    out.push_str(&pair("kl_beta", cfg.kl_beta.to_string()));
    out.push_str(&pair("seed", cfg.seed.to_string()));
    out.push_str(&pair("checkpoint_interval", cfg.checkpoint_interval.to_string()));
    out.push_str(&pair("workers", cfg.workers.to_string()));
    out.push_str(&pair("reward_success", cfg.reward_spec.success.to_string()));
    out.push_str(&pair("reward_failure", cfg.reward_spec.failure.to_string()));
    out.push_str(&pair("arch_layers", cfg.arch.layers.to_string()));
    out.push_str(&pair("arch_width", cfg.arch.width.to_string()));
    out.push_str(&pair("arch_heads", cfg.arch.heads.to_string()));
    out.push_str(&pair("arch_ffn", cfg.arch.ffn_width.to_string()));
    out.push_str(&pair("arch_context", cfg.arch.max_context.to_string()));
    out
}

/// Canonical text form of a task mix: `kind:MIN-MAX:WEIGHT`, comma-joined.
pub fn format_tasks(tasks: &[TaskMixEntry]) -> String {
    tasks
        .iter()
        .map(|t| format!("{}:{}-{}:{}", t.kind.name(), t.min_len, t.max_len, t.weight))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses a task-mix string. Each comma-separated entry is
/// `kind[:MIN-MAX[:WEIGHT]]`; omitted parts mean the kind's full legal
/// length range and weight 1.
pub fn parse_tasks(text: &str) -> CliResult<Vec<TaskMixEntry>> {
    let mut entries = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(CliError::usage(format!(
                "config key \"tasks\": empty entry in \"{text}\""
            )));
        }
        entries.push(parse_task_entry(part)?);
    }
    Ok(entries)
}

fn parse_task_entry(entry: &str) -> CliResult<TaskMixEntry> {
    let bad = |why: &str| CliError::usage(format!("config key \"tasks\": entry \"{entry}\": {why}"));
    let mut parts = entry.split(':');
    let kind_name = parts.next().unwrap_or("").trim();
    let kind = TaskKind::parse(kind_name).ok_or_else(|| {
        bad(&format!(
            "unknown task kind \"{kind_name}\" (expected one of: last_token, copy, reverse, add_mod)"
        ))
    })?;
    let (lo, hi) = kind.length_bounds();
    let (min_len, max_len) = match parts.next() {
        None => (lo, hi),
        Some(range) => {
            let (a, b) = range
                .trim()
                .split_once('-')
                .ok_or_else(|| bad("expected a length range MIN-MAX"))?;
            let min = a.trim().parse::<usize>().map_err(|_| bad("invalid MIN length"))?;
            let max = b.trim().parse::<usize>().map_err(|_| bad("invalid MAX length"))?;
            (min, max)
        }
    };
    let weight = match parts.next() {
        None => 1.0,
        Some(w) => w.trim().parse::<f64>().map_err(|_| bad("invalid weight"))?,
    };
    if parts.next().is_some() {
        return Err(bad("too many ':' separated fields"));
    }
    TaskMixEntry::new(kind, weight, min_len, max_len).map_err(|e| bad(&e.to_string()))
}

fn parse_u64(key: &str, value: &str) -> CliResult<u64> {
    value.parse::<u64>().map_err(|_| {
        CliError::usage(format!("config key \"{key}\": expected an unsigned integer, got \"{value}\""))
    })
}

fn parse_usize(key: &str, value: &str) -> CliResult<usize> {
    value.parse::<usize>().map_err(|_| {
        CliError::usage(format!("config key \"{key}\": expected an unsigned integer, got \"{value}\""))
    })
}

fn parse_f64(key: &str, value: &str) -> CliResult<f64> {
    value.parse::<f64>().map_err(|_| {
        CliError::usage(format!("config key \"{key}\": expected a number, got \"{value}\""))
    })
}
