//! Run configuration: one JSON file per invocation, schema-validated and
//! canonically hashed.
//!
//! The hash is the SHA-256 of the config re-serialized from its parsed
//! value: key order and whitespace in the file do not matter, the `--seed`
//! override does. Every artifact a command writes embeds this hash, so a
//! report can always be traced back to the exact effective configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use pairlearn::experiments::{LambdaRule, NoiseSpec, PerturbationFamily, SyntheticSpec, TruthFn};
use pairlearn::risk::TRAIN_SIZE_CAP;
use pairlearn::{LossSpec, PairKernel, TrainConfig};

use crate::CliError;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Top-level run configuration. Only the blocks the invoked command reads
/// may be present; unknown keys anywhere are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    /// Must equal the invoked subcommand; catches config/command mixups.
    pub command: String,
    /// Master seed. Synthetic draws, pair subsampling defaults, and every
    /// replicate seed derive from it.
    pub seed: u64,
    #[serde(default)]
    pub kernel: Option<PairKernel>,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub synthetic: Option<SyntheticBlock>,
    #[serde(default)]
    pub influence: Option<InfluenceBlock>,
    #[serde(default)]
    pub bias_sweep: Option<BiasSweepBlock>,
    #[serde(default)]
    pub consistency: Option<ConsistencyBlock>,
    #[serde(default)]
    pub bootstrap: Option<BootstrapBlock>,
    #[serde(default)]
    pub qualrobust: Option<QualRobustBlock>,
}

/// Synthetic data shape; the draw seed is the top-level config seed, so a
/// `--seed` override moves every derived stream at once.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlock {
    pub n: usize,
    pub d: usize,
    pub truth: TruthFn,
    pub noise: NoiseSpec,
}

impl SyntheticBlock {
    pub fn to_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n: self.n,
            d: self.d,
            truth: self.truth,
            noise: self.noise,
            seed,
        }
    }
}

/// Dirac contamination site for the influence function.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceBlock {
    pub x0: Vec<f64>,
    pub y0: f64,
}

/// Point contaminant and mixture levels for the maxbias sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSweepBlock {
    pub epsilons: Vec<f64>,
    pub contaminant: ContaminantBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminantBlock {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyBlock {
    pub rule: LambdaRule,
    pub n_grid: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapBlock {
    pub lambda: f64,
    pub n_grid: Vec<usize>,
    pub b_reps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualRobustBlock {
    pub lambda: f64,
    pub deltas: Vec<f64>,
    pub reps: usize,
    pub family: PerturbationFamily,
}

/// Reads, hashes, and validates a config file for `command`. The optional
/// seed override replaces the top-level seed before hashing, so the hash
/// always matches the effective configuration the run used.
pub fn load(
    path: &Path,
    command: &str,
    seed_override: Option<u64>,
) -> Result<(RunConfig, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))?;
    if let Some(seed) = seed_override {
        let map = value
            .as_object_mut()
            .ok_or_else(|| CliError::Config("config root must be a JSON object".into()))?;
        map.insert("seed".into(), seed.into());
    }
    // serde_json maps are ordered, so compact re-serialization is a
    // canonical form independent of the file's key order and layout.
    let canonical = value.to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let config: RunConfig =
        serde_json::from_value(value.clone()).map_err(|e| CliError::json(path, e))?;
    // Tagged-enum payloads bypass serde's unknown-field rejection, so a
    // typoed or misplaced key inside, say, the kernel spec would be
    // silently dropped. Echoing the parsed config back and requiring every
    // input key path to reappear closes that hole.
    let echoed = serde_json::to_value(&config).expect("config serializes");
    let mut dropped = Vec::new();
    collect_dropped_keys(&value, &echoed, String::new(), &mut dropped);
    if !dropped.is_empty() {
        return Err(CliError::Config(format!(
            "unknown or misplaced config keys: {}",
            dropped.join(", ")
        )));
    }
    config.validate(command)?;
    Ok((config, hash))
}

/// Records every key path present in `input` but absent from the echoed
/// round-trip. Serialization only adds keys (defaults), never renames, so
/// an input key missing from the echo was not consumed by the schema.
fn collect_dropped_keys(input: &Value, echoed: &Value, path: String, out: &mut Vec<String>) {
    match (input, echoed) {
        (Value::Object(im), Value::Object(em)) => {
            for (key, iv) in im {
                let sub = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                match em.get(key) {
                    Some(ev) => collect_dropped_keys(iv, ev, sub, out),
                    None => out.push(sub),
                }
            }
        }
        (Value::Array(ia), Value::Array(ea)) => {
            for (i, (iv, ev)) in ia.iter().zip(ea).enumerate() {
                collect_dropped_keys(iv, ev, format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

impl RunConfig {
    /// Schema and budget checks that do not need the data file. Full pair
    /// enumeration is quadratic in n and the Gram solve quartic, hence the
    /// hard point cap.
    pub fn validate(&self, command: &str) -> Result<(), CliError> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "config format_version {} is not the supported version {}",
                self.format_version, CONFIG_FORMAT_VERSION
            )));
        }
        if self.command != command {
            return Err(CliError::Config(format!(
                "config is for command `{}` but `{}` was invoked",
                self.command, command
            )));
        }
        let blocks = [
            ("kernel", self.kernel.is_some()),
            ("loss", self.loss.is_some()),
            ("train", self.train.is_some()),
            ("synthetic", self.synthetic.is_some()),
            ("influence", self.influence.is_some()),
            ("bias_sweep", self.bias_sweep.is_some()),
            ("consistency", self.consistency.is_some()),
            ("bootstrap", self.bootstrap.is_some()),
            ("qualrobust", self.qualrobust.is_some()),
        ];
        let required: &[&str] = match command {
            "gen-data" => &["synthetic"],
            "train" => &["kernel", "loss", "train"],
            "influence" => &["kernel", "loss", "train", "influence"],
            "bias-sweep" => &["kernel", "loss", "train", "bias_sweep"],
            "consistency" => &["kernel", "loss", "synthetic", "consistency"],
            "bootstrap" => &["kernel", "loss", "synthetic", "bootstrap"],
            "qualrobust" => &["kernel", "loss", "synthetic", "qualrobust"],
            other => {
                return Err(CliError::Config(format!("unknown command `{other}`")));
            }
        };
        for (name, present) in blocks {
            let needed = required.contains(&name);
            if needed && !present {
                return Err(CliError::Config(format!(
                    "command `{command}` requires a `{name}` block"
                )));
            }
            if !needed && present {
                return Err(CliError::Config(format!(
                    "block `{name}` is not used by command `{command}`"
                )));
            }
        }

        if let Some(s) = &self.synthetic {
            check_n("synthetic.n", s.n)?;
        }
        if let Some(c) = &self.consistency {
            check_grid("consistency.n_grid", &c.n_grid)?;
        }
        if let Some(b) = &self.bootstrap {
            check_grid("bootstrap.n_grid", &b.n_grid)?;
        }
        Ok(())
    }
}

fn check_n(what: &str, n: usize) -> Result<(), CliError> {
    if n < 2 {
        return Err(CliError::Config(format!(
            "{what} = {n} is below the minimum of 2 points needed to form a pair"
        )));
    }
    if n > TRAIN_SIZE_CAP {
        return Err(CliError::Config(format!(
            "{what} = {n} exceeds the cap of {TRAIN_SIZE_CAP} points \
             (pair enumeration is O(n^2) and the dense Gram solve O(n^6) from there)"
        )));
    }
    Ok(())
}

fn check_grid(what: &str, grid: &[usize]) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::Config(format!("{what} must not be empty")));
    }
    for &n in grid {
        check_n(what, n)?;
    }
    Ok(())
}
