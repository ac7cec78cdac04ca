//! Run configuration: TOML file, dotted overrides, validation and the
//! documented reference config.

use std::fs;
use std::path::{Path, PathBuf};

use driftqec_core::agent::AgentHyper;
use driftqec_core::env::EnvConfig;
use driftqec_core::eval::CiMethod;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the output root; `--out` takes precedence.
pub const OUTPUT_ROOT_VAR: &str = "DRIFTQEC_OUTPUT_ROOT";

/// Name of the resolved-config snapshot written into every output directory.
pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub env: EnvConfig,
    pub agent: AgentHyper,
    pub baseline: BaselineConfig,
    pub harness: HarnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            output_dir: "runs".into(),
            seed: 2024,
            env: EnvConfig::default(),
            agent: AgentHyper::default(),
            baseline: BaselineConfig::default(),
            harness: HarnessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Hidden width of the gated learner; unset picks the width whose
    /// parameter count is closest to the learner's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub distances: Vec<u32>,
    pub train_episodes: usize,
    pub eval_runs: usize,
    pub full_eval_runs: usize,
    pub eval_seed: u64,
    pub ci: CiMethod,
    pub bootstrap_resamples: usize,
    pub ablation_distance: u32,
    pub traces: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            distances: vec![3, 5, 7],
            train_episodes: 300,
            eval_runs: 300,
            full_eval_runs: 500,
            eval_seed: 1_000_000,
            ci: CiMethod::Normal,
            bootstrap_resamples: 2000,
            ablation_distance: 7,
            traces: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text =
                    fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.into_inner().to_string();
            CliError::Config(format!("{path}: {}", msg.lines().next().unwrap_or_default()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config always serializes")
    }

    /// The applied config as TOML; loading it gives back `self`.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Every problem is reported at once, each prefixed with its field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            errs.push("name: must be non-empty and use only [A-Za-z0-9-_.]".to_string());
        }
        if let Err(e) = self.env.validate() {
            errs.extend(messages(e, "env."));
        }
        if let Err(e) = self.agent.validate() {
            errs.extend(messages(e, "agent."));
        }
        if self.baseline.hidden == Some(0) {
            errs.push("baseline.hidden: must be at least 1".into());
        }
        let h = &self.harness;
        if h.distances.is_empty() {
            errs.push("harness.distances: must not be empty".into());
        }
        for &d in h.distances.iter().chain([&h.ablation_distance]) {
            if d < 3 || d % 2 == 0 {
                errs.push(format!("harness: distance {d} must be odd and >= 3"));
            }
        }
        if h.eval_runs == 0 || h.full_eval_runs == 0 {
            errs.push("harness.eval_runs: must be at least 1".into());
        }
        if h.ci == CiMethod::Bootstrap && h.bootstrap_resamples == 0 {
            errs.push("harness.bootstrap_resamples: must be at least 1 with ci = \"bootstrap\"".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs.join("; ")))
        }
    }

    /// `--out` (or the environment variable) replaces `output_dir`; the run
    /// name is appended either way.
    pub fn output_path(&self, root: Option<&Path>) -> PathBuf {
        root.unwrap_or(&self.output_dir).join(&self.name)
    }

    pub fn env_at(&self, distance: u32) -> EnvConfig {
        self.env.clone().with_distance(distance)
    }
}

fn messages(e: driftqec_core::Error, prefix: &str) -> Vec<String> {
    match e {
        driftqec_core::Error::InvalidConfig(list) => list
            .into_iter()
            .map(|m| if m.starts_with(prefix) { m } else { format!("{prefix}{m}") })
            .collect(),
        other => vec![format!("{prefix}{other}")],
    }
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value`.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}`: expected key=value")))?;
    set_path(table, key.trim(), parse_value(raw.trim()))
}

pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `(path, description, example for keys that are unset by default)`.
pub const KEY_DOCS: &[(&str, &str, Option<&str>)] = &[
    ("name", "Experiment name; outputs go to <output_dir>/<name>.", None),
    ("output_dir", "Output root. Overridden by --out or DRIFTQEC_OUTPUT_ROOT.", None),
    ("seed", "Master seed. Training seeds are derived from it per distance.", None),
    ("env.distance", "Code distance when a command is not given a distance list.", None),
    ("env.c_threshold", "Failure threshold constant c in H_crit(d) = c * sqrt(d).", None),
    ("env.lambda_action", "Control-cost weight per unit of action magnitude.", None),
    (
        "env.sigma_margin",
        "Threshold of the pi indicator on the noise proxy.\nUnset: 1.5x its stationary mean.",
        Some("0.05"),
    ),
    ("env.max_cycles", "Episode cap; episodes reaching it are censored.", None),
    ("env.obs_noise_std", "Gaussian noise on the sigma observation.", None),
    ("env.noise.drift_std", "Random-walk increment std of the slow drift.", None),
    ("env.noise.beta", "Power-law decay exponent of the long-memory fluctuations.", None),
    ("env.noise.scale", "Long-memory amplitude C; 0 disables the fluctuations.", None),
    ("env.noise.lag0_factor", "Lag-0 variance as a multiple of C (>= 2 - 2^-beta keeps it valid).", None),
    ("env.regime.transition", "Rows of the regime transition matrix (spectral radius < 1).", None),
    ("env.regime.action_column", "Regime shift per unit action magnitude.", None),
    ("env.regime.innovation_cov", "Rows of the regime innovation covariance (PSD).", None),
    ("env.regime.initial", "Initial regime: \"stationary\" or \"zero\".", None),
    ("env.channel.weights", "Softmax weight rows for I, X, Y, Z over the regime components.", None),
    ("env.channel.logit_offset", "Constant logit per Pauli label (I, X, Y, Z).", None),
    ("env.channel.suppression_threshold", "Physical error threshold of the distance suppression law.", None),
    ("env.channel.base_prefactor", "Prefactor of the distance suppression law.", None),
    ("env.channel.initial_bloch", "Bloch vector of the encoded logical state (unit norm).", None),
    ("agent.hidden", "Latent width of the recurrent cell.", None),
    ("agent.eta", "Gradient step size.", None),
    ("agent.eta_meta", "Weight of the fractional history term; at most 0.1 * eta.", None),
    ("agent.gamma_frac", "Exponent of the power-law history kernel, in (0, 1).", None),
    ("agent.memory", "Number of parameter increments in the history kernel.", None),
    ("agent.gamma_disc", "TD discount.", None),
    ("agent.window", "Length of replayed training windows.", None),
    ("agent.consistency_weight", "Weight of the smoothed-latent consistency loss; 0 disables it.", None),
    ("agent.target_tau", "Soft target-network update per training step.", None),
    ("agent.replay_capacity", "Complete episodes kept for replay.", None),
    ("agent.batch_windows", "Windows averaged into one gradient.", None),
    ("agent.updates_per_episode", "Gradient steps after each episode.", None),
    ("agent.grad_clip", "Gradient norm cap; 0 disables clipping.", None),
    ("agent.epsilon.start", "Initial exploration rate.", None),
    ("agent.epsilon.end", "Final exploration rate.", None),
    ("agent.epsilon.decay_fraction", "Fraction of episodes over which epsilon decays linearly.", None),
    ("agent.scaling.observation", "Input multipliers for (rho, sigma, pi, hazard).", None),
    ("agent.scaling.reward", "Multiplier for rewards fed to the cell and to TD targets.", None),
    (
        "baseline.hidden",
        "Hidden width of the gated baseline. Unset: matched parameter count.",
        Some("10"),
    ),
    ("harness.distances", "Code distances trained and evaluated.", None),
    ("harness.train_episodes", "Training episodes per learner.", None),
    ("harness.eval_runs", "Evaluation runs per policy and distance.", None),
    ("harness.full_eval_runs", "Evaluation runs under --full.", None),
    ("harness.eval_seed", "Run i is seeded eval_seed + i, shared by every policy.", None),
    ("harness.ci", "Confidence interval of the TTT mean: \"normal\" or \"bootstrap\".", None),
    ("harness.bootstrap_resamples", "Resamples for the bootstrap interval.", None),
    ("harness.ablation_distance", "Distance used by the ablate command.", None),
    ("harness.traces", "Write per-cycle JSONL traces of every evaluation run.", None),
];

fn doc_for(path: &str) -> Option<&'static (&'static str, &'static str, Option<&'static str>)> {
    KEY_DOCS.iter().find(|(p, _, _)| *p == path)
}

fn push_doc(out: &mut String, doc: &str) {
    for l in doc.lines() {
        out.push_str("# ");
        out.push_str(l);
        out.push('\n');
    }
}

/// The default config with every key documented in a comment.
pub fn reference_config() -> String {
    let body = RunConfig::default().resolved();
    let mut out = String::from("# driftqec run configuration. Every key is optional; shown values are the defaults.\n\n");
    let mut section = String::new();
    let unset = |section: &str, out: &mut String| {
        let had_gap = out.ends_with("\n\n");
        if had_gap {
            out.pop();
        }
        for (path, doc, example) in KEY_DOCS {
            let Some(example) = example else { continue };
            let (parent, key) = path.rsplit_once('.').unwrap_or(("", path));
            if parent == section {
                push_doc(out, doc);
                out.push_str(&format!("# {key} = {example}\n"));
            }
        }
        if had_gap {
            out.push('\n');
        }
    };
    for line in body.lines() {
        if line.starts_with('[') {
            unset(&section, &mut out);
            section = line.trim_matches(|c| c == '[' || c == ']').to_string();
            out.push_str(line);
            out.push('\n');
            continue;
        }
        if let Some((key, _)) = line.split_once(" = ") {
            let path = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            if let Some((_, doc, _)) = doc_for(&path) {
                push_doc(&mut out, doc);
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    unset(&section, &mut out);
    out
}
