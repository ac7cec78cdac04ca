//! Plain-text checkpoint format.
//!
//! ```text
//! driftqec-checkpoint 1
//! policy chdqn
//! cell elman            # or gated
//! distance 7
//! dims 16 4 3           # hidden, input, actions
//! seed 123
//! episodes 300
//! iteration 4800
//! hyper {...}           # agent settings as one JSON line
//! online 643            # count, then one value per line
//! ...
//! target 643
//! ...
//! snapshot 4768 643     # iteration, count; one block per ring entry
//! ...
//! end
//! ```
//!
//! Values use the shortest exponent form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use driftqec_core::agent::{AgentHyper, InputScaling, Learner, LearnerState, QPolicy, RecurrentQNet};
use driftqec_core::baseline::GatedParams;
use driftqec_core::env::{NUM_ACTIONS, OBS_DIM};
use driftqec_core::grad::{CellDims, ParamSet};
use driftqec_core::policy::Policy;

use crate::output::write_atomic;
use crate::CliError;

pub const MAGIC: &str = "driftqec-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Elman,
    Gated,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Elman => "elman",
            CellKind::Gated => "gated",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "elman" => Some(CellKind::Elman),
            "gated" => Some(CellKind::Gated),
            _ => None,
        }
    }

    pub fn param_count(self, dims: CellDims) -> usize {
        match self {
            CellKind::Elman => dims.param_count(),
            CellKind::Gated => GatedParams::param_count_for(dims),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: String,
    pub cell: CellKind,
    pub distance: u32,
    pub dims: CellDims,
    pub seed: u64,
    pub hyper: AgentHyper,
    pub state: LearnerState,
}

impl Checkpoint {
    pub fn from_learner<N: RecurrentQNet>(
        learner: &Learner<N>,
        policy: &str,
        cell: CellKind,
        distance: u32,
        seed: u64,
    ) -> Self {
        let net = learner.online();
        Self {
            policy: policy.to_string(),
            cell,
            distance,
            dims: CellDims::new(net.latent_dim(), net.input_dim(), net.num_actions()),
            seed,
            hyper: learner.hyper().clone(),
            state: learner.state(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = self.dims;
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(s, "policy {}", self.policy);
        let _ = writeln!(s, "cell {}", self.cell.name());
        let _ = writeln!(s, "distance {}", self.distance);
        let _ = writeln!(s, "dims {} {} {}", d.hidden, d.input, d.actions);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "episodes {}", self.state.episodes_done);
        let _ = writeln!(s, "iteration {}", self.state.iteration);
        let _ = writeln!(s, "hyper {}", serde_json::to_string(&self.hyper).expect("hyper serializes"));
        let block = |s: &mut String, head: String, values: &[f64]| {
            let _ = writeln!(s, "{head}");
            for v in values {
                let _ = writeln!(s, "{v:e}");
            }
        };
        block(&mut s, format!("online {}", self.state.online.len()), &self.state.online);
        block(&mut s, format!("target {}", self.state.target.len()), &self.state.target);
        for (it, p) in &self.state.snapshots {
            block(&mut s, format!("snapshot {it} {}", p.len()), p);
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut r = Reader::new(text);
        let version: u32 = r.scalar(MAGIC)?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version} (expected {VERSION})"));
        }
        let policy: String = r.scalar("policy")?;
        let cell_name: String = r.scalar("cell")?;
        let cell = CellKind::parse(&cell_name).ok_or_else(|| format!("line {}: unknown cell `{cell_name}`", r.line))?;
        let distance = r.scalar("distance")?;
        let d: Vec<usize> = r.fields("dims", 3)?;
        let dims = CellDims::new(d[0], d[1], d[2]);
        let seed = r.scalar("seed")?;
        let episodes_done = r.scalar("episodes")?;
        let iteration = r.scalar("iteration")?;
        let json = r.next("hyper")?.strip_prefix("hyper ").ok_or_else(|| format!("line {}: expected `hyper`", r.line))?;
        let hyper: AgentHyper = serde_json::from_str(json).map_err(|e| format!("line {}: {e}", r.line))?;
        let count: usize = r.scalar("online")?;
        let online = r.values(count)?;
        let count: usize = r.scalar("target")?;
        let target = r.values(count)?;
        let mut snapshots = Vec::new();
        loop {
            let line = r.next("snapshot or end")?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "snapshot" {
                return Err(format!("line {}: expected `snapshot <iteration> <count>` or `end`", r.line));
            }
            let it: u64 = parse_num(r.line, parts[1])?;
            let count: usize = parse_num(r.line, parts[2])?;
            snapshots.push((it, r.values(count)?));
        }
        Ok(Self {
            policy,
            cell,
            distance,
            dims,
            seed,
            hyper,
            state: LearnerState {
                online,
                target,
                snapshots,
                episodes_done,
                iteration,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let ck = Self::parse(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        ck.check().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(ck)
    }

    /// Shape checks against the environment and the stored settings.
    pub fn check(&self) -> Result<(), String> {
        let d = self.dims;
        if d.input != OBS_DIM || d.actions != NUM_ACTIONS {
            return Err(format!(
                "dimension mismatch: checkpoint has {} inputs and {} actions, the environment has {OBS_DIM} and {NUM_ACTIONS}",
                d.input, d.actions
            ));
        }
        let count = self.cell.param_count(d);
        let blocks = [&self.state.online, &self.state.target]
            .into_iter()
            .chain(self.state.snapshots.iter().map(|(_, p)| p));
        for b in blocks {
            if b.len() != count {
                return Err(format!(
                    "dimension mismatch: {} cell with dims {}x{}x{} needs {count} parameters, found {}",
                    self.cell.name(),
                    d.hidden,
                    d.input,
                    d.actions,
                    b.len()
                ));
            }
        }
        if self.cell == CellKind::Elman && self.hyper.hidden != d.hidden {
            return Err(format!(
                "dimension mismatch: hyper.hidden = {} but dims say {}",
                self.hyper.hidden, d.hidden
            ));
        }
        Ok(())
    }

    /// A fresh greedy policy on the online parameters.
    pub fn policy(&self) -> Result<Box<dyn Policy + Send>, CliError> {
        let flat = self.state.online.clone();
        let scaling: InputScaling = self.hyper.scaling;
        Ok(match self.cell {
            CellKind::Elman => Box::new(QPolicy::greedy(ParamSet::from_flat(self.dims, flat)?, scaling)),
            CellKind::Gated => Box::new(QPolicy::greedy(GatedParams::from_flat(self.dims, flat)?, scaling)),
        })
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("line {line}: cannot parse `{s}`"))
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines(), line: 0 }
    }

    fn next(&mut self, want: &str) -> Result<&'a str, String> {
        self.line += 1;
        self.lines
            .next()
            .ok_or_else(|| format!("unexpected end of file, expected `{want}`"))
    }

    fn fields<T: std::str::FromStr>(&mut self, key: &str, arity: usize) -> Result<Vec<T>, String> {
        let line = self.next(key)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() != Some(&key) || parts.len() != arity + 1 {
            return Err(format!("line {}: expected `{key}` with {arity} value(s)", self.line));
        }
        parts[1..].iter().map(|p| parse_num(self.line, p)).collect()
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, String> {
        Ok(self.fields(key, 1)?.remove(0))
    }

    fn values(&mut self, count: usize) -> Result<Vec<f64>, String> {
        (0..count)
            .map(|_| {
                let v: f64 = parse_num(self.line + 1, self.next("a value")?.trim())?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("line {}: non-finite value", self.line))
                }
            })
            .collect()
    }
}
