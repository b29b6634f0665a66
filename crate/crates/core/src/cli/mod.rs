//! Scenario-driven front end: hypothesis checks, runs and output artifacts.

pub mod scenario;

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agents::MODEL_CATALOG;
use crate::graph::{symmetric_part_positive_definite, LeaderGraph};
use crate::sim::{simulate, verify_convergence, ConvergenceReport, SimError, Trajectory};

pub use scenario::{
    parse_scenario, AgentSpec, IntegratorSettings, Mode, Overrides, Scenario, ScenarioError,
};

pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const ACCEPTANCE_FAILURE: i32 = 1;
    pub const INVALID_INPUT: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
}

/// Topology conditions under which the protocol is known to reach consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisSet {
    /// Leaderless; graph undirected and connected.
    LeaderlessUndirected,
    /// Leaderless; digraph weight-balanced and weakly connected.
    LeaderlessBalanced,
    /// Leader; follower graph undirected and connected, leader reaches everyone.
    LeaderUndirected,
    /// Leader; follower digraph balanced and weakly connected, leader reaches everyone.
    LeaderBalanced,
}

impl fmt::Display for HypothesisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LeaderlessUndirected => "leaderless/undirected-connected",
            Self::LeaderlessBalanced => "leaderless/balanced-weakly-connected",
            Self::LeaderUndirected => "leader/undirected-connected-followers+leader-reachable",
            Self::LeaderBalanced => "leader/balanced-weakly-connected-followers+leader-reachable",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub mode: Mode,
    pub undirected: bool,
    pub balanced: bool,
    pub strongly_connected: bool,
    pub weakly_connected: bool,
    pub leader_reachable: Option<bool>,
    pub h_positive_definite: Option<bool>,
    /// Every hypothesis set the scenario satisfies, strongest first.
    pub satisfied: Vec<HypothesisSet>,
    pub warnings: Vec<String>,
}

impl AssumptionReport {
    pub fn guaranteed(&self) -> bool {
        !self.satisfied.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let flag = |b: bool| if b { "true" } else { "false" };
        let opt = |b: Option<bool>| b.map_or("n/a", flag);
        let _ = writeln!(out, "mode = {}", self.mode);
        let _ = writeln!(out, "undirected = {}", flag(self.undirected));
        let _ = writeln!(out, "balanced = {}", flag(self.balanced));
        let _ = writeln!(
            out,
            "strongly_connected = {}",
            flag(self.strongly_connected)
        );
        let _ = writeln!(out, "weakly_connected = {}", flag(self.weakly_connected));
        let _ = writeln!(out, "leader_reachable = {}", opt(self.leader_reachable));
        let _ = writeln!(
            out,
            "h_positive_definite = {}",
            opt(self.h_positive_definite)
        );
        let sets: Vec<String> = self.satisfied.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            out,
            "hypotheses = {}",
            if sets.is_empty() {
                "none".to_string()
            } else {
                sets.join(", ")
            }
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning = {w}");
        }
        out
    }
}

/// Evaluates the graph predicates relevant to the scenario's mode.
pub fn check_assumptions(s: &Scenario) -> AssumptionReport {
    let g = &s.graph;
    let undirected = g.is_undirected();
    let balanced = g.is_balanced();
    let strongly_connected = g.is_strongly_connected();
    let weakly_connected = g.is_weakly_connected();
    let mut satisfied = Vec::new();
    let mut warnings = Vec::new();

    let (leader_reachable, h_positive_definite) = match &s.leader_weights {
        None => {
            if undirected && strongly_connected {
                satisfied.push(HypothesisSet::LeaderlessUndirected);
            }
            if balanced && weakly_connected {
                satisfied.push(HypothesisSet::LeaderlessBalanced);
            }
            (None, None)
        }
        Some(w) => {
            let lg = LeaderGraph::new(g.clone(), w.clone()).expect("validated leader weights");
            let reachable = lg.leader_globally_reachable();
            let pd = symmetric_part_positive_definite(&lg.h_matrix());
            if reachable && undirected && strongly_connected {
                satisfied.push(HypothesisSet::LeaderUndirected);
            }
            if reachable && balanced && weakly_connected {
                satisfied.push(HypothesisSet::LeaderBalanced);
            }
            if !reachable {
                warnings.push("leader output does not reach every follower".to_string());
            }
            if let Some(l) = s.leader {
                if l.x0 != 0.0 {
                    warnings.push(format!(
                        "leader value x0 = {} is nonzero; tracking is only guaranteed for x0 = 0",
                        l.x0
                    ));
                }
            }
            (Some(reachable), Some(pd))
        }
    };

    if !balanced {
        warnings.push("communication graph is not weight-balanced".to_string());
    }
    if !weakly_connected {
        warnings.push("communication graph is not connected".to_string());
    }
    if satisfied.is_empty() {
        warnings.push(
            "no sufficient topology condition holds; convergence is not guaranteed".to_string(),
        );
    }

    AssumptionReport {
        mode: s.mode,
        undirected,
        balanced,
        strongly_connected,
        weakly_connected,
        leader_reachable,
        h_positive_definite,
        satisfied,
        warnings,
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Sim(SimError::NonFinite { .. } | SimError::Control { .. }) => {
                exit_code::DIVERGENCE
            }
            Self::Sim(_) | Self::Io { .. } => exit_code::INVALID_INPUT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub assumptions: AssumptionReport,
    pub report: ConvergenceReport,
    pub trajectory: Trajectory,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.passed() {
            exit_code::SUCCESS
        } else {
            exit_code::ACCEPTANCE_FAILURE
        }
    }
}

/// Simulates `s` and writes `trajectory.csv`, `summary.txt`, `plot_outputs.dat`
/// and `plot_gains.dat` into `out_dir`, replacing any previous files.
pub fn run(s: &Scenario, out_dir: &Path) -> Result<RunOutcome, RunError> {
    let assumptions = check_assumptions(s);
    let (sys, z0) = s.build()?;
    let integ = s.integrator;
    let trajectory = simulate(&sys, &z0, integ.dt, integ.duration, integ.record_every)?;
    let report = verify_convergence(&trajectory, &s.acceptance);
    let outcome = RunOutcome {
        assumptions,
        report,
        trajectory,
    };

    fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let write = |name: &str, body: String| {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|source| RunError::Io { path, source })
    };
    write("trajectory.csv", trajectory_csv(&outcome.trajectory))?;
    write("summary.txt", summary(s, &outcome))?;
    write("plot_outputs.dat", plot_outputs(&outcome.trajectory))?;
    write("plot_gains.dat", plot_gains(&outcome.trajectory))?;
    Ok(outcome)
}

fn num(v: f64) -> String {
    // Print negative zero as zero.
    format!("{:.16e}", v + 0.0)
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// CSV with 17 significant digits; `tracking_error` is empty without a leader.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.agent_count();
    let mut header = vec!["t".to_string()];
    header.extend(indexed("y", n));
    header.extend(indexed("k", n));
    header.extend(indexed("u", n));
    header.extend(
        ["spread", "disagreement", "tracking_error", "gain_sum"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut out = header.join(",");
    out.push('\n');
    for r in 0..traj.len() {
        let m = &traj.metrics[r];
        let mut row = vec![num(traj.times[r])];
        row.extend(traj.outputs[r].iter().map(|&v| num(v)));
        row.extend(traj.gains[r].iter().map(|&v| num(v)));
        row.extend(traj.inputs[r].iter().map(|&v| num(v)));
        row.push(num(m.spread));
        row.push(num(m.disagreement));
        row.push(m.tracking_error.map(num).unwrap_or_default());
        row.push(num(m.gain_sum));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn plot_table(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = format!("# {}\n", header.join(" "));
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(num).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// `t y_1 .. y_N`, plus a trailing `y_0` column in leader mode.
pub fn plot_outputs(traj: &Trajectory) -> String {
    let mut header = vec!["t".to_string()];
    header.extend(indexed("y", traj.agent_count()));
    if traj.leader_output.is_some() {
        header.push("y_0".to_string());
    }
    let rows = (0..traj.len()).map(|r| {
        let mut row = vec![traj.times[r]];
        row.extend_from_slice(&traj.outputs[r]);
        row.extend(traj.leader_output);
        row
    });
    plot_table(&header, rows)
}

pub fn plot_gains(traj: &Trajectory) -> String {
    let mut header = vec!["t".to_string()];
    header.extend(indexed("k", traj.agent_count()));
    let rows = (0..traj.len()).map(|r| {
        let mut row = vec![traj.times[r]];
        row.extend_from_slice(&traj.gains[r]);
        row
    });
    plot_table(&header, rows)
}

/// Key-value run summary. Contains no wall-clock data so reruns are byte-identical.
pub fn summary(s: &Scenario, outcome: &RunOutcome) -> String {
    let r = &outcome.report;
    let traj = &outcome.trajectory;
    let mut out = String::new();
    let list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let _ = writeln!(out, "scenario = {}", s.name);
    let _ = writeln!(out, "agents = {}", s.agent_count());
    let _ = writeln!(
        out,
        "models = {}",
        s.agents
            .iter()
            .map(|a| a.model.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let b: Vec<f64> = s.agents.iter().map(|a| a.b).collect();
    let _ = writeln!(out, "b = {}", list(&b));
    if let Some(l) = s.leader {
        let _ = writeln!(out, "leader_x0 = {}", l.x0);
    }
    let _ = writeln!(out, "nussbaum = {}", s.nussbaum);
    let _ = writeln!(out, "k0 = {}", list(&s.k0));
    let _ = writeln!(out, "dt = {}", s.integrator.dt);
    let _ = writeln!(out, "duration = {}", s.integrator.duration);
    let _ = writeln!(out, "record_every = {}", s.integrator.record_every);
    let _ = writeln!(out, "eps = {}", s.acceptance.eps);
    let _ = writeln!(out, "window = {}", s.acceptance.window);
    let _ = writeln!(out, "ceiling = {}", s.acceptance.ceiling);
    out.push_str(&outcome.assumptions.render());

    let _ = writeln!(out, "samples = {}", traj.len());
    let _ = writeln!(out, "final_time = {}", traj.final_time());
    if let (Some(y), Some(k), Some(m)) =
        (traj.outputs.last(), traj.gains.last(), traj.metrics.last())
    {
        let _ = writeln!(out, "final_y = {}", list(y));
        let _ = writeln!(out, "final_k = {}", list(k));
        let _ = writeln!(out, "final_spread = {}", num(m.spread));
        let _ = writeln!(out, "final_disagreement = {}", num(m.disagreement));
        if let Some(e) = m.tracking_error {
            let _ = writeln!(out, "final_tracking_error = {}", num(e));
        }
        let _ = writeln!(out, "final_gain_sum = {}", num(m.gain_sum));
    }
    let _ = writeln!(out, "window_start = {}", r.window_start);
    let _ = writeln!(
        out,
        "max_spread_in_window = {}",
        num(r.max_spread_in_window)
    );
    if let Some(e) = r.max_tracking_in_window {
        let _ = writeln!(out, "max_tracking_error_in_window = {}", num(e));
    }
    let _ = writeln!(out, "max_abs_state = {}", num(r.max_abs_state));
    let _ = writeln!(out, "max_abs_gain = {}", num(r.max_abs_gain));
    let _ = writeln!(out, "consensus = {}", r.consensus);
    let _ = writeln!(out, "bounded = {}", r.bounded);
    let _ = writeln!(
        out,
        "tracking = {}",
        r.tracking.map_or("n/a".to_string(), |t| t.to_string())
    );
    let _ = writeln!(out, "passed = {}", r.passed());
    let _ = writeln!(out, "exit_code = {}", outcome.exit_code());
    out
}

/// Human-readable list of the model ids accepted in scenario files.
pub fn list_models() -> String {
    let mut out = String::new();
    for m in MODEL_CATALOG {
        let _ = writeln!(out, "{}, state_dim={}", m.id, m.state_dim);
        let _ = writeln!(out, "    dynamics:    {}", m.dynamics);
        let _ = writeln!(out, "    certificate: {}", m.certificate);
    }
    out
}
