//! TOML scenario documents: parsing with located diagnostics, validation,
//! defaults and canonical re-serialization.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::agents::{model_by_id, AgentError, AgentModel, LeaderModel};
use crate::control::{ControllerState, NussbaumKind, Protocol};
use crate::graph::{Digraph, GraphError, LeaderGraph};
use crate::sim::{ClosedLoopSystem, ConvergenceCriteria, SimError, DEFAULT_CEILING};

pub const DEFAULT_DT: f64 = 0.001;
pub const DEFAULT_DURATION: f64 = 100.0;
pub const DEFAULT_RECORD_EVERY: usize = 100;
pub const DEFAULT_EPS: f64 = 0.05;
pub const DEFAULT_WINDOW: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{0}")]
    Syntax(String),
    #[error("{path}{}: {message}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid {
        path: String,
        line: Option<usize>,
        message: String,
    },
}

impl ScenarioError {
    fn at(path: impl Into<String>, line: Option<usize>, message: impl fmt::Display) -> Self {
        Self::Invalid {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            Self::Invalid { path, .. } => Some(path),
            Self::Syntax(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Leaderless,
    Leader,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Leaderless => "leaderless",
            Self::Leader => "leader",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub model: String,
    pub b: f64,
    pub init: Vec<f64>,
}

impl AgentSpec {
    pub fn build(&self) -> Result<AgentModel, AgentError> {
        model_by_id(&self.model, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    pub dt: f64,
    pub duration: f64,
    pub record_every: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            duration: DEFAULT_DURATION,
            record_every: DEFAULT_RECORD_EVERY,
        }
    }
}

/// A fully validated experiment description with all defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    /// Inter-agent graph (followers only in leader mode).
    pub graph: Digraph,
    /// Pinning gains `a_i0`; present iff `mode == Leader`.
    pub leader_weights: Option<Vec<f64>>,
    pub leader: Option<LeaderModel>,
    pub agents: Vec<AgentSpec>,
    pub nussbaum: NussbaumKind,
    pub k0: Vec<f64>,
    pub integrator: IntegratorSettings,
    pub acceptance: ConvergenceCriteria,
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub nussbaum: Option<NussbaumKind>,
}

impl Scenario {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn protocol(&self) -> Protocol {
        match &self.leader_weights {
            None => Protocol::Leaderless(self.graph.clone()),
            Some(w) => Protocol::LeaderFollowing(
                LeaderGraph::new(self.graph.clone(), w.clone())
                    .expect("leader weights validated at parse time"),
            ),
        }
    }

    /// Closed-loop system and packed initial state.
    pub fn build(&self) -> Result<(ClosedLoopSystem, Vec<f64>), SimError> {
        let agents = self
            .agents
            .iter()
            .map(|a| a.build().expect("agent models validated at parse time"))
            .collect();
        let controllers = self
            .k0
            .iter()
            .map(|&k| ControllerState::new(k, self.nussbaum))
            .collect();
        let sys = ClosedLoopSystem::new(agents, controllers, self.protocol(), self.leader)?;
        let inits: Vec<Vec<f64>> = self.agents.iter().map(|a| a.init.clone()).collect();
        let z0 = sys.initial_state(&inits)?;
        Ok((sys, z0))
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<(), ScenarioError> {
        let mut integ = self.integrator;
        if let Some(dt) = o.dt {
            integ.dt = dt;
        }
        if let Some(duration) = o.duration {
            integ.duration = duration;
        }
        validate_integrator(&integ, "--dt/--duration", None)?;
        self.integrator = integ;
        if let Some(kind) = o.nussbaum {
            self.nussbaum = kind;
        }
        Ok(())
    }

    /// Canonical TOML: explicit matrix, every default spelled out.
    pub fn to_toml(&self) -> String {
        let n = self.agent_count();
        let doc = EmitScenario {
            name: &self.name,
            mode: self.mode,
            nussbaum: self.nussbaum,
            k0: &self.k0,
            graph: EmitGraph {
                matrix: (0..n)
                    .map(|i| (0..n).map(|j| self.graph.weight(i, j)).collect())
                    .collect(),
                leader_edges: self.leader_weights.as_ref().map(|w| {
                    w.iter()
                        .enumerate()
                        .filter(|(_, &w)| w > 0.0)
                        .map(|(i, &w)| (i + 1, w))
                        .collect()
                }),
            },
            leader: self.leader.map(|l| EmitLeader {
                model: "leader",
                x0: l.x0,
            }),
            agents: self
                .agents
                .iter()
                .map(|a| EmitAgent {
                    model: &a.model,
                    b: a.b,
                    init: &a.init,
                })
                .collect(),
            integrator: EmitIntegrator {
                dt: self.integrator.dt,
                duration: self.integrator.duration,
                record_every: self.integrator.record_every as u64,
            },
            acceptance: EmitAcceptance {
                eps: self.acceptance.eps,
                window: self.acceptance.window,
                ceiling: self.acceptance.ceiling,
            },
        };
        toml::to_string(&doc).expect("scenario serialization cannot fail")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    mode: Mode,
    #[serde(default)]
    nussbaum: Option<NussbaumKind>,
    #[serde(default)]
    k0: Option<Spanned<Vec<f64>>>,
    graph: Spanned<RawGraph>,
    #[serde(default)]
    leader: Option<Spanned<RawLeader>>,
    agents: Spanned<Vec<Spanned<RawAgent>>>,
    #[serde(default)]
    integrator: Option<Spanned<RawIntegrator>>,
    #[serde(default)]
    acceptance: Option<Spanned<RawAcceptance>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    #[serde(default)]
    nodes: Option<usize>,
    #[serde(default)]
    matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    edges: Option<Vec<Spanned<RawEdge>>>,
    #[serde(default)]
    leader_edges: Option<Vec<Spanned<RawLeaderEdge>>>,
}

/// `[from, to, weight]` or `[from, to]` (unit weight); agents are 1-based.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawEdge {
    Weighted(usize, usize, f64),
    Unit(usize, usize),
}

/// `[agent, weight]` or a bare agent index (unit weight).
#[derive(Deserialize)]
#[serde(untagged)]
enum RawLeaderEdge {
    Weighted(usize, f64),
    Unit(usize),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLeader {
    #[serde(default)]
    model: Option<String>,
    x0: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    model: String,
    #[serde(default)]
    b: Option<Spanned<f64>>,
    #[serde(default)]
    init: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    #[serde(default)]
    dt: Option<f64>,
    #[serde(default)]
    duration: Option<f64>,
    #[serde(default)]
    record_every: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAcceptance {
    #[serde(default)]
    eps: Option<f64>,
    #[serde(default)]
    window: Option<f64>,
    #[serde(default)]
    ceiling: Option<f64>,
}

#[derive(Serialize)]
struct EmitScenario<'a> {
    name: &'a str,
    mode: Mode,
    nussbaum: NussbaumKind,
    k0: &'a [f64],
    graph: EmitGraph,
    #[serde(skip_serializing_if = "Option::is_none")]
    leader: Option<EmitLeader>,
    agents: Vec<EmitAgent<'a>>,
    integrator: EmitIntegrator,
    acceptance: EmitAcceptance,
}

#[derive(Serialize)]
struct EmitGraph {
    matrix: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leader_edges: Option<Vec<(usize, f64)>>,
}

#[derive(Serialize)]
struct EmitLeader {
    model: &'static str,
    x0: f64,
}

#[derive(Serialize)]
struct EmitAgent<'a> {
    model: &'a str,
    b: f64,
    init: &'a [f64],
}

#[derive(Serialize)]
struct EmitIntegrator {
    dt: f64,
    duration: f64,
    record_every: u64,
}

#[derive(Serialize)]
struct EmitAcceptance {
    eps: f64,
    window: f64,
    ceiling: f64,
}

struct LineIndex<'a>(&'a str);

impl LineIndex<'_> {
    fn line(&self, span: Range<usize>) -> Option<usize> {
        let start = span.start.min(self.0.len());
        Some(self.0[..start].matches('\n').count() + 1)
    }
}

fn validate_integrator(
    i: &IntegratorSettings,
    path: &str,
    line: Option<usize>,
) -> Result<(), ScenarioError> {
    if !(i.dt > 0.0 && i.dt.is_finite()) {
        return Err(ScenarioError::at(
            path,
            line,
            format!("dt must be positive, got {}", i.dt),
        ));
    }
    if !(i.duration.is_finite() && i.duration >= i.dt) {
        return Err(ScenarioError::at(
            path,
            line,
            format!("duration {} must be at least dt = {}", i.duration, i.dt),
        ));
    }
    if i.record_every == 0 {
        return Err(ScenarioError::at(
            path,
            line,
            "record_every must be positive",
        ));
    }
    Ok(())
}

fn positive(value: f64, path: &str, line: Option<usize>) -> Result<f64, ScenarioError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ScenarioError::at(
            path,
            line,
            format!("must be positive and finite, got {value}"),
        ))
    }
}

fn graph_err(path: &str, line: Option<usize>, e: GraphError) -> ScenarioError {
    ScenarioError::at(path, line, e)
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario =
        toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
    let lines = LineIndex(text);

    // Agents first: they fix the node count.
    let agents_line = lines.line(raw.agents.span());
    let raw_agents = raw.agents.into_inner();
    if raw_agents.is_empty() {
        return Err(ScenarioError::at(
            "agents",
            agents_line,
            "at least one agent is required",
        ));
    }
    let mut agents = Vec::with_capacity(raw_agents.len());
    for (i, spanned) in raw_agents.into_iter().enumerate() {
        let line = lines.line(spanned.span());
        let a = spanned.into_inner();
        let path = format!("agents[{i}]");
        if a.model == "leader" {
            return Err(ScenarioError::at(
                format!("{path}.model"),
                line,
                "the leader is declared in the [leader] table, not among the agents",
            ));
        }
        let b = a.b.ok_or_else(|| {
            ScenarioError::at(format!("{path}.b"), line, "missing control gain `b`")
        })?;
        let b_line = lines.line(b.span());
        let b = b.into_inner();
        let model = model_by_id(&a.model, b).map_err(|e| match e {
            AgentError::UnknownModel(_) => ScenarioError::at(format!("{path}.model"), line, e),
            _ => ScenarioError::at(format!("{path}.b"), b_line, e),
        })?;
        let init = a.init.unwrap_or_else(|| vec![0.0; model.state_dim()]);
        if init.len() != model.state_dim() {
            return Err(ScenarioError::at(
                format!("{path}.init"),
                line,
                format!(
                    "model `{}` has state dimension {}, got {} initial values",
                    a.model,
                    model.state_dim(),
                    init.len()
                ),
            ));
        }
        if let Some(v) = init.iter().find(|v| !v.is_finite()) {
            return Err(ScenarioError::at(
                format!("{path}.init"),
                line,
                format!("non-finite initial value {v}"),
            ));
        }
        agents.push(AgentSpec {
            model: a.model,
            b,
            init,
        });
    }
    let n = agents.len();

    let graph_line = lines.line(raw.graph.span());
    let rg = raw.graph.into_inner();
    if let Some(nodes) = rg.nodes {
        if nodes != n {
            return Err(ScenarioError::at(
                "graph.nodes",
                graph_line,
                format!("graph declares {nodes} nodes but {n} agents are listed"),
            ));
        }
    }
    let graph = match (rg.matrix, rg.edges) {
        (Some(_), Some(_)) => {
            return Err(ScenarioError::at(
                "graph",
                graph_line,
                "give either `matrix` or `edges`, not both",
            ))
        }
        (None, None) => {
            return Err(ScenarioError::at(
                "graph",
                graph_line,
                "missing `matrix` or `edges`",
            ))
        }
        (Some(rows), None) => {
            if rows.len() != n {
                return Err(ScenarioError::at(
                    "graph.matrix",
                    graph_line,
                    format!(
                        "{}x{} adjacency matrix but {n} agents are listed",
                        rows.len(),
                        rows.len()
                    ),
                ));
            }
            Digraph::from_matrix(&rows).map_err(|e| graph_err("graph.matrix", graph_line, e))?
        }
        (None, Some(edges)) => {
            let mut list = Vec::with_capacity(edges.len());
            for (k, e) in edges.into_iter().enumerate() {
                let line = lines.line(e.span());
                let path = format!("graph.edges[{k}]");
                let (from, to, w) = match e.into_inner() {
                    RawEdge::Weighted(f, t, w) => (f, t, w),
                    RawEdge::Unit(f, t) => (f, t, 1.0),
                };
                for node in [from, to] {
                    if node == 0 || node > n {
                        return Err(ScenarioError::at(
                            path,
                            line,
                            format!("agent index {node} out of range 1..={n}"),
                        ));
                    }
                }
                if from == to {
                    return Err(ScenarioError::at(path, line, "self-loops are not allowed"));
                }
                if !(w.is_finite() && w > 0.0) {
                    return Err(ScenarioError::at(
                        path,
                        line,
                        format!("edge weight must be positive, got {w}"),
                    ));
                }
                list.push((from - 1, to - 1, w));
            }
            Digraph::from_edges(n, &list).map_err(|e| graph_err("graph.edges", graph_line, e))?
        }
    };

    let (leader, leader_weights) = match (raw.mode, raw.leader, rg.leader_edges) {
        (Mode::Leaderless, None, None) => (None, None),
        (Mode::Leaderless, Some(l), _) => {
            return Err(ScenarioError::at(
                "leader",
                lines.line(l.span()),
                "a [leader] table requires mode = \"leader\"",
            ))
        }
        (Mode::Leaderless, None, Some(_)) => {
            return Err(ScenarioError::at(
                "graph.leader_edges",
                graph_line,
                "leader_edges require mode = \"leader\"",
            ))
        }
        (Mode::Leader, None, _) => {
            return Err(ScenarioError::at(
                "leader",
                None,
                "mode = \"leader\" requires a [leader] table",
            ))
        }
        (Mode::Leader, Some(l), edges) => {
            let line = lines.line(l.span());
            let l = l.into_inner();
            if let Some(model) = l.model.as_deref() {
                if model != "leader" {
                    return Err(ScenarioError::at(
                        "leader.model",
                        line,
                        format!("leader model must be `leader`, got `{model}`"),
                    ));
                }
            }
            if !l.x0.is_finite() {
                return Err(ScenarioError::at(
                    "leader.x0",
                    line,
                    "leader value must be finite",
                ));
            }
            let mut weights = vec![0.0; n];
            for (k, e) in edges.unwrap_or_default().into_iter().enumerate() {
                let line = lines.line(e.span());
                let path = format!("graph.leader_edges[{k}]");
                let (agent, w) = match e.into_inner() {
                    RawLeaderEdge::Weighted(a, w) => (a, w),
                    RawLeaderEdge::Unit(a) => (a, 1.0),
                };
                if agent == 0 || agent > n {
                    return Err(ScenarioError::at(
                        path,
                        line,
                        format!("agent index {agent} out of range 1..={n}"),
                    ));
                }
                if !(w.is_finite() && w > 0.0) {
                    return Err(ScenarioError::at(
                        path,
                        line,
                        format!("leader weight must be positive, got {w}"),
                    ));
                }
                weights[agent - 1] = w;
            }
            (Some(LeaderModel::new(l.x0)), Some(weights))
        }
    };

    let nussbaum = raw.nussbaum.unwrap_or_default();
    let k0 = match raw.k0 {
        None => vec![0.0; n],
        Some(k) => {
            let line = lines.line(k.span());
            let k = k.into_inner();
            if k.len() != n {
                return Err(ScenarioError::at(
                    "k0",
                    line,
                    format!("{} initial gains for {n} agents", k.len()),
                ));
            }
            if let Some(v) = k.iter().find(|v| !v.is_finite()) {
                return Err(ScenarioError::at(
                    "k0",
                    line,
                    format!("non-finite initial gain {v}"),
                ));
            }
            k
        }
    };
    if let Some(&k) = k0.iter().find(|k| nussbaum.eval(**k).is_err()) {
        return Err(ScenarioError::at(
            "k0",
            None,
            format!("initial gain {k} is outside the range of {nussbaum}"),
        ));
    }

    let mut integrator = IntegratorSettings::default();
    if let Some(ri) = raw.integrator {
        let line = lines.line(ri.span());
        let ri = ri.into_inner();
        integrator.dt = ri.dt.unwrap_or(integrator.dt);
        integrator.duration = ri.duration.unwrap_or(integrator.duration);
        integrator.record_every = ri.record_every.unwrap_or(integrator.record_every);
        validate_integrator(&integrator, "integrator", line)?;
    }

    let mut acceptance = ConvergenceCriteria {
        eps: DEFAULT_EPS,
        window: DEFAULT_WINDOW,
        ceiling: DEFAULT_CEILING,
    };
    if let Some(ra) = raw.acceptance {
        let line = lines.line(ra.span());
        let ra = ra.into_inner();
        if let Some(eps) = ra.eps {
            acceptance.eps = positive(eps, "acceptance.eps", line)?;
        }
        if let Some(window) = ra.window {
            acceptance.window = positive(window, "acceptance.window", line)?;
        }
        if let Some(ceiling) = ra.ceiling {
            acceptance.ceiling = positive(ceiling, "acceptance.ceiling", line)?;
        }
    }

    Ok(Scenario {
        name: raw.name,
        mode: raw.mode,
        graph,
        leader_weights,
        leader,
        agents,
        nussbaum,
        k0,
        integrator,
        acceptance,
    })
}
