//! Closed-loop assembly, fixed-step RK4 integration and convergence checks.
//!
//! Packed state layout: `(x_1, ..., x_N, k_1, ..., k_N)`, agent `i` occupying
//! `offsets[i]..offsets[i + 1]`. The leader output is a constant parameter and
//! is not integrated.

use std::fmt;

use thiserror::Error;

use crate::agents::{AgentModel, LeaderModel};
use crate::control::{gain_rate, ControlError, ControllerState, NussbaumKind, Protocol};
use crate::graph::Digraph;

/// Default boundedness ceiling applied to every state component and gain.
pub const DEFAULT_CEILING: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    State(usize),
    Gain,
    Input,
    Output,
    /// Position in a flat vector with no agent structure.
    Component(usize),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::State(j) => write!(f, "x[{}]", j + 1),
            Self::Gain => f.write_str("k"),
            Self::Input => f.write_str("u"),
            Self::Output => f.write_str("y"),
            Self::Component(j) => write!(f, "component {j}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{agents} agent models but the protocol graph has {nodes} nodes")]
    AgentCount { agents: usize, nodes: usize },
    #[error("{got} controllers supplied for {expected} agents")]
    ControllerCount { got: usize, expected: usize },
    #[error("leader model must be present iff the protocol is leader-following")]
    LeaderMismatch,
    #[error("initial state of agent {agent} has {got} components, model expects {expected}")]
    InitialStateLen {
        agent: usize,
        got: usize,
        expected: usize,
    },
    #[error("packed state has {got} components, system expects {expected}")]
    PackedLen { got: usize, expected: usize },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("horizon {horizon} must be at least one step ({step})")]
    InvalidHorizon { horizon: f64, step: f64 },
    #[error("record_every must be positive")]
    InvalidRecordInterval,
    #[error(
        "non-finite value at t = {time}: {}{channel} (likely Nussbaum-gain divergence; try a smaller step)",
        .agent.map(|a| format!("agent {}, ", a + 1)).unwrap_or_default()
    )]
    NonFinite {
        time: f64,
        agent: Option<usize>,
        channel: Channel,
    },
    #[error("at t = {time}: {source}")]
    Control { time: f64, source: ControlError },
    #[error("gain-sum monotonicity only holds on leaderless runs over undirected graphs")]
    NotUndirectedLeaderless,
}

/// Classical fourth-order Runge-Kutta step. Rejects non-finite results.
pub fn rk4_step<F>(mut rhs: F, t: f64, z: &[f64], h: f64) -> Result<Vec<f64>, SimError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, SimError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::InvalidStep(h));
    }
    let n = z.len();
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { (0..n).map(|i| z[i] + a * k[i]).collect() };

    let k1 = rhs(t, z)?;
    let k2 = rhs(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = rhs(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = rhs(t + h, &axpy(h, &k3))?;

    let next: Vec<f64> = (0..n)
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if let Some(j) = next.iter().position(|v| !v.is_finite()) {
        return Err(SimError::NonFinite {
            time: t + h,
            agent: None,
            channel: Channel::Component(j),
        });
    }
    Ok(next)
}

/// Outputs, disagreement and inputs at one packed state.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub u: Vec<f64>,
}

/// Per-instant scalar diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `y^T L y` over the (follower) graph Laplacian.
    pub disagreement: f64,
    /// `max_i y_i - min_i y_i`.
    pub spread: f64,
    /// Euclidean norm of `y - y0 * 1`, leader mode only.
    pub tracking_error: Option<f64>,
    pub gain_sum: f64,
    /// `sum_i k_i' = sum_i y_i xi_i`.
    pub k_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    agents: Vec<AgentModel>,
    controllers: Vec<ControllerState>,
    protocol: Protocol,
    leader: Option<LeaderModel>,
    offsets: Vec<usize>,
    /// `d_in - d_out` per node; zero on balanced graphs.
    imbalance: Vec<f64>,
}

impl ClosedLoopSystem {
    /// `controllers` fix each agent's Nussbaum function and initial gain.
    pub fn new(
        agents: Vec<AgentModel>,
        controllers: Vec<ControllerState>,
        protocol: Protocol,
        leader: Option<LeaderModel>,
    ) -> Result<Self, SimError> {
        let nodes = protocol.agent_count();
        if agents.len() != nodes {
            return Err(SimError::AgentCount {
                agents: agents.len(),
                nodes,
            });
        }
        if controllers.len() != nodes {
            return Err(SimError::ControllerCount {
                got: controllers.len(),
                expected: nodes,
            });
        }
        if protocol.has_leader() != leader.is_some() {
            return Err(SimError::LeaderMismatch);
        }
        let mut offsets = Vec::with_capacity(nodes + 1);
        let mut acc = 0;
        offsets.push(0);
        for a in &agents {
            acc += a.state_dim();
            offsets.push(acc);
        }
        let g = protocol.follower_graph();
        let imbalance = (0..nodes)
            .map(|i| g.in_degree(i) - g.out_degree(i))
            .collect();
        Ok(Self {
            agents,
            controllers,
            protocol,
            leader,
            offsets,
            imbalance,
        })
    }

    /// Uniform Nussbaum kind and zero initial gains.
    pub fn with_default_controllers(
        agents: Vec<AgentModel>,
        kind: NussbaumKind,
        protocol: Protocol,
        leader: Option<LeaderModel>,
    ) -> Result<Self, SimError> {
        let controllers = vec![ControllerState::new(0.0, kind); agents.len()];
        Self::new(agents, controllers, protocol, leader)
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentModel] {
        &self.agents
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn leader(&self) -> Option<&LeaderModel> {
        self.leader.as_ref()
    }

    fn plant_dim(&self) -> usize {
        self.offsets[self.agents.len()]
    }

    /// `sum_i n_i + N`.
    pub fn state_dim(&self) -> usize {
        self.plant_dim() + self.agents.len()
    }

    pub fn agent_state<'z>(&self, z: &'z [f64], i: usize) -> &'z [f64] {
        &z[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn gains<'z>(&self, z: &'z [f64]) -> &'z [f64] {
        &z[self.plant_dim()..]
    }

    /// Packs per-agent initial states with the controllers' initial gains.
    pub fn initial_state(&self, x0: &[Vec<f64>]) -> Result<Vec<f64>, SimError> {
        if x0.len() != self.agents.len() {
            return Err(SimError::AgentCount {
                agents: x0.len(),
                nodes: self.agents.len(),
            });
        }
        let mut z = Vec::with_capacity(self.state_dim());
        for (i, (a, x)) in self.agents.iter().zip(x0).enumerate() {
            if x.len() != a.state_dim() {
                return Err(SimError::InitialStateLen {
                    agent: i,
                    got: x.len(),
                    expected: a.state_dim(),
                });
            }
            z.extend_from_slice(x);
        }
        z.extend(self.controllers.iter().map(|c| c.k));
        Ok(z)
    }

    /// Maps a packed index back to `(agent, channel)`.
    pub fn locate(&self, index: usize) -> (Option<usize>, Channel) {
        let plant = self.plant_dim();
        if index >= plant {
            return (Some(index - plant), Channel::Gain);
        }
        let agent = self.offsets.partition_point(|&o| o <= index) - 1;
        (Some(agent), Channel::State(index - self.offsets[agent]))
    }

    fn check_len(&self, z: &[f64]) -> Result<(), SimError> {
        if z.len() != self.state_dim() {
            return Err(SimError::PackedLen {
                got: z.len(),
                expected: self.state_dim(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<Evaluation, ControlError> {
        let n = self.agents.len();
        let gains = self.gains(z);
        let y: Vec<f64> = (0..n)
            .map(|i| self.agents[i].output(self.agent_state(z, i)))
            .collect();
        let xi = self
            .protocol
            .consensus_error(&y, self.leader.map(|l| l.output()))?;
        let u = (0..n)
            .map(|i| ControllerState::new(gains[i], self.controllers[i].kind).control_input(xi[i]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Evaluation { y, xi, u })
    }

    /// Packed derivative `(f_1(x_1, u_1), ..., f_N(x_N, u_N), y_1 xi_1, ..., y_N xi_N)`.
    pub fn rhs(&self, t: f64, z: &[f64]) -> Result<Vec<f64>, SimError> {
        self.check_len(z)?;
        if let Some(j) = z.iter().position(|v| !v.is_finite()) {
            let (agent, channel) = self.locate(j);
            return Err(SimError::NonFinite {
                time: t,
                agent,
                channel,
            });
        }
        let ev = self
            .evaluate(z)
            .map_err(|source| SimError::Control { time: t, source })?;
        let mut dz = vec![0.0; z.len()];
        let plant = self.plant_dim();
        for (i, agent) in self.agents.iter().enumerate() {
            let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
            agent.drift_into(&z[lo..hi], ev.u[i], &mut dz[lo..hi]);
            dz[plant + i] = gain_rate(ev.y[i], ev.xi[i]);
        }
        Ok(dz)
    }

    pub fn metrics(&self, z: &[f64], ev: &Evaluation) -> Metrics {
        // y^T L y = 1/2 sum a_ij (y_i - y_j)^2 + 1/2 sum (d_in - d_out)_i y_i^2
        let g = self.protocol.follower_graph();
        let mut disagreement = 0.0;
        for (i, &yi) in ev.y.iter().enumerate() {
            for (j, &yj) in ev.y.iter().enumerate() {
                let a = g.weight(i, j);
                if a != 0.0 {
                    disagreement += 0.5 * a * (yi - yj) * (yi - yj);
                }
            }
            disagreement += 0.5 * self.imbalance[i] * yi * yi;
        }
        let (lo, hi) =
            ev.y.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
        let spread = if ev.y.is_empty() { 0.0 } else { hi - lo };
        let tracking_error = self.leader.map(|l| {
            ev.y.iter()
                .map(|v| (v - l.output()).powi(2))
                .sum::<f64>()
                .sqrt()
        });
        let k_rate =
            ev.y.iter()
                .zip(&ev.xi)
                .map(|(&y, &xi)| gain_rate(y, xi))
                .sum();
        Metrics {
            disagreement,
            spread,
            tracking_error,
            gain_sum: self.gains(z).iter().sum(),
            k_rate,
        }
    }
}

/// Recorded closed-loop run. Every channel has one entry per recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub gains: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub metrics: Vec<Metrics>,
    pub leader_output: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn agent_count(&self) -> usize {
        self.outputs.first().map_or(0, Vec::len)
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    fn push(&mut self, sys: &ClosedLoopSystem, t: f64, z: &[f64]) -> Result<(), SimError> {
        let ev = sys
            .evaluate(z)
            .map_err(|source| SimError::Control { time: t, source })?;
        for (i, (&y, &u)) in ev.y.iter().zip(&ev.u).enumerate() {
            for (value, channel) in [(y, Channel::Output), (u, Channel::Input)] {
                if !value.is_finite() {
                    return Err(SimError::NonFinite {
                        time: t,
                        agent: Some(i),
                        channel,
                    });
                }
            }
        }
        self.metrics.push(sys.metrics(z, &ev));
        self.times.push(t);
        self.states.push(z.to_vec());
        self.gains.push(sys.gains(z).to_vec());
        self.outputs.push(ev.y);
        self.inputs.push(ev.u);
        Ok(())
    }
}

/// Integrates `sys` from `z0` over `[0, horizon]` with step `h`, recording the
/// initial state, every `record_every`-th step and the final state.
///
/// The step count is `round(horizon / h)`; step `n` sits at `t = n * h`.
pub fn simulate(
    sys: &ClosedLoopSystem,
    z0: &[f64],
    h: f64,
    horizon: f64,
    record_every: usize,
) -> Result<Trajectory, SimError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::InvalidStep(h));
    }
    if horizon.is_nan() || horizon < h {
        return Err(SimError::InvalidHorizon { horizon, step: h });
    }
    if record_every == 0 {
        return Err(SimError::InvalidRecordInterval);
    }
    sys.check_len(z0)?;

    let steps = (horizon / h).round() as usize;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        outputs: Vec::new(),
        gains: Vec::new(),
        inputs: Vec::new(),
        metrics: Vec::new(),
        leader_output: sys.leader().map(LeaderModel::output),
    };
    let mut z = z0.to_vec();
    traj.push(sys, 0.0, &z)?;
    for n in 1..=steps {
        let t = (n - 1) as f64 * h;
        z = rk4_step(|t, z| sys.rhs(t, z), t, &z, h).map_err(|e| match e {
            SimError::NonFinite {
                time,
                channel: Channel::Component(j),
                ..
            } => {
                let (agent, channel) = sys.locate(j);
                SimError::NonFinite {
                    time,
                    agent,
                    channel,
                }
            }
            other => other,
        })?;
        if n % record_every == 0 || n == steps {
            traj.push(sys, n as f64 * h, &z)?;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneReport {
    /// First recorded index whose gain sum dropped below its predecessor.
    pub first_violation: Option<usize>,
    /// Largest observed drop `gain_sum[i-1] - gain_sum[i]` (non-positive if monotone).
    pub worst_drop: f64,
}

impl MonotoneReport {
    pub fn is_monotone(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// On a leaderless run over an undirected graph `sum k_i' = y^T L y >= 0`, so
/// the gain sum can only grow. Tolerance `1e-6 * (1 + |gain_sum|)` per instant.
pub fn verify_gain_sum_monotone(
    traj: &Trajectory,
    g: &Digraph,
) -> Result<MonotoneReport, SimError> {
    if traj.leader_output.is_some() || !g.is_undirected() {
        return Err(SimError::NotUndirectedLeaderless);
    }
    let mut report = MonotoneReport {
        first_violation: None,
        worst_drop: f64::NEG_INFINITY,
    };
    for (i, pair) in traj.metrics.windows(2).enumerate() {
        let (prev, cur) = (pair[0].gain_sum, pair[1].gain_sum);
        let drop = prev - cur;
        report.worst_drop = report.worst_drop.max(drop);
        if drop > 1e-6 * (1.0 + cur.abs()) && report.first_violation.is_none() {
            report.first_violation = Some(i + 1);
        }
    }
    if report.worst_drop == f64::NEG_INFINITY {
        report.worst_drop = 0.0;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCriteria {
    pub eps: f64,
    /// Length of the final window (s) over which the tolerances must hold.
    pub window: f64,
    /// Bound on every state component and gain over the whole run.
    pub ceiling: f64,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        Self {
            eps: 0.05,
            window: 10.0,
            ceiling: DEFAULT_CEILING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub consensus: bool,
    pub bounded: bool,
    /// Leader mode only.
    pub tracking: Option<bool>,
    pub window_start: f64,
    pub max_spread_in_window: f64,
    pub max_tracking_in_window: Option<f64>,
    pub max_abs_state: f64,
    pub max_abs_gain: f64,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.consensus && self.bounded && self.tracking.unwrap_or(true)
    }
}

/// Consensus and tracking must hold at every recorded instant with
/// `t >= T - window`; a window longer than the run covers the whole run.
pub fn verify_convergence(traj: &Trajectory, criteria: &ConvergenceCriteria) -> ConvergenceReport {
    let window_start = (traj.final_time() - criteria.window).max(0.0);
    let in_window = traj
        .times
        .iter()
        .zip(&traj.metrics)
        .filter(|(&t, _)| t >= window_start)
        .map(|(_, m)| m);

    let mut max_spread = 0.0f64;
    let mut max_tracking: Option<f64> = None;
    for m in in_window {
        max_spread = max_spread.max(m.spread);
        if let Some(e) = m.tracking_error {
            max_tracking = Some(max_tracking.map_or(e, |cur| cur.max(e)));
        }
    }

    let max_abs = |rows: &[Vec<f64>]| {
        rows.iter().flatten().fold(0.0f64, |acc, v| {
            if v.is_finite() {
                acc.max(v.abs())
            } else {
                f64::INFINITY
            }
        })
    };
    let max_abs_state = max_abs(&traj.states);
    let max_abs_gain = max_abs(&traj.gains);

    ConvergenceReport {
        consensus: !traj.is_empty() && max_spread < criteria.eps,
        bounded: max_abs_state < criteria.ceiling && max_abs_gain < criteria.ceiling,
        tracking: traj
            .leader_output
            .map(|_| max_tracking.is_some_and(|e| e < criteria.eps)),
        window_start,
        max_spread_in_window: max_spread,
        max_tracking_in_window: max_tracking,
        max_abs_state,
        max_abs_gain,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{harmonic_oscillator, single_integrator};
    use crate::graph::LeaderGraph;

    fn kite() -> Digraph {
        Digraph::undirected(4, &[(0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)]).unwrap()
    }

    fn decay(_t: f64, z: &[f64]) -> Result<Vec<f64>, SimError> {
        Ok(z.iter().map(|v| -v).collect())
    }

    #[test]
    fn rk4_single_step_decay() {
        let z = rk4_step(decay, 0.0, &[1.0], 0.1).unwrap();
        assert!((z[0] - (-0.1f64).exp()).abs() < 1e-7);
        assert!((z[0] - 0.904_837_5).abs() < 1e-7);
    }

    #[test]
    fn rk4_trivial_fields() {
        let still = rk4_step(|_, z| Ok(vec![0.0; z.len()]), 0.0, &[3.0, -1.0], 0.25).unwrap();
        assert_eq!(still, vec![3.0, -1.0]);
        let ramp = rk4_step(|_, _| Ok(vec![1.0]), 0.0, &[0.0], 0.5).unwrap();
        assert_eq!(ramp, vec![0.5]);
        // Cubic in t is integrated exactly.
        let cubic = rk4_step(|t, _| Ok(vec![3.0 * t * t]), 0.0, &[0.0], 0.5).unwrap();
        assert!((cubic[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn rk4_rejects_bad_input() {
        assert_eq!(
            rk4_step(decay, 0.0, &[1.0], 0.0),
            Err(SimError::InvalidStep(0.0))
        );
        assert_eq!(
            rk4_step(decay, 0.0, &[1.0], -1.0),
            Err(SimError::InvalidStep(-1.0))
        );
        let blowup = rk4_step(|_, _| Ok(vec![f64::INFINITY]), 0.0, &[0.0], 0.1);
        assert!(matches!(blowup, Err(SimError::NonFinite { .. })));
    }

    #[test]
    fn rhs_single_isolated_integrator() {
        let sys = ClosedLoopSystem::with_default_controllers(
            vec![single_integrator(1.0).unwrap()],
            NussbaumKind::K2Sin,
            Protocol::Leaderless(Digraph::empty(1)),
            None,
        )
        .unwrap();
        assert_eq!(sys.state_dim(), 2);
        assert_eq!(sys.rhs(0.0, &[2.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rhs_at_consensus_is_open_loop() {
        let agents = vec![
            harmonic_oscillator(1.0).unwrap(),
            harmonic_oscillator(-1.0).unwrap(),
        ];
        let g = Digraph::undirected(2, &[(0, 1, 1.0)]).unwrap();
        let sys = ClosedLoopSystem::with_default_controllers(
            agents,
            NussbaumKind::K2Sin,
            Protocol::Leaderless(g),
            None,
        )
        .unwrap();
        let z = [0.3, 1.0, -2.0, 1.0, 4.0, -5.0];
        let dz = sys.rhs(0.0, &z).unwrap();
        assert_eq!(dz, vec![1.0, -0.3, 1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn rhs_gain_rates_on_kite() {
        let agents = vec![harmonic_oscillator(1.0).unwrap(); 4];
        let sys = ClosedLoopSystem::with_default_controllers(
            agents,
            NussbaumKind::K2Sin,
            Protocol::Leaderless(kite()),
            None,
        )
        .unwrap();
        let z0 = sys
            .initial_state(&[
                vec![0.0, 1.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
            ])
            .unwrap();
        let dz = sys.rhs(0.0, &z0).unwrap();
        assert_eq!(&dz[8..], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn construction_checks() {
        let one = vec![single_integrator(1.0).unwrap()];
        assert!(matches!(
            ClosedLoopSystem::with_default_controllers(
                one.clone(),
                NussbaumKind::K2Sin,
                Protocol::Leaderless(Digraph::empty(2)),
                None
            ),
            Err(SimError::AgentCount {
                agents: 1,
                nodes: 2
            })
        ));
        assert_eq!(
            ClosedLoopSystem::with_default_controllers(
                one.clone(),
                NussbaumKind::K2Sin,
                Protocol::Leaderless(Digraph::empty(1)),
                Some(LeaderModel::new(0.0))
            )
            .unwrap_err(),
            SimError::LeaderMismatch
        );
        let lg = LeaderGraph::new(Digraph::empty(1), vec![1.0]).unwrap();
        let sys = ClosedLoopSystem::with_default_controllers(
            one,
            NussbaumKind::K2Sin,
            Protocol::LeaderFollowing(lg),
            Some(LeaderModel::new(0.0)),
        )
        .unwrap();
        assert!(matches!(
            sys.initial_state(&[vec![1.0, 2.0]]),
            Err(SimError::InitialStateLen {
                agent: 0,
                got: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn locate_maps_packed_indices() {
        let agents = vec![
            harmonic_oscillator(1.0).unwrap(),
            single_integrator(1.0).unwrap(),
        ];
        let g = Digraph::undirected(2, &[(0, 1, 1.0)]).unwrap();
        let sys = ClosedLoopSystem::with_default_controllers(
            agents,
            NussbaumKind::K2Sin,
            Protocol::Leaderless(g),
            None,
        )
        .unwrap();
        assert_eq!(sys.locate(0), (Some(0), Channel::State(0)));
        assert_eq!(sys.locate(1), (Some(0), Channel::State(1)));
        assert_eq!(sys.locate(2), (Some(1), Channel::State(0)));
        assert_eq!(sys.locate(3), (Some(0), Channel::Gain));
        assert_eq!(sys.locate(4), (Some(1), Channel::Gain));
    }

    #[test]
    fn damped_agent_decays_open_loop() {
        // x' = -x + b u with no neighbours is the damped chain's velocity channel.
        let agent = crate::agents::damped_integrator_chain(1.0).unwrap();
        let sys = ClosedLoopSystem::with_default_controllers(
            vec![agent],
            NussbaumKind::K2Sin,
            Protocol::Leaderless(Digraph::empty(1)),
            None,
        )
        .unwrap();
        let z0 = sys.initial_state(&[vec![0.0, 1.0]]).unwrap();
        let traj = simulate(&sys, &z0, 0.01, 20.0, 100).unwrap();
        let y = traj.outputs.last().unwrap()[0];
        assert!(y.abs() < 1e-8, "final |y| = {y}");
        assert_eq!(traj.final_time(), 20.0);
    }

    #[test]
    fn leader_alone_stays_constant() {
        let leader = LeaderModel::new(1.25);
        for _ in 0..1000 {
            assert_eq!(leader.output(), 1.25);
        }
        // Pinned follower already at the leader's value: nothing moves.
        let lg = LeaderGraph::new(Digraph::empty(1), vec![1.0]).unwrap();
        let sys = ClosedLoopSystem::with_default_controllers(
            vec![single_integrator(1.0).unwrap()],
            NussbaumKind::K2Sin,
            Protocol::LeaderFollowing(lg),
            Some(leader),
        )
        .unwrap();
        let z0 = sys.initial_state(&[vec![1.25]]).unwrap();
        let traj = simulate(&sys, &z0, 0.01, 1.0, 10).unwrap();
        assert!(traj.states.iter().all(|z| z == &z0));
        assert_eq!(traj.leader_output, Some(1.25));
    }

    #[test]
    fn recording_schedule() {
        let sys = ClosedLoopSystem::with_default_controllers(
            vec![single_integrator(1.0).unwrap()],
            NussbaumKind::K2Sin,
            Protocol::Leaderless(Digraph::empty(1)),
            None,
        )
        .unwrap();
        let traj = simulate(&sys, &[0.0, 0.0], 0.1, 1.05, 3).unwrap();
        // 11 steps: record 0, 3, 6, 9 and the final 11.
        let expected: Vec<f64> = [0usize, 3, 6, 9, 11]
            .iter()
            .map(|&n| n as f64 * 0.1)
            .collect();
        assert_eq!(traj.times, expected);
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        for len in [
            traj.states.len(),
            traj.outputs.len(),
            traj.gains.len(),
            traj.inputs.len(),
            traj.metrics.len(),
        ] {
            assert_eq!(len, traj.len());
        }
        assert_eq!(
            simulate(&sys, &[0.0, 0.0], 0.1, 0.05, 1),
            Err(SimError::InvalidHorizon {
                horizon: 0.05,
                step: 0.1
            })
        );
        assert_eq!(
            simulate(&sys, &[0.0, 0.0], 0.1, 1.0, 0),
            Err(SimError::InvalidRecordInterval)
        );
    }

    #[test]
    fn overflow_aborts_with_time() {
        let g = Digraph::undirected(2, &[(0, 1, 1.0)]).unwrap();
        let controllers = vec![ControllerState::new(27.0, NussbaumKind::ExpK2Cos); 2];
        let sys = ClosedLoopSystem::new(
            vec![single_integrator(1.0).unwrap(); 2],
            controllers,
            Protocol::Leaderless(g),
            None,
        )
        .unwrap();
        let z0 = sys.initial_state(&[vec![1.0], vec![0.0]]).unwrap();
        let err = simulate(&sys, &z0, 0.01, 1.0, 1).unwrap_err();
        assert!(matches!(
            err,
            SimError::Control {
                source: ControlError::NussbaumOverflow { .. },
                ..
            }
        ));
    }

    #[test]
    fn divergence_reports_agent_and_channel() {
        fn explode(x: &[f64], _b: f64, _u: f64, dx: &mut [f64]) {
            dx[0] = x[0] * x[0];
        }
        let m = AgentModel::custom("explode", 1, 1.0, explode, |x| x[0], None).unwrap();
        let sys = ClosedLoopSystem::with_default_controllers(
            vec![single_integrator(1.0).unwrap(), m],
            NussbaumKind::K2Sin,
            Protocol::Leaderless(Digraph::empty(2)),
            None,
        )
        .unwrap();
        // x' = x^2 from x = 1 escapes at t = 1.
        let err = simulate(&sys, &[0.0, 1.0, 0.0, 0.0], 0.01, 2.0, 10).unwrap_err();
        match err {
            SimError::NonFinite {
                agent,
                channel,
                time,
            } => {
                assert_eq!(agent, Some(1));
                assert_eq!(channel, Channel::State(0));
                assert!(time > 0.9 && time < 1.2, "t = {time}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn metrics_at_consensus_vanish() {
        let agents = vec![harmonic_oscillator(1.0).unwrap(); 4];
        let sys = ClosedLoopSystem::with_default_controllers(
            agents,
            NussbaumKind::K2Sin,
            Protocol::Leaderless(kite()),
            None,
        )
        .unwrap();
        let z = sys.initial_state(&vec![vec![0.5, -3.0]; 4]).unwrap();
        let m = sys.metrics(&z, &sys.evaluate(&z).unwrap());
        assert_eq!(m.disagreement, 0.0);
        assert_eq!(m.spread, 0.0);
        assert_eq!(m.k_rate, 0.0);
        assert_eq!(m.tracking_error, None);
    }

    #[test]
    fn gain_sum_check_preconditions() {
        let sys = ClosedLoopSystem::with_default_controllers(
            vec![single_integrator(1.0).unwrap(); 4],
            NussbaumKind::K2Sin,
            Protocol::Leaderless(kite()),
            None,
        )
        .unwrap();
        let z0 = sys.initial_state(&vec![vec![1.0]; 4]).unwrap();
        let traj = simulate(&sys, &z0, 0.01, 1.0, 10).unwrap();
        let report = verify_gain_sum_monotone(&traj, &kite()).unwrap();
        assert!(report.is_monotone());
        assert_eq!(report.worst_drop, 0.0);

        let cycle = Digraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        assert_eq!(
            verify_gain_sum_monotone(&traj, &cycle),
            Err(SimError::NotUndirectedLeaderless)
        );
    }

    #[test]
    fn disconnected_graph_is_not_reported_as_consensus() {
        let g = Digraph::undirected(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let sys = ClosedLoopSystem::with_default_controllers(
            vec![single_integrator(1.0).unwrap(); 4],
            NussbaumKind::K2Sin,
            Protocol::Leaderless(g),
            None,
        )
        .unwrap();
        let z0 = sys
            .initial_state(&[vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]])
            .unwrap();
        let traj = simulate(&sys, &z0, 0.01, 20.0, 10).unwrap();
        let report = verify_convergence(&traj, &ConvergenceCriteria::default());
        assert!(!report.consensus);
        assert!(report.bounded);
        assert!(!report.passed());
    }
}
