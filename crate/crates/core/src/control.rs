//! Nussbaum gains and the distributed adaptive consensus protocol
//!
//! ```text
//! u_i  = -N(k_i) * xi_i
//! k_i' = y_i * xi_i
//! xi_i = sum_j a_ij (y_i - y_j)  [+ a_i0 (y_i - y_0) with a leader]
//! ```
//!
//! Controllers see only outputs and their own gain `k_i`; the plant gain `b_i`
//! stays inside [`crate::agents::AgentModel`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Digraph, LeaderGraph};

/// Largest |k| accepted by [`NussbaumKind::ExpK2Cos`]; `exp(k^2)` overflows near 26.6.
pub const EXP_K2_COS_MAX_K: f64 = 26.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("Nussbaum function {kind} overflows at k = {k} (|k| must be <= {limit})")]
    NussbaumOverflow {
        kind: NussbaumKind,
        k: f64,
        limit: f64,
    },
    #[error("non-finite adaptive gain k = {0}")]
    NonFiniteGain(f64),
    #[error("output vector has {got} entries, protocol expects {expected}")]
    OutputLen { got: usize, expected: usize },
    #[error("leader-following protocol requires the leader output y0")]
    MissingLeaderOutput,
    #[error("leaderless protocol does not take a leader output")]
    UnexpectedLeaderOutput,
    #[error("unknown Nussbaum function `{0}` (expected k2sin, k2cos or expk2cos)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NussbaumKind {
    /// `k^2 sin k`
    #[default]
    K2Sin,
    /// `k^2 cos k`
    K2Cos,
    /// `exp(k^2) cos k`
    ExpK2Cos,
}

impl NussbaumKind {
    pub const ALL: [NussbaumKind; 3] = [Self::K2Sin, Self::K2Cos, Self::ExpK2Cos];

    pub fn id(self) -> &'static str {
        match self {
            Self::K2Sin => "k2sin",
            Self::K2Cos => "k2cos",
            Self::ExpK2Cos => "expk2cos",
        }
    }

    pub fn eval(self, k: f64) -> Result<f64, ControlError> {
        if !k.is_finite() {
            return Err(ControlError::NonFiniteGain(k));
        }
        Ok(match self {
            Self::K2Sin => k * k * k.sin(),
            Self::K2Cos => k * k * k.cos(),
            Self::ExpK2Cos => {
                if k.abs() > EXP_K2_COS_MAX_K {
                    return Err(ControlError::NussbaumOverflow {
                        kind: self,
                        k,
                        limit: EXP_K2_COS_MAX_K,
                    });
                }
                (k * k).exp() * k.cos()
            }
        })
    }
}

impl fmt::Display for NussbaumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for NussbaumKind {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| ControlError::UnknownKind(s.to_string()))
    }
}

/// Closed-form `F(k) = int_0^k s^2 sin s ds = -k^2 cos k + 2k sin k + 2 cos k - 2`.
pub fn nussbaum_antiderivative_k2sin(k: f64) -> f64 {
    let (s, c) = k.sin_cos();
    -k * k * c + 2.0 * k * s + 2.0 * c - 2.0
}

/// Per-agent adaptive state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub k: f64,
    pub kind: NussbaumKind,
}

impl ControllerState {
    pub fn new(k: f64, kind: NussbaumKind) -> Self {
        Self { k, kind }
    }

    /// `u = -N(k) * xi`.
    pub fn control_input(&self, xi: f64) -> Result<f64, ControlError> {
        Ok(-self.kind.eval(self.k)? * xi)
    }
}

/// `k' = y * xi`.
#[inline]
pub fn gain_rate(y: f64, xi: f64) -> f64 {
    y * xi
}

#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    Leaderless(Digraph),
    LeaderFollowing(LeaderGraph),
}

impl Protocol {
    pub fn agent_count(&self) -> usize {
        self.follower_graph().node_count()
    }

    /// The inter-agent graph (followers only in leader mode).
    pub fn follower_graph(&self) -> &Digraph {
        match self {
            Self::Leaderless(g) => g,
            Self::LeaderFollowing(lg) => lg.followers(),
        }
    }

    pub fn has_leader(&self) -> bool {
        matches!(self, Self::LeaderFollowing(_))
    }

    /// Local disagreement `xi` for every agent, written into `xi`.
    pub fn consensus_error_into(
        &self,
        y: &[f64],
        y0: Option<f64>,
        xi: &mut [f64],
    ) -> Result<(), ControlError> {
        let g = self.follower_graph();
        let n = g.node_count();
        if y.len() != n {
            return Err(ControlError::OutputLen {
                got: y.len(),
                expected: n,
            });
        }
        debug_assert_eq!(xi.len(), n);
        let pinning = match (self, y0) {
            (Self::Leaderless(_), None) => None,
            (Self::Leaderless(_), Some(_)) => return Err(ControlError::UnexpectedLeaderOutput),
            (Self::LeaderFollowing(lg), Some(y0)) => Some((lg.leader_weights(), y0)),
            (Self::LeaderFollowing(_), None) => return Err(ControlError::MissingLeaderOutput),
        };
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &yj) in y.iter().enumerate() {
                let a = g.weight(i, j);
                if a != 0.0 {
                    acc += a * (y[i] - yj);
                }
            }
            if let Some((w, y0)) = pinning {
                acc += w[i] * (y[i] - y0);
            }
            xi[i] = acc;
        }
        Ok(())
    }

    pub fn consensus_error(&self, y: &[f64], y0: Option<f64>) -> Result<Vec<f64>, ControlError> {
        let mut xi = vec![0.0; y.len()];
        self.consensus_error_into(y, y0, &mut xi)?;
        Ok(xi)
    }
}
