//! Single-input single-output agent models with an input gain `b` whose sign
//! the controller never sees.
//!
//! Every shipped model satisfies `dV/dt <= -W(x) + b*u*y` for a storage
//! function `V >= 0` and a dissipation `W >= 0`. The pair is kept as an
//! optional [`Certificate`] for testing only; simulation never reads it.

use thiserror::Error;

/// Right-hand side `dx = f(x, b, u)`; `dx` has the same length as `x`.
pub type DriftFn = fn(x: &[f64], b: f64, u: f64, dx: &mut [f64]);
pub type OutputFn = fn(x: &[f64]) -> f64;
pub type ScalarFn = fn(x: &[f64]) -> f64;

/// Finite-difference step used by [`check_passivity_certificate`].
pub const FD_STEP: f64 = 1e-6;
/// Relative slack `FD_SLACK * (1 + |V|)` allowed on each certificate sample.
pub const FD_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("control gain must be nonzero")]
    ZeroGain,
    #[error("control gain must be finite, got {0}")]
    NonFiniteGain(f64),
    #[error("state dimension must be positive")]
    EmptyState,
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
    #[error("model `{0}` has no passivity certificate")]
    NoCertificate(&'static str),
    #[error(
        "passivity inequality violated at sample {index}: dV/dt = {v_dot:.6e} exceeds bound {bound:.6e} (slack {slack:.3e})"
    )]
    CertificateViolated {
        index: usize,
        v_dot: f64,
        bound: f64,
        slack: f64,
    },
}

/// Storage function `V` and dissipation `W` witnessing the passivity-like inequality.
#[derive(Debug, Clone, Copy)]
pub struct Certificate {
    pub storage: ScalarFn,
    pub dissipation: ScalarFn,
}

#[derive(Debug, Clone, Copy)]
pub struct AgentModel {
    id: &'static str,
    state_dim: usize,
    gain_b: f64,
    drift: DriftFn,
    output: OutputFn,
    certificate: Option<Certificate>,
}

impl AgentModel {
    /// Arbitrary model. `b` must be finite and nonzero.
    pub fn custom(
        id: &'static str,
        state_dim: usize,
        gain_b: f64,
        drift: DriftFn,
        output: OutputFn,
        certificate: Option<Certificate>,
    ) -> Result<Self, AgentError> {
        if state_dim == 0 {
            return Err(AgentError::EmptyState);
        }
        if !gain_b.is_finite() {
            return Err(AgentError::NonFiniteGain(gain_b));
        }
        if gain_b == 0.0 {
            return Err(AgentError::ZeroGain);
        }
        Ok(Self {
            id,
            state_dim,
            gain_b,
            drift,
            output,
            certificate,
        })
    }

    pub fn id(&self) -> &'static str {
        self.id
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// The plant's input gain. Only the plant side of a simulation may read this.
    pub fn gain_b(&self) -> f64 {
        self.gain_b
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        self.certificate.as_ref()
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim);
        (self.drift)(x, self.gain_b, u, dx)
    }

    pub fn drift(&self, x: &[f64], u: f64) -> Vec<f64> {
        let mut dx = vec![0.0; self.state_dim];
        self.drift_into(x, u, &mut dx);
        dx
    }

    #[inline]
    pub fn output(&self, x: &[f64]) -> f64 {
        (self.output)(x)
    }
}

/// Stationary leader: `dx0/dt = 0`, `y0 = x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderModel {
    pub x0: f64,
}

impl LeaderModel {
    pub fn new(x0: f64) -> Self {
        Self { x0 }
    }

    pub fn output(&self) -> f64 {
        self.x0
    }

    pub fn derivative(&self) -> f64 {
        0.0
    }
}

fn half_sq_norm(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

fn zero(_: &[f64]) -> f64 {
    0.0
}

fn second(x: &[f64]) -> f64 {
    x[1]
}

/// `x1' = x2`, `x2' = -x1 + b u`, `y = x2`.
pub fn harmonic_oscillator(b: f64) -> Result<AgentModel, AgentError> {
    fn f(x: &[f64], b: f64, u: f64, dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -x[0] + b * u;
    }
    AgentModel::custom(
        "harmonic_oscillator",
        2,
        b,
        f,
        second,
        Some(Certificate {
            storage: half_sq_norm,
            dissipation: zero,
        }),
    )
}

/// `x1' = x2`, `x2' = -x2 + b u`, `y = x2`.
pub fn damped_integrator_chain(b: f64) -> Result<AgentModel, AgentError> {
    fn f(x: &[f64], b: f64, u: f64, dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -x[1] + b * u;
    }
    fn v(x: &[f64]) -> f64 {
        0.5 * x[1] * x[1]
    }
    fn w(x: &[f64]) -> f64 {
        x[1] * x[1]
    }
    AgentModel::custom(
        "damped_integrator_chain",
        2,
        b,
        f,
        second,
        Some(Certificate {
            storage: v,
            dissipation: w,
        }),
    )
}

/// `x1' = x2`, `x2' = -x1 - x2 + b u`, `y = x2`.
pub fn damped_oscillator(b: f64) -> Result<AgentModel, AgentError> {
    fn f(x: &[f64], b: f64, u: f64, dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -x[0] - x[1] + b * u;
    }
    fn w(x: &[f64]) -> f64 {
        x[1] * x[1]
    }
    AgentModel::custom(
        "damped_oscillator",
        2,
        b,
        f,
        second,
        Some(Certificate {
            storage: half_sq_norm,
            dissipation: w,
        }),
    )
}

/// Controlled Lorenz-type system:
/// `x1' = x2 - x1`, `x2' = x1 - x2 - x1 x3 + b u`, `x3' = x1 x2 - x3`, `y = x2`.
///
/// With `V = |x|^2 / 2` the cubic terms cancel and
/// `dV/dt = -(x1 - x2)^2 - x3^2 + b u y`.
pub fn lorenz_follower(b: f64) -> Result<AgentModel, AgentError> {
    fn f(x: &[f64], b: f64, u: f64, dx: &mut [f64]) {
        dx[0] = x[1] - x[0];
        dx[1] = x[0] - x[1] - x[0] * x[2] + b * u;
        dx[2] = x[0] * x[1] - x[2];
    }
    fn w(x: &[f64]) -> f64 {
        let d = x[0] - x[1];
        d * d + x[2] * x[2]
    }
    AgentModel::custom(
        "lorenz",
        3,
        b,
        f,
        second,
        Some(Certificate {
            storage: half_sq_norm,
            dissipation: w,
        }),
    )
}

/// `x' = b u`, `y = x`.
pub fn single_integrator(b: f64) -> Result<AgentModel, AgentError> {
    fn f(_x: &[f64], b: f64, u: f64, dx: &mut [f64]) {
        dx[0] = b * u;
    }
    fn first(x: &[f64]) -> f64 {
        x[0]
    }
    AgentModel::custom(
        "single_integrator",
        1,
        b,
        f,
        first,
        Some(Certificate {
            storage: half_sq_norm,
            dissipation: zero,
        }),
    )
}

/// Catalog entry for a model id accepted in scenario files.
#[derive(Debug, Clone, Copy)]
pub struct ModelInfo {
    pub id: &'static str,
    pub state_dim: usize,
    pub dynamics: &'static str,
    pub certificate: &'static str,
}

pub const MODEL_CATALOG: [ModelInfo; 6] = [
    ModelInfo {
        id: "single_integrator",
        state_dim: 1,
        dynamics: "x' = b u; y = x",
        certificate: "V = x^2/2, W = 0",
    },
    ModelInfo {
        id: "harmonic_oscillator",
        state_dim: 2,
        dynamics: "x1' = x2; x2' = -x1 + b u; y = x2",
        certificate: "V = (x1^2 + x2^2)/2, W = 0",
    },
    ModelInfo {
        id: "damped_integrator_chain",
        state_dim: 2,
        dynamics: "x1' = x2; x2' = -x2 + b u; y = x2",
        certificate: "V = x2^2/2, W = x2^2",
    },
    ModelInfo {
        id: "damped_oscillator",
        state_dim: 2,
        dynamics: "x1' = x2; x2' = -x1 - x2 + b u; y = x2",
        certificate: "V = (x1^2 + x2^2)/2, W = x2^2",
    },
    ModelInfo {
        id: "lorenz",
        state_dim: 3,
        dynamics: "x1' = x2 - x1; x2' = x1 - x2 - x1 x3 + b u; x3' = x1 x2 - x3; y = x2",
        certificate: "V = (x1^2 + x2^2 + x3^2)/2, W = (x1 - x2)^2 + x3^2",
    },
    ModelInfo {
        id: "leader",
        state_dim: 1,
        dynamics: "x0' = 0; y0 = x0",
        certificate: "none (autonomous, no input)",
    },
];

/// Builds a follower model from its scenario id. `leader` is not a follower
/// and is rejected here.
pub fn model_by_id(id: &str, b: f64) -> Result<AgentModel, AgentError> {
    match id {
        "single_integrator" => single_integrator(b),
        "harmonic_oscillator" => harmonic_oscillator(b),
        "damped_integrator_chain" => damped_integrator_chain(b),
        "damped_oscillator" => damped_oscillator(b),
        "lorenz" => lorenz_follower(b),
        other => Err(AgentError::UnknownModel(other.to_string())),
    }
}

/// Checks `grad V . f(x, u) <= -W(x) + b u y` on every sample, with the
/// gradient taken by central differences. Returns the first violation.
pub fn check_passivity_certificate(
    model: &AgentModel,
    samples: &[(Vec<f64>, f64)],
) -> Result<(), AgentError> {
    let cert = model
        .certificate()
        .ok_or(AgentError::NoCertificate(model.id()))?;
    let mut probe = vec![0.0; model.state_dim()];
    for (index, (x, u)) in samples.iter().enumerate() {
        let dx = model.drift(x, *u);
        let mut v_dot = 0.0;
        probe.copy_from_slice(x);
        for k in 0..x.len() {
            probe[k] = x[k] + FD_STEP;
            let up = (cert.storage)(&probe);
            probe[k] = x[k] - FD_STEP;
            let down = (cert.storage)(&probe);
            probe[k] = x[k];
            v_dot += (up - down) / (2.0 * FD_STEP) * dx[k];
        }
        let bound = -(cert.dissipation)(x) + model.gain_b() * u * model.output(x);
        let slack = FD_SLACK * (1.0 + (cert.storage)(x).abs());
        if v_dot > bound + slack {
            return Err(AgentError::CertificateViolated {
                index,
                v_dot,
                bound,
                slack,
            });
        }
    }
    Ok(())
}
