//! Delay differential equations for the packet center, width and action.
//!
//! ```text
//! q̈  = 2α [q̇(t-τ) - q̇(t)]
//! ä  = 2α [ȧ(t-τ) - ȧ(t)] + ħ² / (4 m² a³)
//! Ṡ₀ = (½ m q̇² - ħ²/(4 m a²)) / ħ + 2α [S₀(t-τ) - S₀(t)]
//! ```
//!
//! The last bracket can be flipped with [`ActionConvention::Reversed`] for
//! comparison runs. Alongside `S₀` the solver accumulates the action integral
//! `I(t) = ħ (S₀(t) - S₀(0))`, which is the time integral of `ħ Ṡ₀`.

mod hermite;
mod steps;
mod trajectory;

pub use steps::{integrate, DelaySystem, DenseSolution};
pub use trajectory::{Record, Trajectory};

use crate::error::{Error, Result};
use crate::params::{InitialConditions, SimParams};

/// Sign of the delayed bracket in the action equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ActionConvention {
    /// `2α [S₀(t-τ) - S₀(t)]`, as produced by matching the constant Taylor
    /// coefficient of the phase equation.
    #[default]
    Matched,
    /// `2α [S₀(t) - S₀(t-τ)]`, the ordering printed in the integrated form.
    Reversed,
}

impl ActionConvention {
    pub fn sign(self) -> f64 {
        match self {
            ActionConvention::Matched => 1.0,
            ActionConvention::Reversed => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionConvention::Matched => "eq313",
            ActionConvention::Reversed => "eq318",
        }
    }
}

pub const DEFAULT_STEPS_PER_DELAY: usize = 64;

/// Step layout: `h = tau / steps_per_delay`, horizon `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpec {
    pub steps_per_delay: usize,
    pub t_end: f64,
    pub convention: ActionConvention,
}

impl StepSpec {
    pub fn new(steps_per_delay: usize, t_end: f64) -> Result<Self> {
        let spec = Self {
            steps_per_delay,
            t_end,
            convention: ActionConvention::Matched,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_convention(mut self, convention: ActionConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_delay < 4 {
            return Err(Error::InvalidParams(format!(
                "steps_per_delay must be >= 4, got {}",
                self.steps_per_delay
            )));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::InvalidParams(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        Ok(())
    }

    pub fn step(&self, tau: f64) -> f64 {
        tau / self.steps_per_delay as f64
    }

    /// Number of steps needed to reach `t_end`.
    pub fn n_steps(&self, tau: f64) -> usize {
        let h = self.step(tau);
        (self.t_end / h - 1e-9).ceil().max(1.0) as usize
    }

    pub(crate) fn key(&self) -> (usize, u64, ActionConvention) {
        (self.steps_per_delay, self.t_end.to_bits(), self.convention)
    }
}

pub(crate) const Q: usize = 0;
pub(crate) const QDOT: usize = 1;
pub(crate) const A: usize = 2;
pub(crate) const ADOT: usize = 3;
pub(crate) const S0: usize = 4;
pub(crate) const ACTION: usize = 5;

/// Center, width and action equations as one 6-component delay system.
pub(crate) struct PacketSystem {
    pub params: SimParams,
    pub ics: InitialConditions,
    pub convention: ActionConvention,
}

impl DelaySystem<6> for PacketSystem {
    fn delay(&self) -> f64 {
        self.params.tau
    }

    fn history(&self, t: f64) -> ([f64; 6], [f64; 6]) {
        let (q, qd, qdd) = self.ics.center_history(t);
        let (a, ad, add) = self.ics.width_history(t);
        let s0 = self.ics.initial_action(&self.params);
        ([q, qd, a, ad, s0, 0.0], [qd, qdd, ad, add, 0.0, 0.0])
    }

    fn rhs(&self, _t: f64, y: &[f64; 6], delayed: &[f64; 6]) -> [f64; 6] {
        let SimParams {
            alpha, hbar, mass, ..
        } = self.params;
        let a = y[A];
        let spread = hbar * hbar / (4.0 * mass * mass * a * a * a);
        let sdot = (0.5 * mass * y[QDOT] * y[QDOT] - hbar * hbar / (4.0 * mass * a * a)) / hbar
            + 2.0 * alpha * self.convention.sign() * (delayed[S0] - y[S0]);
        [
            y[QDOT],
            2.0 * alpha * (delayed[QDOT] - y[QDOT]),
            y[ADOT],
            2.0 * alpha * (delayed[ADOT] - y[ADOT]) + spread,
            sdot,
            hbar * sdot,
        ]
    }

    fn admissible(&self, t: f64, y: &[f64; 6]) -> Result<()> {
        if y[A] > 0.0 && y[A].is_finite() {
            Ok(())
        } else {
            Err(Error::WidthCollapse { t, width: y[A] })
        }
    }
}

/// Solves the center, width and action equations.
pub fn solve_system(
    params: &SimParams,
    ics: &InitialConditions,
    spec: &StepSpec,
) -> Result<Trajectory> {
    params.validate()?;
    ics.validate()?;
    spec.validate()?;
    // the width must stay positive over the prescribed past as well
    for k in 0..=spec.steps_per_delay {
        let t = -(k as f64) * spec.step(params.tau);
        let (a, _, _) = ics.width_history(t);
        if a <= 0.0 {
            return Err(Error::WidthCollapse { t, width: a });
        }
    }
    let system = PacketSystem {
        params: *params,
        ics: *ics,
        convention: spec.convention,
    };
    let solution = integrate(&system, spec.steps_per_delay, spec.n_steps(params.tau))?;
    Ok(Trajectory::new(*params, *ics, *spec, solution))
}

/// Observed order of one end-time quantity under refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate {
    Observed(f64),
    /// Successive differences sit at round-off level.
    Exact,
    /// Differences did not shrink monotonically.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceOrder {
    pub center: OrderEstimate,
    pub width: OrderEstimate,
}

/// Richardson-style order estimate for `q(T)` and `a(T)` from at least three
/// step layouts refined by a common ratio.
pub fn convergence_order(
    params: &SimParams,
    ics: &InitialConditions,
    specs: &[StepSpec],
) -> Result<ConvergenceOrder> {
    if specs.len() < 3 {
        return Err(Error::InvalidParams(
            "need at least three step layouts".into(),
        ));
    }
    let t_end = specs[0].t_end;
    if specs.iter().any(|s| s.t_end != t_end) {
        return Err(Error::InvalidParams("step layouts must share t_end".into()));
    }
    let ratio = specs[1].steps_per_delay as f64 / specs[0].steps_per_delay as f64;
    for w in specs.windows(2) {
        let r = w[1].steps_per_delay as f64 / w[0].steps_per_delay as f64;
        if (r - ratio).abs() > 1e-12 || r <= 1.0 {
            return Err(Error::InvalidParams(
                "step layouts must refine geometrically".into(),
            ));
        }
    }
    let finals = specs
        .iter()
        .map(|s| solve_system(params, ics, s).and_then(|tr| tr.eval(t_end)))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = finals.iter().map(|r| r.q).collect();
    let a: Vec<f64> = finals.iter().map(|r| r.a).collect();
    Ok(ConvergenceOrder {
        center: estimate(&q, ratio),
        width: estimate(&a, ratio),
    })
}

fn estimate(values: &[f64], ratio: f64) -> OrderEstimate {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if diffs.iter().all(|d| *d <= 1e-13 * scale) {
        return OrderEstimate::Exact;
    }
    if diffs.windows(2).any(|w| w[1] >= w[0]) {
        return OrderEstimate::Inconclusive;
    }
    let n = diffs.len();
    OrderEstimate::Observed((diffs[n - 2] / diffs[n - 1]).ln() / ratio.ln())
}
