use std::io::{self, Write};

use super::steps::DenseSolution;
use super::{StepSpec, A, ACTION, ADOT, Q, QDOT, S0};
use crate::error::{Error, Result};
use crate::output::num;
use crate::params::{InitialConditions, SimParams};

/// `(q, q̇, a, ȧ, S₀, I)` at one instant. Also used for their time rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub q: f64,
    pub qdot: f64,
    pub a: f64,
    pub adot: f64,
    pub action: f64,
    /// `I(t) = ħ (S₀(t) - S₀(0))`.
    pub action_integral: f64,
}

impl Record {
    fn from_state(y: &[f64; 6]) -> Self {
        Self {
            q: y[Q],
            qdot: y[QDOT],
            a: y[A],
            adot: y[ADOT],
            action: y[S0],
            action_integral: y[ACTION],
        }
    }
}

/// Solved packet history on `[-tau, t_end]` with dense output.
///
/// For `t < 0` values come from the pre-history in the initial conditions;
/// from `t = 0` on they come from the RK4 nodes and the cubic Hermite
/// interpolant between them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    params: SimParams,
    ics: InitialConditions,
    spec: StepSpec,
    solution: DenseSolution<6>,
}

impl Trajectory {
    pub(crate) fn new(
        params: SimParams,
        ics: InitialConditions,
        spec: StepSpec,
        solution: DenseSolution<6>,
    ) -> Self {
        Self {
            params,
            ics,
            spec,
            solution,
        }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn ics(&self) -> &InitialConditions {
        &self.ics
    }

    pub fn spec(&self) -> &StepSpec {
        &self.spec
    }

    pub fn step(&self) -> f64 {
        self.solution.step()
    }

    pub fn t_start(&self) -> f64 {
        -self.params.tau
    }

    /// Last node time; at least `spec.t_end`.
    pub fn t_end(&self) -> f64 {
        self.solution.t_end()
    }

    /// Number of nodes with `t >= 0`.
    pub fn node_count(&self) -> usize {
        self.solution.len()
    }

    pub fn node_time(&self, k: usize) -> f64 {
        self.solution.time(k)
    }

    pub fn node(&self, k: usize) -> Record {
        Record::from_state(self.solution.node(k))
    }

    pub fn node_index(&self, t: f64) -> Option<usize> {
        self.solution.node_index(t)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start() * (1.0 + 1e-12) && self.solution.eval(t.max(0.0)).is_some()
    }

    pub fn eval(&self, t: f64) -> Result<Record> {
        self.eval_with_rates(t).map(|(r, _)| r)
    }

    /// Values and their time derivatives. At `t = 0` the derivative is the
    /// right-sided one.
    pub fn eval_with_rates(&self, t: f64) -> Result<(Record, Record)> {
        if t < 0.0 {
            if t < self.t_start() * (1.0 + 1e-12) || t.is_nan() {
                return Err(self.out_of_domain(t));
            }
            let (q, qd, qdd) = self.ics.center_history(t);
            let (a, ad, add) = self.ics.width_history(t);
            let s0 = self.ics.initial_action(&self.params);
            let value = Record {
                q,
                qdot: qd,
                a,
                adot: ad,
                action: s0,
                action_integral: 0.0,
            };
            let rate = Record {
                q: qd,
                qdot: qdd,
                a: ad,
                adot: add,
                action: 0.0,
                action_integral: 0.0,
            };
            return Ok((value, rate));
        }
        let (y, f) = self.solution.eval(t).ok_or_else(|| self.out_of_domain(t))?;
        Ok((Record::from_state(&y), Record::from_state(&f)))
    }

    fn out_of_domain(&self, t: f64) -> Error {
        Error::OutOfDomain {
            t,
            lo: self.t_start(),
            hi: self.t_end(),
        }
    }

    /// All grid times from `-tau` to `t_end`, pre-history nodes included.
    pub fn t_grid(&self) -> Vec<f64> {
        let n = self.spec.steps_per_delay;
        let h = self.step();
        (0..n)
            .map(|k| (k as f64 - n as f64) * h)
            .chain((0..self.node_count()).map(|k| self.node_time(k)))
            .collect()
    }

    /// Writes `t,q,qdot,a,adot,S0` for every grid time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,q,qdot,a,adot,S0")?;
        for t in self.t_grid() {
            let r = self.eval(t).map_err(io::Error::other)?;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                num(t),
                num(r.q),
                num(r.qdot),
                num(r.a),
                num(r.adot),
                num(r.action)
            )?;
        }
        Ok(())
    }
}
