//! Propagator built from the packet family.
//!
//! Every member of the family shares `x_o`, `a_o`, `b_o` and the pre-history
//! and differs only in its launch velocity `v`. The center equation is linear
//! and the width equation does not involve `v`, so
//!
//! ```text
//! q(t; v)  = x_o + v g(t) + r(t)
//! S₀(t; v) = m v x_o/ħ + c₀(t) + c₁(t) v + c₂(t) v²
//! ```
//!
//! and one nine-component delay system yields the whole family. With
//! `Φ = (2π a_o²)^(1/4) ψ` the kernel is
//!
//! ```text
//! K(x, x_o; t) = (m / 2πħ) ∫ dv Φ(v; x, t) Φ*(v; x_o, 0)
//! ```
//!
//! which depends on `x - x_o` only. The `v` integral is done with panels of
//! Gauss-Legendre nodes over the window where the Gaussian envelope of
//! `Φ(v; x, t)` is above `exp(-E²/4)`, `E` being
//! [`QuadratureSpec::envelope_widths`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{self, Write};
use std::num::NonZeroUsize;
use std::sync::{Arc, RwLock};

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dde::{integrate, solve_system, DelaySystem, DenseSolution, StepSpec, Trajectory};
use crate::error::{Error, Result};
use crate::output::num;
use crate::packet::{PacketField, SpaceGrid};
use crate::params::{InitialConditions, Prehistory, SimParams};

/// Knobs of the velocity quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Window half-width in units of the packet width `a(t)`.
    pub envelope_widths: f64,
    /// Gauss-Legendre nodes per panel.
    pub panel_nodes: usize,
    /// Largest phase swing allowed across one panel, in radians.
    pub radians_per_panel: f64,
    pub min_panels: usize,
    /// Relative change under panel doubling above which a value is flagged
    /// as unconverged.
    pub tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            envelope_widths: 12.0,
            panel_nodes: 32,
            radians_per_panel: 32.0,
            min_panels: 8,
            tolerance: 1e-6,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.envelope_widths.is_finite() && self.envelope_widths > 0.0) {
            return Err(Error::InvalidParams(format!(
                "envelope_widths must be positive, got {}",
                self.envelope_widths
            )));
        }
        if self.panel_nodes * self.min_panels.max(1) < 16 {
            return Err(Error::InvalidParams(
                "quadrature needs at least 16 nodes".to_string(),
            ));
        }
        if !(self.radians_per_panel > 0.0 && self.tolerance > 0.0) {
            return Err(Error::InvalidParams(
                "radians_per_panel and tolerance must be positive".to_string(),
            ));
        }
        Ok(())
    }

    fn rule(&self) -> GaussLegendre {
        GaussLegendre::new(NonZeroUsize::new(self.panel_nodes).expect("validated"))
    }

    fn doubled(&self) -> Self {
        Self {
            radians_per_panel: 0.5 * self.radians_per_panel,
            min_panels: 2 * self.min_panels,
            ..*self
        }
    }
}

/// Velocity window and node count actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureUsed {
    pub v_min: f64,
    pub v_max: f64,
    pub n_nodes: usize,
}

/// Panels of Gauss-Legendre nodes covering `[lo, hi]`.
fn velocity_nodes(spec: &QuadratureSpec, lo: f64, hi: f64, max_slope: f64) -> Vec<(f64, f64)> {
    let rule = spec.rule();
    let swing = (hi - lo) * max_slope / spec.radians_per_panel;
    let panels = (swing.ceil() as usize).max(spec.min_panels).max(1);
    let width = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * spec.panel_nodes);
    for p in 0..panels {
        let a = lo + p as f64 * width;
        let mid = a + 0.5 * width;
        for &(x, w) in rule.as_node_weight_pairs() {
            out.push((mid + 0.5 * width * x, 0.5 * width * w));
        }
    }
    out
}

/// Family coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyState {
    pub g: f64,
    pub gdot: f64,
    pub r: f64,
    pub rdot: f64,
    pub a: f64,
    pub adot: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl FamilyState {
    fn from_state(y: &[f64; 9]) -> Self {
        Self {
            g: y[0],
            gdot: y[1],
            r: y[2],
            rdot: y[3],
            a: y[4],
            adot: y[5],
            c0: y[6],
            c1: y[7],
            c2: y[8],
        }
    }
}

struct FamilySystem {
    params: SimParams,
    width: InitialConditions,
    sign: f64,
}

impl DelaySystem<9> for FamilySystem {
    fn delay(&self) -> f64 {
        self.params.tau
    }

    fn history(&self, t: f64) -> ([f64; 9], [f64; 9]) {
        let (kq, _) = self.width.prehistory.slopes();
        let (a, ad, add) = self.width.width_history(t);
        (
            [t, 1.0, 0.5 * kq * t * t, kq * t, a, ad, 0.0, 0.0, 0.0],
            [1.0, 0.0, kq * t, kq, ad, add, 0.0, 0.0, 0.0],
        )
    }

    fn rhs(&self, _t: f64, y: &[f64; 9], d: &[f64; 9]) -> [f64; 9] {
        let SimParams {
            alpha, hbar, mass, ..
        } = self.params;
        let k = mass / hbar;
        let a = y[4];
        let pull = |i: usize| 2.0 * alpha * (d[i] - y[i]);
        let self_action = |i: usize| 2.0 * alpha * self.sign * (d[i] - y[i]);
        [
            y[1],
            pull(1),
            y[3],
            pull(3),
            y[5],
            pull(5) + hbar * hbar / (4.0 * mass * mass * a * a * a),
            0.5 * k * y[3] * y[3] - hbar / (4.0 * mass * a * a) + self_action(6),
            k * y[1] * y[3] + self_action(7),
            0.5 * k * y[1] * y[1] + self_action(8),
        ]
    }

    fn admissible(&self, t: f64, y: &[f64; 9]) -> Result<()> {
        if y[4] > 0.0 && y[4].is_finite() {
            Ok(())
        } else {
            Err(Error::WidthCollapse { t, width: y[4] })
        }
    }
}

type MemoKey = (
    [u64; 4],
    [u64; 6],
    (usize, u64, crate::dde::ActionConvention),
);

/// The velocity family of packets sharing width data and pre-history.
pub struct PacketFamily {
    params: SimParams,
    template: InitialConditions,
    spec: StepSpec,
    coefficients: DenseSolution<9>,
    members: RwLock<HashMap<MemoKey, Arc<Trajectory>>>,
}

impl std::fmt::Debug for PacketFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PacketFamily")
            .field("params", &self.params)
            .field("template", &self.template)
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl PacketFamily {
    /// Family with launch width `a_o`, width rate `b_o` and `prehistory`.
    pub fn new(
        params: &SimParams,
        a_o: f64,
        b_o: f64,
        prehistory: Prehistory,
        spec: &StepSpec,
    ) -> Result<Self> {
        let template = InitialConditions::new(0.0, 0.0, a_o, b_o)?.with_prehistory(prehistory);
        Self::from_ics(params, &template, spec)
    }

    /// Family sharing the width data and pre-history of `ics`.
    pub fn from_ics(params: &SimParams, ics: &InitialConditions, spec: &StepSpec) -> Result<Self> {
        params.validate()?;
        spec.validate()?;
        let template =
            InitialConditions::new(0.0, 0.0, ics.a_o, ics.b_o)?.with_prehistory(ics.prehistory);
        for k in 0..=spec.steps_per_delay {
            let t = -(k as f64) * spec.step(params.tau);
            let (a, _, _) = template.width_history(t);
            if a <= 0.0 {
                return Err(Error::WidthCollapse { t, width: a });
            }
        }
        let system = FamilySystem {
            params: *params,
            width: template,
            sign: spec.convention.sign(),
        };
        let coefficients = integrate(&system, spec.steps_per_delay, spec.n_steps(params.tau))?;
        Ok(Self {
            params: *params,
            template,
            spec: *spec,
            coefficients,
            members: RwLock::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn spec(&self) -> &StepSpec {
        &self.spec
    }

    pub fn a_o(&self) -> f64 {
        self.template.a_o
    }

    pub fn t_end(&self) -> f64 {
        self.coefficients.t_end()
    }

    pub fn state(&self, t: f64) -> Result<FamilyState> {
        let (y, _) = self.coefficients.eval(t).ok_or(Error::OutOfDomain {
            t,
            lo: 0.0,
            hi: self.t_end(),
        })?;
        Ok(FamilyState::from_state(&y))
    }

    /// `(q, q̇)` of the member launched from `x_o` with velocity `v`.
    pub fn center(&self, v: f64, x_o: f64, t: f64) -> Result<(f64, f64)> {
        let s = self.state(t)?;
        Ok((x_o + v * s.g + s.r, v * s.gdot + s.rdot))
    }

    /// `S₀(t)` of the member launched from `x_o` with velocity `v`.
    pub fn action(&self, v: f64, x_o: f64, t: f64) -> Result<f64> {
        let s = self.state(t)?;
        let p = &self.params;
        Ok(p.mass * v * x_o / p.hbar + s.c0 + v * (s.c1 + v * s.c2))
    }

    pub fn member_ics(&self, v: f64, x_o: f64) -> InitialConditions {
        InitialConditions {
            x_o,
            v_o: v,
            ..self.template
        }
    }

    /// Direct solve of one member, memoized.
    pub fn solve_member(&self, v: f64, x_o: f64) -> Result<Arc<Trajectory>> {
        let ics = self.member_ics(v, x_o);
        ics.validate()?;
        let key = (self.params.key(), ics.key(), self.spec.key());
        if let Some(t) = self.members.read().expect("memo lock").get(&key) {
            return Ok(Arc::clone(t));
        }
        let traj = Arc::new(solve_system(&self.params, &ics, &self.spec)?);
        let mut memo = self.members.write().expect("memo lock");
        Ok(Arc::clone(memo.entry(key).or_insert(traj)))
    }

    pub fn memoized_members(&self) -> usize {
        self.members.read().expect("memo lock").len()
    }

    /// `(2π a_o²)^(1/4) ψ(v; x, t)` from the family coefficients.
    pub fn phi(&self, v: f64, x: f64, x_o: f64, t: f64) -> Result<Complex64> {
        let s = self.state(t)?;
        let k = self.params.mass / self.params.hbar;
        Ok(self.integrand(&s, v, x - x_o) * Complex64::from_polar(1.0, k * v * x_o))
    }

    /// As [`phi`](Self::phi), but from a direct solve of the member.
    pub fn phi_direct(&self, v: f64, x: f64, x_o: f64, t: f64) -> Result<Complex64> {
        let traj = self.solve_member(v, x_o)?;
        let psi = PacketField::new(&traj).psi(x, t)?;
        Ok(psi * (2.0 * PI * self.a_o() * self.a_o()).powf(0.25))
    }

    /// `Φ(v; x_o + u, t) exp(-i m v x_o/ħ)`.
    fn integrand(&self, s: &FamilyState, v: f64, u: f64) -> Complex64 {
        let k = self.params.mass / self.params.hbar;
        let xi = u - s.r - v * s.g;
        let qdot = v * s.gdot + s.rdot;
        let phase = s.c0 + v * (s.c1 + v * s.c2) + k * qdot * xi + 0.5 * k * s.adot / s.a * xi * xi;
        let modulus = (self.a_o() / s.a).sqrt() * (-xi * xi / (4.0 * s.a * s.a)).exp();
        Complex64::from_polar(modulus, phase)
    }

    /// Bound on the `v`-derivative of the integrand's exponent over the
    /// window, for every `u` in `[u_lo, u_hi]`.
    fn slope_bound(&self, s: &FamilyState, v_lo: f64, v_hi: f64, u_lo: f64, u_hi: f64) -> f64 {
        let k = self.params.mass / self.params.hbar;
        let damp = s.adot / s.a;
        // exponent phase = P v² + Q(u) v + R(u)
        let p = s.c2 - k * s.gdot * s.g + 0.5 * k * damp * s.g * s.g;
        let q = |u: f64| {
            let ub = u - s.r;
            s.c1 + k * (s.gdot * ub - s.rdot * s.g) - k * damp * ub * s.g
        };
        let mut bound: f64 = 0.0;
        for v in [v_lo, v_hi] {
            for u in [u_lo, u_hi] {
                bound = bound.max((2.0 * p * v + q(u)).abs());
            }
        }
        bound
    }

    fn window(
        &self,
        s: &FamilyState,
        quad: &QuadratureSpec,
        u_lo: f64,
        u_hi: f64,
    ) -> (f64, f64, f64) {
        let reach = quad.envelope_widths * s.a;
        let lo = (u_lo - s.r - reach) / s.g;
        let hi = (u_hi - s.r + reach) / s.g;
        let envelope = 0.5 * quad.envelope_widths * s.g / s.a;
        (lo, hi, self.slope_bound(s, lo, hi, u_lo, u_hi) + envelope)
    }

    fn positive_time(&self, t: f64) -> Result<FamilyState> {
        if t.is_nan() || t <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "the propagator needs t > 0, got {t}"
            )));
        }
        self.state(t)
    }

    fn kernel_value(&self, s: &FamilyState, nodes: &[(f64, f64)], u: f64) -> Complex64 {
        let sum: Complex64 = nodes
            .iter()
            .map(|&(v, w)| self.integrand(s, v, u) * w)
            .sum();
        sum * (self.params.mass / (2.0 * PI * self.params.hbar))
    }

    /// `K(x, x_o; t)` with a node-doubling convergence flag.
    pub fn propagator(
        &self,
        x: f64,
        x_o: f64,
        t: f64,
        quad: &QuadratureSpec,
    ) -> Result<PropagatorSample> {
        quad.validate()?;
        let s = self.positive_time(t)?;
        let u = x - x_o;
        let (lo, hi, slope) = self.window(&s, quad, u, u);
        let nodes = velocity_nodes(quad, lo, hi, slope);
        let value = self.kernel_value(&s, &nodes, u);
        let fine = velocity_nodes(&quad.doubled(), lo, hi, slope);
        let check = self.kernel_value(&s, &fine, u);
        let converged = (check - value).norm() <= quad.tolerance * check.norm().max(1e-300);
        Ok(PropagatorSample {
            x,
            x_o,
            t,
            value,
            quad: QuadratureUsed {
                v_min: lo,
                v_max: hi,
                n_nodes: nodes.len(),
            },
            converged,
        })
    }

    /// `K(u; t)` on a uniform grid of separations `u = x - x_o`.
    ///
    /// One node layout covers every `u`. Along the grid each node's
    /// contribution is a Gaussian chirp in `u`, advanced by two complex
    /// products per point and reseeded exactly every [`RESEED`] points.
    pub fn kernel_row(
        &self,
        t: f64,
        u_grid: &SpaceGrid,
        quad: &QuadratureSpec,
    ) -> Result<KernelRow> {
        quad.validate()?;
        let s = self.positive_time(t)?;
        let (lo, hi, slope) = self.window(&s, quad, u_grid.x_min, u_grid.x_max);
        let nodes = velocity_nodes(quad, lo, hi, slope);
        let n = u_grid.n_points;
        let partials: Vec<Vec<Complex64>> = nodes
            .par_chunks(1024)
            .map(|chunk| {
                let mut acc = vec![Complex64::new(0.0, 0.0); n];
                for &(v, w) in chunk {
                    self.accumulate_chirp(&s, quad, u_grid, v, w, &mut acc);
                }
                acc
            })
            .collect();
        let scale = self.params.mass / (2.0 * PI * self.params.hbar);
        let mut values = vec![Complex64::new(0.0, 0.0); n];
        for part in &partials {
            for (v, p) in values.iter_mut().zip(part) {
                *v += p;
            }
        }
        for v in &mut values {
            *v *= scale;
        }
        // spot-check a few separations against a doubled layout
        let fine = velocity_nodes(&quad.doubled(), lo, hi, slope);
        let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut probes = vec![0, n / 4, n / 2, 3 * n / 4, n - 1];
        probes.dedup();
        let converged = probes.iter().all(|&i| {
            let check = self.kernel_value(&s, &fine, u_grid.point(i));
            (check - values[i]).norm() <= quad.tolerance * check.norm().max(1e-12 * peak)
        });
        Ok(KernelRow {
            t,
            grid: *u_grid,
            values,
            quad: QuadratureUsed {
                v_min: lo,
                v_max: hi,
                n_nodes: nodes.len(),
            },
            converged,
        })
    }

    fn accumulate_chirp(
        &self,
        s: &FamilyState,
        quad: &QuadratureSpec,
        grid: &SpaceGrid,
        v: f64,
        w: f64,
        acc: &mut [Complex64],
    ) {
        let k = self.params.mass / self.params.hbar;
        let du = grid.spacing();
        let shift = s.r + v * s.g;
        let reach = quad.envelope_widths * s.a;
        let first = ((shift - reach - grid.x_min) / du).ceil().max(0.0);
        let last = ((shift + reach - grid.x_min) / du)
            .floor()
            .min((grid.n_points - 1) as f64);
        if first > last {
            return;
        }
        let (first, last) = (first as usize, last as usize);
        let beta = Complex64::new(-0.25 / (s.a * s.a), 0.5 * k * s.adot / s.a);
        let gamma = k * (v * s.gdot + s.rdot);
        let front =
            Complex64::from_polar(w * (self.a_o() / s.a).sqrt(), s.c0 + v * (s.c1 + v * s.c2));
        let growth = (2.0 * beta * du * du).exp();
        let mut i = first;
        while i <= last {
            let xi = grid.point(i) - shift;
            let mut term = front * (beta * xi * xi + Complex64::new(0.0, gamma * xi)).exp();
            let mut ratio =
                (beta * (2.0 * xi * du + du * du) + Complex64::new(0.0, gamma * du)).exp();
            let stop = (i + RESEED).min(last + 1);
            for slot in &mut acc[i..stop] {
                *slot += term;
                term *= ratio;
                ratio *= growth;
            }
            i = stop;
        }
    }

    /// Smeared completeness integral
    /// `∫ dv Φ*(v; x, t) ∫ dx' f(x') Φ(v; x', t)` for a normalized Gaussian
    /// test function `f`.
    ///
    /// At `t = 0` the inner integral is a Fourier transform of `f` and the
    /// result is `(2πħ/m) exp(-(x - x_o)²/(2 a_o²)) f(x)`.
    pub fn completeness_check(
        &self,
        x: f64,
        x_o: f64,
        t: f64,
        test: TestFunction,
        quad: &QuadratureSpec,
    ) -> Result<Complex64> {
        quad.validate()?;
        test.validate()?;
        let s = self.state(t)?;
        let k = self.params.mass / self.params.hbar;
        let e = quad.envelope_widths;
        let (u_lo, u_hi) = (
            test.center - e * test.sigma - x_o,
            test.center + e * test.sigma - x_o,
        );
        let u = x - x_o;
        let (v_lo, v_hi, v_slope) = if s.g > 0.0 {
            self.window(&s, quad, u, u)
        } else {
            let reach = e / (k * test.sigma);
            (-reach, reach, 0.0)
        };
        let v_slope = v_slope
            + self.slope_bound(&s, v_lo, v_hi, u_lo, u_hi)
            + k * (u.abs() + u_lo.abs().max(u_hi.abs()));
        let v_nodes = velocity_nodes(quad, v_lo, v_hi, v_slope);
        let max_speed = v_lo.abs().max(v_hi.abs()) * s.gdot.abs() + s.rdot.abs();
        let reach = e * test.sigma + (u.abs() + u_lo.abs().max(u_hi.abs())) + s.r.abs();
        let x_slope = k * (max_speed + (s.adot / s.a).abs() * reach)
            + reach / (2.0 * s.a * s.a)
            + e / test.sigma;
        let x_nodes = velocity_nodes(quad, u_lo, u_hi, x_slope);
        let sum: Complex64 = v_nodes
            .par_iter()
            .map(|&(v, wv)| {
                let inner: Complex64 = x_nodes
                    .iter()
                    .map(|&(up, wx)| self.integrand(&s, v, up) * (wx * test.eval(up + x_o)))
                    .sum();
                self.integrand(&s, v, u).conj() * inner * wv
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        Ok(sum)
    }
}

/// Nodes advanced by recurrence before an exact reseed.
pub const RESEED: usize = 64;

/// Normalized Gaussian `exp(-(x-c)²/(2σ²)) / (σ sqrt(2π))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub center: f64,
    pub sigma: f64,
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * PI).sqrt())
    }

    fn validate(&self) -> Result<()> {
        if self.sigma > 0.0 && self.sigma.is_finite() && self.center.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("bad test function {self:?}")))
        }
    }
}

/// One kernel value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorSample {
    pub x: f64,
    pub x_o: f64,
    pub t: f64,
    pub value: Complex64,
    pub quad: QuadratureUsed,
    pub converged: bool,
}

/// `K(u; t)` on a uniform grid of separations.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub t: f64,
    pub grid: SpaceGrid,
    pub values: Vec<Complex64>,
    pub quad: QuadratureUsed,
    pub converged: bool,
}

impl KernelRow {
    /// Rows `x, x_o, t, re_K, im_K, abs_K, converged` for `x = x_o + u`.
    pub fn write_csv<W: Write>(&self, mut w: W, x_o: f64, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "x,x_o,t,re_K,im_K,abs_K,converged")?;
        }
        for (i, k) in self.values.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                num(x_o + self.grid.point(i)),
                num(x_o),
                num(self.t),
                num(k.re),
                num(k.im),
                num(k.norm()),
                self.converged
            )?;
        }
        Ok(())
    }
}

fn same_spacing(a: &SpaceGrid, b: &SpaceGrid) -> Result<f64> {
    let (da, db) = (a.spacing(), b.spacing());
    if (da - db).abs() > 1e-9 * da {
        return Err(Error::InvalidParams(format!(
            "grids must share their spacing ({da} vs {db})"
        )));
    }
    Ok(da)
}

fn lattice_offset(d: f64, spacing: f64) -> Result<i64> {
    let k = (d / spacing).round();
    if (d / spacing - k).abs() > 1e-6 {
        return Err(Error::InvalidParams(format!(
            "grids are not aligned: offset {d} is not a multiple of {spacing}"
        )));
    }
    Ok(k as i64)
}

/// Separation grid that covers every `target - source` pair.
pub fn separation_grid(source: &SpaceGrid, target: &SpaceGrid) -> Result<SpaceGrid> {
    let du = same_spacing(source, target)?;
    lattice_offset(target.x_min - source.x_min, du)?;
    let n = source.n_points + target.n_points - 1;
    let x_min = target.x_min - source.x_max;
    Ok(SpaceGrid {
        x_min,
        x_max: x_min + (n - 1) as f64 * du,
        n_points: n,
    })
}

/// Trapezoid quadrature of `∫ K(x - x_o) ψ₀(x_o) dx_o` on aligned grids.
pub fn apply_kernel(
    row: &KernelRow,
    source: &SpaceGrid,
    psi0: &[Complex64],
    target: &SpaceGrid,
) -> Result<Vec<Complex64>> {
    if psi0.len() != source.n_points {
        return Err(Error::InvalidParams(format!(
            "{} samples for a {}-point grid",
            psi0.len(),
            source.n_points
        )));
    }
    let du = same_spacing(source, target)?;
    same_spacing(source, &row.grid)?;
    let base = lattice_offset(target.x_min - source.x_min - row.grid.x_min, du)?;
    let reach_lo = base - (source.n_points as i64 - 1);
    let reach_hi = base + target.n_points as i64 - 1;
    if reach_lo < 0 || reach_hi >= row.grid.n_points as i64 {
        return Err(Error::InvalidParams(
            "kernel row does not cover all separations".to_string(),
        ));
    }
    let weighted: Vec<Complex64> = psi0
        .iter()
        .enumerate()
        .map(|(j, p)| p * source.weight(j))
        .collect();
    Ok((0..target.n_points)
        .into_par_iter()
        .map(|i| {
            weighted
                .iter()
                .enumerate()
                .map(|(j, p)| row.values[(base + i as i64 - j as i64) as usize] * p)
                .sum()
        })
        .collect())
}

/// Result of propagating an initial field with the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Reproduction {
    pub target: SpaceGrid,
    pub source: SpaceGrid,
    pub values: Vec<Complex64>,
    /// Whether the source grid had to be widened once.
    pub widened: bool,
    pub tail_mass: f64,
    pub kernel_converged: bool,
}

/// Largest tail mass tolerated outside the source grid.
pub const TAIL_MASS_LIMIT: f64 = 1e-8;

/// `∫|ψ₀|²` over one grid-width beyond each end of `grid`.
fn tail_mass<F: Fn(f64) -> Complex64>(psi0: &F, grid: &SpaceGrid) -> f64 {
    let dx = grid.spacing();
    let n = grid.n_points - 1;
    (1..=n)
        .map(|k| {
            let off = k as f64 * dx;
            psi0(grid.x_min - off).norm_sqr() + psi0(grid.x_max + off).norm_sqr()
        })
        .sum::<f64>()
        * dx
}

/// `ψ(x, t) = ∫ K(x - x_o; t) ψ₀(x_o) dx_o` on `target`.
///
/// `source` and `target` must share their spacing and be aligned. If `ψ₀`
/// carries more than [`TAIL_MASS_LIMIT`] outside `source`, the source is
/// widened once; if that is still not enough the call fails.
pub fn reproduce_psi<F>(
    family: &PacketFamily,
    t: f64,
    psi0: F,
    source: &SpaceGrid,
    target: &SpaceGrid,
    quad: &QuadratureSpec,
) -> Result<Reproduction>
where
    F: Fn(f64) -> Complex64,
{
    let mut source = *source;
    let mut widened = false;
    let mut tail = tail_mass(&psi0, &source);
    if tail > TAIL_MASS_LIMIT {
        let dx = source.spacing();
        let extra = source.n_points.div_ceil(2);
        source = SpaceGrid {
            x_min: source.x_min - extra as f64 * dx,
            x_max: source.x_max + extra as f64 * dx,
            n_points: source.n_points + 2 * extra,
        };
        widened = true;
        tail = tail_mass(&psi0, &source);
        log::info!(
            "source grid widened to [{}, {}]",
            source.x_min,
            source.x_max
        );
        if tail > TAIL_MASS_LIMIT {
            return Err(Error::SupportTruncated { tail_mass: tail });
        }
    }
    let samples: Vec<Complex64> = source.points().into_iter().map(&psi0).collect();
    let u_grid = separation_grid(&source, target)?;
    let row = family.kernel_row(t, &u_grid, quad)?;
    let values = apply_kernel(&row, &source, &samples, target)?;
    Ok(Reproduction {
        target: *target,
        source,
        values,
        widened,
        tail_mass: tail,
        kernel_converged: row.converged,
    })
}

/// Trapezoid `L²` distance between two samplings on `grid`.
pub fn l2_distance(grid: &SpaceGrid, a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| grid.weight(i) * (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde::ActionConvention;

    fn family(alpha: f64, a_o: f64, t_end: f64) -> PacketFamily {
        let p = SimParams::natural(alpha, 0.1).unwrap();
        PacketFamily::new(
            &p,
            a_o,
            0.0,
            Prehistory::Constant,
            &StepSpec::new(64, t_end).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn phi_at_launch_is_a_plane_wave() {
        let f = family(0.5, 0.7, 0.5);
        for (v, x_o) in [(0.0, 0.0), (1.3, 0.4), (-2.0, -1.0)] {
            let phi = f.phi(v, x_o, x_o, 0.0).unwrap();
            let expect = Complex64::from_polar(1.0, v * x_o);
            assert!((phi - expect).norm() < 1e-15);
        }
        assert_eq!(f.phi(0.0, 0.0, 0.0, 0.0).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn phi_modulus_ignores_velocity() {
        let f = family(0.5, 1.0, 0.5);
        let t = 0.37;
        let moduli: Vec<f64> = [-2.0, 0.0, 0.5, 3.0]
            .iter()
            .map(|&v| {
                let (q, _) = f.center(v, 0.2, t).unwrap();
                f.phi(v, q + 0.3, 0.2, t).unwrap().norm()
            })
            .collect();
        for m in &moduli {
            assert!((m - moduli[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn fast_path_matches_direct_solve() {
        let f = family(0.5, 1.0, 1.0);
        for v in [-2.5, 0.3, 1.7] {
            let traj = f.solve_member(v, 0.4).unwrap();
            for t in [0.05, 0.5, 1.0] {
                let r = traj.eval(t).unwrap();
                let (q, qdot) = f.center(v, 0.4, t).unwrap();
                assert!((q - r.q).abs() < 1e-12 && (qdot - r.qdot).abs() < 1e-12);
                assert!((f.action(v, 0.4, t).unwrap() - r.action).abs() < 1e-11);
                let d = f.phi_direct(v, r.q + 0.5, 0.4, t).unwrap();
                let fast = f.phi(v, r.q + 0.5, 0.4, t).unwrap();
                assert!((d - fast).norm() < 1e-11);
            }
        }
        assert_eq!(f.memoized_members(), 3);
        f.solve_member(0.3, 0.4).unwrap();
        assert_eq!(f.memoized_members(), 3);
    }

    #[test]
    fn fast_path_with_ramp_history_and_reversed_action() {
        let p = SimParams::natural(2.0, 0.1).unwrap();
        let ics = InitialConditions::new(0.0, 0.0, 0.8, 0.1)
            .unwrap()
            .with_prehistory(Prehistory::Ramp {
                kappa_q: 0.7,
                kappa_a: -0.2,
            });
        let spec = StepSpec::new(32, 0.6)
            .unwrap()
            .with_convention(ActionConvention::Reversed);
        let f = PacketFamily::from_ics(&p, &ics, &spec).unwrap();
        let traj = f.solve_member(1.1, -0.3).unwrap();
        let r = traj.eval(0.6).unwrap();
        let (q, _) = f.center(1.1, -0.3, 0.6).unwrap();
        assert!((q - r.q).abs() < 1e-12);
        assert!((f.action(1.1, -0.3, 0.6).unwrap() - r.action).abs() < 1e-11);
    }

    #[test]
    fn free_kernel_modulus_and_phase() {
        let f = family(0.0, 1.0, 1.0);
        let quad = QuadratureSpec::default();
        let expect = (2.0 * PI).powf(-0.5);
        let samples: Vec<PropagatorSample> = [-2.0, -0.5, 0.0, 1.0, 2.5]
            .iter()
            .map(|&x| f.propagator(x, 0.0, 1.0, &quad).unwrap())
            .collect();
        for s in &samples {
            assert!(s.converged);
            assert!((s.value.norm() - expect).abs() < 1e-9, "{s:?}");
            let want = 0.5 * s.x * s.x - 0.25 * PI;
            let diff = s.value.arg() - want;
            let turns = diff / (2.0 * PI);
            assert!((turns - turns.round()).abs() < 1e-8, "x = {}", s.x);
        }
    }

    #[test]
    fn row_matches_pointwise_values() {
        let f = family(0.5, 1.0, 0.5);
        let quad = QuadratureSpec::default();
        let grid = SpaceGrid::new(-3.0, 3.0, 601).unwrap();
        let row = f.kernel_row(0.3, &grid, &quad).unwrap();
        assert!(row.converged);
        for i in [0, 77, 300, 512, 600] {
            let s = f.propagator(grid.point(i), 0.0, 0.3, &quad).unwrap();
            let scale = s.value.norm();
            assert!((row.values[i] - s.value).norm() < 1e-9 * scale, "i = {i}");
        }
    }

    #[test]
    fn kernel_depends_on_separation_only() {
        let f = family(0.5, 1.0, 0.5);
        let quad = QuadratureSpec::default();
        let a = f.propagator(1.2, 0.2, 0.4, &quad).unwrap().value;
        let b = f.propagator(-0.3, -1.3, 0.4, &quad).unwrap().value;
        assert!((a - b).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn time_must_be_positive() {
        let f = family(0.5, 1.0, 0.5);
        let quad = QuadratureSpec::default();
        assert!(f.propagator(0.0, 0.0, 0.0, &quad).is_err());
        assert!(f.propagator(0.0, 0.0, 0.7, &quad).is_err());
    }

    #[test]
    fn completeness_is_a_delta_at_launch() {
        let f = family(0.5, 1.0, 0.5);
        let quad = QuadratureSpec::default();
        let test = TestFunction {
            center: 0.0,
            sigma: 0.05,
        };
        let at = f.completeness_check(0.0, 0.0, 0.0, test, &quad).unwrap();
        let expect = 2.0 * PI * test.eval(0.0);
        assert!((at - expect).norm() < 0.05 * expect, "{at} vs {expect}");
        let off = f.completeness_check(0.1, 0.0, 0.0, test, &quad).unwrap();
        let expect = 2.0 * PI * (-0.005f64).exp() * test.eval(0.1);
        assert!(
            (off - expect).norm() < 0.05 * expect + 1e-6,
            "{off} vs {expect}"
        );
        let far = f.completeness_check(1.0, 0.0, 0.0, test, &quad).unwrap();
        assert!(far.norm() < 1e-6, "{far}");
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let f = family(0.5, 1.0, 0.5);
        let quad = QuadratureSpec::default();
        let grid = SpaceGrid::new(-2.0, 2.0, 81).unwrap();
        let out =
            reproduce_psi(&f, 0.2, |_| Complex64::new(0.0, 0.0), &grid, &grid, &quad).unwrap();
        assert!(out.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(!out.widened);
    }

    #[test]
    fn narrow_source_is_widened_or_rejected() {
        let f = family(0.0, 1.0, 0.5);
        let quad = QuadratureSpec::default();
        let psi0 = |x: f64| Complex64::new((-x * x).exp(), 0.0);
        let source = SpaceGrid::new(-2.5, 2.5, 51).unwrap();
        let target = SpaceGrid::new(-1.0, 1.0, 21).unwrap();
        let out = reproduce_psi(&f, 0.1, psi0, &source, &target, &quad).unwrap();
        assert!(out.widened && out.tail_mass <= TAIL_MASS_LIMIT);
        let tiny = SpaceGrid::new(-0.5, 0.5, 11).unwrap();
        assert!(matches!(
            reproduce_psi(&f, 0.1, psi0, &tiny, &target, &quad),
            Err(Error::SupportTruncated { .. })
        ));
    }

    #[test]
    fn grids_must_align() {
        let a = SpaceGrid::new(0.0, 1.0, 11).unwrap();
        let b = SpaceGrid::new(0.05, 1.05, 11).unwrap();
        assert!(separation_grid(&a, &b).is_err());
        let c = SpaceGrid::new(0.0, 2.0, 11).unwrap();
        assert!(separation_grid(&a, &c).is_err());
        let d = SpaceGrid::new(0.3, 1.3, 11).unwrap();
        let u = separation_grid(&a, &d).unwrap();
        assert_eq!(u.n_points, 21);
        assert!((u.x_min + 0.7).abs() < 1e-12 && (u.x_max - 1.3).abs() < 1e-12);
    }

    #[test]
    fn quadrature_spec_validation() {
        assert!(QuadratureSpec::default().validate().is_ok());
        let bad = QuadratureSpec {
            panel_nodes: 2,
            min_panels: 2,
            ..QuadratureSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
