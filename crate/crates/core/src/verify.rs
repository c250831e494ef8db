//! Residual oracles.
//!
//! Each check feeds the closed-form packet back into one of the equations it
//! has to satisfy and reports the worst and RMS residual over a space-time
//! sample. Time derivatives are central differences over neighbouring solver
//! nodes, so every sample time must be a node. Field residuals are weighted
//! by `sqrt(rho)` for the pass/fail verdict; raw values are reported too.

use std::fmt;
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dde::Trajectory;
use crate::error::{Error, Result};
use crate::output::num;
use crate::packet::{unwrap_phase, PacketField, PacketSlice, SpaceGrid};

/// Outcome of one residual check.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub name: String,
    /// Worst weighted residual; drives the verdict.
    pub max_abs: f64,
    pub rms: f64,
    pub raw_max_abs: f64,
    pub raw_rms: f64,
    pub samples: usize,
    /// Human-readable description of the space-time sample.
    pub grid: String,
    pub tolerance: f64,
    pub passed: bool,
    pub notes: Vec<String>,
}

impl ResidualReport {
    fn from_stats(name: &str, grid: String, tolerance: f64, stats: Stats) -> Self {
        let n = stats.n.max(1) as f64;
        let max_abs = stats.max;
        Self {
            name: name.to_string(),
            max_abs,
            rms: (stats.sumsq / n).sqrt().min(max_abs),
            raw_max_abs: stats.raw_max,
            raw_rms: (stats.raw_sumsq / n).sqrt().min(stats.raw_max),
            samples: stats.n,
            grid,
            tolerance,
            passed: stats.n > 0 && max_abs <= tolerance,
            notes: Vec::new(),
        }
    }

    /// Re-judges the report against another tolerance.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.passed = self.samples > 0 && self.max_abs <= tolerance;
        self
    }

    fn note(&mut self, text: impl Into<String>) {
        let text = text.into();
        if !self.notes.contains(&text) {
            self.notes.push(text);
        }
    }

    pub const CSV_HEADER: &'static str =
        "check,max_abs,rms,raw_max_abs,raw_rms,samples,tolerance,passed,grid";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},\"{}\"",
            self.name,
            num(self.max_abs),
            num(self.rms),
            num(self.raw_max_abs),
            num(self.raw_rms),
            self.samples,
            num(self.tolerance),
            self.passed,
            self.grid.replace('"', "'")
        )
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<24} max {:.3e}  rms {:.3e}  tol {:.1e}  ({} samples; {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_abs,
            self.rms,
            self.tolerance,
            self.samples,
            self.grid
        )?;
        for n in &self.notes {
            write!(f, "\n       note: {n}")?;
        }
        Ok(())
    }
}

pub fn write_csv<W: Write>(mut w: W, reports: &[ResidualReport]) -> io::Result<()> {
    writeln!(w, "{}", ResidualReport::CSV_HEADER)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// One line per report followed by an overall verdict.
pub fn summary(reports: &[ResidualReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    out.push_str(&format!(
        "{} of {} checks passed\n",
        reports.len() - failed,
        reports.len()
    ));
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    max: f64,
    sumsq: f64,
    raw_max: f64,
    raw_sumsq: f64,
    n: usize,
}

impl Stats {
    fn push(&mut self, raw: f64, weighted: f64) {
        let (raw, weighted) = (raw.abs(), weighted.abs());
        self.max = sticky_max(self.max, weighted);
        self.raw_max = sticky_max(self.raw_max, raw);
        self.sumsq += weighted * weighted;
        self.raw_sumsq += raw * raw;
        self.n += 1;
    }

    fn merge(mut self, o: Stats) -> Stats {
        self.max = sticky_max(self.max, o.max);
        self.raw_max = sticky_max(self.raw_max, o.raw_max);
        self.sumsq += o.sumsq;
        self.raw_sumsq += o.raw_sumsq;
        self.n += o.n;
        self
    }
}

/// Maximum that keeps a NaN once seen, so a NaN residual never passes.
fn sticky_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Spatial sample used at each time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    Fixed(SpaceGrid),
    /// `[q - k a, q + k a]` around the current packet.
    Following {
        half_widths: f64,
        n_points: usize,
    },
}

impl Window {
    pub fn grid_at(&self, slice: &PacketSlice) -> Result<SpaceGrid> {
        match *self {
            Window::Fixed(g) => Ok(g),
            Window::Following {
                half_widths,
                n_points,
            } => {
                let r = slice.record();
                SpaceGrid::centered(r.q, half_widths * r.a, n_points)
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Window::Fixed(g) => format!("x in [{}, {}] n={}", g.x_min, g.x_max, g.n_points),
            Window::Following {
                half_widths,
                n_points,
            } => format!("x in q +- {half_widths} a n={n_points}"),
        }
    }
}

/// Node times in `[from, to]`, keeping every `stride`-th node.
pub fn node_times(traj: &Trajectory, from: f64, to: f64, stride: usize) -> Vec<f64> {
    let h = traj.step();
    let first = (from / h - 1e-9).ceil().max(0.0) as usize;
    (first..traj.node_count())
        .step_by(stride.max(1))
        .map(|k| traj.node_time(k))
        .take_while(|&t| t <= to * (1.0 + 1e-12) + 1e-12)
        .collect()
}

/// Index of the solver node at `t` with a neighbour on each side.
fn interior_node(traj: &Trajectory, t: f64) -> Result<usize> {
    let h = traj.step();
    let k = (t / h).round();
    let n = traj.node_count();
    if !(k >= 1.0 && (k as usize) + 1 < n) {
        return Err(Error::OutOfDomain {
            t,
            lo: h,
            hi: traj.node_time(n - 2),
        });
    }
    if (k * h - t).abs() > 1e-9 * h {
        return Err(Error::InvalidParams(format!(
            "t = {t} is not a solver node (step {h})"
        )));
    }
    Ok(k as usize)
}

fn check_delay(traj: &Trajectory, t: f64) -> Result<()> {
    let tau = traj.params().tau;
    // one ulp of slack: the node at t = tau may round a hair below it
    if t - tau < -1e-12 * tau {
        return Err(Error::DelayDomain {
            t,
            delayed: t - tau,
        });
    }
    Ok(())
}

/// Central-difference triple of slices around node `k`.
struct Stencil {
    before: PacketSlice,
    now: PacketSlice,
    after: PacketSlice,
    h: f64,
}

impl Stencil {
    fn at(field: &PacketField, k: usize) -> Result<Self> {
        let traj = field.trajectory();
        Ok(Self {
            before: field.slice(traj.node_time(k - 1))?,
            now: field.slice(traj.node_time(k))?,
            after: field.slice(traj.node_time(k + 1))?,
            h: traj.step(),
        })
    }
}

fn second_derivative<F: Fn(f64) -> Complex64>(f: F, x: f64, dx: f64) -> Complex64 {
    (-f(x + 2.0 * dx) + 16.0 * f(x + dx) - 30.0 * f(x) + 16.0 * f(x - dx) - f(x - 2.0 * dx))
        / (12.0 * dx * dx)
}

/// How the delayed logarithmic term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LogTerm {
    Phase,
    Unwrapped,
}

/// Residual of `iħ ψ_t + (ħ²/2m) ψ_xx - V_ee ψ` with the delayed term built
/// from the phase difference.
pub fn pde_residual(
    field: &PacketField,
    window: &Window,
    times: &[f64],
    tolerance: f64,
) -> Result<ResidualReport> {
    pde_impl(field, window, times, tolerance, LogTerm::Phase)
}

/// As [`pde_residual`], but the delayed term comes from the principal complex
/// log of `ψ(x,t-τ) ψ*(x,t) / (ψ*(x,t-τ) ψ(x,t))`, unwrapped along the
/// center line from `t = 0` and then outward in `x`.
pub fn pde_residual_unwrapped(
    field: &PacketField,
    window: &Window,
    times: &[f64],
    tolerance: f64,
) -> Result<ResidualReport> {
    pde_impl(field, window, times, tolerance, LogTerm::Unwrapped)
}

fn pde_impl(
    field: &PacketField,
    window: &Window,
    times: &[f64],
    tolerance: f64,
    log_term: LogTerm,
) -> Result<ResidualReport> {
    let traj = field.trajectory();
    let p = *traj.params();
    let per_time: Vec<(Stats, bool)> = times
        .par_iter()
        .map(|&t| -> Result<(Stats, bool)> {
            check_delay(traj, t)?;
            let k = interior_node(traj, t)?;
            let st = Stencil::at(field, k)?;
            let grid = window.grid_at(&st.now)?;
            let xs = grid.points();
            let theta = match log_term {
                LogTerm::Phase => None,
                LogTerm::Unwrapped => Some(log_ratio_unwrapped(field, st.now.t, &xs)?),
            };
            let dx = grid.spacing();
            let mut stats = Stats::default();
            for (i, &x) in xs.iter().enumerate() {
                let psi = st.now.psi(x);
                let psi_t = (st.after.psi(x) - st.before.psi(x)) / (2.0 * st.h);
                let psi_xx = second_derivative(|y| st.now.psi(y), x, dx);
                // -iħα ln(ratio) ψ with ln(ratio) = iθ
                let delayed_term = match &theta {
                    None => -st.now.extended_potential(x).unwrap() * psi,
                    Some(th) => p.hbar * p.alpha * th[i] * psi,
                };
                let r = Complex64::i() * p.hbar * psi_t
                    + p.hbar * p.hbar / (2.0 * p.mass) * psi_xx
                    + delayed_term;
                let raw = r.norm();
                stats.push(raw, raw * st.now.rho(x).sqrt());
            }
            let edge = st.now.rho(grid.x_min).max(st.now.rho(grid.x_max));
            Ok((stats, edge > 1e-12))
        })
        .collect::<Result<_>>()?;
    let name = match log_term {
        LogTerm::Phase => "pde",
        LogTerm::Unwrapped => "pde_complex_log",
    };
    finish(name, window, times, traj, tolerance, per_time)
}

fn finish(
    name: &str,
    window: &Window,
    times: &[f64],
    traj: &Trajectory,
    tolerance: f64,
    per_time: Vec<(Stats, bool)>,
) -> Result<ResidualReport> {
    let wide = per_time.iter().any(|(_, w)| *w);
    let stats = per_time
        .into_iter()
        .fold(Stats::default(), |acc, (s, _)| acc.merge(s));
    let mut report = ResidualReport::from_stats(
        name,
        format!("{}; {}", window.describe(), describe_times(traj, times)),
        tolerance,
        stats,
    );
    if wide {
        report.note("density at the window edge exceeds 1e-12");
    }
    annotate_history(&mut report, traj);
    Ok(report)
}

fn describe_times(traj: &Trajectory, times: &[f64]) -> String {
    match (times.first(), times.last()) {
        (Some(a), Some(b)) => format!("{} times in [{a}, {b}], dt = {}", times.len(), traj.step()),
        _ => "no times".to_string(),
    }
}

fn annotate_history(report: &mut ResidualReport, traj: &Trajectory) {
    report.note(format!(
        "pre-history: {}; action convention: {}",
        traj.ics().prehistory.describe(),
        traj.spec().convention.name()
    ));
}

/// Unwrapped `θ` with `ψ(x,t-τ) ψ*(x,t) / (ψ*(x,t-τ) ψ(x,t)) = exp(iθ)`.
///
/// The center-line value is tracked node by node from `t = 0`, where it is
/// zero because the pre-history holds `S₀` fixed; the profile is then
/// unwrapped outward from the sample nearest the center.
pub fn log_ratio_unwrapped(field: &PacketField, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let traj = field.trajectory();
    let k_end = (t / traj.step()).round() as usize;
    let angle = |s: &PacketSlice, x: f64| -> f64 {
        let z = s.psi_delayed(x).unwrap() * s.psi(x).conj();
        (z * z).arg()
    };
    let wrap = |d: f64| d - std::f64::consts::TAU * (d / std::f64::consts::TAU).round();
    let mut center = 0.0;
    let mut last = 0.0;
    for k in 0..=k_end {
        let s = field.slice(traj.node_time(k))?;
        let a = angle(&s, s.record().q);
        if k == 0 {
            center = a;
        } else {
            center += wrap(a - last);
        }
        last = a;
    }
    let now = field.slice(t)?;
    if now.delayed_record().is_none() {
        return Err(Error::DelayDomain {
            t,
            delayed: t - traj.params().tau,
        });
    }
    let q = now.record().q;
    let anchor = xs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - q).abs().total_cmp(&(b.1 - q).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let raw: Vec<f64> = xs.iter().map(|&x| angle(&now, x)).collect();
    let mut out = unwrap_phase(&raw, anchor);
    let shift = center + wrap(raw[anchor] - angle(&now, q)) - out[anchor];
    for v in &mut out {
        *v += shift;
    }
    Ok(out)
}

/// Residual of `∂ρ/∂t + ∂(ρ v)/∂x`, both by second-order central differences.
pub fn continuity_residual(
    field: &PacketField,
    window: &Window,
    times: &[f64],
    tolerance: f64,
) -> Result<ResidualReport> {
    let traj = field.trajectory();
    let per_time: Vec<(Stats, bool)> = times
        .par_iter()
        .map(|&t| -> Result<(Stats, bool)> {
            let k = interior_node(traj, t)?;
            let st = Stencil::at(field, k)?;
            let grid = window.grid_at(&st.now)?;
            let dx = grid.spacing();
            let flux = |x: f64| st.now.rho(x) * st.now.v_qu(x);
            let mut stats = Stats::default();
            for x in grid.points() {
                let rho_t = (st.after.rho(x) - st.before.rho(x)) / (2.0 * st.h);
                let flux_x = (flux(x + dx) - flux(x - dx)) / (2.0 * dx);
                let raw = rho_t + flux_x;
                stats.push(raw, raw * st.now.rho(x).sqrt());
            }
            Ok((stats, false))
        })
        .collect::<Result<_>>()?;
    finish("continuity", window, times, traj, tolerance, per_time)
}

/// Phase-equation residuals with `∂S/∂t` taken analytically and by central
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResiduals {
    pub analytic: ResidualReport,
    pub finite_difference: ResidualReport,
}

/// Residual of `ħ ∂S/∂t + ½ m v² + V_ee + V_qu`.
pub fn phase_equation_residual(
    field: &PacketField,
    window: &Window,
    times: &[f64],
    tolerance_analytic: f64,
    tolerance_fd: f64,
) -> Result<PhaseResiduals> {
    let traj = field.trajectory();
    let p = *traj.params();
    let per_time: Vec<((Stats, bool), (Stats, bool))> = times
        .par_iter()
        .map(|&t| -> Result<_> {
            check_delay(traj, t)?;
            let k = interior_node(traj, t)?;
            let st = Stencil::at(field, k)?;
            let grid = window.grid_at(&st.now)?;
            let (mut an, mut fd) = (Stats::default(), Stats::default());
            for x in grid.points() {
                let s = &st.now;
                let v = s.v_qu(x);
                let rest = 0.5 * p.mass * v * v
                    + s.extended_potential(x).unwrap()
                    + s.quantum_potential(x);
                let w = s.rho(x).sqrt();
                let r_an = p.hbar * s.phase_rate(x) + rest;
                let s_t = (st.after.phase(x) - st.before.phase(x)) / (2.0 * st.h);
                let r_fd = p.hbar * s_t + rest;
                an.push(r_an, r_an * w);
                fd.push(r_fd, r_fd * w);
            }
            Ok(((an, false), (fd, false)))
        })
        .collect::<Result<_>>()?;
    let (an, fd): (Vec<_>, Vec<_>) = per_time.into_iter().unzip();
    Ok(PhaseResiduals {
        analytic: finish(
            "phase_analytic",
            window,
            times,
            traj,
            tolerance_analytic,
            an,
        )?,
        finite_difference: finish("phase_fd", window, times, traj, tolerance_fd, fd)?,
    })
}

/// Zeroth Taylor coefficient of the phase equation on `x = q(t)`:
/// `ħ Ṡ₀ - ½ m q̇² + ħ²/(4 m a²) + 2 ħ α [S₀(t) - S₀(t-τ)]`.
///
/// `Ṡ₀` is the derivative of the dense output, so off-node times probe the
/// interpolant as well as the nodes.
pub fn center_line_residual(
    traj: &Trajectory,
    times: &[f64],
    tolerance: f64,
) -> Result<ResidualReport> {
    let p = *traj.params();
    let mut stats = Stats::default();
    for &t in times {
        let (now, rate) = traj.eval_with_rates(t)?;
        let delayed = traj.eval(t - p.tau)?;
        let r = p.hbar * rate.action - 0.5 * p.mass * now.qdot * now.qdot
            + p.hbar * p.hbar / (4.0 * p.mass * now.a * now.a)
            + 2.0 * p.hbar * p.alpha * (now.action - delayed.action);
        stats.push(r, r);
    }
    let mut report = ResidualReport::from_stats(
        "center_line",
        format!("x = q(t); {}", describe_times(traj, times)),
        tolerance,
        stats,
    );
    annotate_history(&mut report, traj);
    Ok(report)
}

/// Times in `[from, to]` at every node and every node midpoint.
pub fn node_and_midpoint_times(traj: &Trajectory, from: f64, to: f64) -> Vec<f64> {
    let h = traj.step();
    let mut out = Vec::new();
    for t in node_times(traj, from, to, 1) {
        out.push(t);
        if t + h <= to * (1.0 + 1e-12) + 1e-12 && t + h <= traj.t_end() {
            out.push(t + 0.5 * h);
        }
    }
    out
}

/// A Bohmian trajectory sampled at the solver nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BohmPath {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// Set when the path left the bounds and was cut short.
    pub truncated_at: Option<f64>,
}

/// Integrates `dx/dt = v_qu(x, t)` with RK4 at the solver step, stage values
/// taken from the dense output.
pub fn bohm_path(
    field: &PacketField,
    x_start: f64,
    t_end: f64,
    bounds: Option<(f64, f64)>,
) -> Result<BohmPath> {
    let traj = field.trajectory();
    let h = traj.step();
    let n = ((t_end / h - 1e-9).ceil() as usize).min(traj.node_count() - 1);
    let v = |x: f64, t: f64| -> Result<f64> { field.v_qu(x, t) };
    let mut times = vec![0.0];
    let mut positions = vec![x_start];
    let mut x = x_start;
    let mut truncated_at = None;
    for k in 0..n {
        let t = traj.node_time(k);
        let t_mid = t + 0.5 * h;
        let t_next = traj.node_time(k + 1);
        let k1 = v(x, t)?;
        let k2 = v(x + 0.5 * h * k1, t_mid)?;
        let k3 = v(x + 0.5 * h * k2, t_mid)?;
        let k4 = v(x + h * k3, t_next)?;
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if let Some((lo, hi)) = bounds {
            if !(lo..=hi).contains(&x) {
                log::warn!("Bohmian path from x = {x_start} left [{lo}, {hi}] at t = {t_next}");
                truncated_at = Some(t_next);
                break;
            }
        }
        times.push(t_next);
        positions.push(x);
    }
    Ok(BohmPath {
        times,
        positions,
        truncated_at,
    })
}

/// Which path a Bohmian residual follows and where it is judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BohmSpec {
    pub x_start: f64,
    /// Residuals are collected on `[window_start, t_end]`.
    pub window_start: f64,
    pub t_end: f64,
    pub bounds: Option<(f64, f64)>,
}

/// Residual of `m dv/dt - [2 α m (v_d - v) - ∂V_qu/∂x]` along a Bohmian path.
///
/// `v_d` is `(ħ/m) ∂ₓ S(x, t-τ)` at the path's current position. `dv/dt` is
/// a fourth-order central difference of the field velocity over five path nodes.
pub fn bohm_trajectory_residual(
    field: &PacketField,
    spec: &BohmSpec,
    tolerance: f64,
) -> Result<ResidualReport> {
    let traj = field.trajectory();
    let p = *traj.params();
    check_delay(traj, spec.window_start)?;
    let path = bohm_path(field, spec.x_start, spec.t_end, spec.bounds)?;
    let h = traj.step();
    let speed = |k: usize| field.v_qu(path.positions[k], path.times[k]);
    let mut stats = Stats::default();
    for k in 2..path.times.len().saturating_sub(2) {
        let t = path.times[k];
        // the whole stencil stays inside the window, clear of the kink at its start
        if path.times[k - 2] < spec.window_start - 1e-9 * h {
            continue;
        }
        let s = field.slice(t)?;
        let x = path.positions[k];
        let dv_dt =
            (8.0 * (speed(k + 1)? - speed(k - 1)?) - (speed(k + 2)? - speed(k - 2)?)) / (12.0 * h);
        let force =
            2.0 * p.alpha * p.mass * (s.v_qu_delayed(x).unwrap() - s.v_qu(x)) + s.quantum_force(x);
        let r = p.mass * dv_dt - force;
        stats.push(r, r);
    }
    let mut report = ResidualReport::from_stats(
        "bohm_trajectory",
        format!(
            "path from x = {}; t in [{}, {}], dt = {h}",
            spec.x_start, spec.window_start, spec.t_end
        ),
        tolerance,
        stats,
    );
    if let Some(t) = path.truncated_at {
        report.note(format!(
            "path left the bounds at t = {t}; residual truncated"
        ));
    }
    annotate_history(&mut report, traj);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde::{solve_system, ActionConvention, StepSpec};
    use crate::packet::Corruption;
    use crate::params::{InitialConditions, Prehistory, SimParams};

    fn solve(alpha: f64, n: usize, t_end: f64, ics: InitialConditions) -> Trajectory {
        let p = SimParams::natural(alpha, 0.1).unwrap();
        solve_system(&p, &ics, &StepSpec::new(n, t_end).unwrap()).unwrap()
    }

    fn moving() -> InitialConditions {
        InitialConditions::new(0.0, 1.0, 1.0, 0.0).unwrap()
    }

    const WINDOW: Window = Window::Following {
        half_widths: 6.0,
        n_points: 401,
    };

    #[test]
    fn report_invariants() {
        let mut s = Stats::default();
        for v in [1.0, -3.0, 2.0] {
            s.push(v, v / 2.0);
        }
        let r = ResidualReport::from_stats("x", String::new(), 1.5, s);
        assert_eq!(r.max_abs, 1.5);
        assert_eq!(r.raw_max_abs, 3.0);
        assert!(r.rms <= r.max_abs && r.passed);
        assert!(!r.clone().with_tolerance(1.0).passed);
        let mut s = Stats::default();
        s.push(f64::NAN, f64::NAN);
        s.push(1.0, 1.0);
        assert!(!ResidualReport::from_stats("n", String::new(), 1.0, s).passed);
        assert!(!ResidualReport::from_stats("e", String::new(), 1.0, Stats::default()).passed);
    }

    #[test]
    fn times_must_be_nodes_inside_the_delay_domain() {
        let tr = solve(0.5, 16, 0.5, moving());
        let f = PacketField::new(&tr);
        let w = WINDOW;
        assert!(matches!(
            pde_residual(&f, &w, &[0.05], 1.0),
            Err(Error::DelayDomain { .. })
        ));
        assert!(pde_residual(&f, &w, &[0.2 + 0.001], 1.0).is_err());
        assert!(pde_residual(&f, &w, &[0.5], 1.0).is_err());
        assert!(pde_residual(&f, &w, &[0.2], 1.0).is_ok());
    }

    #[test]
    fn node_time_selection() {
        let tr = solve(0.5, 16, 1.0, moving());
        let ts = node_times(&tr, 0.2, 1.0, 4);
        assert_eq!(ts.first(), Some(&tr.node_time(32)));
        assert_eq!(ts.len(), 33);
        assert!(ts
            .windows(2)
            .all(|w| (w[1] - w[0] - 4.0 * tr.step()).abs() < 1e-15));
    }

    #[test]
    fn pde_residual_small_for_coupled_packet() {
        let tr = solve(0.5, 64, 0.6, moving());
        let f = PacketField::new(&tr);
        let r = pde_residual(&f, &WINDOW, &[0.5], 1e-4).unwrap();
        assert!(r.passed, "{r}");
        assert!(r.max_abs < 1e-6, "{r}");
    }

    #[test]
    fn pde_residual_detects_inflated_width() {
        let tr = solve(0.5, 64, 0.6, moving());
        let bad = Corruption {
            width_scale: 1.01,
            ..Corruption::default()
        };
        let f = PacketField::new(&tr).with_corruption(bad);
        let r = pde_residual(&f, &WINDOW, &[0.5], 1e-4).unwrap();
        assert!(!r.passed, "{r}");
    }

    #[test]
    fn complex_log_matches_phase_form() {
        let ics = moving().with_prehistory(Prehistory::Ramp {
            kappa_q: 0.8,
            kappa_a: 0.4,
        });
        let tr = solve(0.5, 32, 1.0, ics);
        let f = PacketField::new(&tr);
        for t in [0.1, 0.5, 1.0 - tr.step()] {
            let t = tr.node_time((t / tr.step()).round() as usize);
            let s = f.slice(t).unwrap();
            let grid = WINDOW.grid_at(&s).unwrap();
            let xs = grid.points();
            let theta = log_ratio_unwrapped(&f, t, &xs).unwrap();
            for (x, th) in xs.iter().zip(theta) {
                let expect = 2.0 * (s.phase_delayed(*x).unwrap() - s.phase(*x));
                if s.rho(*x) > 1e-8 {
                    assert!((th - expect).abs() < 1e-11, "t = {t}, x = {x}");
                }
            }
        }
        let times = node_times(&tr, 0.2, 0.9, 8);
        let a = pde_residual(&f, &WINDOW, &times, 1.0).unwrap();
        let b = pde_residual_unwrapped(&f, &WINDOW, &times, 1.0).unwrap();
        assert!((a.max_abs - b.max_abs).abs() < 1e-12);
    }

    #[test]
    fn continuity_holds_and_catches_velocity_offset() {
        let tr = solve(0.5, 64, 1.0, moving());
        let f = PacketField::new(&tr);
        let times = node_times(&tr, 0.0 + tr.step(), 0.9, 16);
        let r = continuity_residual(&f, &WINDOW, &times, 1e-4).unwrap();
        assert!(r.passed, "{r}");
        let bad = f.with_corruption(Corruption {
            velocity_offset: 0.1,
            ..Corruption::default()
        });
        let r = continuity_residual(&bad, &WINDOW, &times, 1e-4).unwrap();
        assert!(!r.passed);
        // the offset shows up as 0.1 ∂ρ/∂x, whose weighted peak is known
        assert!(r.raw_max_abs > 0.02 && r.raw_max_abs < 0.03, "{r}");
    }

    #[test]
    fn continuity_at_the_first_slice() {
        let tr = solve(
            0.5,
            256,
            0.2,
            InitialConditions::new(0.3, 0.0, 1.0, 0.0).unwrap(),
        );
        let f = PacketField::new(&tr);
        let r = continuity_residual(&f, &WINDOW, &[tr.node_time(1)], 1e-5).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn continuity_converges_at_second_order_in_space() {
        let tr = solve(0.5, 256, 0.6, moving());
        let f = PacketField::new(&tr);
        let t = [tr.node_time(128)];
        let coarse = Window::Following {
            half_widths: 6.0,
            n_points: 101,
        };
        let fine = Window::Following {
            half_widths: 6.0,
            n_points: 201,
        };
        let rc = continuity_residual(&f, &coarse, &t, 1.0).unwrap().max_abs;
        let rf = continuity_residual(&f, &fine, &t, 1.0).unwrap().max_abs;
        let ratio = rc / rf;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn phase_equation_both_variants() {
        let tr = solve(0.5, 64, 1.0, moving());
        let f = PacketField::new(&tr);
        let times = node_times(&tr, 0.1, 0.95, 8);
        let r = phase_equation_residual(&f, &WINDOW, &times, 1e-10, 1e-4).unwrap();
        assert!(r.analytic.passed, "{}", r.analytic);
        assert!(r.finite_difference.passed, "{}", r.finite_difference);
        let bad = f.with_corruption(Corruption {
            width_scale: 1.01,
            ..Corruption::default()
        });
        let r = phase_equation_residual(&bad, &WINDOW, &times, 1e-10, 1e-4).unwrap();
        assert!(!r.analytic.passed && !r.finite_difference.passed);
    }

    #[test]
    fn free_phase_equation_converges() {
        let ics = InitialConditions::new(0.0, 0.5, 1.0, 0.3).unwrap();
        let fd = |n: usize| {
            let tr = solve(0.0, n, 0.6, ics);
            let f = PacketField::new(&tr);
            let times = [tr.node_time((0.5 / tr.step()).round() as usize)];
            phase_equation_residual(&f, &WINDOW, &times, 1.0, 1.0)
                .unwrap()
                .finite_difference
                .max_abs
        };
        let ratio = fd(32) / fd(64);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn center_line_vanishes() {
        let tr = solve(0.5, 64, 1.0, moving());
        let times = node_and_midpoint_times(&tr, 0.0, 1.0);
        assert_eq!(times.len(), 2 * 640 + 1);
        let r = center_line_residual(&tr, &times, 1e-6).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn reversed_convention_breaks_the_center_line() {
        let p = SimParams::natural(0.5, 0.1).unwrap();
        let ics = InitialConditions::new(0.0, 1.0, 1.0, 0.0).unwrap();
        let spec = StepSpec::new(64, 1.0)
            .unwrap()
            .with_convention(ActionConvention::Reversed);
        let tr = solve_system(&p, &ics, &spec).unwrap();
        let r = center_line_residual(&tr, &node_times(&tr, 0.0, 1.0, 1), 1e-6).unwrap();
        assert!(!r.passed, "{r}");
    }

    #[test]
    fn center_is_a_bohmian_path() {
        let tr = solve(
            0.5,
            64,
            1.0,
            InitialConditions::new(0.2, 1.0, 1.0, 0.0).unwrap(),
        );
        let f = PacketField::new(&tr);
        let path = bohm_path(&f, 0.2, 1.0, None).unwrap();
        for (t, x) in path.times.iter().zip(&path.positions) {
            assert!((x - tr.eval(*t).unwrap().q).abs() < 1e-12);
        }
        let spec = BohmSpec {
            x_start: 0.2,
            window_start: 0.2,
            t_end: 1.0,
            bounds: None,
        };
        let r = bohm_trajectory_residual(&f, &spec, 1e-8).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn free_bohmian_paths_scale_with_width() {
        let tr = solve(
            0.0,
            64,
            1.0,
            InitialConditions::new(0.0, 0.4, 1.0, 0.0).unwrap(),
        );
        let f = PacketField::new(&tr);
        let path = bohm_path(&f, 1.0, 1.0, None).unwrap();
        for (t, x) in path.times.iter().zip(&path.positions) {
            let r = tr.eval(*t).unwrap();
            assert!((x - (r.q + r.a)).abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn paths_leaving_bounds_are_truncated() {
        let tr = solve(
            0.0,
            16,
            1.0,
            InitialConditions::new(0.0, 2.0, 1.0, 0.0).unwrap(),
        );
        let f = PacketField::new(&tr);
        let spec = BohmSpec {
            x_start: 0.0,
            window_start: 0.1,
            t_end: 1.0,
            bounds: Some((-1.0, 1.0)),
        };
        let r = bohm_trajectory_residual(&f, &spec, 1.0).unwrap();
        assert!(r.notes.iter().any(|n| n.contains("left the bounds")));
        assert!(r.samples < 70, "{r}");
    }

    #[test]
    fn summary_counts_failures() {
        let mut s = Stats::default();
        s.push(1.0, 1.0);
        let ok = ResidualReport::from_stats("a", "g".into(), 2.0, s);
        let bad = ok.clone().with_tolerance(0.5);
        let text = summary(&[ok.clone(), bad]);
        assert!(text.contains("1 of 2 checks passed"));
        let mut buf = Vec::new();
        write_csv(&mut buf, &[ok]).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert!(csv.starts_with(ResidualReport::CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }
}
