//! Closed-form packet and its Bohmian fields.
//!
//! With `ξ = x - q(t)` the packet is
//!
//! ```text
//! ψ(x,t) = [2π a²]^(-1/4) exp(-ξ²/(4a²)) exp(i S(x,t))
//! S(x,t) = S₀(t) + (m q̇/ħ) ξ + (m/2ħ)(ȧ/a) ξ²
//! ```
//!
//! The delayed phase is the second-order expansion of `S(·, t-τ)` about the
//! current center, `S₀(t-τ) + (m q̇(t-τ)/ħ) ξ + (m/2ħ)(ȧ(t-τ)/a(t)) ξ²`, and
//! the delayed wave function pairs it with the current amplitude.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;

use crate::dde::{Record, Trajectory};
use crate::error::{Error, Result};
use crate::output::num;

/// Uniform grid `x_min..=x_max` with `n_points` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::InvalidParams(format!(
                "grid needs >= 3 points, got {n_points}"
            )));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::InvalidParams(format!(
                "bad grid bounds [{x_min}, {x_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Grid centered on `center` with the given half-width.
    pub fn centered(center: f64, half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, n_points)
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Trapezoid weights.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_points {
            0.5 * self.spacing()
        } else {
            self.spacing()
        }
    }
}

/// Deliberate perturbations for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    /// Multiplies `a(t)` and its rates.
    pub width_scale: f64,
    /// Added to the quantum velocity field.
    pub velocity_offset: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            width_scale: 1.0,
            velocity_offset: 0.0,
        }
    }
}

impl Corruption {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }

    fn apply(&self, mut r: Record) -> Record {
        r.a *= self.width_scale;
        r.adot *= self.width_scale;
        r
    }
}

/// Field evaluator over a solved trajectory.
#[derive(Debug, Clone, Copy)]
pub struct PacketField<'a> {
    traj: &'a Trajectory,
    corruption: Corruption,
}

impl<'a> PacketField<'a> {
    pub fn new(traj: &'a Trajectory) -> Self {
        Self {
            traj,
            corruption: Corruption::default(),
        }
    }

    pub fn with_corruption(mut self, corruption: Corruption) -> Self {
        self.corruption = corruption;
        self
    }

    pub fn trajectory(&self) -> &'a Trajectory {
        self.traj
    }

    pub fn corruption(&self) -> Corruption {
        self.corruption
    }

    /// `I(t)`, the accumulated action integral (`I(0) = 0`).
    pub fn action_integral(&self, t: f64) -> Result<f64> {
        Ok(self.traj.eval(t)?.action_integral)
    }

    /// Everything needed to evaluate the fields at time `t`.
    ///
    /// Delayed quantities are attached when `t - tau` lies in the domain.
    pub fn slice(&self, t: f64) -> Result<PacketSlice> {
        let (now, rate) = self.traj.eval_with_rates(t)?;
        let tau = self.traj.params().tau;
        let delayed = if self.traj.contains(t - tau) {
            Some(self.corruption.apply(self.traj.eval(t - tau)?))
        } else {
            None
        };
        let p = self.traj.params();
        Ok(PacketSlice {
            t,
            alpha: p.alpha,
            hbar: p.hbar,
            mass: p.mass,
            initial_action: self.traj.ics().initial_action(p),
            now: self.corruption.apply(now),
            rate: self.corruption.apply(rate),
            delayed,
            velocity_offset: self.corruption.velocity_offset,
        })
    }

    fn delayed_slice(&self, t: f64) -> Result<PacketSlice> {
        let s = self.slice(t)?;
        if s.delayed.is_none() {
            return Err(Error::DelayDomain {
                t,
                delayed: t - self.traj.params().tau,
            });
        }
        Ok(s)
    }

    pub fn rho(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.slice(t)?.rho(x))
    }

    pub fn phase(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.slice(t)?.phase(x))
    }

    /// Delayed phase `S(x, t - tau)`; needs `t >= 0`.
    pub fn phase_delayed(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.delayed_slice(t)?.phase_delayed(x).unwrap())
    }

    pub fn psi(&self, x: f64, t: f64) -> Result<Complex64> {
        Ok(self.slice(t)?.psi(x))
    }

    pub fn psi_delayed(&self, x: f64, t: f64) -> Result<Complex64> {
        Ok(self.delayed_slice(t)?.psi_delayed(x).unwrap())
    }

    pub fn v_qu(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.slice(t)?.v_qu(x))
    }

    pub fn v_qu_delayed(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.delayed_slice(t)?.v_qu_delayed(x).unwrap())
    }

    pub fn quantum_potential(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.slice(t)?.quantum_potential(x))
    }

    pub fn quantum_force(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.slice(t)?.quantum_force(x))
    }

    pub fn extended_potential(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.delayed_slice(t)?.extended_potential(x).unwrap())
    }

    /// Writes `x,t,rho,S,re_psi,im_psi,v_qu,V_qu,V_ee` rows, time-major.
    pub fn write_csv<W: Write>(&self, mut w: W, grid: &SpaceGrid, times: &[f64]) -> io::Result<()> {
        writeln!(w, "x,t,rho,S,re_psi,im_psi,v_qu,V_qu,V_ee")?;
        for &t in times {
            let s = self.slice(t).map_err(io::Error::other)?;
            for x in grid.points() {
                let psi = s.psi(x);
                let v_ee = s.extended_potential(x).unwrap_or(f64::NAN);
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    num(x),
                    num(t),
                    num(s.rho(x)),
                    num(s.phase(x)),
                    num(psi.re),
                    num(psi.im),
                    num(s.v_qu(x)),
                    num(s.quantum_potential(x)),
                    num(v_ee)
                )?;
            }
        }
        Ok(())
    }
}

/// Field values at a fixed time.
#[derive(Debug, Clone, Copy)]
pub struct PacketSlice {
    pub t: f64,
    alpha: f64,
    hbar: f64,
    mass: f64,
    initial_action: f64,
    now: Record,
    rate: Record,
    delayed: Option<Record>,
    velocity_offset: f64,
}

impl PacketSlice {
    pub fn record(&self) -> &Record {
        &self.now
    }

    pub fn rates(&self) -> &Record {
        &self.rate
    }

    pub fn delayed_record(&self) -> Option<&Record> {
        self.delayed.as_ref()
    }

    fn xi(&self, x: f64) -> f64 {
        x - self.now.q
    }

    /// `φ = sqrt(rho)`.
    pub fn amplitude(&self, x: f64) -> f64 {
        let a = self.now.a;
        let xi = self.xi(x);
        (2.0 * PI * a * a).powf(-0.25) * (-xi * xi / (4.0 * a * a)).exp()
    }

    pub fn rho(&self, x: f64) -> f64 {
        let a = self.now.a;
        let xi = self.xi(x);
        (2.0 * PI * a * a).powf(-0.5) * (-xi * xi / (2.0 * a * a)).exp()
    }

    pub fn phase(&self, x: f64) -> f64 {
        let Record {
            qdot,
            a,
            adot,
            action,
            ..
        } = self.now;
        let xi = self.xi(x);
        let k = self.mass / self.hbar;
        action + k * qdot * xi + 0.5 * k * adot / a * xi * xi
    }

    pub fn phase_delayed(&self, x: f64) -> Option<f64> {
        let d = self.delayed?;
        let xi = self.xi(x);
        let k = self.mass / self.hbar;
        Some(d.action + k * d.qdot * xi + 0.5 * k * d.adot / self.now.a * xi * xi)
    }

    /// `∂S/∂t` from differentiating the phase polynomial in time.
    pub fn phase_rate(&self, x: f64) -> f64 {
        let Record { qdot, a, adot, .. } = self.now;
        let r = self.rate;
        let xi = self.xi(x);
        let k = self.mass / self.hbar;
        r.action + k * r.qdot * xi - k * qdot * qdot
            + 0.5 * k * (r.adot / a - adot * adot / (a * a)) * xi * xi
            - k * qdot * adot / a * xi
    }

    /// `ψ` with its global phase taken from the accumulated action integral.
    pub fn psi(&self, x: f64) -> Complex64 {
        let Record {
            qdot,
            a,
            adot,
            action_integral,
            ..
        } = self.now;
        let xi = self.xi(x);
        let k = self.mass / self.hbar;
        let phase = self.initial_action
            + action_integral / self.hbar
            + k * qdot * xi
            + 0.5 * k * adot / a * xi * xi;
        Complex64::from_polar(self.amplitude(x), phase)
    }

    /// `φ(x,t) exp(i S(x, t - tau))`.
    pub fn psi_delayed(&self, x: f64) -> Option<Complex64> {
        Some(Complex64::from_polar(
            self.amplitude(x),
            self.phase_delayed(x)?,
        ))
    }

    pub fn v_qu(&self, x: f64) -> f64 {
        self.now.adot / self.now.a * self.xi(x) + self.now.qdot + self.velocity_offset
    }

    /// `(ħ/m) ∂ₓ S(x, t - tau)`.
    pub fn v_qu_delayed(&self, x: f64) -> Option<f64> {
        let d = self.delayed?;
        Some(d.adot / self.now.a * self.xi(x) + d.qdot)
    }

    pub fn quantum_potential(&self, x: f64) -> f64 {
        let a2 = self.now.a * self.now.a;
        let xi = self.xi(x);
        let hb2 = self.hbar * self.hbar;
        hb2 / (4.0 * self.mass * a2) - hb2 * xi * xi / (8.0 * self.mass * a2 * a2)
    }

    /// `-∂ₓ V_qu`.
    pub fn quantum_force(&self, x: f64) -> f64 {
        let a2 = self.now.a * self.now.a;
        self.hbar * self.hbar * self.xi(x) / (4.0 * self.mass * a2 * a2)
    }

    /// `2 ħ alpha [S(x,t) - S(x,t-tau)]`.
    pub fn extended_potential(&self, x: f64) -> Option<f64> {
        Some(2.0 * self.hbar * self.alpha * (self.phase(x) - self.phase_delayed(x)?))
    }
}

/// Unwraps a sequence of angles outward from `anchor`, leaving it untouched.
pub fn unwrap_phase(angles: &[f64], anchor: usize) -> Vec<f64> {
    let mut out = angles.to_vec();
    let fix = |prev: f64, raw: f64| {
        let mut d = raw - prev;
        d -= 2.0 * PI * (d / (2.0 * PI)).round();
        prev + d
    };
    for i in anchor + 1..angles.len() {
        out[i] = fix(out[i - 1], angles[i]);
    }
    for i in (0..anchor).rev() {
        out[i] = fix(out[i + 1], angles[i]);
    }
    out
}
