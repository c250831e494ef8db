//! Physical constants, parameter sets and initial data.
//!
//! Every downstream formula carries `hbar` and `mass` explicitly, so a
//! parameter set in any consistent unit system can be solved directly.
//! [`dimensionless`] maps a set onto `hbar = mass = 1` units and remembers the
//! unit sizes so results can be mapped back.

use crate::error::{Error, Result};

/// Charge, mass, light speed and radius of a surface-charged sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectronConstants {
    pub charge: f64,
    pub mass: f64,
    pub light_speed: f64,
    pub size: f64,
    /// Planck constant in the same unit system; defaults to 1.
    pub hbar: f64,
}

impl ElectronConstants {
    pub fn new(charge: f64, mass: f64, light_speed: f64, size: f64) -> Self {
        Self {
            charge,
            mass,
            light_speed,
            size,
            hbar: 1.0,
        }
    }

    pub fn with_hbar(mut self, hbar: f64) -> Self {
        self.hbar = hbar;
        self
    }

    /// `e² / (m c²)`.
    pub fn classical_radius(&self) -> f64 {
        self.charge * self.charge / (self.mass * self.light_speed * self.light_speed)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.mass),
            ("c", self.light_speed),
            ("L", self.size),
            ("hbar", self.hbar),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        // A neutral sphere is allowed: it simply decouples (alpha = 0).
        if !(self.charge.is_finite() && self.charge >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "charge must be non-negative, got {}",
                self.charge
            )));
        }
        let radius = self.classical_radius();
        if self.size < radius {
            return Err(Error::Causality {
                size: self.size,
                radius,
            });
        }
        Ok(())
    }
}

/// Where a [`SimParams`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    DerivedFromConstants,
    Direct,
}

/// Coupling `alpha`, delay `tau`, `hbar` and `mass`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub alpha: f64,
    pub tau: f64,
    pub hbar: f64,
    pub mass: f64,
    pub provenance: Provenance,
}

impl SimParams {
    pub fn new(alpha: f64, tau: f64, hbar: f64, mass: f64) -> Result<Self> {
        let p = Self {
            alpha,
            tau,
            hbar,
            mass,
            provenance: Provenance::Direct,
        };
        p.validate()?;
        Ok(p)
    }

    /// `hbar = mass = 1` with the given coupling and delay.
    pub fn natural(alpha: f64, tau: f64) -> Result<Self> {
        Self::new(alpha, tau, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        for (name, value) in [("tau", self.tau), ("hbar", self.hbar), ("mass", self.mass)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Bit pattern used as a memo key.
    pub(crate) fn key(&self) -> [u64; 4] {
        [
            self.alpha.to_bits(),
            self.tau.to_bits(),
            self.hbar.to_bits(),
            self.mass.to_bits(),
        ]
    }
}

/// `alpha = e²/(6 m L² c)` and `tau = 2L/c`, rejecting acausal sizes.
pub fn derive_params(consts: &ElectronConstants) -> Result<SimParams> {
    consts.validate()?;
    let ElectronConstants {
        charge: e,
        mass: m,
        light_speed: c,
        size: l,
        hbar,
    } = *consts;
    Ok(SimParams {
        alpha: e * e / (6.0 * m * l * l * c),
        tau: 2.0 * l / c,
        hbar,
        mass: m,
        provenance: Provenance::DerivedFromConstants,
    })
}

/// Unit sizes of a dimensionless system, expressed in the original units.
///
/// The time unit is kept; mass is measured in units of the particle mass and
/// length in units of `sqrt(hbar * T / m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub mass: f64,
    pub length: f64,
    pub time: f64,
    pub action: f64,
}

impl Scales {
    pub fn identity() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            time: 1.0,
            action: 1.0,
        }
    }

    pub fn velocity(&self) -> f64 {
        self.length / self.time
    }

    /// Maps a dimensionless parameter set back to the original units.
    pub fn restore(&self, p: &SimParams) -> SimParams {
        SimParams {
            alpha: p.alpha / self.time,
            tau: p.tau * self.time,
            hbar: p.hbar * self.action,
            mass: p.mass * self.mass,
            provenance: p.provenance,
        }
    }

    /// Expresses initial data in the dimensionless units.
    pub fn reduce_ics(&self, ics: &InitialConditions) -> InitialConditions {
        let accel = self.length / (self.time * self.time);
        InitialConditions {
            x_o: ics.x_o / self.length,
            v_o: ics.v_o / self.velocity(),
            a_o: ics.a_o / self.length,
            b_o: ics.b_o / self.velocity(),
            prehistory: match ics.prehistory {
                Prehistory::Constant => Prehistory::Constant,
                Prehistory::Ramp { kappa_q, kappa_a } => Prehistory::Ramp {
                    kappa_q: kappa_q / accel,
                    kappa_a: kappa_a / accel,
                },
            },
        }
    }
}

/// A parameter set in `hbar = mass = 1` units together with the unit sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensionless {
    pub params: SimParams,
    pub scales: Scales,
}

impl Dimensionless {
    pub fn restore(&self) -> SimParams {
        self.scales.restore(&self.params)
    }
}

pub fn dimensionless(params: &SimParams) -> Dimensionless {
    let time = 1.0;
    let scales = Scales {
        mass: params.mass,
        length: (params.hbar * time / params.mass).sqrt(),
        time,
        action: params.hbar,
    };
    let reduced = SimParams {
        alpha: params.alpha * scales.time,
        tau: params.tau / scales.time,
        hbar: params.hbar / scales.action,
        mass: params.mass / scales.mass,
        provenance: params.provenance,
    };
    Dimensionless {
        params: reduced,
        scales,
    }
}

/// Values of `q̇` and `ȧ` on `[-tau, 0)`.
///
/// `Constant` is the quiescent past: `q̇ = v_o`, `ȧ = b_o`, `S₀ = S₀(0)`.
/// `Ramp` adds linear slopes to both rates; `S₀` stays constant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Prehistory {
    #[default]
    Constant,
    Ramp {
        kappa_q: f64,
        kappa_a: f64,
    },
}

impl Prehistory {
    pub fn slopes(&self) -> (f64, f64) {
        match *self {
            Prehistory::Constant => (0.0, 0.0),
            Prehistory::Ramp { kappa_q, kappa_a } => (kappa_q, kappa_a),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Prehistory::Constant => "constant pre-history (quiescent past)".to_string(),
            Prehistory::Ramp { kappa_q, kappa_a } => {
                format!("linear-ramp pre-history (kappa_q = {kappa_q}, kappa_a = {kappa_a})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditions {
    pub x_o: f64,
    pub v_o: f64,
    pub a_o: f64,
    pub b_o: f64,
    pub prehistory: Prehistory,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            x_o: 0.0,
            v_o: 0.0,
            a_o: 1.0,
            b_o: 0.0,
            prehistory: Prehistory::Constant,
        }
    }
}

impl InitialConditions {
    pub fn new(x_o: f64, v_o: f64, a_o: f64, b_o: f64) -> Result<Self> {
        let ics = Self {
            x_o,
            v_o,
            a_o,
            b_o,
            prehistory: Prehistory::Constant,
        };
        ics.validate()?;
        Ok(ics)
    }

    pub fn with_prehistory(mut self, prehistory: Prehistory) -> Self {
        self.prehistory = prehistory;
        self
    }

    pub fn with_velocity(mut self, v_o: f64) -> Self {
        self.v_o = v_o;
        self
    }

    pub fn with_center(mut self, x_o: f64) -> Self {
        self.x_o = x_o;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("x_o", self.x_o), ("v_o", self.v_o), ("b_o", self.b_o)] {
            if !value.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite")));
            }
        }
        if !(self.a_o.is_finite() && self.a_o > 0.0) {
            return Err(Error::InvalidParams(format!(
                "a_o must be positive, got {}",
                self.a_o
            )));
        }
        let (kq, ka) = self.prehistory.slopes();
        if !(kq.is_finite() && ka.is_finite()) {
            return Err(Error::InvalidParams(
                "pre-history slopes must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `S₀(0) = m v_o x_o / hbar`.
    pub fn initial_action(&self, params: &SimParams) -> f64 {
        params.mass * self.v_o * self.x_o / params.hbar
    }

    /// `(q, q̇, q̈)` on the pre-history interval (`t <= 0`).
    pub fn center_history(&self, t: f64) -> (f64, f64, f64) {
        let (kq, _) = self.prehistory.slopes();
        (
            self.x_o + self.v_o * t + 0.5 * kq * t * t,
            self.v_o + kq * t,
            kq,
        )
    }

    /// `(a, ȧ, ä)` on the pre-history interval (`t <= 0`).
    pub fn width_history(&self, t: f64) -> (f64, f64, f64) {
        let (_, ka) = self.prehistory.slopes();
        (
            self.a_o + self.b_o * t + 0.5 * ka * t * t,
            self.b_o + ka * t,
            ka,
        )
    }

    pub(crate) fn key(&self) -> [u64; 6] {
        let (kq, ka) = self.prehistory.slopes();
        [
            self.x_o.to_bits(),
            self.v_o.to_bits(),
            self.a_o.to_bits(),
            self.b_o.to_bits(),
            kq.to_bits(),
            ka.to_bits(),
        ]
    }
}
