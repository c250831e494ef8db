//! Method of steps with classical RK4.
//!
//! The step `h = tau / N` divides the lag, so every delayed stage time is
//! either a stored node or the midpoint of an interval that is already final.
//! Midpoints come from the cubic Hermite interpolant of the stored history.

use super::hermite;
use crate::error::{Error, Result};

/// A system `y'(t) = F(t, y(t), y(t - tau))` with a prescribed past.
pub trait DelaySystem<const D: usize> {
    fn delay(&self) -> f64;

    /// State and its derivative for `t <= 0`.
    fn history(&self, t: f64) -> ([f64; D], [f64; D]);

    fn rhs(&self, t: f64, y: &[f64; D], delayed: &[f64; D]) -> [f64; D];

    /// Rejects states the system cannot continue from.
    fn admissible(&self, _t: f64, _y: &[f64; D]) -> Result<()> {
        Ok(())
    }
}

/// Nodes `t_k = k h` for `k = 0..n` with state and slope at each node.
#[derive(Debug, Clone)]
pub struct DenseSolution<const D: usize> {
    step: f64,
    nodes: Vec<[f64; D]>,
    slopes: Vec<[f64; D]>,
}

impl<const D: usize> DenseSolution<D> {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.nodes.len() - 1)
    }

    pub fn node(&self, k: usize) -> &[f64; D] {
        &self.nodes[k]
    }

    pub fn slope_at(&self, k: usize) -> &[f64; D] {
        &self.slopes[k]
    }

    /// Index of the node sitting exactly at `t`, if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let j = (t / self.step).round();
        if j < 0.0 || j as usize >= self.nodes.len() {
            return None;
        }
        let j = j as usize;
        (self.time(j) == t).then_some(j)
    }

    /// Interpolated state and slope on `[0, t_end]`; `None` outside.
    pub fn eval(&self, t: f64) -> Option<([f64; D], [f64; D])> {
        let t_end = self.t_end();
        let slack = 1e-12 * t_end.max(1.0);
        if !(t >= 0.0 && t <= t_end + slack) {
            return None;
        }
        if let Some(j) = self.node_index(t) {
            return Some((self.nodes[j], self.slopes[j]));
        }
        let t = t.min(t_end);
        let k = ((t / self.step).floor() as usize).min(self.nodes.len() - 2);
        let s = (t - self.time(k)) / self.step;
        Some(interpolate(
            &self.nodes[k],
            &self.slopes[k],
            &self.nodes[k + 1],
            &self.slopes[k + 1],
            self.step,
            s,
        ))
    }
}

fn interpolate<const D: usize>(
    y0: &[f64; D],
    f0: &[f64; D],
    y1: &[f64; D],
    f1: &[f64; D],
    h: f64,
    s: f64,
) -> ([f64; D], [f64; D]) {
    let mut y = [0.0; D];
    let mut f = [0.0; D];
    for i in 0..D {
        y[i] = hermite::value(y0[i], f0[i], y1[i], f1[i], h, s);
        f[i] = hermite::slope(y0[i], f0[i], y1[i], f1[i], h, s);
    }
    (y, f)
}

fn axpy<const D: usize>(y: &[f64; D], h: f64, k: &[f64; D]) -> [f64; D] {
    let mut out = *y;
    for i in 0..D {
        out[i] += h * k[i];
    }
    out
}

/// Integrates `n_steps` steps of size `tau / steps_per_delay` from `t = 0`.
pub fn integrate<S, const D: usize>(
    sys: &S,
    steps_per_delay: usize,
    n_steps: usize,
) -> Result<DenseSolution<D>>
where
    S: DelaySystem<D>,
{
    if steps_per_delay == 0 {
        return Err(Error::InvalidParams(
            "steps_per_delay must be positive".into(),
        ));
    }
    let lag = steps_per_delay as isize;
    let h = sys.delay() / steps_per_delay as f64;

    let mut nodes: Vec<[f64; D]> = Vec::with_capacity(n_steps + 1);
    let mut slopes: Vec<[f64; D]> = Vec::with_capacity(n_steps + 1);

    // Delayed state at node index `j` (possibly negative).
    let at_node = |nodes: &[[f64; D]], j: isize| -> [f64; D] {
        if j <= 0 {
            sys.history(j as f64 * h).0
        } else {
            nodes[j as usize]
        }
    };
    // Delayed state at the midpoint of `[t_j, t_{j+1}]`.
    let at_mid = |nodes: &[[f64; D]], slopes: &[[f64; D]], j: isize| -> [f64; D] {
        if j < 0 {
            sys.history((j as f64 + 0.5) * h).0
        } else {
            let j = j as usize;
            interpolate(&nodes[j], &slopes[j], &nodes[j + 1], &slopes[j + 1], h, 0.5).0
        }
    };

    let (y0, _) = sys.history(0.0);
    sys.admissible(0.0, &y0)?;
    let f0 = sys.rhs(0.0, &y0, &at_node(&nodes, -lag));
    nodes.push(y0);
    slopes.push(f0);

    for n in 0..n_steps {
        let t = n as f64 * h;
        let j = n as isize - lag;
        let y = nodes[n];
        let k1 = slopes[n];
        let mid = at_mid(&nodes, &slopes, j);
        let y2 = axpy(&y, 0.5 * h, &k1);
        sys.admissible(t + 0.5 * h, &y2)?;
        let k2 = sys.rhs(t + 0.5 * h, &y2, &mid);
        let y3 = axpy(&y, 0.5 * h, &k2);
        sys.admissible(t + 0.5 * h, &y3)?;
        let k3 = sys.rhs(t + 0.5 * h, &y3, &mid);
        let y4 = axpy(&y, h, &k3);
        sys.admissible(t + h, &y4)?;
        let end = at_node(&nodes, j + 1);
        let k4 = sys.rhs(t + h, &y4, &end);

        let mut next = y;
        for i in 0..D {
            next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = (n + 1) as f64 * h;
        sys.admissible(t_next, &next)?;
        let f_next = sys.rhs(t_next, &next, &at_node(&nodes, j + 1));
        nodes.push(next);
        slopes.push(f_next);
    }

    Ok(DenseSolution {
        step: h,
        nodes,
        slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y' = -y(t - 1), y = 1 on [-1, 0]. Exact: 1 - t on [0, 1],
    /// 1 - t + (t - 1)^2 / 2 on [1, 2].
    struct Hutchinson;

    impl DelaySystem<1> for Hutchinson {
        fn delay(&self) -> f64 {
            1.0
        }
        fn history(&self, _t: f64) -> ([f64; 1], [f64; 1]) {
            ([1.0], [0.0])
        }
        fn rhs(&self, _t: f64, _y: &[f64; 1], delayed: &[f64; 1]) -> [f64; 1] {
            [-delayed[0]]
        }
    }

    #[test]
    fn piecewise_polynomial_solution() {
        let sol = integrate(&Hutchinson, 8, 24).unwrap();
        let exact = |t: f64| {
            if t <= 1.0 {
                1.0 - t
            } else if t <= 2.0 {
                1.0 - t + (t - 1.0).powi(2) / 2.0
            } else {
                1.0 - t + (t - 1.0).powi(2) / 2.0 - (t - 2.0).powi(3) / 6.0
            }
        };
        // low-degree polynomial pieces are integrated exactly by RK4
        for k in 0..sol.len() {
            let t = sol.time(k);
            assert!((sol.node(k)[0] - exact(t)).abs() < 1e-13, "t = {t}");
        }
        let (y, f) = sol.eval(1.3).unwrap();
        assert!((y[0] - exact(1.3)).abs() < 1e-13);
        assert!((f[0] - (-1.0 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn nodes_are_bit_exact() {
        let sol = integrate(&Hutchinson, 8, 16).unwrap();
        for k in 0..sol.len() {
            let (y, f) = sol.eval(sol.time(k)).unwrap();
            assert_eq!(y, *sol.node(k));
            assert_eq!(f, *sol.slope_at(k));
        }
        assert!(sol.eval(-0.1).is_none());
        assert!(sol.eval(2.5).is_none());
    }
}
