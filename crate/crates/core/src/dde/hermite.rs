//! Cubic Hermite interpolation on one interval.

/// Value of the cubic through `(0, y0, f0)` and `(h, y1, f1)` at `s * h`.
#[inline]
pub fn value(y0: f64, f0: f64, y1: f64, f1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
}

/// Time derivative of [`value`].
#[inline]
pub fn slope(y0: f64, f0: f64, y1: f64, f1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let d00 = 6.0 * s2 - 6.0 * s;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d01 = -6.0 * s2 + 6.0 * s;
    let d11 = 3.0 * s2 - 2.0 * s;
    (d00 * y0 + d01 * y1) / h + d10 * f0 + d11 * f1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics() {
        let p = |t: f64| 0.3 - 1.2 * t + 0.7 * t * t - 2.1 * t * t * t;
        let dp = |t: f64| -1.2 + 1.4 * t - 6.3 * t * t;
        let (t0, h) = (0.4, 0.25);
        for &s in &[0.0, 0.1, 0.5, 0.77, 1.0] {
            let t = t0 + s * h;
            let v = value(p(t0), dp(t0), p(t0 + h), dp(t0 + h), h, s);
            let d = slope(p(t0), dp(t0), p(t0 + h), dp(t0 + h), h, s);
            assert!((v - p(t)).abs() < 1e-14);
            assert!((d - dp(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let (y0, f0, y1, f1) = (0.123456789, 3.3, -7.25, 1e3);
        assert_eq!(value(y0, f0, y1, f1, 0.01, 0.0), y0);
        assert_eq!(value(y0, f0, y1, f1, 0.01, 1.0), y1);
    }
}
