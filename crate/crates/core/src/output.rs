//! Number formatting shared by the CSV writers.

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::num;

    #[test]
    fn round_trips() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            0.0,
            1.118033988749895,
        ] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
