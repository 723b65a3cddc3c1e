//! Quadrature rules and compensated summation.
//!
//! All rules accumulate in index order with Neumaier compensation so results
//! are reproducible bit for bit across runs of the same binary.

/// Neumaier-compensated sum in slice order.
#[must_use]
pub fn neumaier_sum(values: &[f64]) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for &v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

/// Composite trapezoid rule for a periodic integrand sampled once per node
/// (the closing node is not repeated). Spectrally accurate for smooth
/// periodic integrands.
#[must_use]
pub fn trapezoid_periodic(values: &[f64], dx: f64) -> f64 {
    neumaier_sum(values) * dx
}

/// Composite Simpson rule on a uniform grid; `values.len()` must be odd.
#[must_use]
pub fn simpson_uniform(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson rule needs an odd node count, got {n}");
    let mut terms = Vec::with_capacity(n);
    terms.push(values[0]);
    for (i, &v) in values.iter().enumerate().take(n - 1).skip(1) {
        terms.push(if i % 2 == 1 { 4.0 * v } else { 2.0 * v });
    }
    terms.push(values[n - 1]);
    neumaier_sum(&terms) * dx / 3.0
}

/// Midpoint rule on half-offset radial nodes `r_k = (k + 1/2) h`, including
/// the polar area factor `r_k`: integrates `f(r) r dr` over `[0, n h]`.
#[must_use]
pub fn midpoint_radial(values: &[f64], h: f64) -> f64 {
    let terms: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(k, &v)| v * (k as f64 + 0.5) * h)
        .collect();
    neumaier_sum(&terms) * h
}
