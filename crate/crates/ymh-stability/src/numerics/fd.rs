//! Pointwise finite-difference stencils for functions given as closures.
//!
//! Used wherever a derivative of a closed-form field is needed at isolated
//! points (residual scans, metric oracles). Grid operators assemble their own
//! stencils; these helpers are for off-grid work with caller-chosen steps.

/// Centered 2nd-order first derivative.
pub fn d1_c2<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Centered 2nd-order second derivative.
pub fn d2_c2<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Centered 4th-order first derivative (5-point).
pub fn d1_c4<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// Centered 4th-order second derivative (5-point).
pub fn d2_c4<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h))
        / (12.0 * h * h)
}

/// Richardson-extrapolated first derivative from steps `h` and `h/2` of the
/// centered 2nd-order stencil: error O(h^4).
pub fn d1_richardson<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let coarse = (f(x + h) - f(x - h)) / (2.0 * h);
    let fine = (f(x + 0.5 * h) - f(x - 0.5 * h)) / h;
    (4.0 * fine - coarse) / 3.0
}

/// 4th-order first-derivative stencil applied to a slice at interior index
/// `i` (requires `2 <= i <= n-3`).
#[must_use]
pub fn slice_d1_c4(f: &[f64], i: usize, h: f64) -> f64 {
    (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h)
}

/// 4th-order second-derivative stencil applied to a slice at interior index
/// `i` (requires `2 <= i <= n-3`).
#[must_use]
pub fn slice_d2_c4(f: &[f64], i: usize, h: f64) -> f64 {
    (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]) / (12.0 * h * h)
}

/// Classical trigonometric differentiation matrices on an even uniform
/// periodic grid over a period of `2*pi`; exact on harmonics of degree below
/// `n/2`. Returned row-major, `d[l * n + m]` mapping samples at node `m` to
/// the derivative at node `l`.
#[must_use]
pub fn trig_diff_matrices(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2 && n % 2 == 0, "periodic differentiation needs an even node count, got {n}");
    let mut d1 = vec![0.0; n * n];
    let mut d2 = vec![0.0; n * n];
    let nf = n as f64;
    for l in 0..n {
        for m in 0..n {
            if l == m {
                d2[l * n + m] = -(nf * nf + 2.0) / 12.0;
            } else {
                let diff = l as f64 - m as f64;
                let arg = diff * std::f64::consts::PI / nf;
                let sign = if (l + n - m) % 2 == 0 { 1.0 } else { -1.0 };
                d1[l * n + m] = 0.5 * sign / arg.tan();
                d2[l * n + m] = -0.5 * sign / (arg.sin() * arg.sin());
            }
        }
    }
    (d1, d2)
}
