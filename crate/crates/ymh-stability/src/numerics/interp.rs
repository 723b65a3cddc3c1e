//! Hermite interpolation on uniform grids.
//!
//! Node values and node derivatives are both supplied, so each cell is the
//! unique cubic matching (y, y') at its two ends; the interpolation error is
//! O(h^4) for smooth data. Derivative evaluation of the interpolant itself is
//! O(h^3); callers that need O(h^4) derivatives interpolate the derivative
//! array as its own Hermite series (with its derivative supplied analytically).
//!
//! The quintic variant additionally matches second derivatives at the nodes.
//! When the second derivatives come from an exact relation (an ODE satisfied
//! by the data, say) the value error drops to O(h^6), which matters wherever a
//! downstream difference operator divides interpolated values by the square of
//! a mesh width that may be finer than `h`.

/// Piecewise-cubic Hermite interpolant on `x_i = x0 + i h`.
#[derive(Clone, Debug)]
pub struct Hermite {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    dy: Vec<f64>,
}

impl Hermite {
    /// `y` and `dy` are node values and node derivatives, equal length >= 2.
    #[must_use]
    pub fn new(x0: f64, h: f64, y: Vec<f64>, dy: Vec<f64>) -> Self {
        assert!(y.len() >= 2 && y.len() == dy.len(), "Hermite needs matching node arrays");
        assert!(h > 0.0);
        Self { x0, h, y, dy }
    }

    #[inline]
    #[must_use]
    pub fn x_min(&self) -> f64 {
        self.x0
    }

    #[inline]
    #[must_use]
    pub fn x_max(&self) -> f64 {
        self.x0 + self.h * (self.y.len() - 1) as f64
    }

    /// Interpolated value; clamps to the grid range (callers keep arguments
    /// in range, the clamp only absorbs end-point roundoff).
    #[must_use]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let mut u = (x - self.x0) / self.h;
        if u < 0.0 {
            u = 0.0;
        }
        let max_u = (n - 1) as f64;
        if u > max_u {
            u = max_u;
        }
        let mut cell = u.floor() as usize;
        if cell >= n - 1 {
            cell = n - 2;
        }
        let t = u - cell as f64;
        let (y0, y1) = (self.y[cell], self.y[cell + 1]);
        let (d0, d1) = (self.dy[cell] * self.h, self.dy[cell + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1
    }
}

/// Piecewise-quintic Hermite interpolant on `x_i = x0 + i h`, matching value,
/// first, and second derivative at every node.
#[derive(Clone, Debug)]
pub struct Quintic {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    dy: Vec<f64>,
    d2y: Vec<f64>,
}

impl Quintic {
    /// `y`, `dy`, `d2y` are node values and first/second node derivatives,
    /// equal length >= 2.
    #[must_use]
    pub fn new(x0: f64, h: f64, y: Vec<f64>, dy: Vec<f64>, d2y: Vec<f64>) -> Self {
        assert!(
            y.len() >= 2 && y.len() == dy.len() && y.len() == d2y.len(),
            "Quintic needs matching node arrays"
        );
        assert!(h > 0.0);
        Self { x0, h, y, dy, d2y }
    }

    #[inline]
    #[must_use]
    pub fn x_max(&self) -> f64 {
        self.x0 + self.h * (self.y.len() - 1) as f64
    }

    /// Interpolated value; clamps to the grid range like [`Hermite::eval`].
    #[must_use]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let mut u = (x - self.x0) / self.h;
        if u < 0.0 {
            u = 0.0;
        }
        let max_u = (n - 1) as f64;
        if u > max_u {
            u = max_u;
        }
        let mut cell = u.floor() as usize;
        if cell >= n - 1 {
            cell = n - 2;
        }
        let t = u - cell as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        // Basis matching (f, f', f'') at t = 0 and t = 1.
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let k0 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let k1 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let k2 = 0.5 * (t3 - 2.0 * t4 + t5);
        let hh = self.h;
        h0 * self.y[cell]
            + h1 * self.dy[cell] * hh
            + h2 * self.d2y[cell] * hh * hh
            + k0 * self.y[cell + 1]
            + k1 * self.dy[cell + 1] * hh
            + k2 * self.d2y[cell + 1] * hh * hh
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_reaches_fourth_order_at_midpoints() {
        let f = |x: f64| (1.5 * x).sin() * (-0.3 * x).exp();
        let df = |x: f64| {
            1.5 * (1.5 * x).cos() * (-0.3 * x).exp() - 0.3 * (1.5 * x).sin() * (-0.3 * x).exp()
        };
        let err_at = |n: usize| {
            let h = 4.0 / (n - 1) as f64;
            let y: Vec<f64> = (0..n).map(|i| f(i as f64 * h)).collect();
            let dy: Vec<f64> = (0..n).map(|i| df(i as f64 * h)).collect();
            let s = Hermite::new(0.0, h, y, dy);
            let mut worst = 0.0f64;
            for i in 0..n - 1 {
                let x = (i as f64 + 0.5) * h;
                worst = worst.max((s.eval(x) - f(x)).abs());
            }
            worst
        };
        let e1 = err_at(65);
        let e2 = err_at(129);
        let order = (e1 / e2).log2();
        assert!(
            (order - 4.0).abs() < 0.3,
            "Hermite midpoint order {order:.2} (errors {e1:.3e}, {e2:.3e})"
        );
    }

    #[test]
    fn hermite_is_exact_on_cubics() {
        let y: Vec<f64> = (0..5).map(|i| {
            let x = i as f64;
            x * x * x - 2.0 * x + 1.0
        }).collect();
        let dy: Vec<f64> = (0..5).map(|i| {
            let x = i as f64;
            3.0 * x * x - 2.0
        }).collect();
        let s = Hermite::new(0.0, 1.0, y, dy);
        for k in 0..40 {
            let x = k as f64 * 0.1;
            let exact = x * x * x - 2.0 * x + 1.0;
            assert!((s.eval(x) - exact).abs() < 1e-12, "cubic reproduction at x={x}");
        }
    }

    #[test]
    fn quintic_is_exact_on_quintics() {
        let f = |x: f64| x * x * x * x * x - 3.0 * x * x * x + x;
        let df = |x: f64| 5.0 * x * x * x * x - 9.0 * x * x + 1.0;
        let d2f = |x: f64| 20.0 * x * x * x - 18.0 * x;
        let y: Vec<f64> = (0..5).map(|i| f(i as f64 * 0.5)).collect();
        let dy: Vec<f64> = (0..5).map(|i| df(i as f64 * 0.5)).collect();
        let d2y: Vec<f64> = (0..5).map(|i| d2f(i as f64 * 0.5)).collect();
        let s = Quintic::new(0.0, 0.5, y, dy, d2y);
        for k in 0..40 {
            let x = k as f64 * 0.05;
            assert!(
                (s.eval(x) - f(x)).abs() < 1e-11,
                "quintic reproduction at x={x}, gap {:.3e}",
                (s.eval(x) - f(x)).abs()
            );
        }
    }

    #[test]
    fn quintic_reaches_sixth_order_at_midpoints() {
        let f = |x: f64| (1.5 * x).sin() * (-0.3 * x).exp();
        let df = |x: f64| (-0.3 * x).exp() * (1.5 * (1.5 * x).cos() - 0.3 * (1.5 * x).sin());
        let d2f = |x: f64| {
            (-0.3 * x).exp()
                * ((0.09 - 2.25) * (1.5 * x).sin() - 2.0 * 0.3 * 1.5 * (1.5 * x).cos())
        };
        let err_at = |n: usize| {
            let h = 4.0 / (n - 1) as f64;
            let y: Vec<f64> = (0..n).map(|i| f(i as f64 * h)).collect();
            let dy: Vec<f64> = (0..n).map(|i| df(i as f64 * h)).collect();
            let d2y: Vec<f64> = (0..n).map(|i| d2f(i as f64 * h)).collect();
            let s = Quintic::new(0.0, h, y, dy, d2y);
            let mut worst = 0.0f64;
            for i in 0..n - 1 {
                let x = (i as f64 + 0.5) * h;
                worst = worst.max((s.eval(x) - f(x)).abs());
            }
            worst
        };
        let e1 = err_at(33);
        let e2 = err_at(65);
        let order = (e1 / e2).log2();
        assert!(
            (order - 6.0).abs() < 0.4,
            "quintic midpoint order {order:.2} (errors {e1:.3e}, {e2:.3e})"
        );
    }
}
