//! General banded matrices with LU factorization and partial pivoting.
//!
//! Storage follows the LAPACK band convention: column `j` lives in a slab of
//! height `2*kl + ku + 1`, with entry `(i, j)` at band row `kl + ku + i - j`.
//! The extra `kl` rows on top hold fill-in produced by row pivoting, so the
//! factored `U` can have bandwidth `kl + ku`.

use crate::{Error, Result};

/// Banded matrix with `kl` subdiagonals and `ku` superdiagonals.
#[derive(Clone, Debug)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major band slabs, `ldab = 2*kl + ku + 1` per column.
    ab: Vec<f64>,
}

/// LU factorization of a [`Banded`] matrix, consuming the band storage.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl Banded {
    #[must_use]
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ab: vec![0.0; ldab * n] }
    }

    #[inline]
    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    #[must_use]
    pub fn n(&self) -> usize {
        self.n
    }

    /// True if `(i, j)` lies inside the declared band.
    #[inline]
    #[must_use]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    #[inline]
    #[must_use]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[j * self.ldab() + (self.kl + self.ku + i - j)]
        } else {
            0.0
        }
    }

    /// Sets `(i, j)`; panics if outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band kl={} ku={} n={}",
            self.kl,
            self.ku,
            self.n
        );
        let ldab = self.ldab();
        self.ab[j * ldab + (self.kl + self.ku + i - j)] = v;
    }

    /// Adds `v` to `(i, j)`; panics if outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let ldab = self.ldab();
        self.ab[j * ldab + (self.kl + self.ku + i - j)] += v;
    }

    /// Dense `y = A x` for tests and residual checks.
    #[must_use]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            for i in lo..=hi {
                y[i] += self.get(i, j) * xj;
            }
        }
        y
    }

    /// LU factorization with partial pivoting (unblocked dgbtf2 scheme).
    pub fn lu(mut self) -> Result<BandedLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ldab = self.ldab();
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // Pivot search down column j.
            let mut jp = 0usize;
            let mut amax = 0.0f64;
            for t in 0..=km {
                let v = self.ab[j * ldab + kl + ku + t].abs();
                if v > amax {
                    amax = v;
                    jp = t;
                }
            }
            ipiv[j] = j + jp;
            if amax == 0.0 {
                return Err(Error::Linalg(format!("banded LU: zero pivot at column {j}")));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                // Swap rows j and j+jp over columns j..=ju.
                for col in j..=ju {
                    let a = col * ldab + (kl + ku + j - col);
                    let b = col * ldab + (kl + ku + j + jp - col);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[j * ldab + kl + ku];
            if km > 0 {
                for t in 1..=km {
                    self.ab[j * ldab + kl + ku + t] /= piv;
                }
                // Rank-1 update of the trailing band.
                for col in (j + 1)..=ju {
                    let ujc = self.ab[col * ldab + (kl + ku + j - col)];
                    if ujc != 0.0 {
                        for t in 1..=km {
                            self.ab[col * ldab + (kl + ku + j + t - col)] -=
                                self.ab[j * ldab + kl + ku + t] * ujc;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku, ab: self.ab, ipiv })
    }
}

impl BandedLu {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ldab = 2 * kl + ku + 1;
        // Forward: apply L (unit lower, multipliers stored below diagonal).
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for t in 1..=km {
                    b[j + t] -= self.ab[j * ldab + kl + ku + t] * bj;
                }
            }
        }
        // Back-substitute with U, bandwidth kl + ku.
        let kv = kl + ku;
        for j in (0..n).rev() {
            let lo = j.saturating_sub(kv);
            let bj = b[j] / self.ab[j * ldab + kl + ku];
            b[j] = bj;
            if bj != 0.0 {
                for i in lo..j {
                    b[i] -= self.ab[j * ldab + (kl + ku + i - j)] * bj;
                }
            }
        }
    }

    /// Convenience wrapper returning the solution.
    #[must_use]
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, rng: &mut ChaCha20Rng) -> Banded {
        let mut a = Banded::zeros(n, kl, ku);
        for j in 0..n {
            for i in j.saturating_sub(ku)..=(j + kl).min(n - 1) {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
            // Keep the matrix comfortably nonsingular.
            a.add(j, j, 4.0);
        }
        a
    }

    #[test]
    fn banded_lu_solves_random_systems() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1usize, 0usize, 0usize), (5, 1, 1), (40, 3, 2), (83, 5, 7)] {
            let a = random_banded(n, kl, ku, &mut rng);
            let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = a.matvec(&x_true);
            let lu = a.clone().lu().expect("factorization");
            let x = lu.solve(&b);
            let err = x
                .iter()
                .zip(&x_true)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-10, "n={n} kl={kl} ku={ku}: max solve error {err:.3e}");
        }
    }

    #[test]
    fn banded_lu_matches_dense_lu_on_tough_pivoting_case() {
        // Diagonal dominance deliberately broken so pivoting must act.
        let n = 30;
        let mut a = Banded::zeros(n, 2, 2);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for j in 0..n {
            for i in j.saturating_sub(2)..=(j + 2).min(n - 1) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a.set(i, j, if i == j { v * 1e-6 } else { v });
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let b = a.matvec(&x_true);
        let lu = a.clone().lu().expect("factorization");
        let x = lu.solve(&b);
        let resid = a
            .matvec(&x)
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0f64, f64::max);
        assert!(resid < 1e-9, "residual after pivoted solve {resid:.3e}");
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = Banded::zeros(4, 1, 1);
        assert!(a.lu().is_err(), "singular matrix must not factor");
    }
}
