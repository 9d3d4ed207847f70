//! Fixed-size 2×2 linear algebra used by the transfer-matrix code.

use crate::num::{csinc, csinhc};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type M2 = [[f64; 2]; 2];
pub type CM2 = [[Complex64; 2]; 2];

pub const J: M2 = [[0.0, -1.0], [1.0, 0.0]];
pub const I2: M2 = [[1.0, 0.0], [0.0, 1.0]];

/// Real symmetric 2×2 matrix `[[h1, h], [h, h2]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Sym2 {
    pub h1: f64,
    pub h2: f64,
    pub h: f64,
}

impl Sym2 {
    pub const fn new(h1: f64, h2: f64, h: f64) -> Self {
        Sym2 { h1, h2, h }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Sym2 { h1: a, h2: b, h: 0.0 }
    }

    pub fn det(&self) -> f64 {
        self.h1 * self.h2 - self.h * self.h
    }

    pub fn trace(&self) -> f64 {
        self.h1 + self.h2
    }

    pub fn scale(&self, s: f64) -> Self {
        Sym2::new(self.h1 * s, self.h2 * s, self.h * s)
    }

    pub fn add(&self, o: &Sym2) -> Self {
        Sym2::new(self.h1 + o.h1, self.h2 + o.h2, self.h + o.h)
    }

    pub fn to_m2(&self) -> M2 {
        [[self.h1, self.h], [self.h, self.h2]]
    }

    /// `Nᵀ S N`.
    pub fn congruence(&self, n: &M2) -> Sym2 {
        let m = mul(&transpose(n), &mul(&self.to_m2(), n));
        Sym2::new(m[0][0], m[1][1], 0.5 * (m[0][1] + m[1][0]))
    }
}

pub fn mul(a: &M2, b: &M2) -> M2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

pub fn det(a: &M2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Inverse of a unimodular matrix (the adjugate).
pub fn inv_unimodular(a: &M2) -> M2 {
    [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]]
}

pub fn cmul(a: &CM2, b: &CM2) -> CM2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn cdet(a: &CM2) -> Complex64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn to_complex(a: &M2) -> CM2 {
    let c = |x: f64| Complex64::new(x, 0.0);
    [[c(a[0][0]), c(a[0][1])], [c(a[1][0]), c(a[1][1])]]
}

pub fn cidentity() -> CM2 {
    to_complex(&I2)
}

pub fn cmax_abs(a: &CM2) -> f64 {
    a.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max)
}

pub fn cscale(a: &CM2, s: f64) -> CM2 {
    let mut out = *a;
    out.iter_mut().flatten().for_each(|x| *x *= s);
    out
}

/// `exp(A)` for a traceless complex 2×2 matrix: `cosh(s) I + sinh(s)/s · A` with
/// `s² = −det A`. Both coefficients are even in `s`; when the eigenvalues collide
/// (`s → 0`) the series branch gives `I + A` exactly.
pub fn expm_traceless(a: &CM2) -> CM2 {
    let s2 = -cdet(a);
    let s = s2.sqrt();
    let c = (s * Complex64::i()).cos();
    let sh = csinhc(s);
    [[c + sh * a[0][0], sh * a[0][1]], [sh * a[1][0], c + sh * a[1][1]]]
}

/// Same as [`expm_traceless`] for the real matrix `A·t` where `A² = κ² I`.
pub fn expm_real_traceless(a: &M2, t: f64) -> M2 {
    let k2 = -det(a);
    let s2 = k2 * t * t;
    let (c, sh) = if s2 >= 0.0 {
        let s = s2.sqrt();
        (s.cosh(), crate::num::sinhc(s))
    } else {
        let s = (-s2).sqrt();
        (s.cos(), csinc(Complex64::new(s, 0.0)).re)
    };
    [[c + sh * t * a[0][0], sh * t * a[0][1]], [sh * t * a[1][0], c + sh * t * a[1][1]]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor(a: &CM2) -> CM2 {
        let mut out = cidentity();
        let mut term = cidentity();
        for k in 1..60 {
            term = cscale(&cmul(&term, a), 1.0 / k as f64);
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += term[i][j];
                }
            }
        }
        out
    }

    #[test]
    fn closed_form_matches_taylor() {
        let a: CM2 = [
            [Complex64::new(0.3, -0.2), Complex64::new(1.1, 0.4)],
            [Complex64::new(-0.7, 0.1), Complex64::new(-0.3, 0.2)],
        ];
        let e = expm_traceless(&a);
        let t = taylor(&a);
        for i in 0..2 {
            for j in 0..2 {
                assert!((e[i][j] - t[i][j]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn nilpotent_exponential_is_i_plus_a() {
        let a: CM2 = [
            [Complex64::new(0.0, 0.0), Complex64::new(2.0, 1.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
        ];
        let e = expm_traceless(&a);
        assert!((e[0][1] - a[0][1]).norm() < 1e-15);
        assert!((e[0][0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }
}
