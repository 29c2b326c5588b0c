//! Finite-difference masks for every derivative monomial `∂ᵃₓ∂ᵇ_y` with
//! `a + b <= 4`, each second-order accurate.
//!
//! Array convention: the row index grows downward, i.e. toward decreasing
//! `y`; the column index grows rightward with `x`. Masks are applied by
//! correlation, `out(r, c) = Σ mask(p, q) · grid(r + p - m, c + q - m)`.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::equiv::convergence::{fit_order, OrderFit};
use crate::equiv::{cell_center, sample_field};
use crate::error::{Error, Result};
use crate::pdo::{basis_len, monomial_at, SmoothField, MAX_DEGREE};

/// One-dimensional central differences, in halves, ordered by increasing
/// coordinate. Index `k` is the stencil for the `k`-th derivative.
const CENTRAL_HALVES: [&[i32]; 5] = [&[2], &[-1, 0, 1], &[2, -4, 2], &[-1, 2, 0, -2, 1], &[2, -8, 12, -8, 2]];

/// A finite-difference mask for `∂ᵃₓ∂ᵇ_y`, stored in exact quarters and
/// applied as `mask / h^(a+b)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stencil {
    deriv: (usize, usize),
    size: usize,
    quarters: Vec<i32>,
}

impl Stencil {
    pub fn deriv(&self) -> (usize, usize) {
        self.deriv
    }

    /// 3 or 5.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Power of `h` dividing the mask, `a + b`.
    pub fn mesh_power(&self) -> i32 {
        (self.deriv.0 + self.deriv.1) as i32
    }

    /// Entry `(p, q)` in quarters; the printed value is `quarter(p, q) / 4`.
    pub fn quarter(&self, p: usize, q: usize) -> i32 {
        self.quarters[p * self.size + q]
    }

    pub fn quarters(&self) -> &[i32] {
        &self.quarters
    }

    pub fn weight(&self, p: usize, q: usize) -> f64 {
        self.quarter(p, q) as f64 * 0.25
    }

    /// Entry `(p, q)` as a reduced fraction `(numerator, denominator)`.
    pub fn rational(&self, p: usize, q: usize) -> (i32, i32) {
        let num = self.quarter(p, q);
        let g = gcd(num.unsigned_abs(), 4) as i32;
        (num / g, 4 / g)
    }

    /// The mask without `h` scaling.
    pub fn mask(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.size, self.size), |(p, q)| self.weight(p, q))
    }

    /// The mask centered in a 5×5 array.
    pub fn embed5(&self) -> [f64; 25] {
        let off = (5 - self.size) / 2;
        let mut out = [0.0; 25];
        for p in 0..self.size {
            for q in 0..self.size {
                out[(p + off) * 5 + q + off] = self.weight(p, q);
            }
        }
        out
    }

    /// The quarters array rotated by 90° counterclockwise.
    pub fn rotated_ccw(&self) -> Vec<i32> {
        let s = self.size;
        let mut out = vec![0; s * s];
        for i in 0..s {
            for j in 0..s {
                out[i * s + j] = self.quarter(j, s - 1 - i);
            }
        }
        out
    }

    /// Mask rendered as exact rationals, one row per line.
    pub fn to_rational_string(&self) -> String {
        let mut lines = Vec::with_capacity(self.size);
        for p in 0..self.size {
            let row: Vec<String> = (0..self.size)
                .map(|q| match self.rational(p, q) {
                    (n, 1) => format!("{n:>5}"),
                    (n, d) => format!("{:>5}", format!("{n}/{d}")),
                })
                .collect();
            lines.push(row.join(" "));
        }
        lines.join("\n")
    }

    /// Conventional name, `u_0`, `u_x`, `u_xxy`, ...
    pub fn name(&self) -> String {
        let (a, b) = self.deriv;
        if a + b == 0 {
            "u_0".to_string()
        } else {
            format!("u_{}{}", "x".repeat(a), "y".repeat(b))
        }
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The mask for `∂ᵃₓ∂ᵇ_y`. Every pair with `a + b <= 4` has one.
pub fn stencil_for(a: usize, b: usize) -> Result<Stencil> {
    if a + b > MAX_DEGREE {
        return Err(Error::NoStencil { a, b });
    }
    let size = if a.max(b) >= 3 { 5 } else { 3 };
    let m = (size / 2) as isize;
    let dx = CENTRAL_HALVES[a];
    let dy = CENTRAL_HALVES[b];
    let tap = |d: &[i32], offset: isize| -> i32 {
        let idx = offset + (d.len() / 2) as isize;
        if idx < 0 || idx >= d.len() as isize {
            0
        } else {
            d[idx as usize]
        }
    };
    let mut quarters = vec![0; size * size];
    for p in 0..size {
        for q in 0..size {
            let y_off = m - p as isize;
            let x_off = q as isize - m;
            quarters[p * size + q] = tap(dy, y_off) * tap(dx, x_off);
        }
    }
    Ok(Stencil { deriv: (a, b), size, quarters })
}

/// All fifteen stencils in graded lex order of their derivative.
pub fn all_stencils() -> Vec<Stencil> {
    (0..basis_len(MAX_DEGREE))
        .map(|i| {
            let (a, b) = monomial_at(i);
            stencil_for(a, b).expect("every degree <= 4 monomial has a stencil")
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Padding {
    /// Same-size output, zeros outside the grid.
    Zero,
    /// Output shrinks by `size - 1` per axis.
    Valid,
}

/// Correlates a square `mask` with `grid`.
pub fn correlate(mask: ArrayView2<f64>, grid: ArrayView2<f64>, padding: Padding) -> Result<Array2<f64>> {
    let size = mask.nrows();
    assert_eq!(size, mask.ncols(), "mask must be square");
    let (rows, cols) = grid.dim();
    let m = size / 2;
    match padding {
        Padding::Valid => {
            if rows < size || cols < size {
                return Err(Error::GridTooSmall { rows, cols, size });
            }
            let mut out = Array2::zeros((rows - size + 1, cols - size + 1));
            for ((r, c), o) in out.indexed_iter_mut() {
                let mut s = 0.0;
                for p in 0..size {
                    for q in 0..size {
                        s += mask[[p, q]] * grid[[r + p, c + q]];
                    }
                }
                *o = s;
            }
            Ok(out)
        }
        Padding::Zero => {
            let mut out = Array2::zeros((rows, cols));
            for ((r, c), o) in out.indexed_iter_mut() {
                let mut s = 0.0;
                for p in 0..size {
                    let rr = r as isize + p as isize - m as isize;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for q in 0..size {
                        let cc = c as isize + q as isize - m as isize;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        s += mask[[p, q]] * grid[[rr as usize, cc as usize]];
                    }
                }
                *o = s;
            }
            Ok(out)
        }
    }
}

/// Applies `s / h^(a+b)` to `grid`.
pub fn apply_stencil(s: &Stencil, grid: ArrayView2<f64>, h: f64, padding: Padding) -> Result<Array2<f64>> {
    let scale = h.powi(-s.mesh_power());
    let mask = s.mask().mapv(|w| w * scale);
    correlate(mask.view(), grid, padding)
}

/// Max-abs errors of a stencil against exact derivatives over a series of
/// resolutions, with the fitted order of accuracy.
#[derive(Clone, Debug, Serialize)]
pub struct OrderEstimate {
    pub resolutions: Vec<usize>,
    pub errors: Vec<f64>,
    pub fit: OrderFit,
}

impl OrderEstimate {
    pub fn order(&self) -> f64 {
        self.fit.order
    }
}

/// Interior width excluded from error norms.
pub const INTERIOR_CROP: usize = 2;

/// Fits the order of accuracy of `s` on `f` sampled at each `n` in
/// `resolutions` (mesh size `1/n`). Exact stencils report `+∞`.
pub fn estimate_order<F: SmoothField + ?Sized>(s: &Stencil, f: &F, resolutions: &[usize]) -> Result<OrderEstimate> {
    if resolutions.len() < 3 {
        return Err(Error::TooFewResolutions { needed: 3, got: resolutions.len() });
    }
    let (a, b) = s.deriv();
    let mut errors = Vec::with_capacity(resolutions.len());
    let mut hs = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let h = 1.0 / n as f64;
        let grid = sample_field(f, n);
        let approx = apply_stencil(s, grid.view(), h, Padding::Zero)?;
        let mut err = 0.0f64;
        for r in INTERIOR_CROP..n - INTERIOR_CROP {
            for c in INTERIOR_CROP..n - INTERIOR_CROP {
                let exact = f.partials(cell_center(n, r, c), a + b).get(a, b);
                err = err.max((approx[[r, c]] - exact).abs());
            }
        }
        errors.push(err);
        hs.push(h);
    }
    let fit = fit_order(&hs, &errors);
    Ok(OrderEstimate { resolutions: resolutions.to_vec(), errors, fit })
}
