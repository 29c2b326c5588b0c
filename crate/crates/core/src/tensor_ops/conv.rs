//! Batched same-size correlation with zero padding, via im2col and GEMM.
//!
//! Work is split per sample. Weight gradients are computed per sample and
//! summed in sample order, so results do not depend on the thread count.

use ndarray::Array4;
use rayon::prelude::*;

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::kernels::{GroupConvBank, LiftingBank, KERNEL_SIZE};
use crate::pdo::BetaVector;

/// `c = a · b + beta · c` for row-major `c` (`m × n`); `a` is `m × k` and
/// `b` is `k × n`, each given with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Geom {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// For tap offset `d` along an axis of length `len`, the output range
    /// whose source index `i + d - k/2` is in bounds.
    fn valid(&self, d: usize, len: usize) -> (usize, usize) {
        let m = self.k / 2;
        let lo = m.saturating_sub(d).min(len);
        let hi = (len + m).saturating_sub(d).min(len);
        (lo, hi.max(lo))
    }
}

fn im2col(x: &[f64], g: Geom, cols: &mut [f64]) {
    let (hw, m) = (g.hw(), g.k / 2);
    for ci in 0..g.cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for p in 0..g.k {
            let (r0, r1) = g.valid(p, g.h);
            for q in 0..g.k {
                let (c0, c1) = g.valid(q, g.w);
                let row = &mut cols[((ci * g.k + p) * g.k + q) * hw..][..hw];
                row.fill(0.0);
                if c0 == c1 {
                    continue;
                }
                for r in r0..r1 {
                    let sr = r + p - m;
                    let src = &plane[sr * g.w + c0 + q - m..sr * g.w + c1 + q - m];
                    row[r * g.w + c0..r * g.w + c1].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: Geom, x: &mut [f64]) {
    let (hw, m) = (g.hw(), g.k / 2);
    x.fill(0.0);
    for ci in 0..g.cin {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for p in 0..g.k {
            let (r0, r1) = g.valid(p, g.h);
            for q in 0..g.k {
                let (c0, c1) = g.valid(q, g.w);
                let row = &cols[((ci * g.k + p) * g.k + q) * hw..][..hw];
                if c0 == c1 {
                    continue;
                }
                for r in r0..r1 {
                    let sr = r + p - m;
                    let dst = &mut plane[sr * g.w + c0 + q - m..sr * g.w + c1 + q - m];
                    for (d, s) in dst.iter_mut().zip(&row[r * g.w + c0..r * g.w + c1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn check_kernel(input: &Array4<f64>, weights: &[f64], cout: usize, k: usize) -> Result<Geom> {
    if k.is_multiple_of(2) {
        return Err(Error::Shape(format!("kernel size {k} must be odd")));
    }
    let (_, cin, h, w) = input.dim();
    if weights.len() != cout * cin * k * k {
        return Err(Error::Shape(format!("weights hold {} values, expected {cout}×{cin}×{k}×{k}", weights.len())));
    }
    Ok(Geom { cin, h, w, k })
}

/// `out[b][o][r][c] = Σ_{i,p,q} w[o][i][p][q] · x[b][i][r+p-k/2][c+q-k/2]`,
/// zero outside the input. Weights are `[cout][cin][k][k]`.
pub fn correlate2d_forward(input: &Array4<f64>, weights: &[f64], cout: usize, k: usize) -> Result<Array4<f64>> {
    let g = check_kernel(input, weights, cout, k)?;
    let input = input.as_standard_layout();
    let x = input.as_slice().expect("standard layout");
    let batch = input.dim().0;
    let (hw, rows) = (g.hw(), g.rows());
    let mut out = vec![0.0; batch * cout * hw];
    if hw > 0 && cout > 0 {
        out.par_chunks_mut(cout * hw).zip(x.par_chunks(g.cin * hw)).for_each_init(
            || vec![0.0; rows * hw],
            |cols, (o, xi)| {
                im2col(xi, g, cols);
                gemm(cout, rows, hw, weights, (rows, 1), cols, (hw, 1), o, 0.0);
            },
        );
    }
    Ok(Array4::from_shape_vec((batch, cout, g.h, g.w), out).expect("shape"))
}

/// Adjoints of [`correlate2d_forward`]: gradients with respect to the input
/// and the weights.
pub fn correlate2d_backward(
    grad_out: &Array4<f64>,
    input: &Array4<f64>,
    weights: &[f64],
    k: usize,
) -> Result<(Array4<f64>, Vec<f64>)> {
    let (batch, cout, gh, gw) = grad_out.dim();
    let g = check_kernel(input, weights, cout, k)?;
    if (batch, gh, gw) != (input.dim().0, g.h, g.w) {
        return Err(Error::Shape(format!("grad_out {:?} does not match input {:?}", grad_out.dim(), input.dim())));
    }
    let input = input.as_standard_layout();
    let grad_out = grad_out.as_standard_layout();
    let x = input.as_slice().expect("standard layout");
    let dy = grad_out.as_slice().expect("standard layout");
    let (hw, rows) = (g.hw(), g.rows());
    let mut dx = vec![0.0; batch * g.cin * hw];
    let per_sample: Vec<Vec<f64>> = if hw == 0 {
        Vec::new()
    } else {
        dx.par_chunks_mut(g.cin * hw)
            .zip(x.par_chunks(g.cin * hw))
            .zip(dy.par_chunks(cout * hw))
            .map_init(
                || (vec![0.0; rows * hw], vec![0.0; rows * hw]),
                |(cols, dcols), ((dxi, xi), dyi)| {
                    im2col(xi, g, cols);
                    let mut dw = vec![0.0; cout * rows];
                    gemm(cout, hw, rows, dyi, (hw, 1), cols, (1, hw), &mut dw, 0.0);
                    gemm(rows, cout, hw, weights, (1, rows), dyi, (hw, 1), dcols, 0.0);
                    col2im(dcols, g, dxi);
                    dw
                },
            )
            .collect()
    };
    let mut dw = vec![0.0; weights.len()];
    for s in &per_sample {
        for (a, b) in dw.iter_mut().zip(s) {
            *a += b;
        }
    }
    Ok((Array4::from_shape_vec((batch, g.cin, g.h, g.w), dx).expect("shape"), dw))
}

/// Lifting layer: channel `(f, A)` of the output is
/// `Σ_in χ̃^(A)_{f,in} ⋆ image_in`.
pub fn lifting_forward(images: &FeatureMap, bank: &LiftingBank) -> Result<FeatureMap> {
    if images.orientation_arity != 1 {
        return Err(Error::Shape(format!("lifting expects planar input, got arity {}", images.orientation_arity)));
    }
    if images.channels() != bank.in_ch() {
        return Err(Error::Shape(format!("lifting bank takes {} channels, got {}", bank.in_ch(), images.channels())));
    }
    let s = bank.group().order();
    let out = correlate2d_forward(&images.data, &bank.dense_weights(), bank.out_ch() * s, KERNEL_SIZE)?;
    FeatureMap::new(out, s, images.h)
}

/// Gradients of [`lifting_forward`] with respect to the images and β.
pub fn lifting_backward(
    grad_out: &FeatureMap,
    images: &FeatureMap,
    bank: &LiftingBank,
) -> Result<(FeatureMap, Vec<BetaVector>)> {
    let (dx, dw) = correlate2d_backward(&grad_out.data, &images.data, &bank.dense_weights(), KERNEL_SIZE)?;
    Ok((images.like(dx), bank.beta_gradient(&dw)))
}

/// Group convolution: output `(f_out, A)` is
/// `Σ_{f_in} Σ_k χ̃^(A)_{f_out,f_in,k} ⋆ feat(f_in, A·k)`.
pub fn groupconv_forward(feat: &FeatureMap, bank: &GroupConvBank) -> Result<FeatureMap> {
    let s = bank.group().order();
    if feat.orientation_arity != s {
        return Err(Error::Shape(format!(
            "group conv over |S| = {s} got orientation arity {}",
            feat.orientation_arity
        )));
    }
    if feat.features() != bank.in_ch() {
        return Err(Error::Shape(format!("group conv bank takes {} features, got {}", bank.in_ch(), feat.features())));
    }
    let out = correlate2d_forward(&feat.data, &bank.dense_weights(), bank.out_ch() * s, KERNEL_SIZE)?;
    FeatureMap::new(out, s, feat.h)
}

/// Gradients of [`groupconv_forward`] with respect to the features and β.
pub fn groupconv_backward(
    grad_out: &FeatureMap,
    feat: &FeatureMap,
    bank: &GroupConvBank,
) -> Result<(FeatureMap, Vec<BetaVector>)> {
    let (dx, dw) = correlate2d_backward(&grad_out.data, &feat.data, &bank.dense_weights(), KERNEL_SIZE)?;
    Ok((feat.like(dx), bank.beta_gradient(&dw)))
}
