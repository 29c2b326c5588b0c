//! Synthesis of steered 5×5 convolution kernels from the nine-parameter
//! canonical operator, the lifting and group-convolution banks built from
//! them, and He-style initialization of β through the canonical 3×3 filter.

use std::sync::OnceLock;

use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::group2d::{Group2D, GroupElement};
use crate::pdo::{canonical_poly, monomial_at, BetaVector, PdoPolynomial, BASIS_LEN, BETA_MONOMIALS};
use crate::stencils::stencil_for;

/// Side length of every synthesized kernel.
pub const KERNEL_SIZE: usize = 5;
/// Entries per synthesized kernel.
pub const KERNEL_LEN: usize = KERNEL_SIZE * KERNEL_SIZE;

type Mask = [f64; KERNEL_LEN];

/// The fifteen stencils embedded in 5×5, in graded lex order, unscaled.
fn embedded_stencils() -> &'static [Mask; BASIS_LEN] {
    static BANK: OnceLock<[Mask; BASIS_LEN]> = OnceLock::new();
    BANK.get_or_init(|| {
        std::array::from_fn(|i| {
            let (a, b) = monomial_at(i);
            stencil_for(a, b).expect("stencil exists").embed5()
        })
    })
}

fn mesh_scale(index: usize, h: f64) -> f64 {
    let (a, b) = monomial_at(index);
    h.powi(-((a + b) as i32))
}

/// Assembles `Σ_i c_i · ũ_i / h^(order i)`.
fn assemble(coeffs: &[f64; BASIS_LEN], h: f64) -> Mask {
    let bank = embedded_stencils();
    let mut mask = [0.0; KERNEL_LEN];
    for (i, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let w = c * mesh_scale(i, h);
        for (m, s) in mask.iter_mut().zip(bank[i].iter()) {
            *m += w * s;
        }
    }
    mask
}

/// A steered kernel `χ̃^(A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesizedKernel {
    pub element: GroupElement,
    /// Row-major 5×5 mask including the `1/h^k` factors.
    pub mask: Mask,
    /// Coefficients `C_i^(A)` of the steered operator, graded lex order.
    pub coeffs: [f64; BASIS_LEN],
}

/// Builds `χ̃^(A)` for `beta` at mesh size `h`.
pub fn synthesize_kernel(beta: &BetaVector, group: &Group2D, element: GroupElement, h: f64) -> SynthesizedKernel {
    assert!(h > 0.0, "mesh size must be positive");
    let poly = canonical_poly(beta).transform_by(group, element);
    let coeffs = *poly.coeffs();
    SynthesizedKernel { element, mask: assemble(&coeffs, h), coeffs }
}

/// The linear map `β ↦ mask(χ̃^(A))` for one element, as a 25×9 matrix.
#[derive(Clone, Debug)]
pub struct SynthesisMap {
    element: GroupElement,
    /// `columns[j]` is the mask produced by the unit vector `e_j`.
    columns: [Mask; 9],
}

impl SynthesisMap {
    pub fn new(group: &Group2D, element: GroupElement, h: f64) -> Self {
        let columns = std::array::from_fn(|j| {
            let poly = PdoPolynomial::canonical(&BetaVector::unit(j)).transform_by(group, element);
            assemble(poly.coeffs(), h)
        });
        SynthesisMap { element, columns }
    }

    pub fn element(&self) -> GroupElement {
        self.element
    }

    /// `mask = M β`, accumulated into `out`.
    pub fn apply_into(&self, beta: &BetaVector, out: &mut [f64]) {
        for (col, &b) in self.columns.iter().zip(beta.0.iter()) {
            if b == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(col.iter()) {
                *o += b * c;
            }
        }
    }

    pub fn apply(&self, beta: &BetaVector) -> Mask {
        let mut out = [0.0; KERNEL_LEN];
        self.apply_into(beta, &mut out);
        out
    }

    /// `Mᵀ g`, accumulated into `grad`.
    pub fn transpose_apply_into(&self, grad_mask: &[f64], grad: &mut BetaVector) {
        for (j, col) in self.columns.iter().enumerate() {
            grad.0[j] += col.iter().zip(grad_mask).map(|(c, g)| c * g).sum::<f64>();
        }
    }
}

/// 9×9 matrix whose columns are the flattened 3×3 stencils in β order (h = 1).
pub fn basis_matrix() -> SMatrix<f64, 9, 9> {
    let mut m = SMatrix::<f64, 9, 9>::zeros();
    for (j, &(a, b)) in BETA_MONOMIALS.iter().enumerate() {
        let s = stencil_for(a, b).expect("canonical stencil");
        debug_assert_eq!(s.size(), 3);
        for p in 0..3 {
            for q in 0..3 {
                m[(p * 3 + q, j)] = s.weight(p, q);
            }
        }
    }
    m
}

fn basis_inverse() -> Result<&'static SMatrix<f64, 9, 9>> {
    static INV: OnceLock<Option<SMatrix<f64, 9, 9>>> = OnceLock::new();
    INV.get_or_init(|| basis_matrix().try_inverse()).as_ref().ok_or(Error::SingularBasis)
}

/// Solves `M β = vec(filter)` for a row-major 3×3 canonical filter.
pub fn beta_for_filter(filter: &[f64; 9]) -> Result<BetaVector> {
    let inv = basis_inverse()?;
    let beta = inv * SVector::<f64, 9>::from_column_slice(filter);
    Ok(BetaVector(std::array::from_fn(|i| beta[i])))
}

/// β vectors for `out_ch × in_ch × group_channels` slots, laid out in that
/// order. Each canonical 3×3 filter is drawn from `N(0, 2 / fan_in)` with
/// `fan_in = in_ch · group_channels · 9`, then converted to β.
pub fn init_beta(out_ch: usize, in_ch: usize, group_channels: usize, rng_seed: u64) -> Result<Vec<BetaVector>> {
    let fan_in = (in_ch * group_channels * 9) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..out_ch * in_ch * group_channels)
        .map(|_| {
            let filter: [f64; 9] = std::array::from_fn(|_| normal.sample(&mut rng));
            beta_for_filter(&filter)
        })
        .collect()
}

/// Canonical 3×3 filter that `beta` reproduces at `h = 1`.
pub fn canonical_filter(beta: &BetaVector) -> [f64; 9] {
    let v = basis_matrix() * SVector::<f64, 9>::from_column_slice(&beta.0);
    std::array::from_fn(|i| v[i])
}

/// Kernels `χ̃^(A)_{f,in}` for a lifting layer: planar input, one output
/// channel per (feature, group element).
#[derive(Clone, Debug)]
pub struct LiftingBank {
    group: Group2D,
    out_ch: usize,
    in_ch: usize,
    /// `[out][in]`.
    pub beta: Vec<BetaVector>,
    h: f64,
    maps: Vec<SynthesisMap>,
}

impl LiftingBank {
    pub fn new(group: Group2D, out_ch: usize, in_ch: usize, beta: Vec<BetaVector>, h: f64) -> Result<Self> {
        if beta.len() != out_ch * in_ch {
            return Err(Error::Shape(format!("lifting bank needs {} β vectors, got {}", out_ch * in_ch, beta.len())));
        }
        let maps = group.elements().iter().map(|&g| SynthesisMap::new(&group, g, h)).collect();
        Ok(LiftingBank { group, out_ch, in_ch, beta, h, maps })
    }

    /// He-initialized bank at `h = 1`.
    pub fn init(group: Group2D, out_ch: usize, in_ch: usize, seed: u64) -> Result<Self> {
        let beta = init_beta(out_ch, in_ch, 1, seed)?;
        Self::new(group, out_ch, in_ch, beta, 1.0)
    }

    pub fn group(&self) -> &Group2D {
        &self.group
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn beta_at(&self, out: usize, inp: usize) -> &BetaVector {
        &self.beta[out * self.in_ch + inp]
    }

    /// One kernel per `(out, in, A)`.
    pub fn kernel(&self, out: usize, inp: usize, element: GroupElement) -> SynthesizedKernel {
        synthesize_kernel(self.beta_at(out, inp), &self.group, element, self.h)
    }

    /// Dense correlation weights `[out·|S|][in][5][5]`; output channel
    /// `f·|S| + index(A)` carries `χ̃^(A)_{f,·}`.
    pub fn dense_weights(&self) -> Vec<f64> {
        let s = self.group.order();
        let mut w = vec![0.0; self.out_ch * s * self.in_ch * KERNEL_LEN];
        for f in 0..self.out_ch {
            for (a, map) in self.maps.iter().enumerate() {
                for i in 0..self.in_ch {
                    let off = ((f * s + a) * self.in_ch + i) * KERNEL_LEN;
                    map.apply_into(self.beta_at(f, i), &mut w[off..off + KERNEL_LEN]);
                }
            }
        }
        w
    }

    /// Chain rule through [`dense_weights`](Self::dense_weights).
    pub fn beta_gradient(&self, dense_grad: &[f64]) -> Vec<BetaVector> {
        let s = self.group.order();
        let mut g = vec![BetaVector::default(); self.beta.len()];
        for f in 0..self.out_ch {
            for (a, map) in self.maps.iter().enumerate() {
                for i in 0..self.in_ch {
                    let off = ((f * s + a) * self.in_ch + i) * KERNEL_LEN;
                    map.transpose_apply_into(&dense_grad[off..off + KERNEL_LEN], &mut g[f * self.in_ch + i]);
                }
            }
        }
        g
    }
}

/// Kernels `χ̃^(A)_{f_out,f_in,k}` for a group convolution, with an
/// independent β per summand `k`.
#[derive(Clone, Debug)]
pub struct GroupConvBank {
    group: Group2D,
    out_ch: usize,
    in_ch: usize,
    /// `[out][in][k]`.
    pub beta: Vec<BetaVector>,
    h: f64,
    maps: Vec<SynthesisMap>,
}

impl GroupConvBank {
    pub fn new(group: Group2D, out_ch: usize, in_ch: usize, beta: Vec<BetaVector>, h: f64) -> Result<Self> {
        let need = out_ch * in_ch * group.order();
        if beta.len() != need {
            return Err(Error::Shape(format!("group conv bank needs {need} β vectors, got {}", beta.len())));
        }
        let maps = group.elements().iter().map(|&g| SynthesisMap::new(&group, g, h)).collect();
        Ok(GroupConvBank { group, out_ch, in_ch, beta, h, maps })
    }

    /// He-initialized bank at `h = 1`; fan-in counts all `|S|` summands.
    pub fn init(group: Group2D, out_ch: usize, in_ch: usize, seed: u64) -> Result<Self> {
        let beta = init_beta(out_ch, in_ch, group.order(), seed)?;
        Self::new(group, out_ch, in_ch, beta, 1.0)
    }

    pub fn group(&self) -> &Group2D {
        &self.group
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn beta_at(&self, out: usize, inp: usize, k: usize) -> &BetaVector {
        &self.beta[(out * self.in_ch + inp) * self.group.order() + k]
    }

    pub fn kernel(&self, out: usize, inp: usize, k: usize, element: GroupElement) -> SynthesizedKernel {
        synthesize_kernel(self.beta_at(out, inp, k), &self.group, element, self.h)
    }

    /// Dense correlation weights `[out·|S|][in·|S|][5][5]`. The block from
    /// input `(f_in, B)` to output `(f_out, A)` is `χ̃^(A)_{f_out,f_in,k}`
    /// with `k = A⁻¹B`, so that output `A` sums `χ̃^(A)_k ⋆ F^{Ak}`.
    pub fn dense_weights(&self) -> Vec<f64> {
        let s = self.group.order();
        let cin = self.in_ch * s;
        let mut w = vec![0.0; self.out_ch * s * cin * KERNEL_LEN];
        for fo in 0..self.out_ch {
            for (a, map) in self.maps.iter().enumerate() {
                let a_inv = self.group.inverse_index(a);
                for fi in 0..self.in_ch {
                    for b in 0..s {
                        let k = self.group.product_index(a_inv, b);
                        let off = ((fo * s + a) * cin + fi * s + b) * KERNEL_LEN;
                        map.apply_into(self.beta_at(fo, fi, k), &mut w[off..off + KERNEL_LEN]);
                    }
                }
            }
        }
        w
    }

    pub fn beta_gradient(&self, dense_grad: &[f64]) -> Vec<BetaVector> {
        let s = self.group.order();
        let cin = self.in_ch * s;
        let mut g = vec![BetaVector::default(); self.beta.len()];
        for fo in 0..self.out_ch {
            for (a, map) in self.maps.iter().enumerate() {
                let a_inv = self.group.inverse_index(a);
                for fi in 0..self.in_ch {
                    for b in 0..s {
                        let k = self.group.product_index(a_inv, b);
                        let off = ((fo * s + a) * cin + fi * s + b) * KERNEL_LEN;
                        map.transpose_apply_into(
                            &dense_grad[off..off + KERNEL_LEN],
                            &mut g[(fo * self.in_ch + fi) * s + k],
                        );
                    }
                }
            }
        }
        g
    }
}

/// Rotates a row-major `size × size` array by 90° counterclockwise.
pub fn rotate_mask_ccw(mask: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            out[i * size + j] = mask[j * size + size - 1 - i];
        }
    }
    out
}
