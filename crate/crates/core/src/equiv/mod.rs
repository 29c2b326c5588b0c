//! Equivariance measurement.
//!
//! Fields are Gaussian mixtures, so rotated inputs and the exact outputs of
//! the continuous operators are available in closed form and no oracle
//! involves interpolation. Rotations act about the center of the unit
//! square, which is where the square pixel grid is symmetric.

pub mod convergence;
pub mod field;

use nalgebra::{Matrix2, Vector2};
use ndarray::{s, Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group2d::{Group2D, GroupElement};
use crate::kernels::{synthesize_kernel, GroupConvBank, LiftingBank, KERNEL_SIZE};
use crate::pdo::{canonical_poly, BetaVector, Bivariate, SmoothField, MAX_DEGREE};
use crate::stencils::{correlate, Padding, INTERIOR_CROP};

use self::convergence::{error_ratios, fit_order, OrderFit};
pub use self::field::{AnalyticField, GaussianBump, PolynomialField};

/// Center of the unit square; all group actions pivot here.
pub const PIVOT: [f64; 2] = [0.5, 0.5];

/// Coordinates of grid entry `(row, col)` of an `n × n` cell-centered
/// sampling of the unit square. Row 0 is the top (largest `y`).
#[inline]
pub fn cell_center(n: usize, row: usize, col: usize) -> [f64; 2] {
    let h = 1.0 / n as f64;
    [(col as f64 + 0.5) * h, ((n - 1 - row) as f64 + 0.5) * h]
}

/// Samples `f` at the cell centers of an `n × n` grid with `h = 1/n`.
pub fn sample_field<F: SmoothField + ?Sized>(f: &F, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(r, c)| f.value(cell_center(n, r, c)))
}

/// `π_Ã[f] = f ∘ Ã⁻¹`, rotating about the origin.
pub fn rotate_field(f: &AnalyticField, group: &Group2D, g: GroupElement) -> AnalyticField {
    f.rotated(&group.matrix(g))
}

/// `f ∘ Ã⁻¹` with the rotation taken about [`PIVOT`].
pub fn rotate_field_about_pivot(f: &AnalyticField, group: &Group2D, g: GroupElement) -> AnalyticField {
    f.rotated_about(&group.matrix(g), PIVOT)
}

fn pull_back(inv: &Matrix2<f64>, x: [f64; 2]) -> [f64; 2] {
    let p = Vector2::new(PIVOT[0], PIVOT[1]);
    let y = p + inv * (Vector2::new(x[0], x[1]) - p);
    [y[0], y[1]]
}

fn rot90_ccw(a: ArrayView2<f64>) -> Array2<f64> {
    a.t().slice(s![..;-1, ..]).to_owned()
}

/// Applies a lattice symmetry to a square grid: flip rows if `g` is
/// reflected, then rotate by the multiple of 90° in `g`.
pub fn transform_grid(grid: ArrayView2<f64>, group: &Group2D, g: GroupElement) -> Result<Array2<f64>> {
    let (rows, cols) = grid.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if !group.is_grid_symmetry(g) {
        return Err(Error::NotGridSymmetry(g.to_string()));
    }
    let mut out = if g.reflected { grid.slice(s![..;-1, ..]).to_owned() } else { grid.to_owned() };
    for _ in 0..(4 * g.rotation_index / group.n()) {
        out = rot90_ccw(out.view());
    }
    Ok(out)
}

fn mask_view(mask: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((KERNEL_SIZE, KERNEL_SIZE), mask).expect("5x5 mask")
}

/// Lifting layer applied kernel by kernel to planar grids; output channel
/// `f·|S| + index(A)`.
pub fn lift_grids(bank: &LiftingBank, inputs: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    if inputs.len() != bank.in_ch() {
        return Err(Error::Shape(format!("lifting expects {} inputs, got {}", bank.in_ch(), inputs.len())));
    }
    let group = bank.group();
    let mut out = Vec::with_capacity(bank.out_ch() * group.order());
    for f in 0..bank.out_ch() {
        for &a in group.elements() {
            let mut acc = Array2::zeros(inputs[0].dim());
            for (i, input) in inputs.iter().enumerate() {
                let k = bank.kernel(f, i, a);
                acc += &correlate(mask_view(&k.mask), input.view(), Padding::Zero)?;
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// Group convolution applied kernel by kernel: output `(f_out, A)` is
/// `Σ_{f_in} Σ_k χ̃^(A)_{f_out,f_in,k} ⋆ F(f_in, A·k)`.
pub fn groupconv_grids(bank: &GroupConvBank, inputs: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    let group = bank.group();
    let s = group.order();
    if inputs.len() != bank.in_ch() * s {
        return Err(Error::Shape(format!("group conv expects {} inputs, got {}", bank.in_ch() * s, inputs.len())));
    }
    let mut out = Vec::with_capacity(bank.out_ch() * s);
    for fo in 0..bank.out_ch() {
        for (a, &el) in group.elements().iter().enumerate() {
            let mut acc = Array2::zeros(inputs[0].dim());
            for fi in 0..bank.in_ch() {
                for k in 0..s {
                    let kernel = bank.kernel(fo, fi, k, el);
                    let src = &inputs[fi * s + group.product_index(a, k)];
                    acc += &correlate(mask_view(&kernel.mask), src.view(), Padding::Zero)?;
                }
            }
            out.push(acc);
        }
    }
    Ok(out)
}

fn interior_max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (rows, cols) = a.dim();
    let c = INTERIOR_CROP;
    let mut m = 0.0f64;
    for r in c..rows.saturating_sub(c) {
        for q in c..cols.saturating_sub(c) {
            m = m.max((a[[r, q]] - b[[r, q]]).abs());
        }
    }
    m
}

/// Discrete lifting applied to the sampled rotated field, against the exact
/// continuous output `χ^(Ã⁻¹A)[f](Ã⁻¹x)`. Returns the interior max-abs
/// difference over all output orientations. Kernels use `h = 1/n`.
pub fn lifting_equivariance_error(
    beta: &BetaVector,
    group: &Group2D,
    g: GroupElement,
    f: &AnalyticField,
    n: usize,
) -> f64 {
    let h = 1.0 / n as f64;
    let rotated = sample_field(&rotate_field_about_pivot(f, group, g), n);
    let g_inv = group.inverse(g);
    let inv = group.matrix(g_inv);
    let canonical = canonical_poly(beta);

    let ops: Vec<_> =
        group.elements().iter().map(|&a| canonical.transform_by(group, group.product(g_inv, a))).collect();
    let partials: Vec<_> =
        (0..n * n).map(|i| f.partials(pull_back(&inv, cell_center(n, i / n, i % n)), MAX_DEGREE)).collect();

    let mut worst = 0.0f64;
    for (&a, op) in group.elements().iter().zip(&ops) {
        let k = synthesize_kernel(beta, group, a, h);
        let discrete = correlate(mask_view(&k.mask), rotated.view(), Padding::Zero).expect("zero padding");
        let exact = Array2::from_shape_fn((n, n), |(r, c)| {
            let p = &partials[r * n + c];
            op.coeffs().iter().zip(p.values()).map(|(x, y)| x * y).sum::<f64>()
        });
        worst = worst.max(interior_max_diff(&discrete, &exact));
    }
    worst
}

/// How the right-hand side of the group-convolution identity is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Reference {
    /// Exact continuous output evaluated at the pulled-back points.
    Analytic,
    /// Lattice-level: transform the discrete output of the unrotated input.
    /// Only valid for grid symmetries.
    Discrete,
    /// `Discrete` for grid symmetries, otherwise `Analytic`.
    Auto,
}

/// Group-convolution equivariance error.
///
/// The input feature is `e(x, B) = χ^(B)_{β_i}[f](x)` for each input
/// feature `i` (with `input_betas[i]`), sampled exactly. The left side is the
/// discrete group convolution of the sampled `π_Ã[e]`; the right side is
/// either the exact continuous `Φ[e](Ã⁻¹x, Ã⁻¹A)` or, for lattice symmetries,
/// the lattice transform of the discrete output of the unrotated input.
/// Kernels are resynthesized at `h = 1/n`.
pub fn groupconv_equivariance_error(
    input_betas: &[BetaVector],
    bank: &GroupConvBank,
    g: GroupElement,
    f: &AnalyticField,
    n: usize,
    reference: Reference,
) -> Result<f64> {
    let group = bank.group().clone();
    if input_betas.len() != bank.in_ch() {
        return Err(Error::Shape(format!("need {} input β vectors, got {}", bank.in_ch(), input_betas.len())));
    }
    let bank = GroupConvBank::new(group.clone(), bank.out_ch(), bank.in_ch(), bank.beta.clone(), 1.0 / n as f64)?;
    let discrete = match reference {
        Reference::Discrete => true,
        Reference::Analytic => false,
        Reference::Auto => group.is_grid_symmetry(g),
    };
    if discrete {
        let input = sample_lifted(input_betas, &group, f, n, GroupElement::IDENTITY);
        return exact_check_groupconv(&bank, g, &input);
    }

    let s = group.order();
    let g_inv = group.inverse(g);
    let inv = group.matrix(g_inv);
    let rotated_input = sample_lifted(input_betas, &group, f, n, g);
    let lhs = groupconv_grids(&bank, &rotated_input)?;

    // Φ[e](y, A') = Σ_{i,k} χ^(A')_{o,i,k} χ^(A'k)_{β_i} [f](y): a composed
    // operator of degree up to 8, applied to f at y = Ã⁻¹x.
    let q: Vec<Vec<Bivariate>> = input_betas
        .iter()
        .map(|b| group.elements().iter().map(|&el| canonical_poly(b).transform_by(&group, el).to_bivariate()).collect())
        .collect();
    let partials: Vec<_> =
        (0..n * n).map(|i| f.partials(pull_back(&inv, cell_center(n, i / n, i % n)), 2 * MAX_DEGREE)).collect();

    let mut worst = 0.0f64;
    for fo in 0..bank.out_ch() {
        for a in 0..s {
            let a_prime = group.product_index(group.index_of(g_inv), a);
            let mut composed = Bivariate::zero(2 * MAX_DEGREE);
            for (fi, qi) in q.iter().enumerate() {
                for k in 0..s {
                    let p = canonical_poly(bank.beta_at(fo, fi, k)).transform_by(&group, group.element(a_prime));
                    composed = &composed + &(&p.to_bivariate() * &qi[group.product_index(a_prime, k)]);
                }
            }
            let exact = Array2::from_shape_fn((n, n), |(r, c)| composed.apply(&partials[r * n + c]));
            worst = worst.max(interior_max_diff(&lhs[fo * s + a], &exact));
        }
    }
    Ok(worst)
}

/// Exact samples of `π_g[e]`, `e(x, B) = χ^(B)_{β_i}[f](x)`, laid out
/// `[feature][element]`.
pub fn sample_lifted(
    input_betas: &[BetaVector],
    group: &Group2D,
    f: &AnalyticField,
    n: usize,
    g: GroupElement,
) -> Vec<Array2<f64>> {
    let g_inv = group.inverse(g);
    let inv = group.matrix(g_inv);
    let partials: Vec<_> =
        (0..n * n).map(|i| f.partials(pull_back(&inv, cell_center(n, i / n, i % n)), MAX_DEGREE)).collect();
    let mut out = Vec::with_capacity(input_betas.len() * group.order());
    for beta in input_betas {
        let canonical = canonical_poly(beta);
        for &b in group.elements() {
            let op = canonical.transform_by(group, group.product(g_inv, b));
            out.push(Array2::from_shape_fn((n, n), |(r, c)| {
                op.coeffs().iter().zip(partials[r * n + c].values()).map(|(x, y)| x * y).sum::<f64>()
            }));
        }
    }
    out
}

/// Layer under test for [`exact_grid_check`].
#[derive(Clone, Copy)]
pub enum CheckTarget<'a> {
    Lifting(&'a LiftingBank),
    GroupConv(&'a GroupConvBank),
}

/// Lattice-level equivariance of one layer under a grid symmetry `g`: the
/// layer applied to the transformed input against the transformed,
/// orientation-permuted output of the untransformed input. Returns the
/// interior max-abs difference.
///
/// For lifting, `inputs` holds `in_ch` planar grids; for group convolution,
/// `in_ch · |S|` grids in `[feature][element]` order.
pub fn exact_grid_check(target: CheckTarget<'_>, g: GroupElement, inputs: &[Array2<f64>]) -> Result<f64> {
    match target {
        CheckTarget::Lifting(bank) => exact_check_lifting(bank, g, inputs),
        CheckTarget::GroupConv(bank) => exact_check_groupconv(bank, g, inputs),
    }
}

/// Worst [`exact_grid_check`] error over the quarter turns of a p4 or p4m
/// layer, and over the four flips too when `reflect` is set.
pub fn exact_p4_check(target: CheckTarget<'_>, reflect: bool, inputs: &[Array2<f64>]) -> Result<f64> {
    let group = match target {
        CheckTarget::Lifting(b) => b.group(),
        CheckTarget::GroupConv(b) => b.group(),
    };
    if group.n() != 4 {
        return Err(Error::InvalidArgument(format!("exact p4 check needs p4 or p4m, got {}", group.spec())));
    }
    if reflect && !group.with_reflections() {
        return Err(Error::InvalidArgument("flips requested for a group without reflections".into()));
    }
    let mut worst = 0.0f64;
    for &g in group.elements().iter().filter(|g| reflect || !g.reflected) {
        worst = worst.max(exact_grid_check(target, g, inputs)?);
    }
    Ok(worst)
}

fn check_inputs(group: &Group2D, g: GroupElement, inputs: &[Array2<f64>]) -> Result<()> {
    for input in inputs {
        let (rows, cols) = input.dim();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
    }
    if !group.contains(g) {
        return Err(Error::BadElement { label: g.to_string(), group: group.spec().to_string() });
    }
    if !group.is_grid_symmetry(g) {
        return Err(Error::NotGridSymmetry(g.to_string()));
    }
    Ok(())
}

fn exact_check_lifting(bank: &LiftingBank, g: GroupElement, inputs: &[Array2<f64>]) -> Result<f64> {
    let group = bank.group();
    check_inputs(group, g, inputs)?;
    let transformed: Vec<_> = inputs.iter().map(|x| transform_grid(x.view(), group, g)).collect::<Result<_>>()?;
    let lhs = lift_grids(bank, &transformed)?;
    let plain = lift_grids(bank, inputs)?;
    compare_permuted(group, g, bank.out_ch(), &lhs, &plain)
}

fn exact_check_groupconv(bank: &GroupConvBank, g: GroupElement, inputs: &[Array2<f64>]) -> Result<f64> {
    let group = bank.group();
    check_inputs(group, g, inputs)?;
    let transformed = transform_features(group, g, inputs)?;
    let lhs = groupconv_grids(bank, &transformed)?;
    let plain = groupconv_grids(bank, inputs)?;
    compare_permuted(group, g, bank.out_ch(), &lhs, &plain)
}

/// `π_g` on group features: channel `(f, B)` receives the lattice transform
/// of channel `(f, g⁻¹B)`.
pub fn transform_features(group: &Group2D, g: GroupElement, inputs: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    let s = group.order();
    let g_inv = group.index_of(group.inverse(g));
    let mut out = Vec::with_capacity(inputs.len());
    for f in 0..inputs.len() / s {
        for b in 0..s {
            out.push(transform_grid(inputs[f * s + group.product_index(g_inv, b)].view(), group, g)?);
        }
    }
    Ok(out)
}

fn compare_permuted(
    group: &Group2D,
    g: GroupElement,
    features: usize,
    lhs: &[Array2<f64>],
    plain: &[Array2<f64>],
) -> Result<f64> {
    let rhs = transform_features(group, g, plain)?;
    debug_assert_eq!(lhs.len(), features * group.order());
    Ok(lhs.iter().zip(&rhs).map(|(a, b)| interior_max_diff(a, b)).fold(0.0, f64::max))
}

/// Which layer a convergence study measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LayerKind {
    Lifting,
    GroupConv,
}

/// Errors across resolutions with the fitted order.
#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceReport {
    pub group: String,
    pub element: String,
    pub layer: LayerKind,
    pub resolutions: Vec<usize>,
    pub errors: Vec<f64>,
    /// `error(n) / error(2n)` for consecutive resolutions.
    pub ratios: Vec<f64>,
    pub fit: OrderFit,
}

impl EquivarianceReport {
    fn new(group: &Group2D, g: GroupElement, layer: LayerKind, resolutions: &[usize], errors: Vec<f64>) -> Self {
        let hs: Vec<f64> = resolutions.iter().map(|&n| 1.0 / n as f64).collect();
        EquivarianceReport {
            group: group.spec().to_string(),
            element: g.to_string(),
            layer,
            resolutions: resolutions.to_vec(),
            ratios: error_ratios(&errors),
            fit: fit_order(&hs, &errors),
            errors,
        }
    }

    /// Plain-text table, one row per resolution.
    pub fn table(&self) -> String {
        let mut out = format!("{:?} layer, group {}, element {}\n", self.layer, self.group, self.element);
        out.push_str(&format!("{:>6} {:>14} {:>8}\n", "n", "max error", "ratio"));
        for (i, (n, e)) in self.resolutions.iter().zip(&self.errors).enumerate() {
            let ratio = if i == 0 { "-".to_string() } else { format!("{:.3}", self.ratios[i - 1]) };
            out.push_str(&format!("{n:>6} {e:>14.6e} {ratio:>8}\n"));
        }
        out.push_str(&format!("fitted order {:.4} (residual {:.2e})", self.fit.order, self.fit.residual));
        out
    }
}

fn check_resolutions(resolutions: &[usize]) -> Result<()> {
    if resolutions.len() < 3 {
        return Err(Error::TooFewResolutions { needed: 3, got: resolutions.len() });
    }
    if resolutions.iter().any(|&n| n < 8) {
        return Err(Error::InvalidArgument("resolutions must be at least 8".into()));
    }
    Ok(())
}

/// Lifting error at each resolution.
pub fn lifting_study(
    beta: &BetaVector,
    group: &Group2D,
    g: GroupElement,
    f: &AnalyticField,
    resolutions: &[usize],
) -> Result<EquivarianceReport> {
    check_resolutions(resolutions)?;
    let errors = resolutions.iter().map(|&n| lifting_equivariance_error(beta, group, g, f, n)).collect();
    Ok(EquivarianceReport::new(group, g, LayerKind::Lifting, resolutions, errors))
}

/// Group-convolution error (analytic reference) at each resolution.
pub fn groupconv_study(
    input_betas: &[BetaVector],
    bank: &GroupConvBank,
    g: GroupElement,
    f: &AnalyticField,
    resolutions: &[usize],
) -> Result<EquivarianceReport> {
    check_resolutions(resolutions)?;
    let errors = resolutions
        .iter()
        .map(|&n| groupconv_equivariance_error(input_betas, bank, g, f, n, Reference::Analytic))
        .collect::<Result<_>>()?;
    Ok(EquivarianceReport::new(bank.group(), g, LayerKind::GroupConv, resolutions, errors))
}
