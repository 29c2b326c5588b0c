//! Polynomials in the derivative symbols `u = ∂x`, `v = ∂y`, their
//! transformation under `∇ ↦ A⁻¹∇`, and exact application to smooth fields.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group2d::{Group2D, GroupElement};

/// Maximum total degree of a [`PdoPolynomial`].
pub const MAX_DEGREE: usize = 4;

/// Number of monomials `u^a v^b` with `a + b <= 4`.
pub const BASIS_LEN: usize = 15;

/// Exponents of the nine parameterized terms, in β order:
/// `1, u, v, u², uv, v², u²v, uv², u²v²`.
pub const BETA_MONOMIALS: [(usize, usize); 9] =
    [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 1), (1, 2), (2, 2)];

const PRUNE: f64 = 1e-14;

/// Position of `u^a v^b` in graded lexicographic order:
/// `1, u, v, u², uv, v², u³, u²v, ...`.
#[inline]
pub fn monomial_index(a: usize, b: usize) -> usize {
    let d = a + b;
    d * (d + 1) / 2 + b
}

/// Inverse of [`monomial_index`].
pub fn monomial_at(index: usize) -> (usize, usize) {
    let mut d = 0;
    while (d + 1) * (d + 2) / 2 <= index {
        d += 1;
    }
    let b = index - d * (d + 1) / 2;
    (d - b, b)
}

/// Number of monomials of total degree at most `degree`.
#[inline]
pub fn basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Dense bivariate polynomial of bounded total degree in graded lex order.
///
/// Used for expansion and for composed operators whose degree exceeds the
/// degree-4 basis of [`PdoPolynomial`].
#[derive(Clone, Debug, PartialEq)]
pub struct Bivariate {
    degree: usize,
    coeffs: Vec<f64>,
}

impl Bivariate {
    pub fn zero(degree: usize) -> Self {
        Bivariate { degree, coeffs: vec![0.0; basis_len(degree)] }
    }

    pub fn constant(c: f64) -> Self {
        Bivariate { degree: 0, coeffs: vec![c] }
    }

    /// Sums `((a, b), c)` terms into a polynomial of just sufficient degree.
    pub fn from_terms(terms: &[((usize, usize), f64)]) -> Self {
        let degree = terms.iter().map(|((a, b), _)| a + b).max().unwrap_or(0);
        let mut p = Bivariate::zero(degree);
        for &((a, b), c) in terms {
            p.coeffs[monomial_index(a, b)] += c;
        }
        p
    }

    /// `p·u + q·v`.
    pub fn linear(p: f64, q: f64) -> Self {
        Bivariate { degree: 1, coeffs: vec![0.0, p, q] }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a + b > self.degree {
            0.0
        } else {
            self.coeffs[monomial_index(a, b)]
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Nonzero terms as `((a, b), coefficient)`.
    pub fn terms(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, &c)| (monomial_at(i), c))
    }

    /// Zeroes every coefficient with magnitude below `tol`.
    pub fn prune(mut self, tol: f64) -> Self {
        for c in &mut self.coeffs {
            if c.abs() < tol {
                *c = 0.0;
            }
        }
        self
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
        self
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (a, b) = monomial_at(i);
                c * u.powi(a as i32) * v.powi(b as i32)
            })
            .sum()
    }

    /// Applies the operator `Σ c_ab ∂ᵃₓ∂ᵇ_y` to a table of partial derivatives.
    pub fn apply(&self, partials: &Partials) -> f64 {
        assert!(partials.order() >= self.degree, "partials of order {} < {}", partials.order(), self.degree);
        self.coeffs.iter().zip(partials.values()).map(|(c, d)| c * d).sum()
    }

    /// Product truncated to total degree `max_degree`.
    pub fn mul_truncated(&self, rhs: &Bivariate, max_degree: usize) -> Bivariate {
        let degree = (self.degree + rhs.degree).min(max_degree);
        let mut out = Bivariate::zero(degree);
        for (i, &x) in self.coeffs.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let (a1, b1) = monomial_at(i);
            for (j, &y) in rhs.coeffs.iter().enumerate() {
                if y == 0.0 {
                    continue;
                }
                let (a2, b2) = monomial_at(j);
                if a1 + a2 + b1 + b2 <= degree {
                    out.coeffs[monomial_index(a1 + a2, b1 + b2)] += x * y;
                }
            }
        }
        out
    }
}

impl Add<&Bivariate> for &Bivariate {
    type Output = Bivariate;

    fn add(self, rhs: &Bivariate) -> Bivariate {
        let mut out = Bivariate::zero(self.degree.max(rhs.degree));
        for (i, c) in self.coeffs.iter().enumerate() {
            out.coeffs[i] += c;
        }
        for (i, c) in rhs.coeffs.iter().enumerate() {
            out.coeffs[i] += c;
        }
        out
    }
}

impl Mul<&Bivariate> for &Bivariate {
    type Output = Bivariate;

    fn mul(self, rhs: &Bivariate) -> Bivariate {
        self.mul_truncated(rhs, usize::MAX)
    }
}

/// Table of partial derivatives `∂ᵃₓ∂ᵇ_y f(x)` for `a + b <= order`, in
/// graded lex order.
#[derive(Clone, Debug, PartialEq)]
pub struct Partials {
    order: usize,
    values: Vec<f64>,
}

impl Partials {
    pub fn new(order: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), basis_len(order));
        Partials { order, values }
    }

    pub fn zero(order: usize) -> Self {
        Partials { order, values: vec![0.0; basis_len(order)] }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[monomial_index(a, b)]
    }
}

/// A field on the plane with exact partial derivatives.
pub trait SmoothField {
    /// All partials of total order `<= order` at `x`.
    fn partials(&self, x: [f64; 2], order: usize) -> Partials;

    fn value(&self, x: [f64; 2]) -> f64 {
        self.partials(x, 0).values[0]
    }
}

/// The nine coefficients `β₁..β₉` of a canonical operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BetaVector(pub [f64; 9]);

impl BetaVector {
    /// The `i`-th unit vector (zero-based).
    pub fn unit(i: usize) -> Self {
        let mut b = [0.0; 9];
        b[i] = 1.0;
        BetaVector(b)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Index<usize> for BetaVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for BetaVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Real polynomial in `(u, v)` with every monomial of total degree at most 4.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PdoPolynomial {
    coeffs: [f64; BASIS_LEN],
}

impl PdoPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds a polynomial from `((a, b), c)` terms, summing repeats.
    pub fn from_terms<I>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = ((usize, usize), f64)>,
    {
        let mut p = Self::zero();
        for ((a, b), c) in terms {
            if a + b > MAX_DEGREE {
                return Err(Error::BasisOverflow { a, b });
            }
            p.coeffs[monomial_index(a, b)] += c;
        }
        Ok(p)
    }

    pub fn from_bivariate(p: &Bivariate) -> Result<Self> {
        Self::from_terms(p.terms())
    }

    /// `β₁ + β₂u + β₃v + β₄u² + β₅uv + β₆v² + β₇u²v + β₈uv² + β₉u²v²`.
    pub fn canonical(beta: &BetaVector) -> Self {
        let mut p = Self::zero();
        for (&(a, b), &c) in BETA_MONOMIALS.iter().zip(beta.0.iter()) {
            p.coeffs[monomial_index(a, b)] = c;
        }
        p
    }

    pub fn coeff(&self, a: usize, b: usize) -> f64 {
        if a + b > MAX_DEGREE {
            0.0
        } else {
            self.coeffs[monomial_index(a, b)]
        }
    }

    /// The 15 coefficients in graded lex order.
    pub fn coeffs(&self) -> &[f64; BASIS_LEN] {
        &self.coeffs
    }

    pub fn terms(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, &c)| (monomial_at(i), c))
    }

    /// True if supported only on the nine canonical monomials.
    pub fn is_canonical(&self) -> bool {
        self.terms().all(|(m, _)| BETA_MONOMIALS.contains(&m))
    }

    pub fn to_bivariate(&self) -> Bivariate {
        Bivariate { degree: MAX_DEGREE, coeffs: self.coeffs.to_vec() }
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.to_bivariate().eval(u, v)
    }

    /// Substitutes `(u, v)ᵀ ↦ A⁻¹(u, v)ᵀ` and collects terms.
    ///
    /// For an orthogonal `A` the result is the operator steered by `A`:
    /// applying it to `f` equals applying `self` in the frame rotated by `A`.
    pub fn transform(&self, a: &Matrix2<f64>) -> PdoPolynomial {
        let inv = a.try_inverse().expect("transform matrix must be invertible");
        let subst = substitution_table(&inv);
        let mut out = [0.0; BASIS_LEN];
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(subst[i].coeffs.iter()) {
                *o += c * e;
            }
        }
        PdoPolynomial { coeffs: out }
    }

    /// [`transform`](Self::transform) by the matrix of a group element.
    pub fn transform_by(&self, group: &Group2D, g: GroupElement) -> PdoPolynomial {
        self.transform(&group.matrix(g))
    }

    /// Evaluates `Σ c_ab ∂ᵃₓ∂ᵇ_y f` at `x`.
    pub fn apply<F: SmoothField + ?Sized>(&self, f: &F, x: [f64; 2]) -> f64 {
        let partials = f.partials(x, MAX_DEGREE);
        self.coeffs.iter().zip(partials.values()).map(|(c, d)| c * d).sum()
    }
}

impl Add for PdoPolynomial {
    type Output = PdoPolynomial;

    fn add(mut self, rhs: PdoPolynomial) -> PdoPolynomial {
        for (a, b) in self.coeffs.iter_mut().zip(rhs.coeffs.iter()) {
            *a += b;
        }
        self
    }
}

/// For every basis monomial `u^a v^b`, the expansion of
/// `(p₁₁u + p₁₂v)^a (p₂₁u + p₂₂v)^b`, pruned of rounding residue.
fn substitution_table(p: &Matrix2<f64>) -> Vec<Bivariate> {
    let lu = Bivariate::linear(p[(0, 0)], p[(0, 1)]);
    let lv = Bivariate::linear(p[(1, 0)], p[(1, 1)]);
    let mut pow_u = vec![Bivariate::constant(1.0)];
    let mut pow_v = vec![Bivariate::constant(1.0)];
    for k in 1..=MAX_DEGREE {
        pow_u.push(&pow_u[k - 1] * &lu);
        pow_v.push(&pow_v[k - 1] * &lv);
    }
    (0..BASIS_LEN)
        .map(|i| {
            let (a, b) = monomial_at(i);
            let e = (&pow_u[a] * &pow_v[b]).prune(PRUNE);
            let mut full = Bivariate::zero(MAX_DEGREE);
            for (j, c) in e.coeffs.iter().enumerate() {
                full.coeffs[j] = *c;
            }
            full
        })
        .collect()
}

/// `canonical_poly`: the canonical operator for `beta`.
pub fn canonical_poly(beta: &BetaVector) -> PdoPolynomial {
    PdoPolynomial::canonical(beta)
}

/// `transform_poly`: `p` steered by group element `g`.
pub fn transform_poly(p: &PdoPolynomial, group: &Group2D, g: GroupElement) -> PdoPolynomial {
    p.transform_by(group, g)
}

/// `analytic_apply`: exact value of the operator `p` applied to `f` at `x`.
pub fn analytic_apply<F: SmoothField + ?Sized>(p: &PdoPolynomial, f: &F, x: [f64; 2]) -> f64 {
    p.apply(f, x)
}

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if exp < -4 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, x);
        let (mantissa, e) = s.split_once('e').unwrap();
        format!("{}e{}", trim(mantissa.to_string()), e)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, x))
    }
}

fn superscript(k: usize) -> &'static str {
    ["", "", "²", "³", "⁴"][k]
}

impl fmt::Display for PdoPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for ((a, b), c) in self.terms() {
            let sign = if c < 0.0 { "-" } else { "+" };
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            write!(f, "{}", format_significant(c.abs(), 6))?;
            if a + b > 0 {
                write!(f, "·")?;
                if a > 0 {
                    write!(f, "u{}", superscript(a))?;
                }
                if b > 0 {
                    write!(f, "v{}", superscript(b))?;
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equiv::field::PolynomialField;
    use crate::group2d::Group2D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monomial_indexing_roundtrip() {
        for i in 0..45 {
            let (a, b) = monomial_at(i);
            assert_eq!(monomial_index(a, b), i);
        }
        assert_eq!(monomial_at(3), (2, 0));
        assert_eq!(monomial_at(4), (1, 1));
        assert_eq!(monomial_at(14), (0, 4));
    }

    #[test]
    fn canonical_polynomials() {
        let one = canonical_poly(&BetaVector::unit(0));
        assert_eq!(one.terms().collect::<Vec<_>>(), vec![((0, 0), 1.0)]);
        let u = canonical_poly(&BetaVector::unit(1));
        assert_eq!(u.terms().collect::<Vec<_>>(), vec![((1, 0), 1.0)]);
        let all = canonical_poly(&BetaVector([1.0; 9]));
        let mut monos: Vec<_> = all
            .terms()
            .map(|(m, c)| {
                assert_eq!(c, 1.0);
                m
            })
            .collect();
        monos.sort();
        let mut expected = BETA_MONOMIALS.to_vec();
        expected.sort();
        assert_eq!(monos, expected);
        assert!(all.is_canonical());
    }

    #[test]
    fn transforms_by_quarter_turn() {
        let c4 = Group2D::new(4, false).unwrap();
        let r1 = GroupElement::rotation(1);
        let u = canonical_poly(&BetaVector::unit(1));
        assert_eq!(u.transform_by(&c4, GroupElement::IDENTITY), u);
        let v = u.transform_by(&c4, r1);
        assert_eq!(v.terms().collect::<Vec<_>>(), vec![((0, 1), 1.0)]);
        let uv = canonical_poly(&BetaVector::unit(4)).transform_by(&c4, r1);
        assert_eq!(uv.terms().collect::<Vec<_>>(), vec![((1, 1), -1.0)]);
    }

    #[test]
    fn eighth_turn_creates_quartic_terms() {
        let c8 = Group2D::new(8, false).unwrap();
        let p = canonical_poly(&BetaVector::unit(8)).transform_by(&c8, GroupElement::rotation(1));
        // u²v² under a 45° rotation: (u+v)²(v-u)²/4 = (v²-u²)²/4.
        assert!((p.coeff(4, 0) - 0.25).abs() < 1e-12);
        assert!((p.coeff(0, 4) - 0.25).abs() < 1e-12);
        assert!((p.coeff(2, 2) + 0.5).abs() < 1e-12);
        assert_eq!(p.coeff(3, 1), 0.0);
    }

    #[test]
    fn transform_matches_numeric_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let group = Group2D::new(8, true).unwrap();
        for _ in 0..20 {
            let beta = BetaVector(std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
            let p = canonical_poly(&beta);
            for &g in group.elements() {
                let q = p.transform_by(&group, g);
                let inv = group.matrix(g).try_inverse().unwrap();
                for _ in 0..20 {
                    let (u, v): (f64, f64) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
                    let su = inv[(0, 0)] * u + inv[(0, 1)] * v;
                    let sv = inv[(1, 0)] * u + inv[(1, 1)] * v;
                    assert!((q.eval(u, v) - p.eval(su, sv)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn overflow_is_rejected() {
        assert!(matches!(PdoPolynomial::from_terms([((3, 2), 1.0)]), Err(Error::BasisOverflow { a: 3, b: 2 })));
        assert!(PdoPolynomial::from_terms([((4, 0), 1.0), ((0, 0), 2.0)]).is_ok());
    }

    #[test]
    fn apply_to_polynomial_fields() {
        let field = PolynomialField::from_terms(&[((2, 0), 1.0), ((0, 2), 1.0)]);
        let laplacian = PdoPolynomial::from_terms([((2, 0), 1.0), ((0, 2), 1.0)]).unwrap();
        for x in [[0.0, 0.0], [0.3, -2.0], [5.0, 1.0]] {
            assert!((analytic_apply(&laplacian, &field, x) - 4.0).abs() < 1e-12);
            let identity = canonical_poly(&BetaVector::unit(0));
            assert_eq!(analytic_apply(&identity, &field, x), field.value(x));
        }
    }

    #[test]
    fn display_is_readable() {
        let p = PdoPolynomial::from_terms([((0, 0), 1.5), ((1, 0), -std::f64::consts::FRAC_1_SQRT_2), ((2, 1), 2.0)])
            .unwrap();
        assert_eq!(p.to_string(), "1.5 - 0.707107·u + 2·u²v");
        assert_eq!(PdoPolynomial::zero().to_string(), "0");
        assert_eq!(format_significant(1234567.0, 6), "1.23457e6");
        assert_eq!(format_significant(0.000012345678, 6), "1.23457e-5");
    }
}
