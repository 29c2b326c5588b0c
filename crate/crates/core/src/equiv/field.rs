//! Test fields with closed-form derivatives of every order.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;

use crate::pdo::{basis_len, monomial_at, monomial_index, Bivariate, Partials, SmoothField};

/// `weight · exp(-½ (x - center)ᵀ P (x - center))` with `P` symmetric positive definite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBump {
    pub weight: f64,
    pub center: Vector2<f64>,
    pub inv_cov: Matrix2<f64>,
}

impl GaussianBump {
    pub fn isotropic(weight: f64, center: [f64; 2], sigma: f64) -> Self {
        let p = 1.0 / (sigma * sigma);
        GaussianBump { weight, center: Vector2::new(center[0], center[1]), inv_cov: Matrix2::new(p, 0.0, 0.0, p) }
    }

    /// Bump with standard deviations `sigmas` along axes rotated by `angle`.
    pub fn anisotropic(weight: f64, center: [f64; 2], sigmas: [f64; 2], angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let rot = Matrix2::new(c, -s, s, c);
        let diag = Matrix2::new(1.0 / (sigmas[0] * sigmas[0]), 0.0, 0.0, 1.0 / (sigmas[1] * sigmas[1]));
        GaussianBump { weight, center: Vector2::new(center[0], center[1]), inv_cov: rot * diag * rot.transpose() }
    }

    fn accumulate(&self, x: [f64; 2], order: usize, out: &mut [f64]) {
        let d = Vector2::new(x[0], x[1]) - self.center;
        let pd = self.inv_cov * d;
        let scale = self.weight * (-0.5 * d.dot(&pd)).exp();
        if scale == 0.0 {
            return;
        }
        // Taylor coefficients of exp(T(δ)), T(δ) = gᵀδ - ½δᵀPδ, via
        // a·E[a,b] = Σ i·T[i,j]·E[a-i,b-j] (and the analogue in b when a = 0).
        let (t10, t01) = (-pd[0], -pd[1]);
        let t20 = -0.5 * self.inv_cov[(0, 0)];
        let t11 = -0.5 * (self.inv_cov[(0, 1)] + self.inv_cov[(1, 0)]);
        let t02 = -0.5 * self.inv_cov[(1, 1)];
        let mut e = vec![0.0; basis_len(order)];
        e[0] = 1.0;
        let get = |e: &[f64], a: isize, b: isize| -> f64 {
            if a < 0 || b < 0 {
                0.0
            } else {
                e[monomial_index(a as usize, b as usize)]
            }
        };
        for i in 1..e.len() {
            let (a, b) = monomial_at(i);
            let (ai, bi) = (a as isize, b as isize);
            e[i] = if a >= 1 {
                (t10 * get(&e, ai - 1, bi) + 2.0 * t20 * get(&e, ai - 2, bi) + t11 * get(&e, ai - 1, bi - 1)) / a as f64
            } else {
                (t01 * get(&e, 0, bi - 1) + 2.0 * t02 * get(&e, 0, bi - 2)) / b as f64
            };
        }
        for (i, (o, c)) in out.iter_mut().zip(e.iter()).enumerate() {
            let (a, b) = monomial_at(i);
            *o += scale * c * factorial(a) * factorial(b);
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Weighted sum of anisotropic Gaussian bumps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalyticField {
    pub components: Vec<GaussianBump>,
}

impl AnalyticField {
    pub fn new(components: Vec<GaussianBump>) -> Self {
        AnalyticField { components }
    }

    pub fn constant(c: f64) -> Self {
        // A bump with a vanishing inverse covariance is constant.
        AnalyticField::new(vec![GaussianBump { weight: c, center: Vector2::zeros(), inv_cov: Matrix2::zeros() }])
    }

    /// Random mixture of `count` bumps centered in `[0.25, 0.75]²`, each with
    /// standard deviations in `[min_sigma, 2·min_sigma]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, count: usize, min_sigma: f64) -> Self {
        let components = (0..count)
            .map(|_| {
                let weight = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let center = [rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75)];
                let sigmas = [rng.gen_range(min_sigma..2.0 * min_sigma), rng.gen_range(min_sigma..2.0 * min_sigma)];
                GaussianBump::anisotropic(weight, center, sigmas, rng.gen_range(0.0..std::f64::consts::PI))
            })
            .collect();
        AnalyticField { components }
    }

    /// Pushforward by `a` about the origin: `x ↦ f(a⁻¹x)` for orthogonal `a`.
    pub fn rotated(&self, a: &Matrix2<f64>) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| GaussianBump { weight: c.weight, center: a * c.center, inv_cov: a * c.inv_cov * a.transpose() })
            .collect();
        AnalyticField { components }
    }

    /// `x ↦ f(x - t)`.
    pub fn translated(&self, t: [f64; 2]) -> Self {
        let t = Vector2::new(t[0], t[1]);
        let components = self.components.iter().map(|c| GaussianBump { center: c.center + t, ..*c }).collect();
        AnalyticField { components }
    }

    /// Pushforward by `a` about `pivot`: `x ↦ f(pivot + a⁻¹(x - pivot))`.
    pub fn rotated_about(&self, a: &Matrix2<f64>, pivot: [f64; 2]) -> Self {
        self.translated([-pivot[0], -pivot[1]]).rotated(a).translated(pivot)
    }
}

impl SmoothField for AnalyticField {
    fn partials(&self, x: [f64; 2], order: usize) -> Partials {
        let mut out = vec![0.0; basis_len(order)];
        for c in &self.components {
            c.accumulate(x, order, &mut out);
        }
        Partials::new(order, out)
    }
}

/// A polynomial field `Σ c_ab x^a y^b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialField(pub Bivariate);

impl PolynomialField {
    pub fn from_terms(terms: &[((usize, usize), f64)]) -> Self {
        PolynomialField(Bivariate::from_terms(terms))
    }
}

impl SmoothField for PolynomialField {
    fn partials(&self, x: [f64; 2], order: usize) -> Partials {
        let mut out = Partials::zero(order);
        for i in 0..basis_len(order) {
            let (da, db) = monomial_at(i);
            let mut s = 0.0;
            for ((a, b), c) in self.0.terms() {
                if a >= da && b >= db {
                    let fa: f64 = ((a - da + 1)..=a).map(|k| k as f64).product();
                    let fb: f64 = ((b - db + 1)..=b).map(|k| k as f64).product();
                    s += c * fa * fb * x[0].powi((a - da) as i32) * x[1].powi((b - db) as i32);
                }
            }
            out.values_mut()[i] = s;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdo::{analytic_apply, canonical_poly, BetaVector, PdoPolynomial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of the order-`k` table, used to check order `k+1`.
    fn fd_check(field: &AnalyticField, x: [f64; 2], order: usize) {
        let eps = 1e-5;
        let hi = field.partials(x, order);
        let px = field.partials([x[0] + eps, x[1]], order - 1);
        let mx = field.partials([x[0] - eps, x[1]], order - 1);
        let py = field.partials([x[0], x[1] + eps], order - 1);
        let my = field.partials([x[0], x[1] - eps], order - 1);
        for i in 0..basis_len(order - 1) {
            let (a, b) = monomial_at(i);
            let dx = (px.values()[i] - mx.values()[i]) / (2.0 * eps);
            let dy = (py.values()[i] - my.values()[i]) / (2.0 * eps);
            let scale = 1.0 + hi.get(a + 1, b).abs();
            assert!((dx - hi.get(a + 1, b)).abs() / scale < 1e-5, "d/dx of ({a},{b})");
            let scale = 1.0 + hi.get(a, b + 1).abs();
            assert!((dy - hi.get(a, b + 1)).abs() / scale < 1e-5, "d/dy of ({a},{b})");
        }
    }

    #[test]
    fn gaussian_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = AnalyticField::random(&mut rng, 3, 0.3);
        for x in [[0.4, 0.6], [0.1, 0.2], [0.8, 0.5]] {
            for order in 1..=8 {
                fd_check(&field, x, order);
            }
        }
    }

    #[test]
    fn unit_gaussian_gradient() {
        let field = AnalyticField::new(vec![GaussianBump::isotropic(1.0, [0.0, 0.0], 1.0)]);
        let dx = canonical_poly(&BetaVector::unit(1));
        let got = analytic_apply(&dx, &field, [1.0, 0.0]);
        assert!((got + (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn isotropic_bump_at_origin_is_rotation_invariant() {
        let field = AnalyticField::new(vec![GaussianBump::isotropic(1.0, [0.0, 0.0], 0.4)]);
        let a = Matrix2::new(0.6, -0.8, 0.8, 0.6);
        let rotated = field.rotated(&a);
        for (c, r) in field.components.iter().zip(rotated.components.iter()) {
            assert!((c.center - r.center).norm() < 1e-15);
            assert!((c.inv_cov - r.inv_cov).norm() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_moves_center() {
        let field = AnalyticField::new(vec![GaussianBump::isotropic(1.0, [0.3, 0.0], 0.2)]);
        let r = field.rotated(&Matrix2::new(0.0, -1.0, 1.0, 0.0));
        assert!((r.components[0].center - Vector2::new(0.0, 0.3)).norm() < 1e-15);
        let x = [0.1, 0.25];
        assert!((r.value(x) - field.value([x[1], -x[0]])).abs() < 1e-15);
    }

    #[test]
    fn rotation_about_pivot_is_pushforward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let field = AnalyticField::random(&mut rng, 2, 0.15);
        let (s, c) = 0.7f64.sin_cos();
        let a = Matrix2::new(c, -s, s, c);
        let rotated = field.rotated_about(&a, [0.5, 0.5]);
        let x = Vector2::new(0.3, 0.65);
        let pre = Vector2::new(0.5, 0.5) + a.transpose() * (x - Vector2::new(0.5, 0.5));
        assert!((rotated.value([x[0], x[1]]) - field.value([pre[0], pre[1]])).abs() < 1e-14);
    }

    #[test]
    fn constant_field_has_no_derivatives() {
        let f = AnalyticField::constant(2.5);
        let p = f.partials([0.3, 0.7], 4);
        assert_eq!(p.values()[0], 2.5);
        assert!(p.values()[1..].iter().all(|&d| d == 0.0));
    }

    #[test]
    fn polynomial_field_partials() {
        let f = PolynomialField::from_terms(&[((3, 0), 1.0), ((1, 1), 2.0)]);
        let p = f.partials([2.0, 3.0], 3);
        assert_eq!(p.get(0, 0), 8.0 + 12.0);
        assert_eq!(p.get(2, 0), 12.0);
        assert_eq!(p.get(1, 1), 2.0);
        assert_eq!(p.get(3, 0), 6.0);
        let laplacian = PdoPolynomial::from_terms([((2, 0), 1.0), ((0, 2), 1.0)]).unwrap();
        let q = PolynomialField::from_terms(&[((2, 0), 1.0), ((0, 2), 1.0)]);
        assert_eq!(analytic_apply(&laplacian, &q, [0.7, -0.2]), 4.0);
    }
}
