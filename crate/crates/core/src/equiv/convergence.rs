use serde::Serialize;

/// Errors below this are treated as exact (round-off only).
pub const UNDERFLOW: f64 = 1e-13;

/// Least-squares fit of `log(error) = order · log(h) + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderFit {
    /// Fitted slope; `+∞` when the errors underflow.
    pub order: f64,
    /// RMS residual of the fit in natural-log units.
    pub residual: f64,
}

impl OrderFit {
    pub fn is_exact(&self) -> bool {
        self.order.is_infinite()
    }
}

/// Fits the convergence order, ignoring points whose error underflows.
/// Fewer than two usable points means the scheme is exact on this input.
pub fn fit_order(hs: &[f64], errors: &[f64]) -> OrderFit {
    assert_eq!(hs.len(), errors.len());
    let pts: Vec<(f64, f64)> =
        hs.iter().zip(errors).filter(|(_, &e)| e >= UNDERFLOW).map(|(h, e)| (h.ln(), e.ln())).collect();
    if pts.len() < 2 {
        return OrderFit { order: f64::INFINITY, residual: 0.0 };
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let order = sxy / sxx;
    let intercept = my - order * mx;
    let residual = (pts.iter().map(|p| (p.1 - order * p.0 - intercept).powi(2)).sum::<f64>() / n).sqrt();
    OrderFit { order, residual }
}

/// Successive ratios `error[i] / error[i+1]`.
pub fn error_ratios(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}
