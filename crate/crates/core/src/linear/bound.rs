use serde::Serialize;

use crate::error::{Error, Result};
use crate::tabular::SorConfig;

/// Constants of the finite-time error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams {
    /// Almost-sure bound on the noise sequence.
    pub m_tilde: f64,
    pub h: f64,
    pub t0: f64,
    /// Mixing lag of the index process.
    pub tau: f64,
    pub delta: f64,
    pub gamma_prime: f64,
    /// Projection radius.
    pub z: f64,
    /// Feature dimension.
    pub d: f64,
    /// Lower bound on the per-coordinate visitation probability.
    pub sigma: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("M̃", self.m_tilde),
            ("H", self.h),
            ("t0", self.t0),
            ("τ", self.tau),
            ("Z", self.z),
            ("d", self.d),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("δ", self.delta), ("γ'", self.gamma_prime), ("σ", self.sigma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParams(format!("{name} = {v} not in (0, 1)")));
            }
        }
        if self.t0 < f64::max(4.0 * self.h, self.tau) {
            return Err(Error::InvalidParams(format!(
                "t0 = {} below max(4H, τ) = {}",
                self.t0,
                f64::max(4.0 * self.h, self.tau)
            )));
        }
        Ok(())
    }

    /// `H ≥ 2 / (σ(1 - γ'))`.
    pub fn certified(&self) -> bool {
        self.h >= 2.0 / (self.sigma * (1.0 - self.gamma_prime)) * (1.0 - 1e-12)
    }

    /// `C_ξ = 4M̃ √(H ln(2d/δ)) / (1 - γ')`.
    pub fn c_xi(&self) -> f64 {
        4.0 * self.m_tilde / (1.0 - self.gamma_prime) * (self.h * (2.0 * self.d / self.delta).ln()).sqrt()
    }

    /// `C'_ξ = 4Z(τ + t0) / (1 - γ')`.
    pub fn c_xi_prime(&self) -> f64 {
        4.0 * self.z * (self.tau + self.t0) / (1.0 - self.gamma_prime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundVariant {
    /// `4M̃√(H ln(1/δ)) / ((1-δ)√(T+t0)) + 4Z(τ+t0) / ((1-γ')(T+t0))`.
    Statement,
    /// `C_ξ / √(T+t0) + C'_ξ / (T+t0)`.
    Proof,
}

/// Right-hand side of the high-probability bound on `‖θ_T - θ*‖`.
pub fn finite_time_bound(p: &BoundParams, t: f64, variant: BoundVariant) -> Result<f64> {
    p.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParams(format!("step count {t} is negative")));
    }
    let n = t + p.t0;
    Ok(match variant {
        BoundVariant::Statement => {
            4.0 * p.m_tilde * (p.h * (1.0 / p.delta).ln()).sqrt() / ((1.0 - p.delta) * n.sqrt())
                + 4.0 * p.z * (p.tau + p.t0) / ((1.0 - p.gamma_prime) * n)
        }
        BoundVariant::Proof => p.c_xi() / n.sqrt() + p.c_xi_prime() / n,
    })
}

/// A bound on `|M_i(t)|` valid whenever `‖θ‖₂ ≤ Z`, features have unit
/// `ℓ1` norm at most one and rewards are bounded by `rmax`.
pub fn noise_bound(rmax: f64, z: f64, cfg: &SorConfig) -> f64 {
    let target = cfg.w * (rmax + cfg.gamma * z) + (cfg.w - 1.0).abs() * z;
    2.0 * target
}

/// Smallest slack found for each step-size inequality.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub horizon: usize,
    pub pairs_checked: u64,
    /// `min ((h+1+t0)/(t+1+t0))^H - β_{h,t}`.
    pub product_slack: f64,
    /// `min 2H/(t+1+t0) - Σ_h β̃²_{h,t}`.
    pub square_sum_slack: f64,
    /// `min 1/(√γ' (t+1+t0)^Γ) - Σ_h β̃_{h,t} / (h+t0)^Γ`.
    pub weighted_sum_slack: f64,
}

impl LemmaReport {
    pub fn all_hold(&self) -> bool {
        self.product_slack >= 0.0 && self.square_sum_slack >= 0.0 && self.weighted_sum_slack >= 0.0
    }
}

/// Evaluates `β_{h,t} = Π_{l=h+1}^{t} (1 - α_l)` and `β̃_{h,t} = α_h β_{h,t}`
/// by direct products for all `τ ≤ h ≤ t ≤ horizon` and checks the three
/// step-size inequalities used by the bound.
pub fn lemma_sequence_check(
    h: f64,
    t0: f64,
    tau: usize,
    gamma_prime: f64,
    big_gamma: f64,
    horizon: usize,
) -> Result<LemmaReport> {
    if !(h > 0.0) || t0 < f64::max(4.0 * h, tau as f64) || tau == 0 {
        return Err(Error::InvalidParams(format!("need H > 0, τ ≥ 1, t0 ≥ max(4H, τ); got H = {h}, t0 = {t0}, τ = {tau}")));
    }
    if !(gamma_prime > 0.0 && gamma_prime < 1.0) || !(big_gamma > 0.0 && big_gamma < 1.0) {
        return Err(Error::InvalidParams(format!("γ' = {gamma_prime} and Γ = {big_gamma} must lie in (0, 1)")));
    }
    if h * (1.0 - gamma_prime.sqrt()) < 1.0 {
        return Err(Error::InvalidParams(format!("H(1 - √γ') = {} below 1", h * (1.0 - gamma_prime.sqrt()))));
    }
    let alpha = |l: usize| h / (l as f64 + t0);
    let ln_shift: Vec<f64> = (0..=horizon + 1).map(|k| (k as f64 + 1.0 + t0).ln()).collect();
    let weight: Vec<f64> = (0..=horizon).map(|k| (k as f64 + t0).powf(-big_gamma)).collect();
    let sqrt_gp = gamma_prime.sqrt();
    let within = |lhs: f64, rhs: f64| lhs <= rhs * (1.0 + 1e-12);

    let mut report = LemmaReport {
        horizon,
        pairs_checked: 0,
        product_slack: f64::INFINITY,
        square_sum_slack: f64::INFINITY,
        weighted_sum_slack: f64::INFINITY,
    };
    for t in tau..=horizon {
        let mut beta = 1.0;
        let mut sum_sq = 0.0;
        let mut weighted = 0.0;
        for hh in (tau..=t).rev() {
            if hh < t {
                beta *= 1.0 - alpha(hh + 1);
            }
            let bound = (h * (ln_shift[hh] - ln_shift[t])).exp();
            if !within(beta, bound) {
                return Err(Error::InequalityViolated(format!("β_{{{hh},{t}}} = {beta:e} > {bound:e}")));
            }
            report.product_slack = report.product_slack.min(bound - beta);
            let bt = alpha(hh) * beta;
            sum_sq += bt * bt;
            weighted += bt * weight[hh];
            report.pairs_checked += 1;
        }
        let sq_bound = 2.0 * h / (t as f64 + 1.0 + t0);
        if !within(sum_sq, sq_bound) {
            return Err(Error::InequalityViolated(format!("Σβ̃² at t = {t}: {sum_sq:e} > {sq_bound:e}")));
        }
        report.square_sum_slack = report.square_sum_slack.min(sq_bound - sum_sq);
        let w_bound = 1.0 / (sqrt_gp * (t as f64 + 1.0 + t0).powf(big_gamma));
        if !within(weighted, w_bound) {
            return Err(Error::InequalityViolated(format!("weighted sum at t = {t}: {weighted:e} > {w_bound:e}")));
        }
        report.weighted_sum_slack = report.weighted_sum_slack.min(w_bound - weighted);
    }
    Ok(report)
}
