//! Markovian short-rate models: discount matrices, bond prices, forward rates
//! and calibration of the rate model to an observed zero-coupon curve.

use serde::{Deserialize, Serialize};

use crate::emfit::{em_fit, FitConfig, FitResult, WeightedSample};
use crate::error::{Error, Result};
use crate::matrix::{
    check_intensity, diag, expm, ones, prod_integral, Matrix, PiecewiseMatrix, Vector, ROW_SUM_TOL,
};
use crate::phasetype::PhaseType;

/// Zero-coupon prices `B(0, T_i)`, optionally with discrete forward rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondCurve {
    pub maturities: Vec<f64>,
    pub prices: Vec<f64>,
    pub forwards: Option<Vec<f64>>,
}

impl BondCurve {
    pub fn new(maturities: Vec<f64>, prices: Vec<f64>, forwards: Option<Vec<f64>>) -> Result<Self> {
        if maturities.is_empty() || maturities.len() != prices.len() {
            return Err(Error::domain("curve needs one price per maturity"));
        }
        if maturities[0] <= 0.0 || maturities.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("maturities must be positive and strictly increasing"));
        }
        if let Some(i) = prices.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::domain(format!(
                "price {} at maturity {} is not positive",
                prices[i], maturities[i]
            )));
        }
        if let Some(f) = &forwards {
            if f.len() != prices.len() || f.iter().any(|&x| !(x > -1.0)) {
                return Err(Error::domain("forward rates must match maturities and exceed -1"));
            }
        }
        Ok(Self {
            maturities,
            prices,
            forwards,
        })
    }
}

/// `r(u) = r_{X(u)}(u)` with `X` a Markov jump process.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortRateModel {
    intensity: PiecewiseMatrix,
    /// `p × 1` column of state-wise rates.
    rates: PiecewiseMatrix,
    initial: Vector,
    rho: f64,
}

impl ShortRateModel {
    pub fn new(intensity: PiecewiseMatrix, rates: PiecewiseMatrix, initial: Vector, rho: f64) -> Result<Self> {
        let (p, q) = intensity.shape();
        if p != q || rates.shape() != (p, 1) || initial.len() != p {
            return Err(Error::structure(format!(
                "rate model: intensity {:?}, rates {:?}, initial {}",
                intensity.shape(),
                rates.shape(),
                initial.len()
            )));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::domain(format!("rho = {rho} must be nonnegative")));
        }
        for m in intensity.values() {
            check_intensity(m, ROW_SUM_TOL)?;
        }
        for r in rates.values() {
            if let Some(x) = r.iter().find(|&&x| x < -rho - 1e-12) {
                return Err(Error::domain(format!("rate {x} is below -rho = {}", -rho)));
            }
        }
        if initial.iter().any(|&x| !(x >= 0.0)) || (initial.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::domain("initial distribution must be a probability vector"));
        }
        Ok(Self {
            intensity,
            rates,
            initial,
            rho,
        })
    }

    /// Constant intensity and rates on `[0, ∞)`.
    pub fn homogeneous(intensity: Matrix, rates: Vector, initial: Vector, rho: f64) -> Result<Self> {
        let p = rates.len();
        Self::new(
            PiecewiseMatrix::constant(intensity),
            PiecewiseMatrix::constant(Matrix::from_column_slice(p, 1, rates.as_slice())),
            initial,
            rho,
        )
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn intensity(&self) -> &PiecewiseMatrix {
        &self.intensity
    }

    pub fn rates(&self) -> &PiecewiseMatrix {
        &self.rates
    }

    pub fn initial(&self) -> &Vector {
        &self.initial
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_homogeneous(&self) -> bool {
        self.intensity.is_constant() && self.rates.is_constant()
    }

    /// `Δ(r(t))` as a piecewise matrix.
    pub fn rate_diag(&self) -> Result<PiecewiseMatrix> {
        self.rates.map(|r| diag(&r.column(0).into_owned()))
    }

    /// `Λ(t) − m Δ(r(t))`.
    pub fn discount_generator(&self, power: u32) -> Result<PiecewiseMatrix> {
        let m = power as f64;
        self.intensity
            .zip_with(&self.rates, |l, r| l - diag(&r.column(0).into_owned()) * m)
    }
}

/// `D^{(m)}(s, t) = ∏_s^t (I + [Λ(u) − mΔ(r(u))] du)`.
pub fn discount_matrix(m: &ShortRateModel, s: f64, t: f64, power: u32) -> Result<Matrix> {
    prod_integral(&m.discount_generator(power)?, s, t)
}

/// `B(t, T) = e_i' D(t, T) e`, or `π D(0, T) e` when no state is given.
pub fn bond_price(m: &ShortRateModel, t: f64, maturity: f64, state: Option<usize>) -> Result<f64> {
    if t > maturity {
        return Err(Error::domain(format!("t = {t} exceeds maturity {maturity}")));
    }
    let d = discount_matrix(m, t, maturity, 1)?;
    let v = d * ones(m.dim());
    weight_by_state(m, &v, t, state)
}

fn weight_by_state(m: &ShortRateModel, v: &Vector, t: f64, state: Option<usize>) -> Result<f64> {
    match state {
        Some(i) if i < m.dim() => Ok(v[i]),
        Some(i) => Err(Error::domain(format!("state {i} out of range"))),
        None if t == 0.0 => Ok(m.initial.dot(v)),
        None => Err(Error::domain("a state is required for t > 0")),
    }
}

/// Prices `π D(0, T_i) e` for increasing maturities, reusing the running product.
pub fn bond_prices(m: &ShortRateModel, maturities: &[f64]) -> Result<Vec<f64>> {
    let g = m.discount_generator(1)?;
    let mut row = m.initial.transpose();
    let mut last = 0.0;
    let mut out = Vec::with_capacity(maturities.len());
    for &t in maturities {
        if t < last {
            return Err(Error::domain("maturities must be increasing"));
        }
        row = row * prod_integral(&g, last, t)?;
        last = t;
        out.push(row.sum());
    }
    Ok(out)
}

/// Continuously compounded zero rate `−log B(0, T) / T`.
pub fn zero_yield(m: &ShortRateModel, maturity: f64) -> Result<f64> {
    if !(maturity > 0.0) {
        return Err(Error::domain("yield needs a positive maturity"));
    }
    Ok(-bond_price(m, 0.0, maturity, None)?.ln() / maturity)
}

/// The absorption time whose survival function is `e^{−ρ(T−t)} B(t, T)`.
pub fn discount_phase_type(m: &ShortRateModel, t: f64, state: Option<usize>) -> Result<PhaseType> {
    let rho = m.rho;
    let g = m
        .discount_generator(1)?
        .map(|x| x - Matrix::identity(x.nrows(), x.ncols()) * rho)?;
    let g = if t == 0.0 && g.start() == 0.0 {
        g
    } else {
        let shifted = g.shift(t)?;
        if shifted.start() > 0.0 {
            return Err(Error::domain(format!("model not defined at t = {t}")));
        }
        shifted.restrict(0.0, shifted.end())?
    };
    let initial = match state {
        Some(i) if i < m.dim() => {
            let mut e = Vector::zeros(m.dim());
            e[i] = 1.0;
            e
        }
        Some(i) => return Err(Error::domain(format!("state {i} out of range"))),
        None if t == 0.0 => m.initial.clone(),
        None => return Err(Error::domain("a state is required for t > 0")),
    };
    PhaseType::new(initial, g)
}

/// Instantaneous forward rate `f(t, T)`: the hazard of the discount
/// absorption time at `T − t`, minus ρ.
pub fn forward_rate(m: &ShortRateModel, t: f64, maturity: f64, state: Option<usize>) -> Result<f64> {
    if t > maturity {
        return Err(Error::domain(format!("t = {t} exceeds maturity {maturity}")));
    }
    let d = discount_phase_type(m, t, state)?;
    Ok(d.hazard(maturity - t)? - m.rho)
}

/// Smallest `ρ ≥ 0` making `e^{−ρT} B(0, T)` a survival function on the curve.
pub fn rho_from_prices(curve: &BondCurve) -> Result<f64> {
    if let Some(i) = curve.prices.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::domain(format!("nonpositive price at maturity {}", curve.maturities[i])));
    }
    let rho = match &curve.forwards {
        Some(f) => f
            .iter()
            .map(|&x| -(1.0 + x).ln())
            .fold(f64::NEG_INFINITY, f64::max),
        None => curve
            .maturities
            .iter()
            .zip(&curve.prices)
            .map(|(&t, &p)| p.ln() / t)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(rho.max(0.0))
}

/// Where the probability mass of a maturity cell is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassPlacement {
    /// Middle of `(T_{i−1}, T_i]`.
    #[default]
    Midpoint,
    /// Right end `T_i`.
    Right,
}

/// Turns scaled prices into a histogram sample: cell masses
/// `S(T_{i−1}) − S(T_i)` with `S(0) = 1`, plus a censored point at the last
/// maturity carrying `S(T_n)`.
pub fn prices_to_survival_sample(curve: &BondCurve, rho: f64, placement: MassPlacement) -> Result<WeightedSample> {
    let scaled: Vec<f64> = curve
        .maturities
        .iter()
        .zip(&curve.prices)
        .map(|(&t, &p)| (-rho * t).exp() * p)
        .collect();
    let mut prev_t = 0.0;
    let mut prev_s = 1.0;
    let mut exact = Vec::new();
    let mut bad = Vec::new();
    for (&t, &s) in curve.maturities.iter().zip(&scaled) {
        let w = prev_s - s;
        if w < -1e-9 {
            bad.push(t);
        } else if w > 1e-12 {
            let x = match placement {
                MassPlacement::Midpoint => 0.5 * (prev_t + t),
                MassPlacement::Right => t,
            };
            exact.push((x, w));
        }
        prev_t = t;
        prev_s = s;
    }
    if !bad.is_empty() {
        return Err(Error::NonMonotone { maturities: bad });
    }
    let last = *scaled.last().unwrap();
    let censored = if last > 1e-12 {
        vec![(*curve.maturities.last().unwrap(), last)]
    } else {
        Vec::new()
    };
    WeightedSample::new(exact, censored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    /// Rates are read off the fitted exit vector.
    Unrestricted,
    /// Rates are given; exits are held at `r + ρ`.
    Restricted,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub model: ShortRateModel,
    pub fit: FitResult,
    pub loglik: f64,
    pub rho: f64,
    pub mode: RateMode,
    pub model_prices: Vec<f64>,
    pub max_price_error: f64,
}

/// Fits a phase-type distribution to the ρ-scaled curve and reads off the
/// rate model `Λ = T + Δ(t)`, `r = t − ρe`.
///
/// With `rates` given, the exit vector is fixed at `rates + ρ`.
pub fn calibrate(
    curve: &BondCurve,
    rates: Option<&[f64]>,
    config: &FitConfig,
    placement: MassPlacement,
) -> Result<CalibrationResult> {
    let rho = rho_from_prices(curve)?;
    let sample = prices_to_survival_sample(curve, rho, placement)?;
    let mut cfg = config.clone();
    if let Some(r) = rates {
        if r.len() != cfg.dim {
            return Err(Error::structure(format!(
                "{} rates given for dimension {}",
                r.len(),
                cfg.dim
            )));
        }
        cfg.fixed_exit = Some(r.iter().map(|x| x + rho).collect());
    }
    let fit = em_fit(&sample, &cfg)?;
    let p = cfg.dim;
    let t = &fit.params.sub_intensity;
    let mut lambda = t.clone();
    for i in 0..p {
        lambda[(i, i)] = 0.0;
        let off: f64 = lambda.row(i).sum();
        lambda[(i, i)] = -off;
    }
    let r = match rates {
        Some(r) => Vector::from_column_slice(r),
        None => fit.params.exit.map(|x| x - rho),
    };
    let model = ShortRateModel::homogeneous(lambda, r, fit.params.initial.clone(), rho)?;
    let model_prices = bond_prices(&model, &curve.maturities)?;
    let max_price_error = model_prices
        .iter()
        .zip(&curve.prices)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(CalibrationResult {
        loglik: fit.loglik,
        mode: if rates.is_some() {
            RateMode::Restricted
        } else {
            RateMode::Unrestricted
        },
        model,
        fit,
        rho,
        model_prices,
        max_price_error,
    })
}

/// Parameters of the two-factor additive Gaussian short-rate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2ppParams {
    pub r0: f64,
    pub k1: f64,
    pub k2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub theta: f64,
    pub sigma12: f64,
}

impl G2ppParams {
    /// The negative-initial-rate parametrisation used in the guide.
    pub fn example() -> Self {
        Self {
            r0: -0.01,
            k1: 0.401,
            k2: 0.178,
            sigma1: 0.0378,
            sigma2: 0.0372,
            theta: 0.01297,
            sigma12: -0.996,
        }
    }
}

/// `(1 − e^{−kT}) / k`, accurate for small `kT`.
pub fn g2pp_bk(k: f64, t: f64) -> f64 {
    -(-k * t).exp_m1() / k
}

/// `B(0, T) = exp{−ψ(T) + V²(0, T)/2}` with
/// `ψ(T) = ((r0 − θ)(1 − e^{−k1 T}) + k1 θ T) / k1`.
pub fn g2pp_price(p: &G2ppParams, t: f64) -> Result<f64> {
    if !(p.k1 > 0.0 && p.k2 > 0.0) {
        return Err(Error::domain("G2++ needs positive mean-reversion speeds"));
    }
    let (b1, b2, b12) = (g2pp_bk(p.k1, t), g2pp_bk(p.k2, t), g2pp_bk(p.k1 + p.k2, t));
    let v2 = p.sigma1 * p.sigma1 / (p.k1 * p.k1) * (t - b1 - 0.5 * p.k1 * b1 * b1)
        + p.sigma2 * p.sigma2 / (p.k2 * p.k2) * (t - b2 - 0.5 * p.k2 * b2 * b2)
        + 2.0 * p.sigma1 * p.sigma2 * p.sigma12 / (p.k1 * p.k2) * (t - b1 - b2 + b12);
    let psi = ((p.r0 - p.theta) * (-(-p.k1 * t).exp_m1()) + p.k1 * p.theta * t) / p.k1;
    Ok((-psi + 0.5 * v2).exp())
}

pub fn g2pp_prices(p: &G2ppParams, maturities: &[f64]) -> Result<BondCurve> {
    let prices = maturities
        .iter()
        .map(|&t| g2pp_price(p, t))
        .collect::<Result<Vec<_>>>()?;
    BondCurve::new(maturities.to_vec(), prices, None)
}

/// Par swap rate `F_τ(T) / ∫_0^T S_τ(x) dx` of a time-homogeneous model with
/// nonnegative rates, where `S_τ(x) = π e^{(Λ−Δ(r))x} e`.
pub fn swap_rate(m: &ShortRateModel, maturity: f64) -> Result<f64> {
    if !m.is_homogeneous() || m.rho != 0.0 {
        return Err(Error::domain("swap rate needs a homogeneous model with rho = 0"));
    }
    let g = m.discount_generator(1)?;
    let s = &g.values()[0];
    let p = m.dim();
    let e_st = expm(&(s * maturity))?;
    let surv = m.initial.dot(&(&e_st * ones(p)));
    let rhs = (Matrix::identity(p, p) - &e_st) * ones(p);
    let x = (-s)
        .lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Numeric("Λ − Δ(r) is singular".into()))?;
    Ok((1.0 - surv) / m.initial.dot(&x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(r: f64) -> ShortRateModel {
        ShortRateModel::homogeneous(Matrix::zeros(1, 1), Vector::from_element(1, r), Vector::from_element(1, 1.0), 0.0)
            .unwrap()
    }

    #[test]
    fn flat_rate_basics() {
        let m = flat(0.04);
        let d = discount_matrix(&m, 0.0, 5.0, 1).unwrap();
        assert!((d[(0, 0)] - (-0.2f64).exp()).abs() < 1e-15);
        assert!((d[(0, 0)] - 0.8187308).abs() < 1e-7);
        assert_eq!(bond_price(&m, 3.0, 3.0, Some(0)).unwrap(), 1.0);
        assert!((forward_rate(&m, 0.0, 7.0, None).unwrap() - 0.04).abs() < 1e-12);
        assert!((swap_rate(&flat(0.05), 8.0).unwrap() - 0.05).abs() < 1e-12);
        assert!(bond_price(&m, 2.0, 1.0, Some(0)).is_err());
    }

    #[test]
    fn power_zero_is_transition_matrix() {
        let m = ShortRateModel::homogeneous(
            Matrix::from_row_slice(2, 2, &[-0.3, 0.3, 0.2, -0.2]),
            Vector::from_vec(vec![0.01, 0.05]),
            Vector::from_vec(vec![1.0, 0.0]),
            0.0,
        )
        .unwrap();
        let p = discount_matrix(&m, 0.0, 4.0, 0).unwrap();
        for i in 0..2 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn floor_at_minus_rho_gives_constant_forward() {
        let m = ShortRateModel::homogeneous(
            Matrix::from_row_slice(2, 2, &[-0.3, 0.3, 0.2, -0.2]),
            Vector::from_vec(vec![-0.01, -0.01]),
            Vector::from_vec(vec![0.5, 0.5]),
            0.01,
        )
        .unwrap();
        assert!((forward_rate(&m, 0.0, 3.0, None).unwrap() + 0.01).abs() < 1e-14);
    }

    #[test]
    fn rho_and_sample_examples() {
        let mats = vec![1.0, 2.0, 3.0];
        let prices: Vec<f64> = mats.iter().map(|t: &f64| (-0.05 * t).exp()).collect();
        let c = BondCurve::new(mats.clone(), prices, None).unwrap();
        assert_eq!(rho_from_prices(&c).unwrap(), 0.0);
        let s = prices_to_survival_sample(&c, 0.0, MassPlacement::Midpoint).unwrap();
        for (i, &(x, w)) in s.exact.iter().enumerate() {
            let i = i as f64;
            assert_eq!(x, i + 0.5);
            assert!((w - ((-0.05 * i).exp() - (-0.05 * (i + 1.0)).exp())).abs() < 1e-15);
        }
        assert_eq!(s.censored, vec![(3.0, (-0.15f64).exp())]);
        let up = BondCurve::new(mats, vec![0.99, 0.995, 0.98], None).unwrap();
        match prices_to_survival_sample(&up, 0.0, MassPlacement::Midpoint) {
            Err(Error::NonMonotone { maturities }) => assert_eq!(maturities, vec![2.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rho_from_forwards() {
        let c = BondCurve::new(vec![1.0, 2.0], vec![1.001, 1.002], Some(vec![-0.001, 0.002])).unwrap();
        let rho = rho_from_prices(&c).unwrap();
        assert!((rho + (0.999f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn g2pp_zero_volatility() {
        let mut p = G2ppParams::example();
        p.sigma1 = 0.0;
        p.sigma2 = 0.0;
        let t = 7.0;
        let psi = ((p.r0 - p.theta) * (1.0 - (-p.k1 * t).exp()) + p.k1 * p.theta * t) / p.k1;
        assert!((g2pp_price(&p, t).unwrap() - (-psi).exp()).abs() < 1e-15);
        assert!((g2pp_price(&G2ppParams::example(), 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn g2pp_bk_small_argument() {
        let k = 1e-6;
        let t = 1.0;
        let series = t - k * t * t / 2.0 + k * k * t * t * t / 6.0;
        assert!((g2pp_bk(k, t) - series).abs() < 1e-12);
    }
}
