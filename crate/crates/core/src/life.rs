//! Multi-state life insurance with Markovian interest: partial reserves,
//! Thiele's equation, reduced higher-order moments and equivalence premiums.
//!
//! Payments follow `dB(t) = b_{Z(t)}(t) dt + Σ b_{ij}(t) dN^1_{ij}(t)`, where
//! the lump-triggering counts `N^1` jump with intensity `Λ¹ ≤ Λ`.

use crate::bond::ShortRateModel;
use crate::error::{Error, Result};
use crate::matrix::{
    check_intensity, diag, expm_action, kron, kron_sum, norm1, ones, prod_integral,
    prod_integral_apply, van_loan, van_loan_generator, Matrix, PiecewiseMatrix, Vector,
    DEFAULT_STEP, ROW_SUM_TOL,
};

/// Payment functions on some state space, affine in a premium parameter θ:
/// `b(t; θ) = b(t) + θ b_θ(t)` and `B(t; θ) = B(t) + θ B_θ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSpec {
    /// Continuous payment rates, `n × 1`.
    pub rates: PiecewiseMatrix,
    /// Lump sums on transitions (diagonal: Poisson sojourn lumps), `n × n`.
    pub lumps: PiecewiseMatrix,
    /// Lump-triggering part `Λ¹` of the intensity, `n × n`.
    pub lump_intensity: PiecewiseMatrix,
    pub rates_theta: PiecewiseMatrix,
    pub lumps_theta: PiecewiseMatrix,
}

fn zero(r: usize, c: usize) -> PiecewiseMatrix {
    PiecewiseMatrix::constant(Matrix::zeros(r, c))
}

impl PaymentSpec {
    /// Continuous payments only.
    pub fn rates(rates: PiecewiseMatrix) -> Result<Self> {
        let n = rates.shape().0;
        Self::new(rates, zero(n, n), zero(n, n))
    }

    pub fn new(rates: PiecewiseMatrix, lumps: PiecewiseMatrix, lump_intensity: PiecewiseMatrix) -> Result<Self> {
        let n = rates.shape().0;
        let s = Self {
            rates,
            lumps,
            lump_intensity,
            rates_theta: zero(n, 1),
            lumps_theta: zero(n, n),
        };
        s.check_shapes()?;
        Ok(s)
    }

    /// Adds the θ-coefficients of the payment functions.
    pub fn with_theta(mut self, rates_theta: PiecewiseMatrix, lumps_theta: PiecewiseMatrix) -> Result<Self> {
        self.rates_theta = rates_theta;
        self.lumps_theta = lumps_theta;
        self.check_shapes()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.rates.shape().0
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.dim();
        let ok = self.rates.shape() == (n, 1)
            && self.rates_theta.shape() == (n, 1)
            && self.lumps.shape() == (n, n)
            && self.lumps_theta.shape() == (n, n)
            && self.lump_intensity.shape() == (n, n);
        if ok {
            Ok(())
        } else {
            Err(Error::structure(format!(
                "payment shapes: rates {:?}, lumps {:?}, lump intensity {:?}, theta {:?}/{:?}",
                self.rates.shape(),
                self.lumps.shape(),
                self.lump_intensity.shape(),
                self.rates_theta.shape(),
                self.lumps_theta.shape()
            )))
        }
    }

    /// `b ⊗ e_p`, `B ⊗ I_p`, `Λ¹ ⊗ I_p`: payments that ignore the rate state.
    pub fn lift(&self, p: usize) -> Result<Self> {
        let e = Matrix::from_element(p, 1, 1.0);
        let id = Matrix::identity(p, p);
        Ok(Self {
            rates: self.rates.map(|b| kron(b, &e))?,
            lumps: self.lumps.map(|b| kron(b, &id))?,
            lump_intensity: self.lump_intensity.map(|b| kron(b, &id))?,
            rates_theta: self.rates_theta.map(|b| kron(b, &e))?,
            lumps_theta: self.lumps_theta.map(|b| kron(b, &id))?,
        })
    }
}

/// The combined model on `E = E_b × E_r` (or any state space when built
/// directly), with every component on one common grid over `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductModel {
    intensity: PiecewiseMatrix,
    rates: PiecewiseMatrix,
    payments: PaymentSpec,
    theta: f64,
    horizon: f64,
    dims: Option<(usize, usize)>,
}

fn common_grid(parts: &[&PiecewiseMatrix], horizon: f64) -> Result<Vec<PiecewiseMatrix>> {
    let mut breaks: Vec<f64> = Vec::new();
    for p in parts {
        if p.start() > 0.0 || p.end() < horizon {
            return Err(Error::domain(format!(
                "component defined on [{}, {}] does not cover [0, {horizon}]",
                p.start(),
                p.end()
            )));
        }
        breaks.extend(p.breaks().iter().copied().filter(|&b| b > 0.0 && b < horizon));
    }
    parts
        .iter()
        .map(|p| p.restrict(0.0, horizon)?.refine(&breaks))
        .collect()
}

impl ProductModel {
    /// A model given directly on its state space (dependent payments allowed).
    pub fn new(intensity: PiecewiseMatrix, rates: PiecewiseMatrix, payments: PaymentSpec, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon {horizon} must be positive and finite")));
        }
        let n = intensity.shape().0;
        if intensity.shape() != (n, n) || rates.shape() != (n, 1) || payments.dim() != n {
            return Err(Error::structure(format!(
                "state-space sizes differ: intensity {:?}, rates {:?}, payments on {} states",
                intensity.shape(),
                rates.shape(),
                payments.dim()
            )));
        }
        let parts = [
            &intensity,
            &rates,
            &payments.rates,
            &payments.lumps,
            &payments.lump_intensity,
            &payments.rates_theta,
            &payments.lumps_theta,
        ];
        let mut v = common_grid(&parts, horizon)?.into_iter();
        let mut next = || v.next().unwrap();
        let intensity = next();
        let rates = next();
        let payments = PaymentSpec {
            rates: next(),
            lumps: next(),
            lump_intensity: next(),
            rates_theta: next(),
            lumps_theta: next(),
        };
        for (l, l1) in intensity.values().iter().zip(payments.lump_intensity.values()) {
            check_intensity(l, ROW_SUM_TOL)?;
            for i in 0..n {
                for j in 0..n {
                    let bad = l1[(i, j)] < 0.0 || (i != j && l1[(i, j)] > l[(i, j)] + ROW_SUM_TOL);
                    if bad {
                        return Err(Error::domain(format!(
                            "lump intensity {} at ({i},{j}) is not within [0, λ_ij]",
                            l1[(i, j)]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            intensity,
            rates,
            payments,
            theta: 0.0,
            horizon,
            dims: None,
        })
    }

    /// Biometric model independent of the rate model: `Λ = Λ_b ⊕ Λ_r`,
    /// `r = e_q ⊗ r_p`, payments lifted from `E_b`.
    pub fn independent(
        biometric: &PiecewiseMatrix,
        payments: &PaymentSpec,
        rate_model: &ShortRateModel,
        horizon: f64,
    ) -> Result<Self> {
        let q = biometric.shape().0;
        if biometric.shape() != (q, q) || payments.dim() != q {
            return Err(Error::structure(format!(
                "biometric intensity {:?} with payments on {} states",
                biometric.shape(),
                payments.dim()
            )));
        }
        let p = rate_model.dim();
        let intensity = biometric.zip_with(rate_model.intensity(), kron_sum)?;
        let eq = Matrix::from_element(q, 1, 1.0);
        let rates = rate_model.rates().map(|r| kron(&eq, r))?;
        let mut m = Self::new(intensity, rates, payments.lift(p)?, horizon)?;
        m.dims = Some((q, p));
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.rates.shape().0
    }

    /// `(q, p)` when built from independent components.
    pub fn product_dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    /// Index of `(biometric i, rate ĩ)` in the lexicographic ordering.
    pub fn state_index(&self, biometric: usize, rate: usize) -> Result<usize> {
        match self.dims {
            Some((q, p)) if biometric < q && rate < p => Ok(biometric * p + rate),
            Some(_) => Err(Error::domain("state index out of range")),
            None => Err(Error::domain("model was not built from independent components")),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        Self {
            theta,
            ..self.clone()
        }
    }

    pub fn intensity(&self) -> &PiecewiseMatrix {
        &self.intensity
    }

    pub fn rates(&self) -> &PiecewiseMatrix {
        &self.rates
    }

    pub fn payments(&self) -> &PaymentSpec {
        &self.payments
    }

    pub fn grid(&self) -> &[f64] {
        self.intensity.breaks()
    }

    /// `Λ − mΔ(r)`.
    pub fn discount_generator(&self, power: u32) -> Result<PiecewiseMatrix> {
        let m = power as f64;
        self.intensity
            .zip_with(&self.rates, |l, r| l - diag(&r.column(0).into_owned()) * m)
    }

    fn payment_at(&self, k: usize) -> (Matrix, Matrix) {
        let pay = &self.payments;
        let b = &pay.rates.values()[k] + &pay.rates_theta.values()[k] * self.theta;
        let lumps = &pay.lumps.values()[k] + &pay.lumps_theta.values()[k] * self.theta;
        (b, lumps)
    }

    /// `R = Λ¹ • B + Δ(b)` on each grid interval.
    pub fn reward(&self) -> Result<PiecewiseMatrix> {
        let values = (0..self.intensity.values().len())
            .map(|k| {
                let (b, lumps) = self.payment_at(k);
                reward_matrix(&self.payments.lump_intensity.values()[k], &lumps, &b)
            })
            .collect();
        PiecewiseMatrix::new(self.grid().to_vec(), values)
    }

    /// `∂R/∂θ = Λ¹ • B_θ + Δ(b_θ)`.
    pub fn reward_theta(&self) -> Result<PiecewiseMatrix> {
        let p = &self.payments;
        let values = (0..self.intensity.values().len())
            .map(|k| {
                reward_matrix(
                    &p.lump_intensity.values()[k],
                    &p.lumps_theta.values()[k],
                    &p.rates_theta.values()[k],
                )
            })
            .collect();
        PiecewiseMatrix::new(self.grid().to_vec(), values)
    }

    /// Reduced lump moments `C_r^{(j)} = Λ¹ • B^{•j} / j!`.
    pub fn lump_moment(&self, j: u32) -> Result<PiecewiseMatrix> {
        let fact: f64 = (1..=j).map(|x| x as f64).product();
        let values = (0..self.intensity.values().len())
            .map(|k| {
                let (_, lumps) = self.payment_at(k);
                let l1 = &self.payments.lump_intensity.values()[k];
                l1.component_mul(&lumps.map(|x| x.powi(j as i32))) / fact
            })
            .collect();
        PiecewiseMatrix::new(self.grid().to_vec(), values)
    }

    fn check_interval(&self, s: f64, t: f64) -> Result<()> {
        if !(0.0 <= s && s <= t && t <= self.horizon) {
            return Err(Error::domain(format!(
                "[{s}, {t}] is not a sub-interval of [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }
}

fn reward_matrix(l1: &Matrix, lumps: &Matrix, b: &Matrix) -> Matrix {
    l1.component_mul(lumps) + diag(&b.column(0).into_owned())
}

/// Partial state-wise reserves `V(s, t)`: the upper-right Van Loan block with
/// `A = Λ − Δ(r)`, `B = R`, `C = Λ`.
pub fn reserve_matrix(m: &ProductModel, s: f64, t: f64) -> Result<Matrix> {
    m.check_interval(s, t)?;
    let vl = van_loan(&m.discount_generator(1)?, &m.reward()?, m.intensity(), s, t)?;
    Ok(vl.upper_right)
}

/// Van Loan upper-right block applied to `e`, computed by exponential
/// actions only: `V(s, t) e` for reward `reward`.
fn reserve_action(m: &ProductModel, reward: &PiecewiseMatrix, s: f64, t: f64) -> Result<Vector> {
    m.check_interval(s, t)?;
    let n = m.dim();
    let g = van_loan_generator(&m.discount_generator(1)?, reward, m.intensity())?;
    let mut w = Matrix::zeros(2 * n, 1);
    w.view_mut((n, 0), (n, 1)).fill(1.0);
    let out = prod_integral_apply(&g, s, t, &w)?;
    Ok(out.view((0, 0), (n, 1)).column(0).into_owned())
}

/// State-wise reserves `V(s, t) e`.
pub fn reserve_vector(m: &ProductModel, s: f64, t: f64) -> Result<Vector> {
    reserve_action(m, &m.reward()?, s, t)
}

/// Step control for the fixed-step ODE solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { step: DEFAULT_STEP }
    }
}

/// Solves a linear ODE `dY/dt = −F(t) Y` backward from `y_end` at `end`
/// with classical RK4 on each constant piece, recording `Y` at `record`
/// (sorted ascending, inside `[start, end]`).
fn rk4_backward<F>(
    grid: &[f64],
    start: f64,
    end: f64,
    y_end: Matrix,
    step: f64,
    record: &[f64],
    mut apply: F,
) -> Result<Vec<Matrix>>
where
    F: FnMut(usize, &Matrix) -> Matrix,
{
    if !(step > 0.0) {
        return Err(Error::domain("ODE step must be positive"));
    }
    let mut out = vec![Matrix::zeros(0, 0); record.len()];
    let mut pending: Vec<usize> = (0..record.len()).collect();
    let mut y = y_end;
    let mut t = end;
    let take = |t: f64, y: &Matrix, pending: &mut Vec<usize>, out: &mut Vec<Matrix>| {
        while let Some(&i) = pending.last() {
            if record[i] >= t - 1e-12 {
                out[i] = y.clone();
                pending.pop();
            } else {
                break;
            }
        }
    };
    take(t, &y, &mut pending, &mut out);
    let mut k = grid.partition_point(|&b| b < end).saturating_sub(1);
    while t > start + 1e-14 {
        let lo = grid[k].max(start);
        let mut stops: Vec<f64> = record
            .iter()
            .copied()
            .filter(|&r| r > lo && r < t)
            .collect();
        stops.push(lo);
        stops.sort_by(|a, b| b.total_cmp(a));
        for stop in stops {
            let len = t - stop;
            let n = (len / step * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let h = len / n as f64;
            for _ in 0..n {
                // dY/ds = −F Y integrated in reversed time: Y' = F Y
                let k1 = apply(k, &y);
                let k2 = apply(k, &(&y + &k1 * (0.5 * h)));
                let k3 = apply(k, &(&y + &k2 * (0.5 * h)));
                let k4 = apply(k, &(&y + &k3 * h));
                y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            t = stop;
            take(t, &y, &mut pending, &mut out);
        }
        if k == 0 {
            break;
        }
        k -= 1;
    }
    Ok(out)
}

/// Thiele's equation `∂_t V = Δ(r)V − ΛV − Re`, `V(T) = 0`, solved backward
/// with RK4; returns the state-wise reserve at each point of `grid`.
pub fn thiele_solve(m: &ProductModel, horizon: f64, grid: &[f64], opts: OdeOptions) -> Result<Vec<Vector>> {
    m.check_interval(0.0, horizon)?;
    if grid.iter().any(|&g| !(0.0..=horizon).contains(&g)) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("evaluation grid must be sorted and inside [0, T]"));
    }
    let n = m.dim();
    let a = m.discount_generator(1)?;
    let re: Vec<Matrix> = m
        .reward()?
        .values()
        .iter()
        .map(|r| Matrix::from_column_slice(n, 1, (r * ones(n)).as_slice()))
        .collect();
    let start = grid.first().copied().unwrap_or(horizon);
    let out = rk4_backward(m.grid(), start, horizon, Matrix::zeros(n, 1), opts.step, grid, |k, y| {
        &a.values()[k] * y + &re[k]
    })?;
    Ok(out.into_iter().map(|v| v.column(0).into_owned()).collect())
}

/// Reduced partial moments `V_r^{(0..k)}(t, T)`, with `V_r^{(0)} = P(t, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStack {
    pub t: f64,
    pub horizon: f64,
    /// `reduced[m] = V_r^{(m)}(t, T)`.
    pub reduced: Vec<Matrix>,
}

impl MomentStack {
    pub fn order(&self) -> usize {
        self.reduced.len() - 1
    }

    /// `V^{(m)} = m! V_r^{(m)}`.
    pub fn moment(&self, m: usize) -> Matrix {
        let f: f64 = (1..=m).map(|x| x as f64).product();
        &self.reduced[m] * f
    }

    /// `E[X^m | Z(t) = i]` for `m = 0..=k`.
    pub fn raw_moments(&self, state: usize) -> Result<Vec<f64>> {
        let n = self.reduced[0].nrows();
        if state >= n {
            return Err(Error::domain(format!("state {state} out of range")));
        }
        Ok((0..=self.order())
            .map(|m| self.moment(m).row(state).sum())
            .collect())
    }
}

/// One grid interval of the moment block generator `F_U^{(k)}`.
struct MomentBlocks {
    lambda: Matrix,
    rates: Vector,
    reward: Matrix,
    /// `(j, C_r^{(j)})` for the nonzero lump moments, `j ≥ 2`.
    lumps: Vec<(usize, Matrix)>,
}

impl MomentBlocks {
    fn new(m: &ProductModel, k: usize, idx: usize, reward: &PiecewiseMatrix, lumps: &[PiecewiseMatrix]) -> Self {
        let lumps = lumps
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 2, c.values()[idx].clone()))
            .filter(|(j, c)| *j <= k && c.amax() > 0.0)
            .collect();
        Self {
            lambda: m.intensity.values()[idx].clone(),
            rates: m.rates.values()[idx].column(0).into_owned(),
            reward: reward.values()[idx].clone(),
            lumps,
        }
    }

    /// `F_U^{(k)} W` for a `(k+1)n × c` block column `W`.
    fn apply(&self, k: usize, w: &Matrix) -> Matrix {
        let n = self.lambda.nrows();
        let c = w.ncols();
        let mut out = Matrix::zeros(w.nrows(), c);
        for a in 0..=k {
            let m = (k - a) as f64;
            let wa = w.view((a * n, 0), (n, c));
            let mut blk = &self.lambda * wa;
            for i in 0..n {
                let f = m * self.rates[i];
                if f != 0.0 {
                    for j in 0..c {
                        blk[(i, j)] -= f * wa[(i, j)];
                    }
                }
            }
            if a < k {
                blk += &self.reward * w.view(((a + 1) * n, 0), (n, c));
            }
            for (j, cr) in &self.lumps {
                if a + j <= k {
                    blk += cr * w.view(((a + j) * n, 0), (n, c));
                }
            }
            out.view_mut((a * n, 0), (n, c)).copy_from(&blk);
        }
        out
    }

    fn norm_bound(&self, k: usize) -> f64 {
        let rmax = self.rates.amax();
        norm1(&self.lambda)
            + k as f64 * rmax
            + norm1(&self.reward)
            + self.lumps.iter().map(|(_, c)| norm1(c)).sum::<f64>()
    }

    fn dense(&self, k: usize) -> Matrix {
        let n = self.lambda.nrows();
        let mut g = Matrix::zeros((k + 1) * n, (k + 1) * n);
        for a in 0..=k {
            let d = &self.lambda - diag(&self.rates) * (k - a) as f64;
            g.view_mut((a * n, a * n), (n, n)).copy_from(&d);
            if a < k {
                g.view_mut((a * n, (a + 1) * n), (n, n)).copy_from(&self.reward);
            }
            for (j, cr) in &self.lumps {
                if a + j <= k {
                    g.view_mut((a * n, (a + j) * n), (n, n)).copy_from(cr);
                }
            }
        }
        g
    }
}

fn moment_blocks(m: &ProductModel, k: usize) -> Result<Vec<MomentBlocks>> {
    let reward = m.reward()?;
    let lumps = (2..=k as u32)
        .map(|j| m.lump_moment(j))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..m.grid().len() - 1)
        .map(|idx| MomentBlocks::new(m, k, idx, &reward, &lumps))
        .collect())
}

/// The block generator `F_U^{(k)}` materialised as a dense piecewise matrix:
/// diagonal blocks `Λ − mΔ(r)` for `m = k, …, 0`, first superdiagonal `R`,
/// `j`-th superdiagonal `C_r^{(j)}`.
pub fn moment_generator(m: &ProductModel, k: usize) -> Result<PiecewiseMatrix> {
    let blocks = moment_blocks(m, k)?;
    PiecewiseMatrix::new(m.grid().to_vec(), blocks.iter().map(|b| b.dense(k)).collect())
}

fn last_block_column(n: usize, k: usize) -> Matrix {
    let mut w = Matrix::zeros((k + 1) * n, n);
    w.view_mut((k * n, 0), (n, n)).fill_with_identity();
    w
}

fn unstack(w: &Matrix, n: usize, k: usize, t: f64, horizon: f64) -> MomentStack {
    // block a holds V_r^{(k−a)}
    let reduced = (0..=k)
        .map(|m| w.view(((k - m) * n, 0), (n, n)).into_owned())
        .collect();
    MomentStack { t, horizon, reduced }
}

/// Reduced moments from the last block column of `∏_t^T (I + F_U^{(k)} du)`.
pub fn moment_stack(m: &ProductModel, k: usize, t: f64, horizon: f64) -> Result<MomentStack> {
    m.check_interval(t, horizon)?;
    let n = m.dim();
    let blocks = moment_blocks(m, k)?;
    let grid = m.grid();
    let mut w = last_block_column(n, k);
    if (k + 1) * n <= 48 {
        let g = PiecewiseMatrix::new(grid.to_vec(), blocks.iter().map(|b| b.dense(k)).collect())?;
        w = prod_integral(&g, t, horizon)? * w;
    } else {
        for idx in (0..grid.len() - 1).rev() {
            let lo = grid[idx].max(t);
            let hi = grid[idx + 1].min(horizon);
            if hi <= lo {
                continue;
            }
            let len = hi - lo;
            let b = &blocks[idx];
            w = expm_action(|x| b.apply(k, x) * len, b.norm_bound(k) * len, &w)?;
        }
    }
    Ok(unstack(&w, n, k, t, horizon))
}

/// The same moments from the reduced Hattendorff system
/// `∂_t V_r^{(m)} = −(Λ − mΔ(r))V_r^{(m)} − R V_r^{(m−1)} − Σ_{j≥2} C_r^{(j)} V_r^{(m−j)}`
/// with `V_r^{(m)}(T) = 1_{m=0} I`, solved by RK4.
pub fn hattendorff_solve(m: &ProductModel, k: usize, t: f64, horizon: f64, opts: OdeOptions) -> Result<MomentStack> {
    m.check_interval(t, horizon)?;
    let n = m.dim();
    let blocks = moment_blocks(m, k)?;
    let out = rk4_backward(m.grid(), t, horizon, last_block_column(n, k), opts.step, &[t], |idx, y| {
        blocks[idx].apply(k, y)
    })?;
    Ok(unstack(&out[0], n, k, t, horizon))
}

/// `E[X^m | Z(0) = start]` for `m = 0..=order`, `X` the present value of all
/// payments on `[0, T]`.
pub fn raw_moments_of_pv(m: &ProductModel, start: usize, order: usize) -> Result<Vec<f64>> {
    moment_stack(m, order, 0.0, m.horizon())?.raw_moments(start)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PremiumSolution {
    pub theta: f64,
    pub iterations: usize,
    /// `e_i' V(0, T; θ) e` at the solution.
    pub residual: f64,
    /// Residual before each Newton step.
    pub trace: Vec<f64>,
}

/// A family of products indexed by the premium parameter.
pub trait PremiumFamily {
    fn model(&self, theta: f64) -> Result<ProductModel>;
    /// `∂R/∂θ` at `theta`.
    fn reward_derivative(&self, theta: f64) -> Result<PiecewiseMatrix>;
}

impl PremiumFamily for ProductModel {
    fn model(&self, theta: f64) -> Result<ProductModel> {
        Ok(self.with_theta(theta))
    }

    fn reward_derivative(&self, _theta: f64) -> Result<PiecewiseMatrix> {
        self.reward_theta()
    }
}

fn reserve_and_derivative<F: PremiumFamily + ?Sized>(f: &F, theta: f64, start: usize) -> Result<(f64, f64)> {
    let m = f.model(theta)?;
    if start >= m.dim() {
        return Err(Error::domain(format!("start state {start} out of range")));
    }
    let v = reserve_vector(&m, 0.0, m.horizon())?[start];
    let d = reserve_action(&m, &f.reward_derivative(theta)?, 0.0, m.horizon())?[start];
    Ok((v, d))
}

/// Newton's method on `θ ↦ e_i' V(0, T; θ) e` with the derivative taken from
/// the Van Loan block with `∂R/∂θ` in the upper-right position.
pub fn solve_premium<F: PremiumFamily + ?Sized>(family: &F, start: usize, theta0: f64) -> Result<PremiumSolution> {
    const MAX_ITERS: usize = 50;
    let mut theta = theta0;
    let mut trace = Vec::new();
    for it in 0..MAX_ITERS {
        let (v, d) = reserve_and_derivative(family, theta, start)?;
        trace.push(v);
        if v.abs() < 1e-10 && it > 0 {
            return Ok(PremiumSolution {
                theta,
                iterations: it,
                residual: v,
                trace,
            });
        }
        if !(d.abs() > 1e-300) || !d.is_finite() {
            return Err(Error::NoPremiumSensitivity(d));
        }
        theta -= v / d;
    }
    Err(Error::NewtonFailure {
        iterations: MAX_ITERS,
        trace,
    })
}

/// Equivalence premium for payments affine in θ:
/// `θ = −e_i'V(0, T; 0)e / e_i'V_θ(0, T)e`.
pub fn equivalence_premium(m: &ProductModel, start: usize) -> Result<PremiumSolution> {
    let (v0, d) = reserve_and_derivative(m, 0.0, start)?;
    if !(d.abs() > 1e-300) || !d.is_finite() {
        return Err(Error::NoPremiumSensitivity(d));
    }
    let theta = -v0 / d;
    let residual = reserve_vector(&m.with_theta(theta), 0.0, m.horizon())?[start];
    let scale = v0.abs().max((theta * d).abs()).max(1.0);
    if residual.abs() > 1e-8 * scale {
        return Err(Error::Numeric(format!(
            "premium check failed: reserve {residual:e} at theta = {theta}; payments may not be affine"
        )));
    }
    Ok(PremiumSolution {
        theta,
        iterations: 1,
        residual,
        trace: vec![v0, residual],
    })
}
