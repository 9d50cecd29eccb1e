//! Gram–Charlier approximation of a distribution on `[a, b]` from its raw
//! moments, with a shifted beta reference density and Jacobi polynomials.
//!
//! The alternating sums involved cancel catastrophically at moderate orders,
//! so all of them are accumulated in double-double arithmetic.

use serde::Serialize;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> DoubleDouble {
    let s = a + b;
    DoubleDouble { hi: s, lo: b - (s - a) }
}

impl DoubleDouble {
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }

    pub fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }

    pub fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    pub fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Self::new(q1)).neg());
        let q2 = r.hi / o.hi;
        let r = r.add(o.mul(Self::new(q2)).neg());
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Self::new(q3))
    }

    pub fn mul_f64(self, x: f64) -> Self {
        self.mul(Self::new(x))
    }

    pub fn div_f64(self, x: f64) -> Self {
        self.div(Self::new(x))
    }
}

fn dd(x: f64) -> DoubleDouble {
    DoubleDouble::new(x)
}

/// `x + k` without rounding; plain f64 sums lose digits that the
/// alternating Jacobi sums then amplify.
fn shift(x: f64, k: f64) -> DoubleDouble {
    dd(x).add(dd(k))
}

fn pochhammer(a: DoubleDouble, n: usize) -> DoubleDouble {
    (0..n).fold(dd(1.0), |acc, i| acc.mul(a.add(dd(i as f64))))
}

fn factorial(n: usize) -> DoubleDouble {
    (1..=n).fold(dd(1.0), |acc, i| acc.mul_f64(i as f64))
}

/// Coefficients `κ_k` with `q_n(z) = Σ_k κ_k ((1 − z)/2)^k`.
fn jacobi_terms(n: usize, alpha: f64, beta: f64) -> Vec<DoubleDouble> {
    let a1 = shift(alpha, 1.0);
    let s1 = dd(alpha).add(shift(beta, 1.0));
    let lead = pochhammer(a1, n).div(factorial(n));
    let mut out = Vec::with_capacity(n + 1);
    let mut c = dd(1.0);
    for k in 0..=n {
        out.push(lead.mul(c));
        // c_{k+1} = c_k (α+β+1+n+k)(−n+k) / ((α+1+k)(k+1))
        c = c
            .mul(s1.add(dd((n + k) as f64)))
            .mul_f64(k as f64 - n as f64)
            .div(a1.add(dd(k as f64)))
            .div_f64((k + 1) as f64);
    }
    out
}

/// Jacobi polynomial `q_n^{(α,β)}(z)` on `[−1, 1]` by its Pochhammer sum.
pub fn jacobi_poly(n: usize, alpha: f64, beta: f64, z: f64) -> f64 {
    let u = dd(1.0).add(dd(z).neg()).div_f64(2.0);
    let mut pow = dd(1.0);
    let mut acc = dd(0.0);
    for term in jacobi_terms(n, alpha, beta) {
        acc = acc.add(term.mul(pow));
        pow = pow.mul(u);
    }
    acc.value()
}

/// Factor turning `q_n^{(α,β)}` into an orthonormal polynomial for the
/// normalised beta density.
pub fn jacobi_norm(n: usize, alpha: f64, beta: f64) -> f64 {
    let s1 = dd(alpha).add(shift(beta, 1.0));
    let num = factorial(n)
        .mul(s1.add(dd(2.0 * n as f64)))
        .mul(pochhammer(s1, n));
    let den = pochhammer(shift(alpha, 1.0), n)
        .mul(pochhammer(shift(beta, 1.0), n))
        .mul(s1);
    num.div(den).value().sqrt()
}

/// Orthonormal polynomial `p_n^{α,β}(x)` for the reference on `[a, b]`.
pub fn orthonormal_p(n: usize, alpha: f64, beta: f64, a: f64, b: f64, x: f64) -> f64 {
    jacobi_norm(n, alpha, beta) * jacobi_poly(n, alpha, beta, (2.0 * x - a - b) / (b - a))
}

/// Shifted beta density
/// `f*(x) ∝ (b − x)^α (x − a)^β` on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobiReference {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
}

impl JacobiReference {
    pub fn new(alpha: f64, beta: f64, a: f64, b: f64) -> Result<Self> {
        if !(alpha > -1.0 && beta > -1.0) {
            return Err(Error::domain("alpha and beta must exceed -1"));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::domain(format!("support [{a}, {b}] is empty")));
        }
        Ok(Self { alpha, beta, a, b })
    }

    fn check(&self, x: f64) -> Result<()> {
        if !(self.a <= x && x <= self.b) {
            return Err(Error::domain(format!(
                "{x} outside the support [{}, {}]",
                self.a, self.b
            )));
        }
        Ok(())
    }

    /// Maps `[a, b]` onto `[−1, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        (2.0 * x - self.a - self.b) / (self.b - self.a)
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        let (al, be, a, b) = (self.alpha, self.beta, self.a, self.b);
        let log_c = ln_gamma(al + be + 2.0) - ln_gamma(al + 1.0) - ln_gamma(be + 1.0) - (al + be + 1.0) * (b - a).ln();
        let left = if be == 0.0 { 1.0 } else { (x - a).powf(be) };
        let right = if al == 0.0 { 1.0 } else { (b - x).powf(al) };
        Ok(log_c.exp() * left * right)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        let u = ((x - self.a) / (self.b - self.a)).clamp(0.0, 1.0);
        Ok(beta_reg(self.beta + 1.0, self.alpha + 1.0, u))
    }

    /// Raw moments `E X^k`, `k = 0..=n`.
    pub fn raw_moments(&self, n: usize) -> Vec<f64> {
        // X = a + (b − a)U with U ~ Beta(β + 1, α + 1)
        let mut mu = vec![dd(1.0)];
        for j in 0..n {
            let next = mu[j]
                .mul(shift(self.beta, 1.0 + j as f64))
                .div(dd(self.alpha).add(shift(self.beta, 2.0 + j as f64)));
            mu.push(next);
        }
        let w = self.b - self.a;
        (0..=n)
            .map(|k| {
                let mut acc = dd(0.0);
                let mut binom = dd(1.0);
                for j in 0..=k {
                    let term = binom
                        .mul(mu[j])
                        .mul(dd(w).powi(j))
                        .mul(dd(self.a).powi(k - j));
                    acc = acc.add(term);
                    binom = binom.mul_f64((k - j) as f64).div_f64((j + 1) as f64);
                }
                acc.value()
            })
            .collect()
    }

    pub fn orthonormal(&self, n: usize, x: f64) -> f64 {
        orthonormal_p(n, self.alpha, self.beta, self.a, self.b, x)
    }
}

impl DoubleDouble {
    fn powi(self, k: usize) -> Self {
        (0..k).fold(dd(1.0), |acc, _| acc.mul(self))
    }
}

/// `c_n = E p_n(X)` for `n = 0..=order` from raw moments `E X^0, E X^1, …`.
pub fn gc_coefficients(moments: &[f64], reference: &JacobiReference, order: usize) -> Result<Vec<f64>> {
    if moments.len() <= order {
        return Err(Error::domain(format!(
            "order {order} needs {} moments, got {}",
            order + 1,
            moments.len()
        )));
    }
    let (a, b) = (reference.a, reference.b);
    let w = b - a;
    // inner[k] = E[((b − X)/(b − a))^k] / k!
    let inner: Vec<DoubleDouble> = (0..=order)
        .map(|k| {
            let mut acc = dd(0.0);
            for (i, &m) in moments.iter().enumerate().take(k + 1) {
                let term = dd(b)
                    .powi(k - i)
                    .div(factorial(k - i))
                    .mul(dd(m))
                    .div(factorial(i));
                acc = if i % 2 == 0 { acc.add(term) } else { acc.add(term.neg()) };
            }
            acc.div(dd(w).powi(k))
        })
        .collect();
    Ok((0..=order)
        .map(|n| {
            let terms = jacobi_terms(n, reference.alpha, reference.beta);
            let mut acc = dd(0.0);
            for (k, t) in terms.iter().enumerate() {
                // jacobi_terms already include the 1/k! of the sum
                acc = acc.add(t.mul(inner[k]).mul(factorial(k)));
            }
            acc.value() * jacobi_norm(n, reference.alpha, reference.beta)
        })
        .collect())
}

/// Weight of `p_{n−1}^{(α+1,β+1)}` in the integrated series, from
/// `d/dz[(1−z)^{α+1}(1+z)^{β+1} P_{n−1}^{(α+1,β+1)}] = −2n (1−z)^α (1+z)^β P_n^{(α,β)}`.
pub fn cdf_factor(n: usize, alpha: f64, beta: f64) -> f64 {
    let (nf, s) = (n as f64, alpha + beta);
    ((s + 2.0) * (s + 3.0) / (nf * (1.0 + alpha) * (1.0 + beta) * (s + nf + 1.0))).sqrt()
}

/// Gram–Charlier density and distribution function of order `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GcApproximation {
    pub reference: JacobiReference,
    pub coefficients: Vec<f64>,
    pub moments: Vec<f64>,
}

/// A quantile found by bisection on the approximate distribution function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GcQuantile {
    pub level: f64,
    pub value: f64,
    /// Set when the distribution function crosses the level more than once.
    pub non_monotone: bool,
}

/// Density and distribution function tabulated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GcTable {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Grid points where the density is negative (kept, not clipped).
    pub negative_density: usize,
    /// Grid points where the distribution function left `[0, 1]`.
    pub clamped_cdf: usize,
}

impl GcApproximation {
    pub fn new(moments: &[f64], reference: JacobiReference, order: usize) -> Result<Self> {
        if moments.is_empty() || (moments[0] - 1.0).abs() > 1e-10 {
            return Err(Error::domain("moment sequence must start with E X^0 = 1"));
        }
        let coefficients = gc_coefficients(moments, &reference, order)?;
        Ok(Self {
            reference,
            coefficients,
            moments: moments[..=order].to_vec(),
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// `f*(x) Σ c_n p_n(x)`; may be negative.
    pub fn density(&self, x: f64) -> Result<f64> {
        let r = &self.reference;
        let f = r.density(x)?;
        let s: f64 = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(n, c)| c * r.orthonormal(n, x))
            .sum();
        Ok(f * s)
    }

    /// The integrated series, without clamping.
    pub fn cdf_unclamped(&self, y: f64) -> Result<f64> {
        let r = &self.reference;
        let (al, be, a, b) = (r.alpha, r.beta, r.a, r.b);
        let z = r.to_unit(y);
        let base = r.cdf(y)?;
        let f = r.density(y)?;
        let s: f64 = self
            .coefficients
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, c)| {
                let k = cdf_factor(n, al, be);
                c * k * orthonormal_p(n - 1, al + 1.0, be + 1.0, a, b, y)
            })
            .sum();
        Ok(base - (b - a) / 4.0 * (1.0 - z * z) * f * s)
    }

    /// Distribution function clamped to `[0, 1]`.
    pub fn cdf(&self, y: f64) -> Result<f64> {
        Ok(self.cdf_unclamped(y)?.clamp(0.0, 1.0))
    }

    /// Smallest `x` with `F(x) = q`, to `1e-8` in `x`.
    pub fn quantile(&self, q: f64) -> Result<GcQuantile> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::domain(format!("quantile level {q} not in (0, 1)")));
        }
        let r = &self.reference;
        const SCAN: usize = 4096;
        let xs: Vec<f64> = (0..=SCAN)
            .map(|i| r.a + (r.b - r.a) * i as f64 / SCAN as f64)
            .collect();
        let fs = xs.iter().map(|&x| self.cdf(x)).collect::<Result<Vec<_>>>()?;
        let crossings: Vec<usize> = (0..SCAN)
            .filter(|&i| (fs[i] < q) != (fs[i + 1] < q))
            .collect();
        let Some(&first) = crossings.first() else {
            return Err(Error::Numeric(format!("distribution function never reaches {q}")));
        };
        let (mut lo, mut hi) = (xs[first], xs[first + 1]);
        let rising = fs[first] < q;
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if (self.cdf(mid)? < q) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(GcQuantile {
            level: q,
            value: 0.5 * (lo + hi),
            non_monotone: crossings.len() > 1 || !rising,
        })
    }

    /// Tabulates density and distribution function at `points` equally
    /// spaced points of the support.
    pub fn table(&self, points: usize) -> Result<GcTable> {
        let r = &self.reference;
        let points = points.max(2);
        let x: Vec<f64> = (0..points)
            .map(|i| r.a + (r.b - r.a) * i as f64 / (points - 1) as f64)
            .collect();
        let density = x.iter().map(|&v| self.density(v)).collect::<Result<Vec<_>>>()?;
        let raw = x.iter().map(|&v| self.cdf_unclamped(v)).collect::<Result<Vec<_>>>()?;
        Ok(GcTable {
            negative_density: density.iter().filter(|&&d| d < 0.0).count(),
            clamped_cdf: raw.iter().filter(|&&c| !(0.0..=1.0).contains(&c)).count(),
            cdf: raw.iter().map(|c| c.clamp(0.0, 1.0)).collect(),
            density,
            x,
        })
    }
}

/// Orthonormal polynomials built from a reference's raw moments through
/// Hankel determinants. The sequence is standardised (centred at the mean,
/// scaled by the standard deviation) before any determinant is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBasis {
    pub center: f64,
    pub scale: f64,
    /// Standardised reference moments `ã_0..ã_{2N}`.
    pub moments: Vec<f64>,
    /// `A_{−1}, A_0, …, A_N` of the standardised sequence.
    pub determinants: Vec<f64>,
    /// `coefficients[n][j]`: coefficient of `y^j` in `p_n`, with
    /// `y = (x − center) / scale`.
    pub coefficients: Vec<Vec<f64>>,
}

/// Determinant by Gaussian elimination with partial pivoting, in
/// double-double: Hankel matrices of moments are badly conditioned.
fn det_dd(mut a: Vec<Vec<DoubleDouble>>) -> DoubleDouble {
    let n = a.len();
    let mut det = dd(1.0);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].hi.abs().total_cmp(&a[j][k].hi.abs()))
            .unwrap();
        if a[p][k].hi == 0.0 {
            return dd(0.0);
        }
        if p != k {
            a.swap(p, k);
            det = det.neg();
        }
        det = det.mul(a[k][k]);
        for i in k + 1..n {
            let f = a[i][k].div(a[k][k]);
            for j in k + 1..n {
                a[i][j] = a[i][j].add(f.mul(a[k][j]).neg());
            }
        }
    }
    det
}

fn hankel(m: &[DoubleDouble], n: usize) -> Vec<Vec<DoubleDouble>> {
    (0..=n).map(|i| (0..=n).map(|j| m[i + j]).collect()).collect()
}

/// Builds `p_0..p_N` from reference moments `a_0..a_{2N}`.
pub fn hankel_basis(moments: &[f64]) -> Result<HankelBasis> {
    if moments.len() < 3 || moments.len() % 2 == 0 {
        return Err(Error::domain("need an odd number (at least 3) of moments a_0..a_2N"));
    }
    let big_n = (moments.len() - 1) / 2;
    let a0 = moments[0];
    if !(a0 > 0.0) {
        return Err(Error::InvalidMoments { order: 0, value: a0 });
    }
    let center = moments[1] / a0;
    let var = moments[2] / a0 - center * center;
    let a1 = a0 * moments[2] - moments[1] * moments[1];
    if !(var > 1e-14 * (moments[2] / a0).abs().max(1e-300)) {
        return Err(Error::InvalidMoments { order: 1, value: a1 });
    }
    let scale = var.sqrt();
    // ã_k = E[((X − c)/s)^k] (unnormalised by a_0)
    let std: Vec<DoubleDouble> = (0..moments.len())
        .map(|k| {
            let mut acc = dd(0.0);
            let mut binom = dd(1.0);
            for j in 0..=k {
                let term = binom.mul(dd(moments[j])).mul(dd(-center).powi(k - j));
                acc = acc.add(term);
                binom = binom.mul_f64((k - j) as f64).div_f64((j + 1) as f64);
            }
            acc.div(dd(scale).powi(k))
        })
        .collect();
    let mut dets = vec![dd(1.0)];
    for n in 0..=big_n {
        let d = det_dd(hankel(&std, n));
        if !(d.value() > 0.0) {
            return Err(Error::InvalidMoments { order: n, value: d.value() });
        }
        dets.push(d);
    }
    let mut coefficients = Vec::with_capacity(big_n + 1);
    for n in 0..=big_n {
        let norm = dets[n].mul(dets[n + 1]).value().sqrt();
        let mut c = vec![0.0; n + 1];
        if n == 0 {
            c[0] = 1.0 / norm;
        } else {
            for j in 0..=n {
                // cofactor of x^j in the last column
                let minor = (0..n)
                    .map(|i| {
                        let row = if i < j { i } else { i + 1 };
                        (0..n).map(|k| std[row + k]).collect()
                    })
                    .collect();
                let sign = if (j + n) % 2 == 0 { 1.0 } else { -1.0 };
                c[j] = sign * det_dd(minor).value() / norm;
            }
        }
        coefficients.push(c);
    }
    Ok(HankelBasis {
        center,
        scale,
        moments: std.iter().map(|m| m.value()).collect(),
        determinants: dets.iter().map(|d| d.value()).collect(),
        coefficients,
    })
}

impl HankelBasis {
    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, n: usize, x: f64) -> f64 {
        let y = (x - self.center) / self.scale;
        self.coefficients[n].iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    /// `c_n = E p_n(X)` from raw moments of `X`.
    pub fn coefficients_for(&self, moments: &[f64]) -> Result<Vec<f64>> {
        let big_n = self.order();
        if moments.len() <= big_n {
            return Err(Error::domain("not enough moments"));
        }
        // E[((X − c)/s)^j]
        let std: Vec<DoubleDouble> = (0..=big_n)
            .map(|k| {
                let mut acc = dd(0.0);
                let mut binom = dd(1.0);
                for j in 0..=k {
                    acc = acc.add(binom.mul(dd(moments[j])).mul(dd(-self.center).powi(k - j)));
                    binom = binom.mul_f64((k - j) as f64).div_f64((j + 1) as f64);
                }
                acc.div(dd(self.scale).powi(k))
            })
            .collect();
        Ok(self
            .coefficients
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&std)
                    .fold(dd(0.0), |acc, (ci, m)| acc.add(m.mul_f64(*ci)))
                    .value()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_jacobi() {
        assert_eq!(jacobi_poly(0, 1.3, 0.2, 0.7), 1.0);
        for &(al, be, x) in &[(0.0, 0.0, 0.0), (1.0, 0.05, 0.3), (2.5, -0.5, -0.8)] {
            let want = (al + 1.0) - (al + be + 2.0) * (1.0 - x) / 2.0;
            assert!((jacobi_poly(1, al, be, x) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn double_double_keeps_small_terms() {
        let big = dd(1e20);
        let s = big.add(dd(1.0)).add(big.neg());
        assert_eq!(s.value(), 1.0);
        let third = dd(1.0).div_f64(3.0);
        let back = third.mul_f64(3.0).add(dd(-1.0));
        assert!(back.value().abs() < 1e-30);
    }

    #[test]
    fn order_zero_is_reference() {
        let r = JacobiReference::new(1.0, 0.05, -3.0, 70.0).unwrap();
        let g = GcApproximation::new(&[1.0], r, 0).unwrap();
        for x in [-2.0, 0.0, 10.0, 69.0] {
            assert!((g.density(x).unwrap() - r.density(x).unwrap()).abs() < 1e-15);
            assert!((g.cdf(x).unwrap() - r.cdf(x).unwrap()).abs() < 1e-15);
        }
        assert!(g.density(71.0).is_err());
    }

    #[test]
    fn uniform_hankel_is_shifted_legendre() {
        let m: Vec<f64> = (0..5).map(|n| 1.0 / (n as f64 + 1.0)).collect();
        let h = hankel_basis(&m).unwrap();
        for x in [0.0, 0.25, 0.9] {
            let want = 12f64.sqrt() * (x - 0.5);
            assert!((h.eval(1, x).abs() - want.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_is_rejected() {
        match hankel_basis(&[1.0; 5]) {
            Err(Error::InvalidMoments { order, .. }) => assert_eq!(order, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn insufficient_moments() {
        let r = JacobiReference::new(1.0, 1.0, 0.0, 1.0).unwrap();
        assert!(gc_coefficients(&[1.0, 0.5], &r, 3).is_err());
    }
}
