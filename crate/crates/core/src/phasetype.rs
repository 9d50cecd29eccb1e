//! Phase-type distributions with piecewise-constant sub-intensity matrices.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::matrix::{ones, prod_integral, Matrix, PiecewiseMatrix, Vector, ROW_SUM_TOL};

/// Survival values at or below this are treated as underflowed.
pub const SURVIVAL_FLOOR: f64 = 1e-300;

/// Absorption time `τ ~ IPH(π, T(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseType {
    initial: Vector,
    generator: PiecewiseMatrix,
}

/// One simulated absorption time, optionally with its path.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionSample {
    pub time: f64,
    /// `(state, sojourn)` pairs in visiting order.
    pub path: Option<Vec<(usize, f64)>>,
}

impl PhaseType {
    pub fn new(initial: Vector, generator: PiecewiseMatrix) -> Result<Self> {
        let (p, q) = generator.shape();
        if p != q || initial.len() != p {
            return Err(Error::structure(format!(
                "initial vector of length {} with a {p}x{q} sub-intensity",
                initial.len()
            )));
        }
        if initial.iter().any(|&x| !(x >= 0.0)) || (initial.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::domain("initial distribution must be a probability vector"));
        }
        if generator.start() != 0.0 {
            return Err(Error::domain("sub-intensity must be defined from x = 0"));
        }
        for m in generator.values() {
            crate::matrix::check_sub_intensity(m, ROW_SUM_TOL)?;
        }
        Ok(Self { initial, generator })
    }

    /// Time-homogeneous `PH(π, T)`.
    pub fn homogeneous(initial: Vector, t: Matrix) -> Result<Self> {
        Self::new(initial, PiecewiseMatrix::constant(t))
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &Vector {
        &self.initial
    }

    pub fn generator(&self) -> &PiecewiseMatrix {
        &self.generator
    }

    /// Sub-intensity for a time-homogeneous distribution.
    pub fn sub_intensity(&self) -> Result<&Matrix> {
        if self.generator.is_constant() {
            Ok(&self.generator.values()[0])
        } else {
            Err(Error::domain("operation needs a time-homogeneous sub-intensity"))
        }
    }

    /// Exit rates `t(x) = −T(x)e`.
    pub fn exit_rates(&self, x: f64) -> Result<Vector> {
        Ok(-(self.generator.at(x)? * ones(self.dim())))
    }

    /// `π ∏_0^x (I + T(u) du)`.
    fn state_at(&self, x: f64) -> Result<Vector> {
        if !(x >= 0.0) {
            return Err(Error::domain(format!("negative argument {x}")));
        }
        let p = prod_integral(&self.generator, 0.0, x)?;
        Ok(p.tr_mul(&self.initial))
    }

    pub fn survival(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            // π is validated as a probability vector: no mass at zero
            return Ok(1.0);
        }
        Ok(self.state_at(x)?.sum().clamp(0.0, 1.0))
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(1.0 - self.survival(x)?)
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        let a = self.state_at(x)?;
        Ok(a.dot(&self.exit_rates(x)?).max(0.0))
    }

    pub fn hazard(&self, x: f64) -> Result<f64> {
        let a = self.state_at(x)?;
        let s = a.sum();
        if !(s > SURVIVAL_FLOOR) {
            return Err(Error::HazardUnavailable { x, survival: s });
        }
        Ok(a.dot(&self.exit_rates(x)?) / s)
    }

    /// `(−T)^{-1} e` for homogeneous `T`.
    fn green_ones(&self) -> Result<Vector> {
        let t = self.sub_intensity()?;
        (-t).lu()
            .solve(&ones(self.dim()))
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Numeric("sub-intensity matrix is singular".into()))
    }

    /// `E τ = π(−T)^{-1}e`.
    pub fn mean(&self) -> Result<f64> {
        Ok(self.initial.dot(&self.green_ones()?))
    }

    /// Stationary phase distribution of the renewal process, `π(−T)^{-1}/μ`.
    pub fn renewal_stationary(&self) -> Result<Vector> {
        let t = self.sub_intensity()?;
        let y = (-t.transpose())
            .lu()
            .solve(&self.initial)
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Numeric("sub-intensity matrix is singular".into()))?;
        let mu = y.sum();
        Ok(y / mu)
    }

    /// Simulates the underlying jump process until absorption. The exponential
    /// clock is redrawn at each breakpoint of `T(x)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, with_path: bool) -> Result<AbsorptionSample> {
        let p = self.dim();
        let mut state = pick(rng, self.initial.iter().copied(), 1.0)
            .ok_or_else(|| Error::domain("initial distribution has no mass"))?;
        let breaks = self.generator.breaks();
        let values = self.generator.values();
        let mut path = with_path.then(Vec::new);
        let mut t = 0.0;
        let mut entered = 0.0;
        let mut k = 0;
        loop {
            let m = &values[k];
            let out = -m[(state, state)];
            let end = breaks[k + 1];
            let dt = if out > 0.0 {
                Exp::new(out).unwrap().sample(rng)
            } else {
                f64::INFINITY
            };
            if t + dt >= end {
                if !end.is_finite() {
                    return Err(Error::domain(format!("phase {state} is absorbing-free and never exits")));
                }
                t = end;
                k += 1;
                if k == values.len() {
                    return Err(Error::domain(format!(
                        "path not absorbed before the end of the domain at {end}"
                    )));
                }
                continue;
            }
            t += dt;
            let exit = (-m.row(state).sum()).max(0.0);
            let weights = (0..=p).map(|j| {
                if j == p {
                    exit
                } else if j == state {
                    0.0
                } else {
                    m[(state, j)]
                }
            });
            let next = pick(rng, weights, out).unwrap_or(p);
            if let Some(path) = path.as_mut() {
                path.push((state, t - entered));
            }
            entered = t;
            if next == p {
                return Ok(AbsorptionSample { time: t, path });
            }
            state = next;
        }
    }
}

/// Draws an index with probability proportional to `weights` (which sum to `total`).
pub(crate) fn pick<R, I>(rng: &mut R, weights: I, total: f64) -> Option<usize>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = f64>,
{
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, w) in weights.into_iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn expo(l: f64) -> PhaseType {
        PhaseType::homogeneous(Vector::from_element(1, 1.0), Matrix::from_element(1, 1, -l)).unwrap()
    }

    fn erlang2(l: f64) -> PhaseType {
        PhaseType::homogeneous(
            Vector::from_vec(vec![1.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[-l, l, 0.0, -l]),
        )
        .unwrap()
    }

    #[test]
    fn exponential_functions() {
        let d = expo(0.5);
        let e = (-1.0f64).exp();
        assert!((d.survival(2.0).unwrap() - e).abs() < 1e-15);
        assert!((d.density(2.0).unwrap() - 0.5 * e).abs() < 1e-15);
        assert!((d.hazard(2.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((d.mean().unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(d.renewal_stationary().unwrap()[0], 1.0);
        assert!(d.survival(-1.0).is_err());
    }

    #[test]
    fn erlang_functions() {
        let d = erlang2(1.0);
        let e = (-1.0f64).exp();
        assert!((d.survival(1.0).unwrap() - 2.0 * e).abs() < 1e-15);
        assert!((d.density(1.0).unwrap() - e).abs() < 1e-15);
        assert!((d.mean().unwrap() - 2.0).abs() < 1e-14);
        let st = d.renewal_stationary().unwrap();
        assert!((st[0] - 0.5).abs() < 1e-15 && (st[1] - 0.5).abs() < 1e-15);
        assert_eq!(d.survival(0.0).unwrap(), 1.0);
    }

    #[test]
    fn hazard_underflow_is_reported() {
        let d = expo(50.0);
        assert!(matches!(d.hazard(100.0), Err(Error::HazardUnavailable { .. })));
    }

    #[test]
    fn erlang_paths_visit_in_order() {
        let d = erlang2(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = d.sample(&mut rng, true).unwrap();
            let path = s.path.unwrap();
            assert_eq!(path.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1]);
            let total: f64 = path.iter().map(|p| p.1).sum();
            assert!((total - s.time).abs() < 1e-12);
        }
    }

    #[test]
    fn piecewise_path_sojourns_sum_to_time() {
        let g = PiecewiseMatrix::new(
            vec![0.0, 0.3, f64::INFINITY],
            vec![
                Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.5, -0.5]),
                Matrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.5, -1.5]),
            ],
        )
        .unwrap();
        let d = PhaseType::new(Vector::from_vec(vec![0.5, 0.5]), g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let s = d.sample(&mut rng, true).unwrap();
            let total: f64 = s.path.unwrap().iter().map(|p| p.1).sum();
            assert!((total - s.time).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = Matrix::from_element(1, 1, -1.0);
        assert!(PhaseType::homogeneous(Vector::from_element(1, 0.9), t.clone()).is_err());
        assert!(PhaseType::homogeneous(Vector::from_element(2, 0.5), t).is_err());
        let pos = Matrix::from_element(1, 1, 0.1);
        assert!(PhaseType::homogeneous(Vector::from_element(1, 1.0), pos).is_err());
    }
}
