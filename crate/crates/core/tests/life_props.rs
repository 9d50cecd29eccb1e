mod common;

use common::*;
use nalgebra::DVector;
use phrates::bond::ShortRateModel;
use phrates::life::*;
use phrates::matrix::{Matrix, PiecewiseMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn van_loan_reserves_solve_thiele(seed in any::<u64>(), q in 2usize..4, p in 1usize..3) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = random_product(&mut r, q, p, 5.0);
        let grid = [0.0, 1.3, 2.5, 4.9];
        let th = thiele_solve(&m, 5.0, &grid, OdeOptions { step: 1e-2 }).unwrap();
        for (s, v) in grid.iter().zip(&th) {
            let vl = reserve_vector(&m, *s, 5.0).unwrap();
            prop_assert!((vl - v).amax() <= 1e-6);
        }
    }

    #[test]
    fn terminal_conditions(seed in any::<u64>(), q in 2usize..4, p in 1usize..3) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = random_product(&mut r, q, p, 3.0);
        prop_assert_eq!(reserve_vector(&m, 3.0, 3.0).unwrap().amax(), 0.0);
        let st = moment_stack(&m, 3, 3.0, 3.0).unwrap();
        prop_assert!((&st.reduced[0] - Matrix::identity(m.dim(), m.dim())).amax() == 0.0);
        for k in 1..=3 {
            prop_assert_eq!(st.reduced[k].amax(), 0.0);
        }
    }

    #[test]
    fn reserves_are_affine_in_theta(seed in any::<u64>(), q in 2usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let base = random_product(&mut r, q, 1, 4.0);
        let n = base.dim();
        let pay = base.payments().clone().with_theta(
            PiecewiseMatrix::constant(random_matrix(&mut r, n, 1, 1.0)),
            PiecewiseMatrix::constant({
                let mut b = random_matrix(&mut r, n, n, 1.0);
                b.fill_diagonal(0.0);
                b
            }),
        ).unwrap();
        let m = ProductModel::new(base.intensity().clone(), base.rates().clone(), pay, 4.0).unwrap();
        let v: Vec<DVector<f64>> = [0.0, 1.0, 2.0].iter().map(|&t| reserve_vector(&m.with_theta(t), 0.0, 4.0).unwrap()).collect();
        prop_assert!((&v[2] - &v[1] * 2.0 + &v[0]).amax() <= 1e-9);
    }

    #[test]
    fn lump_intensity_is_irrelevant_without_lumps(seed in any::<u64>(), q in 2usize..4, p in 1usize..3) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let zero_b = PiecewiseMatrix::constant(Matrix::zeros(q, q));
        let mk = |frac: f64, rng: &mut ChaCha8Rng| {
            let lam = PiecewiseMatrix::constant(random_intensity(rng, q, 1.0));
            let l1 = lam.map(|l| { let mut x = l * frac; x.fill_diagonal(0.0); x }).unwrap();
            (lam, l1)
        };
        let mut r2 = r.clone();
        let (lam, l1a) = mk(0.2, &mut r);
        let (_, l1b) = mk(0.9, &mut r2);
        let rates = PiecewiseMatrix::constant(random_matrix(&mut r, q, 1, 1.0));
        let rm = ShortRateModel::homogeneous(random_intensity(&mut r, p, 0.5), DVector::from_element(p, 0.03), random_probability(&mut r, p), 0.0).unwrap();
        let a = ProductModel::independent(&lam, &PaymentSpec::new(rates.clone(), zero_b.clone(), l1a).unwrap(), &rm, 3.0).unwrap();
        let b = ProductModel::independent(&lam, &PaymentSpec::new(rates, zero_b, l1b).unwrap(), &rm, 3.0).unwrap();
        prop_assert!((reserve_vector(&a, 0.0, 3.0).unwrap() - reserve_vector(&b, 0.0, 3.0).unwrap()).amax() <= 1e-12);
    }
}

#[test]
fn single_rate_state_reduces_to_discounted_annuity() {
    // active → dead at rate μ, paying b(t) = 1 + t/2 while active, flat rate r
    let (mu, r, horizon) = (0.07, 0.03, 10.0);
    let lam = PiecewiseMatrix::constant(Matrix::from_row_slice(2, 2, &[-mu, mu, 0.0, 0.0]));
    let breaks: Vec<f64> = (0..=200).map(|i| i as f64 * horizon / 200.0).collect();
    let rates = PiecewiseMatrix::new(
        breaks.clone(),
        breaks.windows(2).map(|w| Matrix::from_column_slice(2, 1, &[1.0 + 0.5 * w[0], 0.0])).collect(),
    )
    .unwrap();
    let rm = ShortRateModel::homogeneous(Matrix::zeros(1, 1), DVector::from_element(1, r), DVector::from_element(1, 1.0), 0.0).unwrap();
    let m = ProductModel::independent(&lam, &PaymentSpec::rates(rates).unwrap(), &rm, horizon).unwrap();
    // the step function integrated exactly cell by cell
    let want: f64 = breaks
        .windows(2)
        .map(|w| (1.0 + 0.5 * w[0]) * ((-(r + mu) * w[0]).exp() - (-(r + mu) * w[1]).exp()) / (r + mu))
        .sum();
    assert!((reserve_vector(&m, 0.0, horizon).unwrap()[0] - want).abs() < 1e-8);
}

#[test]
fn moments_match_hattendorff() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let m = random_product(&mut r, 2, 2, 4.0);
    let a = moment_stack(&m, 3, 0.0, 4.0).unwrap();
    let b = hattendorff_solve(&m, 3, 0.0, 4.0, OdeOptions { step: 1e-2 }).unwrap();
    for k in 0..=3 {
        assert!((&a.reduced[k] - &b.reduced[k]).amax() < 1e-7, "order {k}");
    }
}

#[test]
fn equivalence_premium_zeroes_reserve() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let base = random_product(&mut r, 2, 2, 5.0);
    let n = base.dim();
    let pay = base.payments().clone().with_theta(
        PiecewiseMatrix::constant(Matrix::from_fn(n, 1, |i, _| if i % 2 == 0 { -1.0 } else { 0.0 })),
        PiecewiseMatrix::constant(Matrix::zeros(n, n)),
    ).unwrap();
    let m = ProductModel::new(base.intensity().clone(), base.rates().clone(), pay, 5.0).unwrap();
    let a = equivalence_premium(&m, 0).unwrap();
    let b = solve_premium(&m, 0, r.random_range(-1.0..1.0)).unwrap();
    assert!((a.theta - b.theta).abs() < 1e-9);
    assert!(reserve_vector(&m.with_theta(a.theta), 0.0, 5.0).unwrap()[0].abs() < 1e-9);
}
