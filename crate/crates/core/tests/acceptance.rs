//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the report is always printed.
//! Exits non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DVector;
use phrates::bond::*;
use phrates::emfit::*;
use phrates::gramcharlier::*;
use phrates::io::read_curve_file;
use phrates::life::*;
use phrates::matrix::*;
use phrates::mcsim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn run(n: u32, name: &str, limit: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let (pass, detail) = match out {
        Ok(v) => (v.pass && took <= limit, v.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let status = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n}: {status} | {name} | {detail} | {:.2}s (limit {}s)",
        took.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

const RHO_2019: f64 = 0.002314677;
const RHO_G2PP: f64 = 0.005955398;

fn criterion_1() -> Verdict {
    let c2003 = read_curve_file(&data("curve_2003.csv")).unwrap();
    let c2019 = read_curve_file(&data("curve_2019.csv")).unwrap();
    let r2003 = rho_from_prices(&c2003).unwrap();
    let r2019 = rho_from_prices(&c2019).unwrap();
    let mats: Vec<f64> = (1..=120).map(f64::from).collect();
    let g2 = g2pp_prices(&G2ppParams::example(), &mats).unwrap();
    let rg = rho_from_prices(&g2).unwrap();
    let ok = [r2003 == 0.0, (r2019 - RHO_2019).abs() <= 1e-9, (rg - RHO_G2PP).abs() <= 1e-4];
    verdict(
        ok.iter().all(|&b| b),
        format!(
            "2003 rho={r2003:e} [{}]; 2019 rho={r2019:.10} vs {RHO_2019} diff {:.2e} tol 1e-9 [{}]; G2++ rho={rg:.10} vs {RHO_G2PP} tol 1e-4 [{}]",
            tag(ok[0]),
            (r2019 - RHO_2019).abs(),
            tag(ok[1]),
            tag(ok[2])
        ),
    )
}

fn tag(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "off"
    }
}

const LOGLIK_2003: f64 = -3.166182;

fn criterion_2() -> Verdict {
    let curve = read_curve_file(&data("curve_2003.csv")).unwrap();
    let rates: Vec<f64> = (1..=5).map(|i| i as f64 / 50.0).collect();
    let cfg = FitConfig::new(5);
    let res = calibrate(&curve, Some(&rates), &cfg, MassPlacement::Midpoint).unwrap();
    let ok_price = res.max_price_error < 0.01;
    let ok_ll = (res.loglik - LOGLIK_2003).abs() <= 0.005;
    verdict(
        ok_price && ok_ll && res.fit.restart_logliks.len() == 5,
        format!(
            "max price error {:.5} (< 0.01) [{}]; best-of-5 loglik {:.6} vs {LOGLIK_2003} tol 0.005 [{}]",
            res.max_price_error,
            tag(ok_price),
            res.loglik,
            tag(ok_ll)
        ),
    )
}

const THETA: f64 = 0.1583467;

fn criterion_3() -> Verdict {
    let m = disability_model();
    let sol = equivalence_premium(&m, 0).unwrap();
    verdict(
        (sol.theta - THETA).abs() <= 0.005,
        format!(
            "theta {:.7} vs {THETA} tol 0.005 (residual {:.1e}, {} Newton steps)",
            sol.theta, sol.residual, sol.iterations
        ),
    )
}

const LEVELS: [f64; 4] = [0.95, 0.97, 0.99, 0.995];
const GC_Q: [f64; 4] = [3.13, 5.54, 8.89, 12.63];
const MC_Q: [f64; 4] = [3.51, 5.51, 9.51, 12.01];

fn criterion_4() -> Verdict {
    // reference quantiles were tabulated at the published premium
    let m = disability_model().with_theta(THETA);
    let moments = raw_moments_of_pv(&m, 0, 20).unwrap();
    let reference = JacobiReference::new(1.0, 0.05, -3.0, 70.0).unwrap();
    let gc = GcApproximation::new(&moments, reference, 20).unwrap();
    let gq: Vec<GcQuantile> = LEVELS.iter().map(|&q| gc.quantile(q).unwrap()).collect();
    let sample = simulate_pv(&m, 0, &SimulationConfig::new(1_000_000, 2022)).unwrap();
    let mq = sample.quantiles(&LEVELS).unwrap();
    let gc_ok: Vec<bool> = gq.iter().zip(GC_Q).map(|(q, p)| (q.value - p).abs() <= 0.4).collect();
    let mc_ok: Vec<bool> = mq.iter().zip(MC_Q).map(|(q, p)| (q - p).abs() <= 0.4).collect();
    let fmt = |v: &[f64], ok: &[bool]| {
        v.iter()
            .zip(ok)
            .map(|(x, o)| format!("{x:.2}{}", if *o { "" } else { "*" }))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let gv: Vec<f64> = gq.iter().map(|q| q.value).collect();
    verdict(
        gc_ok.iter().chain(&mc_ok).all(|&b| b),
        format!(
            "GC N=20 ({}) vs {GC_Q:?}; MC 10^6 ({}) vs {MC_Q:?}; tol 0.4, * = outside; GC non-monotone flags {:?}",
            fmt(&gv, &gc_ok),
            fmt(&mq, &mc_ok),
            gq.iter().map(|q| q.non_monotone).collect::<Vec<_>>()
        ),
    )
}

fn criterion_5() -> Verdict {
    let mut r = rng(5);
    let (mut worst_dual, mut worst_reserve) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let q = r.random_range(1..=3);
        let p = r.random_range(1..=3);
        let k = r.random_range(1..=3);
        let m = random_product(&mut r, q, p, 3.0);
        let vl = moment_stack(&m, k, 0.0, 3.0).unwrap();
        let ode = hattendorff_solve(&m, k, 0.0, 3.0, OdeOptions::default()).unwrap();
        for (a, b) in vl.reduced.iter().zip(&ode.reduced) {
            worst_dual = worst_dual.max(max_abs(a, b));
        }
        let v = reserve_matrix(&m, 0.0, 3.0).unwrap();
        worst_reserve = worst_reserve.max(max_abs(&vl.reduced[1], &v));
    }
    verdict(
        worst_dual <= 1e-6 && worst_reserve <= 1e-8,
        format!("20 models: Van Loan vs Hattendorff max {worst_dual:.2e} (tol 1e-6); V_r^(1) vs reserve max {worst_reserve:.2e} (tol 1e-8)"),
    )
}

/// Two biometric states with recovery and lumps on both transitions,
/// two interest states.
pub fn toy_model() -> ProductModel {
    let l = Matrix::from_row_slice(2, 2, &[-0.3, 0.3, 0.5, -0.5]);
    let pay = PaymentSpec::new(
        PiecewiseMatrix::constant(Matrix::from_column_slice(2, 1, &[-0.4, 1.0])),
        PiecewiseMatrix::constant(Matrix::from_row_slice(2, 2, &[0.0, 2.0, -1.0, 0.0])),
        PiecewiseMatrix::constant(Matrix::from_row_slice(2, 2, &[0.0, 0.3, 0.25, 0.0])),
    )
    .unwrap();
    let rates = ShortRateModel::homogeneous(
        Matrix::from_row_slice(2, 2, &[-0.4, 0.4, 0.6, -0.6]),
        DVector::from_column_slice(&[0.02, 0.08]),
        DVector::from_column_slice(&[1.0, 0.0]),
        0.0,
    )
    .unwrap();
    ProductModel::independent(&PiecewiseMatrix::constant(l), &pay, &rates, 8.0).unwrap()
}

fn criterion_6() -> Verdict {
    let m = toy_model();
    let exact = raw_moments_of_pv(&m, 0, 4).unwrap();
    let mut hits = 0;
    let mut misses = Vec::new();
    for rep in 0..20u64 {
        let s = simulate_pv(&m, 0, &SimulationConfig::new(100_000, 1000 + rep)).unwrap();
        let emp = s.raw_moments(4);
        let ok = (1..=4).all(|k| (emp[k - 1].0 - exact[k]).abs() <= 3.0 * emp[k - 1].1);
        if ok {
            hits += 1;
        } else {
            misses.push(rep);
        }
    }
    verdict(
        hits >= 18,
        format!("{hits}/20 repetitions with all raw moments k<=4 within 3 SE (need 18); misses {misses:?}; analytic {:?}", &exact[1..]),
    )
}

fn criterion_7() -> Verdict {
    let mut r = rng(7);
    let mut worst = [0.0f64; 5];
    for _ in 0..100 {
        let n = r.random_range(1..=4);
        let breaks = [0.0, 0.7, 1.5, 2.0];
        // ‖F‖·(t−s) stays below 5 for the inverse identity
        let f = piecewise(&mut r, &breaks, |g| random_matrix(g, n, n, 0.6));
        let mut pts = [r.random_range(0.0..2.0), r.random_range(0.0..2.0), r.random_range(0.0..2.0)];
        pts.sort_by(f64::total_cmp);
        let [s, t, u] = pts;
        let whole = prod_integral(&f, s, u).unwrap();
        let split = prod_integral(&f, s, t).unwrap() * prod_integral(&f, t, u).unwrap();
        worst[0] = worst[0].max(max_abs(&whole, &split));

        let inv = prod_integral(&f, s, u).unwrap() * prod_integral_reverse(&f, s, u).unwrap();
        worst[1] = worst[1].max(max_abs(&inv, &Matrix::identity(n, n)));

        let c = r.random_range(0.0..0.2);
        let shifted = f.map(|m| m - Matrix::identity(n, n) * c).unwrap();
        let lhs = prod_integral(&f, s, u).unwrap() * (-c * (u - s)).exp();
        worst[2] = worst[2].max(max_abs(&lhs, &prod_integral(&shifted, s, u).unwrap()));

        let m2 = r.random_range(1..=3);
        let a = piecewise(&mut r, &breaks, |g| random_intensity(g, n, 1.0));
        let b = piecewise(&mut r, &breaks, |g| random_intensity(g, m2, 1.0));
        let ks = a.zip_with(&b, kron_sum).unwrap();
        let lhs = prod_integral(&ks, s, u).unwrap();
        let rhs = kron(&prod_integral(&a, s, u).unwrap(), &prod_integral(&b, s, u).unwrap());
        worst[3] = worst[3].max(max_abs(&lhs, &rhs));

        // Van Loan upper-right block against Simpson quadrature, 2 cells of [0, 1]
        let vb = [0.0, 0.4, 1.0];
        let av = piecewise(&mut r, &vb, |g| random_matrix(g, 3, 3, 1.0));
        let bv = piecewise(&mut r, &vb, |g| random_matrix(g, 3, 3, 1.0));
        let cv = piecewise(&mut r, &vb, |g| random_matrix(g, 3, 3, 1.0));
        let ur = van_loan(&av, &bv, &cv, 0.0, 1.0).unwrap().upper_right;
        let (a0, a1) = (&av.values()[0], &av.values()[1]);
        let (c0, c1) = (&cv.values()[0], &cv.values()[1]);
        let first = simpson(
            |x| (a0 * x).exp() * &bv.values()[0] * (c0 * (0.4 - x)).exp() * (c1 * 0.6).exp(),
            0.0,
            0.4,
            400,
        );
        let second = simpson(
            |x| (a0 * 0.4).exp() * (a1 * (x - 0.4)).exp() * &bv.values()[1] * (c1 * (1.0 - x)).exp(),
            0.4,
            1.0,
            600,
        );
        worst[4] = worst[4].max(max_abs(&ur, &(first + second)));
    }
    let tol = [1e-10, 1e-9, 1e-10, 1e-10, 1e-8];
    let names = ["product rule", "inverse", "scalar shift", "Kronecker sum", "Van Loan vs Simpson"];
    let parts: Vec<String> = (0..5)
        .map(|i| format!("{} {:.1e} (tol {:.0e}) [{}]", names[i], worst[i], tol[i], tag(worst[i] <= tol[i])))
        .collect();
    verdict(
        (0..5).all(|i| worst[i] <= tol[i]),
        format!("100 instances each: {}", parts.join("; ")),
    )
}

fn random_sample<R: Rng>(r: &mut R) -> WeightedSample {
    let exact: Vec<(f64, f64)> = (0..30)
        .map(|_| {
            let rate = if r.random::<f64>() < 0.5 { 0.7 } else { 3.0 };
            (-r.random::<f64>().ln() / rate + 1e-3, r.random_range(0.5..1.5))
        })
        .collect();
    let censored = vec![(2.5, r.random_range(0.5..2.0))];
    WeightedSample::new(exact, censored).unwrap()
}

fn criterion_8() -> Verdict {
    let mut r = rng(8);
    let mut worst_drop = 0.0f64;
    for i in 0..50 {
        let sample = random_sample(&mut r);
        let mut cfg = FitConfig::new(1 + i % 3);
        cfg.restarts = 1;
        cfg.max_iters = 200;
        cfg.seed = i as u64;
        if i % 4 == 3 {
            cfg.structure = Structure::Coxian;
        }
        let fit = em_fit(&sample, &cfg).unwrap();
        for w in fit.trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    let monotone = worst_drop <= 1e-9;

    // fixed exits stay bit-identical at every iteration
    let sample = random_sample(&mut r);
    let fixed = vec![0.3, 0.0, 1.7];
    let mut cfg = FitConfig::new(3);
    cfg.fixed_exit = Some(fixed.clone());
    let t = Matrix::from_row_slice(3, 3, &[-1.3, 0.6, 0.4, 0.5, -1.0, 0.5, 0.2, 0.3, -2.2]);
    let mut params = PhParams {
        initial: DVector::from_column_slice(&[0.5, 0.3, 0.2]),
        sub_intensity: t,
        exit: DVector::from_vec(fixed.clone()),
    };
    let mut bit_exact = true;
    for _ in 0..100 {
        let stats = e_step(&params.to_phase_type().unwrap(), &sample).unwrap();
        params = m_step(&stats, &cfg).unwrap();
        bit_exact &= params.exit.iter().zip(&fixed).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let fit = em_fit(&sample, &cfg).unwrap();
    bit_exact &= fit.params.exit.iter().zip(&fixed).all(|(a, b)| a.to_bits() == b.to_bits());

    // one phase: the EM fixed point is the maximum likelihood estimate 1/ȳ
    let times: Vec<f64> = (0..200).map(|_| -r.random::<f64>().ln() / 0.8).collect();
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let mut cfg = FitConfig::new(1);
    cfg.restarts = 1;
    let fit = em_fit(&WeightedSample::from_times(&times).unwrap(), &cfg).unwrap();
    let err = (fit.params.exit[0] - 1.0 / mean).abs();
    verdict(
        monotone && bit_exact && err <= 1e-9,
        format!(
            "50 fits, worst loglik decrease {worst_drop:.1e} (slack 1e-9) [{}]; fixed exits bit-exact over 100 iterations [{}]; exponential |λ̂ − 1/ȳ| {err:.1e} (tol 1e-9) [{}]",
            tag(monotone),
            tag(bit_exact),
            tag(err <= 1e-9)
        ),
    )
}

fn criterion_9() -> Verdict {
    let reference = JacobiReference::new(1.0, 0.05, -3.0, 70.0).unwrap();
    let (z, w) = gauss_jacobi(40, reference.alpha, reference.beta);
    let xs: Vec<f64> = z.iter().map(|z| -3.0 + 73.0 * (1.0 + z) / 2.0).collect();
    let mut ortho = 0.0f64;
    for n in 0..=10 {
        for m in 0..=10 {
            let ip: f64 = xs
                .iter()
                .zip(&w)
                .map(|(x, w)| w * reference.orthonormal(n, *x) * reference.orthonormal(m, *x))
                .sum();
            let want = if n == m { 1.0 } else { 0.0 };
            ortho = ortho.max((ip - want).abs());
        }
    }
    let own = gc_coefficients(&reference.raw_moments(8), &reference, 8).unwrap();
    let self_err = own
        .iter()
        .enumerate()
        .map(|(n, c)| (c - if n == 0 { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    // a different beta law on the same support, expanded to order 20
    let target = JacobiReference::new(3.0, 1.5, -3.0, 70.0).unwrap();
    let gc = GcApproximation::new(&target.raw_moments(20), reference, 20).unwrap();
    let h = 1e-3;
    let fd = (1..100)
        .map(|i| {
            let y = -3.0 + 73.0 * i as f64 / 100.0;
            let d = (gc.cdf_unclamped(y + h).unwrap() - gc.cdf_unclamped(y - h).unwrap()) / (2.0 * h);
            (d - gc.density(y).unwrap()).abs()
        })
        .fold(0.0, f64::max);
    verdict(
        ortho <= 1e-8 && self_err <= 1e-6 && fd <= 1e-4,
        format!(
            "orthonormality n,m<=10 {ortho:.1e} (tol 1e-8) [{}]; self-coefficients n<=8 {self_err:.1e} (tol 1e-6) [{}]; dF/dy vs density {fd:.1e} (tol 1e-4) [{}]",
            tag(ortho <= 1e-8),
            tag(self_err <= 1e-6),
            tag(fd <= 1e-4)
        ),
    )
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        run(1, "rho reproduction", s(1), criterion_1),
        run(2, "calibration quality, 2003 curve", s(60), criterion_2),
        run(3, "equivalence premium", s(10), criterion_3),
        run(4, "quantile table (GC and MC)", s(300), criterion_4),
        run(5, "dual-path moment equivalence", s(600), criterion_5),
        run(6, "MC vs analytic moments", s(600), criterion_6),
        run(7, "product-integral identities", s(30), criterion_7),
        run(8, "EM properties", s(600), criterion_8),
        run(9, "Gram–Charlier properties", s(600), criterion_9),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
