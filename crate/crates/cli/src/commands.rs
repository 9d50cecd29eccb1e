use std::path::Path;

use serde::Serialize;
use serde_json::json;

use phrates::bond::{
    bond_prices, calibrate as fit_curve, forward_rate, g2pp_prices, rho_from_prices, zero_yield, G2ppParams, MassPlacement,
    ShortRateModel,
};
use phrates::emfit::{FitConfig, Structure};
use phrates::gramcharlier::{GcApproximation, JacobiReference};
use phrates::io::{read_curve_file, read_model_file, read_product_file, write_curve, ModelFile, Product};
use phrates::life::{equivalence_premium, raw_moments_of_pv, reserve_vector, thiele_solve, OdeOptions, ProductModel};
use phrates::matrix::grid;
use phrates::mcsim::{simulate_pv, SimulationConfig};

use crate::output::RunDir;
use crate::{CalibrateArgs, CurveArgs, Failure, G2ppArgs, PlacementArg, ProductArgs, SimulateArgs, StructureArg, ValueArgs};

fn lib<T>(context: &str, r: phrates::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::from_lib(context, e))
}

pub fn calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    let curve = lib(&args.curve.display().to_string(), read_curve_file(&args.curve))?;
    let rates = match args.rates.trim() {
        "auto" => None,
        list => Some(
            list.split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::input(format!("--rates: {list:?} is neither `auto` nor a list of numbers")))?,
        ),
    };
    let mut cfg = FitConfig::new(args.p);
    cfg.structure = match args.structure {
        StructureArg::General => Structure::General,
        StructureArg::Coxian => Structure::Coxian,
    };
    cfg.restarts = args.restarts;
    cfg.seed = args.seed;
    cfg.max_iters = args.max_iters;
    cfg.tol = args.tol;
    let placement = match args.placement {
        PlacementArg::Midpoint => MassPlacement::Midpoint,
        PlacementArg::Right => MassPlacement::Right,
    };
    let res = match fit_curve(&curve, rates.as_deref(), &cfg, placement) {
        Ok(r) => r,
        // size mismatches and unusable curves are the caller's input
        Err(e @ (phrates::Error::Structure(_) | phrates::Error::NonMonotone { .. } | phrates::Error::Domain(_))) => {
            return Err(Failure::input(format!("calibration input: {e}")))
        }
        Err(e) => return Err(Failure::compute(format!("fit failed: {e}"))),
    };
    let mut run = RunDir::create(&args.out, "calibrate", &[&args.curve], args, Some(args.seed))?;
    run.json("model.json", &lib("model", ModelFile::from_model(&res.model))?)?;
    run.json(
        "fit_report.json",
        &json!({
            "rho": res.rho,
            "loglik": res.loglik,
            "mode": res.mode,
            "max_price_error": res.max_price_error,
            "converged": res.fit.converged,
            "iterations": res.fit.trace.len(),
            "best_restart": res.fit.best_restart,
            "restart_logliks": res.fit.restart_logliks,
            "degenerate_states": res.fit.degenerate_states,
        }),
    )?;
    let rows = curve
        .maturities
        .iter()
        .zip(&curve.prices)
        .zip(&res.model_prices)
        .map(|((&t, &p), &m)| vec![t, p, m]);
    run.csv("fitted_curve.csv", &["maturity", "observed", "model"], rows)?;
    println!(
        "rho = {}  loglik = {}  max price error = {:e}",
        res.rho, res.loglik, res.max_price_error
    );
    run.finish()
}

fn load_model(path: &Path) -> Result<ShortRateModel, Failure> {
    lib(&path.display().to_string(), read_model_file(path))
}

fn maturities(args: &CurveArgs) -> Result<Vec<f64>, Failure> {
    let m = match &args.maturities {
        Some(m) => m.clone(),
        None => (1..=args.max_maturity.floor() as usize).map(|t| t as f64).collect(),
    };
    if m.is_empty() || m.iter().any(|t| !(*t >= 0.0)) || m.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Failure::input("maturities must be nonnegative and strictly increasing"));
    }
    Ok(m)
}

pub fn price(args: &CurveArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let mats = maturities(args)?;
    let prices = lib("pricing", bond_prices(&model, &mats))?;
    let curve = lib("pricing", phrates::bond::BondCurve::new(mats, prices.clone(), None))?;
    let mut run = RunDir::create(&args.out, "price", &[&args.model], args, None)?;
    lib("prices.csv", write_curve(run.file("prices.csv")?, &curve))?;
    run.json("results.json", &json!({ "maturities": curve.maturities, "prices": prices }))?;
    run.finish()
}

pub fn yields(args: &CurveArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let mats = maturities(args)?;
    let mut rows = Vec::with_capacity(mats.len());
    for &t in &mats {
        let y = if t > 0.0 { lib("yield", zero_yield(&model, t))? } else { f64::NAN };
        rows.push(vec![t, y, lib("forward rate", forward_rate(&model, 0.0, t, None))?]);
    }
    let mut run = RunDir::create(&args.out, "yield", &[&args.model], args, None)?;
    run.json(
        "results.json",
        &json!({
            "maturities": mats,
            "yields": rows.iter().map(|r| r[1]).collect::<Vec<_>>(),
            "forwards": rows.iter().map(|r| r[2]).collect::<Vec<_>>(),
        }),
    )?;
    run.csv("yields.csv", &["maturity", "yield", "forward"], rows)?;
    run.finish()
}

pub fn g2pp(args: &G2ppArgs) -> Result<(), Failure> {
    let params: G2ppParams = match &args.params {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            serde_json::from_reader(f)
                .map_err(|e| Failure::input(format!("{} line {}: {e}", p.display(), e.line())))?
        }
        None => G2ppParams::example(),
    };
    if args.max_maturity == 0 {
        return Err(Failure::input("--max-maturity must be at least 1"));
    }
    let mats: Vec<f64> = (1..=args.max_maturity).map(f64::from).collect();
    let curve = lib("G2++ prices", g2pp_prices(&params, &mats))?;
    let rho = lib("rho", rho_from_prices(&curve))?;
    let inputs: Vec<&Path> = args.params.iter().map(|p| p.as_path()).collect();
    let mut run = RunDir::create(&args.out, "g2pp", &inputs, args, None)?;
    lib("g2pp_curve.csv", write_curve(run.file("g2pp_curve.csv")?, &curve))?;
    run.json("results.json", &json!({ "params": params, "rho": rho }))?;
    println!("rho = {rho}");
    run.finish()
}

struct Loaded {
    product: Product,
    model: ProductModel,
    start: usize,
}

fn load_product(args: &ProductArgs) -> Result<Loaded, Failure> {
    let rates = load_model(&args.model)?;
    let pname = args.product.display().to_string();
    let product = lib(&pname, read_product_file(&args.product).and_then(|f| f.to_product()))?;
    let model = lib(&format!("combining {pname} with the rate model"), product.with_rate_model(&rates))?;
    let rate_state = match args.rate_state {
        Some(j) if j < rates.dim() => j,
        Some(j) => return Err(Failure::input(format!("--rate-state {j} but the rate model has {} states", rates.dim()))),
        None => rates
            .initial()
            .iter()
            .position(|&x| x == 1.0)
            .ok_or_else(|| Failure::input("the rate model's pi is not a unit vector; pass --rate-state"))?,
    };
    let start = lib("start state", model.state_index(product.start_state, rate_state))?;
    Ok(Loaded {
        model: model.with_theta(args.theta),
        product,
        start,
    })
}

#[derive(Serialize)]
struct McCheck {
    analytic_mean: f64,
    mc_mean: f64,
    std_error: f64,
    within_3se: bool,
}

pub fn value(args: &ValueArgs) -> Result<(), Failure> {
    let Loaded { product, mut model, start } = load_product(&args.product)?;
    let horizon = model.horizon();
    let mut results = serde_json::Map::new();
    results.insert("states".into(), json!(product.states));
    results.insert("start_state".into(), json!(start));

    if args.premium_solve {
        if !product.has_theta {
            return Err(Failure::input("--premium-solve: no payment depends on theta"));
        }
        let sol = lib("premium", equivalence_premium(&model, start))?;
        model = model.with_theta(sol.theta);
        results.insert(
            "premium".into(),
            json!({ "theta": sol.theta, "residual": sol.residual }),
        );
    }
    results.insert("theta".into(), json!(model.theta()));

    let v0 = lib("reserve", reserve_vector(&model, 0.0, horizon))?;
    results.insert("reserve".into(), json!(v0[start]));
    results.insert("reserves_at_0".into(), json!(v0.as_slice()));

    if !(args.reserve_step > 0.0) {
        return Err(Failure::input("--reserve-step must be positive"));
    }
    let times = lib("reserve grid", grid(0.0, horizon, args.reserve_step, &[]))?;
    let table = lib("Thiele", thiele_solve(&model, horizon, &times, OdeOptions::default()))?;

    let order = args
        .moments
        .max(args.gc.map_or(0, |g| g.order))
        .max(if args.simulate.is_some() { 1 } else { 0 });
    let moments = if order > 0 {
        lib("moments", raw_moments_of_pv(&model, start, order))?
    } else {
        vec![1.0]
    };
    if args.moments > 0 {
        results.insert("moments".into(), json!(&moments[..=args.moments]));
    }

    let mut run = RunDir::create(&args.out, "value", &[&args.product.model, &args.product.product], args, args.simulate.map(|s| s.seed))?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..model.dim()).map(|i| format!("V{i}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.csv(
        "reserves.csv",
        &header,
        times.iter().zip(&table).map(|(&t, v)| std::iter::once(t).chain(v.iter().copied()).collect()),
    )?;

    if let Some(g) = args.gc {
        let reference = JacobiReference::new(g.alpha, g.beta, g.a, g.b).map_err(|e| Failure::input(format!("--gc: {e}")))?;
        let gc = lib("Gram-Charlier", GcApproximation::new(&moments[..=g.order], reference, g.order))?;
        let quantiles = args
            .levels
            .iter()
            .map(|&q| lib("Gram-Charlier quantile", gc.quantile(q)))
            .collect::<Result<Vec<_>, _>>()?;
        let t = lib("Gram-Charlier table", gc.table(args.table_points))?;
        results.insert(
            "gram_charlier".into(),
            json!({
                "reference": reference,
                "coefficients": gc.coefficients,
                "quantiles": quantiles,
                "negative_density_points": t.negative_density,
                "clamped_cdf_points": t.clamped_cdf,
            }),
        );
        run.csv(
            "gc_table.csv",
            &["x", "density", "cdf"],
            (0..t.x.len()).map(|i| vec![t.x[i], t.density[i], t.cdf[i]]),
        )?;
    }

    if let Some(s) = args.simulate {
        let sample = lib("simulation", simulate_pv(&model, start, &SimulationConfig::new(s.paths, s.seed)))?;
        let summary = lib("simulation summary", sample.summary(&args.levels))?;
        let check = McCheck {
            analytic_mean: moments[1],
            mc_mean: summary.mean,
            std_error: summary.std_error,
            within_3se: (summary.mean - moments[1]).abs() <= 3.0 * summary.std_error,
        };
        results.insert("simulation".into(), json!({ "summary": summary, "mean_check": check }));
    }

    println!("reserve V(0) = {}", v0[start]);
    run.json("results.json", &results)?;
    run.finish()
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let Loaded { model, start, .. } = load_product(&args.product)?;
    let cfg = SimulationConfig {
        workers: args.workers,
        ..SimulationConfig::new(args.paths, args.seed)
    };
    let sample = lib("simulation", simulate_pv(&model, start, &cfg))?;
    let summary = lib("summary", sample.summary(&args.levels))?;
    let hist = lib("histogram", sample.histogram(args.bins))?;
    let mut run = RunDir::create(&args.out, "simulate", &[&args.product.model, &args.product.product], args, Some(args.seed))?;
    lib("histogram.csv", hist.write_csv(run.file("histogram.csv")?))?;
    if args.raw {
        let path = run.path("pv.bin");
        lib("pv.bin", sample.write_raw_file(&path))?;
        run.record(path);
    }
    run.json(
        "results.json",
        &json!({
            "summary": summary,
            "transitions": sample.transitions,
            "transition_lumps": sample.transition_lumps,
            "sojourn_lumps": sample.sojourn_lumps,
        }),
    )?;
    println!("mean = {} ± {}", summary.mean, summary.std_error);
    run.finish()
}
