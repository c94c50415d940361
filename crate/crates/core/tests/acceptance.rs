//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::process::ExitCode;
use std::time::Instant;

use hopflax_core::cli::{execute, Command, Preset, RunConfig};
use hopflax_core::field::{evaluate_u, EvaluationConfig, ValueField};
use hopflax_core::fractional::{caputo_l1, TimeSeries};
use hopflax_core::geometry::QuotientModel;
use hopflax_core::stable::{inverse_cdf_at, inverse_pdf, ks_bound, sample_inverse, sample_stable, FractionalOrder};
use hopflax_core::verify::{
    check_classical_limit, check_initial_layer, check_spatial_modulus, check_time_holder, check_time_monotonicity,
    default_dpp_pairs, verify_dpp, verify_moments, verify_subsolution, verify_subsolution_closed_form, CheckStatus,
    PropertyCheck,
};
use hopflax_core::LagrangianPair;
use statrs::function::gamma::gamma;

const SEED: u64 = 20_240_601;

type Outcome = Result<String, String>;

fn order(b: f64) -> FractionalOrder {
    FractionalOrder::new(b).unwrap()
}

fn require(check: &PropertyCheck) -> Result<(), String> {
    if check.status == CheckStatus::Pass {
        Ok(())
    } else {
        Err(format!(
            "{} {:?}: margin {:.3e}, tolerance {:.3e}, {} violations",
            check.name, check.status, check.margin, check.tolerance_budget.total, check.violations
        ))
    }
}

/// Identity-quadratic preset fields shared by several criteria.
struct Preset1d {
    cfg: RunConfig,
    model: QuotientModel,
    pair: LagrangianPair,
    coarse: ValueField,
}

impl Preset1d {
    fn build() -> Self {
        let cfg = RunConfig::preset(Preset::IdentityQuadratic, Command::Verify);
        let model = cfg.model().unwrap();
        let (pair, _) = cfg.pair(&model).unwrap();
        let coarse = evaluate_u(
            &model,
            &pair,
            cfg.order(),
            &EvaluationConfig::new(cfg.n_paths, cfg.seed, cfg.times()),
        )
        .unwrap();
        Self {
            cfg,
            model,
            pair,
            coarse,
        }
    }
}

fn moment_identity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for b in [0.3, 0.5, 0.8] {
        let check = verify_moments(order(b), &[1.0, 2.0], &[0.5, 1.0, 2.0], 1_000_000, SEED).map_err(|e| e.to_string())?;
        require(&check)?;
        // Second route: raw D_1 draws against Gamma(l + 1) / Gamma(l b + 1) t^(l b).
        let d = sample_stable(order(b), 1_000_000, SEED).map_err(|e| e.to_string())?;
        for lambda in [1.0, 2.0] {
            for t in [0.5, 1.0, 2.0] {
                let xs: Vec<f64> = d.values.iter().map(|&d1| (t / d1).powf(b * lambda)).collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                let se = (var / n).sqrt();
                let exact = gamma(lambda + 1.0) / gamma(lambda * b + 1.0) * t.powf(lambda * b);
                let z = (mean - exact).abs() / se;
                if z > 3.0 {
                    return Err(format!("beta = {b}, lambda = {lambda}, t = {t}: {z:.2} standard errors"));
                }
                worst = worst.max(z);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("runtime {secs:.1}s exceeds 30s"));
    }
    Ok(format!("n = 1e6, 18 moments within {worst:.2} se (limit 3), runtime {secs:.1}s"))
}

fn pdf_identity() -> Outcome {
    let mut worst_ks: f64 = 0.0;
    for b in [0.3, 0.5, 0.8] {
        let sample = sample_inverse(order(b), 1.0, 100_000, SEED).map_err(|e| e.to_string())?;
        let ks = ks_bound(&sample.values, 2000, |xs| inverse_cdf_at(order(b), 1.0, xs)).map_err(|e| e.to_string())?;
        if ks.statistic >= 0.01 {
            return Err(format!("beta = {b}: KS {:.4e} >= 0.01", ks.statistic));
        }
        worst_ks = worst_ks.max(ks.statistic);
    }
    let mut worst_pt: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        for k in 1..=60 {
            let s = 0.1 * k as f64;
            let closed = (-s * s / (4.0 * t)).exp() / (std::f64::consts::PI * t).sqrt();
            let v = inverse_pdf(order(0.5), s, t).map_err(|e| e.to_string())?;
            worst_pt = worst_pt.max((v - closed).abs());
        }
    }
    if worst_pt >= 1e-3 {
        return Err(format!("beta = 1/2 density differs from closed form by {worst_pt:.3e}"));
    }
    Ok(format!("max KS {worst_ks:.4e} < 0.01; beta = 1/2 closed form within {worst_pt:.1e}"))
}

fn caputo_l1_correctness() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut rates = Vec::new();
    for b in [0.3, 0.5, 0.8] {
        for p in [1.0, 2.0, b] {
            let series = TimeSeries::from_fn(1e-3, 1001, |t| t.powf(p)).map_err(|e| e.to_string())?;
            let d = caputo_l1(&series, order(b)).map_err(|e| e.to_string())?;
            // Independent oracle: Gamma(p + 1) / Gamma(p + 1 - beta) t^(p - beta) at t = 1.
            let exact = gamma(p + 1.0) / gamma(p + 1.0 - b);
            let last = d.values[d.len() - 1];
            let rel = (last - exact).abs() / exact.abs();
            if rel >= 0.01 {
                return Err(format!("beta = {b}, p = {p}: relative error {rel:.3e}"));
            }
            worst_rel = worst_rel.max(rel);
        }
        let err = |n: usize| {
            let dt = 1.0 / n as f64;
            let s = TimeSeries::from_fn(dt, n + 1, |t| t * t).unwrap();
            let d = caputo_l1(&s, order(b)).unwrap();
            (d.values[d.len() - 1] - 2.0 / gamma(3.0 - b)).abs()
        };
        let rate = (err(250) / err(500)).log2();
        if (rate - (2.0 - b)).abs() > 0.15 {
            return Err(format!("beta = {b}: order {rate:.3}, expected {:.3}", 2.0 - b));
        }
        rates.push(format!("{rate:.3}"));
    }
    Ok(format!(
        "max relative error {worst_rel:.2e} at dt = 1e-3; orders {} for beta 0.3/0.5/0.8",
        rates.join("/")
    ))
}

fn initial_layer(p: &Preset1d) -> Outcome {
    let model = p.cfg.refined_model().map_err(|e| e.to_string())?;
    let (pair, constants) = p.cfg.pair(&model).map_err(|e| e.to_string())?;
    let mut ecfg = EvaluationConfig::new(100_000, p.cfg.seed, p.cfg.refined_times());
    ecfg.x_indices = Some(p.cfg.refined_probes());
    let window = (ecfg.time_grid[0], ecfg.time_grid[ecfg.time_grid.len() - 1]);
    if (window.0 / 1e-3 - 1.0).abs() > 1e-12 || (window.1 / 1e-1 - 1.0).abs() > 1e-12 {
        return Err("refined time window is not [1e-3, 1e-1]".into());
    }
    let field = evaluate_u(&model, &pair, p.cfg.order(), &ecfg).map_err(|e| e.to_string())?;
    let (slope, bound) = check_initial_layer(&field, &pair, 1, constants.ell).map_err(|e| e.to_string())?;
    require(&slope)?;
    require(&bound)?;
    // Independent slope: least squares over log max_x |u - g| against log t.
    let xs: Vec<f64> = field.times.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = (0..field.times.len())
        .map(|k| {
            (0..field.rows.len())
                .map(|r| (field.value(r, k) - field.g[r]).abs())
                .fold(0.0, f64::max)
                .ln()
        })
        .collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let fitted = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    if (fitted - 0.5).abs() > 0.1 {
        return Err(format!("slope {fitted:.4} outside 0.5 +- 0.1"));
    }
    Ok(format!("slope {fitted:.4} (beta = 0.5), n_paths = 1e5"))
}

fn spatial_modulus(p: &Preset1d) -> Outcome {
    if p.model.len() != 41 || p.coarse.times.len() != 20 {
        return Err("preset grid is not 41 points x 20 times".into());
    }
    let check = check_spatial_modulus(&p.coarse, &p.model, &p.pair).map_err(|e| e.to_string())?;
    require(&check)?;
    if check.violations != 0 {
        return Err(format!("{} violating pairs", check.violations));
    }
    Ok(format!("0 violations over {} (pair, time) points", check.n_points_checked))
}

fn monotonicity_and_holder(p: &Preset1d) -> Outcome {
    let mono = check_time_monotonicity(&p.coarse).map_err(|e| e.to_string())?;
    require(&mono)?;
    if mono.violations != 0 {
        return Err(format!("{} monotonicity violations", mono.violations));
    }
    let model = p.cfg.refined_model().map_err(|e| e.to_string())?;
    let (pair, _) = p.cfg.pair(&model).map_err(|e| e.to_string())?;
    let mut ecfg = EvaluationConfig::new(p.cfg.n_paths, p.cfg.seed, p.cfg.refined_times());
    ecfg.x_indices = Some(p.cfg.refined_probes());
    let fine = evaluate_u(&model, &pair, p.cfg.order(), &ecfg).map_err(|e| e.to_string())?;
    let holder = check_time_holder(&fine).map_err(|e| e.to_string())?;
    require(&holder)?;
    Ok(format!(
        "0 monotonicity violations; Hoelder fit holds on {} held-out gaps",
        holder.n_points_checked
    ))
}

fn dpp(p: &Preset1d) -> Outcome {
    let mut ecfg = EvaluationConfig::new(p.cfg.n_paths, p.cfg.seed, p.cfg.times());
    ecfg.condition_et_ge_1 = true;
    let check = verify_dpp(&p.model, &p.pair, p.cfg.order(), &ecfg, &default_dpp_pairs(&ecfg.time_grid))
        .map_err(|e| e.to_string())?;
    require(&check)?;
    Ok(format!(
        "min slack {:.3e} >= -{:.3e} over {} (x, s, t), conditioning on",
        check.margin, check.tolerance_budget.total, check.n_points_checked
    ))
}

fn subsolution(p: &Preset1d) -> Outcome {
    let c = p.pair.constant();
    let q: Vec<f64> = p.model.base_points().iter().map(|x| x[0]).collect();
    let closed = verify_subsolution_closed_form(p.cfg.order(), c, &q, &p.coarse.times).map_err(|e| e.to_string())?;
    require(&closed)?;
    if closed.tolerance_budget.total != 0.0 || closed.violations != 0 {
        return Err("closed-form residual check needed a tolerance".into());
    }
    // Second route: the L1 scheme applied to u(x, t) - x = -t^beta / (2 Gamma(1 + beta)).
    let b = p.cfg.beta;
    let series = TimeSeries::from_fn(1e-3, 1001, |t| -0.5 * t.powf(b) / gamma(1.0 + b)).map_err(|e| e.to_string())?;
    let d = caputo_l1(&series, order(b)).map_err(|e| e.to_string())?;
    let at_one = d.values[d.len() - 1];
    if (at_one + 0.5).abs() > 5e-3 {
        return Err(format!("L1 Caputo derivative of the closed form is {at_one}, expected -1/2"));
    }
    let q_set: Vec<usize> = (0..p.model.len()).collect();
    let mc = verify_subsolution(&p.coarse, &p.model, &p.pair, &q_set).map_err(|e| e.to_string())?;
    require(&mc)?;
    let interior = (p.model.len() - 2) * p.coarse.times.len();
    let passing = mc.n_points_checked - mc.violations;
    let excluded = interior - mc.n_points_checked;
    let flagged = mc.notes.iter().any(|n| n.contains(&format!("excluded for non-differentiability {excluded}")));
    if !flagged {
        return Err(format!("{excluded} excluded cells not reported: {:?}", mc.notes));
    }
    let share = passing as f64 / interior as f64;
    if share < 0.8 {
        return Err(format!("only {:.1}% of interior cells pass", 100.0 * share));
    }
    Ok(format!(
        "closed form exact (margin {:.3}); MC residual within budget at {passing}/{interior} cells, {excluded} flagged",
        closed.margin
    ))
}

fn classical(p: &Preset1d) -> Outcome {
    let field = evaluate_u(
        &p.model,
        &p.pair,
        order(0.999),
        &EvaluationConfig::new(p.cfg.n_paths, p.cfg.seed, p.cfg.times()),
    )
    .map_err(|e| e.to_string())?;
    let check = check_classical_limit(&field, &p.model, &p.pair, 0.02).map_err(|e| e.to_string())?;
    require(&check)?;
    // Independent deterministic grid minimisation of (x - z)^2 / (2t) + z.
    let ys: Vec<f64> = p.model.base_points().iter().map(|x| x[0]).collect();
    let (mut num, mut den): (f64, f64) = (0.0, 0.0);
    for (r, &x) in ys.iter().enumerate() {
        for (k, &t) in field.times.iter().enumerate() {
            let v = ys
                .iter()
                .map(|&z| (x - z) * (x - z) / (2.0 * t) + z)
                .fold(f64::INFINITY, f64::min);
            num = num.max((field.value(r, k) - v).abs());
            den = den.max(v.abs());
        }
    }
    let rel = num / den;
    if rel >= 0.02 {
        return Err(format!("relative sup-norm distance {rel:.3e}"));
    }
    Ok(format!("relative sup-norm distance {rel:.3e} < 2%"))
}

fn determinism() -> Outcome {
    let mut names = Vec::new();
    for command in [Command::Sample, Command::Transform, Command::Evaluate, Command::Verify] {
        let mut cfg = RunConfig::preset(Preset::IdentityQuadratic, command);
        cfg.n_paths = 20_000;
        cfg.refined.points = 801;
        let run = |w: usize| {
            let mut c = cfg.clone();
            c.workers = Some(w);
            execute(&c).map_err(|e| e.to_string())
        };
        let (a, b) = (run(1)?, run(4)?);
        if a.artifacts != b.artifacts {
            let diff: Vec<&str> = a.artifacts.names().filter(|n| a.artifacts.get(n) != b.artifacts.get(n)).collect();
            return Err(format!("{command:?}: artifacts differ between 1 and 4 workers: {diff:?}"));
        }
        names.extend(a.artifacts.names().map(str::to_string));
    }
    Ok(format!("{} artifacts byte-identical for 1 and 4 workers", names.len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag} {name}: {detail}");
    };
    report(1, "moment identity", moment_identity());
    report(2, "inverse density", pdf_identity());
    report(3, "Caputo L1 scheme", caputo_l1_correctness());
    let preset = Preset1d::build();
    report(4, "initial layer", initial_layer(&preset));
    report(5, "spatial modulus", spatial_modulus(&preset));
    report(6, "time monotonicity and Hoelder", monotonicity_and_holder(&preset));
    report(7, "dynamic programming", dpp(&preset));
    report(8, "subsolution", subsolution(&preset));
    report(9, "classical consistency", classical(&preset));
    report(10, "determinism", determinism());
    println!(
        "acceptance: {} of 10 passed in {:.1}s",
        10 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
