use lae::grassmann::{boundary_parity, enumerate_cells, index_sets};
use lae::landscape::{
    critical_point, curvature_signature_with_cutoff, default_hessian_step, haar_frame, m0, numerical_hessian,
    ppca_from_decoder, ppca_weights,
};
use lae::model::{grad_norm, loss};
use lae::spectra::{self, symmetric_eigen};
use lae::training::{self, initial_params, lae_pca, tied_step, Optimizer, PcaConfig, TrainConfig, TrainTrace};
use lae::verify::{alignment_report, grad_check, hessian_signature, principal_angles, shrinkage_points, ShrinkageReport};
use lae::{CriticalSpec, DataMatrix, IndexSet, LossKind, LossSpec, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::artifacts::{num, opt_num, RunDir};
use crate::config::{Command, ExperimentConfig, Spectrum};
use crate::error::{CliError, Result};

/// Numerical Hessians are only formed up to this many parameters.
const HESSIAN_MAX_PARAMS: usize = 64;
const ZERO_BAND: f64 = 1e-4;

pub fn run(command: Command, config: ExperimentConfig, run: &RunDir) -> Result<()> {
    config.validate(command)?;
    println!("seed = {}", config.seed);
    match command {
        Command::Train => train(config, run),
        Command::Landscape => landscape(config, run),
        Command::Sweep => sweep(config, run),
        Command::Morse => morse(config, run),
        Command::Pca => pca(config, run),
        Command::Verify => verify(config, run),
    }
}

fn spec_for(kind: LossKind, lambda: f64) -> Result<LossSpec> {
    Ok(match kind {
        LossKind::Unregularized => LossSpec::unregularized(),
        kind => LossSpec::new(kind, lambda)?,
    })
}

fn write_trace(run: &RunDir, trace: &TrainTrace) -> Result<()> {
    let mut w = run.csv("trace.csv", &["epoch", "loss", "transpose_gap", "grad_norm"])?;
    for r in &trace.records {
        w.row([r.epoch.to_string(), num(r.loss), num(r.transpose_gap), num(r.grad_norm)])?;
    }
    w.finish()
}

fn write_shrinkage(run: &RunDir, report: &ShrinkageReport) -> Result<()> {
    let mut w = run.csv("shrinkage.csv", &["index", "sigma2", "tau2", "theory", "abs_err"])?;
    for p in &report.points {
        w.row([(p.index + 1).to_string(), num(p.sigma2), num(p.tau2), num(p.theory), num((p.tau2 - p.theory).abs())])?;
    }
    w.finish()
}

fn train_one(config: &TrainConfig, data: &DataMatrix, k: usize, run: &RunDir) -> Result<(lae::LaeParams, TrainTrace, ShrinkageReport)> {
    let (p, trace) = training::train(config, data, k)?;
    write_trace(run, &trace)?;
    let report = shrinkage_points(data, &p.product(), k, config.kind, config.lambda)?;
    write_shrinkage(run, &report)?;
    Ok((p, trace, report))
}

fn train(mut config: ExperimentConfig, run: &RunDir) -> Result<()> {
    let data = config.load_data()?;
    run.write_config(&config)?;
    let tc = config.train_config(config.single_lambda()?)?;
    let k = config.k;
    let (p, trace, _) = train_one(&tc, &data, k, run)?;

    let sv = |a: &Matrix| spectra::svd(a).map(|s| s.values.iter().copied().collect::<Vec<_>>());
    let (s1, s2, sp) = (sv(&p.w1)?, sv(&p.w2)?, sv(&p.product())?);
    let mut w = run.csv("final_params.csv", &["component", "w1_singular_value", "w2_singular_value", "product_singular_value"])?;
    for i in 0..k {
        w.row([(i + 1).to_string(), num(s1[i]), num(s2[i]), num(sp[i])])?;
    }
    w.finish()?;

    let report = alignment_report(&data, &p.product(), k)?;
    let mut w = run.csv("alignment.csv", &["row", "col", "value"])?;
    for j in 0..report.block.ncols() {
        for i in 0..report.block.nrows() {
            w.row([i.to_string(), j.to_string(), num(report.block[(i, j)])])?;
        }
    }
    w.finish()?;
    let mut w = run.csv("alignment_summary.csv", &["quadrant", "offdiag_max_abs", "diag_min_abs", "aligned"])?;
    for (name, q) in [("u_ustar", report.u_ustar), ("vstar_u", report.vstar_u), ("vstar_ustar", report.vstar_ustar)] {
        w.row([name.to_string(), num(q.offdiag_max_abs), num(q.diag_min_abs), q.aligned.to_string()])?;
    }
    w.finish()?;

    let last = trace.last().expect("trace records the final epoch");
    println!(
        "{} loss, lambda = {}: {} epochs, loss {:.6e}, transpose gap {:.3e}, grad norm {:.3e}{}",
        tc.kind,
        tc.lambda,
        trace.epochs_run,
        last.loss,
        last.transpose_gap,
        last.grad_norm,
        if trace.converged { " (converged)" } else { "" }
    );
    println!(
        "alignment: U~U* {}, V*~U {}, V*~U* {}",
        report.u_ustar.aligned, report.vstar_u.aligned, report.vstar_ustar.aligned
    );
    Ok(())
}

fn sweep(mut config: ExperimentConfig, run: &RunDir) -> Result<()> {
    let data = config.load_data()?;
    run.write_config(&config)?;
    let k = config.k;
    let runs: Vec<(f64, TrainConfig, RunDir)> = config
        .lambda
        .iter()
        .map(|&l| Ok((l, config.train_config(l)?, run.subdir(&format!("lambda_{l}"))?)))
        .collect::<Result<_>>()?;
    let results: Vec<(f64, ShrinkageReport)> = runs
        .par_iter()
        .map(|(l, tc, dir)| train_one(tc, &data, k, dir).map(|(_, _, report)| (*l, report)))
        .collect::<Result<_>>()?;

    let mut w = run.csv("shrinkage.csv", &["lambda", "index", "sigma2", "tau2", "theory", "abs_err"])?;
    let mut worst: f64 = 0.0;
    for (l, report) in &results {
        for p in &report.points {
            let err = (p.tau2 - p.theory).abs();
            if p.theory > 0.0 {
                worst = worst.max(err / p.theory);
            }
            w.row([num(*l), (p.index + 1).to_string(), num(p.sigma2), num(p.tau2), num(p.theory), num(err)])?;
        }
    }
    w.finish()?;
    println!("{} runs, max relative tau^2 error on retained components {worst:.3e}", results.len());
    Ok(())
}

fn landscape(mut config: ExperimentConfig, run: &RunDir) -> Result<()> {
    let data = config.load_data()?;
    run.write_config(&config)?;
    let (m, k, kind) = (data.m(), config.k, config.kind);
    let lambda = config.single_lambda()?;
    let spec = spec_for(kind, lambda)?;
    let cutoff = match kind {
        LossKind::Sum => m0(data.svd().values.as_slice(), lambda).min(m),
        _ => m,
    };
    let requested = config.parsed_index_sets()?;
    let sets: Vec<IndexSet> = if requested.is_empty() {
        (0..=k.min(cutoff)).flat_map(|l| index_sets(cutoff, l)).collect()
    } else {
        requested
    };
    let with_hessian = 2 * k * m <= HESSIAN_MAX_PARAMS;

    let mut w = run.csv(
        "criticals.csv",
        &[
            "index_set",
            "frame_seed",
            "size",
            "loss",
            "grad_norm",
            "analytic_descending",
            "analytic_flat",
            "analytic_ascending",
            "numeric_descending",
            "numeric_flat",
            "numeric_ascending",
        ],
    )?;
    let mut emitted = 0;
    let mut worst_grad: f64 = 0.0;
    for set in &sets {
        let l = set.len();
        let analytic = curvature_signature_with_cutoff(kind, set, m, k, cutoff)?;
        for f in 0..config.frames as u64 {
            let seed = config.seed + f;
            let frame = haar_frame(k, l, seed)?;
            let cs = CriticalSpec::new(kind, set.clone(), frame, m)?;
            let p = critical_point(&cs, &data, lambda)?;
            let g = grad_norm(&spec, &p, &data)?;
            worst_grad = worst_grad.max(g);
            let numeric = if with_hessian {
                let h = numerical_hessian(&spec, &p, &data, default_hessian_step(&p))?;
                let (d, z, a) = hessian_signature(&h, ZERO_BAND)?;
                [d.to_string(), z.to_string(), a.to_string()]
            } else {
                Default::default()
            };
            let [nd, nz, na] = numeric;
            w.row([
                set.to_string(),
                seed.to_string(),
                l.to_string(),
                num(loss(&spec, &p, &data)?),
                num(g),
                analytic.descending.to_string(),
                analytic.flat.to_string(),
                analytic.ascending.to_string(),
                nd,
                nz,
                na,
            ])?;
            emitted += 1;
        }
    }
    w.finish()?;
    if kind == LossKind::Sum && cutoff < m {
        println!("sum loss: only the {cutoff} directions with sigma^2 > lambda carry critical points");
    }
    println!("{emitted} critical points, max gradient norm {worst_grad:.3e}");
    Ok(())
}

fn morse(mut config: ExperimentConfig, run: &RunDir) -> Result<()> {
    let data = config.load_data()?;
    run.write_config(&config)?;
    let k = config.k;
    let cells = enumerate_cells(&data, k)?;
    let mut w = run.csv("cells.csv", &["index_set", "morse_index", "critical_value"])?;
    // top cell first
    for c in cells.iter().rev() {
        w.row([c.index_set.to_string(), c.morse_index.to_string(), num(c.critical_value)])?;
    }
    w.finish()?;

    let parity = boundary_parity(data.m(), k)?;
    let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
    let pass = parity.f2_boundary_is_zero() && parity.counts_match();
    let mut text = format!(
        "m = {}, k = {}\ncells per index: {}\ngaussian binomial: {}\nadjacent pairs: {}, connected: {}\nall trajectory counts even: {}\neuler characteristic: {}\n",
        parity.m,
        parity.k,
        join(&parity.cells_per_index),
        join(&parity.q_binomial),
        parity.adjacent_pairs,
        parity.connections.len(),
        parity.all_even,
        parity.euler_characteristic()
    );
    for t in &parity.connections {
        text += &format!("{} -> {}: {}\n", t.upper, t.lower, t.count);
    }
    text += &format!("result: {}\n", if pass { "pass" } else { "fail" });
    run.write_text("parity.txt", &text)?;
    println!("{} cells, parity {}", cells.len(), if pass { "pass" } else { "fail" });
    Ok(())
}

fn pca(mut config: ExperimentConfig, run: &RunDir) -> Result<()> {
    let data = config.load_data()?;
    let s2 = data.sigma_squared();
    let lr = *config.lr.get_or_insert(0.5 / s2[0].max(f64::MIN_POSITIVE));
    run.write_config(&config)?;
    let (k, lambda) = (config.k, config.single_lambda()?);
    let pc = PcaConfig {
        lambda,
        alpha: Some(lr),
        epochs: config.epochs,
        init_scale: config.init_scale,
        seed: config.seed,
        tied: config.optimizer == Optimizer::TiedGd,
    };
    let (rec, trace) = lae_pca(&data, k, &pc)?;
    write_trace(run, &trace)?;

    let header: Vec<String> = std::iter::once("feature".to_string()).chain((1..=k).map(|i| format!("component_{i}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = run.csv("directions.csv", &header)?;
    for i in 0..data.m() {
        w.row(std::iter::once((i + 1).to_string()).chain((0..k).map(|j| num(rec.directions[(i, j)]))))?;
    }
    w.finish()?;

    let pcs = &data.svd().left;
    let mut w = run.csv(
        "eigenvalues.csv",
        &["component", "decoder_singular_value", "eigenvalue", "svd_eigenvalue", "eigenvalue_rel_err", "abs_cos", "collapsed"],
    )?;
    let mut worst_err: f64 = 0.0;
    let mut worst_cos: f64 = 1.0;
    for i in 0..k {
        let truth = s2.get(i).copied().unwrap_or(0.0);
        let cos = rec.directions.column(i).dot(&pcs.column(i)).abs();
        let err = rec.eigenvalues[i].map(|e| (e - truth).abs() / truth);
        if let Some(e) = err {
            worst_err = worst_err.max(e);
            worst_cos = worst_cos.min(cos);
        }
        w.row([
            (i + 1).to_string(),
            num(rec.singular_values[i]),
            opt_num(rec.eigenvalues[i]),
            num(truth),
            opt_num(err),
            num(cos),
            rec.eigenvalues[i].is_none().to_string(),
        ])?;
    }
    w.finish()?;

    let retained = rec.retained();
    if retained == 0 {
        println!("all {k} components collapsed: lambda = {lambda} is at least every sigma^2 (largest {:.6e})", s2[0]);
        return Ok(());
    }
    let angles = principal_angles(&rec.directions.columns(0, retained).into_owned(), &pcs.columns(0, retained).into_owned())?;
    let mut w = run.csv("principal_angles.csv", &["angle", "degrees"])?;
    for (i, a) in angles.iter().enumerate() {
        w.row([(i + 1).to_string(), num(*a)])?;
    }
    w.finish()?;
    if retained < k {
        println!("{} of {k} components collapsed (sigma^2 <= lambda)", k - retained);
    }
    println!(
        "{retained} retained after {} epochs: max eigenvalue rel err {worst_err:.3e}, min |cos| {worst_cos:.6}, largest principal angle {:.3e} deg",
        trace.epochs_run,
        angles.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

/// Strictly descending values starting below 5 with ratios in `[0.5, 0.9]`.
fn gapped_spectrum(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut s = Vec::with_capacity(len);
    let mut v = rng.random_range(2.0..5.0);
    for _ in 0..len {
        s.push(v);
        v *= rng.random_range(0.5..0.9);
    }
    s
}

fn verify(mut config: ExperimentConfig, run: &RunDir) -> Result<()> {
    if config.input.is_some() {
        return Err(crate::error::config_error("verify draws its own data; drop --input"));
    }
    config.n = config.n.max(config.m);
    run.write_config(&config)?;
    let (m, n, k) = (config.m, config.n, config.k);
    let lambda = config.single_lambda()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut checks = Vec::new();

    // analytic gradient against central differences
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for kind in LossKind::ALL {
        let spec = spec_for(kind, lambda.max(0.1))?;
        for _ in 0..100 {
            let data = lae::data::synthetic(m, n, &gapped_spectrum(m, &mut rng), rng.random())?;
            let tc = TrainConfig { init_scale: 1.0, seed: rng.random(), ..TrainConfig::default() };
            let p = initial_params(&tc, m, k)?;
            let c = grad_check(&spec, &p, &data)?;
            failures += usize::from(!c.passed());
            worst = worst.max(c.max_abs_diff / c.tolerance);
        }
    }
    checks.push(Check { name: "gradient", passed: failures == 0, detail: format!("300 instances, {failures} failed, worst diff/tolerance {worst:.3e}") });

    // closed-form critical points, their curvature and the pPCA map
    let data = lae::data::synthetic(m, n, &gapped_spectrum(m, &mut rng), config.seed)?;
    let bound = 1e-8 * (data.gram().norm() + lambda);
    let with_hessian = 2 * k * m <= HESSIAN_MAX_PARAMS;
    let (mut points, mut worst_grad, mut curvature_bad, mut ppca_worst) = (0, 0.0f64, Vec::new(), 0.0f64);
    for kind in LossKind::ALL {
        let spec = spec_for(kind, lambda)?;
        let cutoff = match kind {
            LossKind::Sum => m0(data.svd().values.as_slice(), lambda),
            _ => m,
        };
        for l in 0..=k.min(cutoff) {
            for set in index_sets(cutoff, l) {
                let frame = haar_frame(k, l, rng.random())?;
                let cs = CriticalSpec::new(kind, set.clone(), frame.clone(), m)?;
                let p = critical_point(&cs, &data, lambda)?;
                points += 1;
                worst_grad = worst_grad.max(grad_norm(&spec, &p, &data)?);
                if with_hessian {
                    let h = numerical_hessian(&spec, &p, &data, default_hessian_step(&p))?;
                    let got = hessian_signature(&h, ZERO_BAND)?;
                    let want = curvature_signature_with_cutoff(kind, &set, m, k, cutoff)?;
                    if got != (want.descending, want.flat, want.ascending) {
                        curvature_bad.push(format!("{kind} {set} {got:?}"));
                    }
                }
                if kind == LossKind::Sum {
                    let lhs = ppca_from_decoder(&p.w2, &data)?;
                    let rhs = ppca_weights(&data, &set, &frame, lambda)?;
                    ppca_worst = ppca_worst.max((&lhs - &rhs).norm() / rhs.norm().max(1.0));
                }
            }
        }
    }
    checks.push(Check {
        name: "stationarity",
        passed: worst_grad <= bound,
        detail: format!("{points} critical points, max gradient norm {worst_grad:.3e} (bound {bound:.3e})"),
    });
    if with_hessian {
        checks.push(Check {
            name: "curvature",
            passed: curvature_bad.is_empty(),
            detail: if curvature_bad.is_empty() {
                format!("{points} Hessian signatures match")
            } else {
                format!("{} of {points} differ: {}", curvature_bad.len(), curvature_bad.join("; "))
            },
        });
    }
    if lambda > 0.0 {
        checks.push(Check { name: "ppca", passed: ppca_worst < 1e-9, detail: format!("max relative difference {ppca_worst:.3e}") });
    }

    if m <= lae::grassmann::MAX_DIM {
        let parity = boundary_parity(m, k)?;
        checks.push(Check {
            name: "morse",
            passed: parity.all_even && parity.counts_match(),
            detail: format!("{} adjacent pairs, all counts even: {}", parity.adjacent_pairs, parity.all_even),
        });
    }

    // tied k = 1, λ = 0 update against Oja's rule written out
    let mut oja_worst: f64 = 0.0;
    for _ in 0..100 {
        let data = lae::data::synthetic(m, n, &gapped_spectrum(m, &mut rng), rng.random())?;
        let w = Matrix::from_fn(m, 1, |_, _| rng.random_range(-1.0..1.0));
        let alpha = rng.random_range(1e-3..1e-1);
        let (g, wv) = (data.gram(), w.column(0));
        let y = wv.dot(&(g * wv));
        let oja = wv + (g * wv - wv * y) * alpha;
        let got = tied_step(&w, &data, 0.0, alpha)?;
        oja_worst = oja_worst.max((got.column(0) - oja).amax());
    }
    checks.push(Check { name: "oja", passed: oja_worst <= 1e-12, detail: format!("100 instances, max entry difference {oja_worst:.3e}") });

    // symmetric part of a sum-loss critical product carries the predicted shrinkage
    if config.spectrum != Spectrum::Identity && lambda > 0.0 {
        let s2 = data.sigma_squared();
        let keep = m0(data.svd().values.as_slice(), lambda).min(k);
        let cs = CriticalSpec::new(LossKind::Sum, IndexSet::leading(keep), Matrix::identity(k, keep), m)?;
        let p = critical_point(&cs, &data, lambda)?;
        let (tau2, _) = symmetric_eigen(&p.product());
        let err = (0..keep).map(|i| (tau2[i] - (1.0 - lambda / s2[i])).abs()).fold(0.0, f64::max);
        checks.push(Check { name: "shrinkage", passed: err < 1e-9, detail: format!("{keep} retained, max error {err:.3e}") });
    }

    let mut w = run.csv("verify.csv", &["check", "passed", "detail"])?;
    for c in &checks {
        w.row([c.name, if c.passed { "true" } else { "false" }, &c.detail])?;
        println!("{}  {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    w.finish()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}
