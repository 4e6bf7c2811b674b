//! Acceptance suite. Prints one PASS/FAIL line per criterion with the pinned
//! tolerance and the measured value. Failures are reported, not raised, so
//! the binary exits 0 once every criterion has been evaluated.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mcinfonce::config::preset;
use mcinfonce::credible::{ci_threshold, cii_retrieve, coverage_check, EmbeddedCorpus};
use mcinfonce::genproc::{uniform_observations, GenerativeProcess};
use mcinfonce::losses::LossKind;
use mcinfonce::metrics::{
    evaluate_on, probe_pairs, random_orthogonal, Jittered, KappaScaled, MetricsReport, Rotated,
};
use mcinfonce::nn::Tensor;
use mcinfonce::oracle::{
    check_diagonal_monotone, check_rho_monotone, limiting_loss, log_grid, log_marginal_h,
    log_marginal_h_detailed, mc_marginal_estimate, OracleQuery,
};
use mcinfonce::rng::stream;
use mcinfonce::special::{log_vmf_norm_const, mean_resultant_length};
use mcinfonce::stats::ks_one_sample;
use mcinfonce::training::{train, EncoderModel, TrainOutcome};
use mcinfonce::vmf::{vmf_sample, RadialLaw, UnitVector, VmfParams};
use mcinfonce::Result;
use rand::Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

type Outcome = Result<(bool, String)>;

fn report(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (passed, detail) = match res {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".to_string()),
    };
    println!(
        "criterion {id:>2} {} {name}: {detail} [{secs:.1}s]",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

fn ln_sinh(k: f64) -> f64 {
    k + (-(-2.0 * k).exp()).ln_1p() - std::f64::consts::LN_2
}

fn special_functions() -> Outcome {
    let grid = log_grid(1e-3, 500.0, 200);
    let mut worst_closed: f64 = 0.0;
    for &k in &grid {
        let want = k.ln() - (4.0 * std::f64::consts::PI).ln() - ln_sinh(k);
        worst_closed = worst_closed.max((log_vmf_norm_const(3, k)? - want).abs());
    }
    let mut worst_deriv: f64 = 0.0;
    for dim in [2, 3, 5, 10, 64] {
        for &k in &grid {
            let h = 1e-5 * (1.0 + k);
            let lo = (k - h).max(0.0);
            let fd =
                -(log_vmf_norm_const(dim, k + h)? - log_vmf_norm_const(dim, lo)?) / (k + h - lo);
            worst_deriv = worst_deriv.max((fd - mean_resultant_length(dim, k)?).abs());
        }
    }
    Ok((
        worst_closed < 1e-10 && worst_deriv < 1e-6,
        format!(
            "max |ln C_3 - closed form| = {worst_closed:.2e} (tol 1e-10); max |-d ln C/dk - A_D| = {worst_deriv:.2e} (tol 1e-6) over k in [1e-3, 500], D in {{2,3,5,10,64}}"
        ),
    ))
}

fn sampler_fidelity() -> Outcome {
    let (dim, kappa, n) = (10, 20.0, 100_000);
    let mut rng = stream(11, "acceptance/sampler");
    let mu = UnitVector::normalize((0..dim).map(|_| rng.random::<f64>() - 0.5).collect())?;
    let params = VmfParams::new(mu.clone(), kappa)?;
    let mut sum = vec![0.0; dim];
    let mut ws = Vec::with_capacity(n);
    for _ in 0..n {
        let z = vmf_sample(&params, &mut rng)?;
        sum.iter_mut().zip(z.as_slice()).for_each(|(a, b)| *a += b);
        ws.push(mu.dot(&z));
    }
    let resultant = sum
        .iter()
        .map(|s| (s / n as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let mean_w = ws.iter().sum::<f64>() / n as f64;
    let var_w = ws.iter().map(|w| (w - mean_w).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var_w / n as f64).sqrt();
    let a = mean_resultant_length(dim, kappa)?;
    let z = (resultant - a) / se;
    let law = RadialLaw::new(dim, kappa)?;
    let ks = ks_one_sample(&ws, |t| law.cdf(t).unwrap_or(f64::NAN));
    Ok((
        z.abs() <= 3.0 && ks.passes(0.01),
        format!(
            "resultant {resultant:.6} vs A_10(20) {a:.6}: {z:+.2} SE (tol 3); KS D = {:.4}, p = {:.3} (level 0.01)",
            ks.statistic, ks.p_value
        ),
    ))
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, kind) in [LossKind::McInfoNce, LossKind::Hib, LossKind::Elk]
        .into_iter()
        .enumerate()
    {
        for in_batch in [false, true] {
            let w = common::gradient_check(kind, in_batch, 100 + 2 * i as u64 + in_batch as u64);
            parts.push(format!(
                "{kind}{}={w:.1e}",
                if in_batch { "/in-batch" } else { "" }
            ));
            worst = worst.max(w);
        }
    }
    Ok((
        worst < 1e-4,
        format!(
            "worst relative error {worst:.2e} (tol 1e-4): {}",
            parts.join(", ")
        ),
    ))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = stream(12, "acceptance/oracle");
    let mut worst_z: f64 = 0.0;
    let mut worst_consistency: f64 = 0.0;
    let mut misses = 0;
    for q in 0..20 {
        let dim = if q < 10 { 3 } else { 10 };
        let rho: f64 = rng.random_range(-1.0..1.0);
        let kappa = 10f64.powf(rng.random_range(0.0..2.0));
        let kappa_plus = 10f64.powf(rng.random_range(0.0..2.0));
        let kappa_pos = 10f64.powf(rng.random_range(0.0..1.7));
        let mut e1 = vec![0.0; dim];
        e1[0] = 1.0;
        let mut m2 = vec![0.0; dim];
        m2[0] = rho;
        m2[1] = (1.0 - rho * rho).sqrt();
        let reference = VmfParams::new(UnitVector::normalize(e1)?, kappa)?;
        let positive = VmfParams::new(UnitVector::normalize(m2)?, kappa_plus)?;
        let query = OracleQuery {
            rho,
            kappa,
            kappa_plus,
            kappa_pos,
            dim,
        };
        let quad = log_marginal_h_detailed(&query)?;
        let swapped = log_marginal_h(&OracleQuery {
            kappa: kappa_plus,
            kappa_plus: kappa,
            ..query
        })?;
        worst_consistency = worst_consistency
            .max(quad.last_change)
            .max((quad.log_h - swapped).abs());
        let est = mc_marginal_estimate(&reference, &positive, kappa_pos, 1_000_000, &mut rng)?;
        let z = (est.value - quad.log_h.exp()) / est.stderr;
        if z.abs() > 3.0 {
            misses += 1;
        }
        worst_z = worst_z.max(z.abs());
    }
    Ok((
        misses == 0 && worst_consistency < 1e-8,
        format!(
            "20 queries (D=3, 10), K=1e6: worst |MC - quadrature| = {worst_z:.2} SE (tol 3, {misses} outside); quadrature self-consistency {worst_consistency:.2e} (tol 1e-8)"
        ),
    ))
}

fn monotonicity() -> Outcome {
    let mut failed = Vec::new();
    let mut n = 0;
    for dim in [3, 10] {
        for kappa_pos in [5.0, 20.0, 100.0] {
            for c in [
                check_diagonal_monotone(dim, kappa_pos)?,
                check_rho_monotone(dim, kappa_pos, 16.0, 32.0)?,
                check_rho_monotone(dim, kappa_pos, 64.0, 8.0)?,
            ] {
                n += 1;
                if !c.passed {
                    failed.push(format!("{} ({})", c.name, c.detail));
                }
            }
        }
    }
    Ok((
        failed.is_empty(),
        if failed.is_empty() {
            format!("{n} grids of 50 points strictly increasing (D in {{3,10}}, kappa_pos in {{5,20,100}})")
        } else {
            format!(
                "{} of {n} grids not strictly increasing: {}",
                failed.len(),
                failed.join("; ")
            )
        },
    ))
}

fn minimality() -> Outcome {
    let mut lines = Vec::new();
    let mut all = true;
    for dim in [3, 10] {
        let cfg = mcinfonce::config::ExperimentConfig {
            dim,
            enc_dim: dim,
            ..preset("desk")?
        };
        let truth = GenerativeProcess::new(cfg.process_config())?;
        let (refs, positives, _) = truth.sample_pairs(100, 13)?;
        let kp = cfg.kappa_pos;
        let base = limiting_loss(&truth, &truth, &refs, &positives, kp)?;
        let mut losses = Vec::new();
        for factor in [0.8, 1.2] {
            losses.push(limiting_loss(
                &truth,
                &KappaScaled {
                    inner: &truth,
                    factor,
                },
                &refs,
                &positives,
                kp,
            )?);
        }
        let angle = 5f64.to_radians();
        for s in 0..9 {
            let j = Jittered {
                inner: &truth,
                angle,
                seed: s,
            };
            losses.push(limiting_loss(&truth, &j, &refs, &positives, kp)?);
            let both = KappaScaled {
                inner: Jittered {
                    inner: &truth,
                    angle,
                    seed: 100 + s,
                },
                factor: if s % 2 == 0 { 0.8 } else { 1.2 },
            };
            losses.push(limiting_loss(&truth, &both, &refs, &positives, kp)?);
        }
        let worse = losses.iter().filter(|&&l| l > base).count();
        let margin = losses
            .iter()
            .map(|l| l - base)
            .fold(f64::INFINITY, f64::min);
        all &= worse == losses.len();
        lines.push(format!(
            "D={dim}: {worse}/{} perturbations above truth, smallest gap {margin:.3e}",
            losses.len()
        ));
    }
    Ok((all, lines.join("; ")))
}

fn desk_run(family_dirac: bool, seed: u64, k: usize) -> Result<(TrainOutcome, f64)> {
    let mut cfg = preset(if family_dirac { "desk-dirac" } else { "desk" })?;
    cfg.seed = seed;
    cfg.mc_samples = k;
    let process = GenerativeProcess::new(cfg.process_config())?;
    let encoder = EncoderModel::init(cfg.dim, cfg.enc_dim, seed, &process)?;
    let start = Instant::now();
    let out = train(&process, encoder, &cfg.train_config())?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3}"))
}

fn identifiability(runs: &[Result<(TrainOutcome, f64)>]) -> Outcome {
    let mut passes = 0;
    let mut parts = Vec::new();
    for (seed, r) in SEEDS.iter().zip(runs) {
        match r {
            Ok((o, secs)) => {
                let r = &o.report;
                let ok = r.rank_mu.is_some_and(|v| v >= 0.95)
                    && r.rank_kappa.is_some_and(|v| v >= 0.5)
                    && *secs <= 1800.0;
                passes += ok as usize;
                parts.push(format!(
                    "seed {seed}: rank_mu {} rank_kappa {} ({secs:.0}s)",
                    fmt_opt(r.rank_mu),
                    fmt_opt(r.rank_kappa)
                ));
            }
            Err(e) => parts.push(format!("seed {seed}: error {e}")),
        }
    }
    Ok((
        passes >= 2,
        format!(
            "{passes}/3 seeds with rank_mu >= 0.95, rank_kappa >= 0.5, <= 30 min (need 2): {}",
            parts.join("; ")
        ),
    ))
}

fn mc_bias(k16: &[Result<(TrainOutcome, f64)>], k1: &[Result<(TrainOutcome, f64)>]) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for ((seed, a), b) in SEEDS.iter().zip(k16).zip(k1) {
        match (a, b) {
            (Ok((a, _)), Ok((b, _))) => {
                let (ra, rb) = (a.report.rmse_kappa, b.report.rmse_kappa);
                if let (Some(x), Some(y)) = (ra, rb) {
                    wins += (x < y) as usize;
                }
                parts.push(format!(
                    "seed {seed}: K=16 {} vs K=1 {}",
                    fmt_opt(ra),
                    fmt_opt(rb)
                ));
            }
            (Err(e), _) | (_, Err(e)) => parts.push(format!("seed {seed}: error {e}")),
        }
    }
    Ok((
        wins >= 2,
        format!(
            "rmse_kappa lower with K=16 in {wins}/3 seeds (need 2): {}",
            parts.join("; ")
        ),
    ))
}

fn injective_limit(runs: &[Result<(TrainOutcome, f64)>]) -> Outcome {
    let mut passes = 0;
    let mut parts = Vec::new();
    for (seed, r) in SEEDS.iter().zip(runs) {
        match r {
            Ok((o, _)) => {
                let tail: Vec<f64> = o
                    .curve
                    .iter()
                    .rev()
                    .take(5)
                    .rev()
                    .map(|p| p.median_kappa_hat)
                    .collect();
                let ok = tail.len() == 5 && tail.windows(2).all(|w| w[1] > w[0]);
                passes += ok as usize;
                let shown: Vec<String> = tail.iter().map(|v| format!("{v:.4}")).collect();
                parts.push(format!("seed {seed}: [{}]", shown.join(", ")));
            }
            Err(e) => parts.push(format!("seed {seed}: error {e}")),
        }
    }
    Ok((
        passes >= 2,
        format!("median kappa_hat strictly increasing over last 5 checkpoints in {passes}/3 seeds (need 2): {}", parts.join("; ")),
    ))
}

fn credible_calibration() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for dim in [3, 10] {
        let cfg = mcinfonce::config::ExperimentConfig {
            dim,
            enc_dim: dim,
            ..preset("desk")?
        };
        let process = GenerativeProcess::new(cfg.process_config())?;
        let mut rng = stream(14, "acceptance/coverage");
        for p in [0.5, 0.9, 0.99] {
            let c = coverage_check(&process, &process, p, 10_000, &mut rng)?;
            ok &= (c.coverage - p).abs() <= 0.02;
            notes.push(format!("D={dim} p={p}: {:.4}", c.coverage));
        }
    }

    // Nesting of thresholds and retrieval sets, and invariance of retrieval
    // under a global rotation of query and corpus.
    let process = GenerativeProcess::new(preset("desk")?.process_config())?;
    let mut rng = stream(15, "acceptance/ci-props");
    let xs = uniform_observations(500, process.dim(), &mut rng);
    let corpus = EmbeddedCorpus::from_model(&process, &xs)?;
    let rot = random_orthogonal(process.dim(), &mut rng);
    let rotated = EmbeddedCorpus::from_model(
        &Rotated {
            inner: &process,
            rotation: rot.clone(),
        },
        &xs,
    )?;
    let levels = [0.1, 0.5, 0.9, 0.99];
    let mut nested = true;
    let mut invariant = true;
    for q in 0..20 {
        let query = &corpus.items()[q].posterior;
        let rquery = &rotated.items()[q].posterior;
        let mut prev: Option<Vec<u64>> = None;
        let mut prev_t = f64::INFINITY;
        for &p in &levels {
            let t = ci_threshold(query.kappa(), p, process.dim())?;
            nested &= t <= prev_t;
            prev_t = t;
            let hits: Vec<u64> = cii_retrieve(query, &corpus, p)?
                .hits
                .iter()
                .map(|h| h.id)
                .collect();
            let mut rhits: Vec<u64> = cii_retrieve(rquery, &rotated, p)?
                .hits
                .iter()
                .map(|h| h.id)
                .collect();
            let mut sorted = hits.clone();
            sorted.sort_unstable();
            rhits.sort_unstable();
            invariant &= sorted == rhits;
            if let Some(prev) = &prev {
                nested &= prev.iter().all(|id| hits.contains(id));
            }
            prev = Some(hits);
        }
    }
    Ok((
        ok && nested && invariant,
        format!(
            "coverage within 0.02 over 1e4 trials: {}; nesting {}; rotation invariance {}",
            notes.join(", "),
            if nested { "holds" } else { "violated" },
            if invariant { "holds" } else { "violated" }
        ),
    ))
}

fn report_diff(a: &MetricsReport, b: &MetricsReport) -> f64 {
    let opt = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => (x - y).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    [
        (a.rmse_mu - b.rmse_mu).abs(),
        opt(a.rank_mu, b.rank_mu),
        opt(a.rmse_kappa, b.rmse_kappa),
        opt(a.rank_kappa, b.rank_kappa),
        (a.median_kappa_hat - b.median_kappa_hat).abs(),
        (a.marginal_uniformity - b.marginal_uniformity).abs(),
        (a.n_samples as f64 - b.n_samples as f64).abs(),
        (a.n_pairs as f64 - b.n_pairs as f64).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn rotation_invariance(trained: Option<&EncoderModel>) -> Outcome {
    let cfg = preset("desk")?;
    let process = GenerativeProcess::new(cfg.process_config())?;
    let fresh = EncoderModel::init(cfg.dim, cfg.enc_dim, 21, &process)?;
    let mut rng = stream(16, "acceptance/rotation");
    let probes = uniform_observations(2000, process.dim(), &mut rng);
    let pairs = probe_pairs(2000, 1_000_000, &mut rng);
    let mut worst: f64 = 0.0;
    let mut models: Vec<(&str, &dyn mcinfonce::metrics::PosteriorModel)> =
        vec![("truth", &process), ("initial encoder", &fresh)];
    if let Some(t) = trained {
        models.push(("trained encoder", t));
    }
    let names: Vec<&str> = models.iter().map(|m| m.0).collect();
    for (_, m) in &models {
        let base = evaluate_on(&process, *m, &probes, &pairs)?;
        for _ in 0..3 {
            let rot: Tensor = random_orthogonal(process.dim(), &mut rng);
            let r = evaluate_on(
                &process,
                &Rotated {
                    inner: *m,
                    rotation: rot,
                },
                &probes,
                &pairs,
            )?;
            worst = worst.max(report_diff(&base, &r));
        }
    }
    Ok((
        worst <= 1e-12,
        format!(
            "max field change {worst:.2e} (tol 1e-12) over 3 rotations of {}",
            names.join(", ")
        ),
    ))
}

fn main() {
    // Numeric arguments select criteria (`cargo test --test acceptance -- 1 4`); default all.
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let on = |id: u32| only.is_empty() || only.contains(&id);
    println!("acceptance suite (desk scale, seeds {SEEDS:?})");
    let mut passed = 0;
    let mut run = 0;
    let mut tally = |id: u32, ok: bool| {
        run += 1;
        passed += ok as usize;
        let _ = id;
    };
    if on(1) {
        tally(1, report(1, "special functions", special_functions));
    }
    if on(2) {
        tally(2, report(2, "sampler fidelity", sampler_fidelity));
    }
    if on(3) {
        tally(3, report(3, "gradient integrity", gradients));
    }
    if on(4) {
        tally(4, report(4, "oracle equivalence", oracle_equivalence));
    }
    if on(5) {
        tally(5, report(5, "marginal monotonicity", monotonicity));
    }
    if on(6) {
        tally(6, report(6, "limiting loss minimality", minimality));
    }

    let train_start = Instant::now();
    let k16: Vec<_> = if on(7) || on(8) {
        SEEDS.iter().map(|&s| desk_run(false, s, 16)).collect()
    } else {
        Vec::new()
    };
    if on(7) {
        tally(
            7,
            report(7, "desk identifiability", || identifiability(&k16)),
        );
    }
    if on(8) {
        let k1: Vec<_> = SEEDS.iter().map(|&s| desk_run(false, s, 1)).collect();
        tally(8, report(8, "MC bias trend", || mc_bias(&k16, &k1)));
    }
    if on(9) {
        let dirac: Vec<_> = SEEDS.iter().map(|&s| desk_run(true, s, 16)).collect();
        tally(9, report(9, "injective limit", || injective_limit(&dirac)));
    }
    if on(7) || on(8) || on(9) {
        println!(
            "(training for criteria 7-9 took {:.0}s)",
            train_start.elapsed().as_secs_f64()
        );
    }

    if on(10) {
        tally(
            10,
            report(10, "credible-interval calibration", credible_calibration),
        );
    }
    if on(11) {
        let trained = k16
            .first()
            .and_then(|r| r.as_ref().ok())
            .map(|(o, _)| &o.encoder);
        tally(
            11,
            report(11, "rotation invariance", || rotation_invariance(trained)),
        );
    }
    println!("acceptance: {passed}/{run} criteria passed");
}
