//! Encoder construction and the contrastive training loop.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::genproc::{kappa_calibration, uniform_observations, GenerativeProcess};
use crate::losses::{
    loss, FreshDraws, LossConfig, LossInputs, LossKind, NegativeVars, PosteriorVars,
};
use crate::metrics::{
    evaluate_on, probe_pairs, MetricsReport, PosteriorModel, DEFAULT_PAIR_BUDGET,
};
use crate::nn::{AdamState, Checkpoint, Mlp, MlpSpec, OutputTransform, Tape, Tensor, Var};
use crate::rng::{stream, StreamRng};

/// Probabilistic encoder `x ↦ (μ̂(x), κ̂(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub mu_head: Mlp,
    pub kappa_head: Mlp,
}

fn mu_widths(d_in: usize, d_enc: usize) -> Vec<usize> {
    let (a, b) = (10 * d_in, 50 * d_in);
    vec![d_in, a, b, b, b, b, b, a, d_enc]
}

fn kappa_widths(d_in: usize) -> Vec<usize> {
    let (a, b) = (10 * d_in, 50 * d_in);
    vec![d_in, a, b, b, b, b, a, 1]
}

impl EncoderModel {
    /// Builds both heads from `seed`. The `κ̂` head is recalibrated so that its
    /// output over the process probes spans the process's `κ` range; for
    /// processes without a finite range (Dirac) it is left as initialized.
    pub fn init(d_in: usize, d_enc: usize, seed: u64, process: &GenerativeProcess) -> Result<Self> {
        if d_in != process.dim() {
            return Err(Error::DimensionMismatch {
                expected: process.dim(),
                actual: d_in,
            });
        }
        let (lo, hi) = (process.config().kappa_min, process.config().kappa_max);
        let range = (lo > 1.0 && hi >= lo && hi.is_finite()).then_some((lo, hi));
        Self::init_with_range(d_in, d_enc, seed, &process.probes(), range)
    }

    pub fn init_with_range(
        d_in: usize,
        d_enc: usize,
        seed: u64,
        probes: &Tensor,
        range: Option<(f64, f64)>,
    ) -> Result<Self> {
        if d_in < 2 || d_enc < 2 {
            return Err(Error::Config(format!(
                "encoder dims must be >= 2, got {d_in} -> {d_enc}"
            )));
        }
        let mut rng = stream(seed, "encoder/init");
        let mu_head = Mlp::init(
            MlpSpec::chain(&mu_widths(d_in, d_enc), OutputTransform::L2Normalize)?,
            &mut rng,
        )?;
        let mut kappa_head = Mlp::init(
            MlpSpec::chain(&kappa_widths(d_in), OutputTransform::OnePlusExp)?,
            &mut rng,
        )?;
        if let Some((lo, hi)) = range {
            let pre = kappa_head.forward_linear(probes)?;
            let (scale, shift) = kappa_calibration(pre.data(), lo, hi)?;
            kappa_head.affine_output(scale, shift);
        }
        Ok(EncoderModel {
            mu_head,
            kappa_head,
        })
    }

    pub fn d_in(&self) -> usize {
        self.mu_head.spec().in_dim()
    }

    pub fn d_enc(&self) -> usize {
        self.mu_head.spec().out_dim()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "encoder");
        self.mu_head.write_to(&mut c, "mu");
        self.kappa_head.write_to(&mut c, "kappa");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta("kind")? != "encoder" {
            return Err(Error::Checkpoint(format!(
                "expected an encoder checkpoint, found {:?}",
                c.meta("kind")?
            )));
        }
        let enc = EncoderModel {
            mu_head: Mlp::read_from(c, "mu")?,
            kappa_head: Mlp::read_from(c, "kappa")?,
        };
        if enc.kappa_head.spec().in_dim() != enc.d_in() || enc.kappa_head.spec().out_dim() != 1 {
            return Err(Error::Checkpoint("encoder heads disagree on shapes".into()));
        }
        Ok(enc)
    }
}

impl PosteriorModel for EncoderModel {
    fn input_dim(&self) -> usize {
        self.d_in()
    }

    fn latent_dim(&self) -> usize {
        self.d_enc()
    }

    fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mu = self.mu_head.forward(xs)?;
        let kappa = self.kappa_head.forward(xs)?.into_data();
        Ok((mu, kappa))
    }
}

/// Step-decayed learning rate: `base·0.1^⌊4·progress⌋`, with `progress = 1`
/// kept in the last bucket.
pub fn lr_schedule(progress: f64, base_lr: f64) -> f64 {
    let bucket = (4.0 * progress.clamp(0.0, 1.0)).floor().min(3.0);
    base_lr * 0.1f64.powi(bucket as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// MC samples per posterior.
    pub k: usize,
    /// Sampled negatives per reference; 0 uses one in-batch partner.
    pub m: usize,
    pub kappa_pos: f64,
    pub phasewise: bool,
    pub seed: u64,
    pub loss: LossKind,
    pub hib_a: f64,
    pub hib_b: f64,
    pub eval_every: usize,
    /// Held-out probes per evaluation snapshot.
    pub eval_samples: usize,
    pub pair_budget: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batches: 2000,
            batch_size: 128,
            lr: 1e-4,
            k: 16,
            m: 8,
            kappa_pos: 20.0,
            phasewise: false,
            seed: 0,
            loss: LossKind::McInfoNce,
            hib_a: 1.0,
            hib_b: 0.0,
            eval_every: 200,
            eval_samples: 2000,
            pair_budget: DEFAULT_PAIR_BUDGET,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("eval_every", self.eval_every),
            ("pair_budget", self.pair_budget),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.eval_samples < 2 {
            return Err(Error::Config("eval_samples must be at least 2".into()));
        }
        if (self.m == 0 || self.phasewise) && self.batch_size < 2 {
            return Err(Error::Config(
                "in-batch negatives need batch_size >= 2".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            kappa_pos: self.kappa_pos,
            k: self.k,
            hib_a: self.hib_a,
            hib_b: self.hib_b,
        }
    }
}

/// One evaluation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Batches completed.
    pub batch: usize,
    /// Mean training loss since the previous snapshot (NaN before any step).
    pub loss: f64,
    pub rmse_mu: f64,
    pub rank_mu: Option<f64>,
    pub rmse_kappa: Option<f64>,
    pub rank_kappa: Option<f64>,
    pub median_kappa_hat: f64,
}

impl CurvePoint {
    pub const CSV_HEADER: &'static str =
        "batch,loss,rmse_mu,rank_mu,rmse_kappa,rank_kappa,median_kappa_hat";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{}",
            self.batch,
            self.loss,
            self.rmse_mu,
            opt(self.rank_mu),
            opt(self.rmse_kappa),
            opt(self.rank_kappa),
            self.median_kappa_hat
        )
    }
}

pub fn write_curve_csv(curve: &[CurvePoint], w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "{}", CurvePoint::CSV_HEADER)?;
    for p in curve {
        writeln!(w, "{}", p.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: EncoderModel,
    pub curve: Vec<CurvePoint>,
    /// Evaluation after the last batch.
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Joint,
    MuOnly,
    KappaOnly,
}

fn phase_of(cfg: &TrainConfig, step: usize) -> Phase {
    if !cfg.phasewise {
        Phase::Joint
    } else if step < cfg.batches / 2 {
        Phase::MuOnly
    } else {
        Phase::KappaOnly
    }
}

struct Heads {
    mu: Var,
    kappa: Var,
    mu_params: Vec<Var>,
    kappa_params: Vec<Var>,
}

fn forward_heads(tape: &mut Tape, enc: &EncoderModel, x: Tensor, phase: Phase) -> Result<Heads> {
    let xv = tape.constant(x);
    let (mu, mu_params) = enc
        .mu_head
        .forward_tape(tape, xv, phase != Phase::KappaOnly)?;
    let (kappa, kappa_params) = enc
        .kappa_head
        .forward_tape(tape, xv, phase != Phase::MuOnly)?;
    Ok(Heads {
        mu,
        kappa,
        mu_params,
        kappa_params,
    })
}

fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts[0].cols();
    let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
    let mut rows = 0;
    for t in parts {
        if t.cols() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                actual: t.cols(),
            });
        }
        rows += t.rows();
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![rows, cols], data)
}

fn slice(tape: &mut Tape, h: &Heads, start: usize, end: usize) -> Result<PosteriorVars> {
    Ok(PosteriorVars {
        mu: tape.slice_rows(h.mu, start, end)?,
        kappa: tape.slice_rows(h.kappa, start, end)?,
    })
}

fn collect_grads(
    grads: &mut crate::nn::Gradients,
    vars: &[Var],
    params: &[&Tensor],
) -> Vec<Tensor> {
    vars.iter()
        .zip(params)
        .map(|(&v, p)| grads.take_or_zeros(v, p))
        .collect()
}

/// Step-by-step driver of a training run.
pub struct Trainer<'a> {
    process: &'a GenerativeProcess,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    encoder: EncoderModel,
    mu_opt: AdamState,
    kappa_opt: AdamState,
    data_rng: StreamRng,
    mc_rng: StreamRng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        process: &'a GenerativeProcess,
        encoder: EncoderModel,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if encoder.d_in() != process.dim() {
            return Err(Error::DimensionMismatch {
                expected: process.dim(),
                actual: encoder.d_in(),
            });
        }
        Ok(Trainer {
            process,
            loss_cfg: cfg.loss_config(),
            mu_opt: AdamState::new(cfg.lr, &encoder.mu_head.params()),
            kappa_opt: AdamState::new(cfg.lr, &encoder.kappa_head.params()),
            encoder,
            data_rng: stream(cfg.seed, "train/data"),
            mc_rng: stream(cfg.seed, "train/mc"),
            cfg: cfg.clone(),
            step: 0,
        })
    }

    pub fn encoder(&self) -> &EncoderModel {
        &self.encoder
    }

    pub fn into_encoder(self) -> EncoderModel {
        self.encoder
    }

    /// Batches completed so far.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Runs one batch and returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let cfg = &self.cfg;
        let step = self.step;
        let phase = phase_of(cfg, step);
        let m = if phase == Phase::MuOnly { 0 } else { cfg.m };
        let batch = self
            .process
            .sample_triplet_batch(cfg.batch_size, m, &mut self.data_rng)?;
        let b = cfg.batch_size;

        let mut tape = Tape::new();
        let (inputs, heads) = if let Some(partners) = &batch.partners {
            let x = stack_rows(&[&batch.refs, &batch.positives])?;
            let heads = forward_heads(&mut tape, &self.encoder, x, phase)?;
            let inputs = LossInputs {
                refs: slice(&mut tape, &heads, 0, b)?,
                positives: slice(&mut tape, &heads, b, 2 * b)?,
                negatives: NegativeVars::InBatch {
                    partners: partners.clone(),
                },
            };
            (inputs, heads)
        } else {
            let x = stack_rows(&[&batch.refs, &batch.positives, &batch.negatives])?;
            let total = x.rows();
            let heads = forward_heads(&mut tape, &self.encoder, x, phase)?;
            let inputs = LossInputs {
                refs: slice(&mut tape, &heads, 0, b)?,
                positives: slice(&mut tape, &heads, b, 2 * b)?,
                negatives: NegativeVars::Explicit {
                    posteriors: slice(&mut tape, &heads, 2 * b, total)?,
                    per_ref: batch.negatives_per_ref,
                },
            };
            (inputs, heads)
        };
        let out = loss(
            &mut tape,
            &inputs,
            &self.loss_cfg,
            &mut FreshDraws::new(&mut self.mc_rng),
        )?;
        let value = tape.value(out).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                batch: Box::new(batch),
            });
        }

        let mut grads = tape.backward(out)?;
        let lr = lr_schedule(step as f64 / cfg.batches.max(1) as f64, cfg.lr);
        if phase != Phase::KappaOnly {
            let g = collect_grads(&mut grads, &heads.mu_params, &self.encoder.mu_head.params());
            self.mu_opt.lr = lr;
            self.mu_opt
                .step(&mut self.encoder.mu_head.params_mut(), &g)?;
        }
        if phase != Phase::MuOnly {
            let g = collect_grads(
                &mut grads,
                &heads.kappa_params,
                &self.encoder.kappa_head.params(),
            );
            self.kappa_opt.lr = lr;
            self.kappa_opt
                .step(&mut self.encoder.kappa_head.params_mut(), &g)?;
        }
        self.step += 1;
        Ok(value)
    }
}

/// Probe observations and pairs used for every evaluation of a run.
pub fn evaluation_set(cfg: &TrainConfig, dim: usize) -> (Tensor, Vec<(usize, usize)>) {
    let mut eval_rng = stream(cfg.seed, "train/eval");
    let probes = uniform_observations(cfg.eval_samples, dim, &mut eval_rng);
    let pairs = probe_pairs(cfg.eval_samples, cfg.pair_budget, &mut eval_rng);
    (probes, pairs)
}

/// Trains `encoder` on batches from `process`. Data, MC noise and evaluation
/// probes come from separate streams of `cfg.seed`.
pub fn train(
    process: &GenerativeProcess,
    encoder: EncoderModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(process, encoder, cfg, &mut |_| {})
}

/// [`train`] with a callback invoked on every evaluation snapshot.
pub fn train_observed(
    process: &GenerativeProcess,
    encoder: EncoderModel,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&CurvePoint),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(process, encoder, cfg)?;
    let (probes, pairs) = evaluation_set(cfg, process.dim());
    let mut curve = Vec::new();
    let mut snapshot =
        |enc: &EncoderModel, batch: usize, losses: &[f64]| -> Result<MetricsReport> {
            let report = evaluate_on(process, enc, &probes, &pairs)?;
            let point = CurvePoint {
                batch,
                loss: if losses.is_empty() {
                    f64::NAN
                } else {
                    losses.iter().sum::<f64>() / losses.len() as f64
                },
                rmse_mu: report.rmse_mu,
                rank_mu: report.rank_mu,
                rmse_kappa: report.rmse_kappa,
                rank_kappa: report.rank_kappa,
                median_kappa_hat: report.median_kappa_hat,
            };
            observe(&point);
            curve.push(point);
            Ok(report)
        };

    let mut report = snapshot(trainer.encoder(), 0, &[])?;
    let mut window = Vec::with_capacity(cfg.eval_every);
    while trainer.steps_done() < cfg.batches {
        window.push(trainer.step()?);
        let done = trainer.steps_done();
        if done % cfg.eval_every == 0 || done == cfg.batches {
            report = snapshot(trainer.encoder(), done, &window)?;
            window.clear();
        }
    }
    Ok(TrainOutcome {
        encoder: trainer.into_encoder(),
        curve,
        report,
    })
}
