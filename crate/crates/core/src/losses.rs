//! Contrastive objectives over vMF embeddings: MCInfoNCE, HIB and ELK.
//!
//! All three take tape-connected posteriors for the references, positives
//! and negatives of a batch and return the batch-mean loss as a `1×1` node.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{CustomOp, Tape, Tensor, Var};
use crate::special::{log_vmf_norm_const, mean_resultant_length};
use crate::vmf::{dot, householder_to, householder_vjp_mu, RadialLaw, ReparamDraw};

/// Clamp applied to MC probability estimates before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    McInfoNce,
    Hib,
    Elk,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::McInfoNce => "mcinfonce",
            LossKind::Hib => "hib",
            LossKind::Elk => "elk",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcinfonce" => Ok(LossKind::McInfoNce),
            "hib" => Ok(LossKind::Hib),
            "elk" => Ok(LossKind::Elk),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub kappa_pos: f64,
    /// Monte-Carlo samples per posterior.
    pub k: usize,
    pub hib_a: f64,
    pub hib_b: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config(
                "the number of MC samples must be >= 1".into(),
            ));
        }
        if !(self.kappa_pos > 0.0 && self.kappa_pos.is_finite()) {
            return Err(Error::Config(format!(
                "kappa_pos must be positive, got {}",
                self.kappa_pos
            )));
        }
        Ok(())
    }
}

/// Posterior parameters on a tape: `mu` is `n×D` with unit rows, `kappa` is `n×1`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorVars {
    pub mu: Var,
    pub kappa: Var,
}

#[derive(Debug, Clone)]
pub enum NegativeVars {
    /// `B·M` posteriors, row `i·M + m` for the `m`-th negative of reference `i`.
    Explicit {
        posteriors: PosteriorVars,
        per_ref: usize,
    },
    /// Reference `partners[i]` is the single negative of reference `i`.
    InBatch { partners: Vec<usize> },
}

impl NegativeVars {
    fn per_ref(&self) -> usize {
        match self {
            NegativeVars::Explicit { per_ref, .. } => *per_ref,
            NegativeVars::InBatch { .. } => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossInputs {
    pub refs: PosteriorVars,
    pub positives: PosteriorVars,
    pub negatives: NegativeVars,
}

/// Supplies the noise of reparametrized draws.
pub trait DrawSource {
    /// A draw under `law`. When `kappa_path` is false the implicit κ
    /// derivative may be skipped.
    fn draw(&mut self, law: &RadialLaw, kappa_path: bool) -> Result<ReparamDraw>;
}

/// Fresh draws from an RNG, optionally recorded for later replay.
pub struct FreshDraws<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    record: Option<Vec<ReparamDraw>>,
}

impl<'a, R: Rng + ?Sized> FreshDraws<'a, R> {
    pub fn new(rng: &'a mut R) -> Self {
        FreshDraws { rng, record: None }
    }

    pub fn recording(rng: &'a mut R) -> Self {
        FreshDraws {
            rng,
            record: Some(Vec::new()),
        }
    }

    pub fn into_record(self) -> Vec<ReparamDraw> {
        self.record.unwrap_or_default()
    }
}

impl<R: Rng + ?Sized> DrawSource for FreshDraws<'_, R> {
    fn draw(&mut self, law: &RadialLaw, kappa_path: bool) -> Result<ReparamDraw> {
        let d = ReparamDraw::sample(law, kappa_path || self.record.is_some(), self.rng)?;
        if let Some(r) = &mut self.record {
            r.push(d.clone());
        }
        Ok(d)
    }
}

/// Replays recorded noise `(F(w), v)` under possibly different parameters
/// (common random numbers).
pub struct ReplayDraws {
    draws: Vec<ReparamDraw>,
    next: usize,
}

impl ReplayDraws {
    pub fn new(draws: Vec<ReparamDraw>) -> Self {
        ReplayDraws { draws, next: 0 }
    }
}

impl DrawSource for ReplayDraws {
    fn draw(&mut self, law: &RadialLaw, _kappa_path: bool) -> Result<ReparamDraw> {
        let d = self
            .draws
            .get(self.next)
            .ok_or_else(|| Error::domain("replay ran out of recorded draws"))?;
        self.next += 1;
        ReparamDraw::replay(law, d.level, d.tangent.clone())
    }
}

struct ReparamOp {
    n: usize,
    dim: usize,
    /// Per output row: local point `y`, `∂y/∂w` and `dw/dκ`.
    local: Vec<f64>,
    local_dw: Vec<f64>,
    dw_dkappa: Vec<f64>,
}

impl CustomOp for ReparamOp {
    fn name(&self) -> &'static str {
        "vmf_reparam"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (mu, d) = (inputs[0], self.dim);
        let mut dmu = needs[0].then(|| Tensor::zeros(self.n, d));
        let mut dkappa = needs[1].then(|| Tensor::zeros(self.n, 1));
        let mut tmp = vec![0.0; d];
        for r in 0..grad.rows() {
            let i = r % self.n;
            let g = grad.row(r);
            let y = &self.local[r * d..(r + 1) * d];
            if let Some(dm) = &mut dmu {
                householder_vjp_mu(mu.row(i), y, g, &mut tmp);
                dm.row_mut(i)
                    .iter_mut()
                    .zip(&tmp)
                    .for_each(|(o, v)| *o += v);
            }
            if let Some(dk) = &mut dkappa {
                householder_to(mu.row(i), &self.local_dw[r * d..(r + 1) * d], &mut tmp);
                dk.data_mut()[i] += dot(&tmp, g) * self.dw_dkappa[r];
            }
        }
        vec![dmu, dkappa]
    }
}

/// `k` reparametrized draws from each of the `n` posteriors, stacked as a
/// `(k·n)×D` node whose row `j·n + i` is the `j`-th draw for posterior `i`.
pub fn vmf_reparam(
    tape: &mut Tape,
    post: PosteriorVars,
    k: usize,
    draws: &mut dyn DrawSource,
) -> Result<Var> {
    let (mu, kappa) = (tape.value(post.mu), tape.value(post.kappa));
    let (n, d) = (mu.rows(), mu.cols());
    if kappa.shape() != [n, 1] {
        return Err(Error::Shape {
            op: "vmf_reparam",
            detail: format!("mu {:?} vs kappa {:?}", mu.shape(), kappa.shape()),
        });
    }
    if kappa.data().iter().any(|k| k.is_infinite()) {
        return Err(Error::Dirac("vmf_reparam"));
    }
    let kappa_path = tape.requires_grad(post.kappa);
    let laws = kappa
        .data()
        .iter()
        .map(|&k| RadialLaw::new(d, k))
        .collect::<Result<Vec<_>>>()?;
    let rows = k * n;
    let mut out = Vec::with_capacity(rows * d);
    let mut local = Vec::with_capacity(rows * d);
    let mut local_dw = Vec::with_capacity(rows * d);
    let mut dw_dkappa = Vec::with_capacity(rows);
    let mut z = vec![0.0; d];
    for _ in 0..k {
        for (i, law) in laws.iter().enumerate() {
            let draw = draws.draw(law, kappa_path)?;
            let y = draw.local();
            householder_to(mu.row(i), &y, &mut z);
            out.extend_from_slice(&z);
            local.extend(y);
            local_dw.extend(draw.local_dw());
            dw_dkappa.push(draw.dw_dkappa);
        }
    }
    let value = Tensor::new(vec![rows, d], out)?;
    let op = ReparamOp {
        n,
        dim: d,
        local,
        local_dw,
        dw_dkappa,
    };
    Ok(tape.custom(&[post.mu, post.kappa], value, Box::new(op)))
}

struct LogNormConstOp {
    dim: usize,
}

impl CustomOp for LogNormConstOp {
    fn name(&self) -> &'static str {
        "log_vmf_norm_const"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&k, g)| -g * mean_resultant_length(self.dim, k).unwrap_or(f64::NAN))
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), data).expect("shape"))]
    }
}

/// Elementwise `ln C_D(κ)` with adjoint `-A_D(κ)`.
pub fn log_norm_const_op(tape: &mut Tape, kappa: Var, dim: usize) -> Result<Var> {
    let kv = tape.value(kappa);
    let data = kv
        .data()
        .iter()
        .map(|&k| log_vmf_norm_const(dim, k))
        .collect::<Result<Vec<_>>>()?;
    let value = Tensor::new(kv.shape().to_vec(), data)?;
    Ok(tape.custom(&[kappa], value, Box::new(LogNormConstOp { dim })))
}

fn dims(tape: &Tape, inputs: &LossInputs) -> Result<(usize, usize)> {
    let b = tape.value(inputs.refs.mu).rows();
    let d = tape.value(inputs.refs.mu).cols();
    if tape.value(inputs.positives.mu).shape() != [b, d] {
        return Err(Error::Shape {
            op: "loss",
            detail: "references and positives differ in shape".into(),
        });
    }
    match &inputs.negatives {
        NegativeVars::Explicit {
            posteriors,
            per_ref,
        } => {
            if *per_ref == 0 || tape.value(posteriors.mu).shape() != [b * per_ref, d] {
                return Err(Error::Shape {
                    op: "loss",
                    detail: format!("expected {} negatives of dim {d}", b * per_ref),
                });
            }
        }
        NegativeVars::InBatch { partners } => {
            if partners.len() != b || partners.iter().enumerate().any(|(i, &j)| j >= b || j == i) {
                return Err(Error::Shape {
                    op: "loss",
                    detail: "in-batch partners must index another reference".into(),
                });
            }
        }
    }
    Ok((b, d))
}

/// Sampled reference, positive and negative latents. Negatives are a
/// `(k·B·M)×D` node with row `j·B·M + i·M + m`, and `ref_for_neg` repeats the
/// reference samples to the same layout.
struct Samples {
    z_ref: Var,
    z_pos: Var,
    z_neg: Var,
    ref_for_neg: Var,
}

fn draw_samples(
    tape: &mut Tape,
    inputs: &LossInputs,
    k: usize,
    b: usize,
    draws: &mut dyn DrawSource,
) -> Result<Samples> {
    let m = inputs.negatives.per_ref();
    let z_ref = vmf_reparam(tape, inputs.refs, k, draws)?;
    let z_pos = vmf_reparam(tape, inputs.positives, k, draws)?;
    let z_neg = match &inputs.negatives {
        NegativeVars::Explicit { posteriors, .. } => vmf_reparam(tape, *posteriors, k, draws)?,
        NegativeVars::InBatch { partners } => {
            let idx = (0..k)
                .flat_map(|j| partners.iter().map(move |&p| j * b + p))
                .collect();
            tape.gather_rows(z_ref, idx)?
        }
    };
    let rep = (0..k)
        .flat_map(|j| (0..b).flat_map(move |i| std::iter::repeat_n(j * b + i, m)))
        .collect();
    let ref_for_neg = tape.gather_rows(z_ref, rep)?;
    Ok(Samples {
        z_ref,
        z_pos,
        z_neg,
        ref_for_neg,
    })
}

/// Permutation taking rows ordered `(j, i)` (`j < k` outer) to `(i, j)`.
fn sample_major_to_item_major(k: usize, n: usize) -> Vec<usize> {
    (0..n)
        .flat_map(|i| (0..k).map(move |j| j * n + i))
        .collect()
}

/// MCInfoNCE:
/// `L_i = -ln (1/K) Σ_k e^{s⁺_k} / ((1/M) e^{s⁺_k} + (1/M) Σ_m e^{s⁻_{m,k}})`
/// with `s = κ_pos zᵀz'` and the reference draw `z_k` shared within each `k`.
pub fn mc_infonce(
    tape: &mut Tape,
    inputs: &LossInputs,
    cfg: &LossConfig,
    draws: &mut dyn DrawSource,
) -> Result<Var> {
    cfg.validate()?;
    let (b, _) = dims(tape, inputs)?;
    let (k, m) = (cfg.k, inputs.negatives.per_ref());
    let s = draw_samples(tape, inputs, k, b, draws)?;
    let pos_dot = tape.row_dot(s.z_ref, s.z_pos)?;
    let s_pos = tape.scale(pos_dot, cfg.kappa_pos);
    let neg_dot = tape.row_dot(s.ref_for_neg, s.z_neg)?;
    let neg_dot = tape.reshape(neg_dot, k * b, m)?;
    let s_neg = tape.scale(neg_dot, cfg.kappa_pos);
    let all = tape.concat_cols(&[s_pos, s_neg])?;
    let denom = tape.logsumexp_rows(all);
    let diff = tape.sub(s_pos, denom)?;
    let log_frac = tape.add_scalar(diff, (m as f64).ln());
    let by_item = tape.gather_rows(log_frac, sample_major_to_item_major(k, b))?;
    let by_item = tape.reshape(by_item, b, k)?;
    let lse = tape.logsumexp_rows(by_item);
    let neg = tape.scale(lse, -1.0);
    let per_item = tape.add_scalar(neg, (k as f64).ln());
    Ok(tape.mean(per_item))
}

/// Contrastive HIB without the KL term:
/// `-ln E[σ(a zᵀz⁺ + b)] - (1/M) Σ_m ln E[1 - σ(a zᵀz⁻_m + b)]`.
pub fn hib_loss(
    tape: &mut Tape,
    inputs: &LossInputs,
    cfg: &LossConfig,
    draws: &mut dyn DrawSource,
) -> Result<Var> {
    cfg.validate()?;
    let (b, _) = dims(tape, inputs)?;
    let (k, m) = (cfg.k, inputs.negatives.per_ref());
    let s = draw_samples(tape, inputs, k, b, draws)?;
    let mc_log_mean = |tape: &mut Tape, logits: Var, n: usize, sign: f64| -> Result<Var> {
        let signed = tape.scale(logits, sign);
        let p = tape.sigmoid(signed);
        let p = tape.gather_rows(p, sample_major_to_item_major(k, n))?;
        let p = tape.reshape(p, n, k)?;
        let mean = tape.sum_cols(p);
        let mean = tape.scale(mean, 1.0 / k as f64);
        let mean = tape.clamp(mean, PROB_CLAMP, 1.0 - PROB_CLAMP);
        Ok(tape.ln(mean))
    };
    let pos_dot = tape.row_dot(s.z_ref, s.z_pos)?;
    let pos_logit = tape.scale(pos_dot, cfg.hib_a);
    let pos_logit = tape.add_scalar(pos_logit, cfg.hib_b);
    let pos_term = mc_log_mean(tape, pos_logit, b, 1.0)?;
    let neg_dot = tape.row_dot(s.ref_for_neg, s.z_neg)?;
    let neg_logit = tape.scale(neg_dot, cfg.hib_a);
    let neg_logit = tape.add_scalar(neg_logit, cfg.hib_b);
    // 1 - σ(x) = σ(-x)
    let neg_term = mc_log_mean(tape, neg_logit, b * m, -1.0)?;
    let neg_term = tape.reshape(neg_term, b, m)?;
    let neg_term = tape.sum_cols(neg_term);
    let neg_term = tape.scale(neg_term, 1.0 / m as f64);
    let total = tape.add(pos_term, neg_term)?;
    let total = tape.scale(total, -1.0);
    Ok(tape.mean(total))
}

/// `ln ∫ vMF(z; p) vMF(z; q) dz = ln C(κ_p) + ln C(κ_q) - ln C(‖κ_p μ_p + κ_q μ_q‖)`.
pub fn el_vmf_log_kernel(p: &crate::vmf::VmfParams, q: &crate::vmf::VmfParams) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            actual: q.dim(),
        });
    }
    if p.is_dirac() || q.is_dirac() {
        return Err(Error::Dirac("el_vmf_log_kernel"));
    }
    let d = p.dim();
    let v: Vec<f64> = p
        .mu()
        .as_slice()
        .iter()
        .zip(q.mu().as_slice())
        .map(|(a, b)| p.kappa() * a + q.kappa() * b)
        .collect();
    Ok(
        log_vmf_norm_const(d, p.kappa())? + log_vmf_norm_const(d, q.kappa())?
            - log_vmf_norm_const(d, crate::vmf::norm(&v))?,
    )
}

/// Smoothing inside the norm `‖κ_p μ_p + κ_q μ_q‖`, which vanishes for
/// antipodal posteriors of equal concentration.
const KERNEL_NORM_EPS: f64 = 1e-24;

fn log_kernel_rows(
    tape: &mut Tape,
    dim: usize,
    scaled_a: Var,
    ln_c_a: Var,
    scaled_b: Var,
    ln_c_b: Var,
) -> Result<Var> {
    let sum = tape.add(scaled_a, scaled_b)?;
    let n = tape.row_norm(sum, KERNEL_NORM_EPS);
    let ln_c_n = log_norm_const_op(tape, n, dim)?;
    let s = tape.add(ln_c_a, ln_c_b)?;
    tape.sub(s, ln_c_n)
}

/// Contrastive ELK: MCInfoNCE's softmax with scores `κ_pos · ln K(p, q)`,
/// evaluated in closed form.
pub fn elk_loss(tape: &mut Tape, inputs: &LossInputs, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let (b, d) = dims(tape, inputs)?;
    let m = inputs.negatives.per_ref();
    for p in [inputs.refs, inputs.positives] {
        if tape.value(p.kappa).data().iter().any(|k| k.is_infinite()) {
            return Err(Error::Dirac("elk_loss"));
        }
    }
    let prep = |tape: &mut Tape, p: PosteriorVars| -> Result<(Var, Var)> {
        let scaled = tape.mul_col(p.mu, p.kappa)?;
        let ln_c = log_norm_const_op(tape, p.kappa, d)?;
        Ok((scaled, ln_c))
    };
    let (ref_scaled, ref_c) = prep(tape, inputs.refs)?;
    let (pos_scaled, pos_c) = prep(tape, inputs.positives)?;
    let (neg_scaled, neg_c) = match &inputs.negatives {
        NegativeVars::Explicit { posteriors, .. } => prep(tape, *posteriors)?,
        NegativeVars::InBatch { partners } => (
            tape.gather_rows(ref_scaled, partners.clone())?,
            tape.gather_rows(ref_c, partners.clone())?,
        ),
    };
    let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, m)).collect();
    let ref_scaled_rep = tape.gather_rows(ref_scaled, rep.clone())?;
    let ref_c_rep = tape.gather_rows(ref_c, rep)?;
    let k_pos = log_kernel_rows(tape, d, ref_scaled, ref_c, pos_scaled, pos_c)?;
    let k_neg = log_kernel_rows(tape, d, ref_scaled_rep, ref_c_rep, neg_scaled, neg_c)?;
    let s_pos = tape.scale(k_pos, cfg.kappa_pos);
    let s_neg = tape.scale(k_neg, cfg.kappa_pos);
    let s_neg = tape.reshape(s_neg, b, m)?;
    let all = tape.concat_cols(&[s_pos, s_neg])?;
    let lse = tape.logsumexp_rows(all);
    let per_item = tape.sub(lse, s_pos)?;
    let per_item = tape.add_scalar(per_item, -(m as f64).ln());
    Ok(tape.mean(per_item))
}

/// Dispatches on `cfg.kind`.
pub fn loss(
    tape: &mut Tape,
    inputs: &LossInputs,
    cfg: &LossConfig,
    draws: &mut dyn DrawSource,
) -> Result<Var> {
    match cfg.kind {
        LossKind::McInfoNce => mc_infonce(tape, inputs, cfg, draws),
        LossKind::Hib => hib_loss(tape, inputs, cfg, draws),
        LossKind::Elk => elk_loss(tape, inputs, cfg),
    }
}
