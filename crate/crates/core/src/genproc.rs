//! The ground-truth generative process.
//!
//! Observations `x ∈ [0,1]^D` map to posteriors `P(z|x)` through two frozen
//! random MLPs: `μ(x)` (three width-`D` layers, L2-normalized) and `κ(x)`
//! (one hidden layer fewer, `1 + exp` head). Contrastive pairs are produced
//! by rejection: draw `x, x⁺` uniformly, draw `z ~ P(z|x)` and
//! `z⁺ ~ P(z⁺|x⁺)`, and accept with probability
//!
//! ```text
//! C(κ_pos) e^{κ_pos zᵀz⁺} / (C(κ_pos) e^{κ_pos zᵀz⁺} + C(0))
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mlp, MlpSpec, OutputTransform, Tensor};
use crate::rng::{stream, substream};
use crate::special::{log_add_exp, log_vmf_norm_const};
use crate::vmf::{
    dot, householder_to, local_point, norm, sample_radial, sample_tangent, UnitVector, VmfParams,
};

/// Number of probe points used for calibration and the collapse check.
pub const N_PROBES: usize = 1000;
/// Re-initialize `μ` while every probe pair has cosine above this.
pub const COLLAPSE_COSINE: f64 = 0.5;
pub const MAX_REINIT: usize = 100;

/// `(refs, positives, ref latents, candidates tried)` of one generation chunk.
type Chunk = (Vec<f64>, Vec<f64>, Vec<f64>, u64);
/// Accepted pairs per generation chunk; each chunk owns one random stream.
pub const CHUNK_PAIRS: usize = 32;
const CANDIDATES_PER_ROUND: usize = 64;
const STARVATION_WINDOW: u64 = 1 << 20;
const STARVATION_RATE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vmf,
    Gaussian,
    Laplace,
    Dirac,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Vmf,
        Family::Gaussian,
        Family::Laplace,
        Family::Dirac,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Vmf => "vmf",
            Family::Gaussian => "gaussian",
            Family::Laplace => "laplace",
            Family::Dirac => "dirac",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vmf" => Ok(Family::Vmf),
            "gaussian" => Ok(Family::Gaussian),
            "laplace" => Ok(Family::Laplace),
            "dirac" => Ok(Family::Dirac),
            _ => Err(Error::Config(format!("unknown posterior family {s:?}"))),
        }
    }
}

/// A point of the observation space `[0,1]^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("observation coordinates must lie in [0, 1]"));
        }
        Ok(Observation(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `B` reference/positive pairs plus negatives.
///
/// `negatives` holds `B·negatives_per_ref` rows, row `i·M + m` being the
/// `m`-th negative of reference `i`. With in-batch negatives, `partners[i]`
/// is the reference whose observation serves as the single negative of `i`
/// and `negatives` holds copies of those rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub refs: Tensor,
    pub positives: Tensor,
    pub negatives: Tensor,
    pub negatives_per_ref: usize,
    pub partners: Option<Vec<usize>>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.refs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.rows() == 0
    }

    /// Dumps the batch as CSV with columns `block,row,x0,…`.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        let d = self.refs.cols();
        let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        writeln!(w, "block,row,{}", header.join(","))?;
        for (name, t) in [
            ("ref", &self.refs),
            ("pos", &self.positives),
            ("neg", &self.negatives),
        ] {
            for r in 0..t.rows() {
                let vals: Vec<String> = t.row(r).iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{name},{r},{}", vals.join(","))?;
            }
        }
        Ok(())
    }
}

/// Log acceptance probability of a candidate pair with latent cosine `t`.
pub fn acceptance_log_prob(dim: usize, kappa_pos: f64, t: f64) -> Result<f64> {
    let pos = log_vmf_norm_const(dim, kappa_pos)? + kappa_pos * t;
    let uniform = log_vmf_norm_const(dim, 0.0)?;
    Ok(pos - log_add_exp(pos, uniform))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessConfig {
    pub dim: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub family: Family,
    pub kappa_pos: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeProcess {
    cfg: ProcessConfig,
    mlp_mu: Mlp,
    mlp_kappa: Mlp,
    /// Precomputed `ln C(κ_pos)` and `ln C(0)`.
    log_c_pos: f64,
    log_c_zero: f64,
}

/// Uniform points of `[0,1]^dim`, one per row.
pub fn uniform_observations<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Tensor {
    Tensor::new(
        vec![n, dim],
        (0..n * dim).map(|_| rng.random::<f64>()).collect(),
    )
    .expect("shape")
}

/// Smallest pairwise cosine among the rows of `mu`.
pub fn min_pairwise_cosine(mu: &Tensor) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..mu.rows() {
        for j in i + 1..mu.rows() {
            min = min.min(dot(mu.row(i), mu.row(j)));
        }
    }
    min
}

/// Affine map `(scale, shift)` taking the range of `pre` onto `[ln(lo-1), ln(hi-1)]`,
/// so that `1 + exp(scale·pre + shift)` spans exactly `[lo, hi]`.
pub fn kappa_calibration(pre: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !(lo > 1.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Config(format!(
            "kappa range must satisfy 1 < kappa_min <= kappa_max < inf, got [{lo}, {hi}]"
        )));
    }
    let (a, b) = pre
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (tlo, thi) = ((lo - 1.0).ln(), (hi - 1.0).ln());
    if b - a <= 1e-12 * a.abs().max(1.0) || hi == lo {
        return Ok((0.0, 0.5 * (tlo + thi)));
    }
    let scale = (thi - tlo) / (b - a);
    Ok((scale, tlo - scale * a))
}

impl GenerativeProcess {
    pub fn new(cfg: ProcessConfig) -> Result<Self> {
        if cfg.dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {}", cfg.dim)));
        }
        if !(cfg.kappa_pos > 0.0 && cfg.kappa_pos.is_finite()) {
            return Err(Error::Config(format!(
                "kappa_pos must be positive, got {}",
                cfg.kappa_pos
            )));
        }
        if !(cfg.kappa_min > 0.0 && cfg.kappa_min <= cfg.kappa_max) {
            return Err(Error::Config(format!(
                "need 0 < kappa_min <= kappa_max, got [{}, {}]",
                cfg.kappa_min, cfg.kappa_max
            )));
        }
        if cfg.family != Family::Dirac && cfg.kappa_min <= 1.0 {
            return Err(Error::Config(format!(
                "kappa(x) = 1 + exp(.) > 1, so kappa_min must exceed 1 (got {})",
                cfg.kappa_min
            )));
        }
        let d = cfg.dim;
        let mut init_rng = stream(cfg.seed, "genproc/init");
        let probes = uniform_observations(N_PROBES, d, &mut stream(cfg.seed, "genproc/probes"));
        let mu_spec = MlpSpec::chain(&[d, d, d, d], OutputTransform::L2Normalize)?;
        let mut attempt = 0;
        let mlp_mu = loop {
            attempt += 1;
            let candidate = Mlp::init(mu_spec.clone(), &mut init_rng)?;
            let min_cos = min_pairwise_cosine(&candidate.forward(&probes)?);
            if min_cos <= COLLAPSE_COSINE {
                break candidate;
            }
            if attempt >= MAX_REINIT {
                return Err(Error::Reinit {
                    attempts: attempt,
                    reason: format!("smallest probe cosine still {min_cos:.4} > {COLLAPSE_COSINE}"),
                });
            }
        };
        let kappa_spec = MlpSpec::chain(&[d, d, 1], OutputTransform::OnePlusExp)?;
        let mut mlp_kappa = Mlp::init(kappa_spec, &mut init_rng)?;
        if cfg.family != Family::Dirac {
            let pre = mlp_kappa.forward_linear(&probes)?;
            let (scale, shift) = kappa_calibration(pre.data(), cfg.kappa_min, cfg.kappa_max)?;
            mlp_kappa.affine_output(scale, shift);
        }
        Self::assemble(cfg, mlp_mu, mlp_kappa)
    }

    fn assemble(cfg: ProcessConfig, mlp_mu: Mlp, mlp_kappa: Mlp) -> Result<Self> {
        Ok(GenerativeProcess {
            log_c_pos: log_vmf_norm_const(cfg.dim, cfg.kappa_pos)?,
            log_c_zero: log_vmf_norm_const(cfg.dim, 0.0)?,
            cfg,
            mlp_mu,
            mlp_kappa,
        })
    }

    pub fn config(&self) -> &ProcessConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn family(&self) -> Family {
        self.cfg.family
    }

    pub fn kappa_pos(&self) -> f64 {
        self.cfg.kappa_pos
    }

    /// The probe set used at construction.
    pub fn probes(&self) -> Tensor {
        uniform_observations(
            N_PROBES,
            self.cfg.dim,
            &mut stream(self.cfg.seed, "genproc/probes"),
        )
    }

    /// `μ(x)` rows and `κ(x)` values for each row of `xs`. Dirac processes
    /// report `κ = ∞`.
    pub fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mu = self.mlp_mu.forward(xs)?;
        let kappa = if self.cfg.family == Family::Dirac {
            vec![f64::INFINITY; xs.rows()]
        } else {
            self.mlp_kappa.forward(xs)?.into_data()
        };
        Ok((mu, kappa))
    }

    pub fn posterior_of(&self, x: &Observation) -> Result<VmfParams> {
        if x.0.len() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.dim,
                actual: x.0.len(),
            });
        }
        let xs = Tensor::new(vec![1, self.cfg.dim], x.0.clone())?;
        let (mu, kappa) = self.posterior_batch(&xs)?;
        let mu = UnitVector::new(mu.into_data())?;
        if kappa[0].is_infinite() {
            Ok(VmfParams::dirac(mu))
        } else {
            VmfParams::new(mu, kappa[0])
        }
    }

    /// One latent draw from the family's posterior with location `mu` and concentration `kappa`.
    fn draw_latent<R: Rng + ?Sized>(
        &self,
        mu: &[f64],
        kappa: f64,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        match self.cfg.family {
            Family::Dirac => out.copy_from_slice(mu),
            Family::Vmf => {
                let w = sample_radial(mu.len(), kappa, rng)?;
                let v = sample_tangent(mu.len(), rng);
                householder_to(mu, &local_point(w, &v), out);
            }
            Family::Gaussian | Family::Laplace => loop {
                let scale = 1.0 / kappa;
                for (o, m) in out.iter_mut().zip(mu) {
                    let eps = if self.cfg.family == Family::Gaussian {
                        Normal::new(0.0, scale.sqrt())
                            .map_err(|e| Error::domain(e.to_string()))?
                            .sample(rng)
                    } else {
                        // Laplace(0, b) by inversion, b = 1/κ.
                        let u: f64 = rng.random::<f64>() - 0.5;
                        -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                    };
                    *o = m + eps;
                }
                let n = norm(out);
                if n > 1e-300 && n.is_finite() {
                    out.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            },
        }
        Ok(())
    }

    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        x: &Observation,
        rng: &mut R,
    ) -> Result<UnitVector> {
        let p = self.posterior_of(x)?;
        let mut z = vec![0.0; self.cfg.dim];
        self.draw_latent(p.mu().as_slice(), p.kappa(), rng, &mut z)?;
        UnitVector::normalize(z)
    }

    pub fn acceptance_log_prob(&self, t: f64) -> f64 {
        let pos = self.log_c_pos + self.cfg.kappa_pos * t;
        pos - log_add_exp(pos, self.log_c_zero)
    }

    /// Draws `want` accepted pairs from a chunk stream. Returns the pairs as
    /// `(refs, positives, ref latents)` plus the number of candidates tried.
    fn generate_chunk(&self, seed: u64, chunk: u64, want: usize) -> Result<Chunk> {
        let d = self.cfg.dim;
        let mut rng = substream(seed, "genproc/pairs", chunk);
        let (mut refs, mut pos, mut lat) = (Vec::new(), Vec::new(), Vec::new());
        let mut accepted = 0;
        let mut attempts: u64 = 0;
        let (mut z, mut zp) = (vec![0.0; d], vec![0.0; d]);
        while accepted < want {
            let x = uniform_observations(CANDIDATES_PER_ROUND, d, &mut rng);
            let xp = uniform_observations(CANDIDATES_PER_ROUND, d, &mut rng);
            let (mu, kappa) = self.posterior_batch(&x)?;
            let (mup, kappap) = self.posterior_batch(&xp)?;
            for c in 0..CANDIDATES_PER_ROUND {
                self.draw_latent(mu.row(c), kappa[c], &mut rng, &mut z)?;
                self.draw_latent(mup.row(c), kappap[c], &mut rng, &mut zp)?;
                let u: f64 = rng.random();
                attempts += 1;
                if accepted < want && u.ln() < self.acceptance_log_prob(dot(&z, &zp)) {
                    refs.extend_from_slice(x.row(c));
                    pos.extend_from_slice(xp.row(c));
                    lat.extend_from_slice(&z);
                    accepted += 1;
                }
                if attempts.is_multiple_of(STARVATION_WINDOW)
                    && (accepted as f64) < STARVATION_RATE * attempts as f64
                {
                    return Err(Error::Starvation {
                        accepted: accepted as u64,
                        attempts,
                    });
                }
            }
        }
        Ok((refs, pos, lat, attempts))
    }

    /// `n` accepted pairs, generated in parallel chunks keyed by `seed`.
    /// The output depends only on `seed`, not on the number of workers.
    pub fn sample_pairs(&self, n: usize, seed: u64) -> Result<(Tensor, Tensor, Tensor)> {
        let d = self.cfg.dim;
        let chunks = n.div_ceil(CHUNK_PAIRS);
        let parts = (0..chunks)
            .into_par_iter()
            .map(|c| self.generate_chunk(seed, c as u64, CHUNK_PAIRS.min(n - c * CHUNK_PAIRS)))
            .collect::<Result<Vec<_>>>()?;
        let (mut refs, mut pos, mut lat) = (
            Vec::with_capacity(n * d),
            Vec::with_capacity(n * d),
            Vec::with_capacity(n * d),
        );
        for (r, p, l, _) in parts {
            refs.extend(r);
            pos.extend(p);
            lat.extend(l);
        }
        Ok((
            Tensor::new(vec![n, d], refs)?,
            Tensor::new(vec![n, d], pos)?,
            Tensor::new(vec![n, d], lat)?,
        ))
    }

    /// A batch of `b` accepted pairs with `m` uniform negatives each, or
    /// in-batch negatives when `m = 0`.
    pub fn sample_triplet_batch<R: Rng + ?Sized>(
        &self,
        b: usize,
        m: usize,
        rng: &mut R,
    ) -> Result<ContrastiveBatch> {
        if b == 0 || (m == 0 && b < 2) {
            return Err(Error::Config(format!(
                "batch size {b} too small for {m} negatives"
            )));
        }
        let seed: u64 = rng.random();
        let (refs, positives, _) = self.sample_pairs(b, seed)?;
        let mut neg_rng = stream(seed, "genproc/negatives");
        let (negatives, partners) = if m == 0 {
            let partners: Vec<usize> = (0..b)
                .map(|i| {
                    let j = neg_rng.random_range(0..b - 1);
                    if j >= i {
                        j + 1
                    } else {
                        j
                    }
                })
                .collect();
            let mut data = Vec::with_capacity(b * self.cfg.dim);
            for &j in &partners {
                data.extend_from_slice(refs.row(j));
            }
            (Tensor::new(vec![b, self.cfg.dim], data)?, Some(partners))
        } else {
            (
                uniform_observations(b * m, self.cfg.dim, &mut neg_rng),
                None,
            )
        };
        Ok(ContrastiveBatch {
            refs,
            positives,
            negatives,
            negatives_per_ref: m.max(1),
            partners,
        })
    }

    /// Mean resultant length of `n` accepted reference latents and its
    /// standard error under a uniform marginal (`1/√n` per coordinate scale).
    pub fn marginal_uniformity(&self, n: usize, seed: u64) -> Result<(f64, f64)> {
        let (_, _, lat) = self.sample_pairs(n, seed)?;
        let d = self.cfg.dim;
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(lat.row(r)) {
                *m += v / n as f64;
            }
        }
        // Under uniformity each coordinate has variance 1/D, so ‖mean‖²·nD ~ χ²_D.
        Ok((norm(&mean), (1.0 / n as f64).sqrt()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "process");
        c.set_meta("dim", self.cfg.dim.to_string());
        c.set_meta("family", self.cfg.family.to_string());
        c.set_meta("kappa_min", format!("{:?}", self.cfg.kappa_min));
        c.set_meta("kappa_max", format!("{:?}", self.cfg.kappa_max));
        c.set_meta("kappa_pos", format!("{:?}", self.cfg.kappa_pos));
        c.set_meta("seed", self.cfg.seed.to_string());
        self.mlp_mu.write_to(&mut c, "mu");
        self.mlp_kappa.write_to(&mut c, "kappa");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta("kind")? != "process" {
            return Err(Error::Checkpoint(
                "not a generative-process checkpoint".into(),
            ));
        }
        let num = |k: &str| -> Result<f64> {
            c.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for {k}")))
        };
        let cfg = ProcessConfig {
            dim: c
                .meta("dim")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad dim".into()))?,
            family: c.meta("family")?.parse()?,
            kappa_min: num("kappa_min")?,
            kappa_max: num("kappa_max")?,
            kappa_pos: num("kappa_pos")?,
            seed: c
                .meta("seed")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad seed".into()))?,
        };
        let mlp_mu = Mlp::read_from(c, "mu")?;
        let mlp_kappa = Mlp::read_from(c, "kappa")?;
        if mlp_mu.spec().in_dim() != cfg.dim || mlp_mu.spec().out_dim() != cfg.dim {
            return Err(Error::Checkpoint("mu network does not match dim".into()));
        }
        Self::assemble(cfg, mlp_mu, mlp_kappa)
    }
}
