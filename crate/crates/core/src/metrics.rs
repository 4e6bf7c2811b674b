//! Rotation-invariant comparison of predicted and true posteriors.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genproc::{uniform_observations, GenerativeProcess};
use crate::nn::Tensor;
use crate::rng::substream;
use crate::stats::median;
use crate::vmf::{dot, norm};

/// Anything that maps observations to vMF posteriors.
pub trait PosteriorModel: Sync {
    /// Dimension of the observations.
    fn input_dim(&self) -> usize;

    /// Dimension of the latent sphere's ambient space.
    fn latent_dim(&self) -> usize;

    /// Unit-row `μ` matrix and `κ` per row of `xs` (`+∞` for Dirac posteriors).
    fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)>;
}

impl PosteriorModel for GenerativeProcess {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn latent_dim(&self) -> usize {
        self.dim()
    }

    fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        GenerativeProcess::posterior_batch(self, xs)
    }
}

impl<M: PosteriorModel + ?Sized> PosteriorModel for &M {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }

    fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        (**self).posterior_batch(xs)
    }
}

/// Applies a fixed orthogonal matrix to every `μ` of the wrapped model.
pub struct Rotated<M> {
    pub inner: M,
    /// `D×D`; rows of the output are `μ Rᵀ`.
    pub rotation: Tensor,
}

impl<M: PosteriorModel> PosteriorModel for Rotated<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (mu, kappa) = self.inner.posterior_batch(xs)?;
        Ok((Tensor::matmul_t(&mu, false, &self.rotation, true)?, kappa))
    }
}

/// Multiplies every `κ` of the wrapped model by `factor`.
pub struct KappaScaled<M> {
    pub inner: M,
    pub factor: f64,
}

impl<M: PosteriorModel> PosteriorModel for KappaScaled<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (mu, kappa) = self.inner.posterior_batch(xs)?;
        Ok((mu, kappa.into_iter().map(|k| k * self.factor).collect()))
    }
}

/// Tilts every `μ` of the wrapped model by a fixed `angle` (radians) in a
/// tangent direction that is a deterministic function of the observation
/// and `seed`.
pub struct Jittered<M> {
    pub inner: M,
    pub angle: f64,
    pub seed: u64,
}

fn observation_key(x: &[f64]) -> u64 {
    x.iter().fold(0xcbf2_9ce4_8422_2325, |h, v| {
        (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
    })
}

impl<M: PosteriorModel> PosteriorModel for Jittered<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn posterior_batch(&self, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (mut mu, kappa) = self.inner.posterior_batch(xs)?;
        let (c, s) = (self.angle.cos(), self.angle.sin());
        for r in 0..xs.rows() {
            let mut rng = substream(self.seed, "metrics/jitter", observation_key(xs.row(r)));
            let m = mu.row_mut(r);
            let v = loop {
                let mut v: Vec<f64> = (0..m.len()).map(|_| rng.sample(StandardNormal)).collect();
                let p = dot(&v, m);
                v.iter_mut().zip(m.iter()).for_each(|(a, b)| *a -= p * b);
                let n = norm(&v);
                if n > 1e-8 {
                    v.iter_mut().for_each(|a| *a /= n);
                    break v;
                }
            };
            m.iter_mut().zip(&v).for_each(|(a, b)| *a = c * *a + s * b);
            let n = norm(m);
            m.iter_mut().for_each(|a| *a /= n);
        }
        Ok((mu, kappa))
    }
}

/// Haar-random orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Tensor {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for u in &q {
                let p = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            q.push(v);
        }
    }
    Tensor::from_rows(&q).expect("square")
}

/// Spearman rank correlation, with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::domain("spearman needs at least two observations"));
    }
    pearson(&ranks(a), &ranks(b))
}

/// Fractional ranks (1-based), ties sharing the average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let avg = 0.5 * ((start + 1) + end) as f64;
        for &i in &idx[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate(
            "rank correlation of a constant sequence is undefined".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

/// Default number of sampled probe pairs.
pub const DEFAULT_PAIR_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rmse_mu: f64,
    /// `None` when the rank correlation is undefined (constant input).
    pub rank_mu: Option<f64>,
    /// `None` for Dirac processes, whose `κ` has no finite target.
    pub rmse_kappa: Option<f64>,
    pub rank_kappa: Option<f64>,
    pub median_kappa_hat: f64,
    pub n_samples: usize,
    pub n_pairs: usize,
    /// Mean resultant length of the predicted `μ̂` over the probes.
    pub marginal_uniformity: f64,
}

/// Probe pairs `(i, j)`, `i < j`: all of them when they fit in `budget`,
/// otherwise `budget` uniformly drawn distinct pairs.
pub fn probe_pairs<R: Rng + ?Sized>(n: usize, budget: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if total <= budget {
        return (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
    }
    (0..budget)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j))
        })
        .collect()
}

/// Compares `model` against `truth` on the probe observations `probes`.
pub fn evaluate_on(
    truth: &dyn PosteriorModel,
    model: &dyn PosteriorModel,
    probes: &Tensor,
    pairs: &[(usize, usize)],
) -> Result<MetricsReport> {
    if probes.rows() < 2 {
        return Err(Error::domain("evaluation needs at least two probes"));
    }
    let (mu, kappa) = truth.posterior_batch(probes)?;
    let (mu_hat, kappa_hat) = model.posterior_batch(probes)?;
    let true_dots: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| dot(mu.row(i), mu.row(j)))
        .collect();
    let hat_dots: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| dot(mu_hat.row(i), mu_hat.row(j)))
        .collect();
    let finite_target = kappa.iter().all(|k| k.is_finite());
    let (rmse_kappa, rank_kappa) = if finite_target {
        (
            Some(rmse(&kappa_hat, &kappa)),
            spearman(&kappa_hat, &kappa).ok(),
        )
    } else {
        (None, None)
    };
    let n = probes.rows();
    let mut resultant = vec![0.0; mu_hat.cols()];
    for r in 0..n {
        resultant
            .iter_mut()
            .zip(mu_hat.row(r))
            .for_each(|(a, b)| *a += b / n as f64);
    }
    Ok(MetricsReport {
        rmse_mu: rmse(&hat_dots, &true_dots),
        rank_mu: spearman(&hat_dots, &true_dots).ok(),
        rmse_kappa,
        rank_kappa,
        median_kappa_hat: median(&kappa_hat),
        n_samples: n,
        n_pairs: pairs.len(),
        marginal_uniformity: norm(&resultant),
    })
}

/// Draws `n_samples` uniform probes and up to `pair_budget` probe pairs from `rng`.
pub fn evaluate<R: Rng + ?Sized>(
    truth: &dyn PosteriorModel,
    model: &dyn PosteriorModel,
    n_samples: usize,
    pair_budget: usize,
    rng: &mut R,
) -> Result<MetricsReport> {
    if truth.input_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.input_dim(),
            actual: model.input_dim(),
        });
    }
    let probes = uniform_observations(n_samples, truth.input_dim(), rng);
    let pairs = probe_pairs(n_samples, pair_budget, rng);
    evaluate_on(truth, model, &probes, &pairs)
}
