//! Credible intervals `{z : zᵀμ ≥ t}` and credible-image-interval retrieval.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genproc::{uniform_observations, GenerativeProcess, Observation};
use crate::metrics::PosteriorModel;
use crate::nn::Tensor;
use crate::vmf::{dot, RadialLaw, UnitVector, VmfParams};

fn check_level(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "credible level must lie in (0, 1], got {p}"
        )))
    }
}

/// Threshold `t` with posterior mass `p` on `{zᵀμ ≥ t}`.
pub fn ci_threshold(kappa: f64, p: f64, dim: usize) -> Result<f64> {
    check_level(p)?;
    if p == 1.0 {
        return Ok(-1.0);
    }
    if kappa.is_infinite() {
        return Ok(1.0);
    }
    RadialLaw::new(dim, kappa)?.quantile(1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CredibleInterval {
    pub center: Vec<f64>,
    pub threshold: f64,
    pub level: f64,
}

impl CredibleInterval {
    pub fn new(posterior: &VmfParams, p: f64) -> Result<Self> {
        Ok(CredibleInterval {
            center: posterior.mu().as_slice().to_vec(),
            threshold: ci_threshold(posterior.kappa(), p, posterior.dim())?,
            level: p,
        })
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        dot(z, &self.center) >= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: u64,
    pub posterior: VmfParams,
}

/// Posteriors of a held-out observation set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddedCorpus {
    items: Vec<CorpusItem>,
}

impl EmbeddedCorpus {
    pub fn new(items: Vec<CorpusItem>) -> Result<Self> {
        if let Some(first) = items.first() {
            let d = first.posterior.dim();
            if let Some(bad) = items.iter().find(|it| it.posterior.dim() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: bad.posterior.dim(),
                });
            }
        }
        Ok(EmbeddedCorpus { items })
    }

    /// Embeds every row of `xs` with `model`; ids are row indices.
    pub fn from_model(model: &dyn PosteriorModel, xs: &Tensor) -> Result<Self> {
        let (mu, kappa) = model.posterior_batch(xs)?;
        let items = (0..xs.rows())
            .map(|i| {
                let m = UnitVector::normalize(mu.row(i).to_vec())?;
                let post = if kappa[i].is_infinite() {
                    VmfParams::dirac(m)
                } else {
                    VmfParams::new(m, kappa[i])?
                };
                Ok(CorpusItem {
                    id: i as u64,
                    posterior: post,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.items.first().map(|it| it.posterior.dim())
    }

    /// CSV rows `id,kappa,mu_0,…,mu_{D-1}`; Dirac items carry `inf`.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let d = self.dim().unwrap_or(0);
        let mu_cols: Vec<String> = (0..d).map(|j| format!("mu_{j}")).collect();
        writeln!(w, "id,kappa,{}", mu_cols.join(","))?;
        for it in &self.items {
            let mu: Vec<String> = it
                .posterior
                .mu()
                .as_slice()
                .iter()
                .map(|v| format!("{v:?}"))
                .collect();
            writeln!(w, "{},{:?},{}", it.id, it.posterior.kappa(), mu.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut items = Vec::new();
        for (n, line) in r.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("corpus line {}: malformed row", n + 1));
            let mut fields = line.split(',');
            let id = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            let kappa: f64 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(bad)?;
            let mu = fields
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            let m = UnitVector::new(mu)?;
            let posterior = if kappa.is_infinite() {
                VmfParams::dirac(m)
            } else {
                VmfParams::new(m, kappa)?
            };
            items.push(CorpusItem { id, posterior });
        }
        Self::new(items)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieved {
    pub id: u64,
    pub dot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub threshold: f64,
    pub level: f64,
    pub hits: Vec<Retrieved>,
}

/// Corpus items whose mode lies in the query's level-`p` credible interval,
/// by descending `μ_itemᵀμ_query`.
pub fn cii_retrieve(query: &VmfParams, corpus: &EmbeddedCorpus, p: f64) -> Result<Retrieval> {
    if let Some(d) = corpus.dim() {
        if d != query.dim() {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: query.dim(),
            });
        }
    }
    let ci = CredibleInterval::new(query, p)?;
    let mut hits: Vec<Retrieved> = corpus
        .items
        .iter()
        .filter_map(|it| {
            let d = dot(it.posterior.mu().as_slice(), &ci.center);
            (d >= ci.threshold).then_some(Retrieved { id: it.id, dot: d })
        })
        .collect();
    hits.sort_by(|a, b| b.dot.total_cmp(&a.dot).then(a.id.cmp(&b.id)));
    Ok(Retrieval {
        threshold: ci.threshold,
        level: p,
        hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub level: f64,
    pub trials: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Binomial standard error at the nominal level.
    pub stderr: f64,
}

/// Fraction of trials in which a true latent `z ~ P(z|x)` falls inside the
/// level-`p` interval built from `model`'s posterior at the same `x`.
pub fn coverage_check<R: Rng + ?Sized>(
    process: &GenerativeProcess,
    model: &dyn PosteriorModel,
    p: f64,
    n_trials: usize,
    rng: &mut R,
) -> Result<Coverage> {
    check_level(p)?;
    if n_trials == 0 {
        return Err(Error::domain("coverage needs at least one trial"));
    }
    if model.latent_dim() != process.dim() || model.input_dim() != process.dim() {
        return Err(Error::DimensionMismatch {
            expected: process.dim(),
            actual: model.latent_dim(),
        });
    }
    let xs = uniform_observations(n_trials, process.dim(), rng);
    let (mu_hat, kappa_hat) = model.posterior_batch(&xs)?;
    let mut covered = 0;
    for (i, &k) in kappa_hat.iter().enumerate() {
        let z = process.sample_posterior(&Observation::new(xs.row(i).to_vec())?, rng)?;
        let t = ci_threshold(k, p, process.dim())?;
        if dot(z.as_slice(), mu_hat.row(i)) >= t {
            covered += 1;
        }
    }
    Ok(Coverage {
        level: p,
        trials: n_trials,
        covered,
        coverage: covered as f64 / n_trials as f64,
        stderr: (p * (1.0 - p) / n_trials as f64).sqrt(),
    })
}
