//! Deterministic quadrature for the positive-pair marginal
//!
//! ```text
//! h(ρ, κ, κ⁺) = C(κ_pos) · E_{z~vMF(μ,κ)} [ C(κ⁺) / C(√(κ⁺² + κ_pos² + 2κ⁺κ_pos μ⁺ᵀz)) ]
//! ```
//!
//! which is `E[C(κ_pos) e^{κ_pos zᵀz⁺}]` with `z⁺ ~ vMF(μ⁺, κ⁺)` integrated
//! out in closed form.
//!
//! Only `ρ = μᵀμ⁺` matters. Write `z = w μ + √(1-w²) v` with `v ⟂ μ` uniform
//! on the equator, and `μ⁺ = ρ μ + √(1-ρ²) e` with `e ⟂ μ`. Then
//! `μ⁺ᵀz = wρ + √(1-w²)√(1-ρ²) s` where `s = eᵀv` is the first coordinate of
//! a uniform point on `S^{D-2}`, independent of `w`. With `w = cos θ` and
//! `s = cos φ` the densities are `∝ e^{κ cos θ} sin^{D-2} θ` and
//! `∝ sin^{D-3} φ` on `[0, π]`; for `D = 2`, `s = ±1` with equal mass.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::PosteriorModel;
use crate::nn::Tensor;
use crate::quad::GaussLegendre;
use crate::special::{
    ln_gamma_half, ln_sphere_area, log_sum_exp, log_vmf_norm_const, mean_resultant_length,
};
use crate::stats::mean_and_stderr;
use crate::vmf::{dot, vmf_sample, VmfParams};

/// Successive panel doublings must agree to this in `ln h`.
pub const QUAD_TOL: f64 = 1e-11;
const MIN_PANELS: usize = 2;
const MAX_PANELS: usize = 512;
/// Log-mass below which integration tails are dropped.
const TAIL_LOG_MASS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleQuery {
    /// `μ(x)ᵀμ(x⁺)`.
    pub rho: f64,
    pub kappa: f64,
    pub kappa_plus: f64,
    pub kappa_pos: f64,
    pub dim: usize,
}

impl OracleQuery {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::domain(format!("dim must be >= 2, got {}", self.dim)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::domain(format!(
                "rho must lie in [-1, 1], got {}",
                self.rho
            )));
        }
        if !(self.kappa > 0.0 && self.kappa_plus > 0.0) {
            return Err(Error::domain(format!(
                "posterior concentrations must be positive, got {} and {}",
                self.kappa, self.kappa_plus
            )));
        }
        if !(self.kappa_pos > 0.0 && self.kappa_pos.is_finite()) {
            return Err(Error::domain(format!(
                "kappa_pos must be positive, got {}",
                self.kappa_pos
            )));
        }
        Ok(())
    }
}

/// `ln h` together with its convergence record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult {
    pub log_h: f64,
    /// `|Δ ln h|` between the last two panel counts (0 for closed forms).
    pub last_change: f64,
    /// Panels per axis at the accepted value.
    pub panels: usize,
}

/// `ln C(κ⁺) - ln C(κ*(t))`.
struct RatioTerm {
    dim: usize,
    kappa_plus: f64,
    kappa_pos: f64,
    log_c_plus: f64,
}

impl RatioTerm {
    fn eval(&self, t: f64) -> f64 {
        let (a, b) = (self.kappa_plus, self.kappa_pos);
        let k2 = (a * a + b * b + 2.0 * a * b * t.clamp(-1.0, 1.0)).max(0.0);
        self.log_c_plus - log_vmf_norm_const(self.dim, k2.sqrt()).expect("finite kappa")
    }
}

/// Upper end of `[0, π]` beyond which `e^{-c(1 - cos x)}` is below `e^{-budget}`.
fn truncation(c: f64, budget: f64) -> f64 {
    if c <= 0.0 || budget / c >= 2.0 {
        std::f64::consts::PI
    } else {
        (1.0 - budget / c).acos()
    }
}

/// Closed form when one side is a Dirac posterior: `E_z[e^{κ_pos μ⁺ᵀz}]`
/// is a ratio of normalizers.
fn one_sided_dirac(dim: usize, kappa: f64, kappa_pos: f64, rho: f64) -> Result<f64> {
    let k2 = (kappa * kappa + kappa_pos * kappa_pos + 2.0 * kappa * kappa_pos * rho).max(0.0);
    Ok(
        log_vmf_norm_const(dim, kappa_pos)? + log_vmf_norm_const(dim, kappa)?
            - log_vmf_norm_const(dim, k2.sqrt())?,
    )
}

fn log_h_at(q: &OracleQuery, panels: usize) -> f64 {
    let gl = GaussLegendre::n16();
    let d = q.dim;
    let term = RatioTerm {
        dim: d,
        kappa_plus: q.kappa_plus,
        kappa_pos: q.kappa_pos,
        log_c_plus: log_vmf_norm_const(d, q.kappa_plus).expect("validated"),
    };
    let sr = (1.0 - q.rho * q.rho).max(0.0).sqrt();
    let spread = 2.0 * q.kappa_plus.min(q.kappa_pos);
    let theta_max = truncation(
        q.kappa,
        TAIL_LOG_MASS + spread + 0.5 * d as f64 * (1.0 + q.kappa).ln(),
    );
    // Lower bound on d ln F / dt, used to truncate the φ integral.
    let kstar_max = q.kappa_plus + q.kappa_pos;
    let slope =
        q.kappa_plus * q.kappa_pos * mean_resultant_length(d, kstar_max).expect("validated")
            / kstar_max;

    let mut outer_num = Vec::with_capacity(panels * gl.nodes.len());
    let mut outer_den = Vec::with_capacity(panels * gl.nodes.len());
    let mut inner_num = Vec::with_capacity(panels * gl.nodes.len());
    // ln ∫_0^π sin^{D-3} φ dφ
    let ln_phi_mass = if d >= 3 {
        0.5 * std::f64::consts::PI.ln() + ln_gamma_half(d as u32 - 2) - ln_gamma_half(d as u32 - 1)
    } else {
        0.0
    };
    gl.for_each_composite(0.0, theta_max, panels, |theta, wt| {
        let (sin_t, cos_t) = theta.sin_cos();
        let lw = wt.ln() + q.kappa * (cos_t - 1.0) + (d as f64 - 2.0) * sin_t.ln();
        let a = cos_t * q.rho;
        let b = sin_t * sr;
        let inner = if b == 0.0 {
            term.eval(a)
        } else if d == 2 {
            log_sum_exp(&[term.eval(a + b), term.eval(a - b)]) - std::f64::consts::LN_2
        } else {
            let phi_max = truncation(slope * b, TAIL_LOG_MASS + (1.0 + slope * b).ln());
            inner_num.clear();
            gl.for_each_composite(0.0, phi_max, panels, |phi, wp| {
                inner_num.push(
                    wp.ln() + (d as f64 - 3.0) * phi.sin().ln() + term.eval(a + b * phi.cos()),
                );
            });
            log_sum_exp(&inner_num) - ln_phi_mass
        };
        outer_den.push(lw);
        outer_num.push(lw + inner);
    });
    let log_mass = if theta_max < std::f64::consts::PI {
        // Normalize analytically so that the dropped tail is accounted for.
        -(log_vmf_norm_const(d, q.kappa).expect("validated")
            + ln_sphere_area(d as u32 - 2)
            + q.kappa)
    } else {
        log_sum_exp(&outer_den)
    };
    log_vmf_norm_const(d, q.kappa_pos).expect("validated") + log_sum_exp(&outer_num) - log_mass
}

/// `ln h` by nested composite Gauss–Legendre, doubling the panel count on
/// both axes until successive values agree to [`QUAD_TOL`].
pub fn log_marginal_h_detailed(q: &OracleQuery) -> Result<QuadResult> {
    q.validate()?;
    match (q.kappa.is_infinite(), q.kappa_plus.is_infinite()) {
        (true, true) => {
            return Ok(QuadResult {
                log_h: log_vmf_norm_const(q.dim, q.kappa_pos)? + q.kappa_pos * q.rho,
                last_change: 0.0,
                panels: 0,
            })
        }
        (false, true) | (true, false) => {
            let finite = if q.kappa.is_finite() {
                q.kappa
            } else {
                q.kappa_plus
            };
            return Ok(QuadResult {
                log_h: one_sided_dirac(q.dim, finite, q.kappa_pos, q.rho)?,
                last_change: 0.0,
                panels: 0,
            });
        }
        _ => {}
    }
    let mut panels = MIN_PANELS;
    let mut prev = log_h_at(q, panels);
    loop {
        panels *= 2;
        let cur = log_h_at(q, panels);
        let change = (cur - prev).abs();
        if !cur.is_finite() {
            return Err(Error::Degenerate(format!(
                "non-finite quadrature value for {q:?}"
            )));
        }
        if change < QUAD_TOL {
            return Ok(QuadResult {
                log_h: cur,
                last_change: change,
                panels,
            });
        }
        if panels >= MAX_PANELS {
            return Err(Error::Degenerate(format!(
                "quadrature did not settle for {q:?}: last change {change:e} at {panels} panels"
            )));
        }
        prev = cur;
    }
}

pub fn log_marginal_h(q: &OracleQuery) -> Result<f64> {
    Ok(log_marginal_h_detailed(q)?.log_h)
}

pub fn marginal_h(q: &OracleQuery) -> Result<f64> {
    Ok(log_marginal_h(q)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `C(κ_pos)·(1/K) Σ_k e^{κ_pos z_kᵀz_k⁺}` with independent draws from both
/// posteriors, and its standard error.
pub fn mc_marginal_estimate<R: Rng + ?Sized>(
    reference: &VmfParams,
    positive: &VmfParams,
    kappa_pos: f64,
    k: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if k == 0 {
        return Err(Error::domain("need at least one MC sample"));
    }
    if reference.dim() != positive.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            actual: positive.dim(),
        });
    }
    let log_c = log_vmf_norm_const(reference.dim(), kappa_pos)?;
    if reference.is_dirac() && positive.is_dirac() {
        return Ok(McEstimate {
            value: (log_c + kappa_pos * reference.mu().dot(positive.mu())).exp(),
            stderr: 0.0,
        });
    }
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        let z = vmf_sample(reference, rng)?;
        let zp = vmf_sample(positive, rng)?;
        values.push((log_c + kappa_pos * z.dot(&zp)).exp());
    }
    let (value, stderr) = mean_and_stderr(&values);
    Ok(McEstimate { value, stderr })
}

fn pair_queries(
    model: &dyn PosteriorModel,
    refs: &Tensor,
    positives: &Tensor,
    kappa_pos: f64,
) -> Result<Vec<OracleQuery>> {
    let (mu, kappa) = model.posterior_batch(refs)?;
    let (mu_p, kappa_p) = model.posterior_batch(positives)?;
    Ok((0..refs.rows())
        .map(|i| OracleQuery {
            rho: dot(mu.row(i), mu_p.row(i)).clamp(-1.0, 1.0),
            kappa: kappa[i],
            kappa_plus: kappa_p[i],
            kappa_pos,
            dim: mu.cols(),
        })
        .collect())
}

/// Cross-entropy `-Σ_i p_i ln q_i` between the pair distributions induced by
/// the true and the model marginals, each normalized over the probe pairs
/// `(refs[i], positives[i])`. By Gibbs' inequality it is minimal when the
/// model's marginals are proportional to the truth's.
pub fn limiting_loss(
    truth: &dyn PosteriorModel,
    model: &dyn PosteriorModel,
    refs: &Tensor,
    positives: &Tensor,
    kappa_pos: f64,
) -> Result<f64> {
    if refs.rows() != positives.rows() || refs.rows() == 0 {
        return Err(Error::domain(
            "probe pairs need matching, non-empty reference and positive sets",
        ));
    }
    let log_p = pair_queries(truth, refs, positives, kappa_pos)?
        .iter()
        .map(log_marginal_h)
        .collect::<Result<Vec<_>>>()?;
    let log_q = pair_queries(model, refs, positives, kappa_pos)?
        .iter()
        .map(log_marginal_h)
        .collect::<Result<Vec<_>>>()?;
    let (zp, zq) = (log_sum_exp(&log_p), log_sum_exp(&log_q));
    Ok(-log_p
        .iter()
        .zip(&log_q)
        .map(|(lp, lq)| (lp - zp).exp() * (lq - zq))
        .sum::<f64>())
}

/// `n` points evenly spaced in `ln κ` on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `ln h` over the product grid `rhos × kappas × kappa_pluses`, row-major.
pub fn h_table(
    dim: usize,
    kappa_pos: f64,
    rhos: &[f64],
    kappas: &[f64],
    kappa_pluses: &[f64],
) -> Result<Vec<(OracleQuery, f64)>> {
    let mut out = Vec::with_capacity(rhos.len() * kappas.len() * kappa_pluses.len());
    for &rho in rhos {
        for &kappa in kappas {
            for &kappa_plus in kappa_pluses {
                let q = OracleQuery {
                    rho,
                    kappa,
                    kappa_plus,
                    kappa_pos,
                    dim,
                };
                out.push((q, log_marginal_h(&q)?));
            }
        }
    }
    Ok(out)
}

pub fn write_h_table_csv(rows: &[(OracleQuery, f64)], w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "dim,kappa_pos,rho,kappa,kappa_plus,log_h,h")?;
    for (q, lh) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            q.dim,
            q.kappa_pos,
            q.rho,
            q.kappa,
            q.kappa_plus,
            lh,
            lh.exp()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn strictly_increasing(name: String, xs: &[f64], values: &[f64], margin: f64) -> CheckOutcome {
    let worst = values
        .windows(2)
        .enumerate()
        .map(|(i, w)| (i, w[1] - w[0]))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let (i, gap) = worst.unwrap_or((0, f64::INFINITY));
    CheckOutcome {
        name,
        passed: gap > margin,
        detail: format!(
            "smallest step in ln h is {gap:.3e} between x = {:.6} and {:.6}",
            xs[i],
            xs[(i + 1).min(xs.len() - 1)]
        ),
    }
}

/// `h̃(κ) = h(1, κ, κ)` on a 50-point log grid over `[1, 10³]`.
pub fn check_diagonal_monotone(dim: usize, kappa_pos: f64) -> Result<CheckOutcome> {
    let grid = log_grid(1.0, 1e3, 50);
    let vals = grid
        .iter()
        .map(|&k| {
            log_marginal_h(&OracleQuery {
                rho: 1.0,
                kappa: k,
                kappa_plus: k,
                kappa_pos,
                dim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(strictly_increasing(
        format!("h_tilde increasing in kappa (D={dim}, kappa_pos={kappa_pos})"),
        &grid,
        &vals,
        1e-10,
    ))
}

/// `h*(ρ) = h(ρ, κ, κ⁺)` on a 50-point grid over `[-1, 1]`.
pub fn check_rho_monotone(
    dim: usize,
    kappa_pos: f64,
    kappa: f64,
    kappa_plus: f64,
) -> Result<CheckOutcome> {
    let grid = linear_grid(-1.0, 1.0, 50);
    let vals = grid
        .iter()
        .map(|&rho| {
            log_marginal_h(&OracleQuery {
                rho,
                kappa,
                kappa_plus,
                kappa_pos,
                dim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(strictly_increasing(
        format!("h_star increasing in rho (D={dim}, kappa_pos={kappa_pos}, kappa={kappa}, kappa_plus={kappa_plus})"),
        &grid,
        &vals,
        1e-10,
    ))
}

/// The monotonicity, symmetry, bound and self-consistency suite.
pub fn run_checks(dims: &[usize]) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &dim in dims {
        for kappa_pos in [5.0, 20.0, 100.0] {
            out.push(check_diagonal_monotone(dim, kappa_pos)?);
            out.push(check_rho_monotone(dim, kappa_pos, 16.0, 32.0)?);
            out.push(check_rho_monotone(dim, kappa_pos, 64.0, 8.0)?);
        }
        let mut worst_sym: f64 = 0.0;
        let mut worst_bound = f64::INFINITY;
        let mut worst_change: f64 = 0.0;
        for (rho, kappa, kappa_plus) in [
            (0.5, 20.0, 20.0),
            (-0.3, 2.0, 80.0),
            (0.9, 150.0, 7.0),
            (0.0, 1.5, 1.5),
        ] {
            let q = OracleQuery {
                rho,
                kappa,
                kappa_plus,
                kappa_pos: 20.0,
                dim,
            };
            let a = log_marginal_h_detailed(&q)?;
            let b = log_marginal_h(&OracleQuery {
                kappa: kappa_plus,
                kappa_plus: kappa,
                ..q
            })?;
            worst_sym = worst_sym.max((a.log_h - b).abs());
            worst_change = worst_change.max(a.last_change);
            let bound = log_vmf_norm_const(dim, 20.0)? + log_vmf_norm_const(dim, kappa_plus)?
                - log_vmf_norm_const(dim, kappa_plus + 20.0)?;
            worst_bound = worst_bound.min(bound - a.log_h);
        }
        out.push(CheckOutcome {
            name: format!("symmetry in (kappa, kappa_plus) (D={dim})"),
            passed: worst_sym < 1e-8,
            detail: format!("max |ln h difference| {worst_sym:.3e}"),
        });
        out.push(CheckOutcome {
            name: format!("upper bound C(kp)C(k+)/C(k+ + kp) (D={dim})"),
            passed: worst_bound > 0.0,
            detail: format!("smallest log margin {worst_bound:.3e}"),
        });
        out.push(CheckOutcome {
            name: format!("quadrature self-consistency (D={dim})"),
            passed: worst_change < 1e-8,
            detail: format!("largest change under panel doubling {worst_change:.3e}"),
        });
        let limit = log_marginal_h(&OracleQuery {
            rho: 0.3,
            kappa: 30.0,
            kappa_plus: 10.0,
            kappa_pos: 1e-8,
            dim,
        })?;
        let uniform = log_vmf_norm_const(dim, 0.0)?;
        out.push(CheckOutcome {
            name: format!("kappa_pos -> 0 limit is C(0) (D={dim})"),
            passed: (limit - uniform).abs() < 1e-6,
            detail: format!("ln h = {limit:.12}, ln C(0) = {uniform:.12}"),
        });
    }
    Ok(out)
}
