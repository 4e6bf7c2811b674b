//! The von Mises–Fisher distribution on `S^{D-1}`.
//!
//! Sampling follows the Wood/Ulrich construction: draw the radial
//! coordinate `w = μᵀz` from its marginal law by envelope rejection, draw a
//! uniform tangent direction `v ∈ S^{D-2}`, assemble `(w, √(1-w²) v)` around
//! the north pole `e₁`, and reflect `e₁ → μ` with a Householder map.
//!
//! Reparametrized draws carry two gradient paths:
//! * `μ`: the Householder map is a differentiable function of `μ`;
//! * `κ`: `w` is differentiated implicitly through its CDF `F(w; κ)`,
//!   `dw/dκ = -(∂F/∂κ) / f(w)`, with `∂F/∂κ = ∫_{-1}^{w} (t - A_D(κ)) f(t) dt`.
//!   The tangent direction carries no parameter gradient.
//!
//! A draw's noise is recorded as `(F(w; κ), v)`, so re-evaluating it at a
//! perturbed `κ` (common random numbers) moves `w` along exactly the path the
//! implicit gradient describes.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quad::integrate_adaptive;
use crate::special::{ln_sphere_area, log_vmf_norm_const, mean_resultant_length};

/// Hard cap on rejection-loop iterations per draw.
pub const REJECTION_CAP: u64 = 1_000_000;

/// A point on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub const NORM_TOL: f64 = 1e-9;

    /// Wraps `coords`, which must already have unit norm (within 1e-9).
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if coords.is_empty() || !n.is_finite() || (n - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::Degenerate(format!("vector norm {n} is not 1")));
        }
        Ok(UnitVector(coords))
    }

    /// Projects `coords` onto the sphere.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if coords.is_empty() || !n.is_finite() || n == 0.0 {
            return Err(Error::Degenerate(format!(
                "cannot normalize a vector of norm {n}"
            )));
        }
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(UnitVector(coords))
    }

    /// The `i`-th standard basis vector of `R^dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        UnitVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Location and concentration of a vMF. `kappa = +inf` tags a Dirac posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mu: UnitVector,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mu: UnitVector, kappa: f64) -> Result<Self> {
        if kappa.is_nan() || kappa <= 0.0 {
            return Err(Error::domain(format!("kappa must be > 0, got {kappa}")));
        }
        if mu.dim() < 2 {
            return Err(Error::domain("vMF needs dimension >= 2"));
        }
        Ok(VmfParams { mu, kappa })
    }

    pub fn dirac(mu: UnitVector) -> Self {
        VmfParams {
            mu,
            kappa: f64::INFINITY,
        }
    }

    pub fn is_dirac(&self) -> bool {
        self.kappa.is_infinite()
    }

    pub fn mu(&self) -> &UnitVector {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }
}

/// `ln C_D(κ) + κ μᵀz`.
pub fn vmf_logpdf(params: &VmfParams, z: &UnitVector) -> Result<f64> {
    if z.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: z.dim(),
        });
    }
    if params.is_dirac() {
        return Err(Error::Dirac("vmf_logpdf"));
    }
    Ok(log_vmf_norm_const(params.dim(), params.kappa)? + params.kappa * params.mu.dot(z))
}

/// Exact draw from `params`. A Dirac posterior returns `μ` unchanged.
pub fn vmf_sample<R: Rng + ?Sized>(params: &VmfParams, rng: &mut R) -> Result<UnitVector> {
    if params.is_dirac() {
        return Ok(params.mu.clone());
    }
    let dim = params.dim();
    let w = sample_radial(dim, params.kappa, rng)?;
    let v = sample_tangent(dim, rng);
    let mut z = vec![0.0; dim];
    householder_to(params.mu.as_slice(), &local_point(w, &v), &mut z);
    Ok(UnitVector(z))
}

/// Draw `w = μᵀz` for a vMF on `S^{dim-1}` by Wood's envelope rejection.
pub fn sample_radial<R: Rng + ?Sized>(dim: usize, kappa: f64, rng: &mut R) -> Result<f64> {
    if dim < 2 || kappa.is_nan() || kappa < 0.0 {
        return Err(Error::domain(format!(
            "radial law needs dim >= 2, kappa >= 0 (got {dim}, {kappa})"
        )));
    }
    if kappa.is_infinite() {
        return Ok(1.0);
    }
    let m1 = (dim - 1) as f64;
    let beta = Beta::new(0.5 * m1, 0.5 * m1).map_err(|e| Error::domain(e.to_string()))?;
    // b = (-2κ + √(4κ² + m1²)) / m1, written without cancellation.
    let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
    if b == 0.0 {
        return Ok(1.0);
    }
    let x0 = (1.0 - b) / (1.0 + b);
    // Differences from x0 and 1 are formed directly from b and e; for large
    // κ the naive forms round x0 to 1 and the test turns into NaN.
    let one_minus_x0 = 2.0 * b / (1.0 + b);
    let log_c = (one_minus_x0 * 2.0 / (1.0 + b)).ln();
    for _ in 0..REJECTION_CAP {
        let e: f64 = beta.sample(rng);
        let den = 1.0 - (1.0 - b) * e;
        let w = (1.0 - (1.0 + b) * e) / den;
        let one_minus_w = 2.0 * b * e / den;
        let one_minus_x0w = one_minus_x0 + x0 * one_minus_w;
        let u: f64 = rng.random();
        let t = kappa * (one_minus_x0 - one_minus_w) + m1 * (one_minus_x0w.ln() - log_c);
        if t >= u.ln() {
            return Ok(w.clamp(-1.0, 1.0));
        }
    }
    Err(Error::RejectionCap(REJECTION_CAP))
}

/// Uniform direction on `S^{dim-2}`, as a vector of length `dim - 1`.
pub fn sample_tangent<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim - 1).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-300 {
            v.iter_mut().for_each(|c| *c /= n);
            return v;
        }
    }
}

/// `(w, √(1-w²) v)` in coordinates around the north pole.
pub fn local_point(w: f64, tangent: &[f64]) -> Vec<f64> {
    let r = ((1.0 - w) * (1.0 + w)).max(0.0).sqrt();
    let mut y = Vec::with_capacity(tangent.len() + 1);
    y.push(w);
    y.extend(tangent.iter().map(|v| r * v));
    y
}

/// Sign `σ` of the reflection pole `σ e₁`. Choosing the pole on the far
/// side of `μ` keeps `‖σe₁ - μ‖² ≥ 2`, so the map is well conditioned.
fn pole_sign(mu: &[f64]) -> f64 {
    if mu[0] >= 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Maps north-pole coordinates `y` onto the sphere around `μ`.
///
/// With `σ` the pole sign, `u = σe₁ - μ` and `H = I - 2uuᵀ/uᵀu`, returns
/// `H (σy₀, y₁, …)`. Since `Hμ = σe₁`, the output has `μᵀz = y₀`.
pub fn householder_to(mu: &[f64], y: &[f64], out: &mut [f64]) {
    let sigma = pole_sign(mu);
    let uu = householder_uu(mu, sigma);
    let y0 = sigma * y[0];
    let uy = sigma * y0 - mu[0] * y0 - dot(&mu[1..], &y[1..]);
    let s = 2.0 * uy / uu;
    out[0] = y0 - s * (sigma - mu[0]);
    for i in 1..y.len() {
        out[i] = y[i] + s * mu[i];
    }
}

fn householder_uu(mu: &[f64], sigma: f64) -> f64 {
    let d0 = sigma - mu[0];
    d0 * d0 + mu[1..].iter().map(|m| m * m).sum::<f64>()
}

/// Vector-Jacobian product of `z = H(μ) y` with respect to `μ` (for fixed `y`).
///
/// With `u = σe₁ - μ`, `s = uᵀu`, `y' = (σy₀, y₁, …)` and `p = uᵀy'`:
/// `∂L/∂u = -2[(gᵀu) y' + p g]/s + 4 p (gᵀu) u / s²` and `∂L/∂μ = -∂L/∂u`.
pub fn householder_vjp_mu(mu: &[f64], y: &[f64], grad_z: &[f64], out: &mut [f64]) {
    let sigma = pole_sign(mu);
    let s = householder_uu(mu, sigma);
    let u = |i: usize| if i == 0 { sigma - mu[0] } else { -mu[i] };
    let yp = |i: usize| if i == 0 { sigma * y[0] } else { y[i] };
    let p: f64 = (0..y.len()).map(|i| u(i) * yp(i)).sum();
    let gu: f64 = (0..y.len()).map(|i| u(i) * grad_z[i]).sum();
    for i in 0..y.len() {
        let du = -2.0 * (gu * yp(i) + p * grad_z[i]) / s + 4.0 * p * gu * u(i) / (s * s);
        out[i] = -du;
    }
}

/// Law of the scalar projection `t = μᵀz` under `vMF(μ, κ)` on `S^{D-1}`:
/// density `∝ (1 - t²)^{(D-3)/2} e^{κt}` on `[-1, 1]`.
///
/// Integrals are carried out in the angle `θ = arccos t`, where the density
/// becomes `g(θ) ∝ sin^{D-2}θ · e^{κ(cos θ - 1)}` and is smooth for every `D ≥ 2`.
#[derive(Debug, Clone, Copy)]
pub struct RadialLaw {
    dim: usize,
    kappa: f64,
    /// `ln C_D(κ) + ln |S^{D-2}| + κ`: normalizer of `g`.
    log_norm: f64,
    mean: f64,
    /// Angular scale of the mode, `1/√κ` (capped at π).
    scale: f64,
}

impl RadialLaw {
    pub fn new(dim: usize, kappa: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(format!(
                "radial law needs dim >= 2, got {dim}"
            )));
        }
        if kappa.is_nan() || kappa < 0.0 || kappa.is_infinite() {
            return Err(Error::domain(format!(
                "radial law needs finite kappa >= 0, got {kappa}"
            )));
        }
        let log_norm = log_vmf_norm_const(dim, kappa)? + ln_sphere_area(dim as u32 - 2) + kappa;
        Ok(RadialLaw {
            dim,
            kappa,
            log_norm,
            mean: mean_resultant_length(dim, kappa)?,
            scale: (1.0 / kappa.sqrt()).min(std::f64::consts::PI),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `E[t] = A_D(κ)`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    fn check_t(t: f64) -> Result<()> {
        if !(-1.0..=1.0).contains(&t) {
            return Err(Error::domain(format!("t must lie in [-1, 1], got {t}")));
        }
        Ok(())
    }

    /// Density of `t` on `[-1, 1]` (infinite at the endpoints when `D = 2`).
    pub fn pdf(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.log_pdf_unchecked(t).exp())
    }

    fn log_pdf_unchecked(&self, t: f64) -> f64 {
        let one_minus_t2 = (1.0 - t) * (1.0 + t);
        let shape = if self.dim == 3 {
            0.0
        } else {
            0.5 * (self.dim as f64 - 3.0) * one_minus_t2.ln()
        };
        self.log_norm + shape + self.kappa * (t - 1.0)
    }

    /// Angular integrand `g(θ)`.
    fn angular(&self, theta: f64) -> f64 {
        let shape = if self.dim == 2 {
            0.0
        } else {
            (self.dim as f64 - 2.0) * theta.sin().ln()
        };
        // cos θ - 1 as -2 sin²(θ/2): the direct difference cancels, and at
        // large κ the lost digits become noise the integrator cannot resolve.
        let half = (0.5 * theta).sin();
        (self.log_norm + shape - 2.0 * self.kappa * half * half).exp()
    }

    /// `[∫ g, ∫ (cos θ - A) g]` over `[lo, hi] ⊂ [0, π]`, with breakpoints at
    /// geometric multiples of the mode scale so the peak is always resolved.
    fn angular_integrals(&self, lo: f64, hi: f64) -> [f64; 2] {
        let mut total = [0.0; 2];
        if hi <= lo {
            return total;
        }
        let mut a = lo;
        let mut edge = self.scale;
        while a < hi {
            while edge <= a {
                edge *= 2.0;
            }
            let b = edge.min(hi);
            let part = integrate_adaptive(
                |th| {
                    let g = self.angular(th);
                    [g, (th.cos() - self.mean) * g]
                },
                a,
                b,
                1e-17,
                1e-13,
            );
            total[0] += part[0];
            total[1] += part[1];
            a = b;
        }
        total
    }

    /// Returns `(F(t), ∂F/∂κ(t))`, integrating over whichever tail is lighter.
    fn cdf_and_kappa_derivative(&self, t: f64) -> (f64, f64) {
        if t <= -1.0 {
            return (0.0, 0.0);
        }
        if t >= 1.0 {
            return (1.0, 0.0);
        }
        if self.dim == 3 && self.kappa > D3_CLOSED_FORM_MIN_KAPPA {
            return d3_cdf_and_kappa_derivative(self.kappa, t);
        }
        let theta = t.acos();
        if t >= self.mean {
            let [upper, upper_centered] = self.angular_integrals(0.0, theta);
            ((1.0 - upper).clamp(0.0, 1.0), -upper_centered)
        } else {
            let [lower, lower_centered] = self.angular_integrals(theta, std::f64::consts::PI);
            (lower.clamp(0.0, 1.0), lower_centered)
        }
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.cdf_and_kappa_derivative(t).0)
    }

    /// `∂F(t; κ)/∂κ` at fixed `t`.
    pub fn cdf_kappa_derivative(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.cdf_and_kappa_derivative(t).1)
    }

    /// Inverse CDF by safeguarded Newton–bisection.
    ///
    /// The bracket is shrunk until it is narrower than 1e-9; Newton steps
    /// then polish the root to the limit of the CDF's accuracy.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!(
                "probability must lie in [0, 1], got {p}"
            )));
        }
        if p == 0.0 {
            return Ok(-1.0);
        }
        if p == 1.0 {
            return Ok(1.0);
        }
        if self.dim == 3 && self.kappa > D3_CLOSED_FORM_MIN_KAPPA {
            return Ok(d3_quantile(self.kappa, p));
        }
        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        let mut t = self.mean.clamp(-0.999, 0.999);
        for _ in 0..200 {
            let f = self.cdf_and_kappa_derivative(t).0 - p;
            if f == 0.0 {
                return Ok(t);
            }
            if f < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let dens = self.log_pdf_unchecked(t).exp();
            let newton = t - f / dens;
            let next = if dens.is_finite() && dens > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - t).abs();
            t = next;
            if step < 1e-15 || hi - lo < 1e-15 {
                break;
            }
        }
        Ok(t)
    }

    /// `dw/dκ = -(∂F/∂κ)/f(w)` at `w`, together with the level `F(w)`.
    pub fn implicit_derivative(&self, w: f64) -> Result<(f64, f64)> {
        Self::check_t(w)?;
        let (level, dfdk) = self.cdf_and_kappa_derivative(w);
        let dens = self.log_pdf_unchecked(w).exp();
        if dens.is_nan() || dens <= 0.0 || dens.is_infinite() {
            return Ok((level, 0.0));
        }
        Ok((level, -dfdk / dens))
    }
}

const D3_CLOSED_FORM_MIN_KAPPA: f64 = 1e-6;

// On S², F(t) = 1 - S(t) with S(t) = (1 - e^{κ(t-1)}) / (1 - e^{-2κ}).
fn d3_cdf_and_kappa_derivative(kappa: f64, t: f64) -> (f64, f64) {
    let n = (kappa * (t - 1.0)).exp_m1();
    let d = (-2.0 * kappa).exp_m1();
    let s = n / d;
    let dn = (t - 1.0) * (kappa * (t - 1.0)).exp();
    let dd = -2.0 * (-2.0 * kappa).exp();
    let ds = (dn * d - n * dd) / (d * d);
    ((1.0 - s).clamp(0.0, 1.0), -ds)
}

fn d3_quantile(kappa: f64, p: f64) -> f64 {
    let t = if p < 0.5 {
        1.0 + (p + (1.0 - p) * (-2.0 * kappa).exp()).ln() / kappa
    } else {
        1.0 + ((1.0 - p) * (-2.0 * kappa).exp_m1()).ln_1p() / kappa
    };
    t.clamp(-1.0, 1.0)
}

/// One reparametrized draw around the north pole.
#[derive(Debug, Clone)]
pub struct ReparamDraw {
    pub w: f64,
    /// CDF level `F(w; κ)`; NaN when the κ-path was not requested.
    pub level: f64,
    pub dw_dkappa: f64,
    pub tangent: Vec<f64>,
}

impl ReparamDraw {
    /// Fresh draw (Wood sampler). When `with_kappa_path` is false, the
    /// (comparatively expensive) implicit derivative is skipped.
    pub fn sample<R: Rng + ?Sized>(
        law: &RadialLaw,
        with_kappa_path: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = sample_radial(law.dim, law.kappa, rng)?;
        let tangent = sample_tangent(law.dim, rng);
        let (level, dw_dkappa) = if with_kappa_path {
            law.implicit_derivative(w)?
        } else {
            (f64::NAN, 0.0)
        };
        Ok(ReparamDraw {
            w,
            level,
            dw_dkappa,
            tangent,
        })
    }

    /// Re-evaluates recorded noise `(level, tangent)` under `law`.
    pub fn replay(law: &RadialLaw, level: f64, tangent: Vec<f64>) -> Result<Self> {
        let w = law.quantile(level)?;
        let (_, dw_dkappa) = law.implicit_derivative(w)?;
        Ok(ReparamDraw {
            w,
            level,
            dw_dkappa,
            tangent,
        })
    }

    /// Local (north-pole) coordinates `y = (w, √(1-w²) v)`.
    pub fn local(&self) -> Vec<f64> {
        local_point(self.w, &self.tangent)
    }

    /// `∂y/∂w`.
    pub fn local_dw(&self) -> Vec<f64> {
        let r = ((1.0 - self.w) * (1.0 + self.w)).max(0.0).sqrt();
        let mut d = Vec::with_capacity(self.tangent.len() + 1);
        d.push(1.0);
        let factor = if r > 0.0 { -self.w / r } else { 0.0 };
        d.extend(self.tangent.iter().map(|v| factor * v));
        d
    }
}

/// Reparametrized draw `z = H(μ)(w, √(1-w²)v)` from `vMF(μ, κ)`, plain-value
/// version of the tape operation in [`crate::losses`].
pub fn vmf_sample_reparam<R: Rng + ?Sized>(
    params: &VmfParams,
    rng: &mut R,
) -> Result<(UnitVector, ReparamDraw)> {
    if params.is_dirac() {
        return Err(Error::Dirac("vmf_sample_reparam"));
    }
    let law = RadialLaw::new(params.dim(), params.kappa)?;
    let draw = ReparamDraw::sample(&law, true, rng)?;
    let mut z = vec![0.0; params.dim()];
    householder_to(params.mu.as_slice(), &draw.local(), &mut z);
    Ok((UnitVector(z), draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn d3_cdf(k: f64, t: f64) -> f64 {
        ((k * (t - 1.0)).exp() - (-2.0 * k).exp()) / (1.0 - (-2.0 * k).exp())
    }

    #[test]
    fn radial_sampler_survives_extreme_kappa() {
        let mut rng = stream(3, "radial-extreme");
        for &(dim, k) in &[(3usize, 1e12), (10, 1e17), (10, 1e30), (4, 1e300)] {
            let n = 2000;
            let mut mean_gap = 0.0;
            for _ in 0..n {
                let w = sample_radial(dim, k, &mut rng).unwrap();
                assert!((-1.0..=1.0).contains(&w));
                mean_gap += (1.0 - w) / n as f64;
            }
            // E[1 - w] ≈ (D - 1) / (2κ) for large κ; beyond 1e15 the gap is below f64 resolution.
            if k < 1e15 {
                let want = (dim - 1) as f64 / (2.0 * k);
                assert!(
                    (mean_gap / want - 1.0).abs() < 0.1,
                    "dim {dim} kappa {k}: {mean_gap} vs {want}"
                );
            }
        }
    }

    #[test]
    fn unit_vector_invariant() {
        assert!(UnitVector::new(vec![1.0, 1e-10]).is_ok());
        assert!(UnitVector::new(vec![1.0, 1e-4]).is_err());
        assert!(UnitVector::normalize(vec![0.0, 0.0]).is_err());
        let u = UnitVector::normalize(vec![3.0, 4.0]).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn logpdf_values() {
        let mu = UnitVector::basis(3, 0);
        let p = VmfParams::new(mu.clone(), 1.0).unwrap();
        let v = vmf_logpdf(&p, &mu).unwrap();
        assert!((v + 1.6925).abs() < 1e-4);
        let tiny = VmfParams::new(mu.clone(), 1e-12).unwrap();
        let z = UnitVector::normalize(vec![0.3, -0.2, 0.9]).unwrap();
        let u = vmf_logpdf(&tiny, &z).unwrap();
        assert!((u - (1.0 / (4.0 * std::f64::consts::PI)).ln()).abs() < 1e-10);
        assert!(matches!(
            vmf_logpdf(&p, &UnitVector::basis(4, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(VmfParams::new(mu, 0.0).is_err());
    }

    #[test]
    fn householder_maps_pole_to_mu() {
        let mu = UnitVector::normalize(vec![0.2, -0.5, 0.7, 0.1]).unwrap();
        let mut out = vec![0.0; 4];
        householder_to(mu.as_slice(), &[1.0, 0.0, 0.0, 0.0], &mut out);
        for (a, b) in out.iter().zip(mu.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        for mu in [
            vec![1.0, 0.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ] {
            let y = local_point(0.3, &[0.0, 0.6, 0.8]);
            householder_to(&mu, &y, &mut out);
            assert!((dot(&out, &mu) - 0.3).abs() < 1e-15);
            assert!((norm(&out) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn householder_mu_gradient_matches_finite_differences() {
        for mu in [
            vec![0.3, -0.4, 0.5, 0.2],
            vec![-0.3, -0.4, 0.5, 0.2],
            vec![0.999, 0.01, 0.0, 0.0],
        ] {
            let y = local_point(0.6, &[0.6, 0.0, 0.8]);
            let c = [0.7, -1.1, 0.4, 2.0];
            let mut g = vec![0.0; 4];
            householder_vjp_mu(&mu, &y, &c, &mut g);
            let f = |m: &[f64]| {
                let mut z = vec![0.0; 4];
                householder_to(m, &y, &mut z);
                dot(&z, &c)
            };
            let h = 1e-6;
            for i in 0..4 {
                let mut p = mu.clone();
                let mut q = mu.clone();
                p[i] += h;
                q[i] -= h;
                let fd = (f(&p) - f(&q)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "i={i} fd={fd} g={}", g[i]);
            }
        }
    }

    #[test]
    fn radial_cdf_endpoints_and_d3_closed_form() {
        for (dim, k) in [(2, 0.0), (3, 2.0), (5, 8.0), (10, 20.0), (64, 300.0)] {
            let law = RadialLaw::new(dim, k).unwrap();
            assert_eq!(law.cdf(-1.0).unwrap(), 0.0);
            assert_eq!(law.cdf(1.0).unwrap(), 1.0);
        }
        let law = RadialLaw::new(3, 2.0).unwrap();
        for i in 1..40 {
            let t = -1.0 + 2.0 * i as f64 / 40.0;
            assert!((law.cdf(t).unwrap() - d3_cdf(2.0, t)).abs() < 1e-12);
        }
        let median = (2.0f64.cosh()).ln() / 2.0;
        assert!((law.quantile(0.5).unwrap() - median).abs() < 1e-9);
        assert!(law.pdf(1.5).is_err());
        assert!(law.quantile(1.5).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for (dim, k) in [(2, 3.0), (3, 2.0), (5, 8.0), (10, 20.0), (33, 500.0)] {
            let law = RadialLaw::new(dim, k).unwrap();
            for i in 1..50 {
                let t = -1.0 + 2.0 * i as f64 / 50.0;
                let p = law.cdf(t).unwrap();
                if p <= 1e-300 || p >= 1.0 - 1e-15 {
                    continue;
                }
                let back = law.quantile(p).unwrap();
                // Where the CDF is numerically flat the inverse is not identifiable.
                if law.pdf(t).unwrap() > 1e-6 {
                    assert!((back - t).abs() < 1e-8, "dim={dim} k={k} t={t} back={back}");
                }
            }
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        for (dim, k) in [(3, 0.5), (4, 10.0), (10, 20.0), (17, 1000.0)] {
            let law = RadialLaw::new(dim, k).unwrap();
            let [mass, centered] = law.angular_integrals(0.0, std::f64::consts::PI);
            assert!((mass - 1.0).abs() < 1e-10, "dim={dim} k={k} mass={mass}");
            assert!(centered.abs() < 1e-10);
        }
    }

    #[test]
    fn implicit_derivative_matches_d3_closed_form() {
        let k = 3.0;
        let law = RadialLaw::new(3, k).unwrap();
        for &w in &[-0.8, 0.0, 0.5, 0.9, 0.99] {
            let (level, dw) = law.implicit_derivative(w).unwrap();
            let h = 1e-5;
            // solve d3_cdf(k', w') = level for w' at k ± h
            let inv =
                |kk: f64| ((level * (1.0 - (-2.0 * kk).exp()) + (-2.0 * kk).exp()).ln() / kk) + 1.0;
            let fd = (inv(k + h) - inv(k - h)) / (2.0 * h);
            assert!(
                (dw - fd).abs() < 1e-7 * fd.abs().max(1e-3),
                "w={w} dw={dw} fd={fd}"
            );
        }
    }

    #[test]
    fn samples_are_unit_and_dirac_is_exact() {
        let mut rng = stream(1, "t");
        let mu = UnitVector::normalize(vec![1.0, 2.0, -2.0]).unwrap();
        for k in [1e-9, 0.5, 30.0, 1e6] {
            let p = VmfParams::new(mu.clone(), k).unwrap();
            for _ in 0..200 {
                let z = vmf_sample(&p, &mut rng).unwrap();
                assert!((norm(z.as_slice()) - 1.0).abs() < 1e-12);
            }
        }
        let d = VmfParams::dirac(mu.clone());
        assert_eq!(vmf_sample(&d, &mut rng).unwrap(), mu);
        assert!(matches!(
            vmf_sample_reparam(&d, &mut rng),
            Err(Error::Dirac(_))
        ));
    }

    #[test]
    fn seeded_samples_are_bit_identical() {
        let p = VmfParams::new(UnitVector::basis(6, 2), 7.5).unwrap();
        let a: Vec<UnitVector> = {
            let mut r = stream(99, "s");
            (0..50).map(|_| vmf_sample(&p, &mut r).unwrap()).collect()
        };
        let b: Vec<UnitVector> = {
            let mut r = stream(99, "s");
            (0..50).map(|_| vmf_sample(&p, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
