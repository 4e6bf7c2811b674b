//! Gauss–Legendre and adaptive Gauss–Kronrod quadrature.

use std::sync::OnceLock;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on `P_n`, starting from the Tricomi estimate.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Cached 16-point rule.
    pub fn n16() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(16))
    }

    /// `∫_a^b f` with this rule.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Composite rule: `panels` equal sub-intervals of `[a, b]`. Calls
    /// `visit(x, weight)` for every node.
    pub fn for_each_composite(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut visit: impl FnMut(f64, f64),
    ) {
        let width = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + width * p as f64;
            let half = 0.5 * width;
            let mid = lo + half;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                visit(mid + half * x, w * half);
            }
        }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

// G7-K15 nodes and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<const N: usize>(f: &mut impl FnMut(f64) -> [f64; N], a: f64, b: f64) -> ([f64; N], f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    for c in 0..N {
        kron[c] = fc[c] * WGK[7];
        gauss[c] = fc[c] * WG[3];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(mid - dx);
        let f2 = f(mid + dx);
        for c in 0..N {
            kron[c] += WGK[j] * (f1[c] + f2[c]);
            if j % 2 == 1 {
                gauss[c] += WG[j / 2] * (f1[c] + f2[c]);
            }
        }
    }
    let mut err = 0.0_f64;
    for c in 0..N {
        kron[c] *= half;
        gauss[c] *= half;
        err = err.max((kron[c] - gauss[c]).abs());
    }
    (kron, err)
}

/// Adaptive G7-K15 integration of a vector-valued integrand over `[a, b]`.
///
/// Bisects until every panel's Gauss/Kronrod difference (max over
/// components) is below `max(abs_tol, rel_tol·|panel value|)` scaled by the
/// panel's share of the interval, or the depth or panel budget runs out.
pub fn integrate_adaptive<const N: usize>(
    mut f: impl FnMut(f64) -> [f64; N],
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> [f64; N] {
    const MAX_DEPTH: u32 = 40;
    const MAX_INTERVALS: usize = 100_000;
    let mut total = [0.0; N];
    let mut evaluated = 0;
    if a == b {
        return total;
    }
    let full = (b - a).abs();
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(&mut f, lo, hi);
        let scale = val.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let share = (hi - lo).abs() / full;
        let tol = (abs_tol * share).max(rel_tol * scale);
        evaluated += 1;
        if err <= tol || depth >= MAX_DEPTH || evaluated >= MAX_INTERVALS {
            for c in 0..N {
                total[c] += val[c];
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    total
}

/// Scalar convenience wrapper around [`integrate_adaptive`].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    integrate_adaptive(|x| [f(x)], a, b, abs_tol, rel_tol)[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        for n in [1, 2, 5, 16, 33] {
            let rule = GaussLegendre::new(n);
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13);
            // degree 2n-1 is integrated exactly
            let deg = 2 * n - 1;
            let got = rule.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert!((got - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn adaptive_handles_peaked_integrands() {
        let k = 1e4;
        let got = integrate(|x| (-k * x * x).exp(), -1.0, 1.0, 0.0, 1e-13);
        let exact = (std::f64::consts::PI / k).sqrt();
        assert!((got - exact).abs() < 1e-12 * exact);
        let v = integrate_adaptive(
            |x| [x.sin(), x.cos()],
            0.0,
            std::f64::consts::PI,
            1e-14,
            1e-14,
        );
        assert!((v[0] - 2.0).abs() < 1e-13);
        assert!(v[1].abs() < 1e-13);
    }
}
