//! Numerical integration.
//!
//! * Gauss–Legendre and Gauss–Hermite node generation (Newton iteration on the
//!   three-term recurrences).
//! * Adaptive Gauss–Kronrod (7/15) for one-dimensional integrals, with a
//!   centred rational map for integrals over the whole real line.
//! * [`QuadratureRule`]: normalized rules on the unit cube \[0,1\]ᵖ, either a
//!   tensor-product Gauss–Legendre grid or a scrambled Sobol point set.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on \[−1, 1\].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Hermite nodes and weights for ∫ e^{−t²} g(t) dt.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Gauss–Hermite rule rescaled to expectations under N(0, 1):
/// E g(Z) ≈ Σ wᵢ g(zᵢ).
#[derive(Debug, Clone)]
pub struct NormalExpectation {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl NormalExpectation {
    pub fn new(n: usize) -> Self {
        let (t, w) = gauss_hermite(n);
        let s = PI.sqrt();
        Self {
            nodes: t.iter().map(|t| t * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|w| w / s).collect(),
        }
    }

    /// E g(mean + sd·Z) for Z standard normal.
    pub fn expect(&self, mean: f64, sd: f64, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * g(mean + sd * z))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub initial_intervals: usize,
    pub max_intervals: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            initial_intervals: 8,
            max_intervals: 4000,
        }
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Globally adaptive Gauss–Kronrod integration of `f` over \[a, b\].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, opts: AdaptiveOptions) -> Integral {
    let n0 = opts.initial_intervals.max(1);
    let width = (b - a) / n0 as f64;
    let mut parts: Vec<(f64, f64, f64, f64)> = (0..n0)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == n0 { b } else { lo + width };
            let (v, e) = gk15(&f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    loop {
        let value: f64 = parts.iter().map(|p| p.2).sum();
        let error: f64 = parts.iter().map(|p| p.3).sum();
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) || parts.len() >= opts.max_intervals {
            return Integral {
                value,
                error,
                intervals: parts.len(),
            };
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval cannot be split further in floating point.
            let (v, _) = gk15(&f, lo, hi);
            parts.push((lo, hi, v, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// ∫_ℝ f(x) dx through x = center + scale·u/(1 − u²), u ∈ (−1, 1).
///
/// `center` and `scale` should roughly locate the bulk of the integrand; the
/// map then puts most Kronrod nodes where the mass is.
pub fn integrate_real_line(f: impl Fn(f64) -> f64, center: f64, scale: f64, opts: AdaptiveOptions) -> Integral {
    let g = |u: f64| {
        let d = 1.0 - u * u;
        if d <= 0.0 {
            return 0.0;
        }
        let x = center + scale * u / d;
        let jac = scale * (1.0 + u * u) / (d * d);
        let v = f(x) * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, -1.0, 1.0, opts)
}

/// How to build a rule on \[0,1\]ᵖ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadratureSpec {
    /// 64 nodes per axis for p ≤ 2, 32 for p = 3, 2¹⁶ Sobol points beyond.
    Auto,
    GaussLegendre { nodes_per_axis: usize },
    Sobol { points: usize },
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::Auto
    }
}

impl QuadratureSpec {
    pub fn build(&self, p: usize) -> Result<QuadratureRule> {
        match *self {
            QuadratureSpec::Auto => QuadratureRule::default_for(p),
            QuadratureSpec::GaussLegendre { nodes_per_axis } => QuadratureRule::gauss_legendre(p, nodes_per_axis),
            QuadratureSpec::Sobol { points } => QuadratureRule::sobol(p, points, 0),
        }
    }
}

/// Kind of a built [`QuadratureRule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    TensorGaussLegendre { nodes_per_axis: usize },
    Sobol { points: usize },
}

/// A normalized cubature rule on the unit cube: weights sum to one.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    kind: RuleKind,
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Tensor-product Gauss–Legendre rule; only offered for p ≤ 3.
    pub fn gauss_legendre(p: usize, nodes_per_axis: usize) -> Result<Self> {
        if p == 0 || p > 3 {
            return Err(Error::InvalidArgument(format!(
                "tensor Gauss-Legendre rule supports 1 <= p <= 3, got p = {p}"
            )));
        }
        if nodes_per_axis == 0 {
            return Err(Error::InvalidArgument("nodes_per_axis must be positive".into()));
        }
        let (x, w) = gauss_legendre(nodes_per_axis);
        let x: Vec<f64> = x.iter().map(|t| 0.5 * (t + 1.0)).collect();
        let w: Vec<f64> = w.iter().map(|w| 0.5 * w).collect();
        let count = nodes_per_axis.pow(p as u32);
        let mut points = Vec::with_capacity(count * p);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; p];
        for _ in 0..count {
            let mut wt = 1.0;
            for &i in &idx {
                points.push(x[i]);
                wt *= w[i];
            }
            weights.push(wt);
            for d in (0..p).rev() {
                idx[d] += 1;
                if idx[d] < nodes_per_axis {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            kind: RuleKind::TensorGaussLegendre { nodes_per_axis },
            dim: p,
            points,
            weights,
        })
    }

    /// Owen-scrambled Sobol points with equal weights (at most 2¹⁶ points).
    pub fn sobol(p: usize, count: usize, seed: u32) -> Result<Self> {
        if p == 0 || p as u32 > sobol_burley::NUM_DIMENSIONS {
            return Err(Error::InvalidArgument(format!("unsupported Sobol dimension {p}")));
        }
        if count == 0 || count > 1 << 16 {
            return Err(Error::InvalidArgument(format!(
                "Sobol point count must be in 1..=65536, got {count}"
            )));
        }
        let mut points = Vec::with_capacity(count * p);
        for i in 0..count {
            for d in 0..p {
                // Shift by half an f32 ulp so no coordinate sits exactly on 0.
                let u = sobol_burley::sample(i as u32, d as u32, seed) as f64 + 2f64.powi(-25);
                points.push(u);
            }
        }
        Ok(Self {
            kind: RuleKind::Sobol { points: count },
            dim: p,
            points,
            weights: vec![1.0 / count as f64; count],
        })
    }

    /// The default rule for dimension `p`.
    pub fn default_for(p: usize) -> Result<Self> {
        match p {
            0 => Err(Error::InvalidArgument("p must be positive".into())),
            1 | 2 => Self::gauss_legendre(p, 64),
            3 => Self::gauss_legendre(p, 32),
            _ => Self::sobol(p, 1 << 16, 0),
        }
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    /// Σ wᵢ f(xᵢ) ≈ ∫_{[0,1]ᵖ} f.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}
