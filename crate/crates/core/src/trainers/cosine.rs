//! Small analytic problems for checking that the expected Fish update
//! follows the gradient of the inter-domain gradient inner product.

use serde::{Deserialize, Serialize};

use super::TrainError;

const MAX_TOY_PARAMS: usize = 20;
const MAX_TOY_DOMAINS: usize = 6;
const FD_STEP: f64 = 1e-6;

/// A multi-domain objective with exact full-batch gradients.
pub trait ToyProblem {
    fn dim(&self) -> usize;
    fn domains(&self) -> usize;
    /// The point θ at which the experiment is run.
    fn theta(&self) -> Vec<f64>;
    fn loss(&self, domain: usize, theta: &[f64]) -> f64;
    fn grad(&self, domain: usize, theta: &[f64]) -> Vec<f64>;
}

/// Lᵢ(θ) = ½ Σₖ dᵢₖ (θₖ − mᵢₖ)².
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticToy {
    pub curvature: Vec<Vec<f64>>,
    pub centers: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
}

impl QuadraticToy {
    /// Two identical isotropic domains.
    pub fn twin() -> Self {
        Self {
            curvature: vec![vec![1.5; 4]; 2],
            centers: vec![vec![1.0, -2.0, 0.5, 3.0]; 2],
            theta: vec![0.0; 4],
        }
    }

    /// Two domains with different curvature and optimum.
    pub fn distinct() -> Self {
        Self {
            curvature: vec![vec![1.0, 2.0, 0.5, 3.0], vec![2.5, 0.7, 1.2, 0.4]],
            centers: vec![vec![1.0, -1.0, 0.5, 2.0], vec![-0.5, 1.5, 1.0, -1.0]],
            theta: vec![0.3, 0.2, -0.4, 0.1],
        }
    }
}

impl ToyProblem for QuadraticToy {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn domains(&self) -> usize {
        self.centers.len()
    }

    fn theta(&self) -> Vec<f64> {
        self.theta.clone()
    }

    fn loss(&self, domain: usize, theta: &[f64]) -> f64 {
        let (d, m) = (&self.curvature[domain], &self.centers[domain]);
        0.5 * theta.iter().zip(d).zip(m).map(|((t, d), m)| d * (t - m) * (t - m)).sum::<f64>()
    }

    fn grad(&self, domain: usize, theta: &[f64]) -> Vec<f64> {
        let (d, m) = (&self.curvature[domain], &self.centers[domain]);
        theta.iter().zip(d).zip(m).map(|((t, d), m)| d * (t - m)).collect()
    }
}

/// Logistic regression with a bias; domain i holds labelled points
/// (x, y ∈ {−1, 1}) and Lᵢ is the mean of softplus(−y(w·x + b)).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticToy {
    pub points: Vec<Vec<(Vec<f64>, f64)>>,
    pub theta: Vec<f64>,
}

impl LogisticToy {
    /// Two domains, four features plus a bias.
    pub fn builtin() -> Self {
        Self {
            points: vec![
                vec![
                    (vec![1.0, 0.5, -0.3, 0.8], 1.0),
                    (vec![-0.4, 1.2, 0.7, -0.5], -1.0),
                    (vec![0.3, -0.9, 1.1, 0.2], 1.0),
                ],
                vec![
                    (vec![0.9, -0.2, 0.4, -1.0], 1.0),
                    (vec![-1.1, 0.3, -0.6, 0.9], -1.0),
                    (vec![0.2, 0.8, -1.3, 0.5], -1.0),
                ],
            ],
            theta: vec![0.2, -0.1, 0.3, 0.05, -0.15],
        }
    }

    fn margin(theta: &[f64], x: &[f64], y: f64) -> f64 {
        let (w, b) = theta.split_at(x.len());
        y * (w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b[0])
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ToyProblem for LogisticToy {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn domains(&self) -> usize {
        self.points.len()
    }

    fn theta(&self) -> Vec<f64> {
        self.theta.clone()
    }

    fn loss(&self, domain: usize, theta: &[f64]) -> f64 {
        let pts = &self.points[domain];
        pts.iter().map(|(x, y)| softplus(-Self::margin(theta, x, *y))).sum::<f64>() / pts.len() as f64
    }

    fn grad(&self, domain: usize, theta: &[f64]) -> Vec<f64> {
        let pts = &self.points[domain];
        let mut g = vec![0.0; theta.len()];
        for (x, y) in pts {
            let coeff = -y * sigmoid(-Self::margin(theta, x, *y)) / pts.len() as f64;
            for (gk, xk) in g.iter_mut().zip(x.iter().chain([1.0].iter())) {
                *gk += coeff * xk;
            }
        }
        g
    }
}

/// Every domain loss of `inner` multiplied by `scale`.
pub struct ScaledToy<T> {
    pub inner: T,
    pub scale: f64,
}

impl<T: ToyProblem> ToyProblem for ScaledToy<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn domains(&self) -> usize {
        self.inner.domains()
    }

    fn theta(&self) -> Vec<f64> {
        self.inner.theta()
    }

    fn loss(&self, domain: usize, theta: &[f64]) -> f64 {
        self.scale * self.inner.loss(domain, theta)
    }

    fn grad(&self, domain: usize, theta: &[f64]) -> Vec<f64> {
        self.inner.grad(domain, theta).into_iter().map(|g| self.scale * g).collect()
    }
}

pub const BUILTIN_TOYS: [&str; 3] = ["twin-quadratic", "quadratic", "logistic"];

pub fn builtin_toy(id: &str) -> Option<Box<dyn ToyProblem>> {
    match id {
        "twin-quadratic" => Some(Box::new(QuadraticToy::twin())),
        "quadratic" => Some(Box::new(QuadraticToy::distinct())),
        "logistic" => Some(Box::new(LogisticToy::builtin())),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosinePoint {
    pub alpha: f64,
    pub cosine: f64,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

fn gip_hat(toy: &dyn ToyProblem, theta: &[f64]) -> f64 {
    let mut total = vec![0.0; theta.len()];
    let mut self_sq = 0.0;
    for d in 0..toy.domains() {
        let g = toy.grad(d, theta);
        self_sq += g.iter().map(|v| v * v).sum::<f64>();
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    total.iter().map(|v| v * v).sum::<f64>() - self_sq
}

/// −∇Ĝ at θ by central differences with step 1e-6.
fn descent_direction_of_gip(toy: &dyn ToyProblem, theta: &[f64]) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[k] += FD_STEP;
            minus[k] -= FD_STEP;
            -(gip_hat(toy, &plus) - gip_hat(toy, &minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// For each α: G_f = E[θ − θ̃] − αS·Ḡ, with the expectation taken exactly
/// over every domain order of a full-batch inner loop, against
/// G_g = −∇Ĝ from central differences. Returns cos(G_f, G_g) per α.
pub fn cosine_convergence_experiment(toy: &dyn ToyProblem, alphas: &[f64]) -> Result<Vec<CosinePoint>, TrainError> {
    let (dim, s) = (toy.dim(), toy.domains());
    if dim == 0 || dim > MAX_TOY_PARAMS {
        return Err(TrainError::Degenerate(format!("toy has {dim} parameters (allowed 1..={MAX_TOY_PARAMS})")));
    }
    if !(2..=MAX_TOY_DOMAINS).contains(&s) {
        return Err(TrainError::Degenerate(format!("toy has {s} domains (allowed 2..={MAX_TOY_DOMAINS})")));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(TrainError::InvalidConfig(format!("step sizes must be positive, got {a}")));
    }
    let theta = toy.theta();
    let grads: Vec<Vec<f64>> = (0..s).map(|d| toy.grad(d, &theta)).collect();
    if grads.iter().all(|g| norm(g) == 0.0) {
        return Err(TrainError::Degenerate("all domain gradients vanish".into()));
    }
    let mean: Vec<f64> = (0..dim).map(|k| grads.iter().map(|g| g[k]).sum::<f64>() / s as f64).collect();
    let g_g = descent_direction_of_gip(toy, &theta);
    let g_g_norm = norm(&g_g);
    if g_g_norm == 0.0 || !g_g_norm.is_finite() {
        return Err(TrainError::Degenerate("gradient inner product is flat at θ".into()));
    }

    let orders = permutations(s);
    alphas
        .iter()
        .map(|&alpha| {
            // track θ̃ − θ directly so the O(α²) signal is not lost to
            // rounding against the magnitude of θ
            let mut displacement = vec![0.0; dim];
            for order in &orders {
                let mut delta = vec![0.0; dim];
                for &d in order {
                    let at: Vec<f64> = theta.iter().zip(&delta).map(|(t, e)| t + e).collect();
                    for (e, gk) in delta.iter_mut().zip(toy.grad(d, &at)) {
                        *e -= alpha * gk;
                    }
                }
                for (acc, e) in displacement.iter_mut().zip(&delta) {
                    *acc -= e;
                }
            }
            let g_f: Vec<f64> = displacement
                .iter()
                .zip(&mean)
                .map(|(d, m)| d / orders.len() as f64 - alpha * s as f64 * m)
                .collect();
            let g_f_norm = norm(&g_f);
            if g_f_norm == 0.0 || !g_f_norm.is_finite() {
                return Err(TrainError::Degenerate(format!("expected Fish correction vanishes at α = {alpha}")));
            }
            let dot: f64 = g_f.iter().zip(&g_g).map(|(a, b)| a * b).sum();
            Ok(CosinePoint {
                alpha,
                cosine: dot / (g_f_norm * g_g_norm),
            })
        })
        .collect()
}
