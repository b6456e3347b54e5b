//! Lagrangian decomposition dual.
//!
//! Every pre-activation is duplicated into `x̂_A` (produced by the linear
//! layer) and `x̂_B` (consumed by the activation hull). Dualizing
//! `x̂_A = x̂_B` with multipliers `ρ_k` gives a dual that splits into one
//! block over the input domain and one block per hidden layer:
//!
//! ```text
//! q(ρ) = min_{P0} -ρ_1ᵀx̂_{A,1} + Σ_k min_{Pk} ρ_kᵀx̂_{B,k} - ρ_{k+1}ᵀx̂_{A,k+1}
//! ```
//!
//! with `ρ_n = -1`. Any finite `ρ` gives a valid lower bound.

use crate::bounds::{classify, LayerBounds, NeuronClass};
use crate::error::{Error, Result};
use crate::hulls::{relu_hull_violation, relu_vertices, sigmoid_block_min, sigmoid_hull, SigmoidHull};
use crate::network::{dot, Activation, InputDomain, Network};
use crate::propagation::{propagation_bound, SlopeRule};

/// Multipliers `ρ_1 … ρ_{n-1}`; `ρ_n = -1` is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionDuals {
    pub rho: Vec<Vec<f64>>,
}

impl DecompositionDuals {
    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            rho: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }
}

/// Minimizers of the dual blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalIterates {
    pub x0: Vec<f64>,
    /// `x̂_{A,k}` for `k = 1 … n`.
    pub xhat_a: Vec<Vec<f64>>,
    /// `x̂_{B,k}` for hidden `k`.
    pub xhat_b: Vec<Vec<f64>>,
    /// `x_k` for hidden `k`.
    pub x: Vec<Vec<f64>>,
}

impl PrimalIterates {
    /// Copy mismatch `x̂_B - x̂_A` per hidden layer: a supergradient of `q`.
    pub fn mismatch(&self) -> Vec<Vec<f64>> {
        self.xhat_b
            .iter()
            .zip(&self.xhat_a)
            .map(|(b, a)| b.iter().zip(a).map(|(b, a)| b - a).collect())
            .collect()
    }
}

/// Result of an inner minimization over one hidden block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSolution {
    pub xhat_b: Vec<f64>,
    pub x: Vec<f64>,
    pub xhat_a_next: Vec<f64>,
    pub value: f64,
}

/// A network, domain and intermediate bounds, with sigmoid hulls precomputed.
#[derive(Clone, Debug)]
pub struct DualProblem<'a> {
    pub net: &'a Network,
    pub domain: &'a InputDomain,
    pub bounds: &'a LayerBounds,
    sigmoid_hulls: Vec<Vec<Option<SigmoidHull>>>,
}

impl<'a> DualProblem<'a> {
    pub fn new(net: &'a Network, domain: &'a InputDomain, bounds: &'a LayerBounds) -> Result<Self> {
        if !net.is_canonical() {
            return Err(Error::Dimension {
                expected: 1,
                got: net.output_dim(),
            });
        }
        if domain.dim() != net.input_dim() {
            return Err(Error::Dimension {
                expected: net.input_dim(),
                got: domain.dim(),
            });
        }
        let widths = net.hidden_widths();
        if bounds.num_layers() != widths.len() {
            return Err(Error::Dimension {
                expected: widths.len(),
                got: bounds.num_layers(),
            });
        }
        let mut sigmoid_hulls = Vec::with_capacity(widths.len());
        for (h, &w) in widths.iter().enumerate() {
            if bounds.lower[h].len() != w || bounds.upper[h].len() != w {
                return Err(Error::Shape {
                    layer: h + 1,
                    detail: format!("bounds width {} differs from layer width {w}", bounds.lower[h].len()),
                });
            }
            let hulls = match net.activations()[h] {
                Activation::Relu => vec![None; w],
                Activation::Sigmoid => (0..w)
                    .map(|i| sigmoid_hull(bounds.lower[h][i], bounds.upper[h][i]).map(Some))
                    .collect::<Result<_>>()?,
            };
            sigmoid_hulls.push(hulls);
        }
        Ok(Self {
            net,
            domain,
            bounds,
            sigmoid_hulls,
        })
    }

    pub fn num_hidden(&self) -> usize {
        self.net.num_hidden()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.net.hidden_widths()
    }

    /// `ρ_k` for one-based `k`, with `ρ_n = -1`.
    fn rho_at<'r>(&self, rho: &'r DecompositionDuals, k: usize) -> std::borrow::Cow<'r, [f64]> {
        if k == self.net.num_linear() {
            std::borrow::Cow::Owned(vec![-1.0])
        } else {
            std::borrow::Cow::Borrowed(&rho.rho[k - 1])
        }
    }

    /// Minimizes `-ρ_1ᵀ(W_1x0 + b_1)` over the input domain.
    pub fn inner_min_p0(&self, rho1: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let lin = self.net.layer(1);
        let g: Vec<f64> = lin.adjoint(rho1).into_iter().map(|v| -v).collect();
        let (x0, _) = self.domain.min_linear(&g);
        let xhat = lin.apply(&x0);
        let value = -dot(rho1, &xhat);
        (x0, xhat, value)
    }

    /// Minimizes `ρ_kᵀx̂_{B,k} - ρ_{k+1}ᵀ(W_{k+1}x_k + b_{k+1})` over the hull
    /// of hidden layer `k` (one based).
    pub fn inner_min_pk(&self, k: usize, rho_k: &[f64], rho_next: &[f64]) -> BlockSolution {
        let h = k - 1;
        let lin = self.net.layer(k + 1);
        let g = lin.adjoint(rho_next);
        let (ls, us) = (&self.bounds.lower[h], &self.bounds.upper[h]);
        let w = ls.len();
        let mut xhat_b = vec![0.0; w];
        let mut x = vec![0.0; w];
        match self.net.activations()[h] {
            Activation::Relu => {
                for i in 0..w {
                    (xhat_b[i], x[i]) = relu_coordinate_min(rho_k[i], g[i], ls[i], us[i]);
                }
            }
            Activation::Sigmoid => {
                for i in 0..w {
                    let hull = self.sigmoid_hulls[h][i].as_ref().expect("sigmoid hull");
                    let (xh, xv, _) = sigmoid_block_min(rho_k[i], g[i], hull);
                    xhat_b[i] = xh;
                    x[i] = xv;
                }
            }
        }
        let xhat_a_next = lin.apply(&x);
        let value = dot(rho_k, &xhat_b) - dot(rho_next, &xhat_a_next);
        BlockSolution {
            xhat_b,
            x,
            xhat_a_next,
            value,
        }
    }

    /// `q(ρ)` and the block minimizers.
    pub fn dual_value(&self, rho: &DecompositionDuals) -> (f64, PrimalIterates) {
        let n = self.net.num_linear();
        let (x0, xa1, mut q) = self.inner_min_p0(&self.rho_at(rho, 1));
        let mut xhat_a = vec![xa1];
        let mut xhat_b = Vec::with_capacity(n - 1);
        let mut x = Vec::with_capacity(n - 1);
        for k in 1..n {
            let blk = self.inner_min_pk(k, &rho.rho[k - 1], &self.rho_at(rho, k + 1));
            q += blk.value;
            xhat_b.push(blk.xhat_b);
            x.push(blk.x);
            xhat_a.push(blk.xhat_a_next);
        }
        (q, PrimalIterates { x0, xhat_a, xhat_b, x })
    }

    /// Worst violation of block feasibility: domain, hulls and the linear
    /// maps that define `x̂_A`.
    pub fn feasibility_violation(&self, p: &PrimalIterates) -> f64 {
        let mut worst = 0.0_f64;
        let (lo, hi) = self.domain.interval();
        if self.domain.is_box() {
            for (v, (l, u)) in p.x0.iter().zip(lo.iter().zip(&hi)) {
                worst = worst.max(l - v).max(v - u);
            }
        } else if let InputDomain::L2 { center, eps } = self.domain {
            let r: f64 = p.x0.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            worst = worst.max(r.sqrt() - eps);
        }
        let first = self.net.layer(1).apply(&p.x0);
        worst = worst.max(max_abs_diff(&first, &p.xhat_a[0]));
        for h in 0..self.num_hidden() {
            for i in 0..p.x[h].len() {
                let (l, u) = (self.bounds.lower[h][i], self.bounds.upper[h][i]);
                let v = match self.net.activations()[h] {
                    Activation::Relu => relu_hull_violation(l, u, p.xhat_b[h][i], p.x[h][i]),
                    Activation::Sigmoid => self.sigmoid_hulls[h][i]
                        .as_ref()
                        .expect("sigmoid hull")
                        .violation(p.xhat_b[h][i], p.x[h][i]),
                };
                worst = worst.max(v);
            }
            let next = self.net.layer(h + 2).apply(&p.x[h]);
            worst = worst.max(max_abs_diff(&next, &p.xhat_a[h + 1]));
        }
        worst
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Minimizer `(x̂, x)` of `a·x̂ - g·x` over the ReLU hull on `[l, u]`.
pub fn relu_coordinate_min(a: f64, g: f64, l: f64, u: f64) -> (f64, f64) {
    match classify(l, u) {
        NeuronClass::Blocking => (box_argmin(a, l, u), 0.0),
        NeuronClass::Passing => {
            let xh = box_argmin(a - g, l, u);
            (xh, xh)
        }
        NeuronClass::Ambiguous => {
            let mut best = (l, 0.0);
            let mut best_v = f64::INFINITY;
            for (xh, xv) in relu_vertices(l, u) {
                let v = a * xh - g * xv;
                if v < best_v {
                    best = (xh, xv);
                    best_v = v;
                }
            }
            best
        }
    }
}

/// `argmin c·x` on `[l, u]`; a zero coefficient takes the lower end.
pub fn box_argmin(c: f64, l: f64, u: f64) -> f64 {
    if c < 0.0 {
        u
    } else {
        l
    }
}

/// `ρ_k = μ̄_k` from a backward pass; `q` then equals the propagation bound.
pub fn init_duals_from_propagation(
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    rule: SlopeRule,
) -> Result<DecompositionDuals> {
    let r = propagation_bound(net, domain, bounds, rule)?;
    Ok(DecompositionDuals { rho: r.duals.mu })
}

/// Linearly decaying step size from `start` at the first step to `end` at the last.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub start: f64,
    pub end: f64,
}

impl StepSchedule {
    pub fn at(&self, t: usize, steps: usize) -> f64 {
        if steps <= 1 {
            return self.start;
        }
        self.start + (self.end - self.start) * t as f64 / (steps - 1) as f64
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { start: 1e-2, end: 1e-4 }
    }
}

/// Adam moment estimates for one set of per-layer vectors, used for ascent.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(widths: &[usize]) -> Self {
        Self {
            m: widths.iter().map(|&w| vec![0.0; w]).collect(),
            v: widths.iter().map(|&w| vec![0.0; w]).collect(),
            t: 0,
        }
    }

    /// Moves `x` uphill along the moment-normalized gradient.
    pub fn ascend(&mut self, x: &mut [Vec<f64>], grad: &[Vec<f64>], step: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (h, g) in grad.iter().enumerate() {
            for (i, &gi) in g.iter().enumerate() {
                let m = &mut self.m[h][i];
                let v = &mut self.v[h][i];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gi;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gi * gi;
                x[h][i] += step * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    /// Largest dual value seen, including the starting point.
    pub best: f64,
    /// Final multipliers.
    pub rho: DecompositionDuals,
    /// Block minimizers at the final multipliers.
    pub primal: PrimalIterates,
    /// Dual value after each step, starting with the initial point.
    pub history: Vec<f64>,
}

/// Projected-free supergradient ascent with Adam moments.
pub fn supergradient_solve(
    prob: &DualProblem<'_>,
    rho0: &DecompositionDuals,
    steps: usize,
    schedule: StepSchedule,
) -> SolveResult {
    let mut rho = rho0.clone();
    let (q0, mut primal) = prob.dual_value(&rho);
    let mut best = q0;
    let mut history = vec![q0];
    let mut adam = Adam::new(&prob.hidden_widths());
    for t in 0..steps {
        let g = primal.mismatch();
        adam.ascend(&mut rho.rho, &g, schedule.at(t, steps));
        let (q, p) = prob.dual_value(&rho);
        primal = p;
        best = best.max(q);
        history.push(q);
    }
    SolveResult {
        best,
        rho,
        primal,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ambiguous_vertex_tie_takes_first() {
        // Values at the vertices: -1, 0, -1.
        assert_eq!(relu_coordinate_min(1.0, 2.0, -1.0, 1.0), (-1.0, 0.0));
    }

    #[test]
    fn passing_zero_coefficient_takes_lower() {
        assert_eq!(relu_coordinate_min(0.5, 0.5, 1.0, 2.0), (1.0, 1.0));
    }

    #[test]
    fn blocking_uses_sign_of_rho() {
        assert_eq!(relu_coordinate_min(-1.0, 5.0, -2.0, -1.0), (-1.0, 0.0));
        assert_eq!(relu_coordinate_min(1.0, 5.0, -2.0, -1.0), (-2.0, 0.0));
    }

    #[test]
    fn schedule_endpoints() {
        let s = StepSchedule::default();
        assert_eq!(s.at(0, 500), 1e-2);
        assert!((s.at(499, 500) - 1e-4).abs() < 1e-18);
        assert_eq!(s.at(0, 1), 1e-2);
    }
}
