//! Method-of-multipliers solver for the decomposition dual.
//!
//! The augmented Lagrangian
//! `L = x̂_{A,n} + Σ ρ_kᵀ(x̂_{B,k} - x̂_{A,k}) + Σ ‖x̂_{B,k} - x̂_{A,k}‖² / (2η_k)`
//! is minimized approximately over the primal blocks by block-coordinate
//! Frank-Wolfe with an exact line search, after which the multipliers move
//! by the scaled copy mismatch. Convex combinations keep every primal block
//! feasible without projection.

use crate::decomposition::{DecompositionDuals, DualProblem, PrimalIterates, SolveResult};
use crate::network::dot;

/// Linearly interpolated `η` over the outer iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaSchedule {
    pub start: f64,
    pub end: f64,
}

impl EtaSchedule {
    pub fn constant(eta: f64) -> Self {
        Self { start: eta, end: eta }
    }

    pub fn at(&self, t: usize, steps: usize) -> f64 {
        if steps <= 1 {
            return self.start;
        }
        self.start + (self.end - self.start) * t as f64 / (steps - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProximalConfig {
    /// Outer iterations `T`.
    pub steps: usize,
    /// Frank-Wolfe sweeps per outer iteration `J`.
    pub inner: usize,
    pub eta: EtaSchedule,
    /// Momentum coefficient on the multiplier updates; 0 disables it.
    pub momentum: f64,
}

impl ProximalConfig {
    /// Complete-verification setting: `J = 2`, `η = 1e2`, no momentum.
    pub fn complete(steps: usize) -> Self {
        Self {
            steps,
            inner: 2,
            eta: EtaSchedule::constant(1e2),
            momentum: 0.0,
        }
    }

    /// Incomplete-verification setting: momentum 0.3 and `η` from 1e1 to 5e2.
    pub fn incomplete(steps: usize) -> Self {
        Self {
            steps,
            inner: 2,
            eta: EtaSchedule { start: 1e1, end: 5e2 },
            momentum: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProximalState {
    pub rho: DecompositionDuals,
    /// Momentum buffers, one per multiplier.
    pub pi: Vec<Vec<f64>>,
    pub primal: PrimalIterates,
    /// `η_k` per hidden layer.
    pub eta: Vec<f64>,
}

/// Frank-Wolfe vertex for one block. Block 0 covers `(x0, x̂_{A,1})`; block
/// `k ≥ 1` covers `(x̂_{B,k}, x_k, x̂_{A,k+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDirection {
    pub block: usize,
    pub x0: Vec<f64>,
    pub xhat_b: Vec<f64>,
    pub x: Vec<f64>,
    pub xhat_a_next: Vec<f64>,
}

impl ProximalState {
    pub fn new(prob: &DualProblem<'_>, rho: DecompositionDuals, eta: f64) -> Self {
        let (_, primal) = prob.dual_value(&rho);
        let widths = prob.hidden_widths();
        Self {
            pi: widths.iter().map(|&w| vec![0.0; w]).collect(),
            eta: vec![eta; widths.len()],
            rho,
            primal,
        }
    }

    fn num_linear(&self) -> usize {
        self.primal.xhat_a.len()
    }

    /// `ρ̃_k = ρ_k + (x̂_{B,k} - x̂_{A,k})/η_k`, the gradient with respect to
    /// `x̂_{B,k}`; `ρ̃_n = -1`.
    pub fn rho_tilde(&self, k: usize) -> Vec<f64> {
        if k == self.num_linear() {
            return vec![-1.0];
        }
        let h = k - 1;
        let eta = self.eta[h];
        self.rho.rho[h]
            .iter()
            .zip(self.primal.xhat_b[h].iter().zip(&self.primal.xhat_a[h]))
            .map(|(r, (b, a))| r + (b - a) / eta)
            .collect()
    }

    /// `1/η_k` with `η_n = ∞`.
    fn inv_eta(&self, k: usize) -> f64 {
        if k == self.num_linear() {
            0.0
        } else {
            1.0 / self.eta[k - 1]
        }
    }
}

/// Augmented Lagrangian at the current state.
pub fn augmented_lagrangian(state: &ProximalState) -> f64 {
    let p = &state.primal;
    let mut val = p.xhat_a[p.xhat_a.len() - 1][0];
    for h in 0..p.xhat_b.len() {
        for i in 0..p.xhat_b[h].len() {
            let d = p.xhat_b[h][i] - p.xhat_a[h][i];
            val += state.rho.rho[h][i] * d + d * d / (2.0 * state.eta[h]);
        }
    }
    val
}

/// Linear minimization over one block at the gradient of `L`.
pub fn conditional_gradient(prob: &DualProblem<'_>, state: &ProximalState, block: usize) -> BlockDirection {
    if block == 0 {
        let (x0, xa, _) = prob.inner_min_p0(&state.rho_tilde(1));
        BlockDirection {
            block,
            x0,
            xhat_b: Vec::new(),
            x: Vec::new(),
            xhat_a_next: xa,
        }
    } else {
        let sol = prob.inner_min_pk(block, &state.rho_tilde(block), &state.rho_tilde(block + 1));
        BlockDirection {
            block,
            x0: Vec::new(),
            xhat_b: sol.xhat_b,
            x: sol.x,
            xhat_a_next: sol.xhat_a_next,
        }
    }
}

/// Minimizer over `[0, 1]` of the one-dimensional quadratic with the given
/// numerator (negative slope at 0) and curvature.
pub fn clip_step(numerator: f64, denominator: f64) -> f64 {
    if denominator > 0.0 {
        (numerator / denominator).clamp(0.0, 1.0)
    } else if numerator > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Numerator and denominator of the exact line search along `dir`.
pub fn step_terms(state: &ProximalState, dir: &BlockDirection) -> (f64, f64) {
    let k = dir.block;
    let p = &state.primal;
    let next_tilde = state.rho_tilde(k + 1);
    let xa = &p.xhat_a[k];
    let mut num = -dot(&next_tilde, xa) + dot(&next_tilde, &dir.xhat_a_next);
    let da: f64 = xa.iter().zip(&dir.xhat_a_next).map(|(x, z)| (z - x) * (z - x)).sum();
    let mut den = da * state.inv_eta(k + 1);
    if k > 0 {
        let tilde = state.rho_tilde(k);
        let xb = &p.xhat_b[k - 1];
        num += dot(&tilde, xb) - dot(&tilde, &dir.xhat_b);
        let db: f64 = xb.iter().zip(&dir.xhat_b).map(|(x, z)| (z - x) * (z - x)).sum();
        den += db * state.inv_eta(k);
    }
    (num, den)
}

pub fn optimal_step_size(state: &ProximalState, dir: &BlockDirection) -> f64 {
    let (num, den) = step_terms(state, dir);
    clip_step(num, den)
}

/// Moves one block a fraction `gamma` toward `dir`.
pub fn apply_step(state: &mut ProximalState, dir: &BlockDirection, gamma: f64) {
    let mix = |x: &mut [f64], z: &[f64]| {
        for (xi, zi) in x.iter_mut().zip(z) {
            *xi += gamma * (zi - *xi);
        }
    };
    let k = dir.block;
    let p = &mut state.primal;
    if k == 0 {
        mix(&mut p.x0, &dir.x0);
    } else {
        mix(&mut p.xhat_b[k - 1], &dir.xhat_b);
        mix(&mut p.x[k - 1], &dir.x);
    }
    mix(&mut p.xhat_a[k], &dir.xhat_a_next);
}

/// One block-coordinate Frank-Wolfe sweep over blocks `0 … n-1` in order.
pub fn fw_sweep(prob: &DualProblem<'_>, state: &mut ProximalState) {
    for block in 0..prob.num_hidden() + 1 {
        let dir = conditional_gradient(prob, state, block);
        let gamma = optimal_step_size(state, &dir);
        apply_step(state, &dir, gamma);
    }
}

/// Multiplier update `π ← μπ + (x̂_B - x̂_A)/η`, `ρ ← ρ + π`; with `μ = 0`
/// this is the plain update `ρ ← ρ + (x̂_B - x̂_A)/η` bit for bit.
pub fn dual_update(state: &mut ProximalState, momentum: f64) {
    let mismatch = state.primal.mismatch();
    for (h, m) in mismatch.iter().enumerate() {
        let eta = state.eta[h];
        for (i, d) in m.iter().enumerate() {
            let pi = &mut state.pi[h][i];
            *pi = momentum * *pi + d / eta;
            state.rho.rho[h][i] += *pi;
        }
    }
}

/// Runs the solver from `rho0`; the reported bound is the best `q(ρ^t)`.
pub fn proximal_solve(
    prob: &DualProblem<'_>,
    rho0: &DecompositionDuals,
    cfg: &ProximalConfig,
) -> (SolveResult, ProximalState) {
    let mut state = ProximalState::new(prob, rho0.clone(), cfg.eta.at(0, cfg.steps));
    let (q0, _) = prob.dual_value(rho0);
    let mut best = q0;
    let mut history = vec![q0];
    for t in 0..cfg.steps {
        let eta = cfg.eta.at(t, cfg.steps);
        state.eta.iter_mut().for_each(|e| *e = eta);
        for _ in 0..cfg.inner {
            fw_sweep(prob, &mut state);
        }
        dual_update(&mut state, cfg.momentum);
        let (q, _) = prob.dual_value(&state.rho);
        best = best.max(q);
        history.push(q);
    }
    (
        SolveResult {
            best,
            rho: state.rho.clone(),
            primal: state.primal.clone(),
            history,
        },
        state,
    )
}
