//! The relaxation dual `d_O(μ, λ)` obtained by dualizing the layer equalities
//! (`μ`) and the activation constraints (`λ`), with `μ_n = -1`:
//!
//! ```text
//! d_O = b_n - Σ μ_kᵀb_k + min_C -μ_1ᵀW_1x0
//!     + Σ min_{x̂∈[l,u]} μ_kᵀx̂ - λ_kᵀσ(x̂)
//!     + Σ min_{x∈[σ(l),σ(u)]} (λ_k - W_{k+1}ᵀμ_{k+1})ᵀx
//! ```
//!
//! Evaluating the decomposition dual at `ρ = μ` never gives less.

use crate::bounds::LayerBounds;
use crate::decomposition::{box_argmin, Adam, DecompositionDuals, DualProblem, StepSchedule};
use crate::error::{Error, Result};
use crate::network::{dot, InputDomain, Network};
use crate::propagation::RelaxationDuals;

/// Value of `d_O` and a supergradient `(g_μ, g_λ)`.
#[derive(Clone, Debug)]
pub struct DsgEvaluation {
    pub value: f64,
    pub grad_mu: Vec<Vec<f64>>,
    pub grad_lambda: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// First minimizer of `μ·x̂ - λ·relu(x̂)` over `{l, 0 (if interior), u}`.
pub fn dsg_hat_min(mu: f64, lambda: f64, l: f64, u: f64) -> f64 {
    let f = |x: f64| mu * x - lambda * relu(x);
    let mut best = l;
    let mut best_v = f(l);
    if l < 0.0 && u > 0.0 && f(0.0) < best_v {
        best = 0.0;
        best_v = f(0.0);
    }
    if f(u) < best_v {
        best = u;
    }
    best
}

pub fn dsg_dual_value(
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    duals: &RelaxationDuals,
) -> Result<DsgEvaluation> {
    if !net.is_relu() {
        return Err(Error::Unsupported(
            "the relaxation dual is implemented for ReLU networks".into(),
        ));
    }
    let n = net.num_linear();
    let hidden = n - 1;
    let mu_at = |k: usize| -> Vec<f64> {
        if k == n {
            vec![-1.0]
        } else {
            duals.mu[k - 1].clone()
        }
    };
    let mut value = net.layer(n).bias()[0];
    for k in 1..n {
        value -= dot(&duals.mu[k - 1], &net.layer(k).bias());
    }
    let mu1 = mu_at(1);
    let g: Vec<f64> = net.layer(1).adjoint(&mu1).into_iter().map(|v| -v).collect();
    let (x0, v0) = domain.min_linear(&g);
    value += v0;

    let mut xhat_star = Vec::with_capacity(hidden);
    let mut x_star = Vec::with_capacity(hidden);
    for h in 0..hidden {
        let k = h + 1;
        let (ls, us) = (&bounds.lower[h], &bounds.upper[h]);
        let (mu, lam) = (&duals.mu[h], &duals.lambda[h]);
        let coeff_x: Vec<f64> = net
            .layer(k + 1)
            .adjoint(&mu_at(k + 1))
            .iter()
            .zip(lam)
            .map(|(w, l)| l - w)
            .collect();
        let mut xh = vec![0.0; ls.len()];
        let mut xv = vec![0.0; ls.len()];
        for i in 0..ls.len() {
            xh[i] = dsg_hat_min(mu[i], lam[i], ls[i], us[i]);
            value += mu[i] * xh[i] - lam[i] * relu(xh[i]);
            xv[i] = box_argmin(coeff_x[i], relu(ls[i]), relu(us[i]));
            value += coeff_x[i] * xv[i];
        }
        xhat_star.push(xh);
        x_star.push(xv);
    }

    let mut grad_mu = Vec::with_capacity(hidden);
    let mut grad_lambda = Vec::with_capacity(hidden);
    for h in 0..hidden {
        let prev = if h == 0 { &x0 } else { &x_star[h - 1] };
        let image = net.layer(h + 1).apply(prev);
        grad_mu.push(xhat_star[h].iter().zip(&image).map(|(a, b)| a - b).collect());
        grad_lambda.push(
            x_star[h]
                .iter()
                .zip(&xhat_star[h])
                .map(|(x, xh)| x - relu(*xh))
                .collect(),
        );
    }
    Ok(DsgEvaluation {
        value,
        grad_mu,
        grad_lambda,
        x0,
    })
}

#[derive(Clone, Debug)]
pub struct DsgResult {
    pub best: f64,
    /// Multipliers attaining `best`.
    pub duals: RelaxationDuals,
    /// Input minimizer at the final iterate.
    pub x0: Vec<f64>,
    pub history: Vec<f64>,
}

/// Supergradient ascent on `(μ, λ)` with Adam moments.
pub fn dsg_supergradient_solve(
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    init: &RelaxationDuals,
    steps: usize,
    schedule: StepSchedule,
) -> Result<DsgResult> {
    let mut duals = init.clone();
    let mut eval = dsg_dual_value(net, domain, bounds, &duals)?;
    let mut best = eval.value;
    let mut best_duals = duals.clone();
    let mut history = vec![eval.value];
    let widths = net.hidden_widths();
    let mut adam_mu = Adam::new(&widths);
    let mut adam_lambda = Adam::new(&widths);
    for t in 0..steps {
        let step = schedule.at(t, steps);
        adam_mu.ascend(&mut duals.mu, &eval.grad_mu, step);
        adam_lambda.ascend(&mut duals.lambda, &eval.grad_lambda, step);
        eval = dsg_dual_value(net, domain, bounds, &duals)?;
        if eval.value > best {
            best = eval.value;
            best_duals = duals.clone();
        }
        history.push(eval.value);
    }
    Ok(DsgResult {
        best,
        duals: best_duals,
        x0: eval.x0,
        history,
    })
}

/// Decomposition dual evaluated at `ρ = μ`.
pub fn dec_dsg_bound(prob: &DualProblem<'_>, duals: &RelaxationDuals) -> f64 {
    prob.dual_value(&DecompositionDuals { rho: duals.mu.clone() }).0
}

/// Multipliers `λ` for which `d_O(μ, λ) = q(μ)`: `λ_{k-1} = W_kᵀμ_k` with `μ_n = -1`.
pub fn chained_lambda(net: &Network, mu: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = net.num_linear();
    (1..n)
        .map(|k| {
            if k + 1 == n {
                net.layer(n).adjoint(&[-1.0])
            } else {
                net.layer(k + 1).adjoint(&mu[k])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_min_candidates() {
        // μ x̂ - λ relu(x̂) with μ = 0.5, λ = 1 on [-1, 1]: values -0.5, 0, -0.5.
        assert_eq!(dsg_hat_min(0.5, 1.0, -1.0, 1.0), -1.0);
        assert_eq!(dsg_hat_min(-1.0, 0.0, -1.0, 1.0), 1.0);
        assert_eq!(dsg_hat_min(1.0, 3.0, -1.0, 1.0), 1.0);
    }
}
