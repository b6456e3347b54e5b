//! Soundness and consistency of the bounding algorithms on random networks.

use proptest::prelude::*;
use rand::Rng;

use nnbound::bounds::LayerBounds;
use nnbound::decomposition::{
    init_duals_from_propagation, relu_coordinate_min, supergradient_solve, DecompositionDuals, DualProblem,
    StepSchedule,
};
use nnbound::dsg::{dsg_dual_value, dsg_supergradient_solve};
use nnbound::hulls::{relu_hull_violation, sigmoid_hull, sigmoid_linear_bounds};
use nnbound::instances::{random_instance, rng_from_seed, Instance, InstanceShape};
use nnbound::network::{sigmoid, Activation};
use nnbound::oracles::planet_lp_bound;
use nnbound::propagation::{ibp_bounds, intermediate_bounds, propagation_bound, IbStrategy, SlopeRule};
use nnbound::proximal::{proximal_solve, ProximalConfig};

fn small_shape(activation: Activation) -> InstanceShape {
    InstanceShape {
        input_dim: (2, 4),
        hidden_layers: (1, 3),
        width: (2, 6),
        radius: (0.1, 1.0),
        activation,
    }
}

fn sample_box(rng: &mut impl Rng, inst: &Instance) -> Vec<f64> {
    let (lo, hi) = inst.domain.interval();
    lo.iter().zip(&hi).map(|(l, u)| rng.gen_range(*l..=*u)).collect()
}

fn contains(bounds: &LayerBounds, pre: &[Vec<f64>]) -> bool {
    pre.iter().take(bounds.num_layers()).enumerate().all(|(h, layer)| {
        layer
            .iter()
            .enumerate()
            .all(|(i, &v)| bounds.lower[h][i] - 1e-9 <= v && v <= bounds.upper[h][i] + 1e-9)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every strategy's bounds contain the pre-activations of sampled inputs,
    /// and every output lower bound sits below every sampled output.
    #[test]
    fn bounds_contain_samples(seed in any::<u64>(), sig in any::<bool>()) {
        let mut rng = rng_from_seed(seed);
        let act = if sig { Activation::Sigmoid } else { Activation::Relu };
        let inst = random_instance(&mut rng, &small_shape(act));
        let (ibp, ibp_out) = ibp_bounds(&inst.net, &inst.domain, None);
        let ib1 = intermediate_bounds(&inst.net, &inst.domain, IbStrategy::IbpWk, None).unwrap();
        let ib2 = intermediate_bounds(&inst.net, &inst.domain, IbStrategy::WkCrown, None).unwrap();
        let wk = propagation_bound(&inst.net, &inst.domain, &ib2, SlopeRule::Wk).unwrap().bound;
        let crown = propagation_bound(&inst.net, &inst.domain, &ib2, SlopeRule::Crown).unwrap().bound;
        for _ in 0..200 {
            let x = sample_box(&mut rng, &inst);
            let pre = inst.net.pre_activations(&x);
            prop_assert!(contains(&ibp, &pre));
            prop_assert!(contains(&ib1, &pre));
            prop_assert!(contains(&ib2, &pre));
            let y = inst.net.eval_scalar(&x).unwrap();
            prop_assert!(ibp_out <= y + 1e-9 && wk <= y + 1e-9 && crown <= y + 1e-9);
        }
    }

    /// Weak duality: `q(ρ)` never exceeds the relaxation optimum, and the
    /// propagation warm start reproduces the propagation bound.
    #[test]
    fn decomposition_dual_is_a_lower_bound(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let inst = random_instance(&mut rng, &small_shape(Activation::Relu));
        let bounds = intermediate_bounds(&inst.net, &inst.domain, IbStrategy::WkCrown, None).unwrap();
        let lp = planet_lp_bound(&inst.net, &inst.domain, &bounds).unwrap();
        let prob = DualProblem::new(&inst.net, &inst.domain, &bounds).unwrap();
        let widths = inst.net.hidden_widths();
        for _ in 0..20 {
            let rho = DecompositionDuals {
                rho: widths.iter().map(|&w| (0..w).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
            };
            let (q, primal) = prob.dual_value(&rho);
            prop_assert!(q <= lp + 1e-8 * (1.0 + lp.abs()), "q {q} above {lp}");
            prop_assert!(prob.feasibility_violation(&primal) <= 1e-9);
        }
        for rule in [SlopeRule::Wk, SlopeRule::Crown] {
            let rho = init_duals_from_propagation(&inst.net, &inst.domain, &bounds, rule).unwrap();
            let p = propagation_bound(&inst.net, &inst.domain, &bounds, rule).unwrap().bound;
            prop_assert!((prob.dual_value(&rho).0 - p).abs() <= 1e-8 * (1.0 + p.abs()));
        }
    }

    /// Iterative solvers stay below the relaxation optimum and never report
    /// less than their starting point.
    #[test]
    fn solvers_are_sound_and_monotone(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let inst = random_instance(&mut rng, &small_shape(Activation::Relu));
        let bounds = intermediate_bounds(&inst.net, &inst.domain, IbStrategy::WkCrown, None).unwrap();
        let lp = planet_lp_bound(&inst.net, &inst.domain, &bounds).unwrap();
        let tol = 1e-8 * (1.0 + lp.abs());
        let prob = DualProblem::new(&inst.net, &inst.domain, &bounds).unwrap();
        let rho0 = init_duals_from_propagation(&inst.net, &inst.domain, &bounds, SlopeRule::Crown).unwrap();
        let q0 = prob.dual_value(&rho0).0;

        let sg = supergradient_solve(&prob, &rho0, 60, StepSchedule::default());
        prop_assert!(sg.best >= q0 && sg.best <= lp + tol);
        prop_assert!(sg.history.iter().all(|&q| q <= lp + tol));

        for cfg in [ProximalConfig::complete(30), ProximalConfig::incomplete(30)] {
            let (res, state) = proximal_solve(&prob, &rho0, &cfg);
            prop_assert!(res.best >= q0 && res.best <= lp + tol);
            prop_assert!(prob.feasibility_violation(&state.primal) <= 1e-9);
        }

        let init = propagation_bound(&inst.net, &inst.domain, &bounds, SlopeRule::Crown).unwrap().duals;
        let dsg = dsg_supergradient_solve(&inst.net, &inst.domain, &bounds, &init, 60, StepSchedule::default()).unwrap();
        prop_assert!(dsg.best <= lp + tol);
        let again = dsg_dual_value(&inst.net, &inst.domain, &bounds, &dsg.duals).unwrap().value;
        prop_assert!((again - dsg.best).abs() <= 1e-12 * (1.0 + again.abs()));
    }

    /// The coordinate minimizer over the ReLU hull beats a dense grid of the hull.
    #[test]
    fn relu_block_minimum(a in -3.0f64..3.0, g in -3.0f64..3.0, l in -2.0f64..-0.01, u in 0.01f64..2.0) {
        let (xh, x) = relu_coordinate_min(a, g, l, u);
        prop_assert!(relu_hull_violation(l, u, xh, x) <= 1e-12);
        let v = a * xh - g * x;
        let n = 60;
        for i in 0..=n {
            let xhi = l + (u - l) * i as f64 / n as f64;
            let top = u / (u - l) * (xhi - l);
            for j in 0..=n {
                let xj = xhi.max(0.0) + (top - xhi.max(0.0)) * j as f64 / n as f64;
                prop_assert!(v <= a * xhi - g * xj + 1e-12);
            }
        }
    }

    /// The graph and the triangle's vertices lie in the ReLU hull; points off
    /// its faces do not.
    #[test]
    fn relu_hull_membership(l in -2.0f64..-0.01, u in 0.01f64..2.0, t in 0.0f64..1.0) {
        let xh = l + t * (u - l);
        prop_assert!(relu_hull_violation(l, u, xh, xh.max(0.0)) <= 1e-12);
        prop_assert!(relu_hull_violation(l, u, l, 0.0) <= 1e-12 && relu_hull_violation(l, u, u, u) <= 1e-12);
        let top = u / (u - l) * (xh - l);
        prop_assert!(relu_hull_violation(l, u, xh, top + 0.1) > 0.0);
        prop_assert!(relu_hull_violation(l, u, xh, -0.1) > 0.0);
    }

    /// The sigmoid lies between the envelopes; the upper one is concave and
    /// the lower one convex; the linear bounds enclose the sigmoid.
    #[test]
    fn sigmoid_envelopes(l in -8.0f64..8.0, w in 1e-3f64..10.0) {
        let u = l + w;
        let hull = sigmoid_hull(l, u).unwrap();
        let (sl, cl, su, cu) = sigmoid_linear_bounds(l, u).unwrap();
        let n = 200;
        let xs: Vec<f64> = (0..=n).map(|i| l + (u - l) * i as f64 / n as f64).collect();
        for &x in &xs {
            let s = sigmoid(x);
            prop_assert!(hull.lower.eval(x) <= s + 1e-12 && s <= hull.upper.eval(x) + 1e-12);
            prop_assert!(sl * x + cl <= s + 1e-12 && s <= su * x + cu + 1e-12);
            prop_assert!(hull.violation(x, s) <= 1e-12);
        }
        for pair in xs.windows(3) {
            let (a, b, c) = (pair[0], pair[1], pair[2]);
            let mid_u = 0.5 * (hull.upper.eval(a) + hull.upper.eval(c));
            let mid_l = 0.5 * (hull.lower.eval(a) + hull.lower.eval(c));
            prop_assert!(hull.upper.eval(b) >= mid_u - 1e-12);
            prop_assert!(hull.lower.eval(b) <= mid_l + 1e-12);
        }
    }
}

/// Frozen values from the single-ReLU example `x̂1 = x0 + 0.5`, output
/// `-x1 + 1`, `x0 ∈ [-1, 1]`, computed by hand: IBP `-0.5`, WK and CROWN
/// `-0.5` (slope 3/4, intercept 3/8), relaxation optimum `-0.5`.
#[test]
fn single_relu_frozen_bounds() {
    use nnbound::network::{Dense, InputDomain, LinearMap, Network};
    let net = Network::new(
        vec![
            LinearMap::Dense(Dense::new(1, 1, vec![1.0], vec![0.5]).unwrap()),
            LinearMap::Dense(Dense::new(1, 1, vec![-1.0], vec![1.0]).unwrap()),
        ],
        vec![Activation::Relu],
    )
    .unwrap();
    let dom = InputDomain::Box {
        lower: vec![-1.0],
        upper: vec![1.0],
    };
    let bounds = intermediate_bounds(&net, &dom, IbStrategy::WkCrown, None).unwrap();
    assert_eq!((bounds.lower[0][0], bounds.upper[0][0]), (-0.5, 1.5));
    let (_, ibp) = ibp_bounds(&net, &dom, None);
    assert!((ibp + 0.5).abs() < 1e-12);
    for rule in [SlopeRule::Wk, SlopeRule::Crown] {
        let b = propagation_bound(&net, &dom, &bounds, rule).unwrap().bound;
        assert!((b + 0.5).abs() < 1e-12, "{rule:?}: {b}");
    }
    assert!((planet_lp_bound(&net, &dom, &bounds).unwrap() + 0.5).abs() < 1e-9);
}
