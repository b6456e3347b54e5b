//! Forward evaluation, adjoints and the model file format.

use proptest::prelude::*;

use nnbound::network::{Activation, Conv2d, Dense, InputDomain, LinearMap, Network, OutputSpec};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
struct ConvCase {
    conv: Conv2d,
    x: Vec<f64>,
    v: Vec<f64>,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (
        1usize..=2,
        1usize..=3,
        3usize..=5,
        3usize..=5,
        1usize..=3,
        1usize..=2,
        0usize..=1,
    )
        .prop_flat_map(|(ic, oc, ih, iw, k, stride, padding)| {
            let kh = k.min(ih + 2 * padding);
            let kw = k.min(iw + 2 * padding);
            let oh = (ih + 2 * padding - kh) / stride + 1;
            let ow = (iw + 2 * padding - kw) / stride + 1;
            (
                prop::collection::vec(-1.0f64..1.0, oc * ic * kh * kw),
                prop::collection::vec(-1.0f64..1.0, oc),
                prop::collection::vec(-1.0f64..1.0, ic * ih * iw),
                prop::collection::vec(-1.0f64..1.0, oc * oh * ow),
            )
                .prop_map(move |(kernel, bias, x, v)| ConvCase {
                    conv: Conv2d::new(kernel, oc, [kh, kw], bias, stride, padding, [ic, ih, iw]).unwrap(),
                    x,
                    v,
                })
        })
}

proptest! {
    /// `⟨Wx, v⟩ = ⟨x, Wᵀv⟩` for the convolution and its transpose.
    #[test]
    fn conv_adjoint_identity(case in conv_case()) {
        let map = LinearMap::Conv2d(case.conv);
        let lhs = dot(&map.apply_linear(&case.x), &case.v);
        let rhs = dot(&case.x, &map.adjoint(&case.v));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    /// The expanded matrix reproduces the convolution, bias included.
    #[test]
    fn conv_materializes_exactly(case in conv_case()) {
        let map = LinearMap::Conv2d(case.conv);
        let dense = LinearMap::Dense(map.materialize());
        let a = map.apply(&case.x);
        let b = dense.apply(&case.x);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn dense_adjoint_identity(
        w in prop::collection::vec(-2.0f64..2.0, 12),
        x in prop::collection::vec(-1.0f64..1.0, 4),
        v in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let map = LinearMap::Dense(Dense::new(3, 4, w, vec![0.0; 3]).unwrap());
        let lhs = dot(&map.apply_linear(&x), &v);
        prop_assert!((lhs - dot(&x, &map.adjoint(&v))).abs() <= 1e-12);
    }
}

fn two_layer() -> Network {
    Network::new(
        vec![
            LinearMap::Dense(Dense::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5]], vec![0.0, -1.0]).unwrap()),
            LinearMap::Dense(Dense::from_rows(&[vec![1.0, 1.0], vec![-1.0, 2.0]], vec![0.5, 0.0]).unwrap()),
        ],
        vec![Activation::Relu],
    )
    .unwrap()
}

#[test]
fn forward_hand_example() {
    // x = (1, 2): x̂1 = (-1, 2), x1 = (0, 2), output = (2.5, 4).
    let out = two_layer().forward(&[1.0, 2.0]).unwrap();
    assert_eq!(out, vec![2.5, 4.0]);
}

#[test]
fn canonical_network_applies_the_functional() {
    let net = two_layer();
    let spec = OutputSpec {
        c: vec![1.0, -1.0],
        d: 0.25,
    };
    let canon = net.canonicalize(&spec).unwrap();
    assert!(canon.is_canonical());
    for x in [[1.0, 2.0], [-0.5, 0.3], [0.0, 0.0]] {
        let f = net.forward(&x).unwrap();
        let expect = f[0] - f[1] + 0.25;
        assert!((canon.eval_scalar(&x).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn json_round_trip() {
    let net = two_layer();
    let back = Network::from_json(&net.to_json()).unwrap();
    assert_eq!(back, net);
}

#[test]
fn rejects_inconsistent_layers() {
    let bad = Network::new(
        vec![
            LinearMap::Dense(Dense::new(2, 2, vec![0.0; 4], vec![0.0; 2]).unwrap()),
            LinearMap::Dense(Dense::new(1, 3, vec![0.0; 3], vec![0.0]).unwrap()),
        ],
        vec![Activation::Relu],
    );
    assert!(bad.is_err());
    assert!(Dense::new(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
    assert!(two_layer().forward(&[1.0]).is_err());
}

#[test]
fn domain_linear_minimum() {
    let b = InputDomain::Box {
        lower: vec![-1.0, 0.0],
        upper: vec![1.0, 2.0],
    };
    let (x, v) = b.min_linear(&[1.0, -1.0]);
    assert_eq!((x, v), (vec![-1.0, 2.0], -3.0));
    let ball = InputDomain::L2 {
        center: vec![0.0, 0.0],
        eps: 2.0,
    };
    let (x, v) = ball.min_linear(&[3.0, 4.0]);
    assert!((v + 10.0).abs() < 1e-12);
    assert!((x[0] + 1.2).abs() < 1e-12 && (x[1] + 1.6).abs() < 1e-12);
}
