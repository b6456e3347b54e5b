//! Seeded random networks and properties for experiments and tests.
//!
//! Every draw goes through a ChaCha generator seeded from one `u64`, so a
//! suite is a pure function of its seed and shape parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{Activation, Dense, InputDomain, LinearMap, Network, OutputSpec, VerificationProperty};
use crate::oracles::exact_min;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ranges from which network shapes and input boxes are drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceShape {
    pub input_dim: (usize, usize),
    pub hidden_layers: (usize, usize),
    pub width: (usize, usize),
    /// Half-width of the input box.
    pub radius: (f64, f64),
    pub activation: Activation,
}

impl InstanceShape {
    /// Small enough for exhaustive phase enumeration.
    pub fn tiny() -> Self {
        Self {
            input_dim: (2, 4),
            hidden_layers: (2, 2),
            width: (3, 6),
            radius: (0.2, 1.0),
            activation: Activation::Relu,
        }
    }

    /// Up to three hidden layers of width up to 16 over up to 8 inputs.
    pub fn desk() -> Self {
        Self {
            input_dim: (2, 8),
            hidden_layers: (2, 3),
            width: (4, 16),
            radius: (0.05, 0.5),
            activation: Activation::Relu,
        }
    }
}

/// Dense layer with entries uniform on `±sqrt(3/fan_in)` (unit output
/// variance for unit inputs) and biases uniform on `±0.5`.
pub fn random_dense(rng: &mut impl Rng, rows: usize, cols: usize) -> Dense {
    let scale = (3.0 / cols as f64).sqrt();
    let weight = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    let bias = (0..rows).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Dense::new(rows, cols, weight, bias).expect("consistent dense dimensions")
}

pub fn random_network(
    rng: &mut impl Rng,
    input_dim: usize,
    hidden: &[usize],
    output_dim: usize,
    activation: Activation,
) -> Network {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(output_dim);
    let linears = dims
        .windows(2)
        .map(|w| LinearMap::Dense(random_dense(rng, w[1], w[0])))
        .collect();
    Network::new(linears, vec![activation; hidden.len()]).expect("alternating layers")
}

pub fn random_box(rng: &mut impl Rng, dim: usize, radius: (f64, f64)) -> InputDomain {
    let r = if radius.0 < radius.1 {
        rng.gen_range(radius.0..radius.1)
    } else {
        radius.0
    };
    let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    InputDomain::Box {
        lower: center.iter().map(|c| c - r).collect(),
        upper: center.iter().map(|c| c + r).collect(),
    }
}

/// A canonical single-output network with its input box.
#[derive(Clone, Debug)]
pub struct Instance {
    pub net: Network,
    pub domain: InputDomain,
}

pub fn random_instance(rng: &mut impl Rng, shape: &InstanceShape) -> Instance {
    let n0 = rng.gen_range(shape.input_dim.0..=shape.input_dim.1);
    let layers = rng.gen_range(shape.hidden_layers.0..=shape.hidden_layers.1);
    let hidden: Vec<usize> = (0..layers)
        .map(|_| rng.gen_range(shape.width.0..=shape.width.1))
        .collect();
    Instance {
        net: random_network(rng, n0, &hidden, 1, shape.activation),
        domain: random_box(rng, n0, shape.radius),
    }
}

/// A model paired with a property, ready to be written as files.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub model_name: String,
    pub net: Network,
    pub property: VerificationProperty,
    /// Exact minimum of the property's canonical network.
    pub minimum: f64,
}

/// Draws attempts per entry before giving up on a shape.
const MAX_ATTEMPTS: usize = 100;

/// Properties `f(x) + d ≥ 0` on random tiny ReLU networks. Entries alternate
/// between holding (exact minimum `+δ`) and failing (exact minimum `-δ`),
/// with `δ` a random fraction of the gap between the output at the box
/// center and the unshifted minimum, so failing entries usually need search
/// to find a counterexample.
pub fn tiny_suite(seed: u64, count: usize, shape: &InstanceShape) -> Result<Vec<SuiteEntry>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mut attempt = 0;
        let entry = loop {
            attempt += 1;
            if attempt > MAX_ATTEMPTS {
                return Err(Error::Unsupported(
                    "could not draw an enumerable instance for this shape".into(),
                ));
            }
            let inst = random_instance(&mut rng, shape);
            let Ok(ex) = exact_min(&inst.net, &inst.domain, None) else {
                continue;
            };
            let spread = inst.net.eval_scalar(&inst.domain.center())? - ex.value;
            if !ex.value.is_finite() || spread < 1e-3 {
                continue;
            }
            let delta = rng.gen_range(0.05..0.5) * spread;
            let holds = idx % 2 == 0;
            let d = if holds { -ex.value + delta } else { -ex.value - delta };
            let model_name = format!("m{idx:03}.json");
            let mut property = VerificationProperty::new(
                format!("p{idx:03}"),
                inst.domain.clone(),
                vec![OutputSpec { c: vec![1.0], d }],
            );
            property.model = Some(model_name.clone());
            break SuiteEntry {
                model_name,
                net: inst.net,
                property,
                minimum: if holds { delta } else { -delta },
            };
        };
        out.push(entry);
    }
    Ok(out)
}
