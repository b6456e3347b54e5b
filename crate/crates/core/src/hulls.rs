//! Convex hulls of scalar activations over an interval.
//!
//! The ReLU hull is the triangle with vertices `(l,0)`, `(0,0)`, `(u,u)`.
//! The sigmoid hull is bounded above by a concave envelope and below by a
//! convex one; each envelope is a chord, the sigmoid itself, or a chord
//! glued to the sigmoid at a tangent point.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::bounds::{classify, NeuronClass, FIXED_WIDTH};
use crate::error::{Error, Result};
use crate::network::sigmoid;

/// Upper end of the bisection bracket for tangent points.
pub const TANGENT_BRACKET: f64 = 500.0;

/// Quantization step of the tangent-point cache key.
pub const TANGENT_CACHE_STEP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluHull {
    pub class: NeuronClass,
    /// Slope `u/(u-l)` of the upper face; meaningful for ambiguous neurons.
    pub slope: f64,
    /// Intercept `-lu/(u-l)` of the upper face.
    pub intercept: f64,
}

pub fn relu_hull(l: f64, u: f64) -> Result<ReluHull> {
    if !(l <= u) {
        return Err(Error::InvalidInterval(format!("l = {l} > u = {u}")));
    }
    let class = classify(l, u);
    let (slope, intercept) = match class {
        NeuronClass::Ambiguous => (u / (u - l), -l * u / (u - l)),
        NeuronClass::Passing => (1.0, 0.0),
        NeuronClass::Blocking => (0.0, 0.0),
    };
    Ok(ReluHull {
        class,
        slope,
        intercept,
    })
}

/// Vertices of the ambiguous triangle, in tie-breaking order.
pub fn relu_vertices(l: f64, u: f64) -> [(f64, f64); 3] {
    [(l, 0.0), (0.0, 0.0), (u, u)]
}

/// Distance of `(x̂, x)` outside the ReLU hull on `[l, u]`; zero when inside.
pub fn relu_hull_violation(l: f64, u: f64, xh: f64, x: f64) -> f64 {
    let box_viol = (l - xh).max(xh - u).max(0.0);
    let v = match classify(l, u) {
        NeuronClass::Passing => (x - xh).abs(),
        NeuronClass::Blocking => x.abs(),
        NeuronClass::Ambiguous => {
            let upper = u / (u - l) * (xh - l);
            (-x).max(xh - x).max(x - upper).max(0.0)
        }
    };
    v.max(box_viol)
}

pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Logit, the inverse of the sigmoid on `(0, 1)`.
pub fn logit(s: f64) -> f64 {
    (s / (1.0 - s)).ln()
}

fn tangent_gap(t: f64, l: f64, sl: f64) -> f64 {
    sigmoid_prime(t) * (t - l) - sigmoid(t) + sl
}

fn tangent_cache() -> &'static Mutex<HashMap<i64, (u64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<i64, (u64, f64)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Point `t > 0` where the line through `(l, σ(l))` touches the sigmoid.
pub fn sigmoid_tangent_point(l: f64) -> Result<f64> {
    if !(l < 0.0) {
        return Err(Error::InvalidInterval(format!("tangent point needs l < 0, got {l}")));
    }
    let key = (l / TANGENT_CACHE_STEP).round() as i64;
    // Entries remember the exact l so a hit is bit-identical to a fresh solve.
    if let Some(&(bits, t)) = tangent_cache().lock().expect("cache lock").get(&key) {
        if bits == l.to_bits() {
            return Ok(t);
        }
    }
    let t = bisect_tangent(l)?;
    tangent_cache()
        .lock()
        .expect("cache lock")
        .insert(key, (l.to_bits(), t));
    Ok(t)
}

fn bisect_tangent(l: f64) -> Result<f64> {
    let sl = sigmoid(l);
    let (mut lo, mut hi) = (0.0_f64, TANGENT_BRACKET);
    // The gap decreases on (0, ∞): non-negative at 0, negative at the bracket end.
    if tangent_gap(hi, l, sl) >= 0.0 {
        return Err(Error::InvalidInterval(format!(
            "no tangent point in (0, {TANGENT_BRACKET}] for l = {l}"
        )));
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tangent_gap(mid, l, sl) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (glo, ghi) = (tangent_gap(lo, l, sl).abs(), tangent_gap(hi, l, sl).abs());
    Ok(if glo <= ghi { lo } else { hi })
}

/// One piece of a sigmoid envelope over `[from, to]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piece {
    /// Straight segment between the sigmoid values at both ends.
    Chord { from: f64, to: f64 },
    /// The sigmoid itself.
    Curve { from: f64, to: f64 },
}

impl Piece {
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Piece::Chord { from, to } | Piece::Curve { from, to } => (from, to),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Piece::Curve { .. } => sigmoid(x),
            Piece::Chord { from, to } => {
                if to - from < FIXED_WIDTH {
                    return sigmoid(from);
                }
                let (a, b) = (sigmoid(from), sigmoid(to));
                a + (b - a) * (x - from) / (to - from)
            }
        }
    }
}

/// Piecewise envelope, pieces ordered left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub pieces: Vec<Piece>,
}

impl Envelope {
    pub fn eval(&self, x: f64) -> f64 {
        let piece = self
            .pieces
            .iter()
            .find(|p| x <= p.range().1)
            .unwrap_or_else(|| self.pieces.last().expect("envelope has a piece"));
        piece.eval(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmoidHull {
    pub l: f64,
    pub u: f64,
    /// Concave envelope.
    pub upper: Envelope,
    /// Convex envelope.
    pub lower: Envelope,
    /// Tangent point of the upper envelope, when it has two pieces.
    pub upper_split: Option<f64>,
    pub lower_split: Option<f64>,
}

impl SigmoidHull {
    pub fn violation(&self, xh: f64, x: f64) -> f64 {
        let box_viol = (self.l - xh).max(xh - self.u).max(0.0);
        let xc = xh.clamp(self.l, self.u);
        let v = (x - self.upper.eval(xc)).max(self.lower.eval(xc) - x).max(0.0);
        v.max(box_viol)
    }
}

/// Upper envelope on `[l, u]` and its tangent point, if any.
fn upper_envelope(l: f64, u: f64) -> Result<(Envelope, Option<f64>)> {
    if u - l < FIXED_WIDTH || l >= 0.0 {
        return Ok((
            Envelope {
                pieces: vec![Piece::Curve { from: l, to: u }],
            },
            None,
        ));
    }
    let chord = (sigmoid(u) - sigmoid(l)) / (u - l);
    if sigmoid_prime(u) >= chord {
        return Ok((
            Envelope {
                pieces: vec![Piece::Chord { from: l, to: u }],
            },
            None,
        ));
    }
    let t = sigmoid_tangent_point(l)?.min(u);
    Ok((
        Envelope {
            pieces: vec![Piece::Chord { from: l, to: t }, Piece::Curve { from: t, to: u }],
        },
        Some(t),
    ))
}

pub fn sigmoid_hull(l: f64, u: f64) -> Result<SigmoidHull> {
    if !(l <= u) {
        return Err(Error::InvalidInterval(format!("l = {l} > u = {u}")));
    }
    let (upper, upper_split) = upper_envelope(l, u)?;
    // σ(-x) = 1 - σ(x): the lower envelope mirrors the upper one on [-u, -l].
    let (mirror, mirror_split) = upper_envelope(-u, -l)?;
    let lower_pieces = mirror
        .pieces
        .iter()
        .rev()
        .map(|p| match *p {
            Piece::Chord { from, to } => Piece::Chord { from: -to, to: -from },
            Piece::Curve { from, to } => Piece::Curve { from: -to, to: -from },
        })
        .collect();
    Ok(SigmoidHull {
        l,
        u,
        upper,
        lower: Envelope { pieces: lower_pieces },
        upper_split,
        lower_split: mirror_split.map(|t| -t),
    })
}

/// Minimizer and value of `c_lin·x + c_sig·σ(x)` over `[l, u]`.
pub fn sigmoid_pk_min(c_lin: f64, c_sig: f64, l: f64, u: f64) -> (f64, f64) {
    let f = |x: f64| c_lin * x + c_sig * sigmoid(x);
    if c_sig == 0.0 {
        let x = if c_lin < 0.0 { u } else { l };
        return (x, f(x));
    }
    let mut cands = vec![l];
    let disc = 1.0 + 4.0 * c_lin / c_sig;
    if disc >= 0.0 {
        let r = disc.sqrt();
        let mut stationary: Vec<f64> = [(1.0 - r) / 2.0, (1.0 + r) / 2.0]
            .into_iter()
            .filter(|&s| s > 0.0 && s < 1.0)
            .map(logit)
            .filter(|&x| x >= l && x <= u)
            .collect();
        stationary.sort_by(f64::total_cmp);
        cands.extend(stationary);
    }
    cands.push(u);
    first_min(cands.into_iter().map(|x| (x, f(x))))
}

fn first_min(it: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    for (x, v) in it {
        if v < best.1 || best.0.is_nan() {
            best = (x, v);
        }
    }
    best
}

/// Minimizer `(x̂, x)` and value of `a·x̂ - g·x` over the sigmoid hull.
pub fn sigmoid_block_min(a: f64, g: f64, hull: &SigmoidHull) -> (f64, f64, f64) {
    if g == 0.0 {
        let xh = if a < 0.0 { hull.u } else { hull.l };
        return (xh, hull.lower.eval(xh), a * xh);
    }
    // g > 0 pushes x to the upper envelope, g < 0 to the lower one.
    let env = if g > 0.0 { &hull.upper } else { &hull.lower };
    let mut best: Option<(f64, f64, f64)> = None;
    for piece in &env.pieces {
        let (from, to) = piece.range();
        let cand = match piece {
            Piece::Curve { .. } => {
                let (x, _) = sigmoid_pk_min(a, -g, from, to);
                vec![x]
            }
            Piece::Chord { .. } => vec![from, to],
        };
        for xh in cand {
            let x = piece.eval(xh);
            let v = a * xh - g * x;
            if best.is_none_or(|b| v < b.2) {
                best = Some((xh, x, v));
            }
        }
    }
    best.expect("envelope has a piece")
}

/// Lines `lower(x) = s_l·x + c_l ≤ σ(x) ≤ s_u·x + c_u` valid on `[l, u]`,
/// each touching the corresponding envelope.
pub fn sigmoid_linear_bounds(l: f64, u: f64) -> Result<(f64, f64, f64, f64)> {
    let (su, cu) = upper_line(l, u)?;
    let (sm, cm) = upper_line(-u, -l)?;
    Ok((sm, 1.0 - cm, su, cu))
}

fn upper_line(l: f64, u: f64) -> Result<(f64, f64)> {
    if u - l < FIXED_WIDTH {
        return Ok((0.0, sigmoid(u)));
    }
    let (env, split) = upper_envelope(l, u)?;
    Ok(match (env.pieces[0], split) {
        (Piece::Curve { .. }, _) => {
            let m = 0.5 * (l + u);
            let s = sigmoid_prime(m);
            (s, sigmoid(m) - s * m)
        }
        (Piece::Chord { from, to }, _) => {
            let s = (sigmoid(to) - sigmoid(from)) / (to - from);
            (s, sigmoid(from) - s * from)
        }
    })
}
