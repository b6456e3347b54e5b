//! Feedforward networks: linear maps interleaved with element-wise activations.
//!
//! A network with `n` linear layers has `n - 1` hidden activation layers.
//! Hidden layer `h` (zero based) holds the pre-activations `x̂_{h+1}`; the
//! solver modules index every per-layer vector this way.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix with a bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: weight.len(),
            });
        }
        if bias.len() != rows {
            return Err(Error::Dimension {
                expected: rows,
                got: bias.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            weight,
            bias,
        })
    }

    /// Builds from nested rows; every row must have the same length.
    pub fn from_rows(weight: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let rows = weight.len();
        let cols = weight.first().map_or(0, Vec::len);
        if let Some(bad) = weight.iter().position(|r| r.len() != cols) {
            return Err(Error::Parse(format!(
                "weight row {bad} has length {} but row 0 has {cols}",
                weight[bad].len()
            )));
        }
        Self::new(rows, cols, weight.concat(), bias)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.cols + j]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// 2-d convolution over a `(channels, height, width)` tensor flattened in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    kernel: Vec<f64>,
    bias: Vec<f64>,
    out_channels: usize,
    in_shape: [usize; 3],
    kernel_hw: [usize; 2],
    stride: usize,
    padding: usize,
    out_hw: [usize; 2],
}

impl Conv2d {
    /// `kernel` is indexed `[out][in][kh][kw]`, flattened row-major.
    pub fn new(
        kernel: Vec<f64>,
        out_channels: usize,
        kernel_hw: [usize; 2],
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
        in_shape: [usize; 3],
    ) -> Result<Self> {
        let [ic, ih, iw] = in_shape;
        let [kh, kw] = kernel_hw;
        let expected = out_channels * ic * kh * kw;
        if kernel.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: kernel.len(),
            });
        }
        if bias.len() != out_channels {
            return Err(Error::Dimension {
                expected: out_channels,
                got: bias.len(),
            });
        }
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::Parse("conv stride and kernel size must be positive".into()));
        }
        let (ph, pw) = (ih + 2 * padding, iw + 2 * padding);
        if ph < kh || pw < kw {
            return Err(Error::Parse(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        let out_hw = [(ph - kh) / stride + 1, (pw - kw) / stride + 1];
        Ok(Self {
            kernel,
            bias,
            out_channels,
            in_shape,
            kernel_hw,
            stride,
            padding,
            out_hw,
        })
    }

    pub fn in_shape(&self) -> [usize; 3] {
        self.in_shape
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_hw[0], self.out_hw[1]]
    }

    /// Visits every (output index, input index, kernel weight) triple with a valid input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, f64)) {
        let [ic, ih, iw] = self.in_shape;
        let [kh, kw] = self.kernel_hw;
        let [oh, ow] = self.out_hw;
        for o in 0..self.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out_idx = (o * oh + oy) * ow + ox;
                    for c in 0..ic {
                        for ky in 0..kh {
                            let y = (oy * self.stride + ky) as isize - self.padding as isize;
                            if y < 0 || y >= ih as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let x = (ox * self.stride + kx) as isize - self.padding as isize;
                                if x < 0 || x >= iw as isize {
                                    continue;
                                }
                                let in_idx = (c * ih + y as usize) * iw + x as usize;
                                let k = self.kernel[((o * ic + c) * kh + ky) * kw + kx];
                                f(out_idx, in_idx, k);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// A linear layer `x ↦ Wx + b`.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearMap {
    Dense(Dense),
    Conv2d(Conv2d),
}

impl LinearMap {
    pub fn in_dim(&self) -> usize {
        match self {
            LinearMap::Dense(d) => d.cols,
            LinearMap::Conv2d(c) => c.in_shape.iter().product(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearMap::Dense(d) => d.rows,
            LinearMap::Conv2d(c) => c.out_shape().iter().product(),
        }
    }

    /// Bias expanded to one entry per output.
    pub fn bias(&self) -> Vec<f64> {
        match self {
            LinearMap::Dense(d) => d.bias.clone(),
            LinearMap::Conv2d(c) => {
                let per = c.out_hw[0] * c.out_hw[1];
                c.bias.iter().flat_map(|&b| std::iter::repeat_n(b, per)).collect()
            }
        }
    }

    /// `Wx` without the bias.
    pub fn apply_linear(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim());
        match self {
            LinearMap::Dense(d) => (0..d.rows).map(|i| dot(d.row(i), x)).collect(),
            LinearMap::Conv2d(c) => {
                let mut out = vec![0.0; self.out_dim()];
                c.for_each_tap(|o, i, k| out[o] += k * x[i]);
                out
            }
        }
    }

    /// `Wx + b`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply_linear(x);
        for (yi, bi) in y.iter_mut().zip(self.bias()) {
            *yi += bi;
        }
        y
    }

    /// `|W| x` with the element-wise absolute value of the weights.
    pub fn apply_abs(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LinearMap::Dense(d) => (0..d.rows)
                .map(|i| d.row(i).iter().zip(x).map(|(w, v)| w.abs() * v).sum())
                .collect(),
            LinearMap::Conv2d(c) => {
                let mut out = vec![0.0; self.out_dim()];
                c.for_each_tap(|o, i, k| out[o] += k.abs() * x[i]);
                out
            }
        }
    }

    /// Euclidean norm of each row of `W`.
    pub fn row_norms(&self) -> Vec<f64> {
        match self {
            LinearMap::Dense(d) => (0..d.rows)
                .map(|i| d.row(i).iter().map(|w| w * w).sum::<f64>().sqrt())
                .collect(),
            LinearMap::Conv2d(c) => {
                let mut out = vec![0.0; self.out_dim()];
                c.for_each_tap(|o, _, k| out[o] += k * k);
                out.into_iter().map(f64::sqrt).collect()
            }
        }
    }

    /// `Wᵀv`; for convolutions this is the transposed convolution.
    pub fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.out_dim());
        let mut out = vec![0.0; self.in_dim()];
        match self {
            LinearMap::Dense(d) => {
                for (i, &vi) in v.iter().enumerate() {
                    if vi != 0.0 {
                        for (o, w) in out.iter_mut().zip(d.row(i)) {
                            *o += w * vi;
                        }
                    }
                }
            }
            LinearMap::Conv2d(c) => c.for_each_tap(|o, i, k| out[i] += k * v[o]),
        }
        out
    }

    /// Checked variant of [`LinearMap::adjoint`].
    pub fn adjoint_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.out_dim() {
            return Err(Error::Dimension {
                expected: self.out_dim(),
                got: v.len(),
            });
        }
        Ok(self.adjoint(v))
    }

    /// Explicit dense matrix; convolutions are expanded tap by tap.
    pub fn materialize(&self) -> Dense {
        match self {
            LinearMap::Dense(d) => d.clone(),
            LinearMap::Conv2d(c) => {
                let (rows, cols) = (self.out_dim(), self.in_dim());
                let mut w = vec![0.0; rows * cols];
                c.for_each_tap(|o, i, k| w[o * cols + i] += k);
                Dense {
                    rows,
                    cols,
                    weight: w,
                    bias: self.bias(),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear layers `W_1 … W_n` and the activations between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    linears: Vec<LinearMap>,
    activations: Vec<Activation>,
}

impl Network {
    pub fn new(linears: Vec<LinearMap>, activations: Vec<Activation>) -> Result<Self> {
        if linears.is_empty() {
            return Err(Error::Parse("network has no linear layer".into()));
        }
        if activations.len() + 1 != linears.len() {
            return Err(Error::Parse(format!(
                "{} linear layers need {} activations, found {}",
                linears.len(),
                linears.len() - 1,
                activations.len()
            )));
        }
        for (k, pair) in linears.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape {
                    layer: k + 1,
                    detail: format!(
                        "layer {} expects {} inputs but layer {} produces {}",
                        k + 1,
                        pair[1].in_dim(),
                        k,
                        pair[0].out_dim()
                    ),
                });
            }
        }
        Ok(Self { linears, activations })
    }

    pub fn linears(&self) -> &[LinearMap] {
        &self.linears
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// Linear layer `W_k`, one based as in `x̂_k = W_k x_{k-1} + b_k`.
    pub fn layer(&self, k: usize) -> &LinearMap {
        &self.linears[k - 1]
    }

    pub fn num_linear(&self) -> usize {
        self.linears.len()
    }

    pub fn num_hidden(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.linears[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.linears[self.linears.len() - 1].out_dim()
    }

    /// Widths `n_0 … n_n`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.linears.iter().map(LinearMap::out_dim))
            .collect()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.linears[..self.linears.len() - 1]
            .iter()
            .map(LinearMap::out_dim)
            .collect()
    }

    pub fn is_canonical(&self) -> bool {
        self.output_dim() == 1
    }

    pub fn is_relu(&self) -> bool {
        self.activations.iter().all(|&a| a == Activation::Relu)
    }

    /// Output vector `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        for (k, lin) in self.linears.iter().enumerate() {
            v = lin.apply(&v);
            if let Some(act) = self.activations.get(k) {
                v.iter_mut().for_each(|z| *z = act.eval(*z));
            }
        }
        v
    }

    /// Scalar output of a canonical network.
    pub fn eval_scalar(&self, x: &[f64]) -> Result<f64> {
        if !self.is_canonical() {
            return Err(Error::Dimension {
                expected: 1,
                got: self.output_dim(),
            });
        }
        Ok(self.forward(x)?[0])
    }

    /// Pre-activations `x̂_1 … x̂_n` at input `x`.
    pub fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.linears.len());
        let mut v = x.to_vec();
        for (k, lin) in self.linears.iter().enumerate() {
            let pre = lin.apply(&v);
            if let Some(act) = self.activations.get(k) {
                v = pre.iter().map(|&z| act.eval(z)).collect();
            }
            out.push(pre);
        }
        out
    }

    /// Folds the functional `cᵀf(x) + d` into the last layer, giving a
    /// single-output network whose value is the functional itself.
    pub fn canonicalize(&self, spec: &OutputSpec) -> Result<Network> {
        let last = &self.linears[self.linears.len() - 1];
        if spec.c.len() != last.out_dim() {
            return Err(Error::Dimension {
                expected: last.out_dim(),
                got: spec.c.len(),
            });
        }
        let row = last.adjoint(&spec.c);
        let bias = dot(&spec.c, &last.bias()) + spec.d;
        let merged = Dense::new(1, row.len(), row, vec![bias])?;
        let mut linears = self.linears.clone();
        *linears.last_mut().expect("non-empty") = LinearMap::Dense(merged);
        Network::new(linears, self.activations.clone())
    }

    /// Same network with every convolution replaced by its dense matrix.
    pub fn materialized(&self) -> Network {
        Network {
            linears: self.linears.iter().map(|l| LinearMap::Dense(l.materialize())).collect(),
            activations: self.activations.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_network()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_network(self)).expect("model serialization is infallible")
    }
}

/// Reads and validates a model file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Network::from_json(&text)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    layers: Vec<LayerSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LayerSpec {
    Dense {
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Conv2d {
        kernel: Vec<Vec<Vec<Vec<f64>>>>,
        bias: Vec<f64>,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        in_shape: [usize; 3],
    },
    Relu,
    Sigmoid,
}

fn one() -> usize {
    1
}

impl ModelFile {
    fn into_network(self) -> Result<Network> {
        let mut linears = Vec::new();
        let mut activations = Vec::new();
        let mut expect_linear = true;
        for (idx, layer) in self.layers.into_iter().enumerate() {
            let is_linear = matches!(layer, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. });
            if is_linear != expect_linear {
                return Err(Error::Shape {
                    layer: idx,
                    detail: if is_linear {
                        "two consecutive linear layers".into()
                    } else {
                        "activation must follow a linear layer".into()
                    },
                });
            }
            expect_linear = !expect_linear;
            match layer {
                LayerSpec::Dense { weight, bias } => {
                    let d = Dense::from_rows(&weight, bias).map_err(|e| Error::Shape {
                        layer: idx,
                        detail: e.to_string(),
                    })?;
                    linears.push(LinearMap::Dense(d));
                }
                LayerSpec::Conv2d {
                    kernel,
                    bias,
                    stride,
                    padding,
                    in_shape,
                } => {
                    let oc = kernel.len();
                    let ic = kernel.first().map_or(0, Vec::len);
                    let kh = kernel.first().and_then(|k| k.first()).map_or(0, Vec::len);
                    let kw = kernel
                        .first()
                        .and_then(|k| k.first())
                        .and_then(|k| k.first())
                        .map_or(0, Vec::len);
                    let ragged = kernel
                        .iter()
                        .any(|a| a.len() != ic || a.iter().any(|b| b.len() != kh || b.iter().any(|c| c.len() != kw)));
                    if ragged || ic != in_shape[0] {
                        return Err(Error::Shape {
                            layer: idx,
                            detail: format!("kernel is not a dense {oc}x{}x{kh}x{kw} tensor", in_shape[0]),
                        });
                    }
                    let flat: Vec<f64> = kernel.into_iter().flatten().flatten().flatten().collect();
                    let c =
                        Conv2d::new(flat, oc, [kh, kw], bias, stride, padding, in_shape).map_err(|e| Error::Shape {
                            layer: idx,
                            detail: e.to_string(),
                        })?;
                    linears.push(LinearMap::Conv2d(c));
                }
                LayerSpec::Relu => activations.push(Activation::Relu),
                LayerSpec::Sigmoid => activations.push(Activation::Sigmoid),
            }
        }
        if expect_linear {
            return Err(Error::Parse("model must end with a linear layer".into()));
        }
        // Report the file index of the layer whose input width disagrees.
        for k in 1..linears.len() {
            if linears[k - 1].out_dim() != linears[k].in_dim() {
                return Err(Error::Shape {
                    layer: 2 * k,
                    detail: format!(
                        "expects {} inputs but the previous linear layer produces {}",
                        linears[k].in_dim(),
                        linears[k - 1].out_dim()
                    ),
                });
            }
        }
        Network::new(linears, activations)
    }

    fn from_network(net: &Network) -> Self {
        let mut layers = Vec::new();
        for (k, lin) in net.linears.iter().enumerate() {
            layers.push(match lin {
                LinearMap::Dense(d) => LayerSpec::Dense {
                    weight: (0..d.rows).map(|i| d.row(i).to_vec()).collect(),
                    bias: d.bias.clone(),
                },
                LinearMap::Conv2d(c) => {
                    let [ic, _, _] = c.in_shape;
                    let [kh, kw] = c.kernel_hw;
                    let kernel = (0..c.out_channels)
                        .map(|o| {
                            (0..ic)
                                .map(|ci| {
                                    (0..kh)
                                        .map(|y| {
                                            let s = ((o * ic + ci) * kh + y) * kw;
                                            c.kernel[s..s + kw].to_vec()
                                        })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect();
                    LayerSpec::Conv2d {
                        kernel,
                        bias: c.bias.clone(),
                        stride: c.stride,
                        padding: c.padding,
                        in_shape: c.in_shape,
                    }
                }
            });
            if let Some(a) = net.activations.get(k) {
                layers.push(match a {
                    Activation::Relu => LayerSpec::Relu,
                    Activation::Sigmoid => LayerSpec::Sigmoid,
                });
            }
        }
        ModelFile { layers }
    }
}

/// The input set `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum InputDomain {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    L2 { center: Vec<f64>, eps: f64 },
}

impl InputDomain {
    pub fn validate(&self) -> Result<()> {
        match self {
            InputDomain::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::Dimension {
                        expected: lower.len(),
                        got: upper.len(),
                    });
                }
                if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
                    return Err(Error::InvalidInterval(format!(
                        "input {i}: lower {} > upper {}",
                        lower[i], upper[i]
                    )));
                }
                Ok(())
            }
            InputDomain::L2 { eps, .. } => {
                if !(*eps > 0.0) || !eps.is_finite() {
                    return Err(Error::InvalidInterval(format!("l2 radius {eps} must be positive")));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputDomain::Box { lower, .. } => lower.len(),
            InputDomain::L2 { center, .. } => center.len(),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            InputDomain::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            InputDomain::L2 { center, .. } => center.clone(),
        }
    }

    pub fn is_box(&self) -> bool {
        matches!(self, InputDomain::Box { .. })
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            InputDomain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            InputDomain::L2 { center, eps } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                r2.sqrt() <= eps + tol
            }
        }
    }

    /// Minimizer and value of `gᵀx` over the domain. Zero box coefficients
    /// take the midpoint; a zero direction on the ball takes the center.
    pub fn min_linear(&self, g: &[f64]) -> (Vec<f64>, f64) {
        match self {
            InputDomain::Box { lower, upper } => {
                let x: Vec<f64> = g
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&gi, (&l, &u))| {
                        if gi > 0.0 {
                            l
                        } else if gi < 0.0 {
                            u
                        } else {
                            0.5 * (l + u)
                        }
                    })
                    .collect();
                let v = dot(g, &x);
                (x, v)
            }
            InputDomain::L2 { center, eps } => {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return (center.clone(), 0.0);
                }
                let x: Vec<f64> = center.iter().zip(g).map(|(c, gi)| c - eps * gi / norm).collect();
                (x, dot(g, center) - eps * norm)
            }
        }
    }

    /// Interval hull of the domain, per coordinate.
    pub fn interval(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            InputDomain::Box { lower, upper } => (lower.clone(), upper.clone()),
            InputDomain::L2 { center, eps } => (
                center.iter().map(|c| c - eps).collect(),
                center.iter().map(|c| c + eps).collect(),
            ),
        }
    }
}

/// One functional `cᵀf(x) + d ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OutSpecs {
    One(OutputSpec),
    Many(Vec<OutputSpec>),
}

/// A property: the network satisfies every functional on the whole domain.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationProperty {
    pub id: String,
    /// Model file name relative to the models directory, if any.
    pub model: Option<String>,
    pub input: InputDomain,
    pub outputs: Vec<OutputSpec>,
}

#[derive(Serialize, Deserialize)]
struct PropertyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    input: InputDomain,
    out: OutSpecs,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PropertyList {
    One(PropertyFile),
    Many(Vec<PropertyFile>),
}

impl VerificationProperty {
    pub fn new(id: impl Into<String>, input: InputDomain, outputs: Vec<OutputSpec>) -> Self {
        Self {
            id: id.into(),
            model: None,
            input,
            outputs,
        }
    }

    /// Checks the property against a network's input and output widths.
    pub fn check(&self, net: &Network) -> Result<()> {
        self.input.validate()?;
        if self.input.dim() != net.input_dim() {
            return Err(Error::Dimension {
                expected: net.input_dim(),
                got: self.input.dim(),
            });
        }
        if self.outputs.is_empty() {
            return Err(Error::Parse(format!("property {} has no output functional", self.id)));
        }
        for o in &self.outputs {
            if o.c.len() != net.output_dim() {
                return Err(Error::Dimension {
                    expected: net.output_dim(),
                    got: o.c.len(),
                });
            }
        }
        Ok(())
    }

    /// One canonical network per functional.
    pub fn canonical_networks(&self, net: &Network) -> Result<Vec<Network>> {
        self.check(net)?;
        self.outputs.iter().map(|o| net.canonicalize(o)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("property serialization is infallible")
    }

    fn to_file(&self) -> PropertyFile {
        PropertyFile {
            id: Some(self.id.clone()),
            model: self.model.clone(),
            input: self.input.clone(),
            out: if self.outputs.len() == 1 {
                OutSpecs::One(self.outputs[0].clone())
            } else {
                OutSpecs::Many(self.outputs.clone())
            },
        }
    }

    fn from_file(f: PropertyFile, index: usize) -> Result<Self> {
        f.input.validate()?;
        let outputs = match f.out {
            OutSpecs::One(o) => vec![o],
            OutSpecs::Many(v) => v,
        };
        Ok(Self {
            id: f.id.unwrap_or_else(|| format!("p{index}")),
            model: f.model,
            input: f.input,
            outputs,
        })
    }

    /// Parses one property object or an array of them.
    pub fn list_from_json(text: &str) -> Result<Vec<Self>> {
        let parsed: PropertyList = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let files = match parsed {
            PropertyList::One(f) => vec![f],
            PropertyList::Many(v) => v,
        };
        files
            .into_iter()
            .enumerate()
            .map(|(i, f)| Self::from_file(f, i))
            .collect()
    }

    pub fn list_to_json(props: &[Self]) -> String {
        let files: Vec<PropertyFile> = props.iter().map(Self::to_file).collect();
        serde_json::to_string_pretty(&files).expect("property serialization is infallible")
    }
}

pub fn load_properties(path: impl AsRef<Path>) -> Result<Vec<VerificationProperty>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    VerificationProperty::list_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: &[&[f64]], b: &[f64]) -> LinearMap {
        let rows: Vec<Vec<f64>> = w.iter().map(|r| r.to_vec()).collect();
        LinearMap::Dense(Dense::from_rows(&rows, b.to_vec()).unwrap())
    }

    #[test]
    fn loads_small_dense_model() {
        let text = r#"{"layers":[
            {"type":"dense","weight":[[1,0],[0,1]],"bias":[0,0]},
            {"type":"relu"},
            {"type":"dense","weight":[[1,1]],"bias":[0]}]}"#;
        let net = Network::from_json(text).unwrap();
        assert_eq!(net.widths(), vec![2, 2, 1]);
        let again = Network::from_json(&net.to_json()).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn row_length_mismatch_names_layer() {
        let text = r#"{"layers":[
            {"type":"dense","weight":[[1,0],[0,1]],"bias":[0,0]},
            {"type":"relu"},
            {"type":"dense","weight":[[1,1,1]],"bias":[0]}]}"#;
        match Network::from_json(text) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn conv_output_shape() {
        let text = r#"{"layers":[
            {"type":"conv2d","kernel":[[[[1,2],[3,4]]]],"bias":[0.5],"stride":2,"padding":0,"in_shape":[1,4,4]}]}"#;
        let net = Network::from_json(text).unwrap();
        match &net.linears()[0] {
            LinearMap::Conv2d(c) => assert_eq!(c.out_shape(), [1, 2, 2]),
            _ => unreachable!(),
        }
        assert_eq!(net.output_dim(), 4);
    }

    #[test]
    fn relu_forward_and_affine() {
        let net = Network::new(
            vec![dense(&[&[1.0]], &[0.0]), dense(&[&[1.0]], &[0.0])],
            vec![Activation::Relu],
        )
        .unwrap();
        assert_eq!(net.eval_scalar(&[-3.0]).unwrap(), 0.0);
        let aff = Network::new(vec![dense(&[&[2.0]], &[-1.0])], vec![]).unwrap();
        assert_eq!(aff.eval_scalar(&[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn adjoint_examples() {
        let l = dense(&[&[1.0, -1.0]], &[0.0]);
        assert_eq!(l.adjoint_apply(&[2.0]).unwrap(), vec![2.0, -2.0]);
        assert_eq!(l.adjoint_apply(&[0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(l.adjoint_apply(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn canonicalize_margin_and_constant() {
        let net = Network::new(
            vec![
                dense(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]),
                dense(&[&[1.0, 2.0], &[3.0, -1.0]], &[1.0, 0.5]),
            ],
            vec![Activation::Relu],
        )
        .unwrap();
        let margin = net
            .canonicalize(&OutputSpec {
                c: vec![1.0, -1.0],
                d: 0.0,
            })
            .unwrap();
        let x = [0.3, 0.7];
        let y = net.forward(&x).unwrap();
        assert!((margin.eval_scalar(&x).unwrap() - (y[0] - y[1])).abs() < 1e-12);
        let constant = net
            .canonicalize(&OutputSpec {
                c: vec![0.0, 0.0],
                d: 1.0,
            })
            .unwrap();
        assert_eq!(constant.eval_scalar(&x).unwrap(), 1.0);
    }

    #[test]
    fn property_parsing_accepts_object_and_array() {
        let one = r#"{"input":{"type":"box","lower":[0],"upper":[1]},"out":{"c":[1],"d":0}}"#;
        let props = VerificationProperty::list_from_json(one).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].id, "p0");
        let many = r#"[{"id":"a","input":{"type":"l2","center":[0,0],"eps":0.1},
                       "out":[{"c":[1,-1]},{"c":[-1,1],"d":2}]}]"#;
        let props = VerificationProperty::list_from_json(many).unwrap();
        assert_eq!(props[0].outputs.len(), 2);
        assert_eq!(props[0].outputs[1].d, 2.0);
        let back = VerificationProperty::list_from_json(&VerificationProperty::list_to_json(&props)).unwrap();
        assert_eq!(props, back);
    }

    #[test]
    fn invalid_domains_rejected() {
        let bad_box = r#"{"input":{"type":"box","lower":[1],"upper":[0]},"out":{"c":[1]}}"#;
        assert!(VerificationProperty::list_from_json(bad_box).is_err());
        let bad_ball = r#"{"input":{"type":"l2","center":[0],"eps":0},"out":{"c":[1]}}"#;
        assert!(VerificationProperty::list_from_json(bad_ball).is_err());
    }
}
