//! One-hidden-layer feed-forward networks `y = W2·φ(W1·x + b1) + b2` with
//! exact manual backpropagation and an Adam optimizer.
//!
//! Weights are stored row-major in flat vectors: `w1[h * in_dim + i]` is the
//! weight from input `i` to hidden unit `h`, `w2[o * hidden_dim + h]` the
//! weight from hidden unit `h` to output `o`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "brunovsky-network";
const VERSION: u32 = 1;

/// Elementwise hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
    /// Identity map; turns the network into an affine map. Used for analytic
    /// configurations and tests.
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
            Activation::Tanh => s.tanh(),
            Activation::Linear => s,
        }
    }

    /// Derivative expressed through the activation output `a = φ(s)`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::invalid(
                "activation",
                format!("unknown activation `{other}` (expected sigmoid, tanh or linear)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one forward pass, sufficient for [`Network::backward`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Hidden activations `φ(W1·x + b1)`.
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// Parameter-shaped buffer, used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn fill_zero(&mut self) {
        for buf in self.buffers_mut() {
            buf.fill(0.0);
        }
    }

    pub fn buffers(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (dst, src) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn is_compatible(&self, net: &Network) -> bool {
        self.w1.len() == net.w1.len()
            && self.b1.len() == net.b1.len()
            && self.w2.len() == net.w2.len()
            && self.b2.len() == net.b2.len()
    }
}

impl Network {
    /// An all-zero network of the given shape.
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            hidden_dim,
            out_dim,
            activation,
            w1: vec![0.0; hidden_dim * in_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; out_dim * hidden_dim],
            b2: vec![0.0; out_dim],
        }
    }

    /// Xavier-uniform weights and zero biases, reproducible from `seed`.
    pub fn init(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        for (name, d) in [("in_dim", in_dim), ("hidden_dim", hidden_dim), ("out_dim", out_dim)] {
            if d == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(in_dim, hidden_dim, out_dim, activation);
        let bound1 = xavier_bound(in_dim, hidden_dim);
        net.w1
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound1..bound1));
        let bound2 = xavier_bound(hidden_dim, out_dim);
        net.w2
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound2..bound2));
        Ok(net)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
    }

    pub(crate) fn param_buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let mut cache = ForwardCache::default();
        self.forward_into(x, &mut cache)?;
        Ok((cache.output.clone(), cache))
    }

    /// Output only, without keeping the cache.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Forward pass reusing the buffers of `cache`.
    pub fn forward_into(&self, x: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        cache.input.clear();
        cache.input.extend_from_slice(x);
        cache.hidden.resize(self.hidden_dim, 0.0);
        for (h, a) in cache.hidden.iter_mut().enumerate() {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let s = row.iter().zip(x).fold(self.b1[h], |acc, (w, xi)| acc + w * xi);
            *a = self.activation.apply(s);
        }
        cache.output.resize(self.out_dim, 0.0);
        for (o, y) in cache.output.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            *y = row
                .iter()
                .zip(&cache.hidden)
                .fold(self.b2[o], |acc, (w, a)| acc + w * a);
        }
        Ok(())
    }

    /// Gradients of `⟨dy, y⟩` with respect to all parameters and the input.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let mut dx = vec![0.0; self.in_dim];
        let mut scratch = Vec::new();
        self.backward_accumulate(cache, dy, &mut grads, &mut dx, &mut scratch)?;
        Ok((grads, dx))
    }

    /// Like [`Network::backward`], but adds the parameter gradients into
    /// `grads` and overwrites `dx`. `scratch` is a reusable hidden-size buffer.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        dy: &[f64],
        grads: &mut Gradients,
        dx: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> Result<()> {
        if cache.input.len() != self.in_dim
            || cache.hidden.len() != self.hidden_dim
            || cache.output.len() != self.out_dim
        {
            return Err(Error::invalid(
                "forward cache",
                "stale or belongs to a network of a different shape",
            ));
        }
        if dy.len() != self.out_dim {
            return Err(Error::Dimension {
                context: "network output cotangent",
                expected: self.out_dim,
                actual: dy.len(),
            });
        }
        if dx.len() != self.in_dim || !grads.is_compatible(self) {
            return Err(Error::invalid("gradient buffers", "shape mismatch"));
        }
        let nh = self.hidden_dim;
        let ni = self.in_dim;

        // d/dW2 and the cotangent at the hidden layer
        scratch.clear();
        scratch.resize(nh, 0.0);
        for (o, &g) in dy.iter().enumerate() {
            grads.b2[o] += g;
            if g == 0.0 {
                continue;
            }
            let w_row = &self.w2[o * nh..(o + 1) * nh];
            let gw_row = &mut grads.w2[o * nh..(o + 1) * nh];
            for h in 0..nh {
                gw_row[h] += g * cache.hidden[h];
                scratch[h] += g * w_row[h];
            }
        }
        // through the activation
        for (h, d) in scratch.iter_mut().enumerate() {
            *d *= self.activation.derivative_from_output(cache.hidden[h]);
        }
        dx.fill(0.0);
        for h in 0..nh {
            let d = scratch[h];
            grads.b1[h] += d;
            if d == 0.0 {
                continue;
            }
            let w_row = &self.w1[h * ni..(h + 1) * ni];
            let gw_row = &mut grads.w1[h * ni..(h + 1) * ni];
            for i in 0..ni {
                gw_row[i] += d * cache.input[i];
                dx[i] += d * w_row[i];
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        if self.params().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("network parameters"));
        }
        serde_json::to_string_pretty(&NetworkDoc::from(self))
            .map_err(|e| Error::json("<network>", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(s).map_err(|e| Error::json("<network>", e))?;
        doc.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Versioned on-disk form of a [`Network`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub format: String,
    pub version: u32,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl From<&Network> for NetworkDoc {
    fn from(net: &Network) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            in_dim: net.in_dim,
            hidden_dim: net.hidden_dim,
            out_dim: net.out_dim,
            activation: net.activation,
            w1: net.w1.clone(),
            b1: net.b1.clone(),
            w2: net.w2.clone(),
            b2: net.b2.clone(),
        }
    }
}

impl TryFrom<NetworkDoc> for Network {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        if doc.format != FORMAT {
            return Err(Error::invalid("format", format!("expected `{FORMAT}`, got `{}`", doc.format)));
        }
        if doc.version != VERSION {
            return Err(Error::invalid(
                "version",
                format!("unsupported network version {}", doc.version),
            ));
        }
        let shapes = [
            ("w1", doc.w1.len(), doc.hidden_dim * doc.in_dim),
            ("b1", doc.b1.len(), doc.hidden_dim),
            ("w2", doc.w2.len(), doc.out_dim * doc.hidden_dim),
            ("b2", doc.b2.len(), doc.out_dim),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::invalid(name, format!("expected {want} entries, got {got}")));
            }
        }
        Ok(Network {
            in_dim: doc.in_dim,
            hidden_dim: doc.hidden_dim,
            out_dim: doc.out_dim,
            activation: doc.activation,
            w1: doc.w1,
            b1: doc.b1,
            w2: doc.w2,
            b2: doc.b2,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Moment estimates and step counter for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            config,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any parameter.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.is_compatible(net) || !state.m.is_compatible(net) || !state.v.is_compatible(net) {
        return Err(Error::invalid("adam", "gradient or moment shape mismatch"));
    }
    if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::non_finite(format!("gradient entry {pos}")));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let bufs = net
        .param_buffers_mut()
        .into_iter()
        .zip(grads.buffers())
        .zip(state.m.buffers_mut())
        .zip(state.v.buffers_mut());
    for (((p, g), m), v) in bufs {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
