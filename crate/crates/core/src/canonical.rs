//! The Brunovsky shift system and the four-network auto-encoder that maps a
//! plant into it.
//!
//! `Φx` / `Φx⁻¹` encode and decode the state, `Φu` / `Φu⁻¹` the input given
//! the current state. The identified model is
//! `x⁺ = Φx⁻¹(σ(Φx(x), Φu(x, u)))`, where `σ` shifts the state register by
//! one slot and pushes the new input into the last slot.
//!
//! The networks operate in normalized coordinates. The public transforms
//! (`encode_state`, `decode_input`, ...) take and return physical units and
//! apply the auto-encoder's [`Normalization`] internally; the training
//! functions take datasets that are already normalized.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{Dataset, Normalization, Sample};
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, ForwardCache, Gradients, Network, NetworkDoc};

const CHECKPOINT_FORMAT: &str = "brunovsky-autoencoder";
const CHECKPOINT_VERSION: u32 = 1;

/// Training aborts once the total loss exceeds this value.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// `σ(z, v)`: drop `z[0]`, shift the rest down and append `v`.
pub fn shift(z: &[f64], v: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    shift_into(z, v, &mut out);
    out
}

fn shift_into(z: &[f64], v: f64, out: &mut Vec<f64>) {
    out.clear();
    if let Some(rest) = z.get(1..) {
        out.extend_from_slice(rest);
    }
    out.push(v);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha1, self.alpha2, self.alpha3];
        if w.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("loss_weights", "must be finite and nonnegative"));
        }
        if w.iter().all(|&a| a == 0.0) {
            return Err(Error::invalid("loss_weights", "at least one weight must be positive"));
        }
        Ok(())
    }
}

/// The four loss terms and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    /// `‖x − Φx⁻¹(Φx(x))‖²` (mean)
    pub rec_x: f64,
    /// `‖u − Φu⁻¹(x, Φu(x, u))‖²` (mean)
    pub rec_u: f64,
    /// `‖x⁺ − Φx⁻¹(σ(Φx(x), Φu(x, u)))‖²` (mean)
    pub pred_1: f64,
    /// `‖Φx(x⁺) − σ(Φx(x), Φu(x, u))‖²` (mean)
    pub pred_2: f64,
    pub total: f64,
}

impl LossReport {
    fn weighted(mut self, w: &LossWeights) -> Self {
        self.total = w.alpha1 * self.rec_x + w.alpha2 * self.rec_u + w.alpha3 * (self.pred_1 + self.pred_2);
        self
    }

    fn check_finite(&self) -> Result<()> {
        let terms = [
            ("L_rec_x", self.rec_x),
            ("L_rec_u", self.rec_u),
            ("L_pred_1", self.pred_1),
            ("L_pred_2", self.pred_2),
        ];
        match terms.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::non_finite(format!("loss term {name}"))),
            None => Ok(()),
        }
    }
}

/// Gradients for all four networks.
#[derive(Debug, Clone, PartialEq)]
pub struct AeGradients {
    pub phi_x: Gradients,
    pub phi_x_inv: Gradients,
    pub phi_u: Gradients,
    pub phi_u_inv: Gradients,
}

impl AeGradients {
    pub fn zeros_like(ae: &AutoEncoder) -> Self {
        Self {
            phi_x: Gradients::zeros_like(&ae.phi_x),
            phi_x_inv: Gradients::zeros_like(&ae.phi_x_inv),
            phi_u: Gradients::zeros_like(&ae.phi_u),
            phi_u_inv: Gradients::zeros_like(&ae.phi_u_inv),
        }
    }

    fn fill_zero(&mut self) {
        self.phi_x.fill_zero();
        self.phi_x_inv.fill_zero();
        self.phi_u.fill_zero();
        self.phi_u_inv.fill_zero();
    }

    pub fn nets(&self) -> [&Gradients; 4] {
        [&self.phi_x, &self.phi_x_inv, &self.phi_u, &self.phi_u_inv]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoder {
    /// `Φx: ℝⁿ → ℝⁿ`
    pub phi_x: Network,
    /// `Φx⁻¹: ℝⁿ → ℝⁿ`
    pub phi_x_inv: Network,
    /// `Φu: ℝⁿ⁺¹ → ℝ`, input `(x, u)`
    pub phi_u: Network,
    /// `Φu⁻¹: ℝⁿ⁺¹ → ℝ`, input `(x, v)`
    pub phi_u_inv: Network,
    pub normalization: Normalization,
}

impl AutoEncoder {
    /// Four freshly initialized networks. The networks are seeded from
    /// consecutive values starting at `seed`.
    pub fn new(
        n: usize,
        hidden: usize,
        activation: Activation,
        seed: u64,
        normalization: Normalization,
    ) -> Result<Self> {
        if normalization.dim() != n {
            return Err(Error::Dimension {
                context: "auto-encoder normalization",
                expected: n,
                actual: normalization.dim(),
            });
        }
        normalization.validate()?;
        Ok(Self {
            phi_x: Network::init(n, hidden, n, activation, seed)?,
            phi_x_inv: Network::init(n, hidden, n, activation, seed.wrapping_add(1))?,
            phi_u: Network::init(n + 1, hidden, 1, activation, seed.wrapping_add(2))?,
            phi_u_inv: Network::init(n + 1, hidden, 1, activation, seed.wrapping_add(3))?,
            normalization,
        })
    }

    /// Assemble from existing networks, checking the dimension wiring.
    pub fn from_networks(
        phi_x: Network,
        phi_x_inv: Network,
        phi_u: Network,
        phi_u_inv: Network,
        normalization: Normalization,
    ) -> Result<Self> {
        let n = phi_x.in_dim();
        let wiring = [
            ("phi_x", phi_x.in_dim(), phi_x.out_dim(), n, n),
            ("phi_x_inv", phi_x_inv.in_dim(), phi_x_inv.out_dim(), n, n),
            ("phi_u", phi_u.in_dim(), phi_u.out_dim(), n + 1, 1),
            ("phi_u_inv", phi_u_inv.in_dim(), phi_u_inv.out_dim(), n + 1, 1),
        ];
        for (name, i, o, want_i, want_o) in wiring {
            if i != want_i || o != want_o {
                return Err(Error::invalid(
                    name,
                    format!("expected {want_i}→{want_o}, got {i}→{o}"),
                ));
            }
        }
        if normalization.dim() != n {
            return Err(Error::Dimension {
                context: "auto-encoder normalization",
                expected: n,
                actual: normalization.dim(),
            });
        }
        Ok(Self {
            phi_x,
            phi_x_inv,
            phi_u,
            phi_u_inv,
            normalization,
        })
    }

    /// Linear networks with `Φx = Φx⁻¹ = id`, `Φu(x, u) = u` and
    /// `Φu⁻¹(x, v) = v`: the exact transformation of a plant that already is
    /// a shift register.
    pub fn identity(n: usize) -> Self {
        fn select(n_in: usize, n_out: usize, pick: &[usize]) -> Network {
            let hidden = pick.len();
            let mut net = Network::zeros(n_in, hidden, n_out, Activation::Linear);
            for (h, &i) in pick.iter().enumerate() {
                net.w1[h * n_in + i] = 1.0;
            }
            for o in 0..n_out {
                net.w2[o * hidden + o] = 1.0;
            }
            net
        }
        let states: Vec<usize> = (0..n).collect();
        Self {
            phi_x: select(n, n, &states),
            phi_x_inv: select(n, n, &states),
            phi_u: select(n + 1, 1, &[n]),
            phi_u_inv: select(n + 1, 1, &[n]),
            normalization: Normalization::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.phi_x.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.phi_x.hidden_dim()
    }

    pub fn activation(&self) -> Activation {
        self.phi_x.activation()
    }

    fn check_state(&self, context: &'static str, x: &[f64]) -> Result<()> {
        if x.len() == self.n() {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected: self.n(),
                actual: x.len(),
            })
        }
    }

    /// `z = Φx(x)`
    pub fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state("encode_state", x)?;
        self.phi_x.eval(&self.normalization.normalize_state(x))
    }

    /// `x = Φx⁻¹(z)`
    pub fn decode_state(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_state("decode_state", z)?;
        let xn = self.phi_x_inv.eval(z)?;
        Ok(self.normalization.denormalize_state(&xn))
    }

    /// `v = Φu(x, u)`
    pub fn encode_input(&self, x: &[f64], u: f64) -> Result<f64> {
        self.check_state("encode_input", x)?;
        let mut input = self.normalization.normalize_state(x);
        input.push(self.normalization.normalize_input(u));
        Ok(self.phi_u.eval(&input)?[0])
    }

    /// `u = Φu⁻¹(x, v)`
    pub fn decode_input(&self, x: &[f64], v: f64) -> Result<f64> {
        self.check_state("decode_input", x)?;
        let mut input = self.normalization.normalize_state(x);
        input.push(v);
        let un = self.phi_u_inv.eval(&input)?[0];
        Ok(self.normalization.denormalize_input(un))
    }

    /// One step of the identified model in physical units.
    pub fn predict_step(&self, x: &[f64], u: f64) -> Result<Vec<f64>> {
        let z = self.encode_state(x)?;
        let v = self.encode_input(x, u)?;
        self.decode_state(&shift(&z, v))
    }

    /// Reconstructions `(Φx⁻¹(Φx(x)), Φu⁻¹(x, Φu(x, u)))` in physical units.
    pub fn reconstruct(&self, x: &[f64], u: f64) -> Result<(Vec<f64>, f64)> {
        let x_hat = self.decode_state(&self.encode_state(x)?)?;
        let u_hat = self.decode_input(x, self.encode_input(x, u)?)?;
        Ok((x_hat, u_hat))
    }

    fn nets_mut(&mut self) -> [&mut Network; 4] {
        [
            &mut self.phi_x,
            &mut self.phi_x_inv,
            &mut self.phi_u,
            &mut self.phi_u_inv,
        ]
    }
}

/// Iterate the identified model from `x0` over a feed-forward input sequence.
pub fn predict_rollout(ae: &AutoEncoder, x0: &[f64], inputs: &[f64]) -> Result<Vec<Vec<f64>>> {
    ae.check_state("predict_rollout", x0)?;
    let mut traj = Vec::with_capacity(inputs.len() + 1);
    traj.push(x0.to_vec());
    for (k, &u) in inputs.iter().enumerate() {
        let next = ae
            .predict_step(&traj[k], u)
            .map_err(|e| Error::at_step(k, e))?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::at_step(k, Error::non_finite("predicted state")));
        }
        traj.push(next);
    }
    Ok(traj)
}

/// Reusable buffers for one sample of the composite loss.
#[derive(Default)]
struct LossWorkspace {
    c_x: ForwardCache,
    c_xplus: ForwardCache,
    c_u: ForwardCache,
    c_rec_x: ForwardCache,
    c_rec_u: ForwardCache,
    c_pred: ForwardCache,
    input: Vec<f64>,
    shifted: Vec<f64>,
    dz: Vec<f64>,
    dshift: Vec<f64>,
    dx_buf: Vec<f64>,
    dxu_buf: Vec<f64>,
    dy: Vec<f64>,
    scratch: Vec<f64>,
}

/// Composite loss over a batch in network coordinates, optionally with the
/// exact gradients of the weighted total for all four networks.
///
/// Both evaluations of `Φx` in the second prediction term (at `x` through
/// the shifted register and at `x⁺`) are differentiated.
fn composite_loss(
    ae: &AutoEncoder,
    batch: &[Sample],
    w: &LossWeights,
    mut grads: Option<&mut AeGradients>,
    ws: &mut LossWorkspace,
) -> Result<LossReport> {
    let n = ae.n();
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must not be empty"));
    }
    if let Some(g) = grads.as_deref_mut() {
        g.fill_zero();
    }
    let b = batch.len() as f64;
    let scale_x = 1.0 / (b * n as f64);
    let scale_u = 1.0 / b;
    let mut rep = LossReport::default();

    ws.dx_buf.resize(n, 0.0);
    ws.dxu_buf.resize(n + 1, 0.0);

    for s in batch {
        if s.x.len() != n || s.x_plus.len() != n {
            return Err(Error::Dimension {
                context: "loss batch sample",
                expected: n,
                actual: s.x.len(),
            });
        }
        // forward
        ae.phi_x.forward_into(&s.x, &mut ws.c_x)?;
        ws.input.clear();
        ws.input.extend_from_slice(&s.x);
        ws.input.push(s.u);
        ae.phi_u.forward_into(&ws.input, &mut ws.c_u)?;
        let v = ws.c_u.output[0];

        ae.phi_x_inv.forward_into(&ws.c_x.output, &mut ws.c_rec_x)?;

        ws.input[n] = v;
        ae.phi_u_inv.forward_into(&ws.input, &mut ws.c_rec_u)?;

        shift_into(&ws.c_x.output, v, &mut ws.shifted);
        ae.phi_x_inv.forward_into(&ws.shifted, &mut ws.c_pred)?;
        ae.phi_x.forward_into(&s.x_plus, &mut ws.c_xplus)?;

        let mut e_rec_x = 0.0;
        let mut e_pred_1 = 0.0;
        let mut e_pred_2 = 0.0;
        for i in 0..n {
            e_rec_x += (ws.c_rec_x.output[i] - s.x[i]).powi(2);
            e_pred_1 += (ws.c_pred.output[i] - s.x_plus[i]).powi(2);
            e_pred_2 += (ws.c_xplus.output[i] - ws.shifted[i]).powi(2);
        }
        let e_rec_u = (ws.c_rec_u.output[0] - s.u).powi(2);
        rep.rec_x += e_rec_x * scale_x;
        rep.rec_u += e_rec_u * scale_u;
        rep.pred_1 += e_pred_1 * scale_x;
        rep.pred_2 += e_pred_2 * scale_x;

        let Some(g) = grads.as_deref_mut() else {
            continue;
        };

        // backward
        ws.dz.clear();
        ws.dz.resize(n, 0.0);
        ws.dshift.clear();
        ws.dshift.resize(n, 0.0);
        let mut dv = 0.0;

        // state reconstruction, through Φx⁻¹ into z
        ws.dy.clear();
        ws.dy.extend((0..n).map(|i| 2.0 * w.alpha1 * scale_x * (ws.c_rec_x.output[i] - s.x[i])));
        ae.phi_x_inv
            .backward_accumulate(&ws.c_rec_x, &ws.dy, &mut g.phi_x_inv, &mut ws.dx_buf, &mut ws.scratch)?;
        for i in 0..n {
            ws.dz[i] += ws.dx_buf[i];
        }

        // input reconstruction, through Φu⁻¹ into v
        ws.dy.clear();
        ws.dy.push(2.0 * w.alpha2 * scale_u * (ws.c_rec_u.output[0] - s.u));
        ae.phi_u_inv
            .backward_accumulate(&ws.c_rec_u, &ws.dy, &mut g.phi_u_inv, &mut ws.dxu_buf, &mut ws.scratch)?;
        dv += ws.dxu_buf[n];

        // first prediction term, through Φx⁻¹ into the shifted register
        ws.dy.clear();
        ws.dy.extend((0..n).map(|i| 2.0 * w.alpha3 * scale_x * (ws.c_pred.output[i] - s.x_plus[i])));
        ae.phi_x_inv
            .backward_accumulate(&ws.c_pred, &ws.dy, &mut g.phi_x_inv, &mut ws.dx_buf, &mut ws.scratch)?;
        for i in 0..n {
            ws.dshift[i] += ws.dx_buf[i];
        }

        // second prediction term: Φx at x⁺ and the shifted register
        ws.dy.clear();
        ws.dy.extend((0..n).map(|i| 2.0 * w.alpha3 * scale_x * (ws.c_xplus.output[i] - ws.shifted[i])));
        ae.phi_x
            .backward_accumulate(&ws.c_xplus, &ws.dy, &mut g.phi_x, &mut ws.dx_buf, &mut ws.scratch)?;
        for i in 0..n {
            ws.dshift[i] -= ws.dy[i];
        }

        // σ: shifted[i] = z[i + 1] for i < n − 1, shifted[n − 1] = v
        for i in 0..n - 1 {
            ws.dz[i + 1] += ws.dshift[i];
        }
        dv += ws.dshift[n - 1];

        ws.dy.clear();
        ws.dy.push(dv);
        ae.phi_u
            .backward_accumulate(&ws.c_u, &ws.dy, &mut g.phi_u, &mut ws.dxu_buf, &mut ws.scratch)?;
        ae.phi_x
            .backward_accumulate(&ws.c_x, &ws.dz, &mut g.phi_x, &mut ws.dx_buf, &mut ws.scratch)?;
    }
    let rep = rep.weighted(w);
    rep.check_finite()?;
    Ok(rep)
}

/// Loss report and gradients of the weighted total for a batch given in
/// network (normalized) coordinates.
pub fn loss_batch(ae: &AutoEncoder, batch: &[Sample], w: &LossWeights) -> Result<(LossReport, AeGradients)> {
    let mut grads = AeGradients::zeros_like(ae);
    let rep = composite_loss(ae, batch, w, Some(&mut grads), &mut LossWorkspace::default())?;
    Ok((rep, grads))
}

/// Loss report without gradients.
pub fn evaluate_loss(ae: &AutoEncoder, samples: &[Sample], w: &LossWeights) -> Result<LossReport> {
    composite_loss(ae, samples, w, None, &mut LossWorkspace::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the last epoch by cosine annealing. `None`
    /// keeps `lr` constant.
    pub lr_final: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Training fraction of the trajectory-wise split.
    pub split: f64,
    /// Stop once the validation total has not improved by the relative
    /// `plateau_tolerance` for this many epochs.
    pub patience: Option<usize>,
    pub plateau_tolerance: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 100,
            batch_size: 256,
            lr: adam.lr,
            lr_final: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            split: 0.9,
            patience: None,
            plateau_tolerance: 1e-3,
        }
    }
}

impl TrainOptions {
    /// Defaults for warm-started fine-tuning.
    pub fn finetune() -> Self {
        Self {
            lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if let Some(f) = self.lr_final {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::invalid("lr_final", "must be positive"));
            }
        }
        if !(self.plateau_tolerance.is_finite() && (0.0..1.0).contains(&self.plateau_tolerance)) {
            return Err(Error::invalid("plateau_tolerance", "must lie in [0, 1)"));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::invalid("split", "must lie in (0, 1)"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(lo) if self.epochs > 1 => {
                let t = epoch as f64 / (self.epochs - 1) as f64;
                lo + 0.5 * (self.lr - lo) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            _ => self.lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train: LossReport,
    pub validation: LossReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<EpochRecord>,
}

impl LossHistory {
    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_rec_x,L_rec_u,L_pred_1,L_pred_2,total,val_total\n");
        for r in &self.epochs {
            let t = &r.train;
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t.epoch, t.rec_x, t.rec_u, t.pred_1, t.pred_2, t.total, r.validation.total
            );
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn require_normalized(ds: &Dataset, which: &str) -> Result<()> {
    if ds.normalized {
        Ok(())
    } else {
        Err(Error::invalid(which, "dataset must be normalized before training"))
    }
}

/// Minibatch Adam over the composite loss.
///
/// `train` and `validation` must be normalized with the auto-encoder's
/// constants. Epoch records are appended to the returned history; the run is
/// a pure function of its inputs and `opts.seed`.
pub fn train(
    ae: &AutoEncoder,
    train: &Dataset,
    validation: &Dataset,
    w: &LossWeights,
    opts: &TrainOptions,
) -> Result<(AutoEncoder, LossHistory)> {
    train_with_progress(ae, train, validation, w, opts, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    ae: &AutoEncoder,
    train: &Dataset,
    validation: &Dataset,
    w: &LossWeights,
    opts: &TrainOptions,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(AutoEncoder, LossHistory)> {
    w.validate()?;
    opts.validate()?;
    let mut history = LossHistory::default();
    let mut ae = ae.clone();
    if opts.epochs == 0 {
        return Ok((ae, history));
    }
    require_normalized(train, "train")?;
    require_normalized(validation, "validation")?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::invalid("dataset", "train and validation sets must be nonempty"));
    }
    if train.n != ae.n() {
        return Err(Error::Dimension {
            context: "training dataset",
            expected: ae.n(),
            actual: train.n,
        });
    }

    let mut states: Vec<AdamState> = ae
        .nets_mut()
        .into_iter()
        .map(|net| AdamState::new(net, opts.adam()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = AeGradients::zeros_like(&ae);
    let mut ws = LossWorkspace::default();
    let mut batch: Vec<Sample> = Vec::with_capacity(opts.batch_size);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..opts.epochs {
        let lr = opts.lr_at(epoch);
        for st in &mut states {
            st.config.lr = lr;
        }
        order.shuffle(&mut rng);
        let mut acc = LossReport::default();
        for chunk in order.chunks(opts.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train.samples[i].clone()));
            let rep = composite_loss(&ae, &batch, w, Some(&mut grads), &mut ws)
                .map_err(|e| match e {
                    Error::NonFinite { context } => Error::non_finite(format!("epoch {}: {context}", epoch + 1)),
                    other => other,
                })?;
            let frac = chunk.len() as f64 / train.len() as f64;
            acc.rec_x += rep.rec_x * frac;
            acc.rec_u += rep.rec_u * frac;
            acc.pred_1 += rep.pred_1 * frac;
            acc.pred_2 += rep.pred_2 * frac;
            for ((net, g), st) in ae.nets_mut().into_iter().zip(grads.nets()).zip(&mut states) {
                adam_step(net, g, st)?;
            }
        }
        let mut train_rep = acc.weighted(w);
        train_rep.epoch = epoch + 1;
        if !train_rep.total.is_finite() || train_rep.total > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                term: "total",
                value: train_rep.total,
            });
        }
        let mut val_rep = composite_loss(&ae, &validation.samples, w, None, &mut ws)?;
        val_rep.epoch = epoch + 1;
        let record = EpochRecord {
            train: train_rep,
            validation: val_rep,
        };
        progress(&record);
        history.epochs.push(record);
        if val_rep.total < best * (1.0 - opts.plateau_tolerance) {
            best = val_rep.total;
            stale = 0;
        } else {
            stale += 1;
        }
        if opts.patience.is_some_and(|p| stale >= p) {
            log::info!("validation plateau after {} epochs", epoch + 1);
            break;
        }
    }
    Ok((ae, history))
}

/// Warm-started retraining on recordings from a perturbed plant. The nominal
/// auto-encoder is left untouched; the datasets must be normalized with its
/// constants.
pub fn transfer_finetune(
    nominal: &AutoEncoder,
    train_set: &Dataset,
    validation: &Dataset,
    w: &LossWeights,
    opts: &TrainOptions,
) -> Result<(AutoEncoder, LossHistory)> {
    if train_set.normalized && train_set.normalization != nominal.normalization {
        return Err(Error::invalid(
            "transfer dataset",
            "normalized with constants other than the nominal auto-encoder's",
        ));
    }
    train(nominal, train_set, validation, w, opts)
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub samples: usize,
    pub final_train_total: Option<f64>,
    pub final_validation_total: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointNetworks {
    phi_x: NetworkDoc,
    phi_x_inv: NetworkDoc,
    phi_u: NetworkDoc,
    phi_u_inv: NetworkDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    version: u32,
    n: usize,
    hidden: usize,
    activation: Activation,
    normalization: Normalization,
    loss_weights: LossWeights,
    training: TrainingMetadata,
    networks: CheckpointNetworks,
}

/// An auto-encoder together with the loss weights and provenance it was
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub ae: AutoEncoder,
    pub loss_weights: LossWeights,
    pub training: TrainingMetadata,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let ae = &self.ae;
        let nets = [&ae.phi_x, &ae.phi_x_inv, &ae.phi_u, &ae.phi_u_inv];
        if nets.iter().any(|n| n.params().any(|v| !v.is_finite())) {
            return Err(Error::non_finite("checkpoint weights"));
        }
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            n: ae.n(),
            hidden: ae.hidden(),
            activation: ae.activation(),
            normalization: ae.normalization.clone(),
            loss_weights: self.loss_weights,
            training: self.training.clone(),
            networks: CheckpointNetworks {
                phi_x: (&ae.phi_x).into(),
                phi_x_inv: (&ae.phi_x_inv).into(),
                phi_u: (&ae.phi_u).into(),
                phi_u_inv: (&ae.phi_u_inv).into(),
            },
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::json("<checkpoint>", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(s).map_err(|e| Error::json("<checkpoint>", e))?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(
                "checkpoint",
                format!("unsupported format {} v{}", doc.format, doc.version),
            ));
        }
        let ae = AutoEncoder::from_networks(
            doc.networks.phi_x.try_into()?,
            doc.networks.phi_x_inv.try_into()?,
            doc.networks.phi_u.try_into()?,
            doc.networks.phi_u_inv.try_into()?,
            doc.normalization,
        )?;
        if ae.n() != doc.n || ae.hidden() != doc.hidden {
            return Err(Error::invalid("checkpoint", "header dimensions disagree with networks"));
        }
        Ok(Self {
            ae,
            loss_weights: doc.loss_weights,
            training: doc.training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path, source),
            other => other,
        })
    }
}
