//! Recorded `(x, u, x⁺)` triples: generation from a simulated plant,
//! normalization, persistence and trajectory-wise splitting.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::DiscreteSystem;
use crate::error::{Error, Result};

const META_FORMAT: &str = "brunovsky-dataset";
const META_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub u: f64,
    pub x_plus: Vec<f64>,
    pub trajectory_id: usize,
    pub k: usize,
}

/// Per-channel domain box `𝒟x × 𝒟u` covering every stored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
}

impl Bounds {
    fn from_samples(n: usize, samples: &[Sample]) -> Self {
        let mut b = Bounds {
            x_min: vec![f64::INFINITY; n],
            x_max: vec![f64::NEG_INFINITY; n],
            u_min: f64::INFINITY,
            u_max: f64::NEG_INFINITY,
        };
        for s in samples {
            for x in [&s.x, &s.x_plus] {
                for i in 0..n {
                    b.x_min[i] = b.x_min[i].min(x[i]);
                    b.x_max[i] = b.x_max[i].max(x[i]);
                }
            }
            b.u_min = b.u_min.min(s.u);
            b.u_max = b.u_max.max(s.u);
        }
        b
    }

    pub fn contains(&self, s: &Sample) -> bool {
        let inside = |x: &[f64]| {
            x.iter()
                .enumerate()
                .all(|(i, v)| *v >= self.x_min[i] && *v <= self.x_max[i])
        };
        inside(&s.x) && inside(&s.x_plus) && s.u >= self.u_min && s.u <= self.u_max
    }
}

/// Per-channel affine map to zero mean and unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub u_mean: f64,
    pub u_scale: f64,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self {
            x_mean: vec![0.0; n],
            x_scale: vec![1.0; n],
            u_mean: 0.0,
            u_scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_mean.len()
    }

    /// Mean and population standard deviation of the recorded states and
    /// inputs. A channel without spread keeps scale 1.
    pub fn from_samples(n: usize, samples: &[Sample]) -> Self {
        let count = samples.len().max(1) as f64;
        let mut x_mean = vec![0.0; n];
        let mut u_mean = 0.0;
        for s in samples {
            for i in 0..n {
                x_mean[i] += s.x[i];
            }
            u_mean += s.u;
        }
        x_mean.iter_mut().for_each(|m| *m /= count);
        u_mean /= count;
        let mut x_var = vec![0.0; n];
        let mut u_var = 0.0;
        for s in samples {
            for i in 0..n {
                x_var[i] += (s.x[i] - x_mean[i]).powi(2);
            }
            u_var += (s.u - u_mean).powi(2);
        }
        let scale_of = |var: f64, mean: f64, channel: &str| {
            let sd = (var / count).sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) && sd.is_finite() {
                sd
            } else {
                log::warn!("channel {channel} has zero variance, using scale 1");
                1.0
            }
        };
        let x_scale = (0..n)
            .map(|i| scale_of(x_var[i], x_mean[i], &format!("x{}", i + 1)))
            .collect();
        let u_scale = scale_of(u_var, u_mean, "u");
        Self {
            x_mean,
            x_scale,
            u_mean,
            u_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_scale.len() != self.x_mean.len() {
            return Err(Error::invalid("normalization", "mean/scale length mismatch"));
        }
        let finite = self.x_mean.iter().chain(&self.x_scale).all(|v| v.is_finite())
            && self.u_mean.is_finite()
            && self.u_scale.is_finite();
        let positive = self.x_scale.iter().all(|&s| s > 0.0) && self.u_scale > 0.0;
        if finite && positive {
            Ok(())
        } else {
            Err(Error::invalid(
                "normalization",
                "constants must be finite with positive scales",
            ))
        }
    }

    pub fn normalize_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize_input(&self, u: f64) -> f64 {
        (u - self.u_mean) / self.u_scale
    }

    pub fn denormalize_input(&self, u: f64) -> f64 {
        u * self.u_scale + self.u_mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub sampling_time: f64,
    pub samples: Vec<Sample>,
    pub bounds: Bounds,
    /// Constants of the physical data. Kept unchanged by [`normalize`].
    pub normalization: Normalization,
    /// Whether `samples` are expressed in normalized coordinates.
    pub normalized: bool,
    pub policy_fingerprint: String,
}

impl Dataset {
    /// Assemble a physical-unit dataset, computing bounds and normalization.
    pub fn from_samples(
        n: usize,
        sampling_time: f64,
        samples: Vec<Sample>,
        policy_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if let Some(bad) = samples
            .iter()
            .position(|s| s.x.len() != n || s.x_plus.len() != n)
        {
            return Err(Error::Dimension {
                context: "dataset sample",
                expected: n,
                actual: samples[bad].x.len().max(samples[bad].x_plus.len()),
            });
        }
        let bounds = Bounds::from_samples(n, &samples);
        let normalization = Normalization::from_samples(n, &samples);
        Ok(Self {
            n,
            sampling_time,
            samples,
            bounds,
            normalization,
            normalized: false,
            policy_fingerprint: policy_fingerprint.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn trajectory_ids(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.trajectory_id).collect()
    }

    /// Samples of one trajectory in recording order.
    pub fn trajectory(&self, id: usize) -> Vec<&Sample> {
        let mut v: Vec<&Sample> = self
            .samples
            .iter()
            .filter(|s| s.trajectory_id == id)
            .collect();
        v.sort_by_key(|s| s.k);
        v
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self {
            bounds: Bounds::from_samples(self.n, &samples),
            samples,
            ..self.clone()
        }
    }
}

/// Map a physical dataset into the coordinates given by its own constants.
pub fn normalize(ds: &Dataset) -> Dataset {
    normalize_with(ds, &ds.normalization)
}

/// Map a physical dataset with externally supplied constants, e.g. those of
/// a pretrained auto-encoder.
pub fn normalize_with(ds: &Dataset, norm: &Normalization) -> Dataset {
    if ds.normalized {
        return ds.clone();
    }
    let samples = ds
        .samples
        .iter()
        .map(|s| Sample {
            x: norm.normalize_state(&s.x),
            u: norm.normalize_input(s.u),
            x_plus: norm.normalize_state(&s.x_plus),
            trajectory_id: s.trajectory_id,
            k: s.k,
        })
        .collect();
    let mut out = ds.with_samples(samples);
    out.normalization = norm.clone();
    out.normalized = true;
    out
}

/// Map normalized state vectors back to physical units.
pub fn denormalize(ds: &Dataset, values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|v| ds.normalization.denormalize_state(v))
        .collect()
}

/// Which excitation drives the recorded trajectories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationMode {
    /// Uniform random input, re-drawn every `hold_steps`.
    #[default]
    RandomInput,
    /// PD law on a position channel towards random setpoints.
    PdSetpoint,
    /// PD law plus held uniform noise.
    PdPlusNoise,
    /// Cycles by trajectory index through stabilization of a fixed setpoint,
    /// setpoint changes, and setpoint changes with noise.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationPolicy {
    pub mode: ExcitationMode,
    pub seed: u64,
    pub input_range: [f64; 2],
    pub hold_steps: usize,
    pub kp: f64,
    pub kd: f64,
    pub position_index: usize,
    pub velocity_index: usize,
    pub setpoint_range: [f64; 2],
    /// Steps between setpoint changes; 0 keeps the first setpoint.
    pub setpoint_interval: usize,
    pub noise_amplitude: f64,
    pub initial_low: Vec<f64>,
    pub initial_high: Vec<f64>,
}

impl Default for ExcitationPolicy {
    fn default() -> Self {
        Self {
            mode: ExcitationMode::RandomInput,
            seed: 0,
            input_range: [-1.0, 1.0],
            hold_steps: 1,
            kp: 20.0,
            kd: 5.0,
            position_index: 0,
            velocity_index: 0,
            setpoint_range: [0.0, 1.0],
            setpoint_interval: 0,
            noise_amplitude: 0.0,
            initial_low: Vec::new(),
            initial_high: Vec::new(),
        }
    }
}

impl ExcitationPolicy {
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.initial_low.len() != n || self.initial_high.len() != n {
            return Err(Error::Dimension {
                context: "excitation initial-state box",
                expected: n,
                actual: self.initial_low.len().min(self.initial_high.len()),
            });
        }
        if self.initial_low.iter().zip(&self.initial_high).any(|(l, h)| l > h) {
            return Err(Error::invalid("initial_low", "exceeds initial_high"));
        }
        if self.input_range[0] > self.input_range[1] {
            return Err(Error::invalid("input_range", "lower bound exceeds upper bound"));
        }
        if self.setpoint_range[0] > self.setpoint_range[1] {
            return Err(Error::invalid("setpoint_range", "lower bound exceeds upper bound"));
        }
        if self.hold_steps == 0 {
            return Err(Error::invalid("hold_steps", "must be positive"));
        }
        let uses_pd = self.mode != ExcitationMode::RandomInput;
        if uses_pd && (self.position_index >= n || self.velocity_index >= n) {
            return Err(Error::invalid("position_index", "PD channel out of range"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Per-trajectory excitation state.
struct Excitation<'a> {
    policy: &'a ExcitationPolicy,
    mode: ExcitationMode,
    setpoint_interval: usize,
    setpoint: f64,
    held: f64,
}

impl<'a> Excitation<'a> {
    fn new(policy: &'a ExcitationPolicy, trajectory: usize, rng: &mut ChaCha8Rng) -> Self {
        let (mode, setpoint_interval) = match policy.mode {
            ExcitationMode::Mixed => match trajectory % 3 {
                0 => (ExcitationMode::PdSetpoint, 0),
                1 => (ExcitationMode::PdSetpoint, policy.setpoint_interval),
                _ => (ExcitationMode::PdPlusNoise, policy.setpoint_interval),
            },
            m => (m, policy.setpoint_interval),
        };
        let [lo, hi] = policy.setpoint_range;
        Self {
            policy,
            mode,
            setpoint_interval,
            setpoint: uniform(rng, lo, hi),
            held: 0.0,
        }
    }

    fn input(&mut self, k: usize, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        let p = self.policy;
        if k > 0 && self.setpoint_interval > 0 && k % self.setpoint_interval == 0 {
            self.setpoint = uniform(rng, p.setpoint_range[0], p.setpoint_range[1]);
        }
        let pd = |sp: f64| p.kp * (sp - x[p.position_index]) - p.kd * x[p.velocity_index];
        match self.mode {
            ExcitationMode::RandomInput => {
                if k % p.hold_steps == 0 {
                    self.held = uniform(rng, p.input_range[0], p.input_range[1]);
                }
                self.held
            }
            ExcitationMode::PdSetpoint => pd(self.setpoint),
            _ => {
                if k % p.hold_steps == 0 {
                    self.held = uniform(rng, -p.noise_amplitude, p.noise_amplitude);
                }
                pd(self.setpoint) + self.held
            }
        }
    }
}

/// Axis-aligned region a recorded trajectory must stay inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl SafetyBox {
    pub fn unbounded(n: usize) -> Self {
        Self {
            low: vec![f64::NEG_INFINITY; n],
            high: vec![f64::INFINITY; n],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Record one trajectory; `None` when it left the safety box or the plant
/// failed.
fn record_trajectory(
    sys: &dyn DiscreteSystem,
    policy: &ExcitationPolicy,
    safety: &SafetyBox,
    trajectory: usize,
    traj_len: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Sample>> {
    let n = sys.state_dim();
    let mut x: Vec<f64> = (0..n)
        .map(|i| uniform(rng, policy.initial_low[i], policy.initial_high[i]))
        .collect();
    let mut excitation = Excitation::new(policy, trajectory, rng);
    let mut out = Vec::with_capacity(traj_len);
    for k in 0..traj_len {
        let u = excitation.input(k, &x, rng);
        let x_plus = match sys.step(&x, u) {
            Ok(next) => next,
            Err(e) => {
                log::debug!("trajectory {trajectory} discarded at k={k}: {e}");
                return None;
            }
        };
        if !u.is_finite() || x_plus.iter().any(|v| !v.is_finite()) || !safety.contains(&x_plus) {
            log::debug!("trajectory {trajectory} discarded at k={k}: left the safety box");
            return None;
        }
        out.push(Sample {
            x: x.clone(),
            u,
            x_plus: x_plus.clone(),
            trajectory_id: trajectory,
            k,
        });
        x = x_plus;
    }
    Some(out)
}

/// One trajectory drawn from stream `attempt` of the policy's generator, or
/// `None` when it leaves the safety box. Used for held-out evaluation data
/// that should not count against a dataset's discard budget.
pub fn sample_trajectory(
    sys: &dyn DiscreteSystem,
    policy: &ExcitationPolicy,
    safety: &SafetyBox,
    attempt: u64,
    trajectory_id: usize,
    traj_len: usize,
) -> Result<Option<Vec<Sample>>> {
    policy.validate(sys.state_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(attempt);
    Ok(record_trajectory(sys, policy, safety, trajectory_id, traj_len, &mut rng))
}

/// Simulate `n_traj` accepted trajectories of `traj_len` steps each.
///
/// Attempt `a` draws from stream `a` of a ChaCha generator seeded with the
/// policy seed, so every trajectory is reproducible on its own. Rejected
/// attempts are replaced; more than `n_traj` rejections abort.
pub fn generate_dataset(
    sys: &dyn DiscreteSystem,
    policy: &ExcitationPolicy,
    n_traj: usize,
    traj_len: usize,
    safety: &SafetyBox,
) -> Result<Dataset> {
    let n = sys.state_dim();
    policy.validate(n)?;
    if n_traj == 0 || traj_len == 0 {
        return Err(Error::invalid("n_traj/traj_len", "must be positive"));
    }
    if safety.low.len() != n || safety.high.len() != n {
        return Err(Error::Dimension {
            context: "safety box",
            expected: n,
            actual: safety.low.len(),
        });
    }
    let mut samples = Vec::with_capacity(n_traj * traj_len);
    let mut accepted = 0;
    let mut discarded = 0;
    let mut attempt = 0u64;
    while accepted < n_traj {
        if discarded > n_traj {
            return Err(Error::DiscardRate {
                discarded,
                attempted: attempt as usize,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
        rng.set_stream(attempt);
        attempt += 1;
        match record_trajectory(sys, policy, safety, accepted, traj_len, &mut rng) {
            Some(traj) => {
                samples.extend(traj);
                accepted += 1;
            }
            None => discarded += 1,
        }
    }
    if discarded > 0 {
        log::info!("discarded {discarded} of {attempt} trajectories");
    }
    Dataset::from_samples(n, sys.sampling_time(), samples, policy.fingerprint())
}

/// Split by whole trajectories. `ratio` is the training fraction.
pub fn split(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("split ratio", format!("must lie in (0, 1), got {ratio}")));
    }
    let mut ids: Vec<usize> = ds.trajectory_ids().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::invalid(
            "split",
            format!("needs at least 2 trajectories, dataset has {}", ids.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((ratio * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: BTreeSet<usize> = ids[..n_train].iter().copied().collect();
    let (train, val): (Vec<Sample>, Vec<Sample>) = ds
        .samples
        .iter()
        .cloned()
        .partition(|s| train_ids.contains(&s.trajectory_id));
    Ok((ds.with_samples(train), ds.with_samples(val)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    format: String,
    version: u32,
    n: usize,
    sampling_time: f64,
    samples: usize,
    bounds: Bounds,
    normalization: Normalization,
    normalized: bool,
    policy_fingerprint: String,
}

/// Path of the metadata document that accompanies a dataset CSV.
pub fn metadata_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn csv_header(n: usize) -> String {
    let mut h = String::from("traj,k");
    for i in 1..=n {
        let _ = write!(h, ",x{i}");
    }
    h.push_str(",u");
    for i in 1..=n {
        let _ = write!(h, ",x{i}p");
    }
    h
}

/// Write `path` (CSV) and its metadata sidecar. Values carry 17 significant
/// digits so a reload is exact.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = csv_header(ds.n);
    out.push('\n');
    for s in &ds.samples {
        let _ = write!(out, "{},{}", s.trajectory_id, s.k);
        for v in &s.x {
            let _ = write!(out, ",{v:.16e}");
        }
        let _ = write!(out, ",{:.16e}", s.u);
        for v in &s.x_plus {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta = DatasetMeta {
        format: META_FORMAT.into(),
        version: META_VERSION,
        n: ds.n,
        sampling_time: ds.sampling_time,
        samples: ds.samples.len(),
        bounds: ds.bounds.clone(),
        normalization: ds.normalization.clone(),
        normalized: ds.normalized,
        policy_fingerprint: ds.policy_fingerprint.clone(),
    };
    let meta_path = metadata_path(path);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let meta_path = metadata_path(path);
    let meta_src = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_src).map_err(|e| Error::json(&meta_path, e))?;
    if meta.format != META_FORMAT || meta.version != META_VERSION {
        return Err(Error::Parse {
            path: meta_path,
            line: 1,
            message: format!("unsupported dataset format {} v{}", meta.format, meta.version),
        });
    }
    meta.normalization.validate()?;
    let n = meta.n;
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = src.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, missing header".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() >= 3 && columns[0] == "traj" && columns[1] == "k" {
        let state_cols = columns.iter().filter(|c| is_state_column(c, false)).count();
        if state_cols != n {
            return Err(Error::Dimension {
                context: "dataset CSV state columns vs metadata",
                expected: n,
                actual: state_cols,
            });
        }
    }
    if header != csv_header(n) {
        return Err(parse_err(1, format!("malformed header `{header}`")));
    }
    let width = 3 + 2 * n;
    let mut samples = Vec::with_capacity(meta.samples);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(parse_err(
                line_no,
                format!("expected {width} cells, found {}", cells.len()),
            ));
        }
        let int = |col: usize| -> Result<usize> {
            cells[col].trim().parse::<usize>().map_err(|_| {
                parse_err(line_no, format!("column {}: `{}` is not an integer", col + 1, cells[col]))
            })
        };
        let num = |col: usize| -> Result<f64> {
            cells[col].trim().parse::<f64>().map_err(|_| {
                parse_err(line_no, format!("column {}: `{}` is not numeric", col + 1, cells[col]))
            })
        };
        let x = (0..n).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
        let u = num(2 + n)?;
        let x_plus = (0..n).map(|i| num(3 + n + i)).collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            x,
            u,
            x_plus,
            trajectory_id: int(0)?,
            k: int(1)?,
        });
    }
    if samples.len() != meta.samples {
        return Err(parse_err(
            samples.len() + 1,
            format!(
                "truncated: metadata declares {} samples, file holds {}",
                meta.samples,
                samples.len()
            ),
        ));
    }
    Ok(Dataset {
        n,
        sampling_time: meta.sampling_time,
        samples,
        bounds: meta.bounds,
        normalization: meta.normalization,
        normalized: meta.normalized,
        policy_fingerprint: meta.policy_fingerprint,
    })
}

fn is_state_column(c: &str, plus: bool) -> bool {
    let Some(rest) = c.strip_prefix('x') else {
        return false;
    };
    let digits = if plus {
        match rest.strip_suffix('p') {
            Some(d) => d,
            None => return false,
        }
    } else {
        rest
    };
    !digits.is_empty() && digits.chars().all(|ch| ch.is_ascii_digit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AcademicSystem, CraneModel, CraneOptions, CraneParams};

    fn academic_policy(seed: u64) -> ExcitationPolicy {
        ExcitationPolicy {
            seed,
            initial_low: vec![-0.5; 3],
            initial_high: vec![0.5; 3],
            ..Default::default()
        }
    }

    fn small_academic(seed: u64) -> Dataset {
        let safety = SafetyBox {
            low: vec![-3.0; 3],
            high: vec![3.0; 3],
        };
        generate_dataset(&AcademicSystem, &academic_policy(seed), 10, 20, &safety).unwrap()
    }

    fn assert_chain(ds: &Dataset) {
        for id in ds.trajectory_ids() {
            let traj = ds.trajectory(id);
            for w in traj.windows(2) {
                assert_eq!(w[0].x_plus, w[1].x);
                assert_eq!(w[0].k + 1, w[1].k);
            }
        }
    }

    #[test]
    fn single_sample_dataset() {
        let ds = generate_dataset(
            &AcademicSystem,
            &academic_policy(1),
            1,
            1,
            &SafetyBox::unbounded(3),
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn generation_is_deterministic_and_chained() {
        let a = small_academic(3);
        let b = small_academic(3);
        assert_eq!(a, b);
        assert_ne!(a, small_academic(4));
        assert_eq!(a.len(), 200);
        assert_chain(&a);
        assert!(a.samples.iter().all(|s| a.bounds.contains(s)));
    }

    #[test]
    fn crane_mixed_policy() {
        let crane = CraneModel::new(CraneParams::NOMINAL, CraneOptions::default(), 0.005).unwrap();
        let policy = ExcitationPolicy {
            mode: ExcitationMode::Mixed,
            seed: 2,
            hold_steps: 20,
            position_index: 0,
            velocity_index: 2,
            setpoint_interval: 100,
            noise_amplitude: 4.0,
            initial_low: vec![0.0; 4],
            initial_high: vec![1.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        let ds = generate_dataset(&crane, &policy, 6, 300, &SafetyBox::unbounded(4)).unwrap();
        assert_eq!(ds.len(), 1800);
        assert_eq!(ds.sampling_time, 0.005);
        assert_chain(&ds);
    }

    #[test]
    fn excessive_discards_abort() {
        // Every trajectory leaves a box that excludes most reachable states.
        let safety = SafetyBox {
            low: vec![-1e-3; 3],
            high: vec![1e-3; 3],
        };
        let err = generate_dataset(&AcademicSystem, &academic_policy(0), 5, 10, &safety)
            .unwrap_err();
        assert!(matches!(err, Error::DiscardRate { .. }));
    }

    #[test]
    fn normalization_round_trip() {
        let ds = small_academic(7);
        let nd = normalize(&ds);
        assert!(nd.normalized);
        let again = Normalization::from_samples(3, &nd.samples);
        for i in 0..3 {
            assert!(again.x_mean[i].abs() < 1e-12);
            assert!((again.x_scale[i] - 1.0).abs() < 1e-12);
        }
        let xs: Vec<Vec<f64>> = nd.samples.iter().map(|s| s.x.clone()).collect();
        let back = denormalize(&nd, &xs);
        for (b, s) in back.iter().zip(&ds.samples) {
            for (p, q) in b.iter().zip(&s.x) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_channel_gets_unit_scale() {
        let samples: Vec<Sample> = (0..5)
            .map(|k| Sample {
                x: vec![k as f64, 2.5],
                u: 1.0,
                x_plus: vec![k as f64 + 1.0, 2.5],
                trajectory_id: 0,
                k,
            })
            .collect();
        let norm = Normalization::from_samples(2, &samples);
        assert_eq!(norm.x_scale[1], 1.0);
        assert_eq!(norm.u_scale, 1.0);
        assert_eq!(norm.x_mean[1], 2.5);
        norm.validate().unwrap();
    }

    #[test]
    fn split_by_trajectory() {
        let ds = small_academic(5);
        let (tr, va) = split(&ds, 0.9, 11).unwrap();
        assert_eq!(tr.trajectory_ids().len(), 9);
        assert_eq!(va.trajectory_ids().len(), 1);
        assert!(tr.trajectory_ids().is_disjoint(&va.trajectory_ids()));
        assert_eq!(tr.len() + va.len(), ds.len());
        let (tr2, va2) = split(&ds, 0.9, 11).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn split_needs_two_trajectories() {
        let ds = generate_dataset(
            &AcademicSystem,
            &academic_policy(1),
            1,
            5,
            &SafetyBox::unbounded(3),
        )
        .unwrap();
        assert!(split(&ds, 0.5, 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = small_academic(9);
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&small_academic(9), &path).unwrap();
        let src = std::fs::read_to_string(&path).unwrap();
        let cut = &src[..src.len() - 30];
        std::fs::write(&path, cut).unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 201),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_numeric_cell_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&small_academic(9), &path).unwrap();
        let src = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = src.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
        cells[4] = "abc".into();
        lines[3] = cells.join(",");
        std::fs::write(&path, lines.join("\n")).unwrap();
        let msg = load_dataset(&path).unwrap_err().to_string();
        assert!(msg.contains(":4:") && msg.contains("abc"), "{msg}");
    }

    #[test]
    fn metadata_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let crane = CraneModel::new(CraneParams::NOMINAL, CraneOptions::default(), 0.005).unwrap();
        let policy = ExcitationPolicy {
            initial_low: vec![0.0; 4],
            initial_high: vec![0.1; 4],
            ..Default::default()
        };
        let ds = generate_dataset(&crane, &policy, 2, 3, &SafetyBox::unbounded(4)).unwrap();
        save_dataset(&ds, &path).unwrap();
        let meta_path = metadata_path(&path);
        let meta = std::fs::read_to_string(&meta_path).unwrap();
        std::fs::write(&meta_path, meta.replacen("\"n\": 4", "\"n\": 3", 1)).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(
            matches!(err, Error::Dimension { expected: 3, actual: 4, .. }),
            "{err}"
        );
    }

    #[test]
    fn malformed_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&small_academic(2), &path).unwrap();
        let src = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, src.replacen("traj,k", "trajectory,k", 1)).unwrap();
        let msg = load_dataset(&path).unwrap_err().to_string();
        assert!(msg.contains("malformed header"), "{msg}");
    }
}
