//! Outer-loop control in Brunovsky coordinates: polynomial trajectory
//! planning, companion-form pole placement and the closed loop around a
//! learned (or analytic) linearizing transformation.
//!
//! With `z = Φx(x)` and `v = Φu(x, u)` the plant is a shift register, so the
//! tracking law `v = −a·(z − z_d) + v_d` gives the error dynamics
//! `e⁺ = A(a)·e` with `A` the companion matrix whose last row is `−a`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::canonical::{shift, AutoEncoder};
use crate::dynamics::DiscreteSystem;
use crate::error::{Error, Result};

/// Above this condition estimate the monomial boundary system is reported
/// as ill-conditioned in the log.
const CONDITION_WARN: f64 = 1e12;

/// The pieces of a linearizing transformation a controller needs.
pub trait Linearization {
    fn state_dim(&self) -> usize;
    /// `z = Φx(x)`
    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// `u = Φu⁻¹(x, v)`
    fn decode_input(&self, x: &[f64], v: f64) -> Result<f64>;
}

impl Linearization for AutoEncoder {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        AutoEncoder::encode_state(self, x)
    }

    fn decode_input(&self, x: &[f64], v: f64) -> Result<f64> {
        AutoEncoder::decode_input(self, x, v)
    }
}

impl<L: Linearization + ?Sized> Linearization for &L {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).encode_state(x)
    }

    fn decode_input(&self, x: &[f64], v: f64) -> Result<f64> {
        (**self).decode_input(x, v)
    }
}

/// A degree `2n − 1` polynomial reference in Brunovsky coordinates.
///
/// `z_d(k)ᵢ = p(k + i)` and `v_d(k) = p(k + n)` for the polynomial `p` that
/// takes the values `z0` at `k = 0..n` and `zN` at `k = N..N+n`. Samples are
/// stored once as `p(0), ..., p(N + n)` and all references index into that
/// array, so shifting `z_d(k)` by `v_d(k)` gives `z_d(k + 1)` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    n: usize,
    horizon: usize,
    /// Monomial coefficients `α` with `p(k) = Σ αⱼ kʲ`.
    coefficients: Vec<f64>,
    /// Condition estimate of the boundary system in the `k / N` basis.
    condition: f64,
    samples: Vec<f64>,
}

/// Plan a reference from `z0` at `k = 0` to `zN` at `k = N`.
///
/// The boundary conditions occupy the nodes `0..n` and `N..N+n`, which are
/// distinct only for `N ≥ n`; shorter horizons are rejected.
pub fn plan_trajectory(z0: &[f64], z_n: &[f64], horizon: usize) -> Result<TrajectoryPlan> {
    let n = z0.len();
    if n == 0 {
        return Err(Error::invalid("z0", "must not be empty"));
    }
    if z_n.len() != n {
        return Err(Error::Dimension {
            context: "plan_trajectory terminal state",
            expected: n,
            actual: z_n.len(),
        });
    }
    if z0.iter().chain(z_n).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("plan boundary state"));
    }
    if horizon < n {
        // overlapping nodes make the boundary matrix rank deficient
        return Err(Error::SingularBoundary { condition: f64::INFINITY });
    }

    let nodes: Vec<f64> = (0..n).chain(horizon..horizon + n).map(|k| k as f64).collect();
    let values: Vec<f64> = z0.iter().chain(z_n).copied().collect();
    let (coefficients, condition) = monomial_coefficients(&nodes, &values, horizon as f64)?;
    if condition > CONDITION_WARN {
        log::warn!("trajectory boundary system is ill-conditioned (estimate {condition:.3e})");
    }

    // interpolate offsets from the first value so constant plans stay exact
    let base = values[0];
    let offsets: Vec<f64> = values.iter().map(|v| v - base).collect();
    let weights = barycentric_weights(&nodes);
    let samples = (0..=horizon + n)
        .map(|k| match nodes.iter().position(|&x| x == k as f64) {
            Some(j) => values[j],
            None => base + lagrange_eval(&nodes, &weights, &offsets, k as f64),
        })
        .collect();
    Ok(TrajectoryPlan {
        n,
        horizon,
        coefficients,
        condition,
        samples,
    })
}

/// Solve the `2n × 2n` boundary system in the scaled variable `s = k / N`,
/// then map the coefficients back to the raw monomials in `k`.
fn monomial_coefficients(nodes: &[f64], values: &[f64], scale: f64) -> Result<(Vec<f64>, f64)> {
    let m = nodes.len();
    let a = DMatrix::from_fn(m, m, |r, c| (nodes[r] / scale).powi(c as i32));
    let b = DVector::from_column_slice(values);
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let beta = a
        .lu()
        .solve(&b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularBoundary { condition })?;
    let coefficients = beta
        .iter()
        .enumerate()
        .map(|(j, bj)| bj / scale.powi(j as i32))
        .collect();
    Ok((coefficients, condition))
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(j, xj)| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != j)
                .map(|(_, xm)| xj - xm)
                .product();
            1.0 / prod
        })
        .collect()
}

/// Modified Lagrange form `ℓ(x) Σ wⱼ yⱼ / (x − xⱼ)`, for `x` off the nodes.
fn lagrange_eval(nodes: &[f64], weights: &[f64], values: &[f64], x: f64) -> f64 {
    let ell: f64 = nodes.iter().map(|xj| x - xj).product();
    let sum: f64 = nodes
        .iter()
        .zip(weights)
        .zip(values)
        .map(|((xj, wj), yj)| wj * yj / (x - xj))
        .sum();
    ell * sum
}

impl TrajectoryPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `p(k)` evaluated from the monomial coefficients (Horner).
    pub fn polynomial(&self, k: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, a| acc * k + a)
    }

    /// `z_d(k)`; held at `z_d(N)` for `k > N`.
    pub fn z_d(&self, k: usize) -> Vec<f64> {
        let k = k.min(self.horizon);
        self.samples[k..k + self.n].to_vec()
    }

    /// `v_d(k)` for `k ≤ N`.
    pub fn v_d(&self, k: usize) -> f64 {
        self.samples[k.min(self.horizon) + self.n]
    }

    /// References used by the controller at step `k`. From `k = N` on the
    /// terminal state is held with `v_d = z_d(N)ₙ`, which keeps a rest
    /// state `(c, ..., c)` invariant under the shift.
    pub fn reference(&self, k: usize) -> (Vec<f64>, f64) {
        if k < self.horizon {
            (self.z_d(k), self.v_d(k))
        } else {
            let z = self.z_d(self.horizon);
            let v = z[self.n - 1];
            (z, v)
        }
    }

    /// CSV `k,zd1..zdn,vd` for `k = 0..=N`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k");
        for i in 1..=self.n {
            let _ = write!(out, ",zd{i}");
        }
        out.push_str(",vd\n");
        for k in 0..=self.horizon {
            let _ = write!(out, "{k}");
            for z in self.z_d(k) {
                let _ = write!(out, ",{z:.16e}");
            }
            let _ = writeln!(out, ",{:.16e}", self.v_d(k));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Companion-form feedback coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    /// `a₀ .. aₙ₋₁`, the low-order coefficients of the monic closed-loop
    /// characteristic polynomial.
    pub a: Vec<f64>,
    pub poles: Vec<Complex<f64>>,
}

fn same_pole(p: Complex<f64>, q: Complex<f64>) -> bool {
    (p - q).norm() <= 1e-12 * (1.0 + p.norm())
}

/// Gains whose error dynamics have the requested eigenvalues.
pub fn pole_placement(poles: &[Complex<f64>]) -> Result<ControllerGains> {
    if poles.is_empty() {
        return Err(Error::invalid("poles", "need at least one pole"));
    }
    if let Some(p) = poles.iter().find(|p| !(p.re.is_finite() && p.im.is_finite())) {
        return Err(Error::invalid("poles", format!("non-finite pole {p}")));
    }
    if let Some(p) = poles.iter().find(|p| p.norm() >= 1.0) {
        return Err(Error::invalid("poles", format!("pole {p} has magnitude {} ≥ 1", p.norm())));
    }
    let mut unmatched: Vec<Complex<f64>> = poles.iter().copied().filter(|p| p.im != 0.0).collect();
    while let Some(p) = unmatched.pop() {
        match unmatched.iter().position(|&q| same_pole(q, p.conj())) {
            Some(i) => {
                unmatched.swap_remove(i);
            }
            None => {
                return Err(Error::invalid(
                    "poles",
                    format!("{p} has no conjugate partner"),
                ))
            }
        }
    }

    // ∏ (z − pᵢ), coefficients from z⁰ upward
    let mut c = vec![Complex::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); c.len() + 1];
        for (j, cj) in c.iter().enumerate() {
            next[j + 1] += cj;
            next[j] -= cj * p;
        }
        c = next;
    }
    let a = c[..poles.len()].iter().map(|cj| cj.re).collect();
    Ok(ControllerGains {
        a,
        poles: poles.to_vec(),
    })
}

/// Real poles, convenience for configs.
pub fn pole_placement_real(poles: &[f64]) -> Result<ControllerGains> {
    let poles: Vec<Complex<f64>> = poles.iter().map(|&p| Complex::new(p, 0.0)).collect();
    pole_placement(&poles)
}

impl ControllerGains {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// The error-dynamics matrix: ones on the superdiagonal, `−a` in the
    /// last row.
    pub fn companion(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            m[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            m[(n - 1, j)] = -self.a[j];
        }
        m
    }

    /// Roots of `zⁿ + aₙ₋₁zⁿ⁻¹ + ... + a₀`, from the companion eigenvalues
    /// refined by Newton steps on the polynomial.
    pub fn realized_poles(&self) -> Vec<Complex<f64>> {
        let n = self.n();
        let eig = self.companion().complex_eigenvalues();
        eig.iter()
            .map(|&r0| {
                let mut r = r0;
                for _ in 0..8 {
                    let (p, dp) = self.char_poly(r);
                    if dp.norm() == 0.0 {
                        break;
                    }
                    let step = p / dp;
                    if !(step.re.is_finite() && step.im.is_finite()) {
                        break;
                    }
                    r -= step;
                    if step.norm() <= 1e-16 * (1.0 + r.norm()) {
                        break;
                    }
                }
                r
            })
            .take(n)
            .collect()
    }

    fn char_poly(&self, z: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
        let mut p = Complex::new(1.0, 0.0);
        let mut dp = Complex::new(0.0, 0.0);
        for a in self.a.iter().rev() {
            dp = dp * z + p;
            p = p * z + a;
        }
        (p, dp)
    }

    /// `v = −a·e + v_d`
    pub fn law(&self, e: &[f64], v_d: f64) -> f64 {
        v_d - self.a.iter().zip(e).map(|(a, e)| a * e).sum::<f64>()
    }
}

/// Largest distance from each requested pole to its nearest unused realized
/// root.
pub fn pole_match_error(requested: &[Complex<f64>], realized: &[Complex<f64>]) -> f64 {
    let mut pool: Vec<Complex<f64>> = realized.to_vec();
    let mut worst: f64 = 0.0;
    for p in requested {
        let Some((i, d)) = pool
            .iter()
            .map(|q| (q - p).norm())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            return f64::INFINITY;
        };
        pool.swap_remove(i);
        worst = worst.max(d);
    }
    if pool.is_empty() {
        worst
    } else {
        f64::INFINITY
    }
}

/// One controller evaluation with its Brunovsky-coordinate diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub u: f64,
    pub z: Vec<f64>,
    pub z_d: Vec<f64>,
    pub v: f64,
    pub v_d: f64,
    pub e: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopController<L = AutoEncoder> {
    pub linearization: L,
    pub gains: ControllerGains,
    pub plan: TrajectoryPlan,
}

impl<L: Linearization> ClosedLoopController<L> {
    pub fn new(linearization: L, gains: ControllerGains, plan: TrajectoryPlan) -> Result<Self> {
        let n = linearization.state_dim();
        for (context, actual) in [("controller gains", gains.n()), ("trajectory plan", plan.n())] {
            if actual != n {
                return Err(Error::Dimension {
                    context,
                    expected: n,
                    actual,
                });
            }
        }
        Ok(Self {
            linearization,
            gains,
            plan,
        })
    }

    pub fn n(&self) -> usize {
        self.gains.n()
    }

    pub fn control_step(&self, x: &[f64], k: usize) -> Result<ControlStep> {
        let z = self.linearization.encode_state(x)?;
        let (z_d, v_d) = self.plan.reference(k);
        let e: Vec<f64> = z.iter().zip(&z_d).map(|(a, b)| a - b).collect();
        let v = self.gains.law(&e, v_d);
        let u = self.linearization.decode_input(x, v)?;
        if !u.is_finite() {
            return Err(Error::non_finite(format!(
                "control input at k = {k} (z = {z:?}, v = {v:e}, e = {e:?})"
            )));
        }
        Ok(ControlStep { u, z, z_d, v, v_d, e })
    }
}

/// Aligned traces of a closed-loop run. `states` has one more entry than the
/// per-step vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosedLoopTrace {
    pub states: Vec<Vec<f64>>,
    pub steps: Vec<ControlStep>,
}

impl ClosedLoopTrace {
    pub fn inputs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.u).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    pub fn metrics(&self) -> TrackingMetrics {
        let norms: Vec<f64> = self
            .steps
            .iter()
            .map(|s| s.e.iter().map(|e| e * e).sum::<f64>().sqrt())
            .collect();
        let count = norms.len().max(1) as f64;
        TrackingMetrics {
            rms: (norms.iter().map(|e| e * e).sum::<f64>() / count).sqrt(),
            max: norms.iter().copied().fold(0.0, f64::max),
            terminal: norms.last().copied().unwrap_or(0.0),
        }
    }

    /// CSV `k,x1..xn,u,z1..zn,zd1..zdn,v,vd,e1..en`; the final state row
    /// leaves the controller columns empty.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("k");
        for prefix in ["x"] {
            for i in 1..=n {
                let _ = write!(out, ",{prefix}{i}");
            }
        }
        out.push_str(",u");
        for prefix in ["z", "zd"] {
            for i in 1..=n {
                let _ = write!(out, ",{prefix}{i}");
            }
        }
        out.push_str(",v,vd");
        for i in 1..=n {
            let _ = write!(out, ",e{i}");
        }
        out.push('\n');
        for (k, x) in self.states.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in x {
                let _ = write!(out, ",{v:.16e}");
            }
            match self.steps.get(k) {
                Some(s) => {
                    let _ = write!(out, ",{:.16e}", s.u);
                    for v in s.z.iter().chain(&s.z_d) {
                        let _ = write!(out, ",{v:.16e}");
                    }
                    let _ = write!(out, ",{:.16e},{:.16e}", s.v, s.v_d);
                    for v in &s.e {
                        let _ = write!(out, ",{v:.16e}");
                    }
                }
                None => out.push_str(&",".repeat(1 + 3 * n + 2)),
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    /// Root mean square of `‖e_k‖`.
    pub rms: f64,
    pub max: f64,
    pub terminal: f64,
}

/// Alternate controller and plant for `steps` steps starting from `x0`.
pub fn run_closed_loop<L: Linearization>(
    sys: &dyn DiscreteSystem,
    ctrl: &ClosedLoopController<L>,
    x0: &[f64],
    steps: usize,
) -> Result<ClosedLoopTrace> {
    if sys.state_dim() != ctrl.n() {
        return Err(Error::Dimension {
            context: "closed loop plant",
            expected: ctrl.n(),
            actual: sys.state_dim(),
        });
    }
    if x0.len() != ctrl.n() {
        return Err(Error::Dimension {
            context: "closed loop initial state",
            expected: ctrl.n(),
            actual: x0.len(),
        });
    }
    let mut trace = ClosedLoopTrace {
        states: Vec::with_capacity(steps + 1),
        steps: Vec::with_capacity(steps),
    };
    trace.states.push(x0.to_vec());
    for k in 0..steps {
        let x = &trace.states[k];
        let step = ctrl.control_step(x, k).map_err(|e| Error::at_step(k, e))?;
        let next = sys.step(x, step.u).map_err(|e| Error::at_step(k, e))?;
        trace.steps.push(step);
        trace.states.push(next);
    }
    Ok(trace)
}

/// The pure shift register `z⁺ = σ(z, v)` as a plant.
#[derive(Debug, Clone, Copy)]
pub struct ShiftPlant {
    pub n: usize,
}

impl DiscreteSystem for ShiftPlant {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn sampling_time(&self) -> f64 {
        1.0
    }

    fn step(&self, x: &[f64], u: f64) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                context: "shift plant state",
                expected: self.n,
                actual: x.len(),
            });
        }
        Ok(shift(x, u))
    }
}

/// The identity transformation, for plants already in Brunovsky form.
#[derive(Debug, Clone, Copy)]
pub struct IdentityLinearization {
    pub n: usize,
}

impl Linearization for IdentityLinearization {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn decode_input(&self, _x: &[f64], v: f64) -> Result<f64> {
        Ok(v)
    }
}

/// The exact Brunovsky transformation of a controllable linear plant
/// `x⁺ = A x + b u`: `zᵢ = t Aⁱ⁻¹ x` with `t` the last row of the inverse
/// controllability matrix, and `v = t Aⁿ x + t Aⁿ⁻¹ b u`.
///
/// `t` is scaled so that its first entry is one, which maps a rest state
/// `(c, 0, ..., 0)` of a plant with an integrator on `x₁` to `(c, ..., c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBrunovsky {
    pub transform: DMatrix<f64>,
    /// `t Aⁿ`
    pub drift: DVector<f64>,
    /// `t Aⁿ⁻¹ b`
    pub input_gain: f64,
}

impl LinearBrunovsky {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let n = b.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::Dimension {
                context: "linear plant matrix",
                expected: n,
                actual: a.nrows(),
            });
        }
        let mut ctrb = DMatrix::zeros(n, n);
        let mut col = b.clone();
        for j in 0..n {
            ctrb.set_column(j, &col);
            col = a * col;
        }
        let mut e_n = DVector::zeros(n);
        e_n[n - 1] = 1.0;
        let t = ctrb
            .transpose()
            .lu()
            .solve(&e_n)
            .filter(|t| t.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::invalid("linear plant", "not controllable"))?;
        let t = if t[0] != 0.0 { &t / t[0] } else { t };
        let mut transform = DMatrix::zeros(n, n);
        let mut row = t.transpose();
        for i in 0..n {
            transform.set_row(i, &row);
            row = &row * a;
        }
        let input_gain = (transform.row(n - 1) * b)[0];
        Ok(Self {
            transform,
            drift: row.transpose(),
            input_gain,
        })
    }
}

impl Linearization for LinearBrunovsky {
    fn state_dim(&self) -> usize {
        self.transform.nrows()
    }

    fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "linear Brunovsky state",
                expected: self.state_dim(),
                actual: x.len(),
            });
        }
        Ok((&self.transform * DVector::from_column_slice(x)).as_slice().to_vec())
    }

    fn decode_input(&self, x: &[f64], v: f64) -> Result<f64> {
        let drift = self.drift.dot(&DVector::from_column_slice(x));
        Ok((v - drift) / self.input_gain)
    }
}
