//! Ground-truth discrete-time plants.
//!
//! Two plants are provided: the three-state academic system that is exactly
//! linearizable by static feedback, and the single-mast stacker crane whose
//! elastic mast is reduced to one Rayleigh-Ritz mode and discretized with a
//! zero-order hold.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominators of the academic system closer to zero than this are rejected.
pub const SINGULAR_GUARD: f64 = 1e-9;

/// A deterministic single-input discrete-time system `x⁺ = f(x, u)`.
pub trait DiscreteSystem: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Sampling period in seconds. Informational for systems that are not
    /// discretized from a continuous model.
    fn sampling_time(&self) -> f64;

    fn step(&self, x: &[f64], u: f64) -> Result<Vec<f64>>;
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}

/// The academic example
///
/// ```text
/// x1⁺ = x2 / (x1 + 2)
/// x2⁺ = x2·x3 / (x1 + 2) + 2·x3
/// x3⁺ = u / (x2 + 2)
/// ```
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcademicSystem;

impl AcademicSystem {
    pub const STATE_DIM: usize = 3;
}

/// One step of the academic system.
pub fn academic_step(x: &[f64], u: f64) -> Result<[f64; 3]> {
    check_dim("academic_step", 3, x.len())?;
    let d1 = x[0] + 2.0;
    if !(d1.abs() >= SINGULAR_GUARD) {
        return Err(Error::SingularDenominator {
            location: "x1 + 2",
            value: d1,
        });
    }
    let d2 = x[1] + 2.0;
    if !(d2.abs() >= SINGULAR_GUARD) {
        return Err(Error::SingularDenominator {
            location: "x2 + 2",
            value: d2,
        });
    }
    Ok([x[1] / d1, x[1] * x[2] / d1 + 2.0 * x[2], u / d2])
}

impl DiscreteSystem for AcademicSystem {
    fn state_dim(&self) -> usize {
        Self::STATE_DIM
    }

    fn sampling_time(&self) -> f64 {
        1.0
    }

    fn step(&self, x: &[f64], u: f64) -> Result<Vec<f64>> {
        academic_step(x, u).map(|y| y.to_vec())
    }
}

/// Physical parameters of the single-mast stacker crane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CraneParams {
    /// Mast length `L` in m.
    pub mast_length: f64,
    /// Cart mass `m_c` in kg.
    pub cart_mass: f64,
    /// Tip mass `m_h` in kg.
    pub tip_mass: f64,
    /// Linear mass density `ρA` in kg/m.
    pub linear_density: f64,
    /// Bending stiffness `EI` in N·m².
    pub bending_stiffness: f64,
}

impl CraneParams {
    /// The nominal crane ΣN.
    pub const NOMINAL: CraneParams = CraneParams {
        mast_length: 0.53,
        cart_mass: 13.10,
        tip_mass: 0.32,
        linear_density: 2.10,
        bending_stiffness: 14.97,
    };

    /// The perturbed target crane ΣT.
    pub const TARGET: CraneParams = CraneParams {
        mast_length: 0.53,
        cart_mass: 12.72,
        tip_mass: 0.34,
        linear_density: 2.26,
        bending_stiffness: 14.28,
    };

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mast_length", self.mast_length),
            ("cart_mass", self.cart_mass),
            ("tip_mass", self.tip_mass),
            ("linear_density", self.linear_density),
            ("bending_stiffness", self.bending_stiffness),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and strictly positive, got {value}"),
                ));
            }
        }
        Ok(())
    }
}

/// Spatial shape function `Ψ(Y)` of the single-mode Rayleigh-Ritz ansatz.
///
/// Both shapes satisfy the clamped-base conditions `Ψ(0) = Ψ'(0) = 0` and are
/// normalized to `Ψ(L) = 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ansatz {
    /// `Ψ(Y) = (Y/L)²`.
    #[default]
    Quadratic,
    /// Static tip-load deflection `Ψ(Y) = (3(Y/L)² − (Y/L)³) / 2`.
    Cubic,
}

impl Ansatz {
    pub fn eval(self, y: f64, length: f64) -> f64 {
        let s = y / length;
        match self {
            Ansatz::Quadratic => s * s,
            Ansatz::Cubic => 0.5 * (3.0 * s * s - s * s * s),
        }
    }

    /// `∫₀ᴸ Ψ dY`
    pub fn integral(self, length: f64) -> f64 {
        match self {
            Ansatz::Quadratic => length / 3.0,
            Ansatz::Cubic => 0.375 * length,
        }
    }

    /// `∫₀ᴸ Ψ² dY`
    pub fn integral_sq(self, length: f64) -> f64 {
        match self {
            Ansatz::Quadratic => length / 5.0,
            Ansatz::Cubic => 33.0 / 140.0 * length,
        }
    }

    /// `∫₀ᴸ (Ψ'')² dY`
    pub fn curvature_integral(self, length: f64) -> f64 {
        match self {
            Ansatz::Quadratic => 4.0 / length.powi(3),
            Ansatz::Cubic => 3.0 / length.powi(3),
        }
    }
}

/// Options that select among modelling variants of the crane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CraneOptions {
    #[serde(default)]
    pub ansatz: Ansatz,
    /// Use the tip mass instead of the cart mass in `m22`.
    #[serde(default)]
    pub m22_tip_mass: bool,
}

/// Mass matrix, mast stiffness and input map of `M q̈ + K q = G u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CraneMatrices {
    pub mass: Matrix2<f64>,
    pub stiffness: f64,
    pub input_map: Vector2<f64>,
}

pub fn build_crane_matrices(params: &CraneParams, options: CraneOptions) -> Result<CraneMatrices> {
    params.validate()?;
    let CraneParams {
        mast_length: l,
        cart_mass,
        tip_mass,
        linear_density: rho_a,
        bending_stiffness: ei,
    } = *params;
    let psi = options.ansatz;
    let psi_l = psi.eval(l, l);
    let m11 = rho_a * l + cart_mass + tip_mass;
    let m12 = tip_mass * psi_l + rho_a * psi.integral(l);
    let m22_point = if options.m22_tip_mass {
        tip_mass
    } else {
        cart_mass
    };
    let m22 = m22_point * psi_l * psi_l + rho_a * psi.integral_sq(l);
    let c2 = ei * psi.curvature_integral(l);
    Ok(CraneMatrices {
        mass: Matrix2::new(m11, m12, m12, m22),
        stiffness: c2,
        input_map: Vector2::new(1.0, 0.0),
    })
}

/// Exact zero-order-hold discretization of `ẋ = A x + B u`.
///
/// Uses the exponential of the augmented block matrix `[[A, B], [0, 0]]·T`.
pub fn zoh_discretize(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    sampling_time: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = a.nrows();
    check_dim("zoh_discretize (square A)", n, a.ncols())?;
    check_dim("zoh_discretize (B rows)", n, b.len())?;
    if !(sampling_time.is_finite() && sampling_time > 0.0) {
        return Err(Error::invalid(
            "sampling_time",
            format!("must be positive, got {sampling_time}"),
        ));
    }
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(b);
    aug *= sampling_time;
    let e = aug.exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("matrix exponential"));
    }
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).column(0).into_owned();
    Ok((ad, bd))
}

/// The crane reduced to a four-state linear model with state ordering
/// `(x_c, q̄, ẋ_c, q̄̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CraneModel {
    pub params: CraneParams,
    pub options: CraneOptions,
    pub matrices: CraneMatrices,
    pub a_c: Matrix4<f64>,
    pub b_c: Vector4<f64>,
    pub a_d: Matrix4<f64>,
    pub b_d: Vector4<f64>,
    pub sampling_time: f64,
}

impl CraneModel {
    pub const STATE_DIM: usize = 4;

    pub fn new(params: CraneParams, options: CraneOptions, sampling_time: f64) -> Result<Self> {
        let matrices = build_crane_matrices(&params, options)?;
        let m_inv = matrices
            .mass
            .try_inverse()
            .ok_or_else(|| Error::invalid("mass_matrix", "singular"))?;
        let k = Matrix2::new(0.0, 0.0, 0.0, matrices.stiffness);
        let mk = -m_inv * k;
        let mg = m_inv * matrices.input_map;

        let mut a_c = Matrix4::zeros();
        a_c.fixed_view_mut::<2, 2>(0, 2).fill_with_identity();
        a_c.fixed_view_mut::<2, 2>(2, 0).copy_from(&mk);
        let mut b_c = Vector4::zeros();
        b_c.fixed_rows_mut::<2>(2).copy_from(&mg);

        let a_dyn = DMatrix::from_column_slice(4, 4, a_c.as_slice());
        let b_dyn = DVector::from_column_slice(b_c.as_slice());
        let (ad, bd) = zoh_discretize(&a_dyn, &b_dyn, sampling_time)?;

        Ok(Self {
            params,
            options,
            matrices,
            a_c,
            b_c,
            a_d: Matrix4::from_column_slice(ad.as_slice()),
            b_d: Vector4::from_column_slice(bd.as_slice()),
            sampling_time,
        })
    }

    /// Horizontal mast deflection `w(Y) = x_c + Ψ(Y)·q̄` at height `y`.
    pub fn deflection(&self, x: &[f64], y: f64) -> f64 {
        x[0] + self.options.ansatz.eval(y, self.params.mast_length) * x[1]
    }

    /// Horizontal tip position `x_h = w(L)`.
    pub fn tip_position(&self, x: &[f64]) -> f64 {
        self.deflection(x, self.params.mast_length)
    }

    /// Kinetic plus elastic energy `½ q̇ᵀ M q̇ + ½ c2 q̄²`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let qd = Vector2::new(x[2], x[3]);
        0.5 * qd.dot(&(self.matrices.mass * qd)) + 0.5 * self.matrices.stiffness * x[1] * x[1]
    }
}

impl DiscreteSystem for CraneModel {
    fn state_dim(&self) -> usize {
        Self::STATE_DIM
    }

    fn sampling_time(&self) -> f64 {
        self.sampling_time
    }

    fn step(&self, x: &[f64], u: f64) -> Result<Vec<f64>> {
        check_dim("crane step", 4, x.len())?;
        let xv = Vector4::from_column_slice(x);
        let next = self.a_d * xv + self.b_d * u;
        Ok(next.as_slice().to_vec())
    }
}

/// Roll a system forward from `x0` under `inputs`. The returned trajectory has
/// `inputs.len() + 1` states.
pub fn simulate(sys: &dyn DiscreteSystem, x0: &[f64], inputs: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dim("simulate (x0)", sys.state_dim(), x0.len())?;
    if inputs.is_empty() {
        return Err(Error::invalid("inputs", "at least one input is required"));
    }
    let mut traj = Vec::with_capacity(inputs.len() + 1);
    traj.push(x0.to_vec());
    for (k, &u) in inputs.iter().enumerate() {
        let next = sys
            .step(&traj[k], u)
            .map_err(|e| Error::at_step(k, e))?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::at_step(k, Error::non_finite("plant state")));
        }
        traj.push(next);
    }
    Ok(traj)
}

/// Write a simulated trajectory as CSV `k,x1,...,xn,u`. The final state has
/// no applied input, so its `u` cell is empty.
pub fn write_trajectory_csv(path: &Path, states: &[Vec<f64>], inputs: &[f64]) -> Result<()> {
    let n = states.first().map_or(0, Vec::len);
    let mut out = String::new();
    out.push('k');
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push_str(",u\n");
    for (k, x) in states.iter().enumerate() {
        let _ = write!(out, "{k}");
        for v in x {
            let _ = write!(out, ",{v:.16e}");
        }
        match inputs.get(k) {
            Some(u) => {
                let _ = writeln!(out, ",{u:.16e}");
            }
            None => out.push_str(",\n"),
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
