//! Finite-dimensional Koopman approximation of the joint pilot + lander system.
//!
//! Each snapshot stacks the lander state with the pilot's input. Snapshots are
//! lifted through a basis and the square operator `K` is the regularized
//! least-squares map taking `lift(x_t, u_t)` to `lift(x_{t+1}, u_{t+1})`, i.e.
//! `z_{t+1} ~ K^T z_t`. For the linear-with-bias basis the state rows of `K^T`
//! are an affine control model `x_{t+1} = A x_t + B u_t + c`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix6, SMatrix, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lander::{ControlInput, LanderState, CONTROL_DIM, STATE_DIM};

/// Ridge parameter used when none is configured.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// One joint state + input snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSample {
    pub state: LanderState,
    pub input: ControlInput,
    pub t: f64,
}

impl JointSample {
    pub fn new(state: LanderState, input: ControlInput, t: f64) -> Self {
        Self { state, input, t }
    }
}

pub const LINEAR_WITH_BIAS: &str = "linear-with-bias";

/// Index map from lifted coordinates to meaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisLayout {
    pub bias: usize,
    pub state: [usize; STATE_DIM],
    pub control: [usize; CONTROL_DIM],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: String,
    pub lifted_dim: usize,
    pub layout: BasisLayout,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self::linear_with_bias()
    }
}

impl BasisSpec {
    /// `[1, x, y, theta, vx, vy, omega, u_main, u_rot]`.
    pub fn linear_with_bias() -> Self {
        Self {
            kind: LINEAR_WITH_BIAS.to_string(),
            lifted_dim: 1 + STATE_DIM + CONTROL_DIM,
            layout: BasisLayout {
                bias: 0,
                state: [1, 2, 3, 4, 5, 6],
                control: [7, 8],
            },
        }
    }

    /// Checks the kind is supported and the layout is a bijection onto `0..N`.
    pub fn validate(&self) -> Result<()> {
        if self.kind != LINEAR_WITH_BIAS {
            return Err(Error::UnsupportedBasis(self.kind.clone()));
        }
        if self.lifted_dim != 1 + STATE_DIM + CONTROL_DIM {
            return Err(Error::Config(format!(
                "basis {} has lifted dimension {}, expected {}",
                self.kind,
                self.lifted_dim,
                1 + STATE_DIM + CONTROL_DIM
            )));
        }
        let mut seen = vec![false; self.lifted_dim];
        let indices = std::iter::once(self.layout.bias)
            .chain(self.layout.state)
            .chain(self.layout.control);
        for i in indices {
            if i >= self.lifted_dim || seen[i] {
                return Err(Error::Config("basis layout is not a bijection".into()));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Lift a snapshot through the basis.
pub fn lift(sample: &JointSample, basis: &BasisSpec) -> Result<DVector<f64>> {
    basis.validate()?;
    Ok(lift_unchecked(&sample.state, &sample.input, basis))
}

fn lift_unchecked(state: &LanderState, input: &ControlInput, basis: &BasisSpec) -> DVector<f64> {
    let mut z = DVector::zeros(basis.lifted_dim);
    z[basis.layout.bias] = 1.0;
    for (&i, v) in basis.layout.state.iter().zip(state.to_array()) {
        z[i] = v;
    }
    for (&i, v) in basis.layout.control.iter().zip(input.to_array()) {
        z[i] = v;
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    /// `N x N`; predictions are `K^T z`.
    pub k: DMatrix<f64>,
    pub basis: BasisSpec,
    pub ridge: f64,
    /// Number of snapshot pairs used by the fit.
    pub n_samples: usize,
}

/// `x_{t+1} = A x_t + B u_t + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLinearModel {
    pub a: Matrix6<f64>,
    pub b: SMatrix<f64, 6, 2>,
    pub c: Vector6<f64>,
}

impl AffineLinearModel {
    pub fn predict(&self, state: &LanderState, input: &ControlInput) -> LanderState {
        let u = Vector2::new(input.u_main, input.u_rot);
        LanderState::from_vector(&(self.a * state.to_vector() + self.b * u + self.c))
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).chain(self.c.iter()).all(|v| v.is_finite())
    }
}

/// Snapshot pairs within each trajectory. Pairs never cross trajectories;
/// trajectories shorter than two samples contribute nothing.
fn snapshot_pairs(trajectories: &[Vec<JointSample>]) -> impl Iterator<Item = (&JointSample, &JointSample)> {
    trajectories
        .iter()
        .flat_map(|traj| traj.iter().zip(traj.iter().skip(1)))
}

fn check_trajectories(trajectories: &[Vec<JointSample>]) -> Result<()> {
    for traj in trajectories {
        for w in traj.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Config("sample timestamps must strictly increase within a trajectory".into()));
            }
        }
        for s in traj {
            if !(s.state.is_finite() && s.input.is_finite() && s.t.is_finite() && s.t >= 0.0) {
                return Err(Error::NonFinite("joint sample"));
            }
        }
    }
    Ok(())
}

/// Regularized EDMD: `K = (Zx Zx^T + ridge I)^-1 Zx Zy^T`.
pub fn fit_koopman(trajectories: &[Vec<JointSample>], basis: &BasisSpec, ridge: f64) -> Result<KoopmanModel> {
    basis.validate()?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::Config("ridge must be finite and >= 0".into()));
    }
    check_trajectories(trajectories)?;

    let n = basis.lifted_dim;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut cross = DMatrix::<f64>::zeros(n, n);
    let mut pairs = 0usize;
    for (now, next) in snapshot_pairs(trajectories) {
        let z = lift_unchecked(&now.state, &now.input, basis);
        let zn = lift_unchecked(&next.state, &next.input, basis);
        gram.ger(1.0, &z, &z, 1.0);
        cross.ger(1.0, &z, &zn, 1.0);
        pairs += 1;
    }
    if pairs < n {
        return Err(Error::InsufficientData { pairs, needed: n });
    }
    for i in 0..n {
        gram[(i, i)] += ridge;
    }

    let k = if ridge > 0.0 {
        match gram.clone().cholesky() {
            Some(chol) => chol.solve(&cross),
            None => return Err(Error::Singular { rank: numerical_rank(&gram), dim: n }),
        }
    } else {
        let rank = numerical_rank(&gram);
        if rank < n {
            return Err(Error::Singular { rank, dim: n });
        }
        match gram.clone().cholesky() {
            Some(chol) => chol.solve(&cross),
            None => gram
                .svd(true, true)
                .solve(&cross, 0.0)
                .map_err(|_| Error::Singular { rank, dim: n })?,
        }
    };
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fitted Koopman matrix"));
    }
    Ok(KoopmanModel {
        k,
        basis: basis.clone(),
        ridge,
        n_samples: pairs,
    })
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let max = sv.max();
    let tol = max * m.nrows() as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Regularized least-squares objective `sum ||K^T z_t - z_{t+1}||^2 + ridge ||K||_F^2`.
pub fn fit_objective(k: &DMatrix<f64>, trajectories: &[Vec<JointSample>], basis: &BasisSpec, ridge: f64) -> f64 {
    let kt = k.transpose();
    let residual: f64 = snapshot_pairs(trajectories)
        .map(|(now, next)| {
            let z = lift_unchecked(&now.state, &now.input, basis);
            let zn = lift_unchecked(&next.state, &next.input, basis);
            (&kt * z - zn).norm_squared()
        })
        .sum();
    residual + ridge * k.norm_squared()
}

/// State rows of `K^T` split into state, control and bias columns.
pub fn extract_linear(model: &KoopmanModel) -> Result<AffineLinearModel> {
    model.basis.validate()?;
    let layout = &model.basis.layout;
    let m = model.k.transpose();
    let mut a = Matrix6::zeros();
    let mut b = SMatrix::<f64, 6, 2>::zeros();
    let mut c = Vector6::zeros();
    for (r, &row) in layout.state.iter().enumerate() {
        for (col, &src) in layout.state.iter().enumerate() {
            a[(r, col)] = m[(row, src)];
        }
        for (col, &src) in layout.control.iter().enumerate() {
            b[(r, col)] = m[(row, src)];
        }
        c[r] = m[(row, layout.bias)];
    }
    Ok(AffineLinearModel { a, b, c })
}

/// One-step state prediction: `K^T lift(sample)` projected onto state coordinates.
pub fn predict(model: &KoopmanModel, sample: &JointSample) -> Result<LanderState> {
    let z = lift(sample, &model.basis)?;
    let next = model.k.tr_mul(&z);
    let s = &model.basis.layout.state;
    Ok(LanderState::new(
        next[s[0]], next[s[1]], next[s[2]], next[s[3]], next[s[4]], next[s[5]],
    ))
}

/// Audit record of an LQR solve, stored alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrExport {
    /// 6x6 row-major.
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    /// 2x6 row-major.
    pub gain: Vec<f64>,
    pub u_ff: [f64; 2],
    pub residual: f64,
    pub spectral_radius: f64,
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub basis: BasisSpec,
    pub ridge: f64,
    pub n_samples: usize,
    /// Row-major `N x N`.
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr: Option<LqrExport>,
}

impl KoopmanModel {
    pub fn to_file(&self, lqr: Option<LqrExport>) -> ModelFile {
        let n = self.k.nrows();
        let mut k = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                k.push(self.k[(i, j)]);
            }
        }
        ModelFile {
            basis: self.basis.clone(),
            ridge: self.ridge,
            n_samples: self.n_samples,
            k,
            lqr,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        file.basis
            .validate()
            .map_err(|e| Error::MalformedModel(e.to_string()))?;
        let n = file.basis.lifted_dim;
        if file.k.len() != n * n {
            return Err(Error::MalformedModel(format!(
                "K has {} entries, expected {}",
                file.k.len(),
                n * n
            )));
        }
        if file.k.iter().any(|v| !v.is_finite()) || !file.ridge.is_finite() {
            return Err(Error::MalformedModel("non-finite entry".into()));
        }
        Ok(Self {
            k: DMatrix::from_row_slice(n, n, &file.k),
            basis: file.basis.clone(),
            ridge: file.ridge,
            n_samples: file.n_samples,
        })
    }

    pub fn to_json(&self, lqr: Option<LqrExport>) -> String {
        serde_json::to_string_pretty(&self.to_file(lqr)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: &Path, lqr: Option<LqrExport>) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json(lqr)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
