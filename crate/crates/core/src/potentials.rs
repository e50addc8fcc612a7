//! Instantaneous losses `V(x, w)` with analytic gradients and second-derivative blocks.
//!
//! Three squared-loss families are provided. Each exposes exact first
//! derivatives in both arguments and exact Jacobian blocks, so the mixed
//! partial blocks are transposes of each other by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// A differentiable loss in inputs `x ∈ R^d` and weights `w ∈ R^m`.
pub trait Potential: Send + Sync {
    fn input_dim(&self) -> usize;
    fn weight_dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<f64>;
    fn grad_w(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;
    fn grad_x(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Target reader `y(x)` for the scalar regression kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `a·x + b`.
    Affine { weights: Vec<f64>, bias: f64 },
    /// `Σ a_k tanh(x_k) + b`.
    TanhSum { weights: Vec<f64>, bias: f64 },
}

impl Target {
    pub fn constant(d: usize, value: f64) -> Self {
        Target::Affine {
            weights: vec![0.0; d],
            bias: value,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Target::Affine { weights, .. } | Target::TanhSum { weights, .. } => weights.len(),
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Target::Affine { weights, bias } => {
                bias + weights.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>()
            }
            Target::TanhSum { weights, bias } => {
                bias + weights
                    .iter()
                    .zip(x.iter())
                    .map(|(a, v)| a * v.tanh())
                    .sum::<f64>()
            }
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Target::Affine { weights, .. } => DVector::from_column_slice(weights),
            Target::TanhSum { weights, .. } => DVector::from_iterator(
                weights.len(),
                weights.iter().zip(x.iter()).map(|(a, v)| {
                    let s = v.tanh();
                    a * (1.0 - s * s)
                }),
            ),
        }
    }

    /// Diagonal of the Hessian (both target kinds are separable).
    fn hessian_diag(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Target::Affine { weights, .. } => DVector::zeros(weights.len()),
            Target::TanhSum { weights, .. } => DVector::from_iterator(
                weights.len(),
                weights.iter().zip(x.iter()).map(|(a, v)| {
                    let s = v.tanh();
                    -2.0 * a * s * (1.0 - s * s)
                }),
            ),
        }
    }
}

/// Feature map `φ(x)` of the linear-regression kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// `φ(x) = x`.
    Identity,
    /// `φ(x) = (x, 1)`.
    WithBias,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `½‖M w − x‖²`, `M ∈ R^{d×m}`.
    QuadraticTracking { matrix: DMatrix<f64> },
    /// `½(w·φ(x) − y(x))²`.
    LinearRegression { features: FeatureMap, target: Target },
    /// `½(c·tanh(A x) − y(x))²` with `w = (vec_row(A), c)`, `A ∈ R^{h×d}`.
    TwoLayerTanh { hidden: usize, target: Target },
}

/// Second-derivative blocks of `V` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    /// `∂_w V_w`, `m × m`.
    pub jw: DMatrix<f64>,
    /// `∂_x V_w`, `m × d`.
    pub jx: DMatrix<f64>,
    /// `∂_w V_x`, `d × m`.
    pub kw: DMatrix<f64>,
    /// `∂_x V_x`, `d × d`.
    pub kx: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    input_dim: usize,
    weight_dim: usize,
    kind: PotentialKind,
}

impl PotentialModel {
    pub fn quadratic_tracking(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Parameter("tracking matrix must be non-empty".into()));
        }
        Ok(Self {
            input_dim: matrix.nrows(),
            weight_dim: matrix.ncols(),
            kind: PotentialKind::QuadraticTracking { matrix },
        })
    }

    /// `½‖w − x‖²` in `d` dimensions.
    pub fn identity_tracking(d: usize) -> Result<Self> {
        Self::quadratic_tracking(DMatrix::identity(d, d))
    }

    pub fn linear_regression(d: usize, features: FeatureMap, target: Target) -> Result<Self> {
        check_len("regression target inputs", d, target.dim())?;
        if d == 0 {
            return Err(Error::Parameter("input dimension must be positive".into()));
        }
        let m = match features {
            FeatureMap::Identity => d,
            FeatureMap::WithBias => d + 1,
        };
        Ok(Self {
            input_dim: d,
            weight_dim: m,
            kind: PotentialKind::LinearRegression { features, target },
        })
    }

    pub fn two_layer_tanh(d: usize, hidden: usize, target: Target) -> Result<Self> {
        check_len("network target inputs", d, target.dim())?;
        if d == 0 || hidden == 0 {
            return Err(Error::Parameter(
                "input dimension and hidden width must be positive".into(),
            ));
        }
        Ok(Self {
            input_dim: d,
            weight_dim: hidden * d + hidden,
            kind: PotentialKind::TwoLayerTanh { hidden, target },
        })
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// Short label used in reports.
    pub fn label(&self) -> &'static str {
        match self.kind {
            PotentialKind::QuadraticTracking { .. } => "quadratic-tracking",
            PotentialKind::LinearRegression { .. } => "linear-regression",
            PotentialKind::TwoLayerTanh { .. } => "two-layer-tanh",
        }
    }

    fn check_shapes(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
        check_len("input x", self.input_dim, x.len())?;
        check_len("weights w", self.weight_dim, w.len())
    }

    /// Gradient of the scalar prediction over `(w, x)` jointly, and its Hessian.
    /// Only meaningful for the scalar regression kinds.
    fn prediction_derivatives(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
        want_hessian: bool,
    ) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
        let (d, m) = (self.input_dim, self.weight_dim);
        let mut grad = DVector::zeros(m + d);
        match &self.kind {
            PotentialKind::LinearRegression { features, .. } => {
                let mut pred = 0.0;
                for k in 0..d {
                    pred += w[k] * x[k];
                    grad[k] = x[k];
                    grad[m + k] = w[k];
                }
                if *features == FeatureMap::WithBias {
                    pred += w[d];
                    grad[d] = 1.0;
                }
                let hess = want_hessian.then(|| {
                    let mut h = DMatrix::zeros(m + d, m + d);
                    for k in 0..d {
                        h[(k, m + k)] = 1.0;
                        h[(m + k, k)] = 1.0;
                    }
                    h
                });
                (pred, grad, hess)
            }
            PotentialKind::TwoLayerTanh { hidden, .. } => {
                let hidden = *hidden;
                let a_idx = |j: usize, k: usize| j * d + k;
                let c_idx = |j: usize| hidden * d + j;
                let x_idx = |k: usize| m + k;
                let mut s = vec![0.0; hidden];
                let mut s1 = vec![0.0; hidden];
                let mut s2 = vec![0.0; hidden];
                let mut pred = 0.0;
                for j in 0..hidden {
                    let z: f64 = (0..d).map(|k| w[a_idx(j, k)] * x[k]).sum();
                    let t = z.tanh();
                    s[j] = t;
                    s1[j] = 1.0 - t * t;
                    s2[j] = -2.0 * t * (1.0 - t * t);
                    pred += w[c_idx(j)] * t;
                }
                for j in 0..hidden {
                    let c = w[c_idx(j)];
                    grad[c_idx(j)] = s[j];
                    for k in 0..d {
                        grad[a_idx(j, k)] = c * s1[j] * x[k];
                        grad[x_idx(k)] += c * s1[j] * w[a_idx(j, k)];
                    }
                }
                let hess = want_hessian.then(|| {
                    let mut h = DMatrix::zeros(m + d, m + d);
                    let mut put = |i: usize, k: usize, v: f64| {
                        h[(i, k)] = v;
                        h[(k, i)] = v;
                    };
                    for j in 0..hidden {
                        let c = w[c_idx(j)];
                        for k in 0..d {
                            put(c_idx(j), a_idx(j, k), s1[j] * x[k]);
                            put(c_idx(j), x_idx(k), s1[j] * w[a_idx(j, k)]);
                            for q in 0..d {
                                put(a_idx(j, k), a_idx(j, q), c * s2[j] * x[k] * x[q]);
                                let delta = if k == q { s1[j] } else { 0.0 };
                                put(
                                    a_idx(j, k),
                                    x_idx(q),
                                    c * (s2[j] * w[a_idx(j, q)] * x[k] + delta),
                                );
                            }
                        }
                    }
                    for k in 0..d {
                        for q in k..d {
                            let v: f64 = (0..hidden)
                                .map(|j| w[c_idx(j)] * s2[j] * w[a_idx(j, k)] * w[a_idx(j, q)])
                                .sum();
                            put(x_idx(k), x_idx(q), v);
                        }
                    }
                    h
                });
                (pred, grad, hess)
            }
            PotentialKind::QuadraticTracking { .. } => {
                unreachable!("tracking loss has a vector residual")
            }
        }
    }

    fn target(&self) -> Option<&Target> {
        match &self.kind {
            PotentialKind::LinearRegression { target, .. }
            | PotentialKind::TwoLayerTanh { target, .. } => Some(target),
            PotentialKind::QuadraticTracking { .. } => None,
        }
    }

    /// Residual and joint gradient of `r(w, x) = pred − y(x)`.
    fn residual_gradient(&self, x: &DVector<f64>, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let target = self.target().expect("scalar kind");
        let (pred, mut grad, _) = self.prediction_derivatives(x, w, false);
        let gy = target.gradient(x);
        for k in 0..self.input_dim {
            grad[self.weight_dim + k] -= gy[k];
        }
        (pred - target.value(x), grad)
    }

    /// Both gradients at once.
    pub fn gradients(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_shapes(x, w)?;
        let m = self.weight_dim;
        match &self.kind {
            PotentialKind::QuadraticTracking { matrix } => {
                let resid = matrix * w - x;
                Ok((matrix.tr_mul(&resid), -resid))
            }
            _ => {
                let (r, g) = self.residual_gradient(x, w);
                let gw = g.rows(0, m) * r;
                let gx = g.rows(m, self.input_dim) * r;
                Ok((gw, gx))
            }
        }
    }

    /// The four second-derivative blocks, all analytic.
    pub fn jacobian_blocks(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<JacobianBlocks> {
        self.check_shapes(x, w)?;
        let (d, m) = (self.input_dim, self.weight_dim);
        match &self.kind {
            PotentialKind::QuadraticTracking { matrix } => Ok(JacobianBlocks {
                jw: matrix.tr_mul(matrix),
                jx: -matrix.transpose(),
                kw: -matrix.clone(),
                kx: DMatrix::identity(d, d),
            }),
            _ => {
                let target = self.target().expect("scalar kind");
                let (pred, mut grad, hess) = self.prediction_derivatives(x, w, true);
                let mut hess = hess.expect("requested Hessian");
                let gy = target.gradient(x);
                let hy = target.hessian_diag(x);
                for k in 0..d {
                    grad[m + k] -= gy[k];
                    hess[(m + k, m + k)] -= hy[k];
                }
                let r = pred - target.value(x);
                // H_V = ∇r ∇rᵀ + r ∇²r over the joint (w, x) coordinates.
                let full = &grad * grad.transpose() + hess * r;
                Ok(JacobianBlocks {
                    jw: full.view((0, 0), (m, m)).into_owned(),
                    jx: full.view((0, m), (m, d)).into_owned(),
                    kw: full.view((m, 0), (d, m)).into_owned(),
                    kx: full.view((m, m), (d, d)).into_owned(),
                })
            }
        }
    }
}

impl Potential for PotentialModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn weight_dim(&self) -> usize {
        self.weight_dim
    }

    fn value(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
        self.check_shapes(x, w)?;
        match &self.kind {
            PotentialKind::QuadraticTracking { matrix } => {
                Ok(0.5 * (matrix * w - x).norm_squared())
            }
            _ => {
                let target = self.target().expect("scalar kind");
                let (pred, _, _) = self.prediction_derivatives(x, w, false);
                let r = pred - target.value(x);
                Ok(0.5 * r * r)
            }
        }
    }

    fn grad_w(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.gradients(x, w).map(|g| g.0)
    }

    fn grad_x(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.gradients(x, w).map(|g| g.1)
    }
}

/// Finite-difference comparison of analytic gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_err_w: f64,
    pub max_rel_err_x: f64,
    pub pass: bool,
}

pub const GRADIENT_TOL: f64 = 1e-5;

/// Compares `grad_w` and `grad_x` with central differences at step `1e-6·(1 + ‖·‖)`.
///
/// Errors are `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, 1)`.
pub fn check_gradients<P: Potential + ?Sized>(
    model: &P,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<GradientCheck> {
    let gw = model.grad_w(x, w)?;
    let gx = model.grad_x(x, w)?;

    let hw = 1e-6 * (1.0 + w.norm());
    let mut fw = DVector::zeros(w.len());
    let mut wp = w.clone();
    for i in 0..w.len() {
        wp[i] = w[i] + hw;
        let up = model.value(x, &wp)?;
        wp[i] = w[i] - hw;
        let down = model.value(x, &wp)?;
        wp[i] = w[i];
        fw[i] = (up - down) / (2.0 * hw);
    }

    let hx = 1e-6 * (1.0 + x.norm());
    let mut fx = DVector::zeros(x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        xp[k] = x[k] + hx;
        let up = model.value(&xp, w)?;
        xp[k] = x[k] - hx;
        let down = model.value(&xp, w)?;
        xp[k] = x[k];
        fx[k] = (up - down) / (2.0 * hx);
    }

    let rel = |a: &DVector<f64>, f: &DVector<f64>| {
        let scale = a.amax().max(f.amax()).max(1.0);
        (a - f).amax() / scale
    };
    let max_rel_err_w = rel(&gw, &fw);
    let max_rel_err_x = rel(&gx, &fx);
    Ok(GradientCheck {
        max_rel_err_w,
        max_rel_err_x,
        pass: max_rel_err_w <= GRADIENT_TOL && max_rel_err_x <= GRADIENT_TOL,
    })
}
