//! Synthetic data-generating processes and labeled dataset sampling.
//!
//! Five prior/outlier archetypes are supported: a GMM with inflated-covariance
//! outliers, SCMs with measurement (noise-scale) or structural (weight-mask)
//! outliers, and Gaussian copulas with probabilistic or dependence outliers.
//! Sampling is deterministic given the spec and a seed; independent streams
//! are derived by seed-splitting so generation parallelizes safely.

mod generate;
mod io;
mod sampling;

pub use generate::{copula_sample, generate_dataset, scm_forward, StructuralMask};
pub use io::{load_dataset, save_dataset, DATASET_MAGIC};
pub use sampling::{sample_spec, SamplingRanges};

use serde::{Deserialize, Serialize};

use crate::tensor_engine::Matrix;

pub const WEIGHTS_SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum PriorsError {
    #[error("invalid sampling range `{field}`: {reason}")]
    InvalidRanges { field: &'static str, reason: String },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("unsupported family {family:?} for this operation")]
    UnsupportedFamily { family: Family },
    #[error("dataset io error: {0}")]
    Io(String),
}

/// The five prior/outlier archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Gmm,
    ScmMeasurement,
    ScmStructural,
    CopulaProbabilistic,
    CopulaDependence,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Gmm,
        Family::ScmMeasurement,
        Family::ScmStructural,
        Family::CopulaProbabilistic,
        Family::CopulaDependence,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Family::Gmm => "gmm",
            Family::ScmMeasurement => "scm-measurement",
            Family::ScmStructural => "scm-structural",
            Family::CopulaProbabilistic => "copula-probabilistic",
            Family::CopulaDependence => "copula-dependence",
        }
    }

    pub fn index(&self) -> usize {
        Family::ALL.iter().position(|f| f == self).unwrap()
    }
}

/// GMM prior: inliers from the mixture, outliers from the same mixture with
/// covariance inflated by `inflation_scale` on a prototype subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub dim: usize,
    pub n_components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub cov_diag: Vec<Vec<f64>>,
    pub inflation_scale: f64,
    /// Prototype subspaces; an outlier point picks one uniformly.
    pub outlier_subspaces: Vec<Vec<usize>>,
}

impl GmmSpec {
    pub fn validate(&self) -> Result<(), PriorsError> {
        if self.n_components == 0 {
            return Err(PriorsError::InvalidSpec("GMM needs at least 1 component".into()));
        }
        if self.dim == 0 {
            return Err(PriorsError::InvalidSpec("GMM dim must be positive".into()));
        }
        if self.weights.len() != self.n_components
            || self.means.len() != self.n_components
            || self.cov_diag.len() != self.n_components
        {
            return Err(PriorsError::InvalidSpec(
                "weights/means/cov_diag length != n_components".into(),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHTS_SUM_TOLERANCE {
            return Err(PriorsError::InvalidSpec(format!(
                "weights sum {sum} != 1 within {WEIGHTS_SUM_TOLERANCE}"
            )));
        }
        for (k, (m, c)) in self.means.iter().zip(self.cov_diag.iter()).enumerate() {
            if m.len() != self.dim || c.len() != self.dim {
                return Err(PriorsError::InvalidSpec(format!(
                    "component {k} mean/cov length != dim"
                )));
            }
            if c.iter().any(|v| *v <= 0.0) {
                return Err(PriorsError::InvalidSpec(format!(
                    "component {k} has non-positive variance"
                )));
            }
        }
        if self.inflation_scale <= 0.0 {
            return Err(PriorsError::InvalidSpec("inflation_scale must be > 0".into()));
        }
        if self.outlier_subspaces.is_empty() {
            return Err(PriorsError::InvalidSpec("need at least one outlier subspace".into()));
        }
        for s in &self.outlier_subspaces {
            if s.is_empty() {
                return Err(PriorsError::InvalidSpec("empty outlier subspace".into()));
            }
            if s.iter().any(|j| *j >= self.dim) {
                return Err(PriorsError::InvalidSpec("subspace index out of range".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquationKind {
    Tanh,
    LeakyRelu,
}

impl EquationKind {
    pub fn label(&self) -> &'static str {
        match self {
            EquationKind::Tanh => "tanh",
            EquationKind::LeakyRelu => "leaky_relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmNode {
    pub id: usize,
    pub layer: usize,
    pub equation: EquationKind,
    pub parents: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmMaskPrototype {
    pub flipped: Vec<usize>,
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScmOutlierMechanism {
    /// Measurement outliers: listed nodes get inflated exogenous noise.
    NoiseScale {
        high_noise: f64,
        high_noise_prob: f64,
        prototypes: Vec<Vec<usize>>,
    },
    /// Structural outliers: flipped nodes negate incoming coefficients,
    /// dropped nodes lose their incoming edges.
    WeightMask {
        perturb_prob: f64,
        prototypes: Vec<ScmMaskPrototype>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub dim: usize,
    pub nodes: Vec<ScmNode>,
    pub outlier: ScmOutlierMechanism,
    pub leaky_slope: f64,
}

impl ScmSpec {
    pub fn validate(&self) -> Result<(), PriorsError> {
        if self.nodes.len() != self.dim || self.dim == 0 {
            return Err(PriorsError::InvalidSpec("node count != dim".into()));
        }
        let mut layer_of = vec![usize::MAX; self.dim];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(PriorsError::InvalidSpec("node ids must be 0..dim in order".into()));
            }
            layer_of[i] = node.layer;
        }
        for node in &self.nodes {
            if node.parents.len() != node.coefficients.len() {
                return Err(PriorsError::InvalidSpec(format!(
                    "node {} has {} parents but {} coefficients",
                    node.id,
                    node.parents.len(),
                    node.coefficients.len()
                )));
            }
            if node.layer == 0 && !node.parents.is_empty() {
                return Err(PriorsError::InvalidSpec(format!(
                    "layer-0 node {} has parents",
                    node.id
                )));
            }
            for p in &node.parents {
                if *p >= self.dim {
                    return Err(PriorsError::InvalidSpec(format!(
                        "node {} has out-of-range parent {p}",
                        node.id
                    )));
                }
                // acyclicity: parents live on strictly smaller layers
                if layer_of[*p] >= node.layer {
                    return Err(PriorsError::InvalidSpec(format!(
                        "node {} parent {p} is not on a smaller layer",
                        node.id
                    )));
                }
            }
            if node.noise_std <= 0.0 {
                return Err(PriorsError::InvalidSpec(format!(
                    "node {} noise_std must be > 0",
                    node.id
                )));
            }
        }
        match &self.outlier {
            ScmOutlierMechanism::NoiseScale {
                high_noise,
                high_noise_prob,
                prototypes,
            } => {
                if *high_noise <= 0.0 {
                    return Err(PriorsError::InvalidSpec("high_noise must be > 0".into()));
                }
                if !(*high_noise_prob > 0.0 && *high_noise_prob <= 1.0) {
                    return Err(PriorsError::InvalidSpec("high_noise_prob outside (0,1]".into()));
                }
                if prototypes.is_empty() {
                    return Err(PriorsError::InvalidSpec("need at least one prototype".into()));
                }
                for p in prototypes {
                    if p.is_empty() || p.iter().any(|n| *n >= self.dim) {
                        return Err(PriorsError::InvalidSpec("bad noise prototype".into()));
                    }
                }
            }
            ScmOutlierMechanism::WeightMask {
                perturb_prob,
                prototypes,
            } => {
                if !(*perturb_prob > 0.0 && *perturb_prob <= 1.0) {
                    return Err(PriorsError::InvalidSpec("perturb_prob outside (0,1]".into()));
                }
                if prototypes.is_empty() {
                    return Err(PriorsError::InvalidSpec("need at least one prototype".into()));
                }
                for p in prototypes {
                    if p.flipped.is_empty() && p.dropped.is_empty() {
                        return Err(PriorsError::InvalidSpec(
                            "mask prototype flips and drops both empty".into(),
                        ));
                    }
                    if p.flipped.iter().chain(p.dropped.iter()).any(|n| *n >= self.dim) {
                        return Err(PriorsError::InvalidSpec("mask node out of range".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes in evaluation order (by layer, then id).
    pub fn evaluation_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by_key(|i| (self.nodes[*i].layer, self.nodes[*i].id));
        order
    }
}

/// Row-normalized lower-triangular correlation factor, stored as its free
/// parameters (the strict lower triangle, row-major). Diagonal entries are
/// derived so every row has exactly unit Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholFactor {
    pub dim: usize,
    pub strict_lower: Vec<f64>,
}

impl CholFactor {
    pub fn identity(dim: usize) -> Self {
        CholFactor {
            dim,
            strict_lower: vec![0.0; dim * (dim - 1) / 2],
        }
    }

    pub fn expected_len(dim: usize) -> usize {
        dim * (dim - 1) / 2
    }

    /// Full rows including the derived positive diagonal.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(self.dim);
        let mut cursor = 0;
        for r in 0..self.dim {
            let mut row = vec![0.0; r + 1];
            let mut sumsq = 0.0;
            for item in row.iter_mut().take(r) {
                let v = self.strict_lower[cursor];
                cursor += 1;
                *item = v;
                sumsq += v * v;
            }
            row[r] = (1.0 - sumsq).max(0.0).sqrt();
            rows.push(row);
        }
        rows
    }

    pub fn validate(&self) -> Result<(), PriorsError> {
        if self.strict_lower.len() != Self::expected_len(self.dim) {
            return Err(PriorsError::InvalidSpec(format!(
                "chol strict lower length {} != {}",
                self.strict_lower.len(),
                Self::expected_len(self.dim)
            )));
        }
        let mut cursor = 0;
        for r in 0..self.dim {
            let mut sumsq = 0.0;
            for _ in 0..r {
                let v = self.strict_lower[cursor];
                cursor += 1;
                sumsq += v * v;
            }
            if sumsq >= 1.0 {
                return Err(PriorsError::InvalidSpec(format!(
                    "chol row {r} off-diagonal norm >= 1 (diagonal would be non-positive)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    StudentT { dof: f64, loc: f64, scale: f64 },
    Beta { alpha: f64, beta: f64 },
    Exponential { rate: f64 },
    /// Random monotone piecewise-linear inverse CDF over `n_grid` equally
    /// spaced u-points; the grid values are derived deterministically from
    /// the quantized (lo, hi, n_grid) triple so the marginal round-trips
    /// through serialization.
    Interp { lo: f64, hi: f64, n_grid: usize },
}

impl Marginal {
    pub fn validate(&self) -> Result<(), PriorsError> {
        let bad = |m: &str| Err(PriorsError::InvalidSpec(m.into()));
        match self {
            Marginal::Normal { std, .. } if *std <= 0.0 => bad("normal std must be > 0"),
            Marginal::StudentT { dof, scale, .. } if *dof <= 0.0 || *scale <= 0.0 => {
                bad("studentt dof and scale must be > 0")
            }
            Marginal::Beta { alpha, beta } if *alpha <= 0.0 || *beta <= 0.0 => {
                bad("beta parameters must be > 0")
            }
            Marginal::Exponential { rate } if *rate <= 0.0 => bad("exponential rate must be > 0"),
            Marginal::Interp { lo, hi, n_grid } if *lo >= *hi || *n_grid < 2 => {
                bad("interp needs lo < hi and at least 2 grid points")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CopulaOutlierMechanism {
    /// Push copula coordinates of the prototype dims toward the nearer
    /// boundary with strength drawn from `strength_range`.
    Probabilistic {
        prototypes: Vec<Vec<usize>>,
        strength_range: (f64, f64),
    },
    /// Invert copula coordinates of the prototype dims with probability
    /// drawn from `strength_range`.
    Dependence {
        prototypes: Vec<Vec<usize>>,
        strength_range: (f64, f64),
    },
}

impl CopulaOutlierMechanism {
    fn parts(&self) -> (&Vec<Vec<usize>>, (f64, f64)) {
        match self {
            CopulaOutlierMechanism::Probabilistic {
                prototypes,
                strength_range,
            }
            | CopulaOutlierMechanism::Dependence {
                prototypes,
                strength_range,
            } => (prototypes, *strength_range),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub dim: usize,
    pub chol: CholFactor,
    pub marginals: Vec<Marginal>,
    pub outlier: CopulaOutlierMechanism,
}

impl CopulaSpec {
    pub fn validate(&self) -> Result<(), PriorsError> {
        if self.dim == 0 {
            return Err(PriorsError::InvalidSpec("copula dim must be positive".into()));
        }
        if self.chol.dim != self.dim {
            return Err(PriorsError::InvalidSpec("chol dim != spec dim".into()));
        }
        self.chol.validate()?;
        if self.marginals.len() != self.dim {
            return Err(PriorsError::InvalidSpec("one marginal per dimension".into()));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        let (prototypes, (lo, hi)) = self.outlier.parts();
        if prototypes.is_empty() {
            return Err(PriorsError::InvalidSpec("need at least one prototype".into()));
        }
        for p in prototypes {
            if p.is_empty() || p.iter().any(|d| *d >= self.dim) {
                return Err(PriorsError::InvalidSpec("bad copula prototype".into()));
            }
        }
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(PriorsError::InvalidSpec(
                "strength_range must satisfy 0 < lo <= hi < 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpecPayload {
    Gmm(GmmSpec),
    Scm(ScmSpec),
    Copula(CopulaSpec),
}

/// A complete generator specification: the latent data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub payload: SpecPayload,
    pub spec_id: u64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn dim(&self) -> usize {
        match &self.payload {
            SpecPayload::Gmm(g) => g.dim,
            SpecPayload::Scm(s) => s.dim,
            SpecPayload::Copula(c) => c.dim,
        }
    }

    pub fn validate(&self) -> Result<(), PriorsError> {
        let consistent = matches!(
            (&self.family, &self.payload),
            (Family::Gmm, SpecPayload::Gmm(_))
        ) || matches!(
            (&self.family, &self.payload),
            (
                Family::ScmMeasurement,
                SpecPayload::Scm(ScmSpec {
                    outlier: ScmOutlierMechanism::NoiseScale { .. },
                    ..
                })
            )
        ) || matches!(
            (&self.family, &self.payload),
            (
                Family::ScmStructural,
                SpecPayload::Scm(ScmSpec {
                    outlier: ScmOutlierMechanism::WeightMask { .. },
                    ..
                })
            )
        ) || matches!(
            (&self.family, &self.payload),
            (
                Family::CopulaProbabilistic,
                SpecPayload::Copula(CopulaSpec {
                    outlier: CopulaOutlierMechanism::Probabilistic { .. },
                    ..
                })
            )
        ) || matches!(
            (&self.family, &self.payload),
            (
                Family::CopulaDependence,
                SpecPayload::Copula(CopulaSpec {
                    outlier: CopulaOutlierMechanism::Dependence { .. },
                    ..
                })
            )
        );
        if !consistent {
            return Err(PriorsError::InvalidSpec(format!(
                "family {:?} inconsistent with payload/outlier mechanism",
                self.family
            )));
        }
        match &self.payload {
            SpecPayload::Gmm(g) => g.validate(),
            SpecPayload::Scm(s) => s.validate(),
            SpecPayload::Copula(c) => c.validate(),
        }
    }
}

/// Per-point generation latent: which component/prototype produced the point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLatent {
    pub component: usize,
    pub prototype: Option<usize>,
}

/// Context/query matrices with outlier labels and spec provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub context_x: Matrix,
    pub context_y: Vec<u8>,
    pub query_x: Matrix,
    pub query_y: Vec<u8>,
    pub spec_id: u64,
    /// Train-time only; context latents then query latents.
    pub point_latents: Option<Vec<PointLatent>>,
}

impl LabeledDataset {
    pub fn dim(&self) -> usize {
        self.context_x.ncols()
    }

    pub fn n_context(&self) -> usize {
        self.context_x.nrows()
    }

    pub fn n_query(&self) -> usize {
        self.query_x.nrows()
    }

    pub fn validate(&self) -> Result<(), PriorsError> {
        if self.context_x.iter().chain(self.query_x.iter()).any(|v| !v.is_finite()) {
            return Err(PriorsError::InvalidSpec("non-finite feature value".into()));
        }
        if self.context_y.len() != self.n_context() || self.query_y.len() != self.n_query() {
            return Err(PriorsError::InvalidSpec("label length mismatch".into()));
        }
        if self
            .context_y
            .iter()
            .chain(self.query_y.iter())
            .any(|y| *y > 1)
        {
            return Err(PriorsError::InvalidSpec("labels must be 0/1".into()));
        }
        if self.query_x.ncols() != self.context_x.ncols() {
            return Err(PriorsError::InvalidSpec("context/query width mismatch".into()));
        }
        Ok(())
    }
}

/// Independent RNG stream derived by seed-splitting.
pub fn split_seed(master_seed: u64, stream_id: u64) -> u64 {
    let mut z = master_seed ^ stream_id.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
