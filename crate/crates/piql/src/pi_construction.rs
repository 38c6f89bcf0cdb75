//! Privileged-information blocks: empirical meta-features (bronze), per-
//! component theoretical parameters (silver), and per-point theoretical
//! latents (gold).
//!
//! Meta-features are computed per feature over context and query together,
//! without labels, and at inference time exactly the same way. Statistics use
//! population (biased) moments; quantiles interpolate linearly between
//! closest ranks; degenerate statistics (zero variance, zero denominators)
//! are defined as 0 so blocks stay NaN-free.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::priors::{GeneratorSpec, GmmSpec, LabeledDataset, SpecPayload};
use crate::tensor_engine::Matrix;

pub const BASE_ROWS: usize = 9;
pub const EXTENDED_ROWS: usize = 100;
/// Category sizes of the 91 additional statistics, in row order:
/// extra quantiles, robust spread, min/max/extreme, higher moments,
/// tail/outlier proportions, sign/zero/finite, shape asymmetry.
pub const EXTENDED_CATEGORY_COUNTS: [usize; 7] = [39, 15, 8, 8, 12, 6, 3];

const MANIFEST_VERSION: u32 = 1;

/// The base block keeps the main-text quantile set {5, 25, 50, 75, 90};
/// q10 shows up in the extended quantile list instead.
pub const BASE_QUANTILES: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.90];

pub const EXTRA_QUANTILES: [f64; 39] = [
    0.001, 0.01, 0.025, 0.075, 0.10, 0.125, 0.15, 0.175, 0.20, 0.225, 0.275, 0.30, 0.325, 0.35,
    0.375, 0.40, 0.425, 0.45, 0.475, 0.525, 0.55, 0.575, 0.60, 0.625, 0.65, 0.675, 0.70, 0.725,
    0.775, 0.80, 0.825, 0.85, 0.875, 0.925, 0.95, 0.975, 0.99, 0.995, 0.999,
];

#[derive(Debug, thiserror::Error)]
pub enum PiError {
    #[error("input error: {0}")]
    Input(String),
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaMode {
    Base,
    Extended,
}

/// An m x D matrix of per-feature statistics with a fixed row order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaFeatureBlock {
    pub rows: Matrix,
    pub row_order: Vec<String>,
}

impl MetaFeatureBlock {
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OraclePiKind {
    Silver,
    Gold,
}

/// Oracle generator latents: silver rows are (mean; blended variance) pairs
/// per component, gold rows are per-point (x || mu || sigma^2_in).
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePiBlock {
    pub kind: OraclePiKind,
    pub rows: Matrix,
}

/// Quantile by linear interpolation between closest ranks of the sorted
/// sample (the `h = p (n-1)` convention).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

struct ColumnStats {
    values: Vec<f64>,
    sorted: Vec<f64>,
    mean: f64,
    variance: f64,
}

impl ColumnStats {
    fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ColumnStats {
            values,
            sorted,
            mean,
            variance,
        }
    }

    fn n(&self) -> f64 {
        self.values.len() as f64
    }

    fn central_moment(&self, k: i32) -> f64 {
        self.values
            .iter()
            .map(|v| (v - self.mean).powi(k))
            .sum::<f64>()
            / self.n()
    }

    fn raw_moment(&self, k: i32) -> f64 {
        self.values.iter().map(|v| v.powi(k)).sum::<f64>() / self.n()
    }

    fn std_moment(&self, k: i32) -> f64 {
        if self.variance <= 0.0 {
            return 0.0;
        }
        self.central_moment(k) / self.variance.powf(k as f64 / 2.0)
    }

    fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p)
    }

    fn fraction(&self, pred: impl Fn(f64) -> bool) -> f64 {
        self.values.iter().filter(|v| pred(**v)).count() as f64 / self.n()
    }
}

fn guarded_div(num: f64, den: f64) -> f64 {
    if den.abs() > 1e-12 {
        num / den
    } else {
        0.0
    }
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&values, 0.5)
}

fn base_row_order() -> Vec<String> {
    let mut names = vec![
        "mean".to_string(),
        "variance".to_string(),
        "skewness".to_string(),
        "excess_kurtosis".to_string(),
    ];
    for q in BASE_QUANTILES {
        names.push(format!("q{:0.3}", q));
    }
    names
}

fn extended_row_order() -> Vec<String> {
    let mut names = base_row_order();
    for q in EXTRA_QUANTILES {
        names.push(format!("q{:0.3}", q));
    }
    names.extend(
        [
            "iqr",
            "range_90pct",
            "range_80pct",
            "range_50pct",
            "lower_tail_width",
            "upper_tail_width",
            "lower_extreme_tail_width",
            "upper_extreme_tail_width",
            "median_abs_deviation",
            "mean_abs_deviation",
            "std_to_mean_ratio",
            "iqr_to_std_ratio",
            "range_to_std_ratio",
            "q90_over_abs_q10",
            "q75_over_abs_q25",
            "min",
            "max",
            "range",
            "abs_min",
            "abs_max",
            "mean_abs",
            "median_abs",
            "rms",
            "std_moment_5",
            "std_moment_6",
            "raw_moment_2",
            "raw_moment_3",
            "raw_moment_4",
            "central_moment_2",
            "central_moment_3",
            "central_moment_4",
            "frac_below_q01",
            "frac_below_q05",
            "frac_below_q10",
            "frac_above_q90",
            "frac_above_q95",
            "frac_above_q99",
            "frac_dev_gt_1sigma",
            "frac_dev_gt_2sigma",
            "frac_dev_gt_3sigma",
            "frac_below_iqr_fence",
            "frac_above_iqr_fence",
            "frac_iqr_outliers",
            "frac_positive",
            "frac_negative",
            "frac_zero",
            "frac_nan",
            "frac_inf",
            "frac_finite",
            "bowley_skewness",
            "tail_asymmetry",
            "mean_median_gap_norm",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    names
}

fn base_column(stats: &ColumnStats) -> Vec<f64> {
    let mut out = vec![
        stats.mean,
        stats.variance,
        stats.std_moment(3),
        if stats.variance <= 0.0 {
            0.0
        } else {
            stats.std_moment(4) - 3.0
        },
    ];
    for q in BASE_QUANTILES {
        out.push(stats.quantile(q));
    }
    out
}

fn extended_column(stats: &ColumnStats) -> Vec<f64> {
    let mut out = base_column(stats);
    for q in EXTRA_QUANTILES {
        out.push(stats.quantile(q));
    }

    let q = |p: f64| stats.quantile(p);
    let std = stats.variance.sqrt();
    let iqr = q(0.75) - q(0.25);
    let min = stats.sorted[0];
    let max = *stats.sorted.last().unwrap();

    // robust spread / interval widths (15)
    out.push(iqr);
    out.push(q(0.95) - q(0.05));
    out.push(q(0.90) - q(0.10));
    out.push(q(0.75) - q(0.25));
    out.push(q(0.25) - q(0.10));
    out.push(q(0.90) - q(0.75));
    out.push(q(0.10) - q(0.01));
    out.push(q(0.99) - q(0.90));
    let median = q(0.5);
    out.push(median_of(
        stats.values.iter().map(|v| (v - median).abs()).collect(),
    ));
    out.push(
        stats
            .values
            .iter()
            .map(|v| (v - stats.mean).abs())
            .sum::<f64>()
            / stats.n(),
    );
    out.push(guarded_div(std, stats.mean));
    out.push(guarded_div(iqr, std));
    out.push(guarded_div(max - min, std));
    out.push(guarded_div(q(0.90), q(0.10).abs()));
    out.push(guarded_div(q(0.75), q(0.25).abs()));

    // min/max/extreme (8)
    out.push(min);
    out.push(max);
    out.push(max - min);
    out.push(
        stats
            .values
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min),
    );
    out.push(stats.values.iter().map(|v| v.abs()).fold(0.0, f64::max));
    out.push(stats.values.iter().map(|v| v.abs()).sum::<f64>() / stats.n());
    out.push(median_of(stats.values.iter().map(|v| v.abs()).collect()));
    out.push(stats.raw_moment(2).sqrt());

    // higher moments (8)
    out.push(stats.std_moment(5));
    out.push(stats.std_moment(6));
    out.push(stats.raw_moment(2));
    out.push(stats.raw_moment(3));
    out.push(stats.raw_moment(4));
    out.push(stats.central_moment(2));
    out.push(stats.central_moment(3));
    out.push(stats.central_moment(4));

    // tail / outlier proportions (12)
    out.push(stats.fraction(|v| v < q(0.01)));
    out.push(stats.fraction(|v| v < q(0.05)));
    out.push(stats.fraction(|v| v < q(0.10)));
    out.push(stats.fraction(|v| v > q(0.90)));
    out.push(stats.fraction(|v| v > q(0.95)));
    out.push(stats.fraction(|v| v > q(0.99)));
    let mean = stats.mean;
    out.push(stats.fraction(|v| (v - mean).abs() > std));
    out.push(stats.fraction(|v| (v - mean).abs() > 2.0 * std));
    out.push(stats.fraction(|v| (v - mean).abs() > 3.0 * std));
    let lower_fence = q(0.25) - 1.5 * iqr;
    let upper_fence = q(0.75) + 1.5 * iqr;
    let below = stats.fraction(|v| v < lower_fence);
    let above = stats.fraction(|v| v > upper_fence);
    out.push(below);
    out.push(above);
    out.push(below + above);

    // sign / zero / finite (6)
    out.push(stats.fraction(|v| v > 0.0));
    out.push(stats.fraction(|v| v < 0.0));
    out.push(stats.fraction(|v| v == 0.0));
    out.push(stats.fraction(f64::is_nan));
    out.push(stats.fraction(f64::is_infinite));
    out.push(stats.fraction(f64::is_finite));

    // shape asymmetry (3)
    out.push(guarded_div(q(0.75) + q(0.25) - 2.0 * q(0.5), iqr));
    out.push(guarded_div((q(0.90) - q(0.50)) - (q(0.50) - q(0.10)), q(0.90) - q(0.10)));
    out.push(guarded_div(stats.mean - median, std));

    out
}

fn compute_meta(x_all: &Matrix, mode: MetaMode) -> Result<MetaFeatureBlock, PiError> {
    let (n, d) = x_all.dim();
    if n < 2 {
        return Err(PiError::Input(format!(
            "meta-features need at least 2 points, got {n}"
        )));
    }
    if d == 0 {
        return Err(PiError::Input("meta-features need at least 1 feature".into()));
    }
    let row_order = match mode {
        MetaMode::Base => base_row_order(),
        MetaMode::Extended => extended_row_order(),
    };
    let mut rows = Array2::zeros((row_order.len(), d));
    for j in 0..d {
        let column: Vec<f64> = x_all.column(j).to_vec();
        let stats = ColumnStats::new(column);
        let values = match mode {
            MetaMode::Base => base_column(&stats),
            MetaMode::Extended => extended_column(&stats),
        };
        debug_assert_eq!(values.len(), row_order.len());
        for (i, v) in values.into_iter().enumerate() {
            rows[[i, j]] = v;
        }
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(PiError::Input("meta-feature block has non-finite entries".into()));
    }
    Ok(MetaFeatureBlock { rows, row_order })
}

/// The nine base statistics per feature: four population moments and five
/// quantiles, over context and query without labels.
pub fn compute_base_meta(x_all: &Matrix) -> Result<MetaFeatureBlock, PiError> {
    compute_meta(x_all, MetaMode::Base)
}

/// The 100-row extended block: the base nine plus 91 additional statistics
/// in category order (39 quantiles, 15 spread, 8 extremes, 8 moments,
/// 12 tail fractions, 6 sign/finite fractions, 3 asymmetry).
pub fn compute_extended_meta(x_all: &Matrix) -> Result<MetaFeatureBlock, PiError> {
    compute_meta(x_all, MetaMode::Extended)
}

/// Context and query features stacked for meta-feature computation.
pub fn meta_input(dataset: &LabeledDataset) -> Matrix {
    ndarray::concatenate(
        Axis(0),
        &[dataset.context_x.view(), dataset.query_x.view()],
    )
    .expect("context/query widths agree")
}

/// Silver PI: two tokens per Gaussian, (mu; 1/2 sigma^2_in + 1/2 sigma^2_out)
/// where the outlier variance inflates the union of the prototype subspaces.
pub fn build_silver_pi(spec: &GeneratorSpec) -> Result<OraclePiBlock, PiError> {
    let gmm = as_gmm(spec)?;
    let mut union: Vec<usize> = gmm.outlier_subspaces.iter().flatten().copied().collect();
    union.sort_unstable();
    union.dedup();
    let mut rows = Array2::zeros((2 * gmm.n_components, gmm.dim));
    for k in 0..gmm.n_components {
        for j in 0..gmm.dim {
            rows[[2 * k, j]] = gmm.means[k][j];
            let var_in = gmm.cov_diag[k][j];
            let var_out = if union.contains(&j) {
                var_in * gmm.inflation_scale
            } else {
                var_in
            };
            rows[[2 * k + 1, j]] = 0.5 * var_in + 0.5 * var_out;
        }
    }
    Ok(OraclePiBlock {
        kind: OraclePiKind::Silver,
        rows,
    })
}

/// Gold PI: per point, (x || mu^(k) || sigma^2_in^(k)) for the generating
/// component k; outliers get the original non-inflated parameters. Rows are
/// context points then query points, width 3D.
pub fn build_gold_pi(
    dataset: &LabeledDataset,
    spec: &GeneratorSpec,
) -> Result<OraclePiBlock, PiError> {
    let gmm = as_gmm(spec)?;
    let latents = dataset
        .point_latents
        .as_ref()
        .ok_or_else(|| PiError::Input("gold PI needs point_latents".into()))?;
    let total = dataset.n_context() + dataset.n_query();
    if latents.len() != total {
        return Err(PiError::Input(format!(
            "latent count {} != point count {total}",
            latents.len()
        )));
    }
    let d = gmm.dim;
    let mut rows = Array2::zeros((total, 3 * d));
    for i in 0..total {
        let x = if i < dataset.n_context() {
            dataset.context_x.row(i)
        } else {
            dataset.query_x.row(i - dataset.n_context())
        };
        let k = latents[i].component;
        if k >= gmm.n_components {
            return Err(PiError::Input(format!("latent component {k} out of range")));
        }
        for j in 0..d {
            rows[[i, j]] = x[j];
            rows[[i, d + j]] = gmm.means[k][j];
            rows[[i, 2 * d + j]] = gmm.cov_diag[k][j];
        }
    }
    Ok(OraclePiBlock {
        kind: OraclePiKind::Gold,
        rows,
    })
}

fn as_gmm(spec: &GeneratorSpec) -> Result<&GmmSpec, PiError> {
    match &spec.payload {
        SpecPayload::Gmm(g) => Ok(g),
        _ => Err(PiError::UnsupportedFamily(format!("{:?}", spec.family))),
    }
}

/// Writes the versioned row-order manifest so persisted blocks are
/// self-describing.
pub fn save_row_order_manifest(mode: MetaMode, path: &Path) -> Result<(), PiError> {
    let names = match mode {
        MetaMode::Base => base_row_order(),
        MetaMode::Extended => extended_row_order(),
    };
    let mut out = format!(
        "piql-meta-rows v{MANIFEST_VERSION} mode={} rows={}\n",
        match mode {
            MetaMode::Base => "base",
            MetaMode::Extended => "extended",
        },
        names.len()
    );
    for (i, name) in names.iter().enumerate() {
        out.push_str(&format!("{i} {name}\n"));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PiError::Io(e.to_string()))?;
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| PiError::Io(e.to_string()))
}
