use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::ContinuousCDF;

use super::{
    CopulaOutlierMechanism, CopulaSpec, EquationKind, GeneratorSpec, GmmSpec, LabeledDataset,
    Marginal, PointLatent, PriorsError, ScmOutlierMechanism, ScmSpec, SpecPayload,
};
use crate::program_dsl::number::quantize;

/// Copula coordinates are clamped into [EPS, 1 - EPS] before the inverse CDF.
const U_EPS: f64 = 1e-9;

/// Structural perturbation applied to an SCM forward evaluation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructuralMask {
    /// Nodes whose incoming coefficients are negated.
    pub flipped: Vec<usize>,
    /// Nodes whose incoming edges are removed.
    pub dropped: Vec<usize>,
}

/// Evaluates the structural equations in layer order:
/// `x_j = eq_j(sum_i coeff_i * x_parent_i + noise_j)`.
pub fn scm_forward(
    spec: &ScmSpec,
    exogenous: &[f64],
    mask: Option<&StructuralMask>,
) -> Result<Vec<f64>, PriorsError> {
    if exogenous.len() != spec.dim {
        return Err(PriorsError::Generation(format!(
            "exogenous length {} != dim {}",
            exogenous.len(),
            spec.dim
        )));
    }
    if let Some(m) = mask {
        if m.flipped.iter().chain(m.dropped.iter()).any(|n| *n >= spec.dim) {
            return Err(PriorsError::Generation("mask references unknown node".into()));
        }
    }
    let mut values = vec![f64::NAN; spec.dim];
    for idx in spec.evaluation_order() {
        let node = &spec.nodes[idx];
        let dropped = mask.map(|m| m.dropped.contains(&idx)).unwrap_or(false);
        let flipped = mask.map(|m| m.flipped.contains(&idx)).unwrap_or(false);
        let mut pre = exogenous[idx];
        if !dropped {
            for (p, c) in node.parents.iter().zip(node.coefficients.iter()) {
                let parent_value = values[*p];
                if parent_value.is_nan() {
                    return Err(PriorsError::Generation(format!(
                        "node {idx} read unassigned parent {p}"
                    )));
                }
                let coeff = if flipped { -c } else { *c };
                pre += coeff * parent_value;
            }
        }
        values[idx] = match node.equation {
            EquationKind::Tanh => pre.tanh(),
            EquationKind::LeakyRelu => {
                if pre >= 0.0 {
                    pre
                } else {
                    spec.leaky_slope * pre
                }
            }
        };
    }
    Ok(values)
}

/// Deterministic monotone inverse-CDF grid for the interp marginal, derived
/// from the quantized (lo, hi) pair and the grid size.
pub fn interp_grid(lo: f64, hi: f64, n_grid: usize) -> Vec<f64> {
    let qlo = quantize(lo);
    let qhi = quantize(hi);
    let seed = super::split_seed(qlo.to_bits() ^ qhi.to_bits().rotate_left(17), n_grid as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut increments: Vec<f64> = (0..n_grid - 1)
        .map(|_| -(rng.random_range(1e-12f64..1.0)).ln())
        .collect();
    let total: f64 = increments.iter().sum();
    increments.iter_mut().for_each(|v| *v /= total);
    let mut grid = Vec::with_capacity(n_grid);
    let mut acc = qlo;
    grid.push(qlo);
    let span = qhi - qlo;
    for (i, inc) in increments.iter().enumerate() {
        acc += inc * span;
        if i + 1 == n_grid - 1 {
            grid.push(qhi);
        } else {
            grid.push(acc);
        }
    }
    grid
}

fn marginal_inverse_cdf(marginal: &Marginal, u: f64) -> Result<f64, PriorsError> {
    let u = u.clamp(U_EPS, 1.0 - U_EPS);
    let x = match marginal {
        Marginal::Normal { mean, std } => statrs::distribution::Normal::new(*mean, *std)
            .map_err(|e| PriorsError::Generation(e.to_string()))?
            .inverse_cdf(u),
        Marginal::StudentT { dof, loc, scale } => {
            statrs::distribution::StudentsT::new(*loc, *scale, *dof)
                .map_err(|e| PriorsError::Generation(e.to_string()))?
                .inverse_cdf(u)
        }
        Marginal::Beta { alpha, beta } => statrs::distribution::Beta::new(*alpha, *beta)
            .map_err(|e| PriorsError::Generation(e.to_string()))?
            .inverse_cdf(u),
        Marginal::Exponential { rate } => -(1.0 - u).ln() / rate,
        Marginal::Interp { lo, hi, n_grid } => {
            let grid = interp_grid(*lo, *hi, *n_grid);
            let pos = u * (n_grid - 1) as f64;
            let i = (pos.floor() as usize).min(n_grid - 2);
            let frac = pos - i as f64;
            grid[i] + frac * (grid[i + 1] - grid[i])
        }
    };
    if !x.is_finite() {
        return Err(PriorsError::Generation(format!(
            "marginal inverse cdf produced non-finite value at u={u}"
        )));
    }
    Ok(x)
}

/// Draws one copula sample: correlate a standard normal vector through the
/// Cholesky rows, map through the normal CDF, optionally apply the outlier
/// perturbation in u-space, then push through each marginal's inverse CDF.
pub fn copula_sample(
    spec: &CopulaSpec,
    rng: &mut ChaCha8Rng,
    outlier_prototype: Option<usize>,
) -> Result<Vec<f64>, PriorsError> {
    let rows = spec.chol.rows();
    let g: Vec<f64> = (0..spec.dim).map(|_| standard_normal(rng)).collect();
    let std_normal = statrs::distribution::Normal::standard();
    let mut u: Vec<f64> = rows
        .iter()
        .map(|row| {
            let z: f64 = row.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            std_normal.cdf(z)
        })
        .collect();

    if let Some(proto) = outlier_prototype {
        match &spec.outlier {
            CopulaOutlierMechanism::Probabilistic {
                prototypes,
                strength_range,
            } => {
                let dims = prototypes.get(proto).ok_or_else(|| {
                    PriorsError::Generation(format!("prototype {proto} out of range"))
                })?;
                let beta = rng.random_range(strength_range.0..=strength_range.1);
                for &j in dims {
                    let b = if u[j] >= 0.5 { 1.0 } else { 0.0 };
                    u[j] = (1.0 - beta) * u[j] + beta * b;
                }
            }
            CopulaOutlierMechanism::Dependence {
                prototypes,
                strength_range,
            } => {
                let dims = prototypes.get(proto).ok_or_else(|| {
                    PriorsError::Generation(format!("prototype {proto} out of range"))
                })?;
                let beta = rng.random_range(strength_range.0..=strength_range.1);
                for &j in dims {
                    if rng.random::<f64>() < beta {
                        u[j] = 1.0 - u[j];
                    }
                }
            }
        }
    }

    u.iter()
        .zip(spec.marginals.iter())
        .map(|(ui, marginal)| marginal_inverse_cdf(marginal, *ui))
        .collect()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

fn gmm_draw(
    spec: &GmmSpec,
    rng: &mut ChaCha8Rng,
    outlier: bool,
) -> Result<(Vec<f64>, PointLatent), PriorsError> {
    let (component, prototype) = if outlier {
        // Outliers choose their component uniformly; the prototype subspace
        // is drawn uniformly from the spec's list.
        let k = rng.random_range(0..spec.n_components);
        let p = rng.random_range(0..spec.outlier_subspaces.len());
        (k, Some(p))
    } else {
        let r: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut k = spec.n_components - 1;
        for (i, w) in spec.weights.iter().enumerate() {
            acc += w;
            if r < acc {
                k = i;
                break;
            }
        }
        (k, None)
    };
    let mut x = Vec::with_capacity(spec.dim);
    for j in 0..spec.dim {
        let mut var = spec.cov_diag[component][j];
        if let Some(p) = prototype {
            if spec.outlier_subspaces[p].contains(&j) {
                var *= spec.inflation_scale;
            }
        }
        if var <= 0.0 {
            return Err(PriorsError::Generation(format!(
                "non-positive variance in component {component} dim {j}"
            )));
        }
        x.push(spec.means[component][j] + var.sqrt() * standard_normal(rng));
    }
    Ok((
        x,
        PointLatent {
            component,
            prototype,
        },
    ))
}

fn scm_draw(
    spec: &ScmSpec,
    rng: &mut ChaCha8Rng,
    outlier: bool,
) -> Result<(Vec<f64>, PointLatent), PriorsError> {
    let mut noise_std: Vec<f64> = spec.nodes.iter().map(|n| n.noise_std).collect();
    let mut mask = None;
    let mut prototype = None;
    if outlier {
        match &spec.outlier {
            ScmOutlierMechanism::NoiseScale {
                high_noise,
                high_noise_prob,
                prototypes,
            } => {
                let p = rng.random_range(0..prototypes.len());
                prototype = Some(p);
                let nodes = &prototypes[p];
                let mut any = false;
                for &n in nodes {
                    if rng.random::<f64>() < *high_noise_prob {
                        noise_std[n] = *high_noise;
                        any = true;
                    }
                }
                if !any {
                    // an outlier must perturb at least one node
                    let n = nodes[rng.random_range(0..nodes.len())];
                    noise_std[n] = *high_noise;
                }
            }
            ScmOutlierMechanism::WeightMask {
                perturb_prob,
                prototypes,
            } => {
                let p = rng.random_range(0..prototypes.len());
                prototype = Some(p);
                let proto = &prototypes[p];
                let mut m = StructuralMask::default();
                for &n in &proto.flipped {
                    if rng.random::<f64>() < *perturb_prob {
                        m.flipped.push(n);
                    }
                }
                for &n in &proto.dropped {
                    if rng.random::<f64>() < *perturb_prob {
                        m.dropped.push(n);
                    }
                }
                if m.flipped.is_empty() && m.dropped.is_empty() {
                    let total = proto.flipped.len() + proto.dropped.len();
                    let pick = rng.random_range(0..total);
                    if pick < proto.flipped.len() {
                        m.flipped.push(proto.flipped[pick]);
                    } else {
                        m.dropped.push(proto.dropped[pick - proto.flipped.len()]);
                    }
                }
                mask = Some(m);
            }
        }
    }
    let exogenous: Vec<f64> = noise_std
        .iter()
        .map(|s| s * standard_normal(rng))
        .collect();
    let x = scm_forward(spec, &exogenous, mask.as_ref())?;
    Ok((
        x,
        PointLatent {
            component: 0,
            prototype,
        },
    ))
}

fn copula_draw(
    spec: &CopulaSpec,
    rng: &mut ChaCha8Rng,
    outlier: bool,
) -> Result<(Vec<f64>, PointLatent), PriorsError> {
    let prototype = if outlier {
        let count = match &spec.outlier {
            CopulaOutlierMechanism::Probabilistic { prototypes, .. }
            | CopulaOutlierMechanism::Dependence { prototypes, .. } => prototypes.len(),
        };
        Some(rng.random_range(0..count))
    } else {
        None
    };
    let x = copula_sample(spec, rng, prototype)?;
    Ok((
        x,
        PointLatent {
            component: 0,
            prototype,
        },
    ))
}

/// Samples a labeled dataset from `spec`. The total outlier count is
/// `round(outlier_rate * (n_context + n_query))`, split proportionally
/// between context and query. Deterministic given `(spec, counts, draw_seed)`.
pub fn generate_dataset(
    spec: &GeneratorSpec,
    n_context: usize,
    n_query: usize,
    outlier_rate: f64,
    draw_seed: u64,
) -> Result<LabeledDataset, PriorsError> {
    if n_context == 0 || n_query == 0 {
        return Err(PriorsError::Generation(
            "n_context and n_query must be >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&outlier_rate) {
        return Err(PriorsError::Generation(format!(
            "outlier_rate {outlier_rate} outside [0, 1]"
        )));
    }
    spec.validate()?;

    let total = n_context + n_query;
    let n_outliers = (outlier_rate * total as f64).round() as usize;
    let ctx_outliers =
        (((n_outliers * n_context) as f64 / total as f64).round() as usize).min(n_context);
    let query_outliers = (n_outliers - ctx_outliers).min(n_query);

    let mut rng = ChaCha8Rng::seed_from_u64(super::split_seed(spec.seed, draw_seed));

    let draw = |rng: &mut ChaCha8Rng, outlier: bool| match &spec.payload {
        SpecPayload::Gmm(g) => gmm_draw(g, rng, outlier),
        SpecPayload::Scm(s) => scm_draw(s, rng, outlier),
        SpecPayload::Copula(c) => copula_draw(c, rng, outlier),
    };

    let mut build =
        |rng: &mut ChaCha8Rng,
         n: usize,
         n_out: usize|
         -> Result<(Array2<f64>, Vec<u8>, Vec<PointLatent>), PriorsError> {
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let outlier = i < n_out;
                let (x, latent) = draw(rng, outlier)?;
                rows.push((x, if outlier { 1u8 } else { 0 }, latent));
            }
            // deterministic shuffle removes positional label structure
            for i in (1..rows.len()).rev() {
                let j = rng.random_range(0..=i);
                rows.swap(i, j);
            }
            let mut x = Array2::zeros((n, spec.dim()));
            let mut y = Vec::with_capacity(n);
            let mut latents = Vec::with_capacity(n);
            for (i, (features, label, latent)) in rows.into_iter().enumerate() {
                for (j, v) in features.into_iter().enumerate() {
                    x[[i, j]] = v;
                }
                y.push(label);
                latents.push(latent);
            }
            Ok((x, y, latents))
        };

    let (context_x, context_y, mut latents) = build(&mut rng, n_context, ctx_outliers)?;
    let (query_x, query_y, query_latents) = build(&mut rng, n_query, query_outliers)?;
    latents.extend(query_latents);

    let dataset = LabeledDataset {
        context_x,
        context_y,
        query_x,
        query_y,
        spec_id: spec.spec_id,
        point_latents: Some(latents),
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{sample_spec, Family, SamplingRanges};

    fn single_gaussian(dim: usize, subspace: Vec<usize>, inflation: f64) -> GeneratorSpec {
        GeneratorSpec {
            family: Family::Gmm,
            payload: SpecPayload::Gmm(GmmSpec {
                dim,
                n_components: 1,
                weights: vec![1.0],
                means: vec![vec![0.0; dim]],
                cov_diag: vec![vec![1.0; dim]],
                inflation_scale: inflation,
                outlier_subspaces: vec![subspace],
            }),
            spec_id: 1,
            seed: 77,
        }
    }

    #[test]
    fn zero_coefficients_propagate_zero() {
        let spec = ScmSpec {
            dim: 3,
            nodes: vec![
                ScmNode {
                    id: 0,
                    layer: 0,
                    equation: EquationKind::Tanh,
                    parents: vec![],
                    coefficients: vec![],
                    noise_std: 1.0,
                },
                ScmNode {
                    id: 1,
                    layer: 1,
                    equation: EquationKind::Tanh,
                    parents: vec![0],
                    coefficients: vec![0.0],
                    noise_std: 1.0,
                },
                ScmNode {
                    id: 2,
                    layer: 2,
                    equation: EquationKind::Tanh,
                    parents: vec![0, 1],
                    coefficients: vec![0.0, 0.0],
                    noise_std: 1.0,
                },
            ],
            outlier: ScmOutlierMechanism::NoiseScale {
                high_noise: 5.0,
                high_noise_prob: 0.5,
                prototypes: vec![vec![1]],
            },
            leaky_slope: 0.01,
        };
        let out = scm_forward(&spec, &[0.0, 0.0, 0.0], None).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_node_chain_matches_hand_evaluation() {
        let spec = ScmSpec {
            dim: 2,
            nodes: vec![
                ScmNode {
                    id: 0,
                    layer: 0,
                    equation: EquationKind::Tanh,
                    parents: vec![],
                    coefficients: vec![],
                    noise_std: 1.0,
                },
                ScmNode {
                    id: 1,
                    layer: 1,
                    equation: EquationKind::Tanh,
                    parents: vec![0],
                    coefficients: vec![1.0],
                    noise_std: 1.0,
                },
            ],
            outlier: ScmOutlierMechanism::NoiseScale {
                high_noise: 5.0,
                high_noise_prob: 0.5,
                prototypes: vec![vec![1]],
            },
            leaky_slope: 0.01,
        };
        let out = scm_forward(&spec, &[0.5, 0.0], None).unwrap();
        // x0 = tanh(0.5), x1 = tanh(1.0 * x0)
        assert!((out[0] - 0.5f64.tanh()).abs() < 1e-15);
        assert!((out[1] - out[0].tanh()).abs() < 1e-15);
    }

    #[test]
    fn dropping_the_only_parent_forces_root_behavior() {
        let spec = ScmSpec {
            dim: 2,
            nodes: vec![
                ScmNode {
                    id: 0,
                    layer: 0,
                    equation: EquationKind::Tanh,
                    parents: vec![],
                    coefficients: vec![],
                    noise_std: 1.0,
                },
                ScmNode {
                    id: 1,
                    layer: 1,
                    equation: EquationKind::Tanh,
                    parents: vec![0],
                    coefficients: vec![2.0],
                    noise_std: 1.0,
                },
            ],
            outlier: ScmOutlierMechanism::WeightMask {
                perturb_prob: 1.0,
                prototypes: vec![ScmMaskPrototype {
                    flipped: vec![],
                    dropped: vec![1],
                }],
            },
            leaky_slope: 0.01,
        };
        let mask = StructuralMask {
            flipped: vec![],
            dropped: vec![1],
        };
        let out = scm_forward(&spec, &[0.9, 0.3], Some(&mask)).unwrap();
        assert!((out[1] - 0.3f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let ranges = SamplingRanges::desk(8);
        for family in Family::ALL {
            let spec = sample_spec(family, &ranges, 11, 5).unwrap();
            let a = generate_dataset(&spec, 50, 20, 0.1, 3).unwrap();
            let b = generate_dataset(&spec, 50, 20, 0.1, 3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn outlier_counts_split_proportionally() {
        let spec = single_gaussian(2, vec![0], 5.0);
        let ds = generate_dataset(&spec, 80, 20, 0.1, 9).unwrap();
        let ctx_out: usize = ds.context_y.iter().map(|y| *y as usize).sum();
        let q_out: usize = ds.query_y.iter().map(|y| *y as usize).sum();
        assert_eq!(ctx_out + q_out, 10);
        assert_eq!(ctx_out, 8);
        assert_eq!(q_out, 2);
    }

    #[test]
    fn latents_round_trip_generating_component() {
        let mut spec = single_gaussian(2, vec![0], 5.0);
        if let SpecPayload::Gmm(g) = &mut spec.payload {
            g.n_components = 2;
            g.weights = vec![0.5, 0.5];
            g.means = vec![vec![-50.0, -50.0], vec![50.0, 50.0]];
            g.cov_diag = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        }
        let ds = generate_dataset(&spec, 100, 50, 0.0, 4).unwrap();
        let latents = ds.point_latents.as_ref().unwrap();
        for i in 0..ds.n_context() {
            let expect = if ds.context_x[[i, 0]] > 0.0 { 1 } else { 0 };
            assert_eq!(latents[i].component, expect);
        }
    }

    #[test]
    fn single_gaussian_moments_within_monte_carlo_bounds() {
        // N = 100k draws from N(0, I_2): mean within 0.02, variance within
        // 0.05 (3 sigma of the sampling distributions).
        let spec = single_gaussian(2, vec![0], 5.0);
        let ds = generate_dataset(&spec, 90_000, 10_000, 0.0, 12).unwrap();
        let n = (ds.n_context() + ds.n_query()) as f64;
        for j in 0..2 {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for i in 0..ds.n_context() {
                sum += ds.context_x[[i, j]];
                sumsq += ds.context_x[[i, j]] * ds.context_x[[i, j]];
            }
            for i in 0..ds.n_query() {
                sum += ds.query_x[[i, j]];
                sumsq += ds.query_x[[i, j]] * ds.query_x[[i, j]];
            }
            let mean = sum / n;
            let var = sumsq / n - mean * mean;
            assert!(mean.abs() < 0.02, "dim {j} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "dim {j} var {var}");
        }
    }

    #[test]
    fn inflated_subspace_variance_ratio_matches_scale() {
        let spec = single_gaussian(2, vec![0], 5.0);
        let ds = generate_dataset(&spec, 100_000, 1000, 0.5, 21).unwrap();
        let mut stats = [[0.0f64; 3]; 2]; // [label][n, sum, sumsq] per dim0
        for i in 0..ds.n_context() {
            let y = ds.context_y[i] as usize;
            stats[y][0] += 1.0;
            stats[y][1] += ds.context_x[[i, 0]];
            stats[y][2] += ds.context_x[[i, 0]] * ds.context_x[[i, 0]];
        }
        let var = |s: &[f64; 3]| s[2] / s[0] - (s[1] / s[0]) * (s[1] / s[0]);
        let inlier_var = var(&stats[0]);
        let outlier_var = var(&stats[1]);
        let ratio = outlier_var / inlier_var;
        assert!((ratio - 5.0).abs() < 0.3, "ratio {ratio}");

        // Dim 1 is outside the subspace: outlier variance unchanged.
        let mut stats1 = [[0.0f64; 3]; 2];
        for i in 0..ds.n_context() {
            let y = ds.context_y[i] as usize;
            stats1[y][0] += 1.0;
            stats1[y][1] += ds.context_x[[i, 1]];
            stats1[y][2] += ds.context_x[[i, 1]] * ds.context_x[[i, 1]];
        }
        let ratio1 = var(&stats1[1]) / var(&stats1[0]);
        assert!((ratio1 - 1.0).abs() < 0.1, "ratio1 {ratio1}");
    }

    #[test]
    fn interp_grid_is_strictly_increasing_and_deterministic() {
        let a = interp_grid(-2.0, 3.0, 64);
        let b = interp_grid(-2.0, 3.0, 64);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_eq!(a[0], -2.0);
        assert_eq!(a[63], 3.0);
        for w in a.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn exponential_marginal_sample_properties() {
        // rate 1.8: all samples >= 0, empirical mean near 1/1.8.
        let spec = GeneratorSpec {
            family: Family::CopulaProbabilistic,
            payload: SpecPayload::Copula(CopulaSpec {
                dim: 1,
                chol: crate::priors::CholFactor::identity(1),
                marginals: vec![Marginal::Exponential { rate: 1.8 }],
                outlier: CopulaOutlierMechanism::Probabilistic {
                    prototypes: vec![vec![0]],
                    strength_range: (0.2, 0.4),
                },
            }),
            spec_id: 2,
            seed: 31,
        };
        let ds = generate_dataset(&spec, 50_000, 1000, 0.0, 8).unwrap();
        let mut sum = 0.0;
        for i in 0..ds.n_context() {
            let v = ds.context_x[[i, 0]];
            assert!(v >= 0.0);
            sum += v;
        }
        let mean = sum / ds.n_context() as f64;
        // sd of the mean is (1/1.8)/sqrt(n) ~ 0.0025; allow 4 sigma
        assert!((mean - 1.0 / 1.8).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn dependence_flip_preserves_symmetric_marginal() {
        // With beta = 1 and a symmetric marginal the flipped coordinate has
        // the same distribution; check via a KS statistic against the
        // non-flipped sampler.
        let make = |mechanism| GeneratorSpec {
            family: Family::CopulaDependence,
            payload: SpecPayload::Copula(CopulaSpec {
                dim: 1,
                chol: crate::priors::CholFactor::identity(1),
                marginals: vec![Marginal::Normal { mean: 0.0, std: 1.0 }],
                outlier: mechanism,
            }),
            spec_id: 3,
            seed: 55,
        };
        let spec = make(CopulaOutlierMechanism::Dependence {
            prototypes: vec![vec![0]],
            strength_range: (0.999999, 0.999999),
        });
        let SpecPayload::Copula(csp) = &spec.payload else { panic!() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flipped: Vec<f64> = (0..20_000)
            .map(|_| copula_sample(csp, &mut rng, Some(0)).unwrap()[0])
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plain: Vec<f64> = (0..20_000)
            .map(|_| copula_sample(csp, &mut rng, None).unwrap()[0])
            .collect();
        let ks = two_sample_ks(&flipped, &plain);
        // 1% critical value: 1.628 * sqrt((n+m)/(n*m))
        let crit = 1.628 * ((40_000.0) / (20_000.0f64 * 20_000.0)).sqrt();
        assert!(ks < crit, "ks {ks} crit {crit}");
    }

    pub(crate) fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
        let mut sa: Vec<f64> = a.to_vec();
        let mut sb: Vec<f64> = b.to_vec();
        sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut i, mut j) = (0usize, 0usize);
        let mut d = 0.0f64;
        while i < sa.len() && j < sb.len() {
            let x = sa[i].min(sb[j]);
            while i < sa.len() && sa[i] <= x {
                i += 1;
            }
            while j < sb.len() && sb[j] <= x {
                j += 1;
            }
            let fa = i as f64 / sa.len() as f64;
            let fb = j as f64 / sb.len() as f64;
            d = d.max((fa - fb).abs());
        }
        d
    }

    #[test]
    fn identity_inflation_is_indistinguishable() {
        // s' = 1: inlier and outlier marginals identical (two-sample KS).
        let spec = single_gaussian(2, vec![0], 1.0);
        let ds = generate_dataset(&spec, 10_000, 10_000, 0.5, 17).unwrap();
        for j in 0..2 {
            let mut inliers = Vec::new();
            let mut outliers = Vec::new();
            for i in 0..ds.n_context() {
                if ds.context_y[i] == 0 {
                    inliers.push(ds.context_x[[i, j]]);
                } else {
                    outliers.push(ds.context_x[[i, j]]);
                }
            }
            let ks = two_sample_ks(&inliers, &outliers);
            let n = inliers.len() as f64;
            let m = outliers.len() as f64;
            let crit = 1.628 * ((n + m) / (n * m)).sqrt();
            assert!(ks < crit, "dim {j}: ks {ks} crit {crit}");
        }
    }

    #[test]
    fn copula_identity_chol_normal_marginal_is_standard_normal() {
        let spec = GeneratorSpec {
            family: Family::CopulaProbabilistic,
            payload: SpecPayload::Copula(CopulaSpec {
                dim: 1,
                chol: crate::priors::CholFactor::identity(1),
                marginals: vec![Marginal::Normal { mean: 0.0, std: 1.0 }],
                outlier: CopulaOutlierMechanism::Probabilistic {
                    prototypes: vec![vec![0]],
                    strength_range: (0.2, 0.4),
                },
            }),
            spec_id: 9,
            seed: 101,
        };
        let SpecPayload::Copula(cspec) = &spec.payload else { panic!() };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| copula_sample(cspec, &mut rng, None).unwrap()[0])
            .collect();
        // one-sample KS against the standard normal CDF
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len() as f64;
        let std_normal = statrs::distribution::Normal::standard();
        let mut d = 0.0f64;
        for (i, x) in sorted.iter().enumerate() {
            let f = std_normal.cdf(*x);
            d = d.max((f - i as f64 / n).abs());
            d = d.max(((i + 1) as f64 / n - f).abs());
        }
        let crit = 1.628 / n.sqrt();
        assert!(d < crit, "ks {d} crit {crit}");
    }

    #[test]
    fn degenerate_spec_is_a_generation_error() {
        let mut spec = single_gaussian(2, vec![0], 5.0);
        if let SpecPayload::Gmm(g) = &mut spec.payload {
            g.cov_diag[0][1] = 0.0;
        }
        assert!(generate_dataset(&spec, 10, 5, 0.1, 0).is_err());
    }
}
