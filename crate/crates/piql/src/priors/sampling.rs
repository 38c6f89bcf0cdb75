use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    CholFactor, CopulaOutlierMechanism, CopulaSpec, EquationKind, Family, GeneratorSpec, GmmSpec,
    Marginal, PriorsError, ScmMaskPrototype, ScmNode, ScmOutlierMechanism, ScmSpec, SpecPayload,
    DEFAULT_LEAKY_SLOPE,
};

/// Configurable ranges for [`sample_spec`]. Defaults mirror the prior
/// generation ranges used for encoder training: dimensionality in [2, 100],
/// GMM components in [1, 5], mean magnitude up to 6, variance up to 6,
/// inflation scale 5.0 and up to 16 outlier prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingRanges {
    pub dim: (usize, usize),
    pub gmm_components: (usize, usize),
    pub max_mean_magnitude: f64,
    pub variance: (f64, f64),
    pub inflation_scale: f64,
    pub max_prototypes: usize,
    /// SCM DAG depth range (number of layers); widths fall out of the
    /// dimension split across layers.
    pub scm_layers: (usize, usize),
    pub scm_max_parents: usize,
    pub scm_coeff_magnitude: f64,
    pub scm_noise_std: (f64, f64),
    pub scm_high_noise: f64,
    pub scm_mechanism_prob: (f64, f64),
    pub copula_probabilistic_window: (f64, f64),
    pub copula_dependence_window: (f64, f64),
    pub interp_grid: usize,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            dim: (2, 100),
            gmm_components: (1, 5),
            max_mean_magnitude: 6.0,
            variance: (0.05, 6.0),
            inflation_scale: 5.0,
            max_prototypes: 16,
            scm_layers: (2, 4),
            scm_max_parents: 3,
            scm_coeff_magnitude: 2.0,
            scm_noise_std: (1.0, 1.0),
            scm_high_noise: 5.0,
            scm_mechanism_prob: (0.2, 0.8),
            copula_probabilistic_window: (0.2, 0.5),
            copula_dependence_window: (0.9, 0.99),
            interp_grid: 256,
        }
    }
}

impl SamplingRanges {
    /// Desk-scale ranges: small dimensionality, everything else unchanged.
    pub fn desk(max_dim: usize) -> Self {
        SamplingRanges {
            dim: (2, max_dim),
            ..SamplingRanges::default()
        }
    }

    pub fn validate(&self) -> Result<(), PriorsError> {
        let check = |ok: bool, field: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(PriorsError::InvalidRanges {
                    field,
                    reason: reason.to_string(),
                })
            }
        };
        check(self.dim.0 >= 1 && self.dim.0 <= self.dim.1, "dim", "need 1 <= lo <= hi")?;
        check(
            self.gmm_components.0 >= 1 && self.gmm_components.0 <= self.gmm_components.1,
            "gmm_components",
            "need 1 <= lo <= hi",
        )?;
        check(
            self.max_mean_magnitude >= 0.0,
            "max_mean_magnitude",
            "must be >= 0",
        )?;
        check(
            self.variance.0 > 0.0 && self.variance.0 <= self.variance.1,
            "variance",
            "need 0 < lo <= hi",
        )?;
        check(self.inflation_scale > 0.0, "inflation_scale", "must be > 0")?;
        check(self.max_prototypes >= 1, "max_prototypes", "must be >= 1")?;
        check(
            self.scm_layers.0 >= 1 && self.scm_layers.0 <= self.scm_layers.1,
            "scm_layers",
            "need 1 <= lo <= hi",
        )?;
        check(self.scm_max_parents >= 1, "scm_max_parents", "must be >= 1")?;
        check(
            self.scm_coeff_magnitude > 0.0,
            "scm_coeff_magnitude",
            "must be > 0",
        )?;
        check(
            self.scm_noise_std.0 > 0.0 && self.scm_noise_std.0 <= self.scm_noise_std.1,
            "scm_noise_std",
            "need 0 < lo <= hi",
        )?;
        check(self.scm_high_noise > 0.0, "scm_high_noise", "must be > 0")?;
        check(
            self.scm_mechanism_prob.0 > 0.0
                && self.scm_mechanism_prob.0 <= self.scm_mechanism_prob.1
                && self.scm_mechanism_prob.1 <= 1.0,
            "scm_mechanism_prob",
            "need 0 < lo <= hi <= 1",
        )?;
        for (field, w) in [
            ("copula_probabilistic_window", self.copula_probabilistic_window),
            ("copula_dependence_window", self.copula_dependence_window),
        ] {
            check(w.0 > 0.0 && w.0 <= w.1 && w.1 < 1.0, field, "need 0 < lo <= hi < 1")?;
        }
        check(self.interp_grid >= 2, "interp_grid", "must be >= 2")?;
        Ok(())
    }
}

fn range_usize(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn range_f64(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Non-empty index subset of {0..dim-1} with at most `max_size` members.
fn sample_index_set(rng: &mut ChaCha8Rng, dim: usize, max_size: usize) -> Vec<usize> {
    let size = range_usize(rng, (1, max_size.clamp(1, dim)));
    let mut all: Vec<usize> = (0..dim).collect();
    // partial Fisher-Yates
    for i in 0..size {
        let j = rng.random_range(i..all.len());
        all.swap(i, j);
    }
    let mut set: Vec<usize> = all[..size].to_vec();
    set.sort_unstable();
    set
}

/// Draws a generator specification from `ranges`, deterministically for a
/// given `(family, ranges, spec_id, master_seed)`. The per-spec RNG stream is
/// split from the master seed so specs can be sampled concurrently.
pub fn sample_spec(
    family: Family,
    ranges: &SamplingRanges,
    spec_id: u64,
    master_seed: u64,
) -> Result<GeneratorSpec, PriorsError> {
    ranges.validate()?;
    let stream = super::split_seed(master_seed, spec_id);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let dim = range_usize(&mut rng, ranges.dim);
    let payload = match family {
        Family::Gmm => SpecPayload::Gmm(sample_gmm(&mut rng, ranges, dim)),
        Family::ScmMeasurement | Family::ScmStructural => {
            SpecPayload::Scm(sample_scm(&mut rng, ranges, dim, family))
        }
        Family::CopulaProbabilistic | Family::CopulaDependence => {
            SpecPayload::Copula(sample_copula(&mut rng, ranges, dim, family))
        }
    };
    let spec = GeneratorSpec {
        family,
        payload,
        spec_id,
        seed: rng.random::<u64>(),
    };
    spec.validate()?;
    Ok(spec)
}

fn sample_gmm(rng: &mut ChaCha8Rng, ranges: &SamplingRanges, dim: usize) -> GmmSpec {
    let m = range_usize(rng, ranges.gmm_components);
    // Clamped-away-from-zero simplex keeps quantized weights non-degenerate.
    let mut weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.05f64..1.0)).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    let means = (0..m)
        .map(|_| {
            (0..dim)
                .map(|_| range_f64(rng, (-ranges.max_mean_magnitude, ranges.max_mean_magnitude)))
                .collect()
        })
        .collect();
    let cov_diag = (0..m)
        .map(|_| (0..dim).map(|_| range_f64(rng, ranges.variance)).collect())
        .collect();
    let n_proto = range_usize(rng, (1, ranges.max_prototypes));
    let outlier_subspaces = (0..n_proto)
        .map(|_| sample_index_set(rng, dim, dim.div_ceil(2)))
        .collect();
    GmmSpec {
        dim,
        n_components: m,
        weights,
        means,
        cov_diag,
        inflation_scale: ranges.inflation_scale,
        outlier_subspaces,
    }
}

fn sample_scm(
    rng: &mut ChaCha8Rng,
    ranges: &SamplingRanges,
    dim: usize,
    family: Family,
) -> ScmSpec {
    // Assign each node to a layer: at least one root, every later layer
    // non-empty while nodes remain.
    let n_layers = range_usize(rng, ranges.scm_layers).min(dim);
    let mut layers = vec![0usize; dim];
    for (i, l) in layers.iter_mut().enumerate().take(n_layers.min(dim)) {
        *l = i; // seed each layer with one node
    }
    for l in layers.iter_mut().skip(n_layers.min(dim)) {
        *l = rng.random_range(0..n_layers);
    }
    layers.sort_unstable();

    let mut nodes = Vec::with_capacity(dim);
    for (id, &layer) in layers.iter().enumerate() {
        let candidates: Vec<usize> = (0..id).filter(|p| layers[*p] < layer).collect();
        let (parents, coefficients) = if layer == 0 || candidates.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let k = range_usize(rng, (1, ranges.scm_max_parents.min(candidates.len())));
            let mut picked = candidates.clone();
            for i in 0..k {
                let j = rng.random_range(i..picked.len());
                picked.swap(i, j);
            }
            let mut parents: Vec<usize> = picked[..k].to_vec();
            parents.sort_unstable();
            let coefficients = (0..k)
                .map(|_| {
                    let c = rng
                        .random_range(-ranges.scm_coeff_magnitude..=ranges.scm_coeff_magnitude);
                    // keep edges away from numerically dead weights
                    if c.abs() < 0.05 {
                        0.05f64.copysign(c)
                    } else {
                        c
                    }
                })
                .collect();
            (parents, coefficients)
        };
        let equation = if rng.random::<bool>() {
            EquationKind::Tanh
        } else {
            EquationKind::LeakyRelu
        };
        let effective_layer = if parents.is_empty() { 0 } else { layer };
        nodes.push(ScmNode {
            id,
            layer: effective_layer,
            equation,
            parents,
            coefficients,
            noise_std: range_f64(rng, ranges.scm_noise_std),
        });
    }

    let n_proto = range_usize(rng, (1, ranges.max_prototypes));
    let outlier = if family == Family::ScmMeasurement {
        let prototypes = (0..n_proto)
            .map(|_| sample_index_set(rng, dim, dim.div_ceil(2)))
            .collect();
        ScmOutlierMechanism::NoiseScale {
            high_noise: ranges.scm_high_noise,
            high_noise_prob: range_f64(rng, ranges.scm_mechanism_prob),
            prototypes,
        }
    } else {
        let non_root: Vec<usize> = nodes
            .iter()
            .filter(|n| !n.parents.is_empty())
            .map(|n| n.id)
            .collect();
        let prototypes = (0..n_proto)
            .map(|_| {
                // Flips and drops only make sense on nodes with parents.
                let pool = if non_root.is_empty() { vec![0] } else { non_root.clone() };
                let flip_count = rng.random_range(0..=pool.len().min(2));
                let mut shuffled = pool.clone();
                for i in 0..shuffled.len() {
                    let j = rng.random_range(i..shuffled.len());
                    shuffled.swap(i, j);
                }
                let mut flipped: Vec<usize> = shuffled[..flip_count].to_vec();
                let remaining: Vec<usize> =
                    shuffled[flip_count..].to_vec();
                let max_drop = remaining.len().min(2);
                let drop_count = if flip_count == 0 {
                    rng.random_range(1..=max_drop.max(1)).min(remaining.len())
                } else {
                    rng.random_range(0..=max_drop)
                };
                let mut dropped: Vec<usize> = remaining[..drop_count].to_vec();
                flipped.sort_unstable();
                dropped.sort_unstable();
                if flipped.is_empty() && dropped.is_empty() {
                    flipped.push(pool[0]);
                }
                ScmMaskPrototype { flipped, dropped }
            })
            .collect();
        ScmOutlierMechanism::WeightMask {
            perturb_prob: range_f64(rng, ranges.scm_mechanism_prob),
            prototypes,
        }
    };
    ScmSpec {
        dim,
        nodes,
        outlier,
        leaky_slope: DEFAULT_LEAKY_SLOPE,
    }
}

fn sample_copula(
    rng: &mut ChaCha8Rng,
    ranges: &SamplingRanges,
    dim: usize,
    family: Family,
) -> CopulaSpec {
    // Strict-lower rows scaled so each off-diagonal norm stays well below 1,
    // keeping the derived diagonal positive even after quantization.
    let mut strict_lower = Vec::with_capacity(CholFactor::expected_len(dim));
    for r in 1..dim {
        let raw: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = rng.random_range(0.0..0.9f64);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { target / norm } else { 0.0 };
        strict_lower.extend(raw.into_iter().map(|v| v * scale));
    }
    let chol = CholFactor { dim, strict_lower };

    let marginals = (0..dim)
        .map(|_| match rng.random_range(0..5u32) {
            0 => Marginal::Normal {
                mean: rng.random_range(-2.0..2.0),
                std: rng.random_range(0.2..2.0),
            },
            1 => Marginal::StudentT {
                dof: rng.random_range(3.0..12.0),
                loc: rng.random_range(-1.0..1.0),
                scale: rng.random_range(0.3..2.0),
            },
            2 => Marginal::Beta {
                alpha: rng.random_range(0.5..4.0),
                beta: rng.random_range(0.5..4.0),
            },
            3 => Marginal::Exponential {
                rate: rng.random_range(0.3..3.0),
            },
            _ => {
                let lo = rng.random_range(-6.0..0.0);
                let hi = rng.random_range(0.5..7.0);
                Marginal::Interp {
                    lo,
                    hi,
                    n_grid: ranges.interp_grid,
                }
            }
        })
        .collect();

    let window = if family == Family::CopulaProbabilistic {
        ranges.copula_probabilistic_window
    } else {
        ranges.copula_dependence_window
    };
    let a = range_f64(rng, window);
    let b = range_f64(rng, window);
    let strength_range = (a.min(b), a.max(b).max(a.min(b) + 1e-6).min(0.999));

    let n_proto = range_usize(rng, (1, ranges.max_prototypes));
    let prototypes: Vec<Vec<usize>> = (0..n_proto)
        .map(|_| sample_index_set(rng, dim, dim.div_ceil(2)))
        .collect();
    let outlier = if family == Family::CopulaProbabilistic {
        CopulaOutlierMechanism::Probabilistic {
            prototypes,
            strength_range,
        }
    } else {
        CopulaOutlierMechanism::Dependence {
            prototypes,
            strength_range,
        }
    };
    CopulaSpec {
        dim,
        chol,
        marginals,
        outlier,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmm_spec_respects_paper_ranges() {
        let ranges = SamplingRanges::default();
        for id in 0..50 {
            let spec = sample_spec(Family::Gmm, &ranges, id, 7).unwrap();
            let SpecPayload::Gmm(g) = &spec.payload else { panic!() };
            assert!((2..=100).contains(&g.dim));
            assert!((1..=5).contains(&g.n_components));
            assert!(g.means.iter().flatten().all(|m| m.abs() <= 6.0));
            assert!(g.cov_diag.iter().flatten().all(|v| *v > 0.0 && *v <= 6.0));
            assert_eq!(g.inflation_scale, 5.0);
            assert!(g.outlier_subspaces.len() <= 16);
        }
    }

    #[test]
    fn degenerate_ranges_collapse_to_point() {
        let ranges = SamplingRanges {
            dim: (3, 3),
            gmm_components: (1, 1),
            max_mean_magnitude: 0.0,
            variance: (1.0, 1.0),
            ..SamplingRanges::default()
        };
        let spec = sample_spec(Family::Gmm, &ranges, 0, 42).unwrap();
        let SpecPayload::Gmm(g) = &spec.payload else { panic!() };
        assert_eq!(g.dim, 3);
        assert_eq!(g.n_components, 1);
        assert_eq!(g.weights, vec![1.0]);
        assert_eq!(g.means[0], vec![0.0, 0.0, 0.0]);
        assert_eq!(g.cov_diag[0], vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let ranges = SamplingRanges::default();
        for family in Family::ALL {
            let a = sample_spec(family, &ranges, 3, 99).unwrap();
            let b = sample_spec(family, &ranges, 3, 99).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn component_counts_are_uniform() {
        // Chi-square over the component-count histogram for M in [1, 5].
        let ranges = SamplingRanges::default();
        let n = 10_000;
        let mut counts = [0usize; 5];
        for id in 0..n {
            let spec = sample_spec(Family::Gmm, &ranges, id, 1234).unwrap();
            let SpecPayload::Gmm(g) = &spec.payload else { panic!() };
            counts[g.n_components - 1] += 1;
        }
        let expected = n as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| {
                let d = *c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 4 dof, p > 0.01 requires chi2 below the 0.99 quantile 13.277.
        assert!(chi2 < 13.277, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn invalid_ranges_name_the_field() {
        let ranges = SamplingRanges {
            dim: (10, 2),
            ..SamplingRanges::default()
        };
        match sample_spec(Family::Gmm, &ranges, 0, 0) {
            Err(PriorsError::InvalidRanges { field, .. }) => assert_eq!(field, "dim"),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn all_families_validate() {
        let ranges = SamplingRanges::desk(12);
        for family in Family::ALL {
            for id in 0..25 {
                let spec = sample_spec(family, &ranges, id, 5).unwrap();
                spec.validate().unwrap();
                assert_eq!(spec.family, family);
            }
        }
    }
}
