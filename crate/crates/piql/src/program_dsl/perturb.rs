use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::priors::{
    CopulaOutlierMechanism, GeneratorSpec, Marginal, ScmOutlierMechanism, SpecPayload,
};

fn jitter(rng: &mut ChaCha8Rng, epsilon: f64, v: f64) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    v * (1.0 + epsilon * g)
}

/// Multiplies every continuous parameter by `(1 + epsilon * g)` with
/// standard-normal `g`, then re-projects onto the spec invariants. All
/// structural fields (family, dimensionality, DAG edges, prototype sets,
/// marginal families, grid sizes) are preserved; `epsilon = 0` is the exact
/// identity.
pub fn perturb(spec: &GeneratorSpec, epsilon: f64, rng: &mut ChaCha8Rng) -> GeneratorSpec {
    assert!(epsilon >= 0.0, "epsilon must be >= 0");
    if epsilon == 0.0 {
        return spec.clone();
    }
    let mut out = spec.clone();
    match &mut out.payload {
        SpecPayload::Gmm(g) => {
            for w in g.weights.iter_mut() {
                *w = jitter(rng, epsilon, *w).max(1e-4);
            }
            let sum: f64 = g.weights.iter().sum();
            g.weights.iter_mut().for_each(|w| *w /= sum);
            for m in g.means.iter_mut().flatten() {
                *m = jitter(rng, epsilon, *m);
            }
            for v in g.cov_diag.iter_mut().flatten() {
                *v = jitter(rng, epsilon, *v).abs().max(1e-4);
            }
            g.inflation_scale = jitter(rng, epsilon, g.inflation_scale).abs().max(1e-3);
        }
        SpecPayload::Scm(s) => {
            for node in s.nodes.iter_mut() {
                for c in node.coefficients.iter_mut() {
                    *c = jitter(rng, epsilon, *c);
                }
                node.noise_std = jitter(rng, epsilon, node.noise_std).abs().max(1e-3);
            }
            match &mut s.outlier {
                ScmOutlierMechanism::NoiseScale {
                    high_noise,
                    high_noise_prob,
                    ..
                } => {
                    *high_noise = jitter(rng, epsilon, *high_noise).abs().max(1e-3);
                    *high_noise_prob = jitter(rng, epsilon, *high_noise_prob).clamp(1e-3, 1.0);
                }
                ScmOutlierMechanism::WeightMask { perturb_prob, .. } => {
                    *perturb_prob = jitter(rng, epsilon, *perturb_prob).clamp(1e-3, 1.0);
                }
            }
        }
        SpecPayload::Copula(c) => {
            let dim = c.dim;
            let mut cursor = 0;
            for r in 1..dim {
                for _ in 0..r {
                    c.chol.strict_lower[cursor] =
                        jitter(rng, epsilon, c.chol.strict_lower[cursor]);
                    cursor += 1;
                }
                // re-project the row so the derived diagonal stays positive
                let start = cursor - r;
                let sumsq: f64 = c.chol.strict_lower[start..cursor]
                    .iter()
                    .map(|v| v * v)
                    .sum();
                if sumsq > 0.98 {
                    let scale = (0.98 / sumsq).sqrt();
                    for v in &mut c.chol.strict_lower[start..cursor] {
                        *v *= scale;
                    }
                }
            }
            for m in c.marginals.iter_mut() {
                match m {
                    Marginal::Normal { mean, std } => {
                        *mean = jitter(rng, epsilon, *mean);
                        *std = jitter(rng, epsilon, *std).abs().max(1e-3);
                    }
                    Marginal::StudentT { dof, loc, scale } => {
                        *dof = jitter(rng, epsilon, *dof).abs().max(1.05);
                        *loc = jitter(rng, epsilon, *loc);
                        *scale = jitter(rng, epsilon, *scale).abs().max(1e-3);
                    }
                    Marginal::Beta { alpha, beta } => {
                        *alpha = jitter(rng, epsilon, *alpha).abs().max(0.05);
                        *beta = jitter(rng, epsilon, *beta).abs().max(0.05);
                    }
                    Marginal::Exponential { rate } => {
                        *rate = jitter(rng, epsilon, *rate).abs().max(1e-3);
                    }
                    Marginal::Interp { lo, hi, .. } => {
                        // perturb as (center, halfwidth) so lo < hi survives
                        let center = 0.5 * (*lo + *hi);
                        let halfwidth = 0.5 * (*hi - *lo);
                        let center = jitter(rng, epsilon, center);
                        let halfwidth = jitter(rng, epsilon, halfwidth).abs().max(0.05);
                        *lo = center - halfwidth;
                        *hi = center + halfwidth;
                    }
                }
            }
            match &mut c.outlier {
                CopulaOutlierMechanism::Probabilistic { strength_range, .. }
                | CopulaOutlierMechanism::Dependence { strength_range, .. } => {
                    let a = jitter(rng, epsilon, strength_range.0).clamp(1e-3, 0.999);
                    let b = jitter(rng, epsilon, strength_range.1).clamp(1e-3, 0.999);
                    *strength_range = (a.min(b), a.max(b));
                }
            }
        }
    }
    debug_assert!(out.validate().is_ok(), "perturb broke spec invariants");
    out
}
