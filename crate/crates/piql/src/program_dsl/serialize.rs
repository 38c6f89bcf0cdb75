use crate::priors::{
    CopulaOutlierMechanism, CopulaSpec, GeneratorSpec, GmmSpec, Marginal, ScmOutlierMechanism,
    ScmSpec, SpecPayload, DEFAULT_LEAKY_SLOPE,
};

use super::number::{format_canonical, quantize};

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format_canonical(*v))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_indices(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Serializes a generator spec into its bracketed program text. The output is
/// deterministic: entities in id order, numbers in the canonical format.
/// Fields whose quantized value equals the family default (uniform weights,
/// SCM noise 1, leaky slope 0.01) are omitted.
pub fn serialize(spec: &GeneratorSpec) -> String {
    match &spec.payload {
        SpecPayload::Gmm(g) => serialize_gmm(g),
        SpecPayload::Scm(s) => serialize_scm(s),
        SpecPayload::Copula(c) => serialize_copula(c),
    }
}

fn serialize_gmm(g: &GmmSpec) -> String {
    let mut lines = Vec::new();
    lines.push(format!("[FAMILY:GMM] [DIM:{}] [N_COMP:{}]", g.dim, g.n_components));

    let quantized: Vec<f64> = g.weights.iter().map(|w| quantize(*w)).collect();
    let uniform = quantized.windows(2).all(|w| w[0] == w[1]);
    for k in 0..g.n_components {
        let weight = if uniform {
            String::new()
        } else {
            format!(" [WEIGHT:{}]", format_canonical(g.weights[k]))
        };
        lines.push(format!(
            "[ENTITY] [TYPE:COMPONENT] [ID:{k}]{weight} [MEAN:{}] [COV_DIAG:{}]",
            fmt_list(&g.means[k]),
            fmt_list(&g.cov_diag[k]),
        ));
    }

    let scale = format_canonical(g.inflation_scale);
    if g.outlier_subspaces.len() == 1 {
        lines.push(format!(
            "[OUTLIER] [TYPE:inflated_cov] [INF_SCALE:{scale}] [SUB_DIMS:{}]",
            fmt_indices(&g.outlier_subspaces[0])
        ));
    } else {
        lines.push(format!(
            "[OUTLIER] [TYPE:inflated_cov] [INF_SCALE:{scale}] [N_PROTO:{}]",
            g.outlier_subspaces.len()
        ));
        for (p, dims) in g.outlier_subspaces.iter().enumerate() {
            lines.push(format!(
                "[ENTITY] [TYPE:OUTLIER_PROTOTYPE] [ID:{p}] [SUB_DIMS:{}]",
                fmt_indices(dims)
            ));
        }
    }

    // Derived view: per-component covariance inflated over the union of the
    // prototype subspaces. The parser treats it as redundant.
    let mut union: Vec<usize> = g.outlier_subspaces.iter().flatten().copied().collect();
    union.sort_unstable();
    union.dedup();
    for k in 0..g.n_components {
        let inflated: Vec<f64> = g.cov_diag[k]
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if union.contains(&j) {
                    v * g.inflation_scale
                } else {
                    *v
                }
            })
            .collect();
        lines.push(format!(
            "[ENTITY] [TYPE:OUTLIER_COMPONENT] [ID:{k}] [INF_COV:{}]",
            fmt_list(&inflated)
        ));
    }
    lines.join("\n")
}

fn serialize_scm(s: &ScmSpec) -> String {
    let mut lines = Vec::new();
    let slope = if quantize(s.leaky_slope) == DEFAULT_LEAKY_SLOPE {
        String::new()
    } else {
        format!(" [LEAKY_SLOPE:{}]", format_canonical(s.leaky_slope))
    };
    lines.push(format!("[FAMILY:SCM] [DIM:{}]{slope}", s.dim));
    for node in &s.nodes {
        let parents = if node.parents.is_empty() {
            "none".to_string()
        } else {
            fmt_indices(&node.parents)
        };
        let coeffs = if node.coefficients.is_empty() {
            "none".to_string()
        } else {
            fmt_list(&node.coefficients)
        };
        let noise = if quantize(node.noise_std) == 1.0 {
            String::new()
        } else {
            format!(" [NOISE:{}]", format_canonical(node.noise_std))
        };
        lines.push(format!(
            "[ENTITY] [TYPE:VAR] [ID:{}] [LAYER:{}] [EQ:{}] [PARENTS:{parents}] [COEFFS:{coeffs}]{noise}",
            node.id,
            node.layer,
            node.equation.label(),
        ));
    }
    match &s.outlier {
        ScmOutlierMechanism::NoiseScale {
            high_noise,
            high_noise_prob,
            prototypes,
        } => {
            lines.push(format!(
                "[OUTLIER] [TYPE:noise_scale] [HIGH_NOISE:{}] [HIGH_NOISE_PROB:{}] [N_PROTO:{}]",
                format_canonical(*high_noise),
                format_canonical(*high_noise_prob),
                prototypes.len()
            ));
            for (p, nodes) in prototypes.iter().enumerate() {
                lines.push(format!(
                    "[ENTITY] [TYPE:OUTLIER_PROTOTYPE] [ID:{p}] [HIGH_NOISE_NODES:{}]",
                    fmt_indices(nodes)
                ));
            }
        }
        ScmOutlierMechanism::WeightMask {
            perturb_prob,
            prototypes,
        } => {
            lines.push(format!(
                "[OUTLIER] [TYPE:weight_mask] [PERTURB_PROB:{}] [N_PROTO:{}]",
                format_canonical(*perturb_prob),
                prototypes.len()
            ));
            for (p, proto) in prototypes.iter().enumerate() {
                lines.push(format!(
                    "[ENTITY] [TYPE:OUTLIER_PROTOTYPE] [ID:{p}] [FLIPPED_NODES:{}] [DROPPED_NODES:{}]",
                    fmt_indices(&proto.flipped),
                    fmt_indices(&proto.dropped)
                ));
            }
        }
    }
    lines.join("\n")
}

fn serialize_copula(c: &CopulaSpec) -> String {
    let mut lines = Vec::new();
    lines.push(format!("[FAMILY:COPULA] [DIM:{}]", c.dim));
    let chol = if c.chol.strict_lower.is_empty() {
        "none".to_string()
    } else {
        fmt_list(&c.chol.strict_lower)
    };
    lines.push(format!(
        "[ENTITY] [TYPE:COPULA_BASE] [ID:0] [COPULA_PARAM:random] [CHOL:{chol}]"
    ));
    for (j, marginal) in c.marginals.iter().enumerate() {
        let (dist, params) = match marginal {
            Marginal::Normal { mean, std } => {
                ("normal", fmt_list(&[*mean, *std]))
            }
            Marginal::StudentT { dof, loc, scale } => {
                ("studentt", fmt_list(&[*dof, *loc, *scale]))
            }
            Marginal::Beta { alpha, beta } => ("beta", fmt_list(&[*alpha, *beta])),
            Marginal::Exponential { rate } => ("exponential", fmt_list(&[*rate])),
            Marginal::Interp { lo, hi, n_grid } => (
                "interp",
                format!(
                    "lo={},hi={},u_grid={}",
                    format_canonical(*lo),
                    format_canonical(*hi),
                    n_grid
                ),
            ),
        };
        lines.push(format!(
            "[ENTITY] [TYPE:MARGINAL] [ID:{j}] [DIST:{dist}] [PARAMS:{params}]"
        ));
    }
    let (tag, prototypes, dims_field, range) = match &c.outlier {
        CopulaOutlierMechanism::Probabilistic {
            prototypes,
            strength_range,
        } => ("PROBABILISTIC", prototypes, "PERTURBED_DIMS", strength_range),
        CopulaOutlierMechanism::Dependence {
            prototypes,
            strength_range,
        } => ("DEPENDENCE", prototypes, "DISTURBED_DIMS", strength_range),
    };
    lines.push(format!(
        "[OUTLIER] [TYPE:{tag}] [N_PROTO:{}] [STRENGTH_RANGE:{}~{}]",
        prototypes.len(),
        format_canonical(range.0),
        format_canonical(range.1)
    ));
    for (p, dims) in prototypes.iter().enumerate() {
        lines.push(format!(
            "[ENTITY] [TYPE:OUTLIER_PROTOTYPE] [ID:{p}] [{dims_field}:{}]",
            fmt_indices(dims)
        ));
    }
    lines.join("\n")
}

/// Applies the canonical quantization to every continuous field that the
/// serializer emits, re-projecting invariants the same way the parser does
/// (weights renormalized onto the simplex). `spec_id` and `seed` are kept.
pub fn quantize_spec(spec: &GeneratorSpec) -> GeneratorSpec {
    let mut out = spec.clone();
    match &mut out.payload {
        SpecPayload::Gmm(g) => {
            for w in g.weights.iter_mut() {
                *w = quantize(*w);
            }
            let uniform = g.weights.windows(2).all(|w| w[0] == w[1]);
            if uniform {
                g.weights = vec![1.0 / g.n_components as f64; g.n_components];
            } else {
                let sum: f64 = g.weights.iter().sum();
                g.weights.iter_mut().for_each(|w| *w /= sum);
            }
            for m in g.means.iter_mut().flatten() {
                *m = quantize(*m);
            }
            for v in g.cov_diag.iter_mut().flatten() {
                *v = quantize(*v);
            }
            g.inflation_scale = quantize(g.inflation_scale);
        }
        SpecPayload::Scm(s) => {
            for node in s.nodes.iter_mut() {
                for c in node.coefficients.iter_mut() {
                    *c = quantize(*c);
                }
                node.noise_std = quantize(node.noise_std);
            }
            s.leaky_slope = quantize(s.leaky_slope);
            match &mut s.outlier {
                ScmOutlierMechanism::NoiseScale {
                    high_noise,
                    high_noise_prob,
                    ..
                } => {
                    *high_noise = quantize(*high_noise);
                    *high_noise_prob = quantize(*high_noise_prob);
                }
                ScmOutlierMechanism::WeightMask { perturb_prob, .. } => {
                    *perturb_prob = quantize(*perturb_prob);
                }
            }
        }
        SpecPayload::Copula(c) => {
            for v in c.chol.strict_lower.iter_mut() {
                *v = quantize(*v);
            }
            for m in c.marginals.iter_mut() {
                match m {
                    Marginal::Normal { mean, std } => {
                        *mean = quantize(*mean);
                        *std = quantize(*std);
                    }
                    Marginal::StudentT { dof, loc, scale } => {
                        *dof = quantize(*dof);
                        *loc = quantize(*loc);
                        *scale = quantize(*scale);
                    }
                    Marginal::Beta { alpha, beta } => {
                        *alpha = quantize(*alpha);
                        *beta = quantize(*beta);
                    }
                    Marginal::Exponential { rate } => {
                        *rate = quantize(*rate);
                    }
                    Marginal::Interp { lo, hi, .. } => {
                        *lo = quantize(*lo);
                        *hi = quantize(*hi);
                    }
                }
            }
            match &mut c.outlier {
                CopulaOutlierMechanism::Probabilistic { strength_range, .. }
                | CopulaOutlierMechanism::Dependence { strength_range, .. } => {
                    strength_range.0 = quantize(strength_range.0);
                    strength_range.1 = quantize(strength_range.1);
                }
            }
        }
    }
    out
}
