use crate::priors::{
    CholFactor, CopulaOutlierMechanism, CopulaSpec, EquationKind, Family, GeneratorSpec, GmmSpec,
    Marginal, ScmMaskPrototype, ScmNode, ScmOutlierMechanism, ScmSpec, SpecPayload,
    DEFAULT_LEAKY_SLOPE,
};

#[derive(Debug, Clone, thiserror::Error)]
#[error("parse error at {line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

fn err<T>(line: usize, col: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        col,
        message: message.into(),
    })
}

/// One `[NAME]` or `[NAME:payload]` field with its source position.
#[derive(Debug, Clone)]
pub(crate) struct Field {
    pub name: String,
    pub payload: Option<String>,
    pub line: usize,
    pub col: usize,
}

impl Field {
    fn require_payload(&self) -> Result<&str, ParseError> {
        match &self.payload {
            Some(p) => Ok(p),
            None => err(self.line, self.col, format!("field {} needs a payload", self.name)),
        }
    }

    fn parse_f64(&self) -> Result<f64, ParseError> {
        let p = self.require_payload()?;
        p.trim()
            .parse::<f64>()
            .map_err(|_| ParseError {
                line: self.line,
                col: self.col,
                message: format!("field {} has non-numeric payload `{p}`", self.name),
            })
    }

    fn parse_usize(&self) -> Result<usize, ParseError> {
        let p = self.require_payload()?;
        p.trim().parse::<usize>().map_err(|_| ParseError {
            line: self.line,
            col: self.col,
            message: format!("field {} has non-integer payload `{p}`", self.name),
        })
    }

    fn parse_f64_list(&self) -> Result<Vec<f64>, ParseError> {
        let p = self.require_payload()?;
        if p.trim() == "none" || p.trim().is_empty() {
            return Ok(Vec::new());
        }
        p.split(',')
            .map(|item| {
                item.trim().parse::<f64>().map_err(|_| ParseError {
                    line: self.line,
                    col: self.col,
                    message: format!("field {} has non-numeric item `{item}`", self.name),
                })
            })
            .collect()
    }

    fn parse_index_list(&self) -> Result<Vec<usize>, ParseError> {
        let p = self.require_payload()?;
        if p.trim() == "none" || p.trim().is_empty() {
            return Ok(Vec::new());
        }
        p.split(',')
            .map(|item| {
                let t = item.trim();
                // the paper's boxes write indices as floats ("1.0"); accept both
                if let Ok(i) = t.parse::<usize>() {
                    return Ok(i);
                }
                match t.parse::<f64>() {
                    Ok(f) if f >= 0.0 && f.fract() == 0.0 => Ok(f as usize),
                    _ => Err(ParseError {
                        line: self.line,
                        col: self.col,
                        message: format!("field {} has non-index item `{item}`", self.name),
                    }),
                }
            })
            .collect()
    }
}

pub(crate) fn scan_lines(text: &str) -> Result<Vec<Vec<Field>>, ParseError> {
    let mut lines = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        let mut fields = Vec::new();
        let bytes = raw.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c != '[' {
                return err(line, i + 1, format!("expected `[`, found `{c}`"));
            }
            let start = i;
            let close = raw[i..]
                .find(']')
                .map(|o| i + o)
                .ok_or(ParseError {
                    line,
                    col: i + 1,
                    message: "unterminated bracket".into(),
                })?;
            let inner = &raw[i + 1..close];
            let (name, payload) = match inner.find(':') {
                Some(k) => (&inner[..k], Some(inner[k + 1..].to_string())),
                None => (inner, None),
            };
            if name.is_empty()
                || !name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
            {
                return err(line, start + 2, format!("malformed field name `{name}`"));
            }
            fields.push(Field {
                name: name.to_string(),
                payload,
                line,
                col: start + 1,
            });
            i = close + 1;
        }
        if !fields.is_empty() {
            lines.push(fields);
        }
    }
    if lines.is_empty() {
        return err(1, 1, "empty program text");
    }
    Ok(lines)
}

fn find<'a>(fields: &'a [Field], name: &str) -> Option<&'a Field> {
    fields.iter().find(|f| f.name == name)
}

fn require<'a>(fields: &'a [Field], name: &str) -> Result<&'a Field, ParseError> {
    find(fields, name).ok_or_else(|| ParseError {
        line: fields.first().map(|f| f.line).unwrap_or(0),
        col: 1,
        message: format!("missing required field {name}"),
    })
}

/// Parses program text back into a generator spec. The text carries no
/// identity, so `spec_id` and `seed` come back as 0; run manifests record the
/// seeds needed to regenerate data.
pub fn parse(text: &str) -> Result<GeneratorSpec, ParseError> {
    let lines = scan_lines(text)?;
    let header = &lines[0];
    let family_field = require(header, "FAMILY")?;
    let family_name = family_field.require_payload()?;
    let spec = match family_name {
        "GMM" => parse_gmm(&lines),
        "SCM" => parse_scm(&lines),
        "COPULA" => parse_copula(&lines),
        other => err(
            family_field.line,
            family_field.col,
            format!("unknown family `{other}`"),
        ),
    }?;
    spec.validate().map_err(|e| ParseError {
        line: 1,
        col: 1,
        message: format!("parsed spec violates invariants: {e}"),
    })?;
    Ok(spec)
}

struct EntityLines<'a> {
    by_type: Vec<(&'a str, &'a [Field])>,
}

fn split_entities(lines: &[Vec<Field>]) -> Result<(EntityLines<'_>, Vec<&[Field]>), ParseError> {
    let mut by_type = Vec::new();
    let mut outlier_lines = Vec::new();
    for fields in lines.iter().skip(1) {
        match fields[0].name.as_str() {
            "ENTITY" => {
                let t = require(fields, "TYPE")?.require_payload()?;
                by_type.push((t, fields.as_slice()));
            }
            "OUTLIER" => outlier_lines.push(fields.as_slice()),
            other => {
                return err(
                    fields[0].line,
                    fields[0].col,
                    format!("expected ENTITY or OUTLIER line, found {other}"),
                )
            }
        }
    }
    Ok((EntityLines { by_type }, outlier_lines))
}

fn entity_id(fields: &[Field]) -> Result<usize, ParseError> {
    require(fields, "ID")?.parse_usize()
}

fn parse_gmm(lines: &[Vec<Field>]) -> Result<GeneratorSpec, ParseError> {
    let header = &lines[0];
    let dim = require(header, "DIM")?.parse_usize()?;
    let n_components = require(header, "N_COMP")?.parse_usize()?;
    let (entities, outliers) = split_entities(lines)?;

    let mut weights: Vec<Option<f64>> = vec![None; n_components];
    let mut means = vec![Vec::new(); n_components];
    let mut cov_diag = vec![Vec::new(); n_components];
    let mut prototype_entities: Vec<(usize, Vec<usize>)> = Vec::new();
    for (ty, fields) in &entities.by_type {
        match *ty {
            "COMPONENT" => {
                let id = entity_id(fields)?;
                if id >= n_components {
                    return err(fields[0].line, 1, format!("component id {id} >= N_COMP"));
                }
                if let Some(w) = find(fields, "WEIGHT") {
                    weights[id] = Some(w.parse_f64()?);
                }
                means[id] = require(fields, "MEAN")?.parse_f64_list()?;
                cov_diag[id] = require(fields, "COV_DIAG")?.parse_f64_list()?;
            }
            "OUTLIER_PROTOTYPE" => {
                let id = entity_id(fields)?;
                let dims = require(fields, "SUB_DIMS")?.parse_index_list()?;
                prototype_entities.push((id, dims));
            }
            // INF_COV is derived from COV_DIAG and the subspaces; validated
            // as grammar, ignored as content.
            "OUTLIER_COMPONENT" => {
                entity_id(fields)?;
                require(fields, "INF_COV")?.parse_f64_list()?;
            }
            other => {
                return err(fields[0].line, 1, format!("unknown GMM entity type {other}"))
            }
        }
    }

    let outlier = match outliers.as_slice() {
        [fields] => fields,
        [] => return err(1, 1, "missing required field OUTLIER"),
        _ => return err(1, 1, "multiple OUTLIER lines"),
    };
    let mech = require(outlier, "TYPE")?.require_payload()?;
    if mech != "inflated_cov" {
        return err(outlier[0].line, 1, format!("unknown GMM outlier type {mech}"));
    }
    let inflation_scale = require(outlier, "INF_SCALE")?.parse_f64()?;
    let outlier_subspaces = if let Some(sub) = find(outlier, "SUB_DIMS") {
        vec![sub.parse_index_list()?]
    } else {
        let n_proto = require(outlier, "N_PROTO")?.parse_usize()?;
        let mut protos = vec![Vec::new(); n_proto];
        for (id, dims) in prototype_entities {
            if id >= n_proto {
                return err(1, 1, format!("prototype id {id} >= N_PROTO"));
            }
            protos[id] = dims;
        }
        protos
    };

    let weights = resolve_weights(weights, n_components)?;
    Ok(GeneratorSpec {
        family: Family::Gmm,
        payload: SpecPayload::Gmm(GmmSpec {
            dim,
            n_components,
            weights,
            means,
            cov_diag,
            inflation_scale,
            outlier_subspaces,
        }),
        spec_id: 0,
        seed: 0,
    })
}

fn resolve_weights(
    weights: Vec<Option<f64>>,
    n_components: usize,
) -> Result<Vec<f64>, ParseError> {
    let provided: Vec<f64> = weights.iter().flatten().copied().collect();
    if provided.is_empty() {
        return Ok(vec![1.0 / n_components as f64; n_components]);
    }
    if provided.len() != n_components {
        return err(1, 1, "WEIGHT present on some components but not all");
    }
    let sum: f64 = provided.iter().sum();
    if sum <= 0.0 {
        return err(1, 1, "weights must have positive sum");
    }
    Ok(provided.iter().map(|w| w / sum).collect())
}

fn parse_scm(lines: &[Vec<Field>]) -> Result<GeneratorSpec, ParseError> {
    let header = &lines[0];
    let dim = require(header, "DIM")?.parse_usize()?;
    let leaky_slope = match find(header, "LEAKY_SLOPE") {
        Some(f) => f.parse_f64()?,
        None => DEFAULT_LEAKY_SLOPE,
    };
    let (entities, outliers) = split_entities(lines)?;

    let mut nodes: Vec<Option<ScmNode>> = (0..dim).map(|_| None).collect();
    let mut noise_protos: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut mask_protos: Vec<(usize, ScmMaskPrototype)> = Vec::new();
    for (ty, fields) in &entities.by_type {
        match *ty {
            "VAR" => {
                let id = entity_id(fields)?;
                if id >= dim {
                    return err(fields[0].line, 1, format!("var id {id} >= DIM"));
                }
                let eq_field = require(fields, "EQ")?;
                let equation = match eq_field.require_payload()? {
                    "tanh" => EquationKind::Tanh,
                    "leaky_relu" => EquationKind::LeakyRelu,
                    other => {
                        return err(
                            eq_field.line,
                            eq_field.col,
                            format!("unknown equation kind `{other}`"),
                        )
                    }
                };
                let noise_std = match find(fields, "NOISE") {
                    Some(f) => f.parse_f64()?,
                    None => 1.0,
                };
                nodes[id] = Some(ScmNode {
                    id,
                    layer: require(fields, "LAYER")?.parse_usize()?,
                    equation,
                    parents: require(fields, "PARENTS")?.parse_index_list()?,
                    coefficients: require(fields, "COEFFS")?.parse_f64_list()?,
                    noise_std,
                });
            }
            "OUTLIER_PROTOTYPE" => {
                let id = entity_id(fields)?;
                if let Some(f) = find(fields, "HIGH_NOISE_NODES") {
                    noise_protos.push((id, f.parse_index_list()?));
                } else {
                    let flipped = require(fields, "FLIPPED_NODES")?.parse_index_list()?;
                    let dropped = require(fields, "DROPPED_NODES")?.parse_index_list()?;
                    mask_protos.push((id, ScmMaskPrototype { flipped, dropped }));
                }
            }
            other => {
                return err(fields[0].line, 1, format!("unknown SCM entity type {other}"))
            }
        }
    }
    let nodes: Vec<ScmNode> = nodes
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            n.ok_or(ParseError {
                line: 1,
                col: 1,
                message: format!("missing VAR entity for node {i}"),
            })
        })
        .collect::<Result<_, _>>()?;

    let outlier_fields = match outliers.as_slice() {
        [fields] => fields,
        [] => return err(1, 1, "missing required field OUTLIER"),
        _ => return err(1, 1, "multiple OUTLIER lines"),
    };
    let mech = require(outlier_fields, "TYPE")?.require_payload()?;
    let n_proto = require(outlier_fields, "N_PROTO")?.parse_usize()?;
    let outlier = match mech {
        "noise_scale" => {
            let mut prototypes = vec![Vec::new(); n_proto];
            for (id, nodes) in noise_protos {
                if id >= n_proto {
                    return err(1, 1, format!("prototype id {id} >= N_PROTO"));
                }
                prototypes[id] = nodes;
            }
            ScmOutlierMechanism::NoiseScale {
                high_noise: require(outlier_fields, "HIGH_NOISE")?.parse_f64()?,
                high_noise_prob: require(outlier_fields, "HIGH_NOISE_PROB")?.parse_f64()?,
                prototypes,
            }
        }
        "weight_mask" => {
            let mut prototypes = vec![
                ScmMaskPrototype {
                    flipped: Vec::new(),
                    dropped: Vec::new()
                };
                n_proto
            ];
            for (id, proto) in mask_protos {
                if id >= n_proto {
                    return err(1, 1, format!("prototype id {id} >= N_PROTO"));
                }
                prototypes[id] = proto;
            }
            ScmOutlierMechanism::WeightMask {
                perturb_prob: require(outlier_fields, "PERTURB_PROB")?.parse_f64()?,
                prototypes,
            }
        }
        other => {
            return err(
                outlier_fields[0].line,
                1,
                format!("unknown SCM outlier type {other}"),
            )
        }
    };
    let family = match &outlier {
        ScmOutlierMechanism::NoiseScale { .. } => Family::ScmMeasurement,
        ScmOutlierMechanism::WeightMask { .. } => Family::ScmStructural,
    };
    Ok(GeneratorSpec {
        family,
        payload: SpecPayload::Scm(ScmSpec {
            dim,
            nodes,
            outlier,
            leaky_slope,
        }),
        spec_id: 0,
        seed: 0,
    })
}

fn parse_copula(lines: &[Vec<Field>]) -> Result<GeneratorSpec, ParseError> {
    let header = &lines[0];
    let dim = require(header, "DIM")?.parse_usize()?;
    let (entities, outliers) = split_entities(lines)?;

    let mut chol: Option<CholFactor> = None;
    let mut marginals: Vec<Option<Marginal>> = (0..dim).map(|_| None).collect();
    let mut proto_entities: Vec<(usize, Vec<usize>)> = Vec::new();
    for (ty, fields) in &entities.by_type {
        match *ty {
            "COPULA_BASE" => {
                let strict_lower = require(fields, "CHOL")?.parse_f64_list()?;
                chol = Some(CholFactor { dim, strict_lower });
            }
            "MARGINAL" => {
                let id = entity_id(fields)?;
                if id >= dim {
                    return err(fields[0].line, 1, format!("marginal id {id} >= DIM"));
                }
                let dist_field = require(fields, "DIST")?;
                let params_field = require(fields, "PARAMS")?;
                let marginal = match dist_field.require_payload()? {
                    "normal" => {
                        let p = expect_params(params_field, 2)?;
                        Marginal::Normal { mean: p[0], std: p[1] }
                    }
                    "studentt" => {
                        let p = expect_params(params_field, 3)?;
                        Marginal::StudentT {
                            dof: p[0],
                            loc: p[1],
                            scale: p[2],
                        }
                    }
                    "beta" => {
                        let p = expect_params(params_field, 2)?;
                        Marginal::Beta { alpha: p[0], beta: p[1] }
                    }
                    "exponential" => {
                        let p = expect_params(params_field, 1)?;
                        Marginal::Exponential { rate: p[0] }
                    }
                    "interp" => parse_interp(params_field)?,
                    other => {
                        return err(
                            dist_field.line,
                            dist_field.col,
                            format!("unknown marginal distribution `{other}`"),
                        )
                    }
                };
                marginals[id] = Some(marginal);
            }
            "OUTLIER_PROTOTYPE" => {
                let id = entity_id(fields)?;
                let dims = if let Some(f) = find(fields, "PERTURBED_DIMS") {
                    f.parse_index_list()?
                } else {
                    require(fields, "DISTURBED_DIMS")?.parse_index_list()?
                };
                proto_entities.push((id, dims));
            }
            other => {
                return err(fields[0].line, 1, format!("unknown copula entity type {other}"))
            }
        }
    }

    let outlier_fields = match outliers.as_slice() {
        [fields] => fields,
        [] => return err(1, 1, "missing required field OUTLIER"),
        _ => return err(1, 1, "multiple OUTLIER lines"),
    };
    let mech = require(outlier_fields, "TYPE")?.require_payload()?;
    let n_proto = require(outlier_fields, "N_PROTO")?.parse_usize()?;
    let range_field = require(outlier_fields, "STRENGTH_RANGE")?;
    let range_text = range_field.require_payload()?;
    let parts: Vec<&str> = range_text.split('~').collect();
    if parts.len() != 2 {
        return err(
            range_field.line,
            range_field.col,
            "STRENGTH_RANGE must be lo~hi",
        );
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| ParseError {
        line: range_field.line,
        col: range_field.col,
        message: "non-numeric strength lo".into(),
    })?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| ParseError {
        line: range_field.line,
        col: range_field.col,
        message: "non-numeric strength hi".into(),
    })?;

    let mut prototypes = vec![Vec::new(); n_proto];
    for (id, dims) in proto_entities {
        if id >= n_proto {
            return err(1, 1, format!("prototype id {id} >= N_PROTO"));
        }
        prototypes[id] = dims;
    }
    let (family, outlier) = match mech {
        "PROBABILISTIC" => (
            Family::CopulaProbabilistic,
            CopulaOutlierMechanism::Probabilistic {
                prototypes,
                strength_range: (lo, hi),
            },
        ),
        "DEPENDENCE" => (
            Family::CopulaDependence,
            CopulaOutlierMechanism::Dependence {
                prototypes,
                strength_range: (lo, hi),
            },
        ),
        other => {
            return err(
                outlier_fields[0].line,
                1,
                format!("unknown copula outlier type {other}"),
            )
        }
    };

    let chol = chol.ok_or(ParseError {
        line: 1,
        col: 1,
        message: "missing COPULA_BASE entity".into(),
    })?;
    let marginals: Vec<Marginal> = marginals
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            m.ok_or(ParseError {
                line: 1,
                col: 1,
                message: format!("missing MARGINAL entity for dim {i}"),
            })
        })
        .collect::<Result<_, _>>()?;

    Ok(GeneratorSpec {
        family,
        payload: SpecPayload::Copula(CopulaSpec {
            dim,
            chol,
            marginals,
            outlier,
        }),
        spec_id: 0,
        seed: 0,
    })
}

fn expect_params(field: &Field, n: usize) -> Result<Vec<f64>, ParseError> {
    let p = field.parse_f64_list()?;
    if p.len() != n {
        return err(
            field.line,
            field.col,
            format!("PARAMS expects {n} values, got {}", p.len()),
        );
    }
    Ok(p)
}

fn parse_interp(field: &Field) -> Result<Marginal, ParseError> {
    let payload = field.require_payload()?;
    let mut lo = None;
    let mut hi = None;
    let mut n_grid = None;
    for item in payload.split(',') {
        let Some((key, value)) = item.split_once('=') else {
            return err(
                field.line,
                field.col,
                format!("interp PARAMS item `{item}` is not key=value"),
            );
        };
        match key.trim() {
            "lo" => lo = value.trim().parse::<f64>().ok(),
            "hi" => hi = value.trim().parse::<f64>().ok(),
            "u_grid" => n_grid = value.trim().parse::<usize>().ok(),
            other => {
                return err(
                    field.line,
                    field.col,
                    format!("unknown interp parameter `{other}`"),
                )
            }
        }
    }
    match (lo, hi, n_grid) {
        (Some(lo), Some(hi), Some(n_grid)) => Ok(Marginal::Interp { lo, hi, n_grid }),
        _ => err(
            field.line,
            field.col,
            "interp PARAMS needs lo=, hi=, u_grid=",
        ),
    }
}
