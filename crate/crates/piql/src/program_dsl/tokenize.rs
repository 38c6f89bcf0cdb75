use serde::{Deserialize, Serialize};

use super::parse::{scan_lines, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Symbol,
    Scalar,
    VectorEntry,
    IndexEntry,
}

/// A typed program token: the unit the encoder embeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedToken {
    pub kind: TokenKind,
    /// Symbol name, or field name for valued tokens.
    pub name: String,
    pub value: Option<f64>,
    pub dim: Option<usize>,
    pub family: String,
    pub block: Option<String>,
    pub entity_type: Option<String>,
    pub entity_id: Option<usize>,
}

const SCALAR_FIELDS: &[&str] = &[
    "DIM",
    "N_COMP",
    "ID",
    "LAYER",
    "WEIGHT",
    "INF_SCALE",
    "N_PROTO",
    "HIGH_NOISE",
    "HIGH_NOISE_PROB",
    "PERTURB_PROB",
    "NOISE",
    "LEAKY_SLOPE",
];
const VECTOR_FIELDS: &[&str] = &[
    "MEAN",
    "COV_DIAG",
    "INF_COV",
    "COEFFS",
    "CHOL",
    "PARAMS",
    "STRENGTH_RANGE",
];
const INDEX_FIELDS: &[&str] = &[
    "SUB_DIMS",
    "PARENTS",
    "HIGH_NOISE_NODES",
    "FLIPPED_NODES",
    "DROPPED_NODES",
    "PERTURBED_DIMS",
    "DISTURBED_DIMS",
];
const SYMBOL_VALUED: &[&str] = &["FAMILY", "TYPE", "EQ", "DIST", "COPULA_PARAM"];

/// Tokenizes grammar-valid program text into typed tokens. Categorical items
/// become symbol tokens, scalar fields scalar tokens, vector fields one
/// vector entry per dimension, and index-set fields index entries; every
/// token is annotated with its family/block/entity context.
pub fn tokenize(text: &str) -> Result<Vec<TypedToken>, ParseError> {
    let lines = scan_lines(text)?;
    let family = lines[0]
        .iter()
        .find(|f| f.name == "FAMILY")
        .and_then(|f| f.payload.clone())
        .ok_or(ParseError {
            line: 1,
            col: 1,
            message: "missing required field FAMILY".into(),
        })?;

    let mut tokens = Vec::new();
    for fields in &lines {
        let mut block: Option<String> = None;
        let mut entity_type: Option<String> = None;
        let mut entity_id: Option<usize> = None;
        match fields[0].name.as_str() {
            "ENTITY" => block = Some("ENTITY".to_string()),
            "OUTLIER" => block = Some("OUTLIER".to_string()),
            _ => {}
        }
        for field in fields {
            let symbol = |name: &str, tokens: &mut Vec<TypedToken>| {
                tokens.push(TypedToken {
                    kind: TokenKind::Symbol,
                    name: name.to_string(),
                    value: None,
                    dim: None,
                    family: family.clone(),
                    block: block.clone(),
                    entity_type: entity_type.clone(),
                    entity_id,
                });
            };
            let name = field.name.as_str();
            symbol(name, &mut tokens);
            let Some(payload) = &field.payload else {
                continue;
            };
            if SYMBOL_VALUED.contains(&name) {
                symbol(payload, &mut tokens);
                if name == "TYPE" && block.as_deref() == Some("ENTITY") {
                    entity_type = Some(payload.clone());
                }
                continue;
            }
            if SCALAR_FIELDS.contains(&name) {
                let value: f64 = payload.trim().parse().map_err(|_| ParseError {
                    line: field.line,
                    col: field.col,
                    message: format!("field {name} has non-numeric payload `{payload}`"),
                })?;
                tokens.push(TypedToken {
                    kind: TokenKind::Scalar,
                    name: name.to_string(),
                    value: Some(value),
                    dim: None,
                    family: family.clone(),
                    block: block.clone(),
                    entity_type: entity_type.clone(),
                    entity_id,
                });
                if name == "ID" {
                    entity_id = Some(value as usize);
                    // the ID token itself describes its entity
                    tokens.last_mut().unwrap().entity_id = entity_id;
                }
                continue;
            }
            if VECTOR_FIELDS.contains(&name) {
                let trimmed = payload.trim();
                if trimmed == "none" || trimmed.is_empty() {
                    symbol("none", &mut tokens);
                    continue;
                }
                if name == "PARAMS" && trimmed.contains('=') {
                    // interp parameters serialize as key=value items
                    for item in trimmed.split(',') {
                        let (key, value) = item.split_once('=').ok_or(ParseError {
                            line: field.line,
                            col: field.col,
                            message: format!("PARAMS item `{item}` is not key=value"),
                        })?;
                        let v: f64 = value.trim().parse().map_err(|_| ParseError {
                            line: field.line,
                            col: field.col,
                            message: format!("PARAMS item `{item}` is not numeric"),
                        })?;
                        tokens.push(TypedToken {
                            kind: TokenKind::Scalar,
                            name: key.trim().to_string(),
                            value: Some(v),
                            dim: None,
                            family: family.clone(),
                            block: block.clone(),
                            entity_type: entity_type.clone(),
                            entity_id,
                        });
                    }
                    continue;
                }
                let raw = if name == "STRENGTH_RANGE" {
                    trimmed.split('~').collect::<Vec<_>>()
                } else {
                    trimmed.split(',').collect::<Vec<_>>()
                };
                for (i, item) in raw.iter().enumerate() {
                    let v: f64 = item.trim().parse().map_err(|_| ParseError {
                        line: field.line,
                        col: field.col,
                        message: format!("field {name} item `{item}` is not numeric"),
                    })?;
                    tokens.push(TypedToken {
                        kind: TokenKind::VectorEntry,
                        name: name.to_string(),
                        value: Some(v),
                        dim: Some(i),
                        family: family.clone(),
                        block: block.clone(),
                        entity_type: entity_type.clone(),
                        entity_id,
                    });
                }
                continue;
            }
            if INDEX_FIELDS.contains(&name) {
                let trimmed = payload.trim();
                if trimmed == "none" {
                    symbol("none", &mut tokens);
                    continue;
                }
                if trimmed.is_empty() {
                    continue;
                }
                for item in trimmed.split(',') {
                    let idx: usize = item
                        .trim()
                        .parse::<usize>()
                        .or_else(|_| {
                            item.trim()
                                .parse::<f64>()
                                .map(|f| f as usize)
                        })
                        .map_err(|_| ParseError {
                            line: field.line,
                            col: field.col,
                            message: format!("field {name} item `{item}` is not an index"),
                        })?;
                    tokens.push(TypedToken {
                        kind: TokenKind::IndexEntry,
                        name: name.to_string(),
                        value: None,
                        dim: Some(idx),
                        family: family.clone(),
                        block: block.clone(),
                        entity_type: entity_type.clone(),
                        entity_id,
                    });
                }
                continue;
            }
            return Err(ParseError {
                line: field.line,
                col: field.col,
                message: format!("unknown field `{name}`"),
            });
        }
    }
    Ok(tokens)
}
