use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::tensor_engine::{GraphCtx, Matrix, Var};

use super::tokenize::{TokenKind, TypedToken};
use super::vocab::Vocabulary;

/// Sizing for the compositional token embedder. Entity-id and dim tables are
/// capped; anything beyond the cap lands in a shared overflow bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub d_model: usize,
    pub value_hidden: usize,
    pub max_entity_ids: usize,
    pub max_dims: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            d_model: 256,
            value_hidden: 64,
            max_entity_ids: 64,
            max_dims: 128,
        }
    }
}

/// Embeds typed tokens as a sum of attribute embeddings: name + family +
/// entity-type + entity-id + dim, plus a small MLP over the per-field
/// normalized value. Absent attributes contribute exactly zero. Output has
/// one row per token.
///
/// `values_override`, when given, replaces the (len x 1) normalized-value
/// column with a graph variable so callers can differentiate through values.
pub fn embed_tokens(
    ctx: &mut GraphCtx,
    tokens: &[TypedToken],
    vocab: &Vocabulary,
    cfg: &EmbedConfig,
    values_override: Option<Var>,
) -> Var {
    let len = tokens.len();
    let d = cfg.d_model;

    let name_table = ctx.param("embed.name", vocab.name_count(), d, d);
    let family_table = ctx.param("embed.family", vocab.family_count(), d, d);
    let entity_type_table = ctx.param("embed.entity_type", vocab.entity_type_count(), d, d);
    let entity_id_table = ctx.param("embed.entity_id", cfg.max_entity_ids + 1, d, d);
    let dim_table = ctx.param("embed.dim", cfg.max_dims + 1, d, d);

    let name_idx: Vec<usize> = tokens.iter().map(|t| vocab.name_index(&t.name)).collect();
    let family_idx: Vec<usize> = tokens
        .iter()
        .map(|t| vocab.family_index(&t.family))
        .collect();
    let entity_type_idx: Vec<usize> = tokens
        .iter()
        .map(|t| {
            t.entity_type
                .as_ref()
                .map(|et| vocab.entity_type_index(et))
                .unwrap_or(0)
        })
        .collect();
    let entity_id_idx: Vec<usize> = tokens
        .iter()
        .map(|t| t.entity_id.map(|i| i.min(cfg.max_entity_ids)).unwrap_or(0))
        .collect();
    let dim_idx: Vec<usize> = tokens
        .iter()
        .map(|t| t.dim.map(|i| i.min(cfg.max_dims)).unwrap_or(0))
        .collect();

    let mask_for = |present: Vec<bool>| -> Matrix {
        Array2::from_shape_fn((len, d), |(i, _)| if present[i] { 1.0 } else { 0.0 })
    };

    let names = ctx.tape.gather_rows(name_table, &name_idx);
    let families = ctx.tape.gather_rows(family_table, &family_idx);
    let mut sum = ctx.tape.add(names, families);

    let et_present: Vec<bool> = tokens.iter().map(|t| t.entity_type.is_some()).collect();
    if et_present.iter().any(|p| *p) {
        let gathered = ctx.tape.gather_rows(entity_type_table, &entity_type_idx);
        let masked = ctx.tape.mul_const_mask(gathered, &mask_for(et_present));
        sum = ctx.tape.add(sum, masked);
    }
    let eid_present: Vec<bool> = tokens.iter().map(|t| t.entity_id.is_some()).collect();
    if eid_present.iter().any(|p| *p) {
        let gathered = ctx.tape.gather_rows(entity_id_table, &entity_id_idx);
        let masked = ctx.tape.mul_const_mask(gathered, &mask_for(eid_present));
        sum = ctx.tape.add(sum, masked);
    }
    let dim_present: Vec<bool> = tokens.iter().map(|t| t.dim.is_some()).collect();
    if dim_present.iter().any(|p| *p) {
        let gathered = ctx.tape.gather_rows(dim_table, &dim_idx);
        let masked = ctx.tape.mul_const_mask(gathered, &mask_for(dim_present));
        sum = ctx.tape.add(sum, masked);
    }

    let value_present: Vec<bool> = tokens.iter().map(|t| t.value.is_some()).collect();
    if value_present.iter().any(|p| *p) {
        let values = match values_override {
            Some(v) => v,
            None => {
                let column = Array2::from_shape_fn((len, 1), |(i, _)| {
                    tokens[i]
                        .value
                        .map(|v| vocab.normalize_value(&tokens[i].name, v))
                        .unwrap_or(0.0)
                });
                ctx.tape.constant(column)
            }
        };
        let w1 = ctx.param("embed.value.w1", 1, cfg.value_hidden, 1);
        let b1 = ctx.param_const("embed.value.b1", 1, cfg.value_hidden, 0.0);
        let w2 = ctx.param("embed.value.w2", cfg.value_hidden, d, cfg.value_hidden);
        let b2 = ctx.param_const("embed.value.b2", 1, d, 0.0);
        let h = ctx.tape.matmul(values, w1);
        let h = ctx.tape.add_row_broadcast(h, b1);
        let h = ctx.tape.gelu(h);
        let v = ctx.tape.matmul(h, w2);
        let v = ctx.tape.add_row_broadcast(v, b2);
        let masked = ctx.tape.mul_const_mask(v, &mask_for(value_present));
        sum = ctx.tape.add(sum, masked);
    }
    sum
}

/// Forward-only embedding of a token sequence, returning the matrix.
pub fn embed_tokens_matrix(
    store: &mut crate::tensor_engine::ParamStore,
    tokens: &[TypedToken],
    vocab: &Vocabulary,
    cfg: &EmbedConfig,
) -> Matrix {
    let mut ctx = GraphCtx::new_frozen(store);
    let out = embed_tokens(&mut ctx, tokens, vocab, cfg, None);
    ctx.tape.value(out).clone()
}

/// Token count and embedding row count always agree.
pub fn embedding_rows(tokens: &[TypedToken]) -> usize {
    tokens.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{sample_spec, Family, SamplingRanges};
    use crate::program_dsl::{serialize, tokenize};
    use crate::tensor_engine::{grad_check, ParamStore};

    fn small_cfg() -> EmbedConfig {
        EmbedConfig {
            d_model: 16,
            value_hidden: 8,
            max_entity_ids: 8,
            max_dims: 16,
        }
    }

    fn vocab() -> Vocabulary {
        let ranges = SamplingRanges::desk(6);
        let samples: Vec<_> = Family::ALL
            .iter()
            .flat_map(|f| (0..4).map(|i| sample_spec(*f, &ranges, i, 13).unwrap()))
            .collect();
        Vocabulary::bootstrap(&samples).unwrap()
    }

    #[test]
    fn one_embedding_row_per_token() {
        let vocab = vocab();
        let spec = sample_spec(Family::Gmm, &SamplingRanges::desk(6), 40, 13).unwrap();
        let tokens = tokenize(&serialize(&spec)).unwrap();
        let mut store = ParamStore::new(3);
        let m = embed_tokens_matrix(&mut store, &tokens, &vocab, &small_cfg());
        assert_eq!(m.nrows(), tokens.len());
        assert_eq!(m.ncols(), 16);
    }

    #[test]
    fn symbol_embedding_ignores_value_encoder() {
        // Zeroing the value MLP weights must not change symbol rows.
        let vocab = vocab();
        let spec = sample_spec(Family::Gmm, &SamplingRanges::desk(6), 41, 13).unwrap();
        let tokens = tokenize(&serialize(&spec)).unwrap();
        let cfg = small_cfg();
        let mut store = ParamStore::new(5);
        let before = embed_tokens_matrix(&mut store, &tokens, &vocab, &cfg);
        store.insert("embed.value.w2", Matrix::zeros((cfg.value_hidden, cfg.d_model)));
        let after = embed_tokens_matrix(&mut store, &tokens, &vocab, &cfg);
        for (i, t) in tokens.iter().enumerate() {
            if t.value.is_none() {
                assert_eq!(before.row(i), after.row(i), "token {i} ({})", t.name);
            }
        }
        // some valued token must have changed, otherwise the test is vacuous
        assert!(tokens
            .iter()
            .enumerate()
            .any(|(i, t)| t.value.is_some() && before.row(i) != after.row(i)));
    }

    #[test]
    fn value_delta_is_the_only_difference() {
        let vocab = vocab();
        let mut a = TypedToken {
            kind: TokenKind::VectorEntry,
            name: "MEAN".into(),
            value: Some(0.5),
            dim: Some(2),
            family: "GMM".into(),
            block: Some("ENTITY".into()),
            entity_type: Some("COMPONENT".into()),
            entity_id: Some(1),
        };
        let b = TypedToken {
            value: Some(-1.25),
            ..a.clone()
        };
        a.value = Some(0.5);
        let cfg = small_cfg();
        let mut store = ParamStore::new(7);
        let m = embed_tokens_matrix(&mut store, &[a.clone(), b.clone()], &vocab, &cfg);
        // embedding difference equals the value-path difference; check by
        // moving to a third token pair with the same values but another dim:
        // the delta must be identical because everything else cancels.
        let mut a2 = a.clone();
        a2.dim = Some(3);
        let mut b2 = b.clone();
        b2.dim = Some(3);
        let m2 = embed_tokens_matrix(&mut store, &[a2, b2], &vocab, &cfg);
        let d1 = &m.row(0) - &m.row(1);
        let d2 = &m2.row(0) - &m2.row(1);
        for (x, y) in d1.iter().zip(d2.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        let vocab = vocab();
        let spec = sample_spec(Family::Gmm, &SamplingRanges::desk(4), 42, 13).unwrap();
        let tokens: Vec<TypedToken> = tokenize(&serialize(&spec))
            .unwrap()
            .into_iter()
            .take(24)
            .collect();
        let cfg = small_cfg();
        let mut store = ParamStore::new(11);
        // materialize embedding params once
        embed_tokens_matrix(&mut store, &tokens, &vocab, &cfg);
        let store = std::cell::RefCell::new(store);
        let values = Matrix::from_shape_fn((tokens.len(), 1), |(i, _)| {
            tokens[i].value.unwrap_or(0.0) * 0.1
        });
        let tokens2 = tokens.clone();
        let vocab2 = vocab.clone();
        let report = grad_check(
            move |tape, vars| {
                let mut s = store.borrow_mut();
                let mut ctx = GraphCtx::new_frozen(&mut s);
                std::mem::swap(&mut ctx.tape, tape);
                let out = embed_tokens(&mut ctx, &tokens2, &vocab2, &cfg, Some(vars[0]));
                std::mem::swap(&mut ctx.tape, tape);
                tape.mean_all(out)
            },
            &[values],
            1e-4,
        );
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }
}
