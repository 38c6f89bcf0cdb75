//! The generator-program DSL: serialization to bracketed program text,
//! parsing, typed tokenization, vocabulary bootstrap, compositional token
//! embedding, and the structure-preserving perturbation used to build
//! contrastive pairs.

mod embed;
pub mod number;
mod parse;
mod perturb;
mod serialize;
mod tokenize;
mod vocab;

pub use embed::{embed_tokens, embed_tokens_matrix, embedding_rows, EmbedConfig};
pub use parse::{parse, ParseError};
pub use perturb::perturb;
pub use serialize::{quantize_spec, serialize};
pub use tokenize::{tokenize, TokenKind, TypedToken};
pub use vocab::{Vocabulary, VocabError, PAD_INDEX, UNK_INDEX};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{sample_spec, Family, GeneratorSpec, SamplingRanges};

    fn strip_identity(mut spec: GeneratorSpec) -> GeneratorSpec {
        spec.spec_id = 0;
        spec.seed = 0;
        spec
    }

    #[test]
    fn serialize_is_deterministic() {
        let spec = sample_spec(Family::Gmm, &SamplingRanges::desk(6), 5, 19).unwrap();
        assert_eq!(serialize(&spec), serialize(&spec));
    }

    #[test]
    fn gmm_header_layout() {
        let ranges = SamplingRanges {
            dim: (5, 5),
            gmm_components: (3, 3),
            ..SamplingRanges::default()
        };
        let spec = sample_spec(Family::Gmm, &ranges, 0, 2).unwrap();
        let text = serialize(&spec);
        assert!(text.starts_with("[FAMILY:GMM] [DIM:5] [N_COMP:3]"));
    }

    #[test]
    fn scm_measurement_has_noise_scale_outlier() {
        let spec = sample_spec(Family::ScmMeasurement, &SamplingRanges::desk(6), 1, 2).unwrap();
        let text = serialize(&spec);
        assert!(text.contains("[OUTLIER] [TYPE:noise_scale]"), "{text}");
    }

    #[test]
    fn round_trip_equals_quantized_spec_for_all_families() {
        let ranges = SamplingRanges::desk(10);
        for family in Family::ALL {
            for id in 0..100 {
                let spec = sample_spec(family, &ranges, id, 7).unwrap();
                let text = serialize(&spec);
                let parsed = parse(&text).unwrap_or_else(|e| panic!("{family:?} #{id}: {e}\n{text}"));
                let expect = strip_identity(quantize_spec(&spec));
                assert_eq!(parsed, expect, "family {family:?} id {id}\n{text}");
            }
        }
    }

    #[test]
    fn unknown_family_is_rejected() {
        let err = parse("[FAMILY:XYZ] [DIM:3]").unwrap_err();
        assert!(err.to_string().contains("unknown family"), "{err}");
    }

    #[test]
    fn empty_input_is_a_parse_error() {
        assert!(parse("").is_err());
        assert!(parse("   \n\n").is_err());
    }

    #[test]
    fn malformed_bracket_reports_position() {
        let err = parse("[FAMILY:GMM] [DIM:3\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.to_string().contains("unterminated"));
    }

    #[test]
    fn tokenizer_embedder_alignment_and_count_stability() {
        let ranges = SamplingRanges::desk(8);
        let spec = sample_spec(Family::CopulaDependence, &ranges, 3, 11).unwrap();
        let text = serialize(&spec);
        let a = tokenize(&text).unwrap().len();
        let b = tokenize(&text).unwrap().len();
        assert_eq!(a, b);
    }

    #[test]
    fn vocab_unknown_rate_is_zero_on_bootstrapped_ranges() {
        let ranges = SamplingRanges::desk(12);
        let samples: Vec<_> = Family::ALL
            .iter()
            .flat_map(|f| (0..10).map(|i| sample_spec(*f, &ranges, i, 3).unwrap()))
            .collect();
        let vocab = Vocabulary::bootstrap(&samples).unwrap();
        for family in Family::ALL {
            for id in 100..150 {
                let spec = sample_spec(family, &ranges, id, 99).unwrap();
                let tokens = tokenize(&serialize(&spec)).unwrap();
                for token in &tokens {
                    assert!(vocab.is_known(&token), "unknown token {token:?}");
                }
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn any_sampled_spec_round_trips(
            family_idx in 0usize..5,
            id in 0u64..500,
            seed in 0u64..100,
        ) {
            let ranges = SamplingRanges::desk(16);
            let family = Family::ALL[family_idx];
            let spec = sample_spec(family, &ranges, id, seed).unwrap();
            let parsed = parse(&serialize(&spec)).unwrap();
            proptest::prop_assert_eq!(parsed, strip_identity(quantize_spec(&spec)));
        }
    }
}
