//! Privileged-information pretraining for tabular foundation models at desk
//! scale.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`priors`] — synthetic data-generating processes (GMM, SCM, Copula) with
//!   per-family outlier mechanisms and seeded sampling.
//! - [`pi_construction`] — bronze/silver/gold privileged-information blocks
//!   (meta-features and oracle generator latents).
//! - [`program_dsl`] — serialization of generator specs into a bracketed
//!   program text, the parser, the typed tokenizer, vocabulary bootstrap, and
//!   compositional token embeddings.
//! - [`tensor_engine`] — dense 64-bit tensors with reverse-mode
//!   differentiation, transformer blocks, AdamW, schedules, and checkpoints.
//! - [`program_encoder`] — the contrastively trained prefix-token encoder for
//!   generator programs.
//! - [`piql_tfm`] — the privileged tabular foundation model: sequence
//!   assembly, teacher-student transfer with representation annealing, the
//!   training variants, and inference.
//! - [`eval_harness`] — AUROC/AUPRC, paired permutation tests, linear probes,
//!   test-suite generation, and CSV ingestion.
//! - [`cli`] — configuration types and the command implementations behind the
//!   `piql` binary.

pub mod cli;
pub mod eval_harness;
pub mod pi_construction;
pub mod piql_tfm;
pub mod priors;
pub mod program_dsl;
pub mod program_encoder;
pub mod tensor_engine;
