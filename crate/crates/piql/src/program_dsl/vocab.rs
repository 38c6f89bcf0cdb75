use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::priors::GeneratorSpec;

use super::serialize::serialize;
use super::tokenize::{tokenize, TokenKind, TypedToken};

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary bootstrap needs at least one sample spec")]
    EmptySampleList,
    #[error("vocabulary io error: {0}")]
    Io(String),
    #[error("corrupt vocabulary manifest: {0}")]
    Corrupt(String),
}

/// Symbol tables for program tokens plus per-field normalization statistics.
/// Indices are dense and stable across save/load; PAD is 0 and UNK is 1 in
/// every index space.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Combined symbol+field name space.
    names: BTreeMap<String, usize>,
    symbol_names: BTreeSet<String>,
    field_names: BTreeSet<String>,
    families: BTreeMap<String, usize>,
    entity_types: BTreeMap<String, usize>,
    /// field -> (location, scale) for value normalization.
    value_stats: BTreeMap<String, (f64, f64)>,
}

impl Vocabulary {
    /// Samples must cover every family that will be trained on; the
    /// vocabulary collects every symbol, field, family and entity type seen,
    /// plus per-field value statistics.
    pub fn bootstrap(samples: &[GeneratorSpec]) -> Result<Self, VocabError> {
        if samples.is_empty() {
            return Err(VocabError::EmptySampleList);
        }
        let mut symbol_names = BTreeSet::new();
        let mut field_names = BTreeSet::new();
        let mut family_names = BTreeSet::new();
        let mut entity_type_names = BTreeSet::new();
        let mut sums: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new(); // n, sum, sumsq
        for spec in samples {
            let text = serialize(spec);
            let tokens = tokenize(&text).map_err(|e| VocabError::Corrupt(e.to_string()))?;
            for token in tokens {
                family_names.insert(token.family.clone());
                if let Some(et) = &token.entity_type {
                    entity_type_names.insert(et.clone());
                }
                match token.kind {
                    TokenKind::Symbol => {
                        symbol_names.insert(token.name.clone());
                    }
                    _ => {
                        field_names.insert(token.name.clone());
                    }
                }
                if let Some(v) = token.value {
                    let e = sums.entry(token.name.clone()).or_insert((0.0, 0.0, 0.0));
                    e.0 += 1.0;
                    e.1 += v;
                    e.2 += v * v;
                }
            }
        }
        let mut names = BTreeMap::new();
        let mut next = UNK_INDEX + 1;
        for name in symbol_names.iter().chain(field_names.iter()) {
            names.entry(name.clone()).or_insert_with(|| {
                let i = next;
                next += 1;
                i
            });
        }
        let mut families = BTreeMap::new();
        let mut next = UNK_INDEX + 1;
        for name in &family_names {
            families.insert(name.clone(), next);
            next += 1;
        }
        let mut entity_types = BTreeMap::new();
        let mut next = UNK_INDEX + 1;
        for name in &entity_type_names {
            entity_types.insert(name.clone(), next);
            next += 1;
        }
        let value_stats = sums
            .into_iter()
            .map(|(field, (n, sum, sumsq))| {
                let mean = sum / n;
                let var = (sumsq / n - mean * mean).max(0.0);
                (field, (mean, var.sqrt().max(1e-6)))
            })
            .collect();
        Ok(Vocabulary {
            names,
            symbol_names,
            field_names,
            families,
            entity_types,
            value_stats,
        })
    }

    pub fn name_count(&self) -> usize {
        self.names.len() + 2
    }

    pub fn family_count(&self) -> usize {
        self.families.len() + 2
    }

    pub fn entity_type_count(&self) -> usize {
        self.entity_types.len() + 2
    }

    /// Index of a token's name in the combined space; unknown names map to
    /// UNK rather than failing.
    pub fn name_index(&self, name: &str) -> usize {
        self.names.get(name).copied().unwrap_or(UNK_INDEX)
    }

    pub fn family_index(&self, family: &str) -> usize {
        self.families.get(family).copied().unwrap_or(UNK_INDEX)
    }

    pub fn entity_type_index(&self, entity_type: &str) -> usize {
        self.entity_types.get(entity_type).copied().unwrap_or(UNK_INDEX)
    }

    pub fn families(&self) -> impl Iterator<Item = &String> {
        self.families.keys()
    }

    pub fn is_known(&self, token: &TypedToken) -> bool {
        self.names.contains_key(&token.name)
            && self.families.contains_key(&token.family)
            && token
                .entity_type
                .as_ref()
                .map(|et| self.entity_types.contains_key(et))
                .unwrap_or(true)
    }

    /// Normalizes a field value with the bootstrap statistics; fields never
    /// seen at bootstrap pass through unnormalized.
    pub fn normalize_value(&self, field: &str, value: f64) -> f64 {
        match self.value_stats.get(field) {
            Some((loc, scale)) => (value - loc) / scale,
            None => value,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut out = String::new();
        out.push_str(&format!("piql-vocab v{VOCAB_VERSION}\n"));
        out.push_str(&format!("pad {PAD_INDEX}\nunk {UNK_INDEX}\n"));
        for (name, idx) in &self.names {
            let kind = if self.symbol_names.contains(name) {
                "symbol"
            } else {
                "field"
            };
            out.push_str(&format!("name {idx} {kind} {name}\n"));
        }
        for (name, idx) in &self.families {
            out.push_str(&format!("family {idx} {name}\n"));
        }
        for (name, idx) in &self.entity_types {
            out.push_str(&format!("entity_type {idx} {name}\n"));
        }
        for (field, (loc, scale)) in &self.value_stats {
            out.push_str(&format!("stat {field} {loc:e} {scale:e}\n"));
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| VocabError::Io(e.to_string()))?;
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| VocabError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|e| VocabError::Io(e.to_string()))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or(VocabError::Corrupt("empty file".into()))?;
        if header != format!("piql-vocab v{VOCAB_VERSION}") {
            return Err(VocabError::Corrupt(format!("bad header `{header}`")));
        }
        let mut vocab = Vocabulary {
            names: BTreeMap::new(),
            symbol_names: BTreeSet::new(),
            field_names: BTreeSet::new(),
            families: BTreeMap::new(),
            entity_types: BTreeMap::new(),
            value_stats: BTreeMap::new(),
        };
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["pad", _] | ["unk", _] => {}
                ["name", idx, kind, name] => {
                    let idx: usize = idx.parse().map_err(|_| {
                        VocabError::Corrupt(format!("bad index in `{line}`"))
                    })?;
                    vocab.names.insert(name.to_string(), idx);
                    match *kind {
                        "symbol" => {
                            vocab.symbol_names.insert(name.to_string());
                        }
                        "field" => {
                            vocab.field_names.insert(name.to_string());
                        }
                        other => {
                            return Err(VocabError::Corrupt(format!("bad kind `{other}`")))
                        }
                    }
                }
                ["family", idx, name] => {
                    let idx: usize = idx.parse().map_err(|_| {
                        VocabError::Corrupt(format!("bad index in `{line}`"))
                    })?;
                    vocab.families.insert(name.to_string(), idx);
                }
                ["entity_type", idx, name] => {
                    let idx: usize = idx.parse().map_err(|_| {
                        VocabError::Corrupt(format!("bad index in `{line}`"))
                    })?;
                    vocab.entity_types.insert(name.to_string(), idx);
                }
                ["stat", field, loc, scale] => {
                    let loc: f64 = loc.parse().map_err(|_| {
                        VocabError::Corrupt(format!("bad stat in `{line}`"))
                    })?;
                    let scale: f64 = scale.parse().map_err(|_| {
                        VocabError::Corrupt(format!("bad stat in `{line}`"))
                    })?;
                    vocab.value_stats.insert(field.to_string(), (loc, scale));
                }
                _ => return Err(VocabError::Corrupt(format!("unparseable line `{line}`"))),
            }
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{sample_spec, Family, SamplingRanges};

    fn sample_all_families() -> Vec<GeneratorSpec> {
        let ranges = SamplingRanges::desk(8);
        Family::ALL
            .iter()
            .flat_map(|f| (0..5).map(|i| sample_spec(*f, &ranges, i, 33).unwrap()))
            .collect()
    }

    #[test]
    fn bootstrap_covers_all_family_tags() {
        let vocab = Vocabulary::bootstrap(&sample_all_families()).unwrap();
        for family in ["GMM", "SCM", "COPULA"] {
            assert_ne!(vocab.family_index(family), UNK_INDEX, "{family} missing");
        }
    }

    #[test]
    fn unknown_symbol_maps_to_unk() {
        let vocab = Vocabulary::bootstrap(&sample_all_families()).unwrap();
        assert_eq!(vocab.name_index("NO_SUCH_SYMBOL"), UNK_INDEX);
    }

    #[test]
    fn empty_sample_list_is_a_configuration_error() {
        assert!(matches!(
            Vocabulary::bootstrap(&[]),
            Err(VocabError::EmptySampleList)
        ));
    }

    #[test]
    fn save_load_is_identity() {
        let vocab = Vocabulary::bootstrap(&sample_all_families()).unwrap();
        let path = std::env::temp_dir().join("piql-vocab-roundtrip.txt");
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(vocab, loaded);
        std::fs::remove_file(path).ok();
    }
}
