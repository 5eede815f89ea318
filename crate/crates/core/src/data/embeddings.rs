use std::fs;
use std::path::Path;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::params::ParamStore;

/// Overwrites embedding rows from a plain-text `token v1 v2 …` file.
///
/// Tokens absent from the vocabulary are ignored. Returns how many rows were
/// replaced.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    store: &mut ParamStore,
    table: ParamId,
) -> Result<usize> {
    let text = fs::read_to_string(path)?;
    let dim = store.get(table).cols();
    let mut replaced = 0;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let id = vocab.id(token);
        if vocab.token(id) != Some(token) {
            continue;
        }
        store.get_mut(table).data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
        replaced += 1;
    }
    Ok(replaced)
}
