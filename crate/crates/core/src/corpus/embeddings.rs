//! word2vec-style text embedding loader.
//!
//! One token per line followed by `dim` floats; an optional `count dim`
//! header line is detected and skipped. Vocabulary rows not found in the
//! file (after an exact-match and then lowercase lookup) are sampled
//! uniformly from [-sqrt(3/dim), +sqrt(3/dim)].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::Vocab;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Debug)]
pub struct EmbeddingLoad {
    /// (vocab_size, dim) matrix, row i for vocabulary entry i.
    pub matrix: Tensor,
    /// Fraction of non-UNK vocabulary entries filled from the file.
    pub coverage: f64,
    pub filled: usize,
}

/// The set of tokens the embedding file provides (header skipped). Used to
/// decide which dev/test surfaces join the vocabulary.
pub fn embedding_word_set(path: &Path) -> Result<HashSet<String>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut words = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        if lineno == 0 && word.parse::<usize>().is_ok() {
            let rest: Vec<&str> = parts.collect();
            if rest.len() == 1 && rest[0].parse::<usize>().is_ok() {
                continue;
            }
        }
        words.insert(word.to_string());
    }
    Ok(words)
}

pub fn load_embeddings(path: &Path, dim: usize, vocab: &Vocab, rng: &mut impl Rng) -> Result<EmbeddingLoad> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();

    // Only keep file vectors that the vocabulary can use, either directly
    // or as a lowercase fallback target.
    let mut wanted: HashSet<String> = HashSet::new();
    for w in vocab.iter() {
        wanted.insert(w.clone());
        wanted.insert(w.to_lowercase());
    }

    let mut table: HashMap<String, Vec<f64>> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if lineno == 1 && rest.len() == 1 {
            // `count dim` header
            if word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
        }
        if rest.len() != dim {
            return Err(Error::Load {
                path: path_str,
                line: lineno,
                msg: format!("expected {dim} values, found {}", rest.len()),
            });
        }
        if !wanted.contains(word) {
            continue;
        }
        let mut vec = Vec::with_capacity(dim);
        for v in rest {
            let x: f64 = v.parse().map_err(|_| Error::Load {
                path: path_str.clone(),
                line: lineno,
                msg: format!("bad float {v:?}"),
            })?;
            vec.push(x);
        }
        table.entry(word.to_string()).or_insert(vec);
    }

    let bound = (3.0 / dim as f64).sqrt();
    let mut matrix = Tensor::zeros(vocab.len(), dim);
    let mut filled = 0usize;
    for (i, word) in vocab.iter().enumerate() {
        let hit = table
            .get(word)
            .or_else(|| table.get(&word.to_lowercase()))
            .filter(|_| i != super::UNK_WORD);
        match hit {
            Some(vec) => {
                matrix.values[i * dim..(i + 1) * dim].copy_from_slice(vec);
                filled += 1;
            }
            None => {
                for j in 0..dim {
                    matrix.values[i * dim + j] = rng.gen_range(-bound..bound);
                }
            }
        }
    }
    let real_words = vocab.len().saturating_sub(1).max(1);
    Ok(EmbeddingLoad { matrix, coverage: filled as f64 / real_words as f64, filled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn exact_match_copies_file_vector() {
        let f = write_temp("the 0.1 0.2 0.3\n");
        let vocab = Vocab::from_surfaces(["the"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let load = load_embeddings(f.path(), 3, &vocab, &mut rng).unwrap();
        let i = vocab.lookup("the");
        assert_eq!(&load.matrix.values[i * 3..(i + 1) * 3], &[0.1, 0.2, 0.3]);
        assert_eq!(load.filled, 1);
        assert!((load.coverage - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lowercase_fallback_applies_when_exact_misses() {
        let f = write_temp("altron 1.0 2.0\n");
        let vocab = Vocab::from_surfaces(["Altron"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let load = load_embeddings(f.path(), 2, &vocab, &mut rng).unwrap();
        let i = vocab.lookup("Altron");
        assert_eq!(&load.matrix.values[i * 2..(i + 1) * 2], &[1.0, 2.0]);
    }

    #[test]
    fn exact_match_wins_over_lowercase() {
        let f = write_temp("Marbella 5.0\nmarbella 7.0\n");
        let vocab = Vocab::from_surfaces(["Marbella"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let load = load_embeddings(f.path(), 1, &vocab, &mut rng).unwrap();
        assert_eq!(load.matrix.values[vocab.lookup("Marbella")], 5.0);
    }

    #[test]
    fn oov_rows_stay_within_uniform_bound() {
        // Sample 1000 initializations of a dim-100 OOV row.
        let row = format!("covered{}\n", " 0.0".repeat(100));
        let f = write_temp(&row);
        let vocab = Vocab::from_surfaces(["oovword"]);
        let bound = (3.0f64 / 100.0).sqrt();
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let load = load_embeddings(f.path(), 100, &vocab, &mut rng).unwrap();
            let i = vocab.lookup("oovword");
            for &v in &load.matrix.values[i * 100..(i + 1) * 100] {
                assert!(v.abs() <= bound, "seed {seed}: {v} outside +-{bound}");
            }
        }
    }

    #[test]
    fn header_line_is_skipped() {
        let f = write_temp("2 3\nthe 0.1 0.2 0.3\ncat 1.0 1.1 1.2\n");
        let vocab = Vocab::from_surfaces(["the", "cat"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let load = load_embeddings(f.path(), 3, &vocab, &mut rng).unwrap();
        assert_eq!(load.filled, 2);
    }

    #[test]
    fn wrong_vector_length_reports_line() {
        let f = write_temp("the 0.1 0.2\n");
        let vocab = Vocab::from_surfaces(["the"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = load_embeddings(f.path(), 3, &vocab, &mut rng).unwrap_err();
        assert!(err.to_string().contains(":1:"), "got {err}");
    }
}
