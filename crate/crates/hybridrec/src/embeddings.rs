//! Token-embedding tables: loadable files standing in for pre-trained
//! word/sentence encoders, a deterministic synthetic generator, and the
//! per-slot text matrix consumed by the convolutional branch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::dataset::PAD_TOKEN;
use crate::tensorcore::Tensor;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Token-indexed dense vector table with two reserved trailing rows:
/// UNK at index `vocab` and PAD (all zeros) at index `vocab + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocabulary: BTreeMap<String, usize>,
    tokens: Vec<String>, // index -> token
    vectors: Vec<f64>,   // (vocab + 2) x dim
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Builds a table from (token, vector) pairs in the given order. The UNK
    /// and PAD rows are appended as zeros.
    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> EmbeddingTable {
        let mut vocabulary = BTreeMap::new();
        let mut tokens = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity((rows.len() + 2) * dim);
        for (token, vector) in rows {
            assert_eq!(vector.len(), dim, "vector width mismatch for `{token}`");
            assert!(
                vocabulary.insert(token.clone(), tokens.len()).is_none(),
                "duplicate token `{token}`"
            );
            tokens.push(token);
            vectors.extend(vector);
        }
        vectors.extend(std::iter::repeat_n(0.0, 2 * dim)); // UNK, PAD
        EmbeddingTable {
            dim,
            vocabulary,
            tokens,
            vectors,
            trainable: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn rows(&self) -> usize {
        self.vocab_len() + 2
    }

    pub fn unk_index(&self) -> usize {
        self.vocab_len()
    }

    pub fn pad_index(&self) -> usize {
        self.vocab_len() + 1
    }

    /// Index for a token: its vocabulary slot, PAD for the reserved pad
    /// token, UNK for anything else.
    pub fn index_of(&self, token: &str) -> usize {
        if token == PAD_TOKEN {
            return self.pad_index();
        }
        self.vocabulary
            .get(token)
            .copied()
            .unwrap_or_else(|| self.unk_index())
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.vector(self.index_of(token))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Full `(vocab + 2) x dim` tensor, for use as lookup-layer weights.
    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.rows(), self.dim], self.vectors.clone())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> EmbeddingError {
    EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Format: `emb v1 dim=<d> count=<n>` then `<token> <d decimals>` per line.
/// UNK/PAD rows are never stored; PAD is zero by construction regardless of
/// file content.
pub fn write_table(path: &Path, table: &EmbeddingTable) -> Result<(), EmbeddingError> {
    let mut out = String::new();
    let _ = writeln!(out, "emb v1 dim={} count={}", table.dim(), table.vocab_len());
    for (i, token) in table.tokens.iter().enumerate() {
        out.push_str(token);
        for v in table.vector(i) {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn load_table(path: &Path) -> Result<EmbeddingTable, EmbeddingError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty embedding file"))?;
    let rest = header
        .strip_prefix("emb v1 dim=")
        .ok_or_else(|| parse_err(path, 1, format!("bad header `{header}`")))?;
    let (dim_str, count_str) = rest
        .split_once(" count=")
        .ok_or_else(|| parse_err(path, 1, format!("bad header `{header}`")))?;
    let dim: usize = dim_str
        .parse()
        .map_err(|_| parse_err(path, 1, "bad dim"))?;
    let count: usize = count_str
        .parse()
        .map_err(|_| parse_err(path, 1, "bad count"))?;
    let mut rows = Vec::with_capacity(count);
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| parse_err(path, i + 1, "missing token"))?
            .to_string();
        if !seen.insert(token.clone()) {
            return Err(parse_err(path, i + 1, format!("duplicate token `{token}`")));
        }
        let vector: Vec<f64> = fields
            .map(|f| {
                f.parse()
                    .map_err(|_| parse_err(path, i + 1, format!("bad value `{f}`")))
            })
            .collect::<Result<_, _>>()?;
        if vector.len() != dim {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {dim} values, found {}", vector.len()),
            ));
        }
        rows.push((token, vector));
    }
    if rows.len() != count {
        return Err(parse_err(
            path,
            1,
            format!("header count {count} does not match {} rows", rows.len()),
        ));
    }
    Ok(EmbeddingTable::from_rows(dim, rows))
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike the standard
/// library hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn content_vector(content: &str, dim: usize, seed: u64) -> Vec<f64> {
    let h = fnv1a(content.as_bytes()) ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    let mut rng = ChaCha12Rng::seed_from_u64(h);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Deterministic pseudo-random unit vectors per token, independent of token
/// order: each vector is seeded from a stable hash of (token, seed).
/// Repeated tokens collapse to one row.
pub fn synth_table(tokens: &[String], dim: usize, seed: u64) -> EmbeddingTable {
    assert!(dim >= 1, "embedding dim must be >= 1");
    let unique: std::collections::BTreeSet<&String> = tokens.iter().collect();
    let rows = unique
        .into_iter()
        .map(|t| (t.clone(), content_vector(t, dim, seed)))
        .collect();
    EmbeddingTable::from_rows(dim, rows)
}

/// Like [`synth_table`] but the vector is derived from separate content
/// (e.g. keyed by device id, embedded from the device's description text).
pub fn synth_table_from_content(
    entries: &[(String, String)],
    dim: usize,
    seed: u64,
) -> EmbeddingTable {
    assert!(dim >= 1, "embedding dim must be >= 1");
    let rows = entries
        .iter()
        .map(|(token, content)| (token.clone(), content_vector(content, dim, seed)))
        .collect();
    EmbeddingTable::from_rows(dim, rows)
}

/// Word-level vector for a device name: the mean of its tokens' vectors.
pub fn name_vector(word_table: &EmbeddingTable, name: &str) -> Vec<f64> {
    let mut acc = vec![0.0; word_table.dim()];
    let mut count = 0usize;
    for tok in name.split_whitespace() {
        for (a, v) in acc.iter_mut().zip(word_table.lookup(tok)) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        for a in &mut acc {
            *a /= count as f64;
        }
    }
    acc
}

/// Per-slot text matrix for a device sequence: word-level name vector
/// concatenated with the sentence-level description vector, shaped
/// `m x (d_w + d_s) x 1` for convolution input. PAD slots are all-zero.
pub fn device_word_matrix(
    device_sequence: &[String],
    names: &BTreeMap<String, String>,
    word_table: &EmbeddingTable,
    sent_table: &EmbeddingTable,
) -> Tensor {
    let m = device_sequence.len();
    let (dw, ds) = (word_table.dim(), sent_table.dim());
    let mut data = Vec::with_capacity(m * (dw + ds));
    for device in device_sequence {
        if device == PAD_TOKEN {
            data.extend(std::iter::repeat_n(0.0, dw + ds));
            continue;
        }
        match names.get(device) {
            Some(name) => data.extend(name_vector(word_table, name)),
            None => data.extend(word_table.vector(word_table.unk_index())),
        }
        data.extend(sent_table.lookup(device));
    }
    Tensor::from_vec(&[m, dw + ds, 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn table_reserves_unk_and_pad_rows() {
        let t = synth_table(&toks(&["a", "b"]), 3, 0);
        assert_eq!(t.rows(), 4);
        assert_eq!(t.vector(t.unk_index()), &[0.0, 0.0, 0.0]);
        assert_eq!(t.vector(t.pad_index()), &[0.0, 0.0, 0.0]);
        assert_eq!(t.index_of(PAD_TOKEN), t.pad_index());
        assert_eq!(t.index_of("missing"), t.unk_index());
    }

    #[test]
    fn synth_vectors_unit_norm_and_order_independent() {
        let a = synth_table(&toks(&["x", "y", "z"]), 16, 7);
        let b = synth_table(&toks(&["z", "x", "y"]), 16, 7);
        for tok in ["x", "y", "z"] {
            assert_eq!(a.lookup(tok), b.lookup(tok));
            let norm: f64 = a.lookup(tok).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        let c = synth_table(&toks(&["x"]), 16, 8);
        assert_ne!(a.lookup("x"), c.lookup("x"), "seed must matter");
    }

    #[test]
    fn synth_distinct_tokens_roughly_orthogonal() {
        // Cosine similarity of distinct 64-d tokens stays in (-0.6, 0.6)
        // for at least 99% of 1000 pairs.
        let tokens: Vec<String> = (0..2000).map(|i| format!("t{i}")).collect();
        let t = synth_table(&tokens, 64, 3);
        let mut bad = 0;
        for i in 0..1000 {
            let a = t.lookup(&tokens[2 * i]);
            let b = t.lookup(&tokens[2 * i + 1]);
            let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            if cos.abs() >= 0.6 {
                bad += 1;
            }
        }
        assert!(bad <= 10, "{bad} of 1000 pairs outside (-0.6, 0.6)");
    }

    #[test]
    fn file_round_trip_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.emb");
        let t = synth_table(&toks(&["alpha", "beta"]), 5, 42);
        write_table(&path, &t).unwrap();
        let back = load_table(&path).unwrap();
        assert_eq!(back.vocab_len(), 2);
        for tok in ["alpha", "beta"] {
            for (a, b) in t.lookup(tok).iter().zip(back.lookup(tok)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn load_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.emb");
        std::fs::write(&path, "emb v1 dim=3 count=1\ntok 1.0 2.0\n").unwrap();
        let err = load_table(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("expected 3 values"));

        std::fs::write(&path, "emb v1 dim=2 count=2\ntok 1.0 2.0\ntok 3.0 4.0\n").unwrap();
        let err = load_table(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate token"));
    }

    #[test]
    fn file_with_two_tokens_dim3_has_four_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        std::fs::write(&path, "emb v1 dim=3 count=2\na 1 2 3\nb 4 5 6\n").unwrap();
        let t = load_table(&path).unwrap();
        assert_eq!(t.rows(), 4);
        assert_eq!(t.lookup("a"), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn word_matrix_shapes_and_pad_zeroing() {
        let word = synth_table(&toks(&["brand0", "model001"]), 2, 1);
        let sent = synth_table(&toks(&["d1"]), 2, 2);
        let names: BTreeMap<String, String> =
            [("d1".to_string(), "brand0 model001".to_string())].into();
        let seq = vec![PAD_TOKEN.to_string(), "d1".to_string()];
        let m = device_word_matrix(&seq, &names, &word, &sent);
        assert_eq!(m.shape, vec![2, 4, 1]);
        assert!(m.data[0..4].iter().all(|&v| v == 0.0), "PAD slot must be zero");
        // slot 1 = mean(brand0, model001) ++ sent(d1)
        let expect: Vec<f64> = word
            .lookup("brand0")
            .iter()
            .zip(word.lookup("model001"))
            .map(|(a, b)| (a + b) / 2.0)
            .chain(sent.lookup("d1").iter().copied())
            .collect();
        assert_eq!(&m.data[4..8], expect.as_slice());
    }

    #[test]
    fn word_matrix_slot_depends_only_on_its_device() {
        let word = synth_table(&toks(&["n1", "n2", "n3"]), 3, 1);
        let sent = synth_table(&toks(&["a", "b", "c"]), 3, 2);
        let names: BTreeMap<String, String> = [
            ("a".to_string(), "n1".to_string()),
            ("b".to_string(), "n2".to_string()),
            ("c".to_string(), "n3".to_string()),
        ]
        .into();
        let m1 = device_word_matrix(
            &["a".to_string(), "b".to_string()],
            &names,
            &word,
            &sent,
        );
        let m2 = device_word_matrix(
            &["a".to_string(), "c".to_string()],
            &names,
            &word,
            &sent,
        );
        // slot 0 identical, slot 1 differs
        assert_eq!(m1.data[0..6], m2.data[0..6]);
        assert_ne!(m1.data[6..], m2.data[6..]);
    }

    #[test]
    fn all_pad_sequence_gives_zero_matrix() {
        let word = synth_table(&toks(&["w"]), 4, 1);
        let sent = synth_table(&toks(&["d"]), 4, 2);
        let names = BTreeMap::new();
        let seq = vec![PAD_TOKEN.to_string(); 3];
        let m = device_word_matrix(&seq, &names, &word, &sent);
        assert!(m.data.iter().all(|&v| v == 0.0));
    }
}
