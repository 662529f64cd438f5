//! Word vectors: a plain-text vector table, character n-gram subword buckets
//! for out-of-vocabulary tokens, and a seeded-hash fallback that needs no
//! trained vectors at all.
//!
//! File format, shared by tables and bucket matrices: a header line
//! `<count> <dim>`, then one `<token> <v1> ... <vdim>` row per line,
//! space-separated. Values are written with Rust's shortest round-trip float
//! formatting, so a write/read cycle reproduces them exactly.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad vector file {path}, line {line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("dimension mismatch in {path}, line {line}: expected {expected}, got {actual}")]
    DimMismatch {
        path: String,
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("subword mode needs a bucket matrix, but none is attached")]
    MissingBuckets,
}

/// In-memory vector table. Optionally carries a bucket matrix for subword
/// lookups; bucket rows share the table's dimension.
#[derive(Debug, Clone)]
pub struct VectorTable {
    dim: usize,
    entries: HashMap<String, Array1<f64>>,
    buckets: Option<Array2<f64>>,
}

impl VectorTable {
    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be nonzero");
        VectorTable {
            dim,
            entries: HashMap::new(),
            buckets: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&Array1<f64>> {
        self.entries.get(token)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Inserts or replaces a row; the caller guarantees the dimension.
    pub fn insert(&mut self, token: String, vector: Array1<f64>) {
        assert_eq!(vector.len(), self.dim, "row dimension mismatch");
        self.entries.insert(token, vector);
    }

    pub fn buckets(&self) -> Option<&Array2<f64>> {
        self.buckets.as_ref()
    }

    pub fn attach_buckets(&mut self, buckets: Array2<f64>) {
        assert_eq!(buckets.ncols(), self.dim, "bucket dimension mismatch");
        self.buckets = Some(buckets);
    }

    /// Tokens in sorted order, for deterministic writes.
    pub fn sorted_tokens(&self) -> Vec<&String> {
        let mut tokens: Vec<&String> = self.entries.keys().collect();
        tokens.sort();
        tokens
    }
}

/// Loads a vector table. `expected_dim` cross-checks the header when the
/// caller already knows the dimension it needs.
pub fn load_vector_table(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<VectorTable, EmbedError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let io_err = |source| EmbedError::Io {
        path: path_str.clone(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (count, dim) = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(io_err)?;
            parse_header(&line).ok_or_else(|| EmbedError::Format {
                path: path_str.clone(),
                line: 1,
                reason: format!("header must be `<count> <dim>`, got {line:?}"),
            })?
        }
        None => {
            return Err(EmbedError::Format {
                path: path_str,
                line: 1,
                reason: "empty file".into(),
            })
        }
    };
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(EmbedError::DimMismatch {
                path: path_str,
                line: 1,
                expected,
                actual: dim,
            });
        }
    }

    let mut table = VectorTable::empty(dim);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().expect("split yields at least one part");
        if token.is_empty() {
            return Err(EmbedError::Format {
                path: path_str,
                line: line_no,
                reason: "row starts with a space".into(),
            });
        }
        let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| EmbedError::Format {
            path: path_str.clone(),
            line: line_no,
            reason: format!("bad float: {e}"),
        })?;
        if values.len() != dim {
            return Err(EmbedError::DimMismatch {
                path: path_str,
                line: line_no,
                expected: dim,
                actual: values.len(),
            });
        }
        if table.contains(token) {
            return Err(EmbedError::Format {
                path: path_str,
                line: line_no,
                reason: format!("duplicate token {token:?}"),
            });
        }
        table.insert(token.to_string(), Array1::from(values));
    }
    if table.len() != count {
        return Err(EmbedError::Format {
            path: path_str,
            line: 1,
            reason: format!("header claims {count} rows, file has {}", table.len()),
        });
    }
    Ok(table)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split(' ');
    let count = parts.next()?.parse().ok()?;
    let dim = parts.next()?.parse().ok()?;
    if parts.next().is_some() || dim == 0 {
        return None;
    }
    Some((count, dim))
}

/// Writes a table in the text format, tokens sorted, floats in shortest
/// round-trip form.
pub fn write_vector_table(path: impl AsRef<Path>, table: &VectorTable) -> std::io::Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{} {}", table.len(), table.dim())?;
    for token in table.sorted_tokens() {
        write!(out, "{token}")?;
        for v in table.get(token).expect("token from own key set") {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// FNV-1a, 64-bit. Fixed hash so bucket assignment is identical across
/// platforms and releases: offset basis 14695981039346656037, prime
/// 1099511628211, one XOR-then-multiply round per byte.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// How to embed a token that has no table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovMode {
    /// Sum of hashed character n-gram bucket rows; needs a bucket matrix.
    SubwordSum,
    /// Deterministic pseudo-random vector derived from a seed and the token.
    SeededHash,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OovPolicy {
    pub mode: OovMode,
    /// Smallest and largest n-gram length, inclusive, over the token wrapped
    /// in angle brackets.
    pub n_min: usize,
    pub n_max: usize,
    /// Seed for `SeededHash` mode.
    pub hash_seed: u64,
}

impl Default for OovPolicy {
    fn default() -> Self {
        OovPolicy {
            mode: OovMode::SeededHash,
            n_min: 3,
            n_max: 6,
            hash_seed: 0,
        }
    }
}

/// Character n-grams of the token wrapped as `<token>`, lengths
/// `n_min..=n_max`, in order of length then position.
pub fn char_ngrams(token: &str, n_min: usize, n_max: usize) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut grams = Vec::new();
    for n in n_min..=n_max {
        if n == 0 || n > wrapped.len() {
            continue;
        }
        for window in wrapped.windows(n) {
            grams.push(window.iter().collect());
        }
    }
    grams
}

/// Sum of the bucket rows selected by hashing each n-gram; the zero vector
/// when the token yields no n-grams.
pub fn subword_vector(
    token: &str,
    table: &VectorTable,
    policy: &OovPolicy,
) -> Result<Array1<f64>, EmbedError> {
    let buckets = table.buckets().ok_or(EmbedError::MissingBuckets)?;
    let n_buckets = buckets.nrows() as u64;
    let mut sum = Array1::zeros(table.dim());
    for gram in char_ngrams(token, policy.n_min, policy.n_max) {
        let row = (fnv1a64(gram.as_bytes()) % n_buckets) as usize;
        sum += &buckets.row(row);
    }
    Ok(sum)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic pseudo-random unit-variance vector for a token: FNV-1a over
/// the little-endian seed bytes followed by the token bytes picks a splitmix64
/// stream, whose outputs map to uniforms on `[-sqrt(3), sqrt(3))`. Pure
/// integer arithmetic end to end, so any implementation of the same recipe
/// reproduces it bit for bit.
pub fn seeded_hash_vector(token: &str, dim: usize, seed: u64) -> Array1<f64> {
    let mut bytes = Vec::with_capacity(8 + token.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(token.as_bytes());
    let mut state = fnv1a64(&bytes);
    Array1::from_shape_fn(dim, |_| {
        let raw = splitmix64(&mut state);
        // Top 53 bits -> uniform [0, 1), then rescale to [-sqrt3, sqrt3).
        let unit = (raw >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * unit - 1.0) * SQRT3
    })
}

/// A vector table plus a validated OOV policy: every token embeds to a
/// finite vector, no lookups can fail after construction.
#[derive(Debug, Clone)]
pub struct Embedder {
    table: VectorTable,
    policy: OovPolicy,
}

/// A sequence embedded as a matrix plus the padding mask (`true` = real
/// token). Pad rows are exactly zero.
#[derive(Debug, Clone)]
pub struct EmbeddedSequence {
    pub matrix: Array2<f64>,
    pub pad_mask: Vec<bool>,
}

impl Embedder {
    /// Fails upfront if the policy needs buckets the table does not have, so
    /// `embed_token` is total.
    pub fn new(table: VectorTable, policy: OovPolicy) -> Result<Self, EmbedError> {
        if policy.mode == OovMode::SubwordSum && table.buckets().is_none() {
            return Err(EmbedError::MissingBuckets);
        }
        Ok(Embedder { table, policy })
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn policy(&self) -> &OovPolicy {
        &self.policy
    }

    pub fn table(&self) -> &VectorTable {
        &self.table
    }

    pub fn embed_token(&self, token: &str) -> Array1<f64> {
        if let Some(row) = self.table.get(token) {
            return row.clone();
        }
        match self.policy.mode {
            OovMode::SubwordSum => subword_vector(token, &self.table, &self.policy)
                .expect("bucket presence checked at construction"),
            OovMode::SeededHash => {
                seeded_hash_vector(token, self.table.dim(), self.policy.hash_seed)
            }
        }
    }

    /// Embeds a padded token sequence; `pad_symbol` rows are zero and masked
    /// out.
    pub fn embed_sequence(&self, tokens: &[String], pad_symbol: &str) -> EmbeddedSequence {
        let mut matrix = Array2::zeros((tokens.len(), self.dim()));
        let mut pad_mask = Vec::with_capacity(tokens.len());
        for (t, token) in tokens.iter().enumerate() {
            if token == pad_symbol {
                pad_mask.push(false);
                continue; // row stays zero
            }
            matrix.row_mut(t).assign(&self.embed_token(token));
            pad_mask.push(true);
        }
        EmbeddedSequence { matrix, pad_mask }
    }
}
