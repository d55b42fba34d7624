//! Transformation vectors as mean embedding offsets, plus the VEMB1 matrix
//! format.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::decomp::{DecompositionMap, TransformId};
use crate::vocab::{TokenId, Vocabulary};

pub const VEMB_MAGIC: &[u8; 5] = b"VEMB1";

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("transformation has no exemplar pairs")]
    EmptyPairSet,
    #[error("offset vector is zero")]
    ZeroOffset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed VEMB1 data: {0}")]
    Format(String),
    #[error("non-finite value in matrix")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixRole {
    #[default]
    InputEmbedding,
    OutputUnembedding,
}

/// Row-major f32 matrix. Unembeddings are stored with one row per token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub role: MatrixRole,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
            role: MatrixRole::InputEmbedding,
        }
    }

    pub fn from_data(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self, TransformError> {
        if data.len() != rows * dim {
            return Err(TransformError::DimensionMismatch {
                expected: rows * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TransformError::NonFinite);
        }
        Ok(Self {
            rows,
            dim,
            data,
            role: MatrixRole::InputEmbedding,
        })
    }

    pub fn with_role(mut self, role: MatrixRole) -> Self {
        self.role = role;
        self
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn view(&self) -> Rows<'_> {
        Rows {
            data: &self.data,
            rows: self.rows,
            dim: self.dim,
        }
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_vemb(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 4 * self.data.len());
        out.extend_from_slice(VEMB_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_vemb(bytes: &[u8]) -> Result<Self, TransformError> {
        if bytes.len() < 13 || &bytes[..5] != VEMB_MAGIC {
            return Err(TransformError::Format("bad magic or short header".into()));
        }
        let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let body = &bytes[13..];
        if body.len() != rows * dim * 4 {
            return Err(TransformError::Format(format!(
                "expected {} data bytes for {rows}x{dim}, found {}",
                rows * dim * 4,
                body.len()
            )));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_data(rows, dim, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), TransformError> {
        fs::write(path, self.to_vemb())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TransformError> {
        Self::from_vemb(&fs::read(path)?)
    }
}

/// Borrowed row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub dim: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Self {
        Self {
            data,
            rows: if dim == 0 { 0 } else { data.len() / dim },
            dim,
        }
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub transform: TransformId,
    /// `(surface id, base id)`, sorted by surface id.
    pub pairs: Vec<(TokenId, TokenId)>,
}

/// In-vocabulary surfaces whose transformation set is exactly `{t}`.
pub fn collect_pairs(map: &DecompositionMap, vocab: &Vocabulary, t: TransformId) -> PairSet {
    let mut pairs: Vec<(TokenId, TokenId)> = map
        .entries()
        .values()
        .filter(|d| d.in_vocab && d.transforms == [t])
        .filter_map(|d| vocab.id(&d.surface).map(|id| (id, d.base_token_id)))
        .collect();
    pairs.sort();
    PairSet { transform: t, pairs }
}

/// Pairwise (tree) summation with a fixed split so results do not depend on
/// scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn pair_offsets(e: &EmbeddingMatrix, pairs: &PairSet) -> Vec<Vec<f64>> {
    pairs
        .pairs
        .iter()
        .map(|&(w, b)| {
            e.row(w as usize)
                .iter()
                .zip(e.row(b as usize))
                .map(|(&x, &y)| x as f64 - y as f64)
                .collect()
        })
        .collect()
}

fn mean_offset64(e: &EmbeddingMatrix, pairs: &PairSet) -> Result<Vec<f64>, TransformError> {
    if pairs.pairs.is_empty() {
        return Err(TransformError::EmptyPairSet);
    }
    let offs = pair_offsets(e, pairs);
    let n = offs.len() as f64;
    let mut col = vec![0.0; offs.len()];
    Ok((0..e.dim)
        .map(|j| {
            for (c, o) in col.iter_mut().zip(&offs) {
                *c = o[j];
            }
            pairwise_sum(&col) / n
        })
        .collect())
}

/// Mean of `e_w - e_b` over the pairs.
pub fn extract_offset(e: &EmbeddingMatrix, pairs: &PairSet) -> Result<Vec<f32>, TransformError> {
    for &(w, b) in &pairs.pairs {
        let hi = w.max(b) as usize;
        if hi >= e.rows {
            return Err(TransformError::DimensionMismatch { expected: e.rows, got: hi + 1 });
        }
    }
    Ok(mean_offset64(e, pairs)?.into_iter().map(|x| x as f32).collect())
}

/// Input and output offsets for every transformation of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationTable {
    pub input_offsets: EmbeddingMatrix,
    pub output_offsets: EmbeddingMatrix,
    /// Number of exemplar pairs per row; zero marks an undefined offset.
    pub support: Vec<usize>,
    pub labels: Vec<String>,
}

impl TransformationTable {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn is_defined(&self, t: TransformId) -> bool {
        self.support.get(t.0 as usize).is_some_and(|&s| s > 0)
    }

    pub fn dim(&self) -> usize {
        self.input_offsets.dim
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            input_offsets: EmbeddingMatrix::zeros(0, dim),
            output_offsets: EmbeddingMatrix::zeros(0, dim).with_role(MatrixRole::OutputUnembedding),
            support: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn index_text(&self) -> String {
        let mut s = String::from("row\tlabel\tsupport\n");
        for (i, (l, n)) in self.labels.iter().zip(&self.support).enumerate() {
            s.push_str(&format!("{i}\t{l}\t{n}\n"));
        }
        s
    }

    /// Writes `input_offsets.vemb`, `output_offsets.vemb` and `index.tsv`.
    pub fn save(&self, dir: &Path) -> Result<(), TransformError> {
        fs::create_dir_all(dir)?;
        self.input_offsets.save(&dir.join("input_offsets.vemb"))?;
        self.output_offsets.save(&dir.join("output_offsets.vemb"))?;
        fs::write(dir.join("index.tsv"), self.index_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TransformError> {
        let input_offsets = EmbeddingMatrix::load(&dir.join("input_offsets.vemb"))?;
        let output_offsets = EmbeddingMatrix::load(&dir.join("output_offsets.vemb"))?.with_role(MatrixRole::OutputUnembedding);
        let index = fs::read_to_string(dir.join("index.tsv"))?;
        let mut labels = Vec::new();
        let mut support = Vec::new();
        for (i, line) in index.lines().skip(1).enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || TransformError::Format(format!("index line {}", i + 2));
            if f.len() != 3 || f[0].parse::<usize>().ok() != Some(i) {
                return Err(bad());
            }
            labels.push(f[1].to_string());
            support.push(f[2].parse().map_err(|_| bad())?);
        }
        if input_offsets.rows != support.len() || output_offsets.rows != support.len() {
            return Err(TransformError::DimensionMismatch {
                expected: support.len(),
                got: input_offsets.rows,
            });
        }
        Ok(Self {
            input_offsets,
            output_offsets,
            support,
            labels,
        })
    }
}

/// One offset per transformation in both spaces. Transformations without
/// single-transform exemplars get zero rows and support 0.
pub fn extract_table(
    map: &DecompositionMap,
    vocab: &Vocabulary,
    e_in: &EmbeddingMatrix,
    e_out: &EmbeddingMatrix,
) -> Result<TransformationTable, TransformError> {
    for m in [e_in, e_out] {
        if m.rows != vocab.len() {
            return Err(TransformError::DimensionMismatch { expected: vocab.len(), got: m.rows });
        }
    }
    if e_in.dim != e_out.dim {
        return Err(TransformError::DimensionMismatch { expected: e_in.dim, got: e_out.dim });
    }
    let dim = e_in.dim;
    let n = map.transforms().len();
    let rows: Vec<(usize, Vec<f32>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pairs = collect_pairs(map, vocab, TransformId(i as u32));
            if pairs.pairs.is_empty() {
                return (0, vec![0.0; dim], vec![0.0; dim]);
            }
            let a = extract_offset(e_in, &pairs).expect("checked shapes");
            let b = extract_offset(e_out, &pairs).expect("checked shapes");
            (pairs.pairs.len(), a, b)
        })
        .collect();
    let mut input = EmbeddingMatrix::zeros(n, dim);
    let mut output = EmbeddingMatrix::zeros(n, dim).with_role(MatrixRole::OutputUnembedding);
    let mut support = Vec::with_capacity(n);
    for (i, (s, a, b)) in rows.into_iter().enumerate() {
        input.row_mut(i).copy_from_slice(&a);
        output.row_mut(i).copy_from_slice(&b);
        support.push(s);
    }
    Ok(TransformationTable {
        input_offsets: input,
        output_offsets: output,
        support,
        labels: map.transforms().iter().map(|k| k.label().to_string()).collect(),
    })
}

fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine between each pair offset and `o_t`.
pub fn consistency_score(e: &EmbeddingMatrix, pairs: &PairSet, o_t: &[f32]) -> Result<(f64, Vec<f64>), TransformError> {
    if pairs.pairs.is_empty() {
        return Err(TransformError::EmptyPairSet);
    }
    if o_t.len() != e.dim {
        return Err(TransformError::DimensionMismatch { expected: e.dim, got: o_t.len() });
    }
    let o: Vec<f64> = o_t.iter().map(|&x| x as f64).collect();
    if o.iter().all(|&x| x == 0.0) {
        return Err(TransformError::ZeroOffset);
    }
    let per_pair: Vec<f64> = pair_offsets(e, pairs).iter().map(|d| cosine64(d, &o)).collect();
    Ok((pairwise_sum(&per_pair) / per_pair.len() as f64, per_pair))
}

/// Cosine similarity of two f32 vectors, computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    cosine64(&a, &b)
}

/// The `k` rows most cosine-similar to `query`, best first (ties to smaller id).
pub fn nearest_rows(e: &EmbeddingMatrix, query: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = (0..e.rows).map(|i| (i, cosine(e.row(i), query))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{build_map, BuildOptions};
    use crate::lexicon::{parse_unimorph, ParseOptions};
    use crate::vocab::SpaceMarker;

    fn mat(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_data(rows.len(), rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn ps(pairs: &[(u32, u32)]) -> PairSet {
        PairSet {
            transform: TransformId(0),
            pairs: pairs.to_vec(),
        }
    }

    #[test]
    fn one_pair_mean_is_difference() {
        let e = mat(&[&[3.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(extract_offset(&e, &ps(&[(0, 1)])).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn two_pair_mean() {
        let e = mat(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(extract_offset(&e, &ps(&[(0, 1), (2, 1)])).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(extract_offset(&e, &ps(&[])), Err(TransformError::EmptyPairSet)));
    }

    #[test]
    fn collect_pairs_uses_single_transform_surfaces() {
        let v = Vocabulary::from_tokens(
            [" walk", " walked", " Walked", " talk", " talked", " jump", " jumped"].map(String::from).to_vec(),
            SpaceMarker::LiteralSpace,
        )
        .unwrap();
        let l = parse_unimorph(b"walk\twalked\tV;PST\ntalk\ttalked\tV;PST\njump\tjumped\tV;PST\n", &ParseOptions::default()).unwrap();
        let m = build_map(&v, &l, &BuildOptions::default()).map;
        let pst = m.transform_id(&crate::decomp::TransformKind::Morph(crate::lexicon::FeatureTag::new("V;PST").unwrap())).unwrap();
        let p = collect_pairs(&m, &v, pst);
        assert_eq!(p.pairs, vec![(1, 0), (4, 3), (6, 5)]);
        let cap = m.transform_id(&crate::decomp::TransformKind::CapFirst).unwrap();
        assert!(collect_pairs(&m, &v, cap).pairs.is_empty());

        let e = EmbeddingMatrix::from_data(7, 3, (0..21).map(|x| (x as f32).sin()).collect()).unwrap();
        let t = extract_table(&m, &v, &e, &e).unwrap();
        assert_eq!(t.input_offsets, EmbeddingMatrix { role: MatrixRole::InputEmbedding, ..t.output_offsets.clone() });
        assert_eq!(t.input_offsets.row(pst.0 as usize), extract_offset(&e, &p).unwrap().as_slice());
        assert_eq!(t.support[cap.0 as usize], 0);
        assert!(!t.is_defined(cap));
    }

    #[test]
    fn identical_offsets_are_perfectly_consistent() {
        let e = mat(&[&[1.0, 2.0], &[0.0, 1.0], &[5.0, 5.0], &[4.0, 4.0]]);
        let p = ps(&[(0, 1), (2, 3)]);
        let o = extract_offset(&e, &p).unwrap();
        let (mean, per) = consistency_score(&e, &p, &o).unwrap();
        assert!((mean - 1.0).abs() < 1e-6);
        assert_eq!(per.len(), 2);
    }

    #[test]
    fn opposite_offsets_cancel() {
        let e = mat(&[&[1.0, 0.0], &[0.0, 0.0], &[-1.0, 0.0]]);
        let p = ps(&[(0, 1), (2, 1)]);
        let o = extract_offset(&e, &p).unwrap();
        assert_eq!(o, vec![0.0, 0.0]);
        assert!(matches!(consistency_score(&e, &p, &o), Err(TransformError::ZeroOffset)));
    }

    #[test]
    fn vemb_round_trip_and_errors() {
        let e = mat(&[&[1.5, -2.0, 0.25]]);
        let bytes = e.to_vemb();
        assert_eq!(&bytes[..5], b"VEMB1");
        assert_eq!(&bytes[5..13], &[1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(EmbeddingMatrix::from_vemb(&bytes).unwrap(), e);
        assert!(EmbeddingMatrix::from_vemb(&bytes[..15]).is_err());
        let mut nan = bytes.clone();
        nan[13..17].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::from_vemb(&nan), Err(TransformError::NonFinite)));
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), xs.iter().sum::<f64>());
    }

    #[test]
    fn nearest_rows_orders_by_cosine() {
        let e = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let nn = nearest_rows(&e, &[1.0, 0.1], 2);
        assert_eq!(nn.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 2]);
    }
}
