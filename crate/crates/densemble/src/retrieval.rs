//! Test-time retrieval: embedding extraction, binary quantization, gallery
//! ranking and CMC/mAP metrics.
//!
//! Evaluation protocol: for each query, gallery entries with the same id AND
//! same camera are excluded, as is the junk id 0. A gallery item is relevant
//! if it shares the query id (necessarily from another camera after masking).
//! Queries with no relevant gallery item are skipped and reported. Distances
//! sort ascending with ties broken by ascending gallery index.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{resize, ReidItem};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::ops::Phase;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Squared Euclidean on real-valued embeddings (sort-equivalent to
    /// Euclidean, avoids square roots).
    Euclidean,
    /// Popcount-of-XOR on binary codes.
    Hamming,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "hamming" => Ok(Metric::Hamming),
            other => Err(Error::config(format!(
                "unknown metric '{other}' (want euclidean or hamming)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Hamming => "hamming",
        }
    }
}

/// Real-valued embeddings, one row per image.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    pub ids: Vec<u32>,
    pub cams: Vec<u16>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>, ids: Vec<u32>, cams: Vec<u16>) -> Result<Self> {
        if dim == 0 || data.len() != dim * ids.len() || ids.len() != cams.len() {
            return Err(Error::config(format!(
                "inconsistent feature matrix: dim {dim}, {} values, {} ids, {} cams",
                data.len(),
                ids.len(),
                cams.len()
            )));
        }
        Ok(FeatureMatrix { dim, data, ids, cams })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Bit-packed binary codes; bit b of a row lives in word b/64, bit b%64.
/// Padding bits in the last word are always zero.
#[derive(Clone, Debug)]
pub struct BinaryCodeMatrix {
    dim: usize,
    words_per_row: usize,
    words: Vec<u64>,
    pub ids: Vec<u32>,
    pub cams: Vec<u16>,
}

impl BinaryCodeMatrix {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub fn bit(&self, row: usize, b: usize) -> bool {
        self.row(row)[b / 64] >> (b % 64) & 1 == 1
    }
}

/// Threshold at zero: bit = 1 iff value >= 0 (symmetric for tanh outputs).
pub fn quantize(features: &FeatureMatrix) -> BinaryCodeMatrix {
    let dim = features.dim;
    let words_per_row = dim.div_ceil(64);
    let mut words = vec![0u64; words_per_row * features.rows()];
    for i in 0..features.rows() {
        let row = features.row(i);
        let out = &mut words[i * words_per_row..(i + 1) * words_per_row];
        for (b, &v) in row.iter().enumerate() {
            if v >= 0.0 {
                out[b / 64] |= 1u64 << (b % 64);
            }
        }
    }
    BinaryCodeMatrix {
        dim,
        words_per_row,
        words,
        ids: features.ids.clone(),
        cams: features.cams.clone(),
    }
}

/// Unpacks codes to a {0,1}-valued real matrix. Squared Euclidean on these
/// rows equals Hamming on the codes exactly, bitwise.
pub fn codes_to_reals(codes: &BinaryCodeMatrix) -> FeatureMatrix {
    let mut data = Vec::with_capacity(codes.rows() * codes.dim);
    for r in 0..codes.rows() {
        for b in 0..codes.dim {
            data.push(if codes.bit(r, b) { 1.0 } else { 0.0 });
        }
    }
    FeatureMatrix {
        dim: codes.dim,
        data,
        ids: codes.ids.clone(),
        cams: codes.cams.clone(),
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "distance dim mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "code word-count mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// One scored query: masked gallery order (ascending distance, index
/// tie-break) plus relevance flags aligned with `order`.
#[derive(Clone, Debug)]
pub struct RankingResult {
    pub query_index: usize,
    /// Gallery indices that survived the mask, closest first.
    pub order: Vec<usize>,
    /// relevant[k] says whether order[k] shares the query id.
    pub relevant: Vec<bool>,
}

/// All scored queries plus the indices of skipped ones (no relevant gallery
/// item after masking).
#[derive(Clone, Debug)]
pub struct Rankings {
    pub results: Vec<RankingResult>,
    pub skipped: Vec<usize>,
}

/// Ascending stable order of unmasked indices; ties resolve to the lower index.
fn sorted_indices(dists: &[f64], mask: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dists.len()).filter(|&i| mask[i]).collect();
    idx.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    idx
}

fn rank_generic(
    n_query: usize,
    n_gallery: usize,
    q_meta: (&[u32], &[u16]),
    g_meta: (&[u32], &[u16]),
    mut dist: impl FnMut(usize, usize) -> f64,
) -> Rankings {
    let (q_ids, q_cams) = q_meta;
    let (g_ids, g_cams) = g_meta;
    let mut results = Vec::with_capacity(n_query);
    let mut skipped = Vec::new();
    for q in 0..n_query {
        let mask: Vec<bool> = (0..n_gallery)
            .map(|g| g_ids[g] != 0 && !(g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q]))
            .collect();
        let any_relevant = (0..n_gallery).any(|g| mask[g] && g_ids[g] == q_ids[q]);
        if !any_relevant {
            skipped.push(q);
            continue;
        }
        let dists: Vec<f64> = (0..n_gallery)
            .map(|g| if mask[g] { dist(q, g) } else { f64::INFINITY })
            .collect();
        let order = sorted_indices(&dists, &mask);
        let relevant = order.iter().map(|&g| g_ids[g] == q_ids[q]).collect();
        results.push(RankingResult { query_index: q, order, relevant });
    }
    Rankings { results, skipped }
}

pub fn rank_real(query: &FeatureMatrix, gallery: &FeatureMatrix) -> Result<Rankings> {
    if query.dim != gallery.dim {
        return Err(Error::config(format!(
            "query dim {} != gallery dim {}",
            query.dim, gallery.dim
        )));
    }
    Ok(rank_generic(
        query.rows(),
        gallery.rows(),
        (&query.ids, &query.cams),
        (&gallery.ids, &gallery.cams),
        |q, g| squared_euclidean(query.row(q), gallery.row(g)).expect("dims checked"),
    ))
}

pub fn rank_codes(query: &BinaryCodeMatrix, gallery: &BinaryCodeMatrix) -> Result<Rankings> {
    if query.dim != gallery.dim {
        return Err(Error::config(format!(
            "query dim {} != gallery dim {}",
            query.dim, gallery.dim
        )));
    }
    Ok(rank_generic(
        query.rows(),
        gallery.rows(),
        (&query.ids, &query.cams),
        (&gallery.ids, &gallery.cams),
        |q, g| hamming(query.row(q), gallery.row(g)).expect("dims checked") as f64,
    ))
}

/// Unsmoothed precision-at-hit AP: (1/|rel|) * sum over hit positions k of
/// (hits so far / k), positions 1-based.
pub fn average_precision(result: &RankingResult) -> f64 {
    let total: usize = result.relevant.iter().filter(|&&r| r).count();
    assert!(total > 0, "scored queries always have a relevant item");
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in result.relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

pub fn mean_ap(results: &[RankingResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::data("no scored queries; cannot compute mAP"));
    }
    Ok(results.iter().map(average_precision).sum::<f64>() / results.len() as f64)
}

/// Match rates at ranks 1..=n plus mAP.
#[derive(Clone, Debug)]
pub struct CmcCurve {
    /// rates[r-1] = fraction of queries whose first relevant hit is at rank <= r.
    pub rates: Vec<f64>,
    pub map: f64,
}

pub fn cmc(results: &[RankingResult], n: usize) -> Result<CmcCurve> {
    let map = mean_ap(results)?;
    let mut first_hits = vec![0usize; n];
    for r in results {
        if let Some(pos) = r.relevant.iter().position(|&x| x) {
            if pos < n {
                first_hits[pos] += 1;
            }
        }
    }
    let mut rates = Vec::with_capacity(n);
    let mut acc = 0usize;
    for r in 0..n {
        acc += first_hits[r];
        rates.push(acc as f64 / results.len() as f64);
    }
    Ok(CmcCurve { rates, map })
}

/// Eval-mode embedding extraction over the selected heads (1-based indices
/// into 1..=2L), concatenated in head order regardless of the order given.
pub fn extract_features(
    model: &mut EnsembleModel,
    items: &[ReidItem],
    head_subset: &[usize],
) -> Result<FeatureMatrix> {
    let subset = normalize_subset(head_subset, model.config.num_heads())?;
    if items.is_empty() {
        return Err(Error::data("no images to extract features from"));
    }
    let (ic, ih, iw) = model.config.backbone.input;
    let h_dim = model.config.embedding_dim;
    let dim = subset.len() * h_dim;
    let mut data = vec![0.0; dim * items.len()];
    let batch = 32usize.min(items.len());
    let sample_len = ic * ih * iw;
    let mut start = 0;
    while start < items.len() {
        let end = (start + batch).min(items.len());
        let n = end - start;
        let mut x = Tensor::zeros(&[n, ic, ih, iw]);
        for (slot, item) in items[start..end].iter().enumerate() {
            let (c, h, w) = item.image.dims3()?;
            if c != ic {
                return Err(Error::data(format!(
                    "image has {c} channels, model expects {ic}"
                )));
            }
            let img = if (h, w) == (ih, iw) {
                item.image.clone()
            } else {
                resize(&item.image, ih, iw)?
            };
            x.data_mut()[slot * sample_len..(slot + 1) * sample_len].copy_from_slice(img.data());
        }
        let (outputs, _) = model.forward(&x, Phase::Eval)?;
        for (si, &head) in subset.iter().enumerate() {
            let emb = &outputs[head - 1].embedding;
            for row in 0..n {
                let src = &emb.data()[row * h_dim..(row + 1) * h_dim];
                let dst_row = start + row;
                let dst = dst_row * dim + si * h_dim;
                data[dst..dst + h_dim].copy_from_slice(src);
            }
        }
        start = end;
    }
    FeatureMatrix::new(
        dim,
        data,
        items.iter().map(|i| i.id).collect(),
        items.iter().map(|i| i.cam).collect(),
    )
}

/// Validates a 1-based head subset and returns it sorted.
pub fn normalize_subset(head_subset: &[usize], num_heads: usize) -> Result<Vec<usize>> {
    if head_subset.is_empty() {
        return Err(Error::config("head subset must not be empty"));
    }
    let mut subset = head_subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    if subset.len() != head_subset.len() {
        return Err(Error::config("head subset contains duplicates"));
    }
    for &h in &subset {
        if h == 0 || h > num_heads {
            return Err(Error::config(format!(
                "head index {h} out of range 1..={num_heads}"
            )));
        }
    }
    Ok(subset)
}

/// Slices the columns of a full 2L-head concatenation down to a head subset
/// (1-based). Extraction with that subset must produce exactly these values;
/// this is the cheap path when the full matrix already exists.
pub fn select_head_columns(
    full: &FeatureMatrix,
    embedding_dim: usize,
    subset: &[usize],
) -> Result<FeatureMatrix> {
    if embedding_dim == 0 || full.dim % embedding_dim != 0 {
        return Err(Error::config(format!(
            "feature dim {} is not a multiple of embedding dim {embedding_dim}",
            full.dim
        )));
    }
    let num_heads = full.dim / embedding_dim;
    let subset = normalize_subset(subset, num_heads)?;
    let dim = subset.len() * embedding_dim;
    let mut data = Vec::with_capacity(dim * full.rows());
    for row in 0..full.rows() {
        let src = full.row(row);
        for &h in &subset {
            data.extend_from_slice(&src[(h - 1) * embedding_dim..h * embedding_dim]);
        }
    }
    FeatureMatrix::new(dim, data, full.ids.clone(), full.cams.clone())
}

/// Row-wise concatenation of per-model features taken over the same images.
pub fn combine_features(mats: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::config("need at least one feature matrix to combine"))?;
    for m in &mats[1..] {
        if m.rows() != first.rows() || m.ids != first.ids || m.cams != first.cams {
            return Err(Error::data(
                "feature matrices disagree on image order/ids/cams; cannot combine",
            ));
        }
    }
    let dim: usize = mats.iter().map(|m| m.dim).sum();
    let mut data = Vec::with_capacity(dim * first.rows());
    for row in 0..first.rows() {
        for m in mats {
            data.extend_from_slice(m.row(row));
        }
    }
    FeatureMatrix::new(dim, data, first.ids.clone(), first.cams.clone())
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub metric: Metric,
    pub curve: CmcCurve,
    pub scored: usize,
    pub skipped: Vec<usize>,
}

/// Ranks every query and computes CMC@max_rank plus mAP under one metric.
/// Hamming quantizes both sides first.
pub fn evaluate(
    query: &FeatureMatrix,
    gallery: &FeatureMatrix,
    metric: Metric,
    max_rank: usize,
) -> Result<EvalReport> {
    let rankings = match metric {
        Metric::Euclidean => rank_real(query, gallery)?,
        Metric::Hamming => rank_codes(&quantize(query), &quantize(gallery))?,
    };
    let curve = cmc(&rankings.results, max_rank)?;
    Ok(EvalReport {
        metric,
        curve,
        scored: rankings.results.len(),
        skipped: rankings.skipped,
    })
}

/// [`evaluate`] for stored binary codes. Hamming ranks the packed rows
/// directly; Euclidean unpacks to {0,1} reals, whose squared distances equal
/// the Hamming counts exactly (re-quantizing them would be wrong: 0.0 and 1.0
/// both sit on the non-negative side of the threshold).
pub fn evaluate_codes(
    query: &BinaryCodeMatrix,
    gallery: &BinaryCodeMatrix,
    metric: Metric,
    max_rank: usize,
) -> Result<EvalReport> {
    match metric {
        Metric::Euclidean => evaluate(
            &codes_to_reals(query),
            &codes_to_reals(gallery),
            Metric::Euclidean,
            max_rank,
        ),
        Metric::Hamming => {
            let rankings = rank_codes(query, gallery)?;
            let curve = cmc(&rankings.results, max_rank)?;
            Ok(EvalReport {
                metric,
                curve,
                scored: rankings.results.len(),
                skipped: rankings.skipped,
            })
        }
    }
}

const FEAT_MAGIC: &[u8; 4] = b"FEAT";
const KIND_REAL: u8 = 0;
const KIND_PACKED: u8 = 1;

/// Either payload of a feature file.
#[derive(Clone, Debug)]
pub enum FeatureFile {
    Real(FeatureMatrix),
    Codes(BinaryCodeMatrix),
}

/// Layout: magic "FEAT", u32 rows, u32 dim, u8 kind (0 = f32 real, 1 = packed
/// bits), ids (u32 each), cams (u16 each), then row-major data: f32 values or
/// ceil(dim/64) u64 words per row. All integers little-endian.
pub fn save_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = feat_header(m.rows(), m.dim, KIND_REAL, &m.ids, &m.cams);
    for &v in &m.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_all(path, &buf)
}

pub fn save_codes(path: impl AsRef<Path>, m: &BinaryCodeMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = feat_header(m.rows(), m.dim, KIND_PACKED, &m.ids, &m.cams);
    for &w in &m.words {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    write_all(path, &buf)
}

fn feat_header(rows: usize, dim: usize, kind: u8, ids: &[u32], cams: &[u16]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(FEAT_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.push(kind);
    for &id in ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    for &cam in cams {
        buf.extend_from_slice(&cam.to_le_bytes());
    }
    buf
}

fn write_all(path: &Path, buf: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf).map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::data(format!("{}: {msg}", path.display()));

    if buf.len() < 13 || &buf[0..4] != FEAT_MAGIC {
        return Err(bad("not a feature file (bad magic)"));
    }
    let rows = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let kind = buf[12];
    if dim == 0 || rows.checked_mul(dim).is_none_or(|n| n > (1 << 31)) {
        return Err(bad("implausible feature file dimensions"));
    }
    let mut off = 13;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        let s = buf.get(*off..*off + n).ok_or_else(|| bad("truncated feature file"))?;
        *off += n;
        Ok(s)
    };
    let mut ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        ids.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()));
    }
    let mut cams = Vec::with_capacity(rows);
    for _ in 0..rows {
        cams.push(u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()));
    }
    let file = match kind {
        KIND_REAL => {
            let mut data = Vec::with_capacity(rows * dim);
            for _ in 0..rows * dim {
                data.push(f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64);
            }
            FeatureFile::Real(FeatureMatrix { dim, data, ids, cams })
        }
        KIND_PACKED => {
            let words_per_row = dim.div_ceil(64);
            let mut words = Vec::with_capacity(rows * words_per_row);
            for _ in 0..rows * words_per_row {
                words.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
            }
            let pad_bits = words_per_row * 64 - dim;
            if pad_bits > 0 {
                let live_mask = u64::MAX >> pad_bits;
                for r in 0..rows {
                    let last = words[(r + 1) * words_per_row - 1];
                    if last & !live_mask != 0 {
                        return Err(bad("nonzero padding bits in packed codes"));
                    }
                }
            }
            FeatureFile::Codes(BinaryCodeMatrix { dim, words_per_row, words, ids, cams })
        }
        other => return Err(bad(&format!("unknown feature kind {other}"))),
    };
    if off != buf.len() {
        return Err(bad("trailing bytes after feature data"));
    }
    Ok(file)
}
