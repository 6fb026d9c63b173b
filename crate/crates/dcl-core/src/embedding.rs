//! Unit-norm embedding containers and pairwise-similarity utilities.
//!
//! A batch holds `N` samples with two augmented views each; every stored
//! vector is unit-norm, so inner products are cosine similarities. The flat
//! index of view `k ∈ {1,2}` of sample `i` (0-based) is `2*i + (k-1)`,
//! fixed project-wide so CSV and binary layouts are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Norm tolerance accepted when adopting an externally built unit vector.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Which of the two augmented views of a sample an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    One,
    Two,
}

impl View {
    pub const BOTH: [View; 2] = [View::One, View::Two];

    /// 0-based offset within a sample's pair of views.
    pub fn index(self) -> usize {
        match self {
            View::One => 0,
            View::Two => 1,
        }
    }

    /// The sibling view, i.e. the positive partner.
    pub fn other(self) -> View {
        match self {
            View::One => View::Two,
            View::Two => View::One,
        }
    }

    pub fn from_index(idx: usize) -> Option<View> {
        match idx {
            0 => Some(View::One),
            1 => Some(View::Two),
            _ => None,
        }
    }
}

/// Address of one view embedding inside a batch: sample index plus view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Anchor {
    pub sample: usize,
    pub view: View,
}

impl Anchor {
    pub fn new(sample: usize, view: View) -> Self {
        Anchor { sample, view }
    }

    /// Flat row index: `2*sample + view`.
    pub fn flat(self) -> usize {
        2 * self.sample + self.view.index()
    }

    pub fn from_flat(flat: usize) -> Self {
        Anchor {
            sample: flat / 2,
            view: View::from_index(flat % 2).unwrap(),
        }
    }

    /// The other view of the same sample.
    pub fn positive(self) -> Anchor {
        Anchor::new(self.sample, self.view.other())
    }
}

/// A vector of unit Euclidean norm with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    components: Vec<f64>,
}

impl UnitVector {
    /// Adopt components that are already unit-norm (within [`UNIT_NORM_TOL`]).
    pub fn new(components: Vec<f64>) -> Result<Self> {
        check_finite(&components)?;
        let norm = l2_norm(&components);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::ShapeMismatch {
                op: "UnitVector::new",
                expected: "norm 1 within 1e-9".into(),
                got: format!("norm {norm}"),
            });
        }
        Ok(UnitVector { components })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.components, &other.components)
    }
}

/// Scale a raw vector to unit norm.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    check_finite(v)?;
    let norm = l2_norm(v);
    if norm < 1e-30 {
        return Err(Error::ZeroVector { norm });
    }
    Ok(UnitVector {
        components: v.iter().map(|x| x / norm).collect(),
    })
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `N` samples × 2 views of unit vectors, stored in flat `2*i + k` order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    dim: usize,
    views: Vec<UnitVector>,
}

impl EmbeddingBatch {
    /// Build from per-sample `(view-1, view-2)` pairs.
    pub fn from_pairs(pairs: Vec<(UnitVector, UnitVector)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput { what: "embedding batch" });
        }
        let dim = pairs[0].0.dim();
        let mut views = Vec::with_capacity(2 * pairs.len());
        for (a, b) in pairs {
            if a.dim() != dim || b.dim() != dim {
                return Err(Error::ShapeMismatch {
                    op: "EmbeddingBatch::from_pairs",
                    expected: format!("dim {dim}"),
                    got: format!("dims {}/{}", a.dim(), b.dim()),
                });
            }
            views.push(a);
            views.push(b);
        }
        Ok(EmbeddingBatch { dim, views })
    }

    /// Seeded batch of uniform random unit vectors (both views independent).
    pub fn random_unit(seed: u64, n_samples: usize, dim: usize) -> Result<Self> {
        if n_samples == 0 || dim == 0 {
            return Err(Error::InvalidConfig {
                reason: format!("random batch needs n >= 1 and dim >= 1, got {n_samples}x{dim}"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut views = Vec::with_capacity(2 * n_samples);
        for _ in 0..2 * n_samples {
            views.push(random_unit_vector(&mut rng, dim));
        }
        Ok(EmbeddingBatch { dim, views })
    }

    pub fn n_samples(&self) -> usize {
        self.views.len() / 2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn view(&self, anchor: Anchor) -> &UnitVector {
        &self.views[anchor.flat()]
    }

    /// All anchors in flat order, the project-wide reduction order.
    pub fn anchors(&self) -> impl Iterator<Item = Anchor> {
        (0..self.views.len()).map(Anchor::from_flat)
    }

    /// Similarity of the positive pair of sample `i`.
    pub fn positive_sim(&self, sample: usize) -> f64 {
        self.views[2 * sample].dot(&self.views[2 * sample + 1])
    }
}

/// Draw a direction uniformly on the sphere via normalized Gaussians.
pub(crate) fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> UnitVector {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = normalize(&raw) {
            return u;
        }
    }
}

/// Cached `2N × 2N` table of pairwise inner products.
///
/// Row/column indices follow the flat anchor order; entry `(a, b)` is
/// `<z_a, z_b>` of the stored vectors.
#[derive(Debug, Clone)]
pub struct SimilarityTable {
    n_samples: usize,
    values: Vec<f64>,
}

/// Precompute every pairwise similarity of a batch.
pub fn similarity_table(batch: &EmbeddingBatch) -> SimilarityTable {
    let rows = 2 * batch.n_samples();
    let mut values = vec![0.0; rows * rows];
    for r in 0..rows {
        for c in r..rows {
            let s = batch
                .view(Anchor::from_flat(r))
                .dot(batch.view(Anchor::from_flat(c)));
            values[r * rows + c] = s;
            values[c * rows + r] = s;
        }
    }
    SimilarityTable {
        n_samples: batch.n_samples(),
        values,
    }
}

impl SimilarityTable {
    /// Wrap raw values without the unit-norm provenance; used by evaluation
    /// paths that operate on deliberately perturbed (non-unit) coordinates.
    pub(crate) fn from_values(n_samples: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), 4 * n_samples * n_samples);
        SimilarityTable { n_samples, values }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn get(&self, a: Anchor, b: Anchor) -> f64 {
        self.get_flat(a.flat(), b.flat())
    }

    pub fn get_flat(&self, row: usize, col: usize) -> f64 {
        self.values[row * 2 * self.n_samples + col]
    }

    /// Overwrite one similarity (kept symmetric). Supports counterfactual
    /// probes that move a single pair while holding everything else fixed;
    /// the result no longer corresponds to any actual embedding batch.
    pub fn set_sym(&mut self, a: Anchor, b: Anchor, value: f64) {
        let rows = 2 * self.n_samples;
        self.values[a.flat() * rows + b.flat()] = value;
        self.values[b.flat() * rows + a.flat()] = value;
    }

    /// Positive-pair similarity of sample `i`.
    pub fn positive_sim(&self, sample: usize) -> f64 {
        self.get(
            Anchor::new(sample, View::One),
            Anchor::new(sample, View::Two),
        )
    }
}

/// Batch coordinates viewed as free ambient vectors, without the unit-norm
/// invariant. Loss gradients are defined against these coordinates, and the
/// finite-difference oracle perturbs them directly.
#[derive(Debug, Clone)]
pub struct AmbientViews {
    n_samples: usize,
    dim: usize,
    data: Vec<f64>, // 2N × dim, row-major in flat anchor order
}

impl AmbientViews {
    pub fn from_batch(batch: &EmbeddingBatch) -> Self {
        let mut data = Vec::with_capacity(2 * batch.n_samples() * batch.dim());
        for a in batch.anchors() {
            data.extend_from_slice(batch.view(a).components());
        }
        AmbientViews {
            n_samples: batch.n_samples(),
            dim: batch.dim(),
            data,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn sim(&self, a: Anchor, b: Anchor) -> f64 {
        dot(self.row(a.flat()), self.row(b.flat()))
    }

    /// Add `delta` to one ambient coordinate (no renormalization).
    pub fn nudge(&mut self, flat: usize, component: usize, delta: f64) {
        self.data[flat * self.dim + component] += delta;
    }

    pub(crate) fn sim_table(&self) -> SimilarityTable {
        let rows = 2 * self.n_samples;
        let mut values = vec![0.0; rows * rows];
        for r in 0..rows {
            for c in r..rows {
                let s = dot(self.row(r), self.row(c));
                values[r * rows + c] = s;
                values[c * rows + r] = s;
            }
        }
        SimilarityTable::from_values(self.n_samples, values)
    }
}

// --- DCLE v1 embedding dump -------------------------------------------------
//
// Binary layout: magic `DCLE`, u32 LE N, u32 LE d, then N×2×d f64 LE values
// in (sample, view, component) row-major order.

const DCLE_MAGIC: &[u8; 4] = b"DCLE";

pub fn write_dcle<W: Write>(batch: &EmbeddingBatch, mut w: W) -> Result<()> {
    w.write_all(DCLE_MAGIC)?;
    w.write_all(&(batch.n_samples() as u32).to_le_bytes())?;
    w.write_all(&(batch.dim() as u32).to_le_bytes())?;
    for a in batch.anchors() {
        for x in batch.view(a).components() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dcle<R: Read>(mut r: R) -> Result<EmbeddingBatch> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DCLE_MAGIC {
        return Err(Error::Format {
            format: "DCLE",
            reason: format!("bad magic {magic:?}"),
        });
    }
    let n = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    if n == 0 || dim == 0 {
        return Err(Error::Format {
            format: "DCLE",
            reason: format!("empty shape {n}x{dim}"),
        });
    }
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let a = read_vector(&mut r, dim)?;
        let b = read_vector(&mut r, dim)?;
        pairs.push((UnitVector::new(a)?, UnitVector::new(b)?));
    }
    EmbeddingBatch::from_pairs(pairs)
}

pub fn write_dcle_file(batch: &EmbeddingBatch, path: &Path) -> Result<()> {
    write_dcle(batch, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_dcle_file(path: &Path) -> Result<EmbeddingBatch> {
    read_dcle(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// CSV form of the same dump: header `i,k,c0,...,c{d-1}`, with 1-based
/// sample index `i` and view `k` in {1,2}.
pub fn dcle_csv(batch: &EmbeddingBatch) -> String {
    let mut out = String::from("i,k");
    for c in 0..batch.dim() {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for a in batch.anchors() {
        out.push_str(&format!("{},{}", a.sample + 1, a.view.index() + 1));
        for x in batch.view(a).components() {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_vector<R: Read>(r: &mut R, dim: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut v = Vec::with_capacity(dim);
    for _ in 0..dim {
        r.read_exact(&mut buf)?;
        v.push(f64::from_le_bytes(buf));
    }
    Ok(v)
}
