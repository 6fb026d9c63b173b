//! Small MLP encoder plus linear projector with output normalization, and
//! exact manual forward/backward passes.
//!
//! Forward: dense encoder layers with ReLU between them, then the projector,
//! then `z = g / ||g||`. Backward applies the normalization Jacobian
//! `(I - z z^T) / ||g||` to the upstream embedding gradient first, and
//! standard dense/ReLU backprop from there. ReLU takes subgradient 0 at 0.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::embedding::UnitVector;
use crate::error::{Error, Result};

/// Layer widths: input, one hidden width per encoder layer, embedding.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub embedding: usize,
}

impl LayerDims {
    pub fn new(input: usize, hidden: Vec<usize>, embedding: usize) -> Result<Self> {
        let dims = LayerDims { input, hidden, embedding };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.embedding == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidDims {
                reason: format!("all widths must be >= 1, got {self:?}"),
            });
        }
        Ok(())
    }
}

/// One dense layer: `rows x cols` row-major weights plus a bias per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseLayer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut layer = DenseLayer::zeros(n, n);
        for i in 0..n {
            layer.weights[i * n + i] = 1.0;
        }
        layer
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.cols)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

/// Encoder `f` and projector `g` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub encoder_layers: Vec<DenseLayer>,
    pub projector_layers: Vec<DenseLayer>,
}

impl EncoderParams {
    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder_layers.iter().chain(&self.projector_layers)
    }

    /// Whether ReLU follows the layer at `layer_idx` in the combined list:
    /// between consecutive encoder layers only.
    fn relu_after(&self, layer_idx: usize) -> bool {
        layer_idx + 1 < self.encoder_layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers().next().map(|l| l.cols).unwrap_or(0)
    }

    /// Widths reconstructed from the layer shapes.
    pub fn dims(&self) -> LayerDims {
        LayerDims {
            input: self.input_dim(),
            hidden: self.encoder_layers.iter().map(|l| l.rows).collect(),
            embedding: self.embedding_dim(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.projector_layers.last().map(|l| l.rows).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Sum of every weight and bias; cheap fingerprint for golden tests.
    pub fn checksum(&self) -> f64 {
        self.layers()
            .map(|l| l.weights.iter().sum::<f64>() + l.bias.iter().sum::<f64>())
            .sum()
    }

    /// In-place SGD update `p -= lr * g`.
    pub fn apply_step(&mut self, grads: &ParamGrads, lr: f64) {
        let apply = |layers: &mut [DenseLayer], grads: &[LayerGrads]| {
            for (layer, g) in layers.iter_mut().zip(grads) {
                for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= lr * gw;
                }
                for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= lr * gb;
                }
            }
        };
        apply(&mut self.encoder_layers, &grads.encoder);
        apply(&mut self.projector_layers, &grads.projector);
    }
}

/// Deterministic initialization: weights `Normal(0, 1/fan_in)` (standard
/// deviation `1/sqrt(fan_in)`), biases zero. The encoder gets one layer per
/// hidden width; the projector is a single linear layer onto the embedding.
pub fn init_params(seed: u64, dims: &LayerDims) -> Result<EncoderParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![dims.input];
    widths.extend(&dims.hidden);
    widths.push(dims.embedding);

    let mut draw = |rows: usize, cols: usize| -> DenseLayer {
        let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).unwrap();
        let mut layer = DenseLayer::zeros(rows, cols);
        for w in layer.weights.iter_mut() {
            *w = rng.sample(normal);
        }
        layer
    };

    let mut all: Vec<DenseLayer> = widths
        .windows(2)
        .map(|pair| draw(pair[1], pair[0]))
        .collect();
    let projector = all.split_off(all.len() - 1);
    Ok(EncoderParams {
        encoder_layers: all,
        projector_layers: projector,
    })
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Per layer, in encoder-then-projector order.
    pub pre_activations: Vec<Vec<f64>>,
    /// Per layer, after its activation (identity where no ReLU applies).
    pub activations: Vec<Vec<f64>>,
    /// Raw projector output `g` before normalization.
    pub projector_out: Vec<f64>,
    pub norm: f64,
    pub z: UnitVector,
}

pub fn forward(params: &EncoderParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            expected: format!("input dim {}", params.input_dim()),
            got: format!("{}", x.len()),
        });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut pre_activations = Vec::new();
    let mut activations = Vec::new();
    let mut cur = x.to_vec();
    for (idx, layer) in params.layers().enumerate() {
        let pre = layer.forward(&cur);
        let act = if params.relu_after(idx) {
            pre.iter().map(|v| v.max(0.0)).collect()
        } else {
            pre.clone()
        };
        pre_activations.push(pre);
        cur = act.clone();
        activations.push(act);
    }
    let projector_out = cur;
    let norm = crate::embedding::l2_norm(&projector_out);
    if norm < 1e-30 {
        return Err(Error::ZeroVector { norm });
    }
    let z = UnitVector::new(projector_out.iter().map(|v| v / norm).collect())?;
    Ok(ForwardTrace {
        input: x.to_vec(),
        pre_activations,
        activations,
        projector_out,
        norm,
        z,
    })
}

/// Weight and bias gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients aligned with [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub encoder: Vec<LayerGrads>,
    pub projector: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        let zero = |layers: &[DenseLayer]| {
            layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        ParamGrads {
            encoder: zero(&params.encoder_layers),
            projector: zero(&params.projector_layers),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        let add = |dst: &mut Vec<LayerGrads>, src: &[LayerGrads]| {
            for (d, s) in dst.iter_mut().zip(src) {
                for (a, b) in d.weights.iter_mut().zip(&s.weights) {
                    *a += b;
                }
                for (a, b) in d.bias.iter_mut().zip(&s.bias) {
                    *a += b;
                }
            }
        };
        add(&mut self.encoder, &other.encoder);
        add(&mut self.projector, &other.projector);
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.encoder.iter_mut().chain(&mut self.projector) {
            for w in g.weights.iter_mut() {
                *w *= factor;
            }
            for b in g.bias.iter_mut() {
                *b *= factor;
            }
        }
    }

    /// `momentum * self + other`, the classical velocity update.
    pub fn momentum_update(&mut self, momentum: f64, other: &ParamGrads) {
        self.scale(momentum);
        self.add_assign(other);
    }

    pub fn euclidean_norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.encoder.iter().chain(&self.projector) {
            sq += g.weights.iter().map(|w| w * w).sum::<f64>();
            sq += g.bias.iter().map(|b| b * b).sum::<f64>();
        }
        sq.sqrt()
    }
}

/// Backward result: parameter gradients plus the gradient at the input.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub grads: ParamGrads,
    pub input_grad: Vec<f64>,
}

/// Chain an upstream `dL/dz` through normalization and every layer.
pub fn backward(
    params: &EncoderParams,
    trace: &ForwardTrace,
    upstream: &[f64],
) -> Result<BackwardResult> {
    let d = params.embedding_dim();
    if upstream.len() != d || trace.projector_out.len() != d {
        return Err(Error::ShapeMismatch {
            op: "backward",
            expected: format!("embedding dim {d}"),
            got: format!("upstream {}, trace {}", upstream.len(), trace.projector_out.len()),
        });
    }

    // dL/dg = (I - z z^T) upstream / ||g||
    let z = trace.z.components();
    let radial: f64 = z.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let mut delta: Vec<f64> = z
        .iter()
        .zip(upstream)
        .map(|(zc, u)| (u - radial * zc) / trace.norm)
        .collect();

    let layers: Vec<&DenseLayer> = params.layers().collect();
    let mut grads = ParamGrads::zeros_like(params);
    for idx in (0..layers.len()).rev() {
        let layer = layers[idx];
        // delta currently sits after layer idx's activation
        if params.relu_after(idx) {
            for (dv, pre) in delta.iter_mut().zip(&trace.pre_activations[idx]) {
                if *pre <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        let input = if idx == 0 {
            &trace.input
        } else {
            &trace.activations[idx - 1]
        };
        let slot = if idx < params.encoder_layers.len() {
            &mut grads.encoder[idx]
        } else {
            &mut grads.projector[idx - params.encoder_layers.len()]
        };
        slot.bias.copy_from_slice(&delta);
        for (w_row, &d) in slot.weights.chunks_exact_mut(layer.cols).zip(&delta) {
            for (w, inp) in w_row.iter_mut().zip(input) {
                *w = d * inp;
            }
        }
        let mut prev = vec![0.0; layer.cols];
        for (row, &d) in layer.weights.chunks_exact(layer.cols).zip(&delta) {
            for (p, w) in prev.iter_mut().zip(row) {
                *p += w * d;
            }
        }
        delta = prev;
    }

    Ok(BackwardResult {
        grads,
        input_grad: delta,
    })
}

// --- DCLP checkpoint format --------------------------------------------------
//
// `DCLP`, u32 LE layer count, then per layer (encoder layers first, projector
// last): u32 rows, u32 cols, rows*cols f64 LE row-major weights, rows f64 LE
// biases. On load the final layer becomes the projector.

const DCLP_MAGIC: &[u8; 4] = b"DCLP";

pub fn write_dclp<W: Write>(params: &EncoderParams, mut w: W) -> Result<()> {
    let count = params.encoder_layers.len() + params.projector_layers.len();
    w.write_all(DCLP_MAGIC)?;
    w.write_all(&(count as u32).to_le_bytes())?;
    for layer in params.layers() {
        w.write_all(&(layer.rows as u32).to_le_bytes())?;
        w.write_all(&(layer.cols as u32).to_le_bytes())?;
        for v in layer.weights.iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dclp<R: Read>(mut r: R) -> Result<EncoderParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DCLP_MAGIC {
        return Err(Error::Format {
            format: "DCLP",
            reason: format!("bad magic {magic:?}"),
        });
    }
    let count = read_u32(&mut r)? as usize;
    if count == 0 {
        return Err(Error::Format {
            format: "DCLP",
            reason: "zero layers".into(),
        });
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::Format {
                format: "DCLP",
                reason: format!("empty layer {rows}x{cols}"),
            });
        }
        let mut layer = DenseLayer::zeros(rows, cols);
        read_f64s(&mut r, &mut layer.weights)?;
        read_f64s(&mut r, &mut layer.bias)?;
        layers.push(layer);
    }
    for pair in layers.windows(2) {
        if pair[1].cols != pair[0].rows {
            return Err(Error::Format {
                format: "DCLP",
                reason: format!(
                    "layer shapes do not chain: {}x{} then {}x{}",
                    pair[0].rows, pair[0].cols, pair[1].rows, pair[1].cols
                ),
            });
        }
    }
    let projector = layers.split_off(layers.len() - 1);
    Ok(EncoderParams {
        encoder_layers: layers,
        projector_layers: projector,
    })
}

pub fn write_dclp_file(params: &EncoderParams, path: &Path) -> Result<()> {
    write_dclp(params, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_dclp_file(path: &Path) -> Result<EncoderParams> {
    read_dclp(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64]) -> Result<()> {
    let mut buf = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}
