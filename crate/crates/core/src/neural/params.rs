//! Flat parameter storage for the GRU scorer and its binary checkpoint format.
//!
//! Every tensor lives in one contiguous `Vec<f64>`, addressed through a
//! [`Layout`]. Matrices are row-major with one row per output unit, so
//! `w[i * cols + j]` connects input `j` to output `i`.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "CLKRGRU\0"
//! version  u32
//! flags    u32      bit 0: metadata, bit 1: context
//! V E H P M C L1 L2 n_params   9 × u64 (P, M, C, L1, L2 are 0 when disabled)
//! params   n_params × f64
//! ```

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{io, Error, Result};

const MAGIC: &[u8; 8] = b"CLKRGRU\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetadataShape {
    /// Property vocabulary size P.
    pub properties: usize,
    /// Width of the projected property vector.
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextShape {
    /// One-hot device ⊕ platform width.
    pub inputs: usize,
    pub layer1: usize,
    pub layer2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub metadata: Option<MetadataShape>,
    pub context: Option<ContextShape>,
}

impl ModelShape {
    /// GRU input width: pair embedding plus projected metadata.
    pub fn input_dim(&self) -> usize {
        self.embed + self.metadata.map_or(0, |m| m.dim)
    }

    /// Output head width: final hidden state plus context MLP output.
    pub fn head_dim(&self) -> usize {
        self.hidden + self.context.map_or(0, |c| c.layer2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.vocab < 2 || self.embed == 0 || self.hidden == 0 {
            return bad("vocab must include the special symbols; E and H must be positive");
        }
        if matches!(self.metadata, Some(m) if m.dim == 0) {
            return bad("metadata projection width must be positive");
        }
        if matches!(self.context, Some(c) if c.layer1 == 0 || c.layer2 == 0) {
            return bad("context MLP layers must be positive");
        }
        Ok(())
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embedding: Range<usize>,
    pub meta_proj: Range<usize>,
    pub gates: [GateLayout; 3],
    pub mlp1_w: Range<usize>,
    pub mlp1_b: Range<usize>,
    pub mlp2_w: Range<usize>,
    pub mlp2_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: usize,
    pub total: usize,
}

/// Input weights, recurrent weights and bias of one GRU gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateLayout {
    pub w: Range<usize>,
    pub u: Range<usize>,
    pub b: Range<usize>,
}

/// Index into [`Layout::gates`].
pub const UPDATE: usize = 0;
pub const RESET: usize = 1;
pub const CANDIDATE: usize = 2;

impl Layout {
    pub fn new(shape: &ModelShape) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, h) = (shape.input_dim(), shape.hidden);
        let embedding = take(shape.vocab * shape.embed);
        let meta_proj = take(shape.metadata.map_or(0, |m| m.properties * m.dim));
        let mut gate = || GateLayout {
            w: take(h * d),
            u: take(h * h),
            b: take(h),
        };
        let gates = [gate(), gate(), gate()];
        let (c, l1, l2) = shape
            .context
            .map_or((0, 0, 0), |c| (c.inputs, c.layer1, c.layer2));
        let mlp1_w = take(l1 * c);
        let mlp1_b = take(l1);
        let mlp2_w = take(l2 * l1);
        let mlp2_b = take(l2);
        let head_w = take(shape.head_dim());
        let head_b = take(1).start;
        Layout {
            embedding,
            meta_proj,
            gates,
            mlp1_w,
            mlp1_b,
            mlp2_w,
            mlp2_b,
            head_w,
            head_b,
            total: at,
        }
    }

    /// Named tensors, for diagnostics and per-tensor gradient checks.
    pub fn tensors(&self) -> Vec<(&'static str, Range<usize>)> {
        let names = [
            ["w_z", "u_z", "b_z"],
            ["w_r", "u_r", "b_r"],
            ["w_h", "u_h", "b_h"],
        ];
        let mut out = vec![
            ("embedding", self.embedding.clone()),
            ("meta_proj", self.meta_proj.clone()),
        ];
        for (g, n) in self.gates.iter().zip(names) {
            out.push((n[0], g.w.clone()));
            out.push((n[1], g.u.clone()));
            out.push((n[2], g.b.clone()));
        }
        out.extend([
            ("mlp1_w", self.mlp1_w.clone()),
            ("mlp1_b", self.mlp1_b.clone()),
            ("mlp2_w", self.mlp2_w.clone()),
            ("mlp2_b", self.mlp2_b.clone()),
            ("head_w", self.head_w.clone()),
            ("head_b", self.head_b..self.head_b + 1),
        ]);
        out.retain(|(_, r)| !r.is_empty());
        out
    }
}

/// Every learnable value of the scorer. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub shape: ModelShape,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParameters {
    pub fn zeros(shape: ModelShape) -> ModelParameters {
        let layout = Layout::new(&shape);
        let data = vec![0.0; layout.total];
        ModelParameters {
            shape,
            layout,
            data,
        }
    }

    /// I.i.d. Gaussian(0, `std`) draws in layout order.
    pub fn gaussian(shape: ModelShape, std: f64, seed: u64) -> ModelParameters {
        let mut p = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("finite std");
        p.data.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        p
    }

    pub fn init(shape: ModelShape, seed: u64) -> ModelParameters {
        Self::gaussian(shape, INIT_STD, seed)
    }

    pub fn zeros_like(&self) -> ModelParameters {
        Self::zeros(self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }

    pub fn embedding_row(&self, index: usize) -> &[f64] {
        let e = self.shape.embed;
        let start = self.layout.embedding.start + index * e;
        &self.data[start..start + e]
    }

    pub fn head_bias(&self) -> f64 {
        self.data[self.layout.head_b]
    }

    pub fn set_head_bias(&mut self, b: f64) {
        self.data[self.layout.head_b] = b;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let s = &self.shape;
        let mut flags = 0u32;
        flags |= s.metadata.is_some() as u32;
        flags |= (s.context.is_some() as u32) << 1;
        let (p, m) = s.metadata.map_or((0, 0), |m| (m.properties, m.dim));
        let (c, l1, l2) = s
            .context
            .map_or((0, 0, 0), |c| (c.inputs, c.layer1, c.layer2));

        let mut out = Vec::with_capacity(16 + 9 * 8 + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        for v in [s.vocab, s.embed, s.hidden, p, m, c, l1, l2, self.data.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], origin: &Path) -> Result<ModelParameters> {
        let fail = |m: &str| Error::format(origin, format!("checkpoint: {m}"));
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(fail("truncated"));
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(fail("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let flags = u32_at(take(4)?);
        let mut dims = [0usize; 9];
        for d in &mut dims {
            *d = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        }
        let [vocab, embed, hidden, p, m, c, l1, l2, n] = dims;
        let shape = ModelShape {
            vocab,
            embed,
            hidden,
            metadata: (flags & 1 != 0).then_some(MetadataShape {
                properties: p,
                dim: m,
            }),
            context: (flags & 2 != 0).then_some(ContextShape {
                inputs: c,
                layer1: l1,
                layer2: l2,
            }),
        };
        shape.validate()?;
        let mut params = ModelParameters::zeros(shape);
        if params.len() != n {
            return Err(fail("parameter count does not match header"));
        }
        let body = take(n.checked_mul(8).ok_or_else(|| fail("size overflow"))?)?;
        for (x, chunk) in params.data.iter_mut().zip(body.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        if !cursor.is_empty() {
            return Err(fail("trailing bytes"));
        }
        Ok(params)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        io::atomic_write(path, &self.to_checkpoint_bytes())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParameters> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_shape() -> ModelShape {
        ModelShape {
            vocab: 7,
            embed: 4,
            hidden: 3,
            metadata: Some(MetadataShape {
                properties: 5,
                dim: 2,
            }),
            context: Some(ContextShape {
                inputs: 4,
                layer1: 3,
                layer2: 2,
            }),
        }
    }

    #[test]
    fn layout_sizes() {
        let s = full_shape();
        let l = Layout::new(&s);
        let d = 6;
        let expected = 7 * 4 + 5 * 2 + 3 * (3 * d + 3 * 3 + 3) + (3 * 4 + 3) + (2 * 3 + 2) + 5 + 1;
        assert_eq!(l.total, expected);
        // tensors tile the vector exactly
        let mut covered: Vec<_> = l.tensors().into_iter().map(|(_, r)| r).collect();
        covered.sort_by_key(|r| r.start);
        assert_eq!(covered.first().unwrap().start, 0);
        assert!(covered.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(covered.last().unwrap().end, l.total);
    }

    #[test]
    fn gaussian_init_statistics() {
        let shape = ModelShape {
            vocab: 2000,
            embed: 32,
            hidden: 8,
            metadata: None,
            context: None,
        };
        let p = ModelParameters::init(shape, 3);
        let n = p.len() as f64;
        let mean = p.data.iter().sum::<f64>() / n;
        let std = (p.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3);
        assert!((std - 0.01).abs() < 5e-4, "std {std}");
        assert_eq!(ModelParameters::init(shape, 3), p);
        assert_ne!(ModelParameters::init(shape, 4), p);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for shape in [
            full_shape(),
            ModelShape {
                metadata: None,
                context: None,
                ..full_shape()
            },
        ] {
            let mut p = ModelParameters::gaussian(shape, 1.0, 9);
            p.data[0] = f64::MIN_POSITIVE;
            p.data[1] = -0.0;
            let path = dir.path().join("m.ckpt");
            p.save_checkpoint(&path).unwrap();
            let q = ModelParameters::load_checkpoint(&path).unwrap();
            assert_eq!(q.shape, p.shape);
            let bits = |m: &ModelParameters| m.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&q), bits(&p));
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let p = ModelParameters::init(full_shape(), 0);
        let bytes = p.to_checkpoint_bytes();
        let origin = Path::new("x");
        assert!(ModelParameters::from_checkpoint_bytes(&bytes[..bytes.len() - 1], origin).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelParameters::from_checkpoint_bytes(&extra, origin).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(ModelParameters::from_checkpoint_bytes(&bad_magic, origin).is_err());
        let mut bad_version = bytes;
        bad_version[8] = 99;
        assert!(ModelParameters::from_checkpoint_bytes(&bad_version, origin).is_err());
    }
}
