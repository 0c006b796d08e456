//! The two lightweight classifiers: a four-layer Dense-ReLU-Dropout network
//! and a 1x1-conv CNN, with from-scratch forward, backprop, and SGD
//! training in 64-bit arithmetic.
//!
//! Training is single-threaded and fully deterministic per seed; a trained
//! model is immutable and safe to share for prediction.

mod net;

pub use net::{predict, train, DropoutMasks, Gradients, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected input of {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bad magic in model file")]
    BadMagic,
    #[error("unsupported model format version {found}")]
    VersionMismatch { found: u32 },
    #[error("model file checksum failure")]
    ChecksumFailure,
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("model file holds a {found} spec, expected {expected}")]
    SpecMismatch { expected: &'static str, found: &'static str },
}

/// Four fully connected layers `[d_in, h1, h2, h3, 1]` with ReLU between
/// them, dropout after the second and third hidden activations, and a
/// sigmoid output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnnSpec {
    pub layer_sizes: [usize; 5],
    pub dropout_rate: f64,
}

impl DnnSpec {
    pub fn new(d_in: usize, hidden: [usize; 3]) -> DnnSpec {
        DnnSpec { layer_sizes: [d_in, hidden[0], hidden[1], hidden[2], 1], dropout_rate: 0.25 }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(ModelError::InvalidSpec("zero-width layer".into()));
        }
        if self.layer_sizes[4] != 1 {
            return Err(ModelError::InvalidSpec("output layer width must be 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidSpec("dropout rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Single 1x1 convolution to 5 channels with ReLU, 2x2 max-pool, dropout
/// 0.25, a 39-wide fully connected layer with dropout 0.5, and a sigmoid
/// output. The input vector is laid out row-major on a `grid_h x grid_w`
/// grid, zero-padded past `input_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub input_dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    pub fc1_width: usize,
    pub dropout_conv: f64,
    pub dropout_fc: f64,
}

impl CnnSpec {
    /// Square grid of side `ceil(sqrt(d))`, the published channel/width
    /// constants.
    pub fn for_input_dim(d: usize) -> CnnSpec {
        let side = (d as f64).sqrt().ceil().max(1.0) as usize;
        CnnSpec {
            input_dim: d,
            grid_h: side,
            grid_w: side,
            channels: 5,
            fc1_width: 39,
            dropout_conv: 0.25,
            dropout_fc: 0.5,
        }
    }

    /// Pooled map dims; odd grid sides keep a truncated trailing window.
    pub fn pooled_dims(&self) -> (usize, usize) {
        ((self.grid_h + 1) / 2, (self.grid_w + 1) / 2)
    }

    pub fn flat_dim(&self) -> usize {
        let (ph, pw) = self.pooled_dims();
        self.channels * ph * pw
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.grid_h == 0 || self.grid_w == 0 {
            return Err(ModelError::InvalidSpec("empty input grid".into()));
        }
        if self.input_dim > self.grid_h * self.grid_w {
            return Err(ModelError::InvalidSpec("grid smaller than input".into()));
        }
        if self.channels == 0 || self.fc1_width == 0 {
            return Err(ModelError::InvalidSpec("zero-width layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_conv) || !(0.0..1.0).contains(&self.dropout_fc) {
            return Err(ModelError::InvalidSpec("dropout rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Dnn(DnnSpec),
    Cnn(CnnSpec),
}

/// An architecture template independent of the input width; the concrete
/// [`ModelSpec`] is resolved once the (possibly reduced) feature dimension
/// is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    Dnn { hidden: [usize; 3], dropout: f64 },
    Cnn,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Dnn { .. } => "dnn",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn spec_for_dim(&self, d: usize) -> ModelSpec {
        match *self {
            ModelKind::Dnn { hidden, dropout } => ModelSpec::Dnn(DnnSpec {
                layer_sizes: [d, hidden[0], hidden[1], hidden[2], 1],
                dropout_rate: dropout,
            }),
            ModelKind::Cnn => ModelSpec::Cnn(CnnSpec::for_input_dim(d)),
        }
    }
}

impl Default for ModelKind {
    fn default() -> ModelKind {
        ModelKind::Dnn { hidden: [64, 32, 16], dropout: 0.25 }
    }
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Dnn(_) => "dnn",
            ModelSpec::Cnn(_) => "cnn",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelSpec::Dnn(s) => s.layer_sizes[0],
            ModelSpec::Cnn(s) => s.input_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Dnn(s) => s.validate(),
            ModelSpec::Cnn(s) => s.validate(),
        }
    }

    /// (rows, cols) of each trainable affine layer, in forward order. The
    /// CNN's 1x1 conv is an affine map from 1 input channel to `channels`.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        match self {
            ModelSpec::Dnn(s) => (0..4)
                .map(|i| (s.layer_sizes[i + 1], s.layer_sizes[i]))
                .collect(),
            ModelSpec::Cnn(s) => vec![
                (s.channels, 1),
                (s.fc1_width, s.flat_dim()),
                (1, s.fc1_width),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(r, c)| r * c + r).sum()
    }

    /// Dropout site widths and rates, in forward order.
    pub(crate) fn dropout_sites(&self) -> Vec<(usize, f64)> {
        match self {
            ModelSpec::Dnn(s) => vec![
                (s.layer_sizes[2], s.dropout_rate),
                (s.layer_sizes[3], s.dropout_rate),
            ],
            ModelSpec::Cnn(s) => {
                vec![(s.flat_dim(), s.dropout_conv), (s.fc1_width, s.dropout_fc)]
            }
        }
    }
}

/// One affine layer: `w` is `rows x cols` row-major, `b` has `rows`
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    /// y = W x + b
    pub(crate) fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            out.push(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b[r]);
        }
    }
}

/// A classifier with its parameters and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub epochs_trained: u64,
}

/// Glorot-uniform initialization: weights drawn from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))` off a seeded
/// stream; biases start at zero.
pub fn init_model(spec: ModelSpec, seed: u64) -> Result<ModelState, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_dims()
        .into_iter()
        .map(|(rows, cols)| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let w = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
            Layer { w, b: vec![0.0; rows], rows, cols }
        })
        .collect();
    Ok(ModelState { spec, layers, seed, epochs_trained: 0 })
}

impl ModelState {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter access (layer order, weights then biases); used by
    /// the finite-difference gradient checks.
    pub fn get_param(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            if i < l.w.len() {
                return l.w[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut i: usize, v: f64) {
        for l in &mut self.layers {
            if i < l.w.len() {
                l.w[i] = v;
                return;
            }
            i -= l.w.len();
            if i < l.b.len() {
                l.b[i] = v;
                return;
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }
}

// ---------------------------------------------------------------------------
// Versioned binary container
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"BSMF";
const FORMAT_VERSION: u32 = 1;
const TAG_DNN: u8 = 1;
const TAG_CNN: u8 = 2;

/// Serialize to the versioned container: magic, format version, spec, seed,
/// epoch counter, parameters as little-endian f64, and a checksum tail.
pub fn save_model(model: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    match &model.spec {
        ModelSpec::Dnn(s) => {
            out.push(TAG_DNN);
            for &sz in &s.layer_sizes {
                out.extend_from_slice(&(sz as u32).to_le_bytes());
            }
            out.extend_from_slice(&s.dropout_rate.to_le_bytes());
        }
        ModelSpec::Cnn(s) => {
            out.push(TAG_CNN);
            for v in [s.input_dim, s.grid_h, s.grid_w, s.channels, s.fc1_width] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            out.extend_from_slice(&s.dropout_conv.to_le_bytes());
            out.extend_from_slice(&s.dropout_fc.to_le_bytes());
        }
    }
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.extend_from_slice(&model.epochs_trained.to_le_bytes());
    out.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for l in &model.layers {
        for &v in l.w.iter().chain(&l.b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest[..8]);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Malformed("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }
}

/// Load a container written by [`save_model`]. `load o save` is identity.
pub fn load_model(bytes: &[u8]) -> Result<ModelState, ModelError> {
    if bytes.len() < 12 + 8 {
        return Err(ModelError::Malformed("file too small".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let digest = Sha256::digest(body);
    if &digest[..8] != tail {
        return Err(ModelError::ChecksumFailure);
    }

    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch { found: version });
    }

    let spec = match c.u8()? {
        TAG_DNN => {
            let mut sizes = [0usize; 5];
            for s in &mut sizes {
                *s = c.u32()? as usize;
            }
            ModelSpec::Dnn(DnnSpec { layer_sizes: sizes, dropout_rate: c.f64()? })
        }
        TAG_CNN => {
            let input_dim = c.u32()? as usize;
            let grid_h = c.u32()? as usize;
            let grid_w = c.u32()? as usize;
            let channels = c.u32()? as usize;
            let fc1_width = c.u32()? as usize;
            ModelSpec::Cnn(CnnSpec {
                input_dim,
                grid_h,
                grid_w,
                channels,
                fc1_width,
                dropout_conv: c.f64()?,
                dropout_fc: c.f64()?,
            })
        }
        t => return Err(ModelError::Malformed(format!("unknown spec tag {t}"))),
    };
    spec.validate()?;

    let seed = c.u64()?;
    let epochs_trained = c.u64()?;
    let n_params = c.u64()? as usize;
    if n_params != spec.param_count() {
        return Err(ModelError::Malformed(format!(
            "parameter count {n_params} does not match spec ({})",
            spec.param_count()
        )));
    }

    let layers = spec
        .layer_dims()
        .into_iter()
        .map(|(rows, cols)| {
            let mut w = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                w.push(c.f64()?);
            }
            let mut b = Vec::with_capacity(rows);
            for _ in 0..rows {
                b.push(c.f64()?);
            }
            Ok(Layer { w, b, rows, cols })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    if c.pos != body.len() {
        return Err(ModelError::Malformed("trailing bytes".into()));
    }

    Ok(ModelState { spec, layers, seed, epochs_trained })
}

/// Load and require a particular architecture.
pub fn load_model_expecting(bytes: &[u8], kind: &'static str) -> Result<ModelState, ModelError> {
    let model = load_model(bytes)?;
    if model.spec.kind() != kind {
        return Err(ModelError::SpecMismatch { expected: kind, found: model.spec.kind() });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dnn_param_count_shape_arithmetic() {
        let spec = ModelSpec::Dnn(DnnSpec::new(57, [64, 32, 16]));
        let expected = 57 * 64 + 64 + 64 * 32 + 32 + 32 * 16 + 16 + 16 + 1;
        assert_eq!(spec.param_count(), expected);
        assert_eq!(expected, 6337);
    }

    #[test]
    fn cnn_conv_params() {
        let spec = CnnSpec::for_input_dim(63);
        assert_eq!((spec.grid_h, spec.grid_w), (8, 8));
        let dims = ModelSpec::Cnn(spec).layer_dims();
        assert_eq!(dims[0], (5, 1)); // 5 weights + 5 biases = 10 conv params
        assert_eq!(spec.pooled_dims(), (4, 4));
        assert_eq!(spec.flat_dim(), 80);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = ModelSpec::Dnn(DnnSpec::new(10, [8, 6, 4]));
        let a = init_model(spec, 7).unwrap();
        let b = init_model(spec, 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(spec, 8).unwrap();
        assert_ne!(a.layers[0].w, c.layers[0].w);
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let spec = ModelSpec::Dnn(DnnSpec::new(10, [8, 6, 4]));
        let m = init_model(spec, 1).unwrap();
        for l in &m.layers {
            assert!(l.b.iter().all(|&v| v == 0.0));
            let limit = (6.0 / (l.rows + l.cols) as f64).sqrt();
            assert!(l.w.iter().all(|&v| v.abs() < limit));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = ModelSpec::Dnn(DnnSpec { layer_sizes: [4, 3, 2, 1, 2], dropout_rate: 0.25 });
        assert!(matches!(init_model(bad, 0), Err(ModelError::InvalidSpec(_))));
        let bad = ModelSpec::Cnn(CnnSpec { input_dim: 10, grid_h: 3, grid_w: 3, ..CnnSpec::for_input_dim(9) });
        assert!(matches!(init_model(bad, 0), Err(ModelError::InvalidSpec(_))));
    }

    #[test]
    fn save_load_roundtrip_identity() {
        let spec = ModelSpec::Cnn(CnnSpec::for_input_dim(57));
        let m = init_model(spec, 99).unwrap();
        let bytes = save_model(&m);
        let back = load_model(&bytes).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn corrupted_checksum_detected() {
        let m = init_model(ModelSpec::Dnn(DnnSpec::new(4, [3, 3, 2])), 1).unwrap();
        let mut bytes = save_model(&m);
        let n = bytes.len();
        bytes[n - 1] ^= 0xFF;
        assert!(matches!(load_model(&bytes), Err(ModelError::ChecksumFailure)));
        // flipping a payload byte also trips the checksum
        let mut bytes = save_model(&m);
        bytes[40] ^= 0x01;
        assert!(matches!(load_model(&bytes), Err(ModelError::ChecksumFailure)));
    }

    #[test]
    fn bad_magic_and_version() {
        let m = init_model(ModelSpec::Dnn(DnnSpec::new(4, [3, 3, 2])), 1).unwrap();
        let mut bytes = save_model(&m);
        bytes[0] = b'X';
        // checksum recomputed so the magic check is reached
        let body_len = bytes.len() - 8;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest[..8]);
        assert!(matches!(load_model(&bytes), Err(ModelError::BadMagic)));

        let mut bytes = save_model(&m);
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest[..8]);
        assert!(matches!(
            load_model(&bytes),
            Err(ModelError::VersionMismatch { found: 9 })
        ));
    }

    #[test]
    fn loading_wrong_kind_is_a_spec_error() {
        let m = init_model(ModelSpec::Dnn(DnnSpec::new(4, [3, 3, 2])), 1).unwrap();
        let bytes = save_model(&m);
        assert!(matches!(
            load_model_expecting(&bytes, "cnn"),
            Err(ModelError::SpecMismatch { expected: "cnn", found: "dnn" })
        ));
        assert!(load_model_expecting(&bytes, "dnn").is_ok());
    }

    #[test]
    fn param_accessors_cover_all_layers() {
        let mut m = init_model(ModelSpec::Dnn(DnnSpec::new(3, [2, 2, 2])), 5).unwrap();
        let n = m.param_count();
        let last = m.get_param(n - 1);
        m.set_param(n - 1, last + 1.0);
        assert_eq!(m.get_param(n - 1), last + 1.0);
        assert_eq!(m.layers.last().unwrap().b[0], last + 1.0);
    }
}
