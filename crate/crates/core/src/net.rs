//! The compact adapter network: a fixed three-layer perceptron differentiated
//! by hand.
//!
//! Topology: input (dimension `d`) -> hidden layer 1 (tanh) -> hidden layer 2
//! (identity; the "compact feature" used for template matching) -> output
//! logits, one per enrolled identity (plus one for the garbage class when
//! that loss variant is used).
//!
//! Parameters and activations are held as `f64`. The OSAM model file stores
//! weights as IEEE-754 binary32, so freshly initialized parameters round-trip
//! exactly while trained parameters are quantized once on save.

use crate::error::{Error, Result};
use crate::losses::{LossSpec, LossVariant};
use crate::rng::Rng;
use std::path::Path;

/// Weights and biases of the adapter network. Weight matrices are row-major
/// with shape `(input_dim, output_dim)`: `w[i * out + j]` connects input
/// coordinate `i` to output unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub num_outputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl AdapterParams {
    pub fn zeros(input_dim: usize, hidden1: usize, hidden2: usize, num_outputs: usize) -> Self {
        assert!(
            input_dim > 0 && hidden1 > 0 && hidden2 > 0,
            "all layer sizes must be positive"
        );
        assert!(num_outputs >= 2, "the output layer scores at least two classes");
        AdapterParams {
            input_dim,
            hidden1,
            hidden2,
            num_outputs,
            w1: vec![0.0; input_dim * hidden1],
            b1: vec![0.0; hidden1],
            w2: vec![0.0; hidden1 * hidden2],
            b2: vec![0.0; hidden2],
            w3: vec![0.0; hidden2 * num_outputs],
            b3: vec![0.0; num_outputs],
        }
    }

    /// Glorot-uniform initialization from a seeded generator; biases zero.
    /// Weights are quantized to binary32 so a freshly initialized model
    /// round-trips through the OSAM file format without loss.
    pub fn init(seed: u64, input_dim: usize, hidden1: usize, hidden2: usize, num_outputs: usize) -> Self {
        let mut params = Self::zeros(input_dim, hidden1, hidden2, num_outputs);
        let mut rng = Rng::with_stream(seed, 0xADA7);
        for (w, fan_in, fan_out) in [
            (&mut params.w1, input_dim, hidden1),
            (&mut params.w2, hidden1, hidden2),
            (&mut params.w3, hidden2, num_outputs),
        ] {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.uniform_in(-limit, limit) as f32 as f64;
            }
        }
        params
    }

    /// Total number of stored parameter entries, by enumeration.
    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(&self.b3)
            .all(|v| v.is_finite())
    }
}

/// Closed-form parameter count for the fixed topology.
pub fn param_count_formula(d: usize, h1: usize, h2: usize, c: usize) -> usize {
    d * h1 + h1 + h1 * h2 + h2 + h2 * c + c
}

/// All intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub logits: Vec<f64>,
}

fn affine(x: &[f64], w: &[f64], b: &[f64], in_dim: usize, out_dim: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), in_dim);
    debug_assert_eq!(w.len(), in_dim * out_dim);
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

/// Runs the network on one sample: `h1 = tanh(W1^T x + b1)`,
/// `h2 = W2^T h1 + b2`, `logits = W3^T h2 + b3`.
pub fn forward(params: &AdapterParams, x: &[f64]) -> ForwardTrace {
    assert_eq!(
        x.len(),
        params.input_dim,
        "input has dimension {} but the network expects {}",
        x.len(),
        params.input_dim
    );
    let mut h1 = affine(x, &params.w1, &params.b1, params.input_dim, params.hidden1);
    for v in h1.iter_mut() {
        *v = v.tanh();
    }
    let h2 = affine(&h1, &params.w2, &params.b2, params.hidden1, params.hidden2);
    let logits = affine(&h2, &params.w3, &params.b3, params.hidden2, params.num_outputs);
    ForwardTrace {
        input: x.to_vec(),
        h1,
        h2,
        logits,
    }
}

/// Loss gradients with the same shapes as [`AdapterParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &AdapterParams) -> Self {
        ParamGrads {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
            w3: vec![0.0; params.w3.len()],
            b3: vec![0.0; params.b3.len()],
        }
    }

    pub fn add_in_place(&mut self, other: &ParamGrads) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn blocks(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Exact reverse-mode gradients through the three layers.
///
/// `grad_logits` is the loss cotangent at the output layer. `grad_h2` is an
/// additional direct cotangent at the compact-feature node (the objectosphere
/// magnitude penalty feeds the loss from there); pass an empty slice or zeros
/// for losses defined on logits alone.
#[allow(clippy::needless_range_loop)]
pub fn backward(
    params: &AdapterParams,
    trace: &ForwardTrace,
    grad_logits: &[f64],
    grad_h2: &[f64],
) -> ParamGrads {
    assert_eq!(grad_logits.len(), params.num_outputs, "grad_logits shape mismatch");
    assert!(
        grad_h2.is_empty() || grad_h2.len() == params.hidden2,
        "grad_h2 must be empty or of compact-feature length"
    );
    let mut grads = ParamGrads::zeros_like(params);

    // Output layer.
    grads.b3.copy_from_slice(grad_logits);
    for i in 0..params.hidden2 {
        let row = &mut grads.w3[i * params.num_outputs..(i + 1) * params.num_outputs];
        for (g, &gl) in row.iter_mut().zip(grad_logits) {
            *g = trace.h2[i] * gl;
        }
    }

    // Cotangent at h2: backpropagated from the logits plus the direct term.
    let mut gh2 = vec![0.0; params.hidden2];
    for i in 0..params.hidden2 {
        let row = &params.w3[i * params.num_outputs..(i + 1) * params.num_outputs];
        let mut acc = 0.0;
        for (&w, &gl) in row.iter().zip(grad_logits) {
            acc += w * gl;
        }
        gh2[i] = acc;
    }
    if !grad_h2.is_empty() {
        for (g, &extra) in gh2.iter_mut().zip(grad_h2) {
            *g += extra;
        }
    }

    // Second layer (identity activation).
    grads.b2.copy_from_slice(&gh2);
    for i in 0..params.hidden1 {
        let row = &mut grads.w2[i * params.hidden2..(i + 1) * params.hidden2];
        for (g, &gv) in row.iter_mut().zip(&gh2) {
            *g = trace.h1[i] * gv;
        }
    }

    // First layer, through the tanh derivative 1 - h1^2.
    let mut ga1 = vec![0.0; params.hidden1];
    for j in 0..params.hidden1 {
        let row = &params.w2[j * params.hidden2..(j + 1) * params.hidden2];
        let mut acc = 0.0;
        for (&w, &gv) in row.iter().zip(&gh2) {
            acc += w * gv;
        }
        ga1[j] = acc * (1.0 - trace.h1[j] * trace.h1[j]);
    }
    grads.b1.copy_from_slice(&ga1);
    for i in 0..params.input_dim {
        let row = &mut grads.w1[i * params.hidden1..(i + 1) * params.hidden1];
        for (g, &gv) in row.iter_mut().zip(&ga1) {
            *g = trace.input[i] * gv;
        }
    }

    grads
}

/// Velocity buffers and hyperparameters for SGD with classical momentum.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub v_w1: Vec<f64>,
    pub v_b1: Vec<f64>,
    pub v_w2: Vec<f64>,
    pub v_b2: Vec<f64>,
    pub v_w3: Vec<f64>,
    pub v_b3: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &AdapterParams, learning_rate: f64, momentum: f64) -> Self {
        assert!(learning_rate >= 0.0 && learning_rate.is_finite());
        assert!((0.0..1.0).contains(&momentum));
        OptimizerState {
            learning_rate,
            momentum,
            v_w1: vec![0.0; params.w1.len()],
            v_b1: vec![0.0; params.b1.len()],
            v_w2: vec![0.0; params.w2.len()],
            v_b2: vec![0.0; params.b2.len()],
            v_w3: vec![0.0; params.w3.len()],
            v_b3: vec![0.0; params.b3.len()],
        }
    }
}

/// One momentum step: `v <- momentum * v + g`, `p <- p - lr * v`.
/// Returns updated copies; the inputs are untouched.
pub fn sgd_step(
    params: &AdapterParams,
    grads: &ParamGrads,
    state: &OptimizerState,
) -> (AdapterParams, OptimizerState) {
    let mut params = params.clone();
    let mut state = state.clone();
    let lr = state.learning_rate;
    let mu = state.momentum;
    let pairs: [(&mut Vec<f64>, &Vec<f64>, &mut Vec<f64>); 6] = [
        (&mut params.w1, &grads.w1, &mut state.v_w1),
        (&mut params.b1, &grads.b1, &mut state.v_b1),
        (&mut params.w2, &grads.w2, &mut state.v_w2),
        (&mut params.b2, &grads.b2, &mut state.v_b2),
        (&mut params.w3, &grads.w3, &mut state.v_w3),
        (&mut params.b3, &grads.b3, &mut state.v_b3),
    ];
    for (p, g, v) in pairs {
        assert_eq!(p.len(), g.len(), "gradient shape mismatch");
        for ((pv, &gv), vv) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    (params, state)
}

const OSAM_MAGIC: [u8; 4] = *b"OSAM";
const OSAM_VERSION: u32 = 1;

/// Serializes a model (parameters plus its training loss configuration).
pub fn encode_model(params: &AdapterParams, loss: &LossSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + 4 * params.param_count());
    out.extend_from_slice(&OSAM_MAGIC);
    out.extend_from_slice(&OSAM_VERSION.to_le_bytes());
    for dim in [params.input_dim, params.hidden1, params.hidden2, params.num_outputs] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&loss.variant.tag().to_le_bytes());
    for hp in [loss.margin, loss.xi, loss.lambda] {
        out.extend_from_slice(&hp.to_le_bytes());
    }
    for block in [&params.w1, &params.b1, &params.w2, &params.b2, &params.w3, &params.b3] {
        for &v in block.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes an OSAM byte stream.
pub fn decode_model(bytes: &[u8], path: &str) -> Result<(AdapterParams, LossSpec)> {
    const HEADER_LEN: usize = 4 + 4 + 16 + 4 + 24;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("truncated header: {} bytes, need {HEADER_LEN}", bytes.len()),
        ));
    }
    if bytes[0..4] != OSAM_MAGIC {
        return Err(Error::format(path, "bad magic at byte offset 0, expected \"OSAM\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != OSAM_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version} at byte offset 4"),
        ));
    }
    let mut dims = [0usize; 4];
    for (k, d) in dims.iter_mut().enumerate() {
        let off = 8 + 4 * k;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if *d == 0 {
            return Err(Error::format(path, format!("zero layer size at byte offset {off}")));
        }
        if *d > (1 << 24) {
            return Err(Error::format(
                path,
                format!("implausible layer size {d} at byte offset {off}"),
            ));
        }
    }
    let [d, h1, h2, c] = dims;
    if c < 2 {
        return Err(Error::format(
            path,
            "output layer must score at least two classes (byte offset 20)",
        ));
    }
    let tag = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
    let variant = LossVariant::from_tag(tag)
        .ok_or_else(|| Error::format(path, format!("unknown loss variant tag {tag} at byte offset 24")))?;
    let mut hps = [0.0f64; 3];
    for (k, hp) in hps.iter_mut().enumerate() {
        let off = 28 + 8 * k;
        *hp = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    }
    let loss = LossSpec {
        variant,
        margin: hps[0],
        xi: hps[1],
        lambda: hps[2],
    };
    loss.validate().map_err(|e| Error::format(path, format!("bad hyperparameters: {e}")))?;

    let expected = HEADER_LEN + 4 * param_count_formula(d, h1, h2, c);
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("file is {} bytes but header implies {expected}", bytes.len()),
        ));
    }
    let mut params = AdapterParams::zeros(d, h1, h2, c);
    let mut off = HEADER_LEN;
    for block in [
        &mut params.w1,
        &mut params.b1,
        &mut params.w2,
        &mut params.b2,
        &mut params.w3,
        &mut params.b3,
    ] {
        for v in block.iter_mut() {
            let raw = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !raw.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite weight at byte offset {off} in {path}"
                )));
            }
            *v = raw as f64;
            off += 4;
        }
    }
    Ok((params, loss))
}

pub fn save_model(params: &AdapterParams, loss: &LossSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let name = path.display().to_string();
    if !params.is_finite() {
        return Err(Error::Numeric("refusing to save non-finite parameters".into()));
    }
    std::fs::write(path, encode_model(params, loss)).map_err(|e| Error::io(&name, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(AdapterParams, LossSpec)> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(&name, e))?;
    decode_model(&bytes, &name)
}
