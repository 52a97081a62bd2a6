//! Residual dense network mapping a nodal field to a nodal field of the
//! same length.
//!
//! Layout (channels × positions, positions = all DOFs in element order):
//!
//! ```text
//! x ─ conv k (1→F) ─┬─ conv k (F→F) ─ RDB_1 ─ … ─ RDB_D
//!                   │                   │           │
//!                   │        concat(RDB_1 … RDB_D) ─ conv 1 (DF→F) ─ conv k (F→F)
//!                   └──────────────────────────────────────────── + ─ conv k (F→1)
//! ```
//!
//! Each block stacks `L` conv+ReLU layers with dense concatenation
//! (layer ℓ sees `F + ℓ g` channels and emits `g`), then fuses back to `F`
//! channels with a 1×1 conv and adds its own input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape, Tensor};
use crate::error::{DgError, Result};
use crate::field::ElementField;
use crate::parallel::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RDNConfig {
    /// Number of residual dense blocks (D).
    pub blocks: usize,
    /// Conv layers per block (L).
    pub layers: usize,
    /// Growth rate (g).
    pub growth: usize,
    /// Feature channels (F).
    pub features: usize,
    /// Kernel size (odd).
    pub kernel: usize,
    /// Optional affine map `(x - shift) * scale` applied to the input.
    pub input_affine: Option<(f64, f64)>,
}

impl Default for RDNConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            layers: 8,
            growth: 32,
            features: 32,
            kernel: 3,
            input_affine: None,
        }
    }
}

impl RDNConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.layers == 0 || self.growth == 0 || self.features == 0 {
            return Err(DgError::Config("network sizes must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(DgError::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if let Some((_, s)) = self.input_affine {
            if !(s.is_finite() && s != 0.0) {
                return Err(DgError::Config("input scale must be finite and non-zero".into()));
            }
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (d, l, g, f, k) = (self.blocks, self.layers, self.growth, self.features, self.kernel);
        let conv = |c_in: usize, c_out: usize, k: usize| c_in * c_out * k + c_out;
        let block: usize = (0..l).map(|i| conv(f + i * g, g, k)).sum::<usize>() + conv(f + l * g, f, 1);
        conv(1, f, k) + conv(f, f, k) + d * block + conv(d * f, f, 1) + conv(f, f, k) + conv(f, 1, k)
    }

    /// Conv layer shapes in parameter order: `(name, c_in, c_out, k)`.
    fn layer_shapes(&self) -> Vec<(String, usize, usize, usize)> {
        let (d, l, g, f, k) = (self.blocks, self.layers, self.growth, self.features, self.kernel);
        let mut v = vec![("shallow1".to_string(), 1, f, k), ("shallow2".to_string(), f, f, k)];
        for b in 0..d {
            for i in 0..l {
                v.push((format!("rdb{b}.layer{i}"), f + i * g, g, k));
            }
            v.push((format!("rdb{b}.fusion"), f + l * g, f, 1));
        }
        v.push(("global_fusion".to_string(), d * f, f, 1));
        v.push(("global_conv".to_string(), f, f, k));
        v.push(("output".to_string(), f, 1, k));
        v
    }
}

/// Weights and biases of every conv layer, stored as `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: RDNConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// Initialisation options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    pub seed: u64,
    /// Zero the output conv so an untrained network predicts `w ≡ 0`.
    pub zero_output: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            zero_output: true,
        }
    }
}

impl NetworkParams {
    /// Uniform `±sqrt(1/(c_in k))` weights, zero biases.
    pub fn init(config: RDNConfig, opts: InitOptions) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let mut names = Vec::with_capacity(2 * shapes.len());
        let mut tensors = Vec::with_capacity(2 * shapes.len());
        for (i, (name, c_in, c_out, k)) in shapes.into_iter().enumerate() {
            let bound = (1.0 / (c_in * k) as f64).sqrt();
            let mut w = Tensor::zeros(vec![c_out, c_in, k]);
            if !(opts.zero_output && i == last) {
                w.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            }
            names.push(format!("{name}.weight"));
            tensors.push(w);
            names.push(format!("{name}.bias"));
            tensors.push(Tensor::zeros(vec![c_out]));
        }
        Ok(Self { config, names, tensors })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Flattened copy of all parameter values.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Flattened gradients (zeros where none were accumulated).
    pub fn flat_grad(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| match &t.grad {
                Some(g) => g.clone(),
                None => vec![0.0; t.len()],
            })
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(DgError::shape(self.param_count(), flat.len()));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Parameter nodes loaded onto a tape, shared by every forward pass on it.
#[derive(Debug, Clone)]
pub struct ParamNodes(Vec<NodeId>);

impl ParamNodes {
    pub fn load(tape: &mut Tape<'_>, params: &NetworkParams) -> Self {
        Self(
            params
                .tensors
                .iter()
                .enumerate()
                .map(|(i, t)| tape.param(i, t))
                .collect(),
        )
    }

    fn conv(&self, layer: usize) -> (NodeId, NodeId) {
        (self.0[2 * layer], self.0[2 * layer + 1])
    }
}

/// One residual dense block; `first_layer` indexes its first conv.
pub fn rdb_forward(
    tape: &mut Tape<'_>,
    p: &ParamNodes,
    config: &RDNConfig,
    first_layer: usize,
    x: NodeId,
) -> Result<NodeId> {
    let mut feats = vec![x];
    for i in 0..config.layers {
        let inp = if i == 0 { x } else { tape.concat(&feats)? };
        let (w, b) = p.conv(first_layer + i);
        let y = tape.conv1d(inp, w, b)?;
        feats.push(tape.relu(y));
    }
    let cat = tape.concat(&feats)?;
    let (w, b) = p.conv(first_layer + config.layers);
    let fused = tape.conv1d(cat, w, b)?;
    tape.add(fused, x)
}

/// Full network on a `[1, n]` input node; returns a `[1, n]` node.
pub fn rdn_forward_on_tape(tape: &mut Tape<'_>, p: &ParamNodes, config: &RDNConfig, x: NodeId) -> Result<NodeId> {
    let x = match config.input_affine {
        Some((shift, scale)) => {
            let n = tape.shape(x)[1];
            let c = tape.input(vec![1, n], vec![-shift * scale; n], false)?;
            let xs = tape.scale(x, scale);
            tape.add(xs, c)?
        }
        None => x,
    };
    let (w, b) = p.conv(0);
    let sf1 = tape.conv1d(x, w, b)?;
    let (w, b) = p.conv(1);
    let mut h = tape.conv1d(sf1, w, b)?;
    let mut outs = Vec::with_capacity(config.blocks);
    let per_block = config.layers + 1;
    for d in 0..config.blocks {
        h = rdb_forward(tape, p, config, 2 + d * per_block, h)?;
        outs.push(h);
    }
    let next = 2 + config.blocks * per_block;
    let cat = tape.concat(&outs)?;
    let (w, b) = p.conv(next);
    let gf = tape.conv1d(cat, w, b)?;
    let (w, b) = p.conv(next + 1);
    let gf = tape.conv1d(gf, w, b)?;
    let skip = tape.add(gf, sf1)?;
    let (w, b) = p.conv(next + 2);
    tape.conv1d(skip, w, b)
}

/// Inference: `w = NN(u)` on the flattened nodal layout.
pub fn rdn_forward(u: &ElementField, params: &NetworkParams, exec: Execution) -> Result<ElementField> {
    let mut tape = Tape::with_execution(exec);
    let p = ParamNodes::load(&mut tape, params);
    let x = tape.input(vec![1, u.len()], u.data.clone(), false)?;
    let y = rdn_forward_on_tape(&mut tape, &p, &params.config, x)?;
    let mut out = ElementField::from_vec(u.k, u.n_p, tape.value(y).to_vec())?;
    out.time = u.time;
    Ok(out)
}
