//! Network definitions: generator G, discriminator D, companion encoder L,
//! and the frozen feature probe, plus deterministic initialization.
//!
//! G maps an LR image to a 4x HR image through plain residual blocks and two
//! nearest-upsample + conv stages. Every G activation is ReLU, so the whole
//! input-to-output map is continuous piecewise linear. L maps HR back to the
//! LR-shaped latent space. The probe is a fixed random conv stack standing in
//! for a pretrained perceptual feature extractor: gradients flow through it
//! but its weights never change.
//!
//! Each network separates parameter binding from application: `bind` inserts
//! the parameters once as tape leaves, and `forward_with` can then be called
//! repeatedly (e.g. the discriminator on both real and generated batches)
//! so gradients accumulate on a single set of leaves.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{NodeId, Tape, Tensor};

/// Upscaling factor between LR and HR.
pub const SCALE: usize = 4;

/// Negative slope of the discriminator's leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Network dimensions. `hr_size` fixes the discriminator's dense head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub channels: usize,
    pub blocks: usize,
    pub d_base: usize,
    pub l_base: usize,
    pub probe_channels: [usize; 3],
    pub hr_size: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            blocks: 4,
            d_base: 16,
            l_base: 16,
            probe_channels: [8, 16, 16],
            hr_size: 32,
        }
    }
}

impl NetConfig {
    /// Reconstruct the dimensions from a parameter set (for loading a
    /// checkpoint without its original configuration). The discriminator's
    /// input size is recovered from its dense head, which assumes `hr_size`
    /// is divisible by 8 (true for every size this crate produces).
    pub fn infer<T: Elem>(params: &NetworkParams<T>) -> Result<Self> {
        let shape = |name: &str| -> Result<Vec<usize>> {
            params
                .get(name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let channels = shape("g.head.w")?[0];
        let mut blocks = 0;
        while params.get(&format!("g.block{blocks}.conv1.w")).is_some() {
            blocks += 1;
        }
        let d_base = shape("d.conv0.w")?[0];
        let l_base = shape("l.conv0.w")?[0];
        let probe_channels = [
            shape("probe.conv0.w")?[0],
            shape("probe.conv1.w")?[0],
            shape("probe.conv2.w")?[0],
        ];
        let feat = shape("d.fc.w")?[1];
        let side2 = feat / (2 * d_base);
        let side = (side2 as f64).sqrt().round() as usize;
        if side * side != side2 {
            return Err(Error::Checkpoint(format!(
                "cannot infer hr_size from dense head of {feat} features"
            )));
        }
        let cfg = Self {
            channels,
            blocks,
            d_base,
            l_base,
            probe_channels,
            hr_size: side * 8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.channels,
            self.blocks,
            self.d_base,
            self.l_base,
            self.probe_channels[0],
            self.probe_channels[1],
            self.probe_channels[2],
            self.hr_size,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("zero dimension in {self:?}")));
        }
        if self.hr_size % SCALE != 0 {
            return Err(Error::Config(format!(
                "hr_size {} must be divisible by {SCALE}",
                self.hr_size
            )));
        }
        Ok(())
    }
}

/// One convolution's parameters.
#[derive(Debug, Clone)]
pub struct ConvParam<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Elem> ConvParam<T> {
    fn init(rng: &mut Rng, out_c: usize, in_c: usize, k: usize) -> Self {
        let fan_in = in_c * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = Tensor::from_fn(vec![out_c, in_c, k, k], |_| rng.next_normal() * std);
        let b = Tensor::zeros(vec![out_c]);
        Self { w, b }
    }
}

/// Name of a bound parameter leaf on the tape, paired with its node.
#[derive(Debug, Clone)]
pub struct ParamBinding {
    pub name: String,
    pub id: NodeId,
}

/// Parameter leaves of one network on one tape, in entry order.
#[derive(Debug, Clone)]
pub struct BoundNet {
    ids: Vec<NodeId>,
    pub bindings: Vec<ParamBinding>,
}

fn bind_entries<T: Elem>(
    tape: &mut Tape<T>,
    entries: Vec<(String, &Tensor<T>)>,
    trainable: bool,
) -> BoundNet {
    let mut ids = Vec::with_capacity(entries.len());
    let mut bindings = Vec::new();
    for (name, tensor) in entries {
        let id = tape.leaf(tensor.clone(), trainable);
        ids.push(id);
        if trainable {
            bindings.push(ParamBinding { name, id });
        }
    }
    BoundNet { ids, bindings }
}

struct LeafCursor<'a> {
    ids: &'a [NodeId],
    pos: usize,
}

impl<'a> LeafCursor<'a> {
    fn new(ids: &'a [NodeId]) -> Self {
        Self { ids, pos: 0 }
    }

    fn pair(&mut self) -> (NodeId, NodeId) {
        let w = self.ids[self.pos];
        let b = self.ids[self.pos + 1];
        self.pos += 2;
        (w, b)
    }
}

fn conv_apply<T: Elem>(
    tape: &mut Tape<T>,
    cursor: &mut LeafCursor<'_>,
    x: NodeId,
    stride: usize,
) -> Result<NodeId> {
    let (w, b) = cursor.pair();
    let y = tape.conv2d(x, w, stride, 1)?;
    tape.bias_add(y, b)
}

/// Generator: residual trunk at LR resolution, then two nearest-upsample +
/// conv stages for the 4x enlargement. Output is 3-channel and unclamped.
#[derive(Debug, Clone)]
pub struct GeneratorNet<T> {
    head: ConvParam<T>,
    blocks: Vec<(ConvParam<T>, ConvParam<T>)>,
    trunk: ConvParam<T>,
    up1: ConvParam<T>,
    up2: ConvParam<T>,
    last: ConvParam<T>,
}

impl<T: Elem> GeneratorNet<T> {
    fn init(rng: &mut Rng, cfg: &NetConfig) -> Self {
        let c = cfg.channels;
        Self {
            head: ConvParam::init(rng, c, 3, 3),
            blocks: (0..cfg.blocks)
                .map(|_| (ConvParam::init(rng, c, c, 3), ConvParam::init(rng, c, c, 3)))
                .collect(),
            trunk: ConvParam::init(rng, c, c, 3),
            up1: ConvParam::init(rng, c, c, 3),
            up2: ConvParam::init(rng, c, c, 3),
            last: ConvParam::init(rng, 3, c, 3),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundNet {
        bind_entries(tape, self.entries(), trainable)
    }

    pub fn forward_with(&self, tape: &mut Tape<T>, bound: &BoundNet, z: NodeId) -> Result<NodeId> {
        let s = tape.shape(z);
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::ShapeMismatch {
                op: "forward_g",
                lhs: s.to_vec(),
                rhs: vec![0, 3, 0, 0],
            });
        }
        let mut cur = LeafCursor::new(&bound.ids);
        let fea = conv_apply(tape, &mut cur, z, 1)?;
        let mut h = fea;
        for _ in &self.blocks {
            let a = conv_apply(tape, &mut cur, h, 1)?;
            let a = tape.relu(a)?;
            let b = conv_apply(tape, &mut cur, a, 1)?;
            h = tape.add(b, h)?;
        }
        let t = conv_apply(tape, &mut cur, h, 1)?;
        let mut h = tape.add(t, fea)?;
        for _ in 0..2 {
            let u = tape.nearest_upsample(h, 2)?;
            let c = conv_apply(tape, &mut cur, u, 1)?;
            h = tape.relu(c)?;
        }
        conv_apply(tape, &mut cur, h, 1)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        z: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<ParamBinding>)> {
        let bound = self.bind(tape, trainable);
        let out = self.forward_with(tape, &bound, z)?;
        Ok((out, bound.bindings))
    }

    fn entries(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![
            ("g.head.w".to_string(), &self.head.w),
            ("g.head.b".to_string(), &self.head.b),
        ];
        for (i, (c1, c2)) in self.blocks.iter().enumerate() {
            v.push((format!("g.block{i}.conv1.w"), &c1.w));
            v.push((format!("g.block{i}.conv1.b"), &c1.b));
            v.push((format!("g.block{i}.conv2.w"), &c2.w));
            v.push((format!("g.block{i}.conv2.b"), &c2.b));
        }
        for (name, p) in [
            ("g.trunk", &self.trunk),
            ("g.up1", &self.up1),
            ("g.up2", &self.up2),
            ("g.last", &self.last),
        ] {
            v.push((format!("{name}.w"), &p.w));
            v.push((format!("{name}.b"), &p.b));
        }
        v
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = vec![
            ("g.head.w".to_string(), &mut self.head.w),
            ("g.head.b".to_string(), &mut self.head.b),
        ];
        for (i, (c1, c2)) in self.blocks.iter_mut().enumerate() {
            v.push((format!("g.block{i}.conv1.w"), &mut c1.w));
            v.push((format!("g.block{i}.conv1.b"), &mut c1.b));
            v.push((format!("g.block{i}.conv2.w"), &mut c2.w));
            v.push((format!("g.block{i}.conv2.b"), &mut c2.b));
        }
        for (name, p) in [
            ("g.trunk", &mut self.trunk),
            ("g.up1", &mut self.up1),
            ("g.up2", &mut self.up2),
            ("g.last", &mut self.last),
        ] {
            v.push((format!("{name}.w"), &mut p.w));
            v.push((format!("{name}.b"), &mut p.b));
        }
        v
    }
}

/// Discriminator: strided conv stack and a dense head producing one
/// unnormalized logit per batch item.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet<T> {
    convs: Vec<ConvParam<T>>,
    strides: Vec<usize>,
    fc_w: Tensor<T>,
    fc_b: Tensor<T>,
    hr_size: usize,
}

impl<T: Elem> DiscriminatorNet<T> {
    fn init(rng: &mut Rng, cfg: &NetConfig) -> Self {
        let d = cfg.d_base;
        let plan = [(3, d, 1), (d, d, 2), (d, 2 * d, 2), (2 * d, 2 * d, 2)];
        let convs = plan
            .iter()
            .map(|&(i, o, _)| ConvParam::init(rng, o, i, 3))
            .collect();
        let strides = plan.iter().map(|&(_, _, s)| s).collect();
        let mut side = cfg.hr_size;
        for &(_, _, s) in &plan {
            side = side.div_ceil(s);
        }
        let feat = 2 * d * side * side;
        let std = (2.0 / feat as f64).sqrt();
        let fc_w = Tensor::from_fn(vec![1, feat], |_| rng.next_normal() * std);
        let fc_b = Tensor::zeros(vec![1]);
        Self {
            convs,
            strides,
            fc_w,
            fc_b,
            hr_size: cfg.hr_size,
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundNet {
        bind_entries(tape, self.entries(), trainable)
    }

    /// Returns one logit per batch item, shape (N, 1).
    pub fn forward_with(&self, tape: &mut Tape<T>, bound: &BoundNet, x: NodeId) -> Result<NodeId> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != 3 || s[2] != self.hr_size || s[3] != self.hr_size {
            return Err(Error::ShapeMismatch {
                op: "forward_d",
                lhs: s.to_vec(),
                rhs: vec![0, 3, self.hr_size, self.hr_size],
            });
        }
        let mut cur = LeafCursor::new(&bound.ids);
        let mut h = x;
        for &stride in &self.strides {
            let c = conv_apply(tape, &mut cur, h, stride)?;
            h = tape.leaky_relu(c, T::from_f64(LEAKY_SLOPE))?;
        }
        let flat = tape.flatten(h)?;
        let (w, b) = cur.pair();
        tape.fully_connected(flat, w, b)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<ParamBinding>)> {
        let bound = self.bind(tape, trainable);
        let out = self.forward_with(tape, &bound, x)?;
        Ok((out, bound.bindings))
    }

    fn entries(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, p) in self.convs.iter().enumerate() {
            v.push((format!("d.conv{i}.w"), &p.w));
            v.push((format!("d.conv{i}.b"), &p.b));
        }
        v.push(("d.fc.w".to_string(), &self.fc_w));
        v.push(("d.fc.b".to_string(), &self.fc_b));
        v
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        for (i, p) in self.convs.iter_mut().enumerate() {
            v.push((format!("d.conv{i}.w"), &mut p.w));
            v.push((format!("d.conv{i}.b"), &mut p.b));
        }
        v.push(("d.fc.w".to_string(), &mut self.fc_w));
        v.push(("d.fc.b".to_string(), &mut self.fc_b));
        v
    }
}

/// Companion encoder L: maps an HR image into the LR-shaped latent space
/// through a 4-conv stack with total downsampling 4x.
#[derive(Debug, Clone)]
pub struct EncoderNet<T> {
    convs: Vec<ConvParam<T>>,
    strides: Vec<usize>,
}

impl<T: Elem> EncoderNet<T> {
    fn init(rng: &mut Rng, cfg: &NetConfig) -> Self {
        let l = cfg.l_base;
        let plan = [(3, l, 1), (l, l, 2), (l, l, 2), (l, 3, 1)];
        Self {
            convs: plan
                .iter()
                .map(|&(i, o, _)| ConvParam::init(rng, o, i, 3))
                .collect(),
            strides: plan.iter().map(|&(_, _, s)| s).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundNet {
        bind_entries(tape, self.entries(), trainable)
    }

    pub fn forward_with(&self, tape: &mut Tape<T>, bound: &BoundNet, x: NodeId) -> Result<NodeId> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::ShapeMismatch {
                op: "forward_l",
                lhs: s.to_vec(),
                rhs: vec![0, 3, 0, 0],
            });
        }
        let mut cur = LeafCursor::new(&bound.ids);
        let mut h = x;
        let n = self.strides.len();
        for (i, &stride) in self.strides.iter().enumerate() {
            h = conv_apply(tape, &mut cur, h, stride)?;
            if i + 1 < n {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<ParamBinding>)> {
        let bound = self.bind(tape, trainable);
        let out = self.forward_with(tape, &bound, x)?;
        Ok((out, bound.bindings))
    }

    fn entries(&self) -> Vec<(String, &Tensor<T>)> {
        self.convs
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                vec![
                    (format!("l.conv{i}.w"), &p.w),
                    (format!("l.conv{i}.b"), &p.b),
                ]
            })
            .collect()
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.convs
            .iter_mut()
            .enumerate()
            .flat_map(|(i, p)| {
                vec![
                    (format!("l.conv{i}.w"), &mut p.w),
                    (format!("l.conv{i}.b"), &mut p.b),
                ]
            })
            .collect()
    }
}

/// Frozen random feature extractor, strides (1, 2, 2). The final stage is
/// emitted before activation. Never trainable.
#[derive(Debug, Clone)]
pub struct FeatureProbe<T> {
    convs: Vec<ConvParam<T>>,
    strides: Vec<usize>,
}

impl<T: Elem> FeatureProbe<T> {
    fn init(rng: &mut Rng, cfg: &NetConfig) -> Self {
        let [c0, c1, c2] = cfg.probe_channels;
        let plan = [(3, c0, 1), (c0, c1, 2), (c1, c2, 2)];
        Self {
            convs: plan
                .iter()
                .map(|&(i, o, _)| ConvParam::init(rng, o, i, 3))
                .collect(),
            strides: plan.iter().map(|&(_, _, s)| s).collect(),
        }
    }

    /// Pre-activation feature maps of the last stage. Gradients flow through
    /// to `x` but never into the probe weights.
    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::ShapeMismatch {
                op: "forward_probe",
                lhs: s.to_vec(),
                rhs: vec![0, 3, 0, 0],
            });
        }
        let bound = bind_entries(tape, self.entries(), false);
        let mut cur = LeafCursor::new(&bound.ids);
        let mut h = x;
        let n = self.strides.len();
        for (i, &stride) in self.strides.iter().enumerate() {
            h = conv_apply(tape, &mut cur, h, stride)?;
            if i + 1 < n {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    fn entries(&self) -> Vec<(String, &Tensor<T>)> {
        self.convs
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                vec![
                    (format!("probe.conv{i}.w"), &p.w),
                    (format!("probe.conv{i}.b"), &p.b),
                ]
            })
            .collect()
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.convs
            .iter_mut()
            .enumerate()
            .flat_map(|(i, p)| {
                vec![
                    (format!("probe.conv{i}.w"), &mut p.w),
                    (format!("probe.conv{i}.b"), &mut p.b),
                ]
            })
            .collect()
    }
}

/// Named, ordered parameter collection; the unit of checkpointing.
#[derive(Debug, Clone, Default)]
pub struct NetworkParams<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Elem> NetworkParams<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The four networks plus their dimensions.
#[derive(Debug, Clone)]
pub struct Networks<T> {
    pub g: GeneratorNet<T>,
    pub d: DiscriminatorNet<T>,
    pub l: EncoderNet<T>,
    pub probe: FeatureProbe<T>,
    pub cfg: NetConfig,
}

/// Initialize all four networks: fan-in-scaled normal weights
/// (std = sqrt(2 / fan_in)), zero biases, deterministic in the seed.
pub fn init_networks<T: Elem>(cfg: &NetConfig, seed: u64) -> Result<Networks<T>> {
    cfg.validate()?;
    let mut rng = Rng::stream(seed, "init");
    Ok(Networks {
        g: GeneratorNet::init(&mut rng, cfg),
        d: DiscriminatorNet::init(&mut rng, cfg),
        l: EncoderNet::init(&mut rng, cfg),
        probe: FeatureProbe::init(&mut rng, cfg),
        cfg: cfg.clone(),
    })
}

impl<T: Elem> Networks<T> {
    /// All parameters in stable order, for checkpointing.
    pub fn export_params(&self) -> NetworkParams<T> {
        let mut p = NetworkParams::new();
        for (name, t) in self
            .g
            .entries()
            .into_iter()
            .chain(self.d.entries())
            .chain(self.l.entries())
            .chain(self.probe.entries())
        {
            p.push(name, t.clone()).expect("unique parameter names");
        }
        p
    }

    /// Restore parameters by name; every network parameter must be present
    /// with the right shape.
    pub fn import_params(&mut self, params: &NetworkParams<T>) -> Result<()> {
        for (name, slot) in self
            .g
            .entries_mut()
            .into_iter()
            .chain(self.d.entries_mut())
            .chain(self.l.entries_mut())
            .chain(self.probe.entries_mut())
        {
            let src = params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if src.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}`: shape {:?} does not match expected {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = src.clone();
        }
        Ok(())
    }

    /// Replace only the probe weights (externally supplied feature
    /// extractors arrive through the same checkpoint format).
    pub fn load_probe_weights(&mut self, params: &NetworkParams<T>) -> Result<()> {
        for (name, slot) in self.probe.entries_mut() {
            let src = params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing probe parameter `{name}`")))?;
            if src.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "probe parameter `{name}`: shape {:?} does not match expected {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = src.clone();
        }
        Ok(())
    }

    /// One sub-network's parameter entries (stable order).
    pub fn net_entries(&self, net: SubNet) -> Vec<(String, &Tensor<T>)> {
        match net {
            SubNet::Generator => self.g.entries(),
            SubNet::Discriminator => self.d.entries(),
            SubNet::Encoder => self.l.entries(),
        }
    }

    /// Mutable references to one sub-network's parameters, in the same order
    /// as the bindings its forward pass returns.
    pub fn net_entries_mut(&mut self, net: SubNet) -> Vec<(String, &mut Tensor<T>)> {
        match net {
            SubNet::Generator => self.g.entries_mut(),
            SubNet::Discriminator => self.d.entries_mut(),
            SubNet::Encoder => self.l.entries_mut(),
        }
    }
}

/// Trainable sub-networks (the probe is never trainable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubNet {
    Generator,
    Discriminator,
    Encoder,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nets64(hr: usize, seed: u64) -> Networks<f64> {
        let cfg = NetConfig {
            hr_size: hr,
            ..NetConfig::default()
        };
        init_networks(&cfg, seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = nets64(32, 7).export_params();
        let b = nets64(32, 7).export_params();
        assert_eq!(a.len(), b.len());
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = nets64(32, 7).export_params();
        let b = nets64(32, 8).export_params();
        let any_diff = a
            .iter()
            .zip(b.iter())
            .any(|((_, ta), (_, tb))| ta.data() != tb.data());
        assert!(any_diff);
    }

    #[test]
    fn zero_dims_rejected() {
        let cfg = NetConfig {
            channels: 0,
            ..NetConfig::default()
        };
        assert!(init_networks::<f32>(&cfg, 1).is_err());
    }

    #[test]
    fn generator_upscales_by_four() {
        let nets = nets64(32, 3);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_fn(vec![1, 3, 8, 8], |i| (i % 7) as f64 * 0.1));
        let (out, _) = nets.g.forward(&mut tape, z, false).unwrap();
        assert_eq!(tape.shape(out), &[1, 3, 32, 32]);
    }

    #[test]
    fn encoder_inverts_generator_shape() {
        let nets = nets64(32, 3);
        let mut rng = Rng::new(4);
        for lr in [4usize, 6, 8] {
            let mut tape = Tape::new();
            let z = tape.constant(Tensor::from_fn(vec![1, 3, lr, lr], |_| {
                rng.next_range(0.0, 1.0)
            }));
            let (gz, _) = nets.g.forward(&mut tape, z, false).unwrap();
            let (lz, _) = nets.l.forward(&mut tape, gz, false).unwrap();
            assert_eq!(tape.shape(lz), tape.shape(z));
        }
    }

    #[test]
    fn discriminator_emits_one_logit_per_item() {
        let nets = nets64(32, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![2, 3, 32, 32], |i| {
            (i % 11) as f64 * 0.05
        }));
        let (logits, _) = nets.d.forward(&mut tape, x, false).unwrap();
        assert_eq!(tape.shape(logits), &[2, 1]);
    }

    #[test]
    fn discriminator_rejects_wrong_size() {
        let nets = nets64(32, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(vec![1, 3, 16, 16]));
        assert!(nets.d.forward(&mut tape, x, false).is_err());
    }

    #[test]
    fn probe_is_pure() {
        let nets = nets64(32, 3);
        let img = Tensor::from_fn(vec![1, 3, 32, 32], |i| (i % 13) as f64 / 13.0);
        let mut a = Tape::new();
        let xa = a.constant(img.clone());
        let fa = nets.probe.forward(&mut a, xa).unwrap();
        let mut b = Tape::new();
        let xb = b.constant(img);
        let fb = nets.probe.forward(&mut b, xb).unwrap();
        assert_eq!(a.value(fa).data(), b.value(fb).data());
    }

    #[test]
    fn shared_binding_accumulates_across_two_passes() {
        // one bound parameter set, two forward passes: gradients must land
        // on a single set of leaves
        let nets = nets64(32, 6);
        let mut tape = Tape::new();
        let x1 = tape.constant(Tensor::from_fn(vec![1, 3, 32, 32], |i| {
            (i % 5) as f64 * 0.2
        }));
        let x2 = tape.constant(Tensor::from_fn(vec![1, 3, 32, 32], |i| {
            (i % 3) as f64 * 0.3
        }));
        let bound = nets.d.bind(&mut tape, true);
        let l1 = nets.d.forward_with(&mut tape, &bound, x1).unwrap();
        let l2 = nets.d.forward_with(&mut tape, &bound, x2).unwrap();
        let s = tape.add(l1, l2).unwrap();
        let m = tape.mean(s).unwrap();
        tape.backward(m).unwrap();
        for b in &bound.bindings {
            assert!(tape.grad_slice(b.id).is_some(), "missing grad for {}", b.name);
        }
    }

    #[test]
    fn generator_is_locally_linear() {
        // Three-point collinearity along a random direction at a small step:
        // a PWL map is exactly linear inside an activation cell.
        let nets = nets64(32, 5);
        let mut rng = Rng::new(21);
        let z0 = Tensor::<f64>::from_fn(vec![1, 3, 8, 8], |_| rng.next_range(0.0, 1.0));
        let dir = Tensor::<f64>::from_fn(vec![1, 3, 8, 8], |_| rng.next_range(-1.0, 1.0));
        let eval = |t: f64| -> Vec<f64> {
            let z = Tensor::from_fn(vec![1, 3, 8, 8], |i| z0.data()[i] + t * dir.data()[i]);
            let mut tape = Tape::new();
            let zn = tape.constant(z);
            let (g, _) = nets.g.forward(&mut tape, zn, false).unwrap();
            tape.value(g).data().to_vec()
        };
        let delta = 1e-7;
        let f0 = eval(0.0);
        let f1 = eval(delta);
        let f2 = eval(2.0 * delta);
        let mut worst = 0.0f64;
        for i in 0..f0.len() {
            let second_diff = (f2[i] - 2.0 * f1[i] + f0[i]).abs();
            worst = worst.max(second_diff);
        }
        assert!(worst < 1e-10, "second difference {worst}");
    }

    #[test]
    fn import_export_round_trip() {
        let mut a = nets64(32, 7);
        let b = nets64(32, 9);
        let saved = b.export_params();
        a.import_params(&saved).unwrap();
        let again = a.export_params();
        for ((n1, t1), (n2, t2)) in saved.iter().zip(again.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
    }
}
