//! Training objectives: pixel L1, relativistic and standard adversarial
//! terms, the encoder (latent-space) loss, the cosine contextual loss, the
//! probe-based perceptual loss, and the composite generator objectives that
//! combine them.
//!
//! Every loss is built on a [`Tape`], so its gradient is available through
//! the same reverse pass that trains the networks. Probabilities are clamped
//! to [1e-12, 1 - 1e-12] before any logarithm so saturated discriminator
//! outputs cannot produce infinities.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nets::{EncoderNet, FeatureProbe, Networks, ParamBinding};
use crate::tensor::{NodeId, Tape, Tensor};

/// Clamp bound applied to probabilities before `log`.
pub const PROB_CLAMP: f64 = 1e-12;

/// Row-norm threshold below which a contextual-loss direction is considered
/// degenerate.
const DEGENERATE_NORM: f64 = 1e-12;

/// Sign with which the latent-space term enters the generator objective.
/// `Minus` matches the printed objective: the generator is rewarded for
/// latent distance while the simultaneously trained encoder shrinks it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LsrSign {
    #[default]
    Minus,
    Plus,
}

/// The scalar loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Adversarial weight.
    pub lambda: f64,
    /// Pixel-L1 weight (the KKT multiplier).
    pub eta: f64,
    /// Latent-space regularization weight.
    pub mu: f64,
    pub lsr_sign: LsrSign,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 5e-3,
            eta: 1e-2,
            mu: 1e-3,
            lsr_sign: LsrSign::Minus,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("eta", self.eta), ("mu", self.mu)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Reference point for contextual-loss directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    /// Average of the target point set.
    #[default]
    MeanOfY,
    Zero,
}

/// How the pairwise quantity d_ij is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// d_ij = 1 - cosine similarity (nonnegative; the default, consistent
    /// with the min-normalization that follows).
    #[default]
    CosineDistance,
    /// d_ij = cosine similarity itself, exactly as printed.
    LiteralSimilarity,
}

/// Cosine contextual loss configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcxConfig {
    /// Bandwidth of the affinity softmax.
    pub h: f64,
    /// Stabilizer added to the row minimum during normalization.
    pub epsilon: f64,
    pub reference: ReferenceMode,
    pub distance: DistanceMode,
}

impl Default for CcxConfig {
    fn default() -> Self {
        Self {
            h: 0.5,
            epsilon: 1e-5,
            reference: ReferenceMode::MeanOfY,
            distance: DistanceMode::CosineDistance,
        }
    }
}

impl CcxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("ccx h must be > 0, got {}", self.h)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "ccx epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Composite generator objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Probe-perceptual + relativistic adversarial + pixel L1.
    Esr,
    /// Esr plus the latent-space regularization term.
    Lsr,
    /// Contextual + relativistic adversarial + pixel L1.
    Cesr,
    /// Cesr plus the latent-space regularization term.
    Clsr,
    /// Standard (non-relativistic) adversarial + pixel L1 + latent term.
    KktStandard,
}

impl ObjectiveKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "esr" => Ok(Self::Esr),
            "lsr" => Ok(Self::Lsr),
            "cesr" => Ok(Self::Cesr),
            "clsr" => Ok(Self::Clsr),
            "kkt" => Ok(Self::KktStandard),
            other => Err(Error::Config(format!(
                "unknown objective kind `{other}` (expected esr|lsr|cesr|clsr|kkt)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Esr => "esr",
            Self::Lsr => "lsr",
            Self::Cesr => "cesr",
            Self::Clsr => "clsr",
            Self::KktStandard => "kkt",
        }
    }

    /// Whether the latent-space term participates (given a nonzero mu).
    pub fn uses_latent(self) -> bool {
        matches!(self, Self::Lsr | Self::Clsr | Self::KktStandard)
    }
}

/// Mean absolute difference over all elements.
pub fn l1_loss<T: Elem>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let diff = tape.sub(a, b)?;
    let ab = tape.abs(diff)?;
    tape.mean(ab)
}

/// Latent-space distance |L(y) - L(gz)|_1. When `l_trainable` is set the
/// encoder's parameter bindings are returned so an optimizer can update it;
/// otherwise gradients only flow through L into its inputs.
pub fn encoder_loss<T: Elem>(
    tape: &mut Tape<T>,
    l: &EncoderNet<T>,
    y: NodeId,
    gz: NodeId,
    l_trainable: bool,
) -> Result<(NodeId, Vec<ParamBinding>)> {
    if tape.shape(y) != tape.shape(gz) {
        return Err(Error::ShapeMismatch {
            op: "encoder_loss",
            lhs: tape.shape(y).to_vec(),
            rhs: tape.shape(gz).to_vec(),
        });
    }
    let bound = l.bind(tape, l_trainable);
    let ly = l.forward_with(tape, &bound, y)?;
    let lgz = l.forward_with(tape, &bound, gz)?;
    let loss = l1_loss(tape, ly, lgz)?;
    Ok((loss, bound.bindings))
}

fn clamped_log<T: Elem>(tape: &mut Tape<T>, p: NodeId) -> Result<NodeId> {
    let lo = T::from_f64(PROB_CLAMP);
    let hi = T::from_f64(1.0 - PROB_CLAMP);
    let c = tape.clamp(p, lo, hi)?;
    tape.log(c)
}

/// Relativistic average adversarial losses.
///
/// With `D(a, b) = sigmoid(C(a) - mean(C(b)))`:
/// the discriminator loss is `-mean log D(real, fake) - mean log(1 - D(fake, real))`
/// and the generator loss swaps the two roles.
pub fn relativistic_pair<T: Elem>(
    tape: &mut Tape<T>,
    c_real: NodeId,
    c_fake: NodeId,
) -> Result<(NodeId, NodeId)> {
    if tape.shape(c_real) != tape.shape(c_fake) {
        return Err(Error::ShapeMismatch {
            op: "relativistic_pair",
            lhs: tape.shape(c_real).to_vec(),
            rhs: tape.shape(c_fake).to_vec(),
        });
    }
    if tape.value(c_real).is_empty() {
        return Err(Error::Domain {
            op: "relativistic_pair",
            detail: "empty logit batch".into(),
        });
    }
    let mean_fake = tape.mean(c_fake)?;
    let mean_real = tape.mean(c_real)?;
    let rf = tape.sub_scalar_node(c_real, mean_fake)?;
    let d_rf = tape.sigmoid(rf)?;
    let fr = tape.sub_scalar_node(c_fake, mean_real)?;
    let d_fr = tape.sigmoid(fr)?;

    let one_minus_dfr = tape.affine(d_fr, -T::one(), T::one())?;
    let one_minus_drf = tape.affine(d_rf, -T::one(), T::one())?;

    let t_rf = clamped_log(tape, d_rf)?;
    let t_rf = tape.mean(t_rf)?;
    let t_nfr = clamped_log(tape, one_minus_dfr)?;
    let t_nfr = tape.mean(t_nfr)?;
    let ld_sum = tape.add(t_rf, t_nfr)?;
    let loss_d = tape.neg(ld_sum)?;

    let t_fr = clamped_log(tape, d_fr)?;
    let t_fr = tape.mean(t_fr)?;
    let t_nrf = clamped_log(tape, one_minus_drf)?;
    let t_nrf = tape.mean(t_nrf)?;
    let lg_sum = tape.add(t_fr, t_nrf)?;
    let loss_g = tape.neg(lg_sum)?;

    Ok((loss_d, loss_g))
}

/// Standard generator adversarial term: mean(1 - sigmoid(C(fake))).
pub fn standard_adversarial_g<T: Elem>(tape: &mut Tape<T>, d_fake: NodeId) -> Result<NodeId> {
    if tape.value(d_fake).is_empty() {
        return Err(Error::Domain {
            op: "standard_adversarial_g",
            detail: "empty logit batch".into(),
        });
    }
    let p = tape.sigmoid(d_fake)?;
    let one_minus = tape.affine(p, -T::one(), T::one())?;
    tape.mean(one_minus)
}

/// Node handles produced while building the contextual loss; the affinity
/// matrix is exposed for diagnostics and invariant checks.
#[derive(Debug, Clone, Copy)]
pub struct CcxNodes {
    pub loss: NodeId,
    pub affinity: NodeId,
    pub distances: NodeId,
    pub normalized: NodeId,
}

/// Cosine contextual loss between two point sets of shape (N, C).
///
/// Directions are taken against a reference r (the mean of the target set by
/// default); pairwise cosine distances are normalized per row by their
/// minimum, converted into a row-stochastic affinity matrix with bandwidth
/// `h`, and scored by `-log(mean_j max_i A_ij)`.
pub fn ccx_loss<T: Elem>(
    tape: &mut Tape<T>,
    x_pts: NodeId,
    y_pts: NodeId,
    cfg: &CcxConfig,
) -> Result<CcxNodes> {
    cfg.validate()?;
    let xs = tape.shape(x_pts).to_vec();
    let ys = tape.shape(y_pts).to_vec();
    if xs.len() != 2 || ys.len() != 2 || xs != ys {
        return Err(Error::ShapeMismatch {
            op: "ccx_loss",
            lhs: xs,
            rhs: ys,
        });
    }
    let c = xs[1];

    let (xc, yc) = match cfg.reference {
        ReferenceMode::MeanOfY => {
            let r = tape.mean_axis0(y_pts)?;
            let xc = tape.sub_row_vec(x_pts, r)?;
            let yc = tape.sub_row_vec(y_pts, r)?;
            (xc, yc)
        }
        ReferenceMode::Zero => {
            let r = tape.constant(Tensor::zeros(vec![c]));
            let xc = tape.sub_row_vec(x_pts, r)?;
            let yc = tape.sub_row_vec(y_pts, r)?;
            (xc, yc)
        }
    };

    let nx = {
        let sq = tape.mul(xc, xc)?;
        let ss = tape.row_sum(sq)?;
        tape.sqrt(ss)?
    };
    let ny = {
        let sq = tape.mul(yc, yc)?;
        let ss = tape.row_sum(sq)?;
        tape.sqrt(ss)?
    };
    for (name, norms) in [("x", nx), ("y", ny)] {
        if tape
            .value(norms)
            .data()
            .iter()
            .any(|v| v.as_f64() < DEGENERATE_NORM)
        {
            return Err(Error::Degenerate {
                op: "ccx_loss",
                detail: format!("a {name} point coincides with the reference"),
            });
        }
    }

    let dots = tape.matmul_nt(xc, yc)?;
    let s1 = tape.rowwise_div(dots, nx)?;
    let sim = tape.colwise_div(s1, ny)?;
    let distances = match cfg.distance {
        DistanceMode::CosineDistance => tape.affine(sim, -T::one(), T::one())?,
        DistanceMode::LiteralSimilarity => sim,
    };
    let dmin = tape.row_min(distances)?;
    let dmin_eps = tape.affine(dmin, T::one(), T::from_f64(cfg.epsilon))?;
    let normalized = tape.rowwise_div(distances, dmin_eps)?;
    let inv_h = T::from_f64(1.0 / cfg.h);
    let pre = tape.affine(normalized, -inv_h, inv_h)?;
    let affinity = tape.softmax_rows(pre)?;
    let mx = tape.col_max(affinity)?;
    let avg = tape.mean(mx)?;
    let lg = tape.log(avg)?;
    let loss = tape.neg(lg)?;
    Ok(CcxNodes {
        loss,
        affinity,
        distances,
        normalized,
    })
}

/// Materialized contextual-loss internals for one pair of point sets.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub n: usize,
    /// Row-stochastic affinities A_ij.
    pub affinity: Vec<f64>,
    /// Raw pairwise distances d_ij.
    pub distances: Vec<f64>,
    /// Min-normalized distances d'_ij.
    pub normalized: Vec<f64>,
    pub loss: f64,
}

/// Evaluate the contextual loss on plain `f64` point sets and return its
/// internals (a throwaway tape is used; nothing is differentiated).
pub fn ccx_affinity(
    x_pts: &Tensor<f64>,
    y_pts: &Tensor<f64>,
    cfg: &CcxConfig,
) -> Result<AffinityMatrix> {
    let mut tape = Tape::new();
    let x = tape.constant(x_pts.clone());
    let y = tape.constant(y_pts.clone());
    let nodes = ccx_loss(&mut tape, x, y, cfg)?;
    Ok(AffinityMatrix {
        n: x_pts.shape()[0],
        affinity: tape.value(nodes.affinity).data().to_vec(),
        distances: tape.value(nodes.distances).data().to_vec(),
        normalized: tape.value(nodes.normalized).data().to_vec(),
        loss: tape.value(nodes.loss).item().as_f64(),
    })
}

/// Probe-feature L1 distance between two same-shaped HR images.
pub fn perceptual_probe_loss<T: Elem>(
    tape: &mut Tape<T>,
    probe: &FeatureProbe<T>,
    gz: NodeId,
    y: NodeId,
) -> Result<NodeId> {
    if tape.shape(gz) != tape.shape(y) {
        return Err(Error::ShapeMismatch {
            op: "perceptual_probe_loss",
            lhs: tape.shape(gz).to_vec(),
            rhs: tape.shape(y).to_vec(),
        });
    }
    let fg = probe.forward(tape, gz)?;
    let fy = probe.forward(tape, y)?;
    l1_loss(tape, fg, fy)
}

/// Contextual loss on probe features, averaged over the batch. Each image's
/// feature map becomes a point set of H*W points with C features.
pub fn ccx_probe_loss<T: Elem>(
    tape: &mut Tape<T>,
    probe: &FeatureProbe<T>,
    gz: NodeId,
    y: NodeId,
    cfg: &CcxConfig,
) -> Result<NodeId> {
    if tape.shape(gz) != tape.shape(y) {
        return Err(Error::ShapeMismatch {
            op: "ccx_probe_loss",
            lhs: tape.shape(gz).to_vec(),
            rhs: tape.shape(y).to_vec(),
        });
    }
    let batch = tape.shape(gz)[0];
    let fg = probe.forward(tape, gz)?;
    let fy = probe.forward(tape, y)?;
    let mut acc: Option<NodeId> = None;
    for n in 0..batch {
        let gi = tape.slice_batch(fg, n)?;
        let gp = tape.chw_to_points(gi)?;
        let yi = tape.slice_batch(fy, n)?;
        let yp = tape.chw_to_points(yi)?;
        let nodes = ccx_loss(tape, gp, yp, cfg)?;
        acc = Some(match acc {
            None => nodes.loss,
            Some(prev) => tape.add(prev, nodes.loss)?,
        });
    }
    let total = acc.expect("batch >= 1");
    tape.scale(total, T::one() / T::from_f64(batch as f64))
}

/// One weighted term of a composite objective, with its value at build time.
#[derive(Debug, Clone)]
pub struct TermValue {
    pub name: &'static str,
    pub weight: f64,
    pub raw: f64,
    pub weighted: f64,
}

/// A composite objective: the total node plus a per-term breakdown.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: NodeId,
    pub terms: Vec<TermValue>,
}

/// Build the composite objective for already-generated images.
///
/// `gz` is the generated batch and `y` the target batch (both NCHW, HR
/// sized). Networks referenced by the objective (D, L, probe) participate
/// frozen: gradients flow through them into `gz` but their parameters are
/// not bound for update. Terms with an exactly-zero weight are omitted from
/// the graph entirely, so e.g. mu = 0 reproduces the mu-less objective
/// bit for bit.
pub fn composite_objective<T: Elem>(
    tape: &mut Tape<T>,
    kind: ObjectiveKind,
    gz: NodeId,
    y: NodeId,
    nets: &Networks<T>,
    weights: &LossWeights,
    ccx_cfg: &CcxConfig,
) -> Result<Objective> {
    weights.validate()?;
    if tape.shape(gz) != tape.shape(y) {
        return Err(Error::ShapeMismatch {
            op: "composite_objective",
            lhs: tape.shape(gz).to_vec(),
            rhs: tape.shape(y).to_vec(),
        });
    }
    let mut terms = Vec::new();
    let mut term = |tape: &Tape<T>, name, weight, node: NodeId| {
        let raw = tape.value(node).item().as_f64();
        terms.push(TermValue {
            name,
            weight,
            raw,
            weighted: weight * raw,
        });
    };

    // Leading (unweighted) term.
    let mut total = match kind {
        ObjectiveKind::Esr | ObjectiveKind::Lsr => {
            let p = perceptual_probe_loss(tape, &nets.probe, gz, y)?;
            term(tape, "percep", 1.0, p);
            p
        }
        ObjectiveKind::Cesr | ObjectiveKind::Clsr => {
            let p = ccx_probe_loss(tape, &nets.probe, gz, y, ccx_cfg)?;
            term(tape, "ccx", 1.0, p);
            p
        }
        ObjectiveKind::KktStandard => {
            let (logits, _) = nets.d.forward(tape, gz, false)?;
            let adv = standard_adversarial_g(tape, logits)?;
            term(tape, "adv_std", 1.0, adv);
            adv
        }
    };

    // Relativistic adversarial term.
    if !matches!(kind, ObjectiveKind::KktStandard) && weights.lambda != 0.0 {
        let bound = nets.d.bind(tape, false);
        let c_real = nets.d.forward_with(tape, &bound, y)?;
        let c_fake = nets.d.forward_with(tape, &bound, gz)?;
        let (_, lg_ra) = relativistic_pair(tape, c_real, c_fake)?;
        term(tape, "adv_ra", weights.lambda, lg_ra);
        let scaled = tape.scale(lg_ra, T::from_f64(weights.lambda))?;
        total = tape.add(total, scaled)?;
    }

    // Pixel L1 term.
    if weights.eta != 0.0 {
        let l1 = l1_loss(tape, y, gz)?;
        term(tape, "l1", weights.eta, l1);
        let scaled = tape.scale(l1, T::from_f64(weights.eta))?;
        total = tape.add(total, scaled)?;
    }

    // Latent-space regularization term.
    if kind.uses_latent() && weights.mu != 0.0 {
        let (enc, _) = encoder_loss(tape, &nets.l, y, gz, false)?;
        let signed = match weights.lsr_sign {
            LsrSign::Minus => -weights.mu,
            LsrSign::Plus => weights.mu,
        };
        term(tape, "latent", signed, enc);
        let scaled = tape.scale(enc, T::from_f64(signed))?;
        total = tape.add(total, scaled)?;
    }

    Ok(Objective { total, terms })
}

/// Run the generator on `z` and build the composite objective against `y`.
/// Returns the objective, the generator's parameter bindings (when
/// trainable), and the generated batch node.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Elem>(
    tape: &mut Tape<T>,
    kind: ObjectiveKind,
    z: NodeId,
    y: NodeId,
    nets: &Networks<T>,
    weights: &LossWeights,
    ccx_cfg: &CcxConfig,
    g_trainable: bool,
) -> Result<(Objective, Vec<ParamBinding>, NodeId)> {
    let (gz, binds) = nets.g.forward(tape, z, g_trainable)?;
    let objective = composite_objective(tape, kind, gz, y, nets, weights, ccx_cfg)?;
    Ok((objective, binds, gz))
}

/// Finite-difference verification of every loss gradient, in 64-bit, on
/// seeded random inputs (images are 1x3x8x8). Returns one report per check;
/// the composite check covers the full latent-regularized objective.
///
/// The pinned seed places the sample points away from ReLU kinks: central
/// differences are only a valid oracle where the loss is differentiable,
/// and a +-step window straddling an activation boundary would compare the
/// (correct) one-sided gradient against the average of two linear pieces.
pub fn loss_gradient_suite(
    step: f64,
    tol: f64,
) -> Result<Vec<(&'static str, crate::tensor::GradcheckReport)>> {
    loss_gradient_suite_seeded(11, step, tol)
}

/// [`loss_gradient_suite`] with an explicit input seed.
pub fn loss_gradient_suite_seeded(
    seed: u64,
    step: f64,
    tol: f64,
) -> Result<Vec<(&'static str, crate::tensor::GradcheckReport)>> {
    use crate::nets::{init_networks, NetConfig};
    use crate::rng::Rng;
    use crate::tensor::gradcheck;

    let cfg = NetConfig {
        hr_size: 8,
        ..NetConfig::default()
    };
    let nets = init_networks::<f64>(&cfg, 101)?;
    let mut rng = Rng::new(seed);
    let img = |rng: &mut Rng| Tensor::<f64>::from_fn(vec![1, 3, 8, 8], |_| rng.next_range(0.0, 1.0));
    let logits = |rng: &mut Rng, n: usize| {
        Tensor::<f64>::from_fn(vec![n, 1], |_| rng.next_range(-1.0, 1.0))
    };
    let pts = |rng: &mut Rng| Tensor::<f64>::from_fn(vec![6, 4], |_| rng.next_range(-1.0, 1.0));
    let ccx_cfg = CcxConfig::default();
    let weights = LossWeights::default();

    let mut reports = Vec::new();

    reports.push((
        "l1",
        gradcheck(
            |tape, ids| l1_loss(tape, ids[0], ids[1]),
            &[img(&mut rng), img(&mut rng)],
            step,
            tol,
        )?,
    ));
    let l_net = nets.l.clone();
    reports.push((
        "encoder",
        gradcheck(
            move |tape, ids| encoder_loss(tape, &l_net, ids[0], ids[1], false).map(|(n, _)| n),
            &[img(&mut rng), img(&mut rng)],
            step,
            tol,
        )?,
    ));
    reports.push((
        "relativistic_d",
        gradcheck(
            |tape, ids| relativistic_pair(tape, ids[0], ids[1]).map(|(d, _)| d),
            &[logits(&mut rng, 4), logits(&mut rng, 4)],
            step,
            tol,
        )?,
    ));
    reports.push((
        "relativistic_g",
        gradcheck(
            |tape, ids| relativistic_pair(tape, ids[0], ids[1]).map(|(_, g)| g),
            &[logits(&mut rng, 4), logits(&mut rng, 4)],
            step,
            tol,
        )?,
    ));
    reports.push((
        "standard_adversarial",
        gradcheck(
            |tape, ids| standard_adversarial_g(tape, ids[0]),
            &[logits(&mut rng, 5)],
            step,
            tol,
        )?,
    ));
    let ccx_for_pts = ccx_cfg;
    reports.push((
        "ccx",
        gradcheck(
            move |tape, ids| ccx_loss(tape, ids[0], ids[1], &ccx_for_pts).map(|n| n.loss),
            &[pts(&mut rng), pts(&mut rng)],
            step,
            tol,
        )?,
    ));
    let probe = nets.probe.clone();
    reports.push((
        "perceptual_probe",
        gradcheck(
            move |tape, ids| perceptual_probe_loss(tape, &probe, ids[0], ids[1]),
            &[img(&mut rng), img(&mut rng)],
            step,
            tol,
        )?,
    ));
    let nets_for_obj = nets;
    reports.push((
        "composite_lsr",
        gradcheck(
            move |tape, ids| {
                composite_objective(
                    tape,
                    ObjectiveKind::Lsr,
                    ids[0],
                    ids[1],
                    &nets_for_obj,
                    &weights,
                    &ccx_cfg,
                )
                .map(|o| o.total)
            },
            &[img(&mut rng), img(&mut rng)],
            step,
            tol,
        )?,
    ));
    Ok(reports)
}
