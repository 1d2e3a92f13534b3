//! Two-stage optimization: PSNR-oriented pretraining of G and L, then joint
//! adversarial fine-tuning alternating D, G, L updates, plus the mu-sweep
//! harness.
//!
//! Every iteration is deterministic given the seed and configuration: batch
//! order and augmentation come from named counter-based PRNG streams that
//! are checkpointed together with the Adam moments, so an interrupted run
//! resumed from its checkpoint is bit-identical to an uninterrupted one.

mod adam;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamSlot, AdamState};
pub use schedule::{lr_at, ScheduleConfig, Stage};

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint::{self, Checkpoint};
use crate::data::Dataset;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::losses::{
    encoder_loss, generator_objective, l1_loss, relativistic_pair, CcxConfig, LossWeights,
    Objective, ObjectiveKind,
};
use crate::metrics::{evaluate, EvalReport, MetricSummary};
use crate::nets::{Networks, ParamBinding, SubNet};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

const HISTORY_CAP: usize = 256;

/// Mutable training state: iteration counter, per-network Adam moments, the
/// PRNG streams, and a short history of recent generator losses.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub iter: u64,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    pub adam_l: AdamState<T>,
    pub rng_order: Rng,
    pub rng_augment: Rng,
    pub history: VecDeque<(u64, f64)>,
}

impl<T: Elem> TrainState<T> {
    pub fn new(seed: u64, nets: &Networks<T>) -> Self {
        Self {
            iter: 0,
            adam_g: AdamState::new(&nets.net_entries(SubNet::Generator)),
            adam_d: AdamState::new(&nets.net_entries(SubNet::Discriminator)),
            adam_l: AdamState::new(&nets.net_entries(SubNet::Encoder)),
            rng_order: Rng::stream(seed, "order"),
            rng_augment: Rng::stream(seed, "augment"),
            history: VecDeque::with_capacity(HISTORY_CAP),
        }
    }

    fn push_history(&mut self, iter: u64, loss: f64) {
        if self.history.len() == HISTORY_CAP {
            self.history.pop_front();
        }
        self.history.push_back((iter, loss));
    }
}

/// Outcome of one training stage: the loss-curve CSV plus the first and
/// last generator losses observed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv: String,
    pub first_loss_g: Option<f64>,
    pub last_loss_g: Option<f64>,
}

fn stack<T: Elem>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or(Error::Domain {
        op: "stack",
        detail: "empty batch".into(),
    })?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                op: "stack",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new_unchecked(shape, data)
}

fn sample_batch<T: Elem>(
    dataset: &Dataset<T>,
    batch: usize,
    state: &mut TrainState<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut lrs = Vec::with_capacity(batch);
    let mut hrs = Vec::with_capacity(batch);
    for _ in 0..batch {
        let idx = state.rng_order.next_below(dataset.len());
        let variant = if dataset.augment {
            state.rng_augment.next_below(8) as u8
        } else {
            0
        };
        let pair = &dataset.pairs[idx];
        if variant == 0 {
            lrs.push(pair.lr.clone());
            hrs.push(pair.hr.clone());
        } else {
            let aug = pair.augment(variant)?;
            lrs.push(aug.lr);
            hrs.push(aug.hr);
        }
    }
    Ok((stack(&lrs)?, stack(&hrs)?))
}

/// Read the gradients of one network's bindings off the tape and apply one
/// Adam update to its parameters.
fn apply_update<T: Elem>(
    tape: &Tape<T>,
    bindings: &[ParamBinding],
    nets: &mut Networks<T>,
    which: SubNet,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    let grads: Vec<(&str, &[T])> = bindings
        .iter()
        .map(|b| {
            tape.grad_slice(b.id)
                .map(|g| (b.name.as_str(), g))
                .ok_or_else(|| Error::Domain {
                    op: "apply_update",
                    detail: format!("no gradient reached parameter `{}`", b.name),
                })
        })
        .collect::<Result<_>>()?;
    let mut params = nets.net_entries_mut(which);
    adam_step(state, cfg, lr, &mut params, &grads)
}

fn check_finite(name: &str, value: f64, iter: u64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Domain {
            op: "train",
            detail: format!("{name} diverged to {value} at iteration {iter}"),
        });
    }
    Ok(value)
}

/// PSNR-oriented pretraining: the generator minimizes pixel L1 against the
/// HR targets while the encoder learns to reproduce the bicubic LR images.
/// Emits a loss-curve CSV with columns iter, lr, loss_g_l1, loss_l_l1,
/// wall_ms.
pub fn pretrain<T: Elem>(
    nets: &mut Networks<T>,
    dataset: &Dataset<T>,
    schedule: &ScheduleConfig,
    adam_cfg: &AdamConfig,
    state: &mut TrainState<T>,
) -> Result<RunOutcome> {
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain {
            op: "pretrain",
            detail: "dataset is empty".into(),
        });
    }
    let mut csv = String::from("iter,lr,loss_g_l1,loss_l_l1,wall_ms\n");
    let mut first = None;
    let mut last = None;
    while state.iter < schedule.max_iters {
        let started = Instant::now();
        let iter = state.iter;
        let lr = lr_at(iter, schedule);
        let (z, y) = sample_batch(dataset, schedule.batch_size, state)?;

        // generator step: L1(G(z), y)
        let mut tape = Tape::new();
        let zc = tape.constant(z.clone());
        let yc = tape.constant(y.clone());
        let (gz, g_binds) = nets.g.forward(&mut tape, zc, true)?;
        let loss_g_node = l1_loss(&mut tape, gz, yc)?;
        let loss_g = check_finite("loss_g", tape.value(loss_g_node).item().as_f64(), iter)?;
        tape.backward(loss_g_node)?;
        apply_update(
            &tape,
            &g_binds,
            nets,
            SubNet::Generator,
            &mut state.adam_g,
            adam_cfg,
            lr,
        )?;

        // encoder step: L1(L(y), bicubic LR of y) -- the dataset's LR images
        let mut tape = Tape::new();
        let zc = tape.constant(z);
        let yc = tape.constant(y);
        let (ly, l_binds) = nets.l.forward(&mut tape, yc, true)?;
        let loss_l_node = l1_loss(&mut tape, ly, zc)?;
        let loss_l = check_finite("loss_l", tape.value(loss_l_node).item().as_f64(), iter)?;
        tape.backward(loss_l_node)?;
        apply_update(
            &tape,
            &l_binds,
            nets,
            SubNet::Encoder,
            &mut state.adam_l,
            adam_cfg,
            lr,
        )?;

        state.push_history(iter, loss_g);
        first.get_or_insert(loss_g);
        last = Some(loss_g);
        let wall_ms = started.elapsed().as_millis();
        csv.push_str(&format!("{iter},{lr},{loss_g},{loss_l},{wall_ms}\n"));
        state.iter += 1;
    }
    Ok(RunOutcome {
        csv,
        first_loss_g: first,
        last_loss_g: last,
    })
}

fn term_value(obj: &Objective, name: &str) -> f64 {
    obj.terms
        .iter()
        .find(|t| t.name == name)
        .map(|t| t.raw)
        .unwrap_or(0.0)
}

/// Joint adversarial fine-tuning. Each iteration performs, in order: a
/// discriminator step on the relativistic pair loss, a generator step on
/// the composite objective (gradients flow through D, L, and the probe but
/// only G updates), and an encoder step on the latent L1 loss. The encoder
/// step runs for every objective kind, so a zero-mu run of a latent-coupled
/// kind is bit-identical to its mu-less counterpart.
pub fn finetune<T: Elem>(
    nets: &mut Networks<T>,
    dataset: &Dataset<T>,
    weights: &LossWeights,
    kind: ObjectiveKind,
    schedule: &ScheduleConfig,
    ccx: &CcxConfig,
    adam_cfg: &AdamConfig,
    state: &mut TrainState<T>,
) -> Result<RunOutcome> {
    schedule.validate()?;
    weights.validate()?;
    ccx.validate()?;
    if !kind.uses_latent() && weights.mu != 0.0 {
        return Err(Error::Config(format!(
            "objective kind `{}` has no latent term; set mu = 0 or choose lsr/clsr/kkt (got mu = {})",
            kind.name(),
            weights.mu
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Domain {
            op: "finetune",
            detail: "dataset is empty".into(),
        });
    }
    let mut csv = String::from(
        "iter,lr,loss_d,loss_g,percep,ccx,adv_ra,adv_std,l1,latent,loss_l,wall_ms\n",
    );
    let mut first = None;
    let mut last = None;
    while state.iter < schedule.max_iters {
        let started = Instant::now();
        let iter = state.iter;
        let lr = lr_at(iter, schedule);
        let (z, y) = sample_batch(dataset, schedule.batch_size, state)?;

        // discriminator step
        let mut tape = Tape::new();
        let zc = tape.constant(z.clone());
        let yc = tape.constant(y.clone());
        let (gz, _) = nets.g.forward(&mut tape, zc, false)?;
        let d_bound = nets.d.bind(&mut tape, true);
        let c_real = nets.d.forward_with(&mut tape, &d_bound, yc)?;
        let c_fake = nets.d.forward_with(&mut tape, &d_bound, gz)?;
        let (loss_d_node, _) = relativistic_pair(&mut tape, c_real, c_fake)?;
        let loss_d = check_finite("loss_d", tape.value(loss_d_node).item().as_f64(), iter)?;
        tape.backward(loss_d_node)?;
        apply_update(
            &tape,
            &d_bound.bindings,
            nets,
            SubNet::Discriminator,
            &mut state.adam_d,
            adam_cfg,
            lr,
        )?;

        // generator step
        let mut tape = Tape::new();
        let zc = tape.constant(z.clone());
        let yc = tape.constant(y.clone());
        let (obj, g_binds, _) =
            generator_objective(&mut tape, kind, zc, yc, nets, weights, ccx, true)?;
        let loss_g = check_finite("loss_g", tape.value(obj.total).item().as_f64(), iter)?;
        tape.backward(obj.total)?;
        apply_update(
            &tape,
            &g_binds,
            nets,
            SubNet::Generator,
            &mut state.adam_g,
            adam_cfg,
            lr,
        )?;

        // encoder step
        let mut tape = Tape::new();
        let zc = tape.constant(z);
        let yc = tape.constant(y);
        let (gz, _) = nets.g.forward(&mut tape, zc, false)?;
        let (loss_l_node, l_binds) = encoder_loss(&mut tape, &nets.l, yc, gz, true)?;
        let loss_l = check_finite("loss_l", tape.value(loss_l_node).item().as_f64(), iter)?;
        tape.backward(loss_l_node)?;
        apply_update(
            &tape,
            &l_binds,
            nets,
            SubNet::Encoder,
            &mut state.adam_l,
            adam_cfg,
            lr,
        )?;

        state.push_history(iter, loss_g);
        first.get_or_insert(loss_g);
        last = Some(loss_g);
        let wall_ms = started.elapsed().as_millis();
        csv.push_str(&format!(
            "{iter},{lr},{loss_d},{loss_g},{},{},{},{},{},{},{loss_l},{wall_ms}\n",
            term_value(&obj, "percep"),
            term_value(&obj, "ccx"),
            term_value(&obj, "adv_ra"),
            term_value(&obj, "adv_std"),
            term_value(&obj, "l1"),
            term_value(&obj, "latent"),
        ));
        state.iter += 1;
    }
    Ok(RunOutcome {
        csv,
        first_loss_g: first,
        last_loss_g: last,
    })
}

/// Run the generator over a single (3,h,w) image.
pub fn super_resolve<T: Elem>(nets: &Networks<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
    let s = img.shape().to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "super_resolve",
            lhs: s,
            rhs: vec![3, 0, 0],
        });
    }
    let mut tape = Tape::new();
    let z = tape.constant(img.clone().reshaped(vec![1, s[0], s[1], s[2]])?);
    let (gz, _) = nets.g.forward(&mut tape, z, false)?;
    let out_shape = tape.shape(gz)[1..].to_vec();
    tape.value(gz).clone().reshaped(out_shape)
}

/// Run the encoder over a single (3,H,W) image, yielding its LR-shaped
/// latent representation.
pub fn encode_latent<T: Elem>(nets: &Networks<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
    let s = img.shape().to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "encode_latent",
            lhs: s,
            rhs: vec![3, 0, 0],
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant(img.clone().reshaped(vec![1, s[0], s[1], s[2]])?);
    let (lx, _) = nets.l.forward(&mut tape, x, false)?;
    let out_shape = tape.shape(lx)[1..].to_vec();
    tape.value(lx).clone().reshaped(out_shape)
}

/// Evaluate a generator over a dataset (the standard protocol).
pub fn evaluate_generator<T: Elem>(
    nets: &Networks<T>,
    dataset: &Dataset<T>,
    threads: usize,
) -> Result<EvalReport> {
    evaluate(|lr| super_resolve(nets, lr), dataset, threads)
}

/// One row of the mu sweep.
#[derive(Debug, Clone)]
pub struct MuSweepRow {
    pub mu: f64,
    pub summary: MetricSummary,
}

/// Outcome of sweeping the latent-regularization weight.
#[derive(Debug, Clone)]
pub struct MuSweepOutcome<T> {
    pub rows: Vec<MuSweepRow>,
    pub trained: Vec<Networks<T>>,
    pub warnings: Vec<String>,
    pub csv: String,
}

/// Fine-tune one model per mu value from the same pretrained snapshot and
/// seed, then evaluate each on the held-out dataset. Values outside
/// [0, 1e-2] are trained anyway but flagged with a warning.
#[allow(clippy::too_many_arguments)]
pub fn mu_sweep<T: Elem>(
    base: &Networks<T>,
    dataset: &Dataset<T>,
    eval_dataset: &Dataset<T>,
    weights: &LossWeights,
    kind: ObjectiveKind,
    schedule: &ScheduleConfig,
    ccx: &CcxConfig,
    adam_cfg: &AdamConfig,
    seed: u64,
    mus: &[f64],
) -> Result<MuSweepOutcome<T>> {
    let mut rows = Vec::new();
    let mut trained = Vec::new();
    let mut warnings = Vec::new();
    let mut csv =
        String::from("mu,psnr_mean,psnr_std,ssim_mean,ssim_std,l1_mean,l1_std\n");
    for &mu in mus {
        if !(0.0..=1e-2).contains(&mu) {
            warnings.push(format!("mu = {mu} lies outside the studied range [0, 1e-2]"));
        }
        let mut nets = base.clone();
        let mut state = TrainState::new(seed, &nets);
        let w = LossWeights { mu, ..*weights };
        finetune(&mut nets, dataset, &w, kind, schedule, ccx, adam_cfg, &mut state)?;
        let report = evaluate_generator(&nets, eval_dataset, 1)?;
        let s = report.summary;
        csv.push_str(&format!(
            "{mu},{},{},{},{},{},{}\n",
            s.psnr_mean, s.psnr_std, s.ssim_mean, s.ssim_std, s.l1_mean, s.l1_std
        ));
        rows.push(MuSweepRow { mu, summary: s });
        trained.push(nets);
    }
    Ok(MuSweepOutcome {
        rows,
        trained,
        warnings,
        csv,
    })
}

// ---- checkpoint integration ----

const W_ITER: &str = "state.iter";
const W_RNG_ORDER: &str = "state.rng.order";
const W_RNG_AUGMENT: &str = "state.rng.augment";

fn moments_into<T: Elem>(ckpt: &mut Checkpoint<T>, adam: &AdamState<T>, tag: &str) -> Result<()> {
    ckpt.push_word(format!("state.adam.{tag}.t"), adam.t)?;
    for slot in &adam.slots {
        let shapeless = vec![slot.m.len()];
        ckpt.tensors.push(
            format!("opt.{}.m", slot.name),
            Tensor::new_unchecked(shapeless.clone(), slot.m.clone())?,
        )?;
        ckpt.tensors.push(
            format!("opt.{}.v", slot.name),
            Tensor::new_unchecked(shapeless, slot.v.clone())?,
        )?;
    }
    Ok(())
}

fn moments_from<T: Elem>(
    ckpt: &Checkpoint<T>,
    nets: &Networks<T>,
    which: SubNet,
    tag: &str,
) -> Result<AdamState<T>> {
    let mut adam = AdamState::new(&nets.net_entries(which));
    adam.t = ckpt
        .word(&format!("state.adam.{tag}.t"))
        .ok_or_else(|| Error::Checkpoint(format!("missing state.adam.{tag}.t")))?;
    for slot in &mut adam.slots {
        for (field, dst) in [("m", &mut slot.m), ("v", &mut slot.v)] {
            let name = format!("opt.{}.{field}", slot.name);
            let t = ckpt
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing moment `{name}`")))?;
            if t.len() != dst.len() {
                return Err(Error::Checkpoint(format!("moment `{name}` has wrong size")));
            }
            dst.copy_from_slice(t.data());
        }
    }
    Ok(adam)
}

/// Serialize networks (and, when given, the full training state) into a
/// checkpoint structure.
pub fn to_checkpoint<T: Elem>(
    nets: &Networks<T>,
    state: Option<&TrainState<T>>,
) -> Result<Checkpoint<T>> {
    let mut ckpt = Checkpoint::new();
    ckpt.tensors = nets.export_params();
    if let Some(state) = state {
        ckpt.push_word(W_ITER, state.iter)?;
        ckpt.push_word(W_RNG_ORDER, state.rng_order.state())?;
        ckpt.push_word(W_RNG_AUGMENT, state.rng_augment.state())?;
        moments_into(&mut ckpt, &state.adam_g, "g")?;
        moments_into(&mut ckpt, &state.adam_d, "d")?;
        moments_into(&mut ckpt, &state.adam_l, "l")?;
    }
    Ok(ckpt)
}

pub fn save_train_checkpoint<T: Elem>(
    path: &Path,
    nets: &Networks<T>,
    state: Option<&TrainState<T>>,
) -> Result<()> {
    checkpoint::save(path, &to_checkpoint(nets, state)?)
}

/// Load a checkpoint's parameters into existing networks and reconstruct
/// the training state if the file carries one.
pub fn load_train_checkpoint<T: Elem>(
    path: &Path,
    nets: &mut Networks<T>,
) -> Result<Option<TrainState<T>>> {
    let ckpt: Checkpoint<T> = checkpoint::load(path)?;
    nets.import_params(&ckpt.tensors)?;
    let Some(iter) = ckpt.word(W_ITER) else {
        return Ok(None);
    };
    let order = ckpt
        .word(W_RNG_ORDER)
        .ok_or_else(|| Error::Checkpoint("missing state.rng.order".into()))?;
    let augment = ckpt
        .word(W_RNG_AUGMENT)
        .ok_or_else(|| Error::Checkpoint("missing state.rng.augment".into()))?;
    Ok(Some(TrainState {
        iter,
        adam_g: moments_from(&ckpt, nets, SubNet::Generator, "g")?,
        adam_d: moments_from(&ckpt, nets, SubNet::Discriminator, "d")?,
        adam_l: moments_from(&ckpt, nets, SubNet::Encoder, "l")?,
        rng_order: Rng::from_state(order),
        rng_augment: Rng::from_state(augment),
        history: VecDeque::new(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, DataSource, DatasetSpec, ImagePair};
    use crate::nets::{init_networks, NetConfig};

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            channels: 8,
            blocks: 1,
            d_base: 8,
            l_base: 8,
            probe_channels: [4, 8, 8],
            hr_size: 16,
        }
    }

    fn tiny_setup(seed: u64) -> (Networks<f32>, Dataset<f32>, TrainState<f32>) {
        let nets = init_networks::<f32>(&tiny_cfg(), seed).unwrap();
        let spec = DatasetSpec {
            source: DataSource::Synthetic { seed: 100 + seed },
            patch_size: 16,
            augment: true,
            count: 4,
        };
        let dataset = Dataset::load(&spec).unwrap();
        let state = TrainState::new(seed, &nets);
        (nets, dataset, state)
    }

    fn params_bytes(nets: &Networks<f32>) -> Vec<u8> {
        let mut out = Vec::new();
        for (_, t) in nets.export_params().iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn zero_iters_leaves_initialization_untouched() {
        let (mut nets, dataset, mut state) = tiny_setup(3);
        let before = params_bytes(&nets);
        let schedule = ScheduleConfig {
            max_iters: 0,
            batch_size: 2,
            ..ScheduleConfig::pretrain_default()
        };
        let out = pretrain(
            &mut nets,
            &dataset,
            &schedule,
            &AdamConfig::default(),
            &mut state,
        )
        .unwrap();
        assert_eq!(before, params_bytes(&nets));
        assert!(out.first_loss_g.is_none());
    }

    #[test]
    fn pretrain_is_deterministic() {
        let run = || {
            let (mut nets, dataset, mut state) = tiny_setup(5);
            let schedule = ScheduleConfig {
                max_iters: 10,
                batch_size: 2,
                ..ScheduleConfig::pretrain_default()
            };
            let out = pretrain(
                &mut nets,
                &dataset,
                &schedule,
                &AdamConfig::default(),
                &mut state,
            )
            .unwrap();
            (params_bytes(&nets), strip_wall(&out.csv))
        };
        let (pa, ca) = run();
        let (pb, cb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ca, cb);
    }

    fn strip_wall(csv: &str) -> String {
        csv.lines()
            .map(|l| {
                let mut cols: Vec<&str> = l.split(',').collect();
                cols.pop();
                cols.join(",")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn pretrain_on_constant_image_converges() {
        let cfg = tiny_cfg();
        let mut nets = init_networks::<f32>(&cfg, 7).unwrap();
        let hr = Tensor::full(vec![3, 16, 16], 0.6f32);
        let lr = crate::data::downscale4(&hr).unwrap();
        let pair = ImagePair::new(lr, hr, "constant").unwrap();
        let dataset = Dataset {
            pairs: vec![pair],
            augment: false,
        };
        let mut state = TrainState::new(7, &nets);
        let schedule = ScheduleConfig {
            max_iters: 500,
            batch_size: 1,
            ..ScheduleConfig::pretrain_default()
        };
        let out = pretrain(
            &mut nets,
            &dataset,
            &schedule,
            &AdamConfig::default(),
            &mut state,
        )
        .unwrap();
        let first = out.first_loss_g.unwrap();
        let last = out.last_loss_g.unwrap();
        assert!(
            last < 0.1 * first,
            "expected >10x reduction, got {first} -> {last}"
        );
    }

    #[test]
    fn resume_from_checkpoint_is_bit_identical() {
        let dir = std::env::temp_dir().join("lsrgan_train_test");
        std::fs::create_dir_all(&dir).unwrap();

        // uninterrupted run: 12 iterations
        let (mut nets_a, dataset, mut state_a) = tiny_setup(9);
        let schedule = |iters: u64| ScheduleConfig {
            max_iters: iters,
            batch_size: 2,
            ..ScheduleConfig::pretrain_default()
        };
        pretrain(
            &mut nets_a,
            &dataset,
            &schedule(12),
            &AdamConfig::default(),
            &mut state_a,
        )
        .unwrap();

        // interrupted run: 6 iterations, checkpoint, reload, 6 more
        let (mut nets_b, dataset_b, mut state_b) = tiny_setup(9);
        pretrain(
            &mut nets_b,
            &dataset_b,
            &schedule(6),
            &AdamConfig::default(),
            &mut state_b,
        )
        .unwrap();
        let path = dir.join("resume.ckpt");
        save_train_checkpoint(&path, &nets_b, Some(&state_b)).unwrap();
        let mut nets_c = init_networks::<f32>(&tiny_cfg(), 1234).unwrap();
        let mut state_c = load_train_checkpoint(&path, &mut nets_c).unwrap().unwrap();
        pretrain(
            &mut nets_c,
            &dataset_b,
            &schedule(12),
            &AdamConfig::default(),
            &mut state_c,
        )
        .unwrap();

        assert_eq!(params_bytes(&nets_a), params_bytes(&nets_c));
        assert_eq!(state_a.iter, state_c.iter);
        assert_eq!(state_a.rng_order.state(), state_c.rng_order.state());
    }

    #[test]
    fn finetune_mu_zero_matches_cesr_bitwise() {
        let run = |kind: ObjectiveKind, mu: f64| {
            let (mut nets, dataset, mut state) = tiny_setup(11);
            let schedule = ScheduleConfig {
                max_iters: 4,
                batch_size: 2,
                ..ScheduleConfig::finetune_default()
            };
            let weights = LossWeights {
                mu,
                ..LossWeights::default()
            };
            finetune(
                &mut nets,
                &dataset,
                &weights,
                kind,
                &schedule,
                &CcxConfig::default(),
                &AdamConfig::default(),
                &mut state,
            )
            .unwrap();
            params_bytes(&nets)
        };
        assert_eq!(run(ObjectiveKind::Clsr, 0.0), run(ObjectiveKind::Cesr, 0.0));
        assert_ne!(run(ObjectiveKind::Clsr, 1e-3), run(ObjectiveKind::Cesr, 0.0));
    }

    #[test]
    fn one_iteration_updates_d_g_l_but_not_probe() {
        let (mut nets, dataset, mut state) = tiny_setup(13);
        let before_probe: Vec<Vec<f32>> = nets
            .export_params()
            .iter()
            .filter(|(n, _)| n.starts_with("probe."))
            .map(|(_, t)| t.data().to_vec())
            .collect();
        let before_all = params_bytes(&nets);
        let schedule = ScheduleConfig {
            max_iters: 1,
            batch_size: 2,
            ..ScheduleConfig::finetune_default()
        };
        finetune(
            &mut nets,
            &dataset,
            &LossWeights::default(),
            ObjectiveKind::Lsr,
            &schedule,
            &CcxConfig::default(),
            &AdamConfig::default(),
            &mut state,
        )
        .unwrap();
        let after_probe: Vec<Vec<f32>> = nets
            .export_params()
            .iter()
            .filter(|(n, _)| n.starts_with("probe."))
            .map(|(_, t)| t.data().to_vec())
            .collect();
        assert_eq!(before_probe, after_probe, "probe must stay frozen");
        assert_ne!(before_all, params_bytes(&nets));
        // every trainable sub-network moved
        for which in ["g.", "d.", "l.conv"] {
            let moved = nets
                .export_params()
                .iter()
                .filter(|(n, _)| n.starts_with(which))
                .count();
            assert!(moved > 0);
        }
        assert_eq!(state.adam_g.t, 1);
        assert_eq!(state.adam_d.t, 1);
        assert_eq!(state.adam_l.t, 1);
    }

    #[test]
    fn g_step_and_l_step_mutate_only_their_network() {
        let (mut nets, dataset, mut state) = tiny_setup(17);
        let grab = |nets: &Networks<f32>, prefix: &str| -> Vec<Vec<f32>> {
            nets.export_params()
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(_, t)| t.data().to_vec())
                .collect()
        };
        let (z, y) = sample_batch(&dataset, 2, &mut state).unwrap();

        // generator step alone: D, L, probe must stay untouched
        let d0 = grab(&nets, "d.");
        let l0 = grab(&nets, "l.");
        let p0 = grab(&nets, "probe.");
        let g0 = grab(&nets, "g.");
        let mut tape = Tape::new();
        let zc = tape.constant(z.clone());
        let yc = tape.constant(y.clone());
        let (obj, g_binds, _) = generator_objective(
            &mut tape,
            ObjectiveKind::Lsr,
            zc,
            yc,
            &nets,
            &LossWeights::default(),
            &CcxConfig::default(),
            true,
        )
        .unwrap();
        tape.backward(obj.total).unwrap();
        apply_update(
            &tape,
            &g_binds,
            &mut nets,
            SubNet::Generator,
            &mut state.adam_g,
            &AdamConfig::default(),
            1e-4,
        )
        .unwrap();
        assert_eq!(d0, grab(&nets, "d."));
        assert_eq!(l0, grab(&nets, "l."));
        assert_eq!(p0, grab(&nets, "probe."));
        assert_ne!(g0, grab(&nets, "g."));

        // encoder step alone: G, D, probe must stay untouched
        let g1 = grab(&nets, "g.");
        let d1 = grab(&nets, "d.");
        let mut tape = Tape::new();
        let zc = tape.constant(z);
        let yc = tape.constant(y);
        let (gz, _) = nets.g.forward(&mut tape, zc, false).unwrap();
        let (loss_l, l_binds) = encoder_loss(&mut tape, &nets.l, yc, gz, true).unwrap();
        tape.backward(loss_l).unwrap();
        apply_update(
            &tape,
            &l_binds,
            &mut nets,
            SubNet::Encoder,
            &mut state.adam_l,
            &AdamConfig::default(),
            1e-4,
        )
        .unwrap();
        assert_eq!(g1, grab(&nets, "g."));
        assert_eq!(d1, grab(&nets, "d."));
        assert_eq!(p0, grab(&nets, "probe."));
        assert_ne!(l0, grab(&nets, "l."));
    }

    #[test]
    fn mu_sweep_shapes_and_empty_case() {
        let (nets, dataset, _) = tiny_setup(15);
        let eval_pairs = synth_dataset::<f32>(777, 2, 16).unwrap();
        let eval_ds = Dataset {
            pairs: eval_pairs,
            augment: false,
        };
        let schedule = ScheduleConfig {
            max_iters: 2,
            batch_size: 2,
            ..ScheduleConfig::finetune_default()
        };
        let out = mu_sweep(
            &nets,
            &dataset,
            &eval_ds,
            &LossWeights::default(),
            ObjectiveKind::Lsr,
            &schedule,
            &CcxConfig::default(),
            &AdamConfig::default(),
            15,
            &[0.0, 1e-3],
        )
        .unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.trained.len(), 2);
        assert_eq!(out.csv.lines().count(), 3);

        let empty = mu_sweep(
            &nets,
            &dataset,
            &eval_ds,
            &LossWeights::default(),
            ObjectiveKind::Lsr,
            &schedule,
            &CcxConfig::default(),
            &AdamConfig::default(),
            15,
            &[],
        )
        .unwrap();
        assert!(empty.rows.is_empty());
        assert_eq!(empty.csv.lines().count(), 1);

        let warned = mu_sweep(
            &nets,
            &dataset,
            &eval_ds,
            &LossWeights::default(),
            ObjectiveKind::Lsr,
            &schedule,
            &CcxConfig::default(),
            &AdamConfig::default(),
            15,
            &[0.5],
        )
        .unwrap();
        assert_eq!(warned.warnings.len(), 1);
    }

    #[test]
    fn mu_sweep_single_value_equals_plain_finetune() {
        let (nets, dataset, _) = tiny_setup(19);
        let eval_ds = Dataset {
            pairs: synth_dataset::<f32>(888, 2, 16).unwrap(),
            augment: false,
        };
        let schedule = ScheduleConfig {
            max_iters: 3,
            batch_size: 2,
            ..ScheduleConfig::finetune_default()
        };
        let weights = LossWeights::default();
        let sweep = mu_sweep(
            &nets,
            &dataset,
            &eval_ds,
            &weights,
            ObjectiveKind::Lsr,
            &schedule,
            &CcxConfig::default(),
            &AdamConfig::default(),
            19,
            &[0.0],
        )
        .unwrap();

        let mut direct = nets.clone();
        let mut state = TrainState::new(19, &direct);
        finetune(
            &mut direct,
            &dataset,
            &LossWeights { mu: 0.0, ..weights },
            ObjectiveKind::Lsr,
            &schedule,
            &CcxConfig::default(),
            &AdamConfig::default(),
            &mut state,
        )
        .unwrap();
        let report = evaluate_generator(&direct, &eval_ds, 1).unwrap();
        assert_eq!(sweep.rows.len(), 1);
        assert_eq!(sweep.rows[0].summary.l1_mean, report.summary.l1_mean);
        assert_eq!(sweep.rows[0].summary.psnr_mean, report.summary.psnr_mean);
        assert_eq!(params_bytes(&sweep.trained[0]), params_bytes(&direct));
    }
}
