use crate::error::{Error, Result};

/// Training stage; the two stages decay the learning rate differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Learning-rate schedule and loop sizing for one stage.
///
/// Pretraining halves the rate every `halve_every` iterations (default
/// 200k from a base of 2e-4); fine-tuning halves it at each milestone
/// (default 50k/100k/200k/300k from a base of 1e-4). `max_iters` and
/// `batch_size` carry the desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub stage: Stage,
    pub base_lr: f64,
    pub max_iters: u64,
    pub batch_size: usize,
    pub halve_every: u64,
    pub milestones: Vec<u64>,
}

impl ScheduleConfig {
    pub fn pretrain_default() -> Self {
        Self {
            stage: Stage::Pretrain,
            base_lr: 2e-4,
            max_iters: 2000,
            batch_size: 4,
            halve_every: 200_000,
            milestones: vec![50_000, 100_000, 200_000, 300_000],
        }
    }

    pub fn finetune_default() -> Self {
        Self {
            stage: Stage::Finetune,
            base_lr: 1e-4,
            ..Self::pretrain_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr must be finite and > 0, got {}",
                self.base_lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.halve_every == 0 {
            return Err(Error::Config("halve_every must be >= 1".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must strictly increase: {:?}",
                self.milestones
            )));
        }
        Ok(())
    }
}

/// Learning rate at an iteration. Pretrain: halve every `halve_every`
/// iterations. Finetune: halve once per milestone already reached.
pub fn lr_at(iter: u64, schedule: &ScheduleConfig) -> f64 {
    let halvings = match schedule.stage {
        Stage::Pretrain => iter / schedule.halve_every,
        Stage::Finetune => schedule.milestones.iter().filter(|&&m| m <= iter).count() as u64,
    };
    schedule.base_lr * 0.5f64.powi(halvings as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretrain_schedule_values() {
        let s = ScheduleConfig::pretrain_default();
        assert_eq!(lr_at(0, &s), 2e-4);
        assert_eq!(lr_at(199_999, &s), 2e-4);
        assert_eq!(lr_at(200_000, &s), 1e-4);
        assert_eq!(lr_at(400_000, &s), 5e-5);
    }

    #[test]
    fn finetune_milestones() {
        let s = ScheduleConfig::finetune_default();
        assert_eq!(lr_at(0, &s), 1e-4);
        assert_eq!(lr_at(49_999, &s), 1e-4);
        assert_eq!(lr_at(50_000, &s), 5e-5);
        assert_eq!(lr_at(125_000, &s), 2.5e-5);
        assert_eq!(lr_at(300_000, &s), 6.25e-6);
    }

    #[test]
    fn lr_never_increases() {
        for s in [
            ScheduleConfig::pretrain_default(),
            ScheduleConfig::finetune_default(),
        ] {
            let mut last = f64::INFINITY;
            for iter in (0..400_000).step_by(10_000) {
                let lr = lr_at(iter, &s);
                assert!(lr <= last);
                last = lr;
            }
        }
    }

    #[test]
    fn decreasing_milestones_rejected() {
        let s = ScheduleConfig {
            milestones: vec![100, 50],
            ..ScheduleConfig::finetune_default()
        };
        assert!(s.validate().is_err());
    }
}
