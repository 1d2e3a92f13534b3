//! Run configuration: an INI-style key/value file with sections.
//!
//! Validation is total: every violation in the file is collected and
//! reported at once rather than stopping at the first problem.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lsrgan_core::data::{DataSource, DatasetSpec};
use lsrgan_core::losses::{CcxConfig, DistanceMode, LossWeights, LsrSign, ObjectiveKind, ReferenceMode};
use lsrgan_core::nets::NetConfig;
use lsrgan_core::train::{ScheduleConfig, Stage};

/// A fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub eval_dataset: DatasetSpec,
    pub net: NetConfig,
    pub probe_weights: Option<PathBuf>,
    pub weights: LossWeights,
    pub ccx: CcxConfig,
    pub pretrain: ScheduleConfig,
    pub finetune: ScheduleConfig,
    pub kind: ObjectiveKind,
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    used: std::cell::Cell<bool>,
}

struct Parsed {
    entries: Vec<Entry>,
}

impl Parsed {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
            .inspect(|e| e.used.set(true))
    }
}

fn parse_ini(text: &str, problems: &mut Vec<String>) -> Parsed {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) => section = name.trim().to_string(),
                None => problems.push(format!("line {}: malformed section header", lineno + 1)),
            }
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => entries.push(Entry {
                section: section.clone(),
                key: k.trim().to_string(),
                value: v.trim().to_string(),
                line: lineno + 1,
                used: std::cell::Cell::new(false),
            }),
            None => problems.push(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )),
        }
    }
    Parsed { entries }
}

fn field<T: std::str::FromStr>(
    parsed: &Parsed,
    problems: &mut Vec<String>,
    section: &str,
    key: &str,
    default: T,
    describe: &str,
) -> T {
    match parsed.get(section, key) {
        None => default,
        Some(e) => match e.value.parse::<T>() {
            Ok(v) => v,
            Err(_) => {
                problems.push(format!(
                    "line {}: [{section}] {key} = `{}` is not a valid {describe}",
                    e.line, e.value
                ));
                default
            }
        },
    }
}

fn parse_source(value: &str) -> Result<DataSource, String> {
    if let Some(seed) = value.strip_prefix("synth:") {
        let seed = seed
            .parse::<u64>()
            .map_err(|_| format!("`{value}`: synth seed must be an unsigned integer"))?;
        Ok(DataSource::Synthetic { seed })
    } else if let Some(path) = value.strip_prefix("dir:") {
        Ok(DataSource::Directory(PathBuf::from(path)))
    } else {
        Err(format!(
            "`{value}`: expected `synth:SEED` or `dir:PATH`"
        ))
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| format!("`{s}` is not a valid number"))
        })
        .collect()
}

fn dataset_section(
    parsed: &Parsed,
    problems: &mut Vec<String>,
    section: &str,
    default_source: DataSource,
    default_count: usize,
    default_augment: bool,
) -> DatasetSpec {
    let source = match parsed.get(section, "source") {
        None => default_source,
        Some(e) => match parse_source(&e.value) {
            Ok(s) => s,
            Err(msg) => {
                problems.push(format!("line {}: [{section}] source {msg}", e.line));
                default_source
            }
        },
    };
    DatasetSpec {
        source,
        patch_size: field(parsed, problems, section, "patch", 32, "integer"),
        augment: field(parsed, problems, section, "augment", default_augment, "boolean"),
        count: field(parsed, problems, section, "count", default_count, "integer"),
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("run", &["seed", "out_dir"]),
    ("dataset", &["source", "count", "patch", "augment"]),
    ("eval_dataset", &["source", "count", "patch", "augment"]),
    (
        "nets",
        &[
            "channels",
            "blocks",
            "d_base",
            "l_base",
            "probe_channels",
            "probe_weights",
        ],
    ),
    ("weights", &["lambda", "eta", "mu", "lsr_sign"]),
    ("ccx", &["h", "epsilon", "reference", "distance"]),
    ("pretrain", &["lr", "iters", "batch", "halve_every"]),
    ("finetune", &["lr", "iters", "batch", "milestones"]),
    ("objective", &["kind"]),
];

impl RunConfig {
    /// Parse and validate. On failure, returns every violation found.
    pub fn load(path: &Path) -> Result<RunConfig, Vec<String>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return Err(vec![format!("cannot read {}: {e}", path.display())]),
        };
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, Vec<String>> {
        let mut problems = Vec::new();
        let parsed = parse_ini(text, &mut problems);

        let known_sections: BTreeSet<&str> = KNOWN.iter().map(|(s, _)| *s).collect();
        for e in &parsed.entries {
            match KNOWN.iter().find(|(s, _)| *s == e.section) {
                None if !known_sections.contains(e.section.as_str()) => problems.push(format!(
                    "line {}: unknown section [{}]",
                    e.line, e.section
                )),
                Some((_, keys)) if !keys.contains(&e.key.as_str()) => problems.push(format!(
                    "line {}: unknown key `{}` in [{}]",
                    e.line, e.key, e.section
                )),
                _ => {}
            }
        }

        let seed = field(&parsed, &mut problems, "run", "seed", 7u64, "unsigned integer");
        let out_dir = PathBuf::from(
            parsed
                .get("run", "out_dir")
                .map(|e| e.value.clone())
                .unwrap_or_else(|| "runs/out".to_string()),
        );

        let dataset = dataset_section(
            &parsed,
            &mut problems,
            "dataset",
            DataSource::Synthetic { seed },
            16,
            true,
        );
        let eval_default = DataSource::Synthetic { seed: seed.wrapping_add(1000) };
        let eval_dataset = dataset_section(
            &parsed,
            &mut problems,
            "eval_dataset",
            eval_default,
            8,
            false,
        );

        let probe_channels = match parsed.get("nets", "probe_channels") {
            None => [8, 16, 16],
            Some(e) => match parse_list::<usize>(&e.value) {
                Ok(v) if v.len() == 3 => [v[0], v[1], v[2]],
                Ok(_) => {
                    problems.push(format!(
                        "line {}: [nets] probe_channels needs exactly 3 values",
                        e.line
                    ));
                    [8, 16, 16]
                }
                Err(msg) => {
                    problems.push(format!("line {}: [nets] probe_channels: {msg}", e.line));
                    [8, 16, 16]
                }
            },
        };
        let net = NetConfig {
            channels: field(&parsed, &mut problems, "nets", "channels", 32, "integer"),
            blocks: field(&parsed, &mut problems, "nets", "blocks", 4, "integer"),
            d_base: field(&parsed, &mut problems, "nets", "d_base", 16, "integer"),
            l_base: field(&parsed, &mut problems, "nets", "l_base", 16, "integer"),
            probe_channels,
            hr_size: dataset.patch_size,
        };
        let probe_weights = parsed
            .get("nets", "probe_weights")
            .map(|e| PathBuf::from(&e.value));

        let lsr_sign = match parsed.get("weights", "lsr_sign") {
            None => LsrSign::Minus,
            Some(e) => match e.value.as_str() {
                "minus" => LsrSign::Minus,
                "plus" => LsrSign::Plus,
                other => {
                    problems.push(format!(
                        "line {}: [weights] lsr_sign must be `minus` or `plus`, got `{other}`",
                        e.line
                    ));
                    LsrSign::Minus
                }
            },
        };
        let weights = LossWeights {
            lambda: field(&parsed, &mut problems, "weights", "lambda", 5e-3, "number"),
            eta: field(&parsed, &mut problems, "weights", "eta", 1e-2, "number"),
            mu: field(&parsed, &mut problems, "weights", "mu", 1e-3, "number"),
            lsr_sign,
        };

        let reference = match parsed.get("ccx", "reference") {
            None => ReferenceMode::MeanOfY,
            Some(e) => match e.value.as_str() {
                "mean_y" => ReferenceMode::MeanOfY,
                "zero" => ReferenceMode::Zero,
                other => {
                    problems.push(format!(
                        "line {}: [ccx] reference must be `mean_y` or `zero`, got `{other}`",
                        e.line
                    ));
                    ReferenceMode::MeanOfY
                }
            },
        };
        let distance = match parsed.get("ccx", "distance") {
            None => DistanceMode::CosineDistance,
            Some(e) => match e.value.as_str() {
                "cosine" => DistanceMode::CosineDistance,
                "literal" => DistanceMode::LiteralSimilarity,
                other => {
                    problems.push(format!(
                        "line {}: [ccx] distance must be `cosine` or `literal`, got `{other}`",
                        e.line
                    ));
                    DistanceMode::CosineDistance
                }
            },
        };
        let ccx = CcxConfig {
            h: field(&parsed, &mut problems, "ccx", "h", 0.5, "number"),
            epsilon: field(&parsed, &mut problems, "ccx", "epsilon", 1e-5, "number"),
            reference,
            distance,
        };

        let pretrain = ScheduleConfig {
            stage: Stage::Pretrain,
            base_lr: field(&parsed, &mut problems, "pretrain", "lr", 2e-4, "number"),
            max_iters: field(&parsed, &mut problems, "pretrain", "iters", 2000, "integer"),
            batch_size: field(&parsed, &mut problems, "pretrain", "batch", 4, "integer"),
            halve_every: field(
                &parsed,
                &mut problems,
                "pretrain",
                "halve_every",
                200_000,
                "integer",
            ),
            milestones: vec![50_000, 100_000, 200_000, 300_000],
        };
        let milestones = match parsed.get("finetune", "milestones") {
            None => vec![50_000, 100_000, 200_000, 300_000],
            Some(e) => match parse_list::<u64>(&e.value) {
                Ok(v) => v,
                Err(msg) => {
                    problems.push(format!("line {}: [finetune] milestones: {msg}", e.line));
                    vec![50_000, 100_000, 200_000, 300_000]
                }
            },
        };
        let finetune = ScheduleConfig {
            stage: Stage::Finetune,
            base_lr: field(&parsed, &mut problems, "finetune", "lr", 1e-4, "number"),
            max_iters: field(&parsed, &mut problems, "finetune", "iters", 2000, "integer"),
            batch_size: field(&parsed, &mut problems, "finetune", "batch", 4, "integer"),
            halve_every: 200_000,
            milestones,
        };

        let kind = match parsed.get("objective", "kind") {
            None => ObjectiveKind::Lsr,
            Some(e) => match ObjectiveKind::parse(&e.value) {
                Ok(k) => k,
                Err(err) => {
                    problems.push(format!("line {}: [objective] {err}", e.line));
                    ObjectiveKind::Lsr
                }
            },
        };

        // semantic validation on the assembled values
        for (what, result) in [
            ("dataset", dataset.validate()),
            ("eval_dataset", eval_dataset.validate()),
            ("nets", net.validate()),
            ("weights", weights.validate()),
            ("ccx", ccx.validate()),
            ("pretrain", pretrain.validate()),
            ("finetune", finetune.validate()),
        ] {
            if let Err(e) = result {
                problems.push(format!("[{what}] {e}"));
            }
        }
        for (label, spec) in [("dataset", &dataset), ("eval_dataset", &eval_dataset)] {
            if let DataSource::Directory(dir) = &spec.source {
                if !dir.is_dir() {
                    problems.push(format!(
                        "[{label}] source directory {} does not exist",
                        dir.display()
                    ));
                }
            }
        }
        if let Some(p) = &probe_weights {
            if !p.is_file() {
                problems.push(format!("[nets] probe_weights {} does not exist", p.display()));
            }
        }

        if problems.is_empty() {
            Ok(RunConfig {
                seed,
                out_dir,
                dataset,
                eval_dataset,
                net,
                probe_weights,
                weights,
                ccx,
                pretrain,
                finetune,
                kind,
            })
        } else {
            Err(problems)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse("[run]\nseed = 3\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.weights.lambda, 5e-3);
        assert_eq!(cfg.pretrain.base_lr, 2e-4);
        assert_eq!(cfg.finetune.base_lr, 1e-4);
        assert_eq!(cfg.net.hr_size, 32);
        assert_eq!(cfg.kind, ObjectiveKind::Lsr);
        assert!(matches!(
            cfg.dataset.source,
            DataSource::Synthetic { seed: 3 }
        ));
    }

    #[test]
    fn every_violation_is_reported() {
        let text = "\
[run]
seed = notanumber
[dataset]
patch = 7
[weights]
lambda = -1
[bogus]
x = 1
[objective]
kind = wgan
";
        let errs = RunConfig::parse(text).unwrap_err();
        let joined = errs.join("\n");
        assert!(joined.contains("seed"), "{joined}");
        assert!(joined.contains("patch_size"), "{joined}");
        assert!(joined.contains("lambda"), "{joined}");
        assert!(joined.contains("unknown section [bogus]"), "{joined}");
        assert!(joined.contains("wgan"), "{joined}");
        assert!(errs.len() >= 5, "{joined}");
    }

    #[test]
    fn unknown_key_is_flagged() {
        let errs = RunConfig::parse("[run]\nseeed = 3\n").unwrap_err();
        assert!(errs[0].contains("unknown key `seeed`"));
    }

    #[test]
    fn full_config_round_trip() {
        let text = "\
[run]
seed = 9
out_dir = /tmp/lsrgan_cfg_test
[dataset]
source = synth:9
count = 4
patch = 16
augment = false
[nets]
channels = 8
blocks = 1
d_base = 8
l_base = 8
probe_channels = 4,8,8
[weights]
lambda = 1e-3
eta = 2e-2
mu = 0
lsr_sign = plus
[ccx]
h = 0.7
distance = literal
[pretrain]
iters = 10
batch = 2
[finetune]
iters = 5
batch = 2
milestones = 2,4
[objective]
kind = cesr
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.net.channels, 8);
        assert_eq!(cfg.net.hr_size, 16);
        assert_eq!(cfg.weights.mu, 0.0);
        assert!(matches!(cfg.weights.lsr_sign, LsrSign::Plus));
        assert!(matches!(cfg.ccx.distance, DistanceMode::LiteralSimilarity));
        assert_eq!(cfg.finetune.milestones, vec![2, 4]);
        assert_eq!(cfg.kind, ObjectiveKind::Cesr);
    }
}
