use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mtard_core::data::{self, CifarVariant, Dataset, Split};
use mtard_core::eval::{evaluate, MetricRecord};
use mtard_core::nets::{self, checkpoint, NetworkParams, NetworkSpec};
use mtard_core::seeds::{self, stream};
use mtard_core::trainer::{self, EpochEnd, Mode, RunOptions, RunState, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{DataKind, ModelKind, RunConfig};
use crate::{DataArgs, EvalArgs, Format, RunArgs, UsageError};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const METRICS: &str = "metrics.jsonl";
pub const RUN_STATE: &str = "run_state.json";
pub const CHECKPOINT_LAST: &str = "checkpoint-last.mtrd";
pub const CHECKPOINT_BEST: &str = "checkpoint-best.mtrd";

#[derive(Debug, Serialize, Deserialize)]
pub struct TeacherEntry {
    pub path: PathBuf,
    pub fingerprint: String,
}

/// Summary of a run directory. Artifact paths are relative to the directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub epochs: usize,
    pub epochs_done: usize,
    pub completed: bool,
    pub best_epoch: Option<usize>,
    pub best_w_robust: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub teachers: BTreeMap<String, TeacherEntry>,
    pub artifacts: BTreeMap<String, String>,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(args: &DataArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.subset.is_some() {
        cfg.data.subset = args.subset;
    }
    Ok(cfg)
}

fn resolve(p: &Path, base: Option<&Path>) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

/// Train and test sets as the configured model consumes them.
pub fn load_data(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let path = |p: &Option<PathBuf>| resolve(p.as_deref().expect("checked by validate"), data_dir);
    let noise = d.noise.map_or(0.1, |n| n.0);
    let seed = d.seed.unwrap_or_else(|| seeds::derive(cfg.seed, &[stream::DATA]));
    let (train, test) = match d.kind {
        DataKind::TwoMoons => data::two_moons_split(d.n_train.unwrap(), d.n_test.unwrap(), noise, seed)?,
        DataKind::Blobs => data::blobs_split(d.n_train.unwrap(), d.n_test.unwrap(), d.classes.unwrap(), noise, seed)?,
        DataKind::Idx => (
            data::load_idx(path(&d.train), path(&d.train_labels), d.classes, None, Split::Train)?,
            data::load_idx(path(&d.test), path(&d.test_labels), d.classes, None, Split::Test)?,
        ),
        DataKind::Cifar10 | DataKind::Cifar100 => {
            let v = if d.kind == DataKind::Cifar10 { CifarVariant::Cifar10 } else { CifarVariant::Cifar100 };
            (
                data::load_cifar_binary(path(&d.train), v, None, Split::Train)?,
                data::load_cifar_binary(path(&d.test), v, None, Split::Test)?,
            )
        }
        DataKind::Cache => (
            data::load_dataset(path(&d.train))?.with_split(Split::Train),
            data::load_dataset(path(&d.test))?.with_split(Split::Test),
        ),
    };
    let train = match d.subset {
        Some(k) => train.take(k)?,
        None => train,
    };
    let test = match cfg.eval.subset {
        Some(k) => test.take(k)?,
        None => test,
    };
    if train.classes() != test.classes() || train.input_shape() != test.input_shape() {
        anyhow::bail!("train and test sets disagree on classes or example shape");
    }
    Ok(match cfg.model.kind {
        ModelKind::Mlp => (train.flattened(), test.flattened()),
        ModelKind::Conv => (train, test),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn io_err(path: &Path, source: std::io::Error) -> mtard_core::Error {
    mtard_core::Error::Io { path: path.to_path_buf(), source }
}

fn metrics_jsonl(history: &[MetricRecord]) -> String {
    history.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

struct RunDir<'a> {
    dir: PathBuf,
    cfg: &'a RunConfig,
    hash: String,
    teachers: Vec<(String, PathBuf, String)>,
}

impl RunDir<'_> {
    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn save(&self, params: &NetworkParams, state: &RunState, is_best: bool) -> mtard_core::Result<()> {
        let put = |name: &str, bytes: &[u8]| {
            let p = self.file(name);
            write_atomic(&p, bytes).map_err(|e| io_err(&p, e))
        };
        let ckpt = checkpoint::to_bytes(params);
        put(CHECKPOINT_LAST, &ckpt)?;
        if is_best {
            put(CHECKPOINT_BEST, &ckpt)?;
        }
        put(RUN_STATE, serde_json::to_string_pretty(state)?.as_bytes())?;
        put(METRICS, metrics_jsonl(&state.history).as_bytes())?;
        put(MANIFEST, serde_json::to_string_pretty(&self.manifest(state))?.as_bytes())
    }

    fn manifest(&self, state: &RunState) -> Manifest {
        let best = mtard_core::eval::select_best_checkpoint(&state.history).ok();
        let mut artifacts = BTreeMap::new();
        for (k, v) in [
            ("config", CONFIG),
            ("metrics", METRICS),
            ("run_state", RUN_STATE),
            ("checkpoint_last", CHECKPOINT_LAST),
        ] {
            artifacts.insert(k.to_string(), v.to_string());
        }
        if best.is_some() {
            artifacts.insert("checkpoint_best".into(), CHECKPOINT_BEST.into());
        }
        Manifest {
            version: env!("CARGO_PKG_VERSION").into(),
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
            epochs: self.cfg.train.epochs,
            epochs_done: state.epochs_done,
            completed: state.epochs_done >= self.cfg.train.epochs,
            best_epoch: best,
            best_w_robust: best.map(|e| state.history[e].w_robust),
            teachers: self
                .teachers
                .iter()
                .map(|(k, p, f)| (k.clone(), TeacherEntry { path: p.clone(), fingerprint: f.clone() }))
                .collect(),
            artifacts,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn progress(r: &MetricRecord, epochs: usize) {
    let robust = r.robust_acc.get(&r.designated).copied().unwrap_or(f64::NAN);
    let mut line = format!(
        "epoch {:>3}/{epochs}  loss {:.4}  clean {:.4}  {} {:.4}  w {:.4}",
        r.epoch + 1,
        r.train_loss,
        r.clean_acc,
        r.designated,
        robust,
        r.w_robust
    );
    if let Some(c) = &r.controller {
        line += &format!("  tau {:.3}/{:.3}  weights {:.3}/{:.3}", c.tau_nat, c.tau_adv, c.w_nat, c.w_adv);
    }
    eprintln!("{line}");
}

fn load_teacher(path: &Path, spec: &NetworkSpec) -> Result<NetworkParams> {
    nets::load_checkpoint(path, spec).with_context(|| format!("loading teacher {}", path.display()))
}

/// `pretrain` and `distill`.
pub fn run(args: RunArgs, pretrain: bool) -> Result<()> {
    let mut cfg = load_config(&args.data)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    let cmd = if pretrain { "pretrain" } else { "distill" };
    if cfg.mode.is_pretrain() != pretrain {
        return Err(usage(format!("mode {} cannot be used with {cmd}", cfg.mode)));
    }
    cfg.validate()?;
    let tc: TrainConfig = cfg.train_config();
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.mode, cfg.seed)));
    let hash = cfg.content_hash();

    let resume = if args.resume {
        let m: Manifest = read_json(&dir.join(MANIFEST)).map_err(|e| usage(format!("cannot resume: {e:#}")))?;
        if m.config_hash != hash {
            return Err(usage(format!(
                "cannot resume: {} was produced by a different configuration",
                dir.display()
            )));
        }
        Some(read_json::<RunState>(&dir.join(RUN_STATE))?)
    } else {
        if dir.join(MANIFEST).exists() {
            return Err(usage(format!(
                "{} already holds a run; pass --resume or choose another --out",
                dir.display()
            )));
        }
        None
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG), cfg.to_toml()).context("writing config snapshot")?;

    let (train, test) = load_data(&cfg, args.data.data_dir.as_deref())?;
    let spec = cfg.model.spec(train.input_shape(), train.classes())?;
    let resume = match resume {
        Some(state) => Some((nets::load_checkpoint(dir.join(CHECKPOINT_LAST), &spec)?, state)),
        None => None,
    };

    let mut teachers = Vec::new();
    let mut teacher_params = None;
    if let Some(t) = &cfg.teachers {
        let tspec = t.model.spec(train.input_shape(), train.classes())?;
        let clean = load_teacher(&t.clean, &tspec)?;
        let robust = load_teacher(&t.robust, &tspec)?;
        for (k, p, n) in [("clean", &t.clean, &clean), ("robust", &t.robust, &robust)] {
            teachers.push((k.to_string(), p.clone(), format!("{:016x}", n.content_fingerprint())));
        }
        teacher_params = Some((clean, robust));
    }

    let rd = RunDir { dir, cfg: &cfg, hash, teachers };
    let epochs = tc.epochs;
    let quiet = args.quiet;
    let mut hook = |e: &EpochEnd<'_>| -> mtard_core::Result<()> {
        if !quiet {
            progress(e.record, epochs);
        }
        rd.save(e.params, e.state, e.is_best)
    };
    let opts = RunOptions {
        eval_data: Some(&test),
        resume,
        halt_after: args.halt_after,
        record_events: false,
        on_epoch: Some(&mut hook),
    };
    let out = match (cfg.mode, &teacher_params) {
        (Mode::Natural, _) => trainer::train_natural(&spec, &train, &tc, opts),
        (Mode::Sat, _) => trainer::train_sat(&spec, &train, &tc, opts),
        (_, Some((clean, robust))) => trainer::distill_mtard(&spec, clean, robust, &train, &tc, opts),
        (_, None) => unreachable!("validate requires teachers for distillation"),
    }?;
    if out.state.history.is_empty() {
        rd.save(&out.params, &out.state, false)?;
    }
    let m = rd.manifest(&out.state);
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

/// Score a checkpoint on the test split.
pub fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.data)?;
    cfg.eval.to_core().validate().map_err(|e| usage(format!("config: {e}")))?;
    let (train, test) = load_data(&cfg, args.data.data_dir.as_deref())?;
    let spec = cfg.model.spec(train.input_shape(), train.classes())?;
    let params = nets::load_checkpoint(&args.checkpoint, &spec)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let record = evaluate(&params, &test, &cfg.eval.to_core(), 0, seeds::derive(cfg.seed, &[stream::EVAL]))?;
    match args.format {
        Format::Json => println!("{}", serde_json::to_string(&record)?),
        Format::Csv => {
            let recs = std::slice::from_ref(&record);
            print!("{}", crate::report::to_csv(recs));
        }
    }
    Ok(())
}
