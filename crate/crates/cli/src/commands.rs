//! Command implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sgcn_core::checkpoint::Checkpoint;
use sgcn_core::data::{synthesize, Dataset, SyntheticMotionSpec};
use sgcn_core::metrics::{evaluate_scores, fuse_scores, softmax_rows, Evaluation};
use sgcn_core::net::{ArchitectureDoc, BnMode, Network, NetworkMode};
use sgcn_core::search::{run_search, SearchEvent, TrainActivation};
use sgcn_core::train::{epoch_rng, mean_cross_entropy, predict_scores, train_epoch, Activation, TrainConfig};

use crate::config::RunConfig;
use crate::scores::ScoreTable;
use crate::{CliError, Command, EvalArgs, ExportArgs, FuseArgs, GendataArgs, RunArgs, SearchArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gendata(a) => gendata(&a),
        Command::Search(a) => search(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Fuse(a) => fuse(&a),
        Command::ExportArch(a) => export_arch(&a),
    }
}

fn out_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_dataset(path: &Path, bones: bool) -> Result<Dataset> {
    let data = Dataset::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(if bones { data.to_bones()? } else { data })
}

/// Line-delimited JSON records.
struct JsonLines {
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(path: &Path) -> Result<Self> {
        Ok(JsonLines {
            out: BufWriter::new(File::create(path)?),
        })
    }

    fn write(&mut self, v: &Value) -> Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Search,
    Train,
}

/// Config file, then flags.
fn resolve_config(run: &RunArgs, stage: Stage) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = run.seed {
        cfg.seed = v;
    }
    if let Some(v) = run.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = run.frames {
        cfg.frames = v;
    }
    if let Some(v) = run.width_divisor {
        cfg.net.width_divisor = v;
    }
    if let Some(v) = &run.cheb_basis {
        cfg.net.cheb_basis = v.parse()?;
    }
    cfg.net.double_softmax |= run.double_softmax;
    cfg.bones |= run.bones;
    let (epochs, lr, milestones, wd) = match stage {
        Stage::Search => (
            &mut cfg.search.epochs,
            &mut cfg.search.lr,
            &mut cfg.search.milestones,
            &mut cfg.search.weight_decay,
        ),
        Stage::Train => (
            &mut cfg.train.epochs,
            &mut cfg.train.lr,
            &mut cfg.train.milestones,
            &mut cfg.train.weight_decay,
        ),
    };
    if let Some(v) = run.epochs {
        *epochs = v;
    }
    if let Some(v) = run.lr {
        *lr = v;
    }
    if let Some(v) = &run.milestones {
        *milestones = Some(v.clone());
    }
    if let Some(v) = run.weight_decay {
        *wd = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gendata(a: &GendataArgs) -> Result<()> {
    let spec = SyntheticMotionSpec {
        num_classes: a.classes,
        samples_per_class: a.per_class,
        joints: a.joints,
        frames: a.frames,
        noise_std: a.noise,
    };
    let data = synthesize(&spec, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let path = out_dir(&a.out.out_dir)?.join(&a.name);
    data.save(&path)?;
    println!(
        "wrote {} samples ({} classes, {} joints) to {}",
        data.len(),
        data.num_classes(),
        data.num_joints(),
        path.display()
    );
    Ok(())
}

/// Everything `search` learns about the architecture, in one document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResultFile {
    pub best_alpha: Vec<f64>,
    pub best_fitness: f64,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// Per-layer softmax of `best_alpha`, eight entries each.
    pub weights: Vec<[f64; 8]>,
    pub threshold: f64,
}

fn search(a: &SearchArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.run, Stage::Search)?;
    if let Some(v) = a.population {
        cfg.search.population = v;
    }
    if let Some(v) = a.warmup {
        cfg.search.warmup_epochs = v;
    }
    if let Some(v) = a.eval_fraction {
        cfg.search.eval_fraction = v;
    }
    cfg.search.cache_fitness |= a.cache_fitness;
    if let Some(v) = &a.train_activation {
        cfg.search.train_activation = match v.as_str() {
            "sampled" => TrainActivation::Sampled,
            "mixed" => TrainActivation::Mixed,
            other => return Err(CliError::Usage(format!("unknown train activation {other:?}"))),
        };
    }
    if let Some(v) = a.threshold {
        cfg.search.threshold = v;
    }
    let data = load_dataset(&a.data, cfg.bones)?;
    let dir = out_dir(&a.out.out_dir)?;
    let net_cfg = cfg.net_config(data.num_classes());
    let search_cfg = cfg.search_config();
    write_json(&dir.join("search_config.json"), &cfg)?;
    let mut metrics = JsonLines::create(&dir.join("search_metrics.jsonl"))?;
    let mut trace = JsonLines::create(&dir.join("search_trace.jsonl"))?;
    let start = Instant::now();
    let result = run_search(&data, &net_cfg, &search_cfg, |ev| {
        let wall = start.elapsed().as_secs_f64();
        let r = match ev {
            SearchEvent::Epoch { phase, stats } => {
                log::info!(
                    "search epoch {} ({phase:?}): loss {:.4} top1 {:.3}",
                    stats.epoch + 1,
                    stats.loss,
                    stats.accuracy
                );
                metrics.write(&json!({
                    "run": "search",
                    "epoch": stats.epoch + 1,
                    "split": "train",
                    "phase": phase,
                    "loss": stats.loss,
                    "top1": stats.accuracy,
                    "lr": stats.lr,
                    "wall_time_s": wall,
                }))
            }
            SearchEvent::Iteration(rec) => {
                log::info!(
                    "ceim iteration {}: best {:.3} mean {:.3} reuse {:.2}",
                    rec.iteration,
                    rec.best_fitness,
                    rec.mean_fitness,
                    rec.reuse_fraction
                );
                let mut v = serde_json::to_value(rec).map_err(sgcn_core::Error::from)?;
                v["epoch"] = json!(rec.epoch + 1);
                trace.write(&v).map_err(|e| sgcn_core::Error::Data(e.to_string()))?;
                if let Value::Object(m) = &mut v {
                    m.remove("mu");
                    m.insert("run".into(), json!("search"));
                    m.insert("split".into(), json!("val"));
                    m.insert("top1".into(), json!(rec.best_fitness));
                    m.insert("wall_time_s".into(), json!(wall));
                }
                metrics.write(&v)
            }
        };
        r.map_err(|e| sgcn_core::Error::Data(e.to_string()))
    })?;
    result.doc.save(&dir.join("architecture.json"))?;
    let weights = result.best.all_mixing_weights();
    write_json(
        &dir.join("search_result.json"),
        &SearchResultFile {
            best_alpha: result.best.as_slice().to_vec(),
            best_fitness: result.best_fitness,
            mu: result.mu.as_slice().to_vec(),
            sigma2: result.outcome.distribution.sigma2().to_vec(),
            weights,
            threshold: search_cfg.threshold,
        },
    )?;
    println!(
        "best fitness {:.4}; architecture written to {}",
        result.best_fitness,
        dir.join("architecture.json").display()
    );
    for l in &result.doc.layers {
        println!("  layer {:>2}: {}", l.index + 1, l.selected.join(" "));
    }
    Ok(())
}

fn check_topology(data: &Dataset, net: &Network) -> Result<()> {
    if data.num_joints() != net.topology().num_joints() {
        return Err(CliError::Usage(format!(
            "dataset has {} joints, model expects {}",
            data.num_joints(),
            net.topology().num_joints()
        )));
    }
    if data.num_classes() != net.num_classes() {
        return Err(CliError::Usage(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes(),
            net.num_classes()
        )));
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.run, Stage::Train)?;
    let data = load_dataset(&a.data, cfg.bones)?;
    let val = a.val_data.as_deref().map(|p| load_dataset(p, cfg.bones)).transpose()?;
    let dir = out_dir(&a.out.out_dir)?;
    let (mut net, mut opt, tc, start_epoch) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let net = ckpt.network()?;
            let opt = ckpt.optimizer(&net)?;
            let mut tc = ckpt.meta.train.clone();
            if let Some(e) = a.run.epochs {
                tc.epochs = e;
            }
            (net, opt, tc, ckpt.meta.epochs_done)
        }
        None => {
            let arch_path = a.arch.as_ref().expect("clap requires --arch without --resume");
            let doc = ArchitectureDoc::load(arch_path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", arch_path.display())))?;
            let arch = doc.finalized()?;
            let net = Network::new(
                cfg.net_config(data.num_classes()),
                data.topology().clone(),
                NetworkMode::Finalized(arch),
            )?;
            let tc = cfg.train_config();
            let opt = tc.optimizer(&net)?;
            (net, opt, tc, 0)
        }
    };
    tc.validate()?;
    check_topology(&data, &net)?;
    if let Some(v) = &val {
        check_topology(v, &net)?;
    }
    write_json(&dir.join("train_config.json"), &tc)?;
    let mut metrics = JsonLines::create(&dir.join("train_metrics.jsonl"))?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let start = Instant::now();
    for epoch in start_epoch..tc.epochs {
        let mut rng = epoch_rng(tc.seed, epoch);
        let stats = train_epoch(&mut net, &mut opt, &data, &indices, &tc, epoch, &mut rng, |_| {
            Activation::Finalized
        })?;
        log::info!(
            "epoch {}: lr {} loss {:.4} top1 {:.3}",
            epoch + 1,
            stats.lr,
            stats.loss,
            stats.accuracy
        );
        metrics.write(&json!({
            "run": "train",
            "epoch": epoch + 1,
            "split": "train",
            "loss": stats.loss,
            "top1": stats.accuracy,
            "lr": stats.lr,
            "wall_time_s": start.elapsed().as_secs_f64(),
        }))?;
        if let Some(v) = &val {
            let (e, loss) = score(&net, v, tc.frames, tc.batch_size)?;
            metrics.write(&json!({
                "run": "train",
                "epoch": epoch + 1,
                "split": "val",
                "loss": loss,
                "top1": e.top1,
                "top5": e.top5,
                "wall_time_s": start.elapsed().as_secs_f64(),
            }))?;
        }
        if let Some(k) = a.checkpoint_every {
            if k > 0 && (epoch + 1) % k == 0 && epoch + 1 < tc.epochs {
                Checkpoint::capture(&net, Some(&opt), &tc, epoch + 1)?
                    .save(&dir.join(format!("checkpoint_epoch{:03}.sgcn", epoch + 1)))?;
            }
        }
    }
    let path = dir.join("model.sgcn");
    Checkpoint::capture(&net, Some(&opt), &tc, tc.epochs.max(start_epoch))?.save(&path)?;
    println!("trained {} epochs; model written to {}", tc.epochs, path.display());
    Ok(())
}

fn score(net: &Network, data: &Dataset, frames: usize, batch: usize) -> Result<(Evaluation, f64)> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let logits = predict_scores(net, data, &indices, &Activation::Finalized, frames, batch, BnMode::Inference)?;
    let labels = data.labels();
    Ok((evaluate_scores(&logits, &labels)?, mean_cross_entropy(&logits, &labels)))
}

#[derive(Serialize)]
struct EvalReport<'a> {
    samples: usize,
    loss: f64,
    top1: f64,
    top5: Option<f64>,
    confusion: &'a [Vec<usize>],
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model).map_err(|e| CliError::Data(format!("{}: {e}", a.model.display())))?;
    let net = ckpt.network()?;
    let data = load_dataset(&a.data, a.bones)?;
    check_topology(&data, &net)?;
    let tc: &TrainConfig = &ckpt.meta.train;
    let batch = a.batch_size.unwrap_or(tc.batch_size);
    let indices: Vec<usize> = (0..data.len()).collect();
    let logits = predict_scores(&net, &data, &indices, &Activation::Finalized, tc.frames, batch, BnMode::Inference)?;
    if !logits.is_finite() {
        return Err(CliError::Numerical("model produced non-finite scores".into()));
    }
    let labels = data.labels();
    let ev = evaluate_scores(&logits, &labels)?;
    let dir = out_dir(&a.out.out_dir)?;
    let table = ScoreTable {
        ids: indices,
        scores: softmax_rows(&logits)?,
    };
    std::fs::write(dir.join(format!("{}_scores.csv", a.name)), table.to_csv())?;
    write_json(
        &dir.join(format!("{}.json", a.name)),
        &EvalReport {
            samples: ev.samples,
            loss: mean_cross_entropy(&logits, &labels),
            top1: ev.top1,
            top5: ev.top5,
            confusion: &ev.confusion,
        },
    )?;
    match ev.top5 {
        Some(t5) => println!("top1 {:.4} top5 {:.4} over {} samples", ev.top1, t5, ev.samples),
        None => println!("top1 {:.4} over {} samples", ev.top1, ev.samples),
    }
    Ok(())
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let ta = ScoreTable::load(&a.scores_a)?;
    let tb = ScoreTable::load(&a.scores_b)?;
    if ta.num_classes() != tb.num_classes() {
        return Err(CliError::Data(format!(
            "score files list {} and {} classes",
            ta.num_classes(),
            tb.num_classes()
        )));
    }
    if ta.ids.len() != tb.ids.len() {
        return Err(CliError::Data(format!(
            "score files hold {} and {} rows",
            ta.ids.len(),
            tb.ids.len()
        )));
    }
    if let Some((row, (x, y))) = ta.ids.iter().zip(&tb.ids).enumerate().find(|(_, (x, y))| x != y) {
        return Err(CliError::Data(format!(
            "sample ids differ at row {}: {x} vs {y}",
            row + 1
        )));
    }
    let fused = ScoreTable {
        ids: ta.ids.clone(),
        scores: fuse_scores(&ta.scores, &tb.scores)?,
    };
    let dir = out_dir(&a.out.out_dir)?;
    std::fs::write(dir.join("fused_scores.csv"), fused.to_csv())?;
    let mut report = json!({ "samples": fused.ids.len(), "classes": fused.num_classes() });
    if let Some(p) = &a.data {
        let data = load_dataset(p, false)?;
        let labels = fused
            .ids
            .iter()
            .map(|&i| {
                data.samples()
                    .get(i)
                    .map(|s| s.label)
                    .ok_or_else(|| CliError::Data(format!("sample id {i} not in {}", p.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::new();
        for (name, t) in [("a", &ta), ("b", &tb), ("fused", &fused)] {
            let ev = evaluate_scores(&t.scores, &labels)?;
            out.push((name, ev.top1, ev.top5));
            report[name] = json!({ "top1": ev.top1, "top5": ev.top5, "confusion": ev.confusion });
        }
        for (name, t1, _) in out {
            println!("{name}: top1 {t1:.4}");
        }
    }
    write_json(&dir.join("fuse.json"), &report)?;
    Ok(())
}

fn export_arch(a: &ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.from)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.from.display())))?;
    let weights = match serde_json::from_str::<SearchResultFile>(&text) {
        Ok(r) => r.weights,
        Err(_) => ArchitectureDoc::from_json(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", a.from.display())))?
            .weights()?,
    };
    let doc = ArchitectureDoc::from_weights(&weights, a.threshold)?;
    let path: PathBuf = out_dir(&a.out.out_dir)?.join(&a.name);
    doc.save(&path)?;
    for l in &doc.layers {
        println!("layer {:>2}: {}", l.index + 1, l.selected.join(" "));
    }
    Ok(())
}
