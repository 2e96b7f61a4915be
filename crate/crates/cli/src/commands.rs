//! The subcommands.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fastscnn::augment::Sample;
use fastscnn::check::{gradient_suite, oracle_suite, param_count_suite, shape_trace_suite};
use fastscnn::data_io::{
    image_tensor, load_weights, read_rgb, save_weights, write_atomic, write_label_png, write_raw_tensor, DatasetIndex, LabelMapping, LoadOptions,
};
use fastscnn::eval::{bench_fps, format_report, miou, ConfusionMatrix, CITYSCAPES_CLASSES};
use fastscnn::model::{ModelGraph, Prediction};
use fastscnn::train::{train, IterRecord, TrainObserver};
use fastscnn::{Error, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{LabelSource, Settings, UsageError};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Data { .. } | Error::Io { .. } | Error::Weights(_) => Failure::Data(msg),
            Error::NonFiniteLoss { .. } | Error::MissingGradient(_) | Error::Autograd(_) => Failure::Numeric(msg),
            _ => Failure::Usage(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Inference graphs skip the auxiliary heads a training checkpoint carries.
fn inference_load() -> LoadOptions {
    LoadOptions { skip_extra: vec!["aux.".to_string()] }
}

fn inference_graph(s: &Settings, weights: Option<&Path>) -> Result<ModelGraph, Failure> {
    let mut graph = ModelGraph::build(s.model(false)?)?;
    if let Some(w) = weights {
        load_weights(graph.params_mut(), w, &inference_load())?;
    }
    Ok(graph)
}

fn mapping(s: &Settings) -> Result<LabelMapping, Failure> {
    Ok(match s.label_map()? {
        LabelSource::Table(t) => t,
        LabelSource::File(p) => LabelMapping::load(&p)?,
    })
}

fn load_split(s: &Settings, split: &str) -> Result<Vec<Sample>, Failure> {
    let root = s.require_path("data")?;
    let index = DatasetIndex::open(&root, split, s.usize("classes")?)?;
    Ok(index.load_all(&mapping(s)?, s.normalization()?)?)
}

/// Print `text`, and also write it to `--output` when given.
fn emit(s: &Settings, text: &str) -> Outcome {
    print!("{text}");
    if let Some(out) = s.path("output") {
        write_atomic(&out, |w| w.write_all(text.as_bytes()))?;
    }
    Ok(())
}

fn check_size(graph: &ModelGraph, h: usize, w: usize, path: &Path) -> Outcome {
    graph.config().check_input(h, w).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn evaluate(graph: &ModelGraph, samples: &[Sample]) -> fastscnn::Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(graph.config().num_classes);
    for sample in samples {
        let Prediction::Cls(pred) = graph.predict(&sample.image, fastscnn::model::Mode::Cls)? else { unreachable!("cls mode") };
        cm.accumulate(&pred, &sample.label)?;
    }
    Ok(cm)
}

pub fn summary(s: &Settings) -> Outcome {
    let cfg = s.model(true)?;
    let graph = ModelGraph::build(cfg.clone())?;
    let text = format!("{}{}", s.echo("# "), graph.summary(cfg.input_h, cfg.input_w)?);
    emit(s, &text)
}

struct RunLog {
    log: fs::File,
    log_path: PathBuf,
    out_dir: PathBuf,
    val: Vec<Sample>,
    best: Option<f64>,
}

impl RunLog {
    fn line(&mut self, text: &str) -> fastscnn::Result<()> {
        println!("{text}");
        writeln!(self.log, "{text}").map_err(|e| Error::Io { path: self.log_path.clone(), source: e })
    }
}

impl TrainObserver for RunLog {
    fn on_iter(&mut self, record: &IterRecord) -> fastscnn::Result<()> {
        self.line(&record.to_string())
    }

    fn on_epoch(&mut self, epoch: usize, graph: &ModelGraph) -> fastscnn::Result<()> {
        save_weights(graph.params(), &self.out_dir.join("last.fscn"))?;
        if self.val.is_empty() {
            return Ok(());
        }
        let score = miou(&evaluate(graph, &self.val)?).mean;
        self.line(&format!("epoch={epoch} val_miou={score:.6}"))?;
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            save_weights(graph.params(), &self.out_dir.join("best.fscn"))?;
        }
        Ok(())
    }
}

pub fn train_cmd(s: &Settings) -> Outcome {
    let cfg = s.train()?;
    let model = s.model(true)?;
    let samples = load_split(s, s.raw("train_split"))?;
    let val = match s.raw("val_split") {
        "" => Vec::new(),
        split => load_split(s, split)?,
    };
    let mut graph = ModelGraph::build(model)?;
    if let Some(w) = s.path("weights") {
        load_weights(graph.params_mut(), &w, &LoadOptions::default())?;
    }
    let out_dir = PathBuf::from(s.raw("out_dir"));
    fs::create_dir_all(&out_dir).map_err(|e| Error::Io { path: out_dir.clone(), source: e })?;
    let echo = s.echo("");
    write_atomic(&out_dir.join("config.txt"), |w| w.write_all(echo.as_bytes()))?;
    let log_path = out_dir.join("train.log");
    let log =
        OpenOptions::new().create(true).write(true).truncate(true).open(&log_path).map_err(|e| Error::Io { path: log_path.clone(), source: e })?;
    let mut run = RunLog { log, log_path, out_dir, val, best: None };
    for line in s.echo("# ").lines() {
        writeln!(run.log, "{line}").map_err(|e| Error::Io { path: run.log_path.clone(), source: e })?;
    }
    let summary = train(&mut graph, &samples, &cfg, &mut run)?;
    run.line(&format!("done iters={} final_loss={:.6}", summary.iters, summary.final_loss))?;
    if let Some(best) = run.best {
        run.line(&format!("best_val_miou={best:.6}"))?;
    }
    Ok(())
}

pub fn infer(s: &Settings) -> Outcome {
    let weights = s.require_path("weights")?;
    let image_path = s.require_path("image")?;
    let output = s.require_path("output")?;
    let norm = s.normalization()?;
    let graph = inference_graph(s, Some(&weights))?;
    let img = read_rgb(&image_path)?;
    check_size(&graph, img.h, img.w, &image_path)?;
    let image = image_tensor(img.h, img.w, &img.data, norm)?;
    match graph.predict(&image, s.mode()?)? {
        Prediction::Cls(labels) => {
            let echo = s.echo("");
            write_label_png(&output, &labels, &[("config", echo.trim_end())])?;
        }
        Prediction::Prob(probs) => {
            let mut extra = vec![("normalization".to_string(), norm.describe())];
            extra.extend(s.lines().into_iter().map(|(k, v)| (format!("config.{k}"), v)));
            write_raw_tensor(&output, &probs, &extra)?;
        }
    }
    Ok(())
}

pub fn eval_cmd(s: &Settings) -> Outcome {
    let weights = s.require_path("weights")?;
    let classes = s.usize("classes")?;
    let categories = s.categories(classes)?;
    let graph = inference_graph(s, Some(&weights))?;
    let samples = load_split(s, s.raw("split"))?;
    let cm = evaluate(&graph, &samples)?;
    let names: Vec<String> =
        if classes == 19 { CITYSCAPES_CLASSES.iter().map(|c| c.to_string()).collect() } else { (0..classes).map(|c| c.to_string()).collect() };
    let text = format!("{}{}", s.echo("# "), format_report(&cm, &names, categories.as_ref())?);
    emit(s, &text)
}

pub fn bench(s: &Settings) -> Outcome {
    let (h, w) = s.size("input")?;
    let mode = s.mode()?;
    let graph = inference_graph(s, s.path("weights").as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed()?);
    let image = Tensor::uniform(Shape::new(1, 3, h, w), -1.0, 1.0, &mut rng);
    let report = bench_fps(&graph, &image, mode, s.usize("burn_in")?, s.usize("measured")?)?;
    let ms: Vec<String> = report.latencies.iter().map(|d| format!("{:.3}", d.as_secs_f64() * 1e3)).collect();
    let text = format!(
        "{}burn_in={} measured={}\nmode={mode} input={h}x{w} threads={}\nfps_mean={:.4}\nlatency_mean_ms={:.3}\nlatencies_ms={}\n",
        s.echo("# "),
        report.burn_in,
        report.measured,
        rayon::current_num_threads(),
        report.mean_fps,
        report.mean_latency().as_secs_f64() * 1e3,
        ms.join(","),
    );
    emit(s, &text)
}

/// Above this the self-test still passes but warns.
const SELFTEST_BUDGET_S: f64 = 300.0;

pub fn selftest(s: &Settings) -> Outcome {
    let model = s.model(false)?;
    let seed = s.seed()?;
    let start = Instant::now();
    let suites = [oracle_suite(400, seed), gradient_suite(seed), shape_trace_suite(&model), param_count_suite(&model)];
    let mut failed = Vec::new();
    for suite in &suites {
        println!("{:<12} {} {}", suite.name, if suite.passed { "PASS" } else { "FAIL" }, suite.detail);
        if !suite.passed {
            failed.push(suite.name);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!("elapsed_s={elapsed:.1}");
    if elapsed > SELFTEST_BUDGET_S {
        eprintln!("warning: selftest took {elapsed:.0}s, over the {SELFTEST_BUDGET_S:.0}s budget");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("selftest failed: {}", failed.join(", "))))
    }
}
