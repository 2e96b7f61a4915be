//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs the `fastscnn` binary where a criterion is about the command line and
//! the library otherwise. The toy model trained for criterion 5 is reused by
//! criterion 7, and the 256x512 cls benchmark of criterion 6 by criterion 12.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fastscnn::data_io::{
    decode_weights, encode_weights, load_weights, read_ids, save_weights, store_entries, synth_dataset, LabelMapping, LoadOptions, Normalization,
    SynthSpec, WeightEntry,
};
use fastscnn::eval::{category_miou, miou, CategoryMap, ConfusionMatrix};
use fastscnn::model::{Mode, ModelConfig, ModelGraph, Prediction};
use fastscnn::ops::{self, ConvParams};
use fastscnn::params::ParamKind;
use fastscnn::train::{poly_lr, Sgd};
use fastscnn::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fastscnn")
}

struct Run {
    ok: bool,
    stdout: String,
    stderr: String,
    elapsed: Duration,
}

fn fastscnn(args: &[&str], cwd: &Path) -> Run {
    let start = Instant::now();
    let out = Command::new(bin()).args(args).current_dir(cwd).output().expect("spawn fastscnn");
    Run {
        ok: out.status.success(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        elapsed: start.elapsed(),
    }
}

fn succeed(args: &[&str], cwd: &Path) -> Result<Run, String> {
    let r = fastscnn(args, cwd);
    if r.ok {
        Ok(r)
    } else {
        Err(format!("`fastscnn {}` failed: {}", args.join(" "), r.stderr.trim()))
    }
}

/// Value of the first `key=value` token in the output.
fn value(text: &str, key: &str) -> Option<String> {
    let prefix = format!("{key}=");
    text.lines().filter(|l| !l.starts_with('#')).flat_map(str::split_whitespace).find_map(|t| t.strip_prefix(&prefix).map(str::to_string))
}

fn number(text: &str, key: &str) -> Result<f64, String> {
    value(text, key).and_then(|v| v.parse().ok()).ok_or_else(|| format!("no numeric {key}= in output"))
}

// ---------------------------------------------------------------- 1

fn parameter_budget() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let r = succeed(&["summary"], dir.path())?;
    let total = number(&r.stdout, "params_total")?;
    let ratio = total / 1.11e6;
    ensure!((0.95..=1.05).contains(&ratio), "params_total={total} is {ratio:.4} of 1.11M");
    ensure!(r.stdout.contains(&format!("({:.2}M)", total / 1e6)), "total not printed in millions");
    ensure!(r.elapsed < Duration::from_secs(1), "summary took {:?}", r.elapsed);
    Ok(format!(
        "params_total={total} ({:.2}M, {:+.1}% vs 1.11M), with aux {}, {:.0} ms",
        total / 1e6,
        (ratio - 1.0) * 100.0,
        number(&r.stdout, "params_with_aux")?,
        r.elapsed.as_secs_f64() * 1e3
    ))
}

// ---------------------------------------------------------------- 2

/// Input column of the layer table at 1024x2048, rows 2-10, as (h, w, c).
const TABLE: [(usize, usize, usize); 9] =
    [(512, 1024, 32), (256, 512, 48), (128, 256, 64), (64, 128, 64), (32, 64, 96), (32, 64, 128), (32, 64, 128), (128, 256, 128), (128, 256, 128)];

fn shape_trace() -> Check {
    let start = Instant::now();
    let graph = ModelGraph::build(ModelConfig::default()).map_err(|e| e.to_string())?;
    for div in [1, 2, 4] {
        let (h, w) = (1024 / div, 2048 / div);
        let got = graph.boundary_shapes(h, w).map_err(|e| e.to_string())?;
        ensure!(got.len() == 9, "{} boundary shapes", got.len());
        for ((name, shape), (th, tw, tc)) in got.iter().zip(TABLE) {
            let want = Shape::new(1, tc, th / div, tw / div);
            ensure!(*shape == want, "{h}x{w}: {name} is {shape}, expected {want}");
        }
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(1), "took {t:?}");
    Ok(format!("9 boundary shapes at 1024x2048, 512x1024, 256x512 ({:.0} ms)", t.as_secs_f64() * 1e3))
}

// ---------------------------------------------------------------- 3

/// Nested-loop convolution with "same" padding, in f64.
fn loop_conv(x: &Tensor, w: &Tensor, stride: usize, dil: usize, depthwise: bool) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let out = |n: usize| n.div_ceil(stride);
    let pad = |n: usize| (((out(n) - 1) * stride + (k - 1) * dil + 1).saturating_sub(n)) / 2;
    let (oh, ow, ph, pw) = (out(xs.h), out(xs.w), pad(xs.h), pad(xs.w));
    let mut y = Vec::new();
    for o in 0..ws.n {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0f64;
                let inputs: Vec<usize> = if depthwise { vec![o] } else { (0..xs.c).collect() };
                for (ci, &c) in inputs.iter().enumerate() {
                    for a in 0..k {
                        for b in 0..k {
                            let yy = (i * stride + a * dil) as i64 - ph as i64;
                            let xx = (j * stride + b * dil) as i64 - pw as i64;
                            if yy >= 0 && xx >= 0 && (yy as usize) < xs.h && (xx as usize) < xs.w {
                                let wv = if depthwise { w.at(o, 0, a, b) } else { w.at(o, ci, a, b) };
                                acc += x.at(0, c, yy as usize, xx as usize) as f64 * wv as f64;
                            }
                        }
                    }
                }
                y.push(acc);
            }
        }
    }
    y
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0f64;
    let cases = 240;
    for case in 0..cases {
        let depthwise = case % 2 == 1;
        let stride = 1 + (case / 2) % 2;
        let dil = [1, 2, 4][(case / 4) % 3];
        let c = rng.random_range(1..=4);
        let (h, w) = (rng.random_range(1..=11), rng.random_range(1..=11));
        let x = Tensor::uniform(Shape::new(1, c, h, w), -1.0, 1.0, &mut rng);
        let (wt, got) = if depthwise {
            let wt = Tensor::uniform(Shape::new(c, 1, 3, 3), -1.0, 1.0, &mut rng);
            let got = ops::depthwise_conv2d(&x, &wt, ConvParams::new(3, stride, dil).unwrap()).map_err(|e| e.to_string())?;
            (wt, got)
        } else {
            let wt = Tensor::uniform(Shape::new(rng.random_range(1..=4), c, 3, 3), -1.0, 1.0, &mut rng);
            let got = ops::conv2d(&x, &wt, ConvParams::new(3, stride, dil).unwrap()).map_err(|e| e.to_string())?;
            (wt, got)
        };
        let want = loop_conv(&x, &wt, stride, dil, depthwise);
        ensure!(got.numel() == want.len(), "case {case}: {} outputs, oracle {}", got.numel(), want.len());
        let scale = want.iter().fold(0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = got.data().iter().zip(&want).fold(0f64, |m, (&g, &o)| m.max((g as f64 - o).abs())) / scale;
        ensure!(err <= 1e-5, "case {case} (depthwise={depthwise} s{stride} d{dil} {c}x{h}x{w}): relative error {err:.2e}");
        worst = worst.max(err);
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(30), "took {t:?}");
    Ok(format!("{cases} cases over dense/depthwise x s{{1,2}} x d{{1,2,4}}, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

fn gradient_suite() -> Check {
    use fastscnn::check::{block_gradients, primitive_gradients, GradCheckOptions};
    let start = Instant::now();
    let mut reports = primitive_gradients(GradCheckOptions::default()).map_err(|e| e.to_string())?;
    reports.extend(block_gradients(GradCheckOptions::blocks()).map_err(|e| e.to_string())?);
    let mut worst = 0f64;
    for r in &reports {
        ensure!(r.worst() <= 1e-4, "{} relative error {:.2e}", r.name, r.worst());
        worst = worst.max(r.worst());
    }
    for needle in [
        "conv2d",
        "depthwise_conv2d",
        "batch_norm",
        "relu",
        "adaptive_avg_pool",
        "bilinear_resize",
        "dropout",
        "channel_softmax",
        "concat_channels",
        "add",
        "cross_entropy",
        "dsconv",
        "bottleneck s2",
        "bottleneck residual",
        "ppm",
        "ffm",
        "classifier",
    ] {
        ensure!(reports.iter().any(|r| r.name.starts_with(needle)), "no gradient check for {needle}");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(120), "took {t:?}");
    Ok(format!("{} checks in f64, worst relative error {worst:.2e}, {:.1} s", reports.len(), t.as_secs_f64()))
}

// ---------------------------------------------------------------- 5

struct Toy {
    _dir: tempfile::TempDir,
    root: PathBuf,
    weights: PathBuf,
}

thread_local! {
    static TOY: RefCell<Option<Toy>> = const { RefCell::new(None) };
    static CLS_256: RefCell<Option<String>> = const { RefCell::new(None) };
}

const TOY_CONFIG: &str = "\
classes = 3
input = 128x256
ppm_bins = 1,2,3,4
data = data
label_map = identity
epochs = 250
batch_size = 2
augment = false
out_dir = run
";

fn toy_overfit() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    synth_dataset(&root.join("data"), "train", &SynthSpec::toy()).map_err(|e| e.to_string())?;
    synth_dataset(&root.join("data"), "val", &SynthSpec { seed: 1, ..SynthSpec::toy() }).map_err(|e| e.to_string())?;
    fs::write(root.join("toy.cfg"), TOY_CONFIG).unwrap();

    let r = succeed(&["train", "--config", "toy.cfg"], &root)?;
    let records = r.stdout.lines().filter(|l| l.starts_with("iter=")).count();
    ensure!(records == 500, "{records} iterations logged");
    let weights = root.join("run/last.fscn");
    let e = succeed(&["eval", "--config", "toy.cfg", "--weights", "run/last.fscn", "--split", "train"], &root)?;
    let acc = number(&e.stdout, "pixel_accuracy")?;
    let train_time = r.elapsed;

    // inference-mode cross-entropy over the training set, against ln 3
    let mut graph = ModelGraph::build(ModelConfig { num_classes: 3, ..ModelConfig::desk() }).map_err(|e| e.to_string())?;
    load_weights(graph.params_mut(), &weights, &LoadOptions { skip_extra: vec!["aux.".into()] }).map_err(|e| e.to_string())?;
    let index = fastscnn::data_io::DatasetIndex::open(&root.join("data"), "train", 3).map_err(|e| e.to_string())?;
    let samples = index.load_all(&LabelMapping::identity(), Normalization::Symmetric).map_err(|e| e.to_string())?;
    let mut ce = 0.0;
    for s in &samples {
        ce += ops::cross_entropy(&graph.logits(&s.image).map_err(|e| e.to_string())?, &s.label, 255).map_err(|e| e.to_string())?.0;
    }
    ce /= samples.len() as f64;
    let last_loss = value(&r.stdout, "final_loss").unwrap_or_default();

    TOY.with(|t| *t.borrow_mut() = Some(Toy { _dir: dir, root, weights }));
    ensure!(acc >= 0.95, "training pixel accuracy {acc:.4} after 500 iterations");
    ensure!(train_time < Duration::from_secs(300), "training took {train_time:?}");
    Ok(format!(
        "pixel_accuracy={acc:.4} after 500 iterations in {:.0} s; last training loss {last_loss}, inference cross-entropy {ce:.4} (ln3/{:.0})",
        train_time.as_secs_f64(),
        3f64.ln() / ce
    ))
}

// ---------------------------------------------------------------- 6

fn mode_consistency() -> Check {
    let graph = ModelGraph::build(ModelConfig { seed: 3, ..ModelConfig::desk() }).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..100 {
        let x = Tensor::uniform(Shape::new(1, 3, 128, 256), -1.0, 1.0, &mut rng);
        let (Prediction::Prob(p), Prediction::Cls(c)) =
            (graph.predict(&x, Mode::Prob).map_err(|e| e.to_string())?, graph.predict(&x, Mode::Cls).map_err(|e| e.to_string())?)
        else {
            return Err("wrong prediction kinds".into());
        };
        let s = p.shape();
        for y in 0..s.h {
            for xx in 0..s.w {
                let mut best = 0;
                for k in 1..s.c {
                    if p.at(0, k, y, xx) > p.at(0, best, y, xx) {
                        best = k;
                    }
                }
                ensure!(c.at(0, y, xx) as usize == best, "input {i} pixel ({y},{xx}): cls {} vs argmax(prob) {best}", c.at(0, y, xx));
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let cls = succeed(&["bench", "--input", "256x512", "--mode", "cls"], dir.path())?;
    let prob = succeed(&["bench", "--input", "256x512", "--mode", "prob"], dir.path())?;
    let (fc, fp) = (number(&cls.stdout, "fps_mean")?, number(&prob.stdout, "fps_mean")?);
    CLS_256.with(|c| *c.borrow_mut() = Some(cls.stdout));
    ensure!(fc >= fp, "cls fps {fc:.3} < prob fps {fp:.3}");
    Ok(format!("100 random inputs agree; bench 256x512 fps cls={fc:.2} >= prob={fp:.2}"))
}

// ---------------------------------------------------------------- 7

fn ablation() -> Check {
    TOY.with(|t| {
        let t = t.borrow();
        let toy = t.as_ref().ok_or("no trained toy model (criterion 5 did not produce one)")?;
        let w = toy.weights.to_str().unwrap();
        let img = "data/val/images/0000.png";
        succeed(&["infer", "--config", "toy.cfg", "--weights", w, "--image", img, "--output", "plain.png"], &toy.root)?;
        succeed(&["infer", "--config", "toy.cfg", "--weights", w, "--image", img, "--output", "ablated.png", "--zero-skip"], &toy.root)?;
        let a = read_ids(&toy.root.join("plain.png")).map_err(|e| e.to_string())?;
        let b = read_ids(&toy.root.join("ablated.png")).map_err(|e| e.to_string())?;
        let changed = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
        ensure!(changed > 0, "--zero-skip left the label map unchanged");
        let base = succeed(&["eval", "--config", "toy.cfg", "--weights", w, "--split", "val"], &toy.root)?;
        let abl = succeed(&["eval", "--config", "toy.cfg", "--weights", w, "--split", "val", "--zero-skip"], &toy.root)?;
        let (m0, m1) = (number(&base.stdout, "miou_class")?, number(&abl.stdout, "miou_class")?);
        ensure!(m1 <= m0, "ablated mIoU {m1:.4} > unablated {m0:.4}");
        Ok(format!("{changed} pixels change on a val image; val mIoU {m0:.4} -> {m1:.4} with --zero-skip"))
    })
}

// ---------------------------------------------------------------- 8

fn l2_selectivity() -> Check {
    let mut graph = ModelGraph::build(ModelConfig { train: true, ..ModelConfig::desk() }).map_err(|e| e.to_string())?;
    let before = graph.params().clone();
    let store = graph.params_mut();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.kind().trainable()).map(|(id, _)| id).collect();
    for id in ids {
        let shape = store.value(id).shape();
        store.set_grad(id, Tensor::zeros(shape)).unwrap();
    }
    let (lr, l2) = (0.045f32, 4e-5f32);
    Sgd::new(store, 0.9, l2 as f64).step(store, lr as f64).map_err(|e| e.to_string())?;
    let (mut decayed, mut frozen) = (0, 0);
    for (id, p) in store.iter() {
        let old = before.value(id);
        match p.kind() {
            ParamKind::StandardConv | ParamKind::PointwiseConv => {
                for (&w1, &w0) in p.value().data().iter().zip(old.data()) {
                    // first step: velocity = l2·w, so w ← w − lr·l2·w
                    let want = w0 - lr * (l2 * w0);
                    ensure!(w1 == want, "{}: {w1} vs {want}", p.name());
                    ensure!(w0 == 0.0 || w1 != w0, "{} did not shrink", p.name());
                }
                decayed += 1;
            }
            _ => {
                ensure!(p.value().data().iter().zip(old.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "{} ({:?}) changed", p.name(), p.kind());
                frozen += 1;
            }
        }
    }
    Ok(format!("{decayed} standard/pointwise tensors shrink by (1 - lr*l2); {frozen} depthwise, BN affine and running-stat tensors bit-unchanged"))
}

// ---------------------------------------------------------------- 9

fn poly_schedule() -> Check {
    let max = 1000;
    let (a, b, c) = (poly_lr(0.045, 0, max, 0.9), poly_lr(0.045, max, max, 0.9), poly_lr(0.045, max / 2, max, 0.9));
    ensure!(a == 0.045, "lr(0) = {a}");
    ensure!(b == 0.0, "lr(max) = {b}");
    // 0.045 * 0.5^0.9 = 0.0241149...
    ensure!((c - 0.0241149).abs() < 1e-6, "lr(max/2) = {c}");
    ensure!((c - 0.02411).abs() < 1e-5, "lr(max/2) = {c}");
    Ok(format!("lr(0)={a} lr(max)={b} lr(max/2)={c:.7}"))
}

// ---------------------------------------------------------------- 10

fn metrics_oracle() -> Check {
    let cm = ConfusionMatrix::from_counts(&[vec![1, 1], vec![0, 2]]).unwrap();
    let r = miou(&cm);
    ensure!((r.mean - 7.0 / 12.0).abs() <= 1e-12, "2-class mean {}", r.mean);
    // rows 6, 6, 4; columns 7, 4, 5
    let cm = ConfusionMatrix::from_counts(&[vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]]).unwrap();
    let hand = [5.0 / 8.0, 3.0 / 7.0, 4.0 / 5.0];
    let r = miou(&cm);
    for (k, h) in hand.iter().enumerate() {
        ensure!((r.per_class[k].unwrap() - h).abs() <= 1e-12, "3-class IoU[{k}]");
    }
    ensure!((r.mean - hand.iter().sum::<f64>() / 3.0).abs() <= 1e-12, "3-class mean {}", r.mean);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..100 {
        let k = rng.random_range(2..=19);
        let rows: Vec<Vec<u64>> =
            (0..k).map(|_| (0..k).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..1000) }).collect()).collect();
        let cm = ConfusionMatrix::from_counts(&rows).unwrap();
        let cat = category_miou(&cm, &CategoryMap::identity(k)).map_err(|e| e.to_string())?;
        ensure!(cat == miou(&cm).mean, "matrix {i}: category {cat} vs class {}", miou(&cm).mean);
    }
    Ok("hand matrices within 1e-12; identity category map equals class mIoU on 100 random matrices".into())
}

// ---------------------------------------------------------------- 11

fn serialization() -> Check {
    let golden: [u8; 33] = [
        0x46, 0x53, 0x43, 0x4e, // FSCN
        1, 0, 0, 0, // version
        1, 0, 0, 0, // tensor count
        1, 0, 0, 0, b'w', // name
        1, 0, 0, 0, 2, 0, 0, 0, // rank, dims
        0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, // 1.0, -2.0
    ];
    let bytes = encode_weights(&[WeightEntry { name: "w".into(), dims: vec![2], data: vec![1.0, -2.0] }]);
    ensure!(bytes == golden, "golden mismatch: {bytes:02x?}");
    ensure!(decode_weights(&golden).map_err(|e| e.to_string())?[0].data == [1.0, -2.0], "golden decode");

    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0;
    for train in [false, true] {
        let path = dir.path().join(format!("w{train}.fscn"));
        let src = ModelGraph::build(ModelConfig { train, seed: 11, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
        save_weights(src.params(), &path).map_err(|e| e.to_string())?;
        let mut dst = ModelGraph::build(ModelConfig { train, seed: 12, ..ModelConfig::default() }).map_err(|e| e.to_string())?;
        load_weights(dst.params_mut(), &path, &LoadOptions::default()).map_err(|e| e.to_string())?;
        for (a, b) in store_entries(src.params()).iter().zip(store_entries(dst.params()).iter()) {
            ensure!(a.name == b.name && a.dims == b.dims, "{} vs {}", a.name, b.name);
            ensure!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()), "{} differs", a.name);
            checked += 1;
        }
    }
    Ok(format!("golden 33-byte file matches; {checked} tensors round-trip bitwise"))
}

// ---------------------------------------------------------------- 12

fn bench_protocol() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut fps = Vec::new();
    for input in ["256x512", "512x1024", "1024x2048"] {
        let reused = if input == "256x512" { CLS_256.with(|c| c.borrow().clone()) } else { None };
        let out = match reused {
            Some(o) => o,
            None => succeed(&["bench", "--input", input, "--mode", "cls"], dir.path())?.stdout,
        };
        ensure!(out.lines().any(|l| l == "burn_in=100 measured=100"), "{input}: no `burn_in=100 measured=100` line");
        let lat = value(&out, "latencies_ms").ok_or("no latency list")?;
        ensure!(lat.split(',').count() == 100, "{input}: {} latencies", lat.split(',').count());
        fps.push((input, number(&out, "fps_mean")?));
    }
    ensure!(fps[0].1 > fps[1].1 && fps[1].1 > fps[2].1, "fps not ordered by resolution: {fps:?}");
    Ok(fps.iter().map(|(i, f)| format!("{i}: {f:.2} fps")).collect::<Vec<_>>().join(", "))
}

fn main() {
    // keep the library calls on one thread, like the binary's default
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let criteria: [Criterion; 12] = [
        ("parameter budget", parameter_budget),
        ("shape trace", shape_trace),
        ("oracle equivalence", oracle_equivalence),
        ("gradient suite", gradient_suite),
        ("toy overfit", toy_overfit),
        ("mode consistency", mode_consistency),
        ("skip ablation", ablation),
        ("l2 selectivity", l2_selectivity),
        ("poly schedule", poly_schedule),
        ("metrics oracle", metrics_oracle),
        ("serialization", serialization),
        ("bench protocol", bench_protocol),
    ];
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => {
                passed += 1;
                println!("criterion {:>2} PASS {name}: {detail} [{secs:.1} s]", i + 1);
            }
            Err(why) => println!("criterion {:>2} FAIL {name}: {why} [{secs:.1} s]", i + 1),
        }
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
