use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::train::{score_scenes, Sample, TrainState};
use crate::error::{Error, Result};
use crate::io::{read_hsc, read_text, write_hsc, write_text, Checkpoint, Manifest, SceneEntry, Split};
use crate::metrics::{evaluate, MetricsReport};
use crate::net::{FusionConfig, FusionNet};
use crate::observation::{
    extract_patches, simulate_pair, synthetic_scene, wald_protocol_with, HsiCube, SpatialDegradation,
    SpectralResponse,
};
use crate::solver::{solve, FusionProblem, SolveOptions, Solution};
use crate::tensor::{Precision, Scalar};

/// Metric rows keyed by scene and method; the mean rows are derived.
#[derive(Debug, Clone, Default)]
pub struct EvalTable {
    pub rows: Vec<(String, String, MetricsReport)>,
}

impl EvalTable {
    pub fn push(&mut self, scene: &str, method: &str, report: MetricsReport) {
        self.rows.push((scene.to_string(), method.to_string(), report));
    }

    /// Methods in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, m, _) in &self.rows {
            if !out.contains(m) {
                out.push(m.clone());
            }
        }
        out
    }

    pub fn mean(&self, method: &str) -> Option<MetricsReport> {
        let picked: Vec<MetricsReport> = self.rows.iter().filter(|r| r.1 == method).map(|r| r.2).collect();
        MetricsReport::mean(&picked)
    }

    pub fn get(&self, scene: &str, method: &str) -> Option<MetricsReport> {
        self.rows.iter().find(|r| r.0 == scene && r.1 == method).map(|r| r.2)
    }

    fn all_rows(&self) -> Vec<(String, String, MetricsReport)> {
        let mut rows = self.rows.clone();
        for m in self.methods() {
            if let Some(r) = self.mean(&m) {
                rows.push(("mean".to_string(), m, r));
            }
        }
        rows
    }

    /// Column-aligned table, four decimals.
    pub fn render_text(&self) -> String {
        let rows = self.all_rows();
        let sw = rows.iter().map(|r| r.0.len()).chain([5]).max().unwrap_or(5);
        let mw = rows.iter().map(|r| r.1.len()).chain([6]).max().unwrap_or(6);
        let mut out = format!("{:<sw$}  {:<mw$}  {:>9}  {:>9}  {:>9}  {:>9}\n", "scene", "method", "PSNR", "SAM", "ERGAS", "SSIM");
        for (s, m, r) in rows {
            let _ = writeln!(
                out,
                "{s:<sw$}  {m:<mw$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}",
                r.psnr, r.sam, r.ergas, r.ssim
            );
        }
        out
    }

    /// Tab-separated, full precision.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("scene\tmethod\tpsnr\tsam\tergas\tssim\n");
        for (s, m, r) in self.all_rows() {
            let _ = writeln!(out, "{s}\t{m}\t{:?}\t{:?}\t{:?}\t{:?}", r.psnr, r.sam, r.ergas, r.ssim);
        }
        out
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_text(&out.join("metrics.txt"), &self.render_text())?;
        write_text(&out.join("metrics.tsv"), &self.render_tsv())
    }
}

pub fn load_samples(manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    manifest.split(split).map(load_sample).collect()
}

fn load_sample(e: &SceneEntry) -> Result<Sample> {
    Ok(Sample { id: e.id.clone(), msi: read_hsc(&e.msi)?, hsi: read_hsc(&e.hsi)?, truth: read_hsc(&e.truth)? })
}

/// The test split, or the training split when no scene is held out.
fn eval_entries(m: &Manifest) -> Vec<&SceneEntry> {
    let test: Vec<&SceneEntry> = m.split(Split::Test).collect();
    if test.is_empty() {
        m.split(Split::Train).collect()
    } else {
        test
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(format!("'{key}' is required for this command")))
}

fn kernel_text(c: &SpatialDegradation) -> String {
    let mut out = String::new();
    for row in c.kernel().chunks(c.size()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn parse_kernel(text: &str, factor: usize, path: &Path) -> Result<SpatialDegradation> {
    let mut values = Vec::new();
    let mut rows = 0;
    for line in text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty()) {
        for tok in line.split_whitespace() {
            values.push(tok.parse::<f64>().map_err(|_| Error::format(path, format!("bad kernel value '{tok}'")))?);
        }
        rows += 1;
    }
    if rows == 0 || values.len() != rows * rows {
        return Err(Error::format(path, format!("kernel must be square, got {} values in {rows} rows", values.len())));
    }
    SpatialDegradation::new(values, rows, factor)
}

/// Response and blur recorded next to a simulated dataset.
pub fn manifest_operators(m: &Manifest, manifest_path: &Path) -> Result<(SpectralResponse, SpatialDegradation)> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let get = |k: &str| m.meta(k).ok_or_else(|| Error::config(format!("manifest has no @{k} entry")));
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_relative() {
            base.join(p)
        } else {
            p
        }
    };
    let r = SpectralResponse::parse(&read_text(&resolve(get("response")?))?)?;
    let scale: usize = get("scale")?.parse().map_err(|_| Error::config("manifest @scale is not an integer"))?;
    let kpath = resolve(get("kernel")?);
    let c = parse_kernel(&read_text(&kpath)?, scale, &kpath)?;
    Ok((r, c))
}

/// Writes degraded triples for every input (or synthetic) cube, plus the
/// response, kernel and a manifest under `out`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Manifest> {
    let mut scenes: Vec<(String, HsiCube)> = Vec::new();
    if cfg.inputs.is_empty() {
        for i in 0..cfg.synthetic_count {
            let n = cfg.synthetic_size;
            scenes.push((format!("synth{i:03}"), synthetic_scene(n, n, cfg.net.bands, cfg.net.seed, i as u64)?));
        }
    } else {
        for p in &cfg.inputs {
            let mut cube = read_hsc(p)?;
            cube.normalize_peak();
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if scenes.iter().any(|(s, _)| *s == id) {
                return Err(Error::config(format!("duplicate scene id '{id}'")));
            }
            scenes.push((id, cube));
        }
    }
    if scenes.is_empty() {
        return Err(Error::config("nothing to simulate"));
    }
    let bands = scenes[0].1.bands();
    if let Some((id, _)) = scenes.iter().find(|(_, c)| c.bands() != bands) {
        return Err(Error::shape(format!("scene '{id}' band count differs from {bands}")));
    }
    if cfg.is_explicit("bands") && cfg.net.bands != bands {
        return Err(Error::config(format!("bands={} but the inputs have {bands}", cfg.net.bands)));
    }
    let r = match &cfg.response {
        Some(p) => SpectralResponse::parse(&read_text(p)?)?,
        None => SpectralResponse::gaussian_lobes(bands, cfg.net.msi_bands)?,
    };
    if r.bands() != bands {
        return Err(Error::shape(format!("response has {} rows, scenes have {bands} bands", r.bands())));
    }
    let c = SpatialDegradation::gaussian(cfg.kernel_size, cfg.sigma, cfg.net.scale)?;

    let n_test = cfg.test_count.min(scenes.len());
    let n_train = scenes.len() - n_test;
    let mut manifest = Manifest {
        meta: vec![
            ("response".into(), "response.txt".into()),
            ("kernel".into(), "kernel.txt".into()),
            ("scale".into(), cfg.net.scale.to_string()),
            ("protocol".into(), cfg.protocol.clone()),
            ("seed".into(), cfg.net.seed.to_string()),
        ],
        scenes: Vec::new(),
    };
    for (i, (id, cube)) in scenes.iter().enumerate() {
        let split = if i < n_train { Split::Train } else { Split::Test };
        let pieces = if split == Split::Train && cfg.patch_size > 0 {
            let seed = cfg.net.seed.wrapping_add(i as u64);
            extract_patches(cube, cfg.patch_size, cfg.patch_stride, cfg.patches_per_scene, seed)?
                .into_iter()
                .enumerate()
                .map(|(k, p)| (format!("{id}_p{k:03}"), p))
                .collect()
        } else {
            vec![(id.clone(), cube.clone())]
        };
        for (pid, x) in pieces {
            let (y, z) = simulate_pair(&x, &r, &c)?;
            let (msi, hsi, truth) = if cfg.protocol == "wald" {
                let t = wald_protocol_with(&y, &z, &c)?;
                (t.msi, t.hsi, t.truth)
            } else {
                (y, z, x)
            };
            let entry = SceneEntry {
                id: pid.clone(),
                truth: PathBuf::from(format!("scenes/{pid}_truth.hsc")),
                msi: PathBuf::from(format!("scenes/{pid}_msi.hsc")),
                hsi: PathBuf::from(format!("scenes/{pid}_hsi.hsc")),
                split,
            };
            write_hsc(&cfg.out.join(&entry.truth), &truth)?;
            write_hsc(&cfg.out.join(&entry.msi), &msi)?;
            write_hsc(&cfg.out.join(&entry.hsi), &hsi)?;
            manifest.scenes.push(entry);
        }
    }
    write_text(&cfg.out.join("response.txt"), &r.to_text())?;
    write_text(&cfg.out.join("kernel.txt"), &kernel_text(&c))?;
    write_text(&cfg.out.join("manifest.txt"), &manifest.render())?;
    cfg.write_resolved()?;
    Ok(manifest)
}

/// What `cmd_train` observed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// `(step, loss)` for every step run by this invocation.
    pub losses: Vec<(u64, f64)>,
    pub final_step: u64,
    /// Mean eval PSNR of the last checkpoint.
    pub final_score: f64,
    pub best_score: f64,
}

/// Architecture with band counts and scale taken from the data.
fn infer_net_config(cfg: &RunConfig, s: &Sample) -> Result<FusionConfig> {
    let mut net = cfg.net.clone();
    if s.hsi.width() == 0 || !s.msi.width().is_multiple_of(s.hsi.width()) {
        return Err(Error::shape(format!("sample '{}': MSI width is not a multiple of HSI width", s.id)));
    }
    let seen = [("bands", s.truth.bands()), ("msi_bands", s.msi.bands()), ("scale", s.msi.width() / s.hsi.width())];
    for (key, v) in seen {
        let slot = match key {
            "bands" => &mut net.bands,
            "msi_bands" => &mut net.msi_bands,
            _ => &mut net.scale,
        };
        if cfg.is_explicit(key) && *slot != v {
            return Err(Error::config(format!("{key}={} but the dataset has {v}", *slot)));
        }
        *slot = v;
    }
    net.validate()?;
    Ok(net)
}

fn mean_psnr<T: Scalar>(net: &FusionNet<T>, samples: &[Sample]) -> Result<f64> {
    let scores = score_scenes(net, samples)?;
    Ok(scores.iter().map(|s| s.net.psnr).sum::<f64>() / scores.len() as f64)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let mpath = require(&cfg.manifest, "manifest")?;
    let manifest = Manifest::load(mpath)?;
    let train = load_samples(&manifest, Split::Train)?;
    if train.is_empty() {
        return Err(Error::config(format!("{} has no train scenes", mpath.display())));
    }
    let eval: Vec<Sample> = eval_entries(&manifest).into_iter().map(load_sample).collect::<Result<_>>()?;
    let precision = match &cfg.resume {
        Some(p) => checkpoint_precision(&Checkpoint::load(p)?)?,
        None => cfg.net.precision,
    };
    match precision {
        Precision::Single => train_impl::<f32>(cfg, &train, &eval),
        Precision::Double => train_impl::<f64>(cfg, &train, &eval),
    }
}

fn checkpoint_precision(ck: &Checkpoint) -> Result<Precision> {
    Precision::parse(ck.meta("precision").ok_or_else(|| Error::config("checkpoint lacks a precision entry"))?)
}

fn train_impl<T: Scalar>(cfg: &RunConfig, train: &[Sample], eval: &[Sample]) -> Result<TrainSummary> {
    let mut state = match &cfg.resume {
        Some(p) => TrainState::<T>::from_checkpoint(&Checkpoint::load(p)?)?,
        None => TrainState::<T>::new(infer_net_config(cfg, &train[0])?, cfg.adam)?,
    };
    for s in train.iter().chain(eval) {
        state.net.check_inputs(&s.msi, &s.hsi)?;
    }
    let log_path = cfg.out.join("loss.log");
    let mut log = if cfg.resume.is_some() && log_path.exists() { read_text(&log_path)? } else { String::new() };
    let lr = state.adam.config.lr;
    let until = cfg.iterations;
    let mut losses = Vec::new();
    let best_path = cfg.out.join("best.ckpt");
    let mut wrote_best = false;
    let mut final_score = None;

    while state.step < until {
        let next = match cfg.eval_every {
            0 => until,
            e => ((state.step / e + 1) * e).min(until),
        };
        state.train_until(train, cfg.batch, next, |_, step, loss| {
            losses.push((step, loss));
            if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == until) {
                let _ = writeln!(log, "{step}\t{loss:?}\t{lr:?}");
            }
            Ok(())
        })?;
        if cfg.eval_every > 0 && state.step % cfg.eval_every == 0 {
            let score = mean_psnr(&state.net, eval)?;
            if state.best_score.is_none_or(|b| score > b) {
                state.best_score = Some(score);
                state.to_checkpoint().save(&best_path)?;
                wrote_best = true;
            }
            if state.step == until {
                final_score = Some(score);
            }
        }
    }
    let final_score = match final_score {
        Some(s) => s,
        None => mean_psnr(&state.net, eval)?,
    };
    // The end-of-run score only feeds best.ckpt. Keeping it out of the
    // state means a resumed run saves the same last.ckpt as a straight one.
    if !wrote_best || state.best_score.is_none_or(|b| final_score > b) {
        let mut snap = state.clone();
        snap.best_score = Some(final_score);
        snap.to_checkpoint().save(&best_path)?;
    }
    state.to_checkpoint().save(&cfg.out.join("last.ckpt"))?;
    write_text(&log_path, &log)?;
    cfg.write_resolved()?;
    Ok(TrainSummary {
        losses,
        final_step: state.step,
        final_score,
        best_score: state.best_score.map_or(final_score, |b| b.max(final_score)),
    })
}

fn load_net<T: Scalar>(ck: &Checkpoint) -> Result<FusionNet<T>> {
    Ok(TrainState::<T>::from_checkpoint(ck)?.net)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalTable> {
    let ck = Checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let manifest = Manifest::load(require(&cfg.manifest, "manifest")?)?;
    let samples: Vec<Sample> = eval_entries(&manifest).into_iter().map(load_sample).collect::<Result<_>>()?;
    let scores = match checkpoint_precision(&ck)? {
        Precision::Single => eval_scores(&load_net::<f32>(&ck)?, &samples)?,
        Precision::Double => eval_scores(&load_net::<f64>(&ck)?, &samples)?,
    };
    let mut table = EvalTable::default();
    for s in &scores {
        table.push(&s.id, "net", s.net);
    }
    for s in &scores {
        table.push(&s.id, "bicubic", s.bicubic);
    }
    table.write(&cfg.out)?;
    cfg.write_resolved()?;
    Ok(table)
}

fn eval_scores<T: Scalar>(net: &FusionNet<T>, samples: &[Sample]) -> Result<Vec<super::SceneScore>> {
    for s in samples {
        net.check_inputs(&s.msi, &s.hsi)?;
    }
    score_scenes(net, samples)
}

fn pick_scene<'a>(m: &'a Manifest, id: &str) -> Result<&'a SceneEntry> {
    if id.is_empty() {
        return eval_entries(m).into_iter().next().ok_or_else(|| Error::config("manifest lists no scenes"));
    }
    m.scenes.iter().find(|s| s.id == id).ok_or_else(|| Error::config(format!("no scene '{id}' in the manifest")))
}

/// Fused cube for one scene. Also writes its metrics and, on request, one
/// 8-bit PNG per band.
pub fn cmd_fuse(cfg: &RunConfig) -> Result<HsiCube> {
    let ck = Checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let manifest = Manifest::load(require(&cfg.manifest, "manifest")?)?;
    let entry = pick_scene(&manifest, &cfg.scene)?;
    let s = load_sample(entry)?;
    let (fused, scale) = match checkpoint_precision(&ck)? {
        Precision::Single => fuse_with(&load_net::<f32>(&ck)?, &s)?,
        Precision::Double => fuse_with(&load_net::<f64>(&ck)?, &s)?,
    };
    write_hsc(&cfg.out.join(format!("{}_fused.hsc", s.id)), &fused)?;
    let report = evaluate(&fused, &s.truth, scale as f64)?;
    write_text(&cfg.out.join(format!("{}_fused_metrics.txt", s.id)), &report.to_machine())?;
    if cfg.dump_png {
        dump_bands(&fused, &cfg.out.join(format!("{}_bands", s.id)))?;
    }
    cfg.write_resolved()?;
    Ok(fused)
}

fn fuse_with<T: Scalar>(net: &FusionNet<T>, s: &Sample) -> Result<(HsiCube, usize)> {
    Ok((net.fuse(&s.msi, &s.hsi)?, net.config.scale))
}

/// One grayscale PNG per band, values clamped to `[0, 1]`.
pub fn dump_bands(x: &HsiCube, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for b in 0..x.bands() {
        let px: Vec<u8> = x.band(b).iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::save_buffer(dir.join(format!("band_{b:03}.png")), &px, x.width() as u32, x.height() as u32, image::ColorType::L8)?;
    }
    Ok(())
}

/// Classical solver on the selected scenes (`scene`, or every eval scene).
pub fn cmd_baseline(cfg: &RunConfig) -> Result<(EvalTable, Vec<(String, Solution)>)> {
    let mpath = require(&cfg.manifest, "manifest")?;
    let manifest = Manifest::load(mpath)?;
    let (r, c) = manifest_operators(&manifest, mpath)?;
    let entries = if cfg.scene.is_empty() { eval_entries(&manifest) } else { vec![pick_scene(&manifest, &cfg.scene)?] };
    let opts = SolveOptions {
        eta: (cfg.solver_eta > 0.0).then_some(cfg.solver_eta),
        max_iters: cfg.solver_iters,
        tol: cfg.solver_tol,
        power_iters: 100,
        seed: cfg.net.seed,
    };
    let mut table = EvalTable::default();
    let mut solutions = Vec::new();
    for e in entries {
        let s = load_sample(e)?;
        let p = FusionProblem::new(s.msi.clone(), s.hsi.clone(), r.clone(), c.clone(), cfg.lambda, cfg.prior)?;
        let sol = solve(&p, &opts)?;
        write_hsc(&cfg.out.join(format!("{}_baseline.hsc", s.id)), &sol.x)?;
        let mut trace = String::from("iteration\tobjective\n");
        for (i, f) in sol.trace.iter().enumerate() {
            let _ = writeln!(trace, "{i}\t{f:?}");
        }
        write_text(&cfg.out.join(format!("{}_trace.tsv", s.id)), &trace)?;
        table.push(&s.id, "baseline", evaluate(&sol.x, &s.truth, c.factor() as f64)?);
        solutions.push((s.id, sol));
    }
    table.write(&cfg.out)?;
    cfg.write_resolved()?;
    Ok((table, solutions))
}
