//! The pipeline stages. Each stage reads the artifacts of earlier stages
//! under `cfg.out`, writes its own directory, and records the resolved
//! config there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use driftless_core::conditioning::{build_prompt_track, caption_entry_count, parse_caption_document, CaptionDocument};
use driftless_core::latent::LatentSequence;
use driftless_core::metrics::{confusion_degree, drift_profile, frame_consistency, global_similarity, sign_test_p_value};
use driftless_core::model::Dit;
use driftless_core::rng::SeedStream;
use driftless_core::synthworld::{SceneScript, World};
use driftless_core::training::{self, synth_clips, trailing_mean, Clip};

use crate::config::RunConfig;
use crate::error::{CliError, IoContext, Result};
use crate::experiment::{benchmark_script, generate, run_stream, Variant};
use crate::svg;

const DATA_TAG: u64 = 0x6461_7461;
const INIT_TAG: u64 = 0x696e_6974;

pub const CHECKPOINT: &str = "model.dlck";
pub const VIDEO: &str = "video.dlat";
pub const CAPTIONS: &str = "captions.json";
pub const GLOBAL_PROMPT: &str = "global_prompt.txt";

/// Directory layout under the output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self { root: cfg.out.clone() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn infer(&self) -> PathBuf {
        self.root.join("infer")
    }
    pub fn variant(&self, v: Variant) -> PathBuf {
        self.infer().join(v.to_string())
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    std::fs::write(path, contents).at(path)
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    std::fs::read_to_string(path).at(path)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn clip_name(i: usize) -> String {
    format!("clip_{i:04}")
}

/// Writes one latent container and one caption file per training clip.
pub fn gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = Layout::new(cfg).data();
    let world = World::new(cfg.world.clone())?;
    let d = &cfg.data;
    let clips = synth_clips(&world, d.clips, d.frames, d.min_scenes..=d.max_scenes, SeedStream::new(cfg.seed).derive(DATA_TAG))?;
    cfg.write_into(&dir)?;
    let mut manifest = String::from("clip,frames,scenes,global_caption\n");
    for (i, clip) in clips.iter().enumerate() {
        let name = clip_name(i);
        let path = dir.join(format!("{name}.dlat"));
        LatentSequence::clean(clip.latents.clone())?.save(&path)?;
        let doc = CaptionDocument::new(clip.script.captions.clone())?;
        write(&dir.join(format!("{name}.json")), doc.to_json())?;
        let _ = writeln!(
            manifest,
            "{name},{},{},{}",
            clip.script.frames(),
            clip.script.runs().len(),
            csv_field(&clip.script.global_caption())
        );
    }
    write(&dir.join("manifest.csv"), manifest)?;
    Ok(dir)
}

/// Reads a dataset back through the caption validator.
pub fn load_clips(cfg: &RunConfig) -> Result<Vec<Clip>> {
    let dir = Layout::new(cfg).data();
    (0..cfg.data.clips)
        .map(|i| {
            let name = clip_name(i);
            let path = dir.join(format!("{name}.dlat"));
            if !path.exists() {
                return Err(CliError::Missing(path));
            }
            let latents = LatentSequence::load(&path)?.into_parts().0;
            let text = read_text(&dir.join(format!("{name}.json")))?;
            let doc = parse_caption_document(&text, latents.rows())?;
            let script = SceneScript::from_captions(doc.captions())?;
            Ok(Clip { latents, script })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub first_loss: f64,
    pub final_smoothed_loss: f64,
}

/// Trains from the dataset and writes the checkpoint, a deterministic loss
/// log, and wall-clock timings in a separate file.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dir = Layout::new(cfg).train();
    let clips = load_clips(cfg)?;
    let world = World::new(cfg.world.clone())?;
    let schedule = cfg.schedule.build()?;
    let mut model = Dit::init(cfg.model.clone(), SeedStream::new(cfg.seed).derive(INIT_TAG))?;
    cfg.write_into(&dir)?;
    let mut log_csv = String::from("iteration,loss,grad_norm\n");
    let mut timing_csv = String::from("iteration,wall_time_s\n");
    let result = training::train(&mut model, &cfg.train, &clips, &world.text_embedder(), &schedule, |r| {
        let _ = writeln!(log_csv, "{},{},{}", r.iteration, r.loss, r.grad_norm);
        let _ = writeln!(timing_csv, "{},{:.6}", r.iteration, r.wall_time);
    });
    // The log is kept even when training aborts; it holds the diagnostic row.
    write(&dir.join("train_log.csv"), &log_csv)?;
    write(&dir.join("timing.csv"), &timing_csv)?;
    let log = result?;
    let checkpoint = dir.join(CHECKPOINT);
    model.save(&checkpoint)?;
    Ok(TrainSummary {
        checkpoint,
        first_loss: log.first().map_or(f64::NAN, |r| r.loss),
        final_smoothed_loss: trailing_mean(&log, 100),
    })
}

pub fn load_model(cfg: &RunConfig) -> Result<Dit> {
    let path = Layout::new(cfg).train().join(CHECKPOINT);
    if !path.exists() {
        return Err(CliError::Missing(path));
    }
    let model = Dit::load(&path)?;
    if model.config() != &cfg.model {
        return Err(CliError::Config(format!("{} was trained with a different model config", path.display())));
    }
    Ok(model)
}

/// Generates every benchmark run for the configured variant.
pub fn infer(cfg: &RunConfig) -> Result<PathBuf> {
    let variant = Variant::of(cfg);
    let dir = Layout::new(cfg).variant(variant);
    let model = load_model(cfg)?;
    let world = World::new(cfg.world.clone())?;
    let schedule = cfg.schedule.build()?;
    cfg.write_into(&dir)?;
    for run in 0..cfg.benchmark.runs {
        let stream = run_stream(cfg.seed, run);
        let script = benchmark_script(&world, &cfg.inference, stream)?;
        let video = generate(&model, &world, &schedule, &cfg.inference, variant, &script, stream, cfg.inference.eta)?;
        let run_dir = dir.join(format!("run_{run:02}"));
        std::fs::create_dir_all(&run_dir).at(&run_dir)?;
        video.save(run_dir.join(VIDEO))?;
        write(&run_dir.join(CAPTIONS), CaptionDocument::new(script.captions.clone())?.to_json())?;
        write(&run_dir.join(GLOBAL_PROMPT), format!("{}\n", script.global_caption()))?;
    }
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub variant: String,
    pub run: usize,
    pub cd: f64,
    pub frame_consistency: f64,
    pub global_similarity: f64,
    pub drift_slope: f64,
    pub mean_error: f64,
}

const METRICS_HEADER: &str = "variant,run,cd,frame_consistency,global_similarity,drift_slope,mean_error";

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Scores every generated run against its frame-level captions.
pub fn eval(cfg: &RunConfig) -> Result<Vec<MetricRow>> {
    let layout = Layout::new(cfg);
    let dir = layout.eval();
    let world = World::new(cfg.world.clone())?;
    let embeds = world.embedders();
    let infer_dir = layout.infer();
    if !infer_dir.exists() {
        return Err(CliError::Missing(infer_dir));
    }
    cfg.write_into(&dir)?;
    let mut rows = Vec::new();
    let mut metrics = format!("{METRICS_HEADER}\n");
    let mut drift = String::from("variant,run,frame,error\n");
    for vdir in sorted_dirs(&infer_dir)? {
        let variant = vdir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for (run, rdir) in sorted_dirs(&vdir)?.into_iter().enumerate() {
            let video = LatentSequence::load(rdir.join(VIDEO))?;
            let doc = parse_caption_document(&read_text(&rdir.join(CAPTIONS))?, video.frames())?;
            let script = SceneScript::from_captions(doc.captions())?;
            let track = build_prompt_track(&doc, &world.text_embedder(), 1)?;
            let confusion = confusion_degree(&track, &video, &embeds, cfg.benchmark.denom_floor)?;
            let profile = drift_profile(&video, Some(&world.conditional_means(&script)))?;
            let row = MetricRow {
                variant: variant.clone(),
                run,
                cd: confusion.mean_cd,
                frame_consistency: frame_consistency(&track, &video, &embeds)?,
                global_similarity: global_similarity(&script.global_caption(), &video, &embeds)?,
                drift_slope: profile.slope,
                mean_error: profile.errors.iter().sum::<f64>() / profile.errors.len() as f64,
            };
            let _ = writeln!(
                metrics,
                "{},{},{},{},{},{},{}",
                row.variant, row.run, row.cd, row.frame_consistency, row.global_similarity, row.drift_slope, row.mean_error
            );
            for (f, e) in profile.errors.iter().enumerate() {
                let _ = writeln!(drift, "{variant},{run},{f},{e}");
            }
            let mut per_prompt = Vec::new();
            confusion.write_csv(&mut per_prompt)?;
            write(&dir.join("confusion").join(format!("{variant}_run_{run:02}.csv")), per_prompt)?;
            rows.push(row);
        }
    }
    write(&dir.join("metrics.csv"), metrics)?;
    write(&dir.join("drift.csv"), drift)?;
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let text = read_text(path)?;
    let bad = |line: &str| CliError::Config(format!("{}: malformed row {line:?}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(CliError::Config(format!("{}: unexpected header", path.display())));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
            Ok(MetricRow {
                variant: f[0].to_string(),
                run: f[1].parse().map_err(|_| bad(line))?,
                cd: num(2)?,
                frame_consistency: num(3)?,
                global_similarity: num(4)?,
                drift_slope: num(5)?,
                mean_error: num(6)?,
            })
        })
        .collect()
}

/// A paired one-sided comparison: how often `lower` beat `higher` on CD.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub lower: String,
    pub higher: String,
    pub wins: usize,
    pub trials: usize,
    pub p_value: f64,
    pub lower_mean: f64,
    pub higher_mean: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn compare_cd(rows: &[MetricRow], lower: &str, higher: &str) -> Option<Comparison> {
    let by_run = |name: &str| -> BTreeMap<usize, f64> {
        rows.iter().filter(|r| r.variant == name).map(|r| (r.run, r.cd)).collect()
    };
    let (a, b) = (by_run(lower), by_run(higher));
    let paired: Vec<(f64, f64)> = a.iter().filter_map(|(run, &x)| b.get(run).map(|&y| (x, y))).collect();
    if paired.is_empty() {
        return None;
    }
    let wins = paired.iter().filter(|(x, y)| x < y).count();
    Some(Comparison {
        lower: lower.to_string(),
        higher: higher.to_string(),
        wins,
        trials: paired.len(),
        p_value: sign_test_p_value(wins, paired.len()),
        lower_mean: mean(&a.values().copied().collect::<Vec<_>>()),
        higher_mean: mean(&b.values().copied().collect::<Vec<_>>()),
    })
}

/// Paired comparisons reported by `report`: prompting style first, then
/// the ordering of inference modes.
pub const COMPARISONS: [(&str, &str, &str); 5] = [
    ("prompting", "fifo-frame", "fifo-global"),
    ("prompting", "pmwd-frame", "fifo-global"),
    ("modes", "pmwd-frame", "sliding-frame"),
    ("modes", "sliding-frame", "fifo-frame"),
    ("modes", "fifo-frame", "fifo-global"),
];

/// Summary tables and SVG plots from the evaluation outputs.
pub fn report(cfg: &RunConfig) -> Result<PathBuf> {
    let layout = Layout::new(cfg);
    let dir = layout.report();
    let rows = read_metrics(&layout.eval().join("metrics.csv"))?;
    let drift_text = read_text(&layout.eval().join("drift.csv"))?;
    cfg.write_into(&dir)?;

    let mut variants: Vec<String> = rows.iter().map(|r| r.variant.clone()).collect();
    variants.dedup();
    let mut summary = String::from(
        "variant,runs,mean_cd,mean_frame_consistency,mean_global_similarity,mean_drift_slope,positive_slopes,positive_slope_p\n",
    );
    let mut bars = Vec::new();
    for v in &variants {
        let sel: Vec<&MetricRow> = rows.iter().filter(|r| &r.variant == v).collect();
        let col = |f: fn(&MetricRow) -> f64| mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        let positive = sel.iter().filter(|r| r.drift_slope > 0.0).count();
        let cd = col(|r| r.cd);
        let _ = writeln!(
            summary,
            "{v},{},{cd},{},{},{},{positive},{}",
            sel.len(),
            col(|r| r.frame_consistency),
            col(|r| r.global_similarity),
            col(|r| r.drift_slope),
            sign_test_p_value(positive, sel.len())
        );
        bars.push((v.clone(), cd));
    }
    write(&dir.join("summary.csv"), summary)?;

    let mut comparisons = String::from("table,lower,higher,lower_mean_cd,higher_mean_cd,wins,trials,p_value\n");
    for (table, lo, hi) in COMPARISONS {
        if let Some(c) = compare_cd(&rows, lo, hi) {
            let _ = writeln!(
                comparisons,
                "{table},{lo},{hi},{},{},{},{},{}",
                c.lower_mean, c.higher_mean, c.wins, c.trials, c.p_value
            );
        }
    }
    write(&dir.join("comparisons.csv"), comparisons)?;

    // Mean per-frame error across runs, one curve per variant.
    let mut curves: BTreeMap<String, Vec<(f64, usize)>> = BTreeMap::new();
    for line in drift_text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (Some(v), Some(frame), Some(err)) = (f.first(), f.get(2), f.get(3)) else { continue };
        let (Ok(frame), Ok(err)) = (frame.parse::<usize>(), err.parse::<f64>()) else { continue };
        let c = curves.entry(v.to_string()).or_default();
        if c.len() <= frame {
            c.resize(frame + 1, (0.0, 0));
        }
        c[frame].0 += err;
        c[frame].1 += 1;
    }
    let series: Vec<(String, Vec<f64>)> = variants
        .iter()
        .filter_map(|v| curves.get(v).map(|c| (v.clone(), c.iter().map(|&(s, n)| s / n.max(1) as f64).collect())))
        .collect();
    write(
        &dir.join("drift_curves.svg"),
        svg::line_chart("Per-frame error against the conditional mean", "frame", "mean squared error", &series),
    )?;
    write(&dir.join("cd_bars.svg"), svg::log_bar_chart("Mean Confusion Degree", "mean CD (log scale)", &bars))?;
    Ok(dir)
}

/// Outcome of `validate-captions`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionCheck {
    pub frames: usize,
}

pub fn validate_captions(path: &Path, frames: Option<usize>) -> Result<CaptionCheck> {
    let text = read_text(path)?;
    let frames = match frames {
        Some(n) => n,
        None => caption_entry_count(&text)?,
    };
    let doc = parse_caption_document(&text, frames)?;
    Ok(CaptionCheck { frames: doc.frame_count() })
}

/// gen-data, train, infer for every benchmark variant, eval, report.
pub fn pipeline(cfg: &RunConfig) -> Result<PathBuf> {
    gen_data(cfg)?;
    train(cfg)?;
    for v in Variant::BENCHMARK {
        let vc = v.apply(cfg);
        vc.validate()?;
        infer(&vc)?;
    }
    eval(cfg)?;
    report(cfg)
}
