//! `dhp`: command-line front end for offline and online head-movement
//! prediction. Inputs are video directories (`video.json`, PGM frames and
//! `traces.csv`), map directories and JSON configuration files.
//!
//! Exit status: 0 on success, 2 for bad arguments, paths or formats, 3 for
//! numerical failures.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dhp_core::config::RunConfig;
use dhp_core::metrics::{self, EvalVideo};
use dhp_core::net::checkpoint;
use dhp_core::offline::{self, FcbParams};
use dhp_core::online::{self, OnlinePrediction, PredictionRow};
use dhp_core::pandata::io as pio;
use dhp_core::pandata::{build_hm_map, derive_scanpath, gen_synthetic, HMMap, HMTrace, SynthSpec};
use dhp_core::sphere::GeoPos;
use dhp_core::train::{self, TrainSinks, TrainingVideo, GRADCHECK_FLOOR};
use dhp_core::{Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "dhp", version, about = "Head-movement prediction for panoramic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (JSON). Missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blob video with scripted viewers.
    GenSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert position traces to per-step direction/magnitude rows.
    DeriveScanpaths {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Actor-critic training over one video directory or a directory of them.
    TrainOffline {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.workers`.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON-lines episode log; defaults to the checkpoint path with `.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory for periodic checkpoints (`train.checkpoint_every`).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Resume from this checkpoint instead of a fresh network.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Supervised baseline: cross-entropy on headings, squared error on magnitudes.
    TrainSupervised {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run N workflows and write one HM map per frame.
    PredictOffline {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Number of workflows; overrides `offline.workflows`.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Take the most probable heading instead of sampling.
        #[arg(long)]
        greedy: bool,
        /// Combine each map with this fitted front-centre bias.
        #[arg(long)]
        fcb: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground-truth HM maps from traces.
    GtMaps {
        #[arg(long)]
        traces: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit front-centre-bias parameters against ground-truth maps.
    FitFcb {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Online prediction of every trace of one video.
    PredictOnline {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Offline checkpoint used as the starting network.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        no_offline_init: bool,
        #[arg(long)]
        no_gt_history: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Only this subject.
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CC, NSS and shuffled AUC of map directories against traces.
    Evaluate {
        /// One map directory, or a directory holding one map directory per video id.
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        fcb: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-frame CSV alongside the JSON report.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Mean overlap of online predictions against the viewers' positions.
    EvaluateMo {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parameters probed per tensor.
        #[arg(long, default_value_t = 6)]
        per_tensor: usize,
    },
    /// Render an HM map as a greyscale PGM.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenSynth { spec, out, seed } => {
            let text = fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::format(&spec, e.to_string()))?;
            let (frames, traces) = gen_synthetic(&spec, seed)?;
            pio::write_video(&out, &spec.video_id, &frames, spec.fps)?;
            pio::write_traces(&out.join(pio::TRACES_FILE), &traces)
        }
        Command::DeriveScanpaths { traces, out } => {
            let rows = pio::read_traces(&traces)?
                .into_iter()
                .map(|t| derive_scanpath(&t).map(|s| (t, s)))
                .collect::<Result<Vec<_>>>()?;
            pio::write_scanpaths(&out, &rows)
        }
        Command::TrainOffline { data, config, out, workers, seed, log, checkpoint_dir, init } => {
            let mut cfg = config.load()?.train;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let videos = load_dataset(&data)?;
            let init = init.map(|p| checkpoint::load(&p)).transpose()?;
            let mut sinks = TrainSinks { log: Some(log_writer(log.as_deref(), &out)?), checkpoint_dir };
            let outcome = train::train_offline(&videos, &cfg, init, &mut sinks)?;
            checkpoint::save(&outcome.params, &out)
        }
        Command::TrainSupervised { data, config, out, seed, log } => {
            let mut cfg = config.load()?.train;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let videos = load_dataset(&data)?;
            let mut sinks = TrainSinks { log: Some(log_writer(log.as_deref(), &out)?), checkpoint_dir: None };
            let outcome = train::train_supervised_baseline(&videos, &cfg, None, &mut sinks)?;
            checkpoint::save(&outcome.params, &out)
        }
        Command::PredictOffline { video, ckpt, config, n, seed, greedy, fcb, out } => {
            let mut cfg = config.load()?.offline;
            if let Some(n) = n {
                cfg.workflows = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.greedy |= greedy;
            let frames = pio::read_video(&video)?.frames;
            let params = checkpoint::load(&ckpt)?;
            let mut maps = offline::predict_hm_maps(&frames, &params, &cfg)?;
            if let Some(p) = fcb {
                maps = with_fcb(&maps, &FcbParams::load(&p)?)?;
            }
            pio::write_map_dir(&out, &maps)
        }
        Command::GtMaps { traces, config, out } => {
            let cfg = config.load()?.offline;
            let traces = pio::read_traces(&traces)?;
            let maps = gt_maps(&traces.iter().collect::<Vec<_>>(), cfg.map_width, cfg.map_height, cfg.sigma_smooth)?;
            pio::write_map_dir(&out, &maps)
        }
        Command::FitFcb { pred, gt, config, out } => {
            let cfg = config.load()?.fcb_fit;
            let pred = pio::read_map_dir(&pred)?;
            let gt = pio::read_map_dir(&gt)?;
            let fit = offline::fit_fcb(&pred, &gt, &cfg)?;
            println!("sigma_f_deg={} w1={} w2={}", fit.sigma_f_deg, fit.w1, fit.w2);
            fit.save(&out)
        }
        Command::PredictOnline { video, trace, ckpt, config, no_offline_init, no_gt_history, seed, subject, out } => {
            let mut cfg = config.load()?.online;
            cfg.use_offline_init &= !no_offline_init;
            cfg.use_gt_history &= !no_gt_history;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let v = pio::read_video(&video)?;
            let params = match (&ckpt, cfg.use_offline_init) {
                (Some(p), true) => Some(checkpoint::load(p)?),
                (None, true) => {
                    return Err(Error::InvalidInput("offline initialisation needs --ckpt (or pass --no-offline-init)".into()))
                }
                (_, false) => None,
            };
            let traces: Vec<HMTrace> = pio::read_traces(&trace)?
                .into_iter()
                .filter(|t| t.video_id == v.meta.video_id && subject.as_ref().is_none_or(|s| &t.subject_id == s))
                .collect();
            if traces.is_empty() {
                return Err(Error::InvalidInput(format!("no matching traces for video {}", v.meta.video_id)));
            }
            let mut rows = Vec::new();
            for t in &traces {
                let run = online::run_online(&v.frames, t, params.as_ref(), &cfg)?;
                println!("{} {} mean_mo={:.4}", t.video_id, t.subject_id, run.mean_mo());
                rows.push((t, run.predictions));
            }
            write_online(&out, &rows)
        }
        Command::Evaluate { maps, traces, fcb, config, seed, out, csv } => {
            let cfg = config.load()?.offline;
            let traces = pio::read_traces(&traces)?;
            let fcb = fcb.map(|p| FcbParams::load(&p)).transpose()?;
            let mut stores: Vec<(String, Vec<HMMap>)> = Vec::new();
            for (id, dir) in map_dirs(&maps, &traces)? {
                let mut m = pio::read_map_dir(&dir)?;
                if let Some(f) = &fcb {
                    m = with_fcb(&m, f)?;
                }
                stores.push((id, m));
            }
            let videos: Vec<EvalVideo<'_>> = stores
                .iter()
                .map(|(id, m)| EvalVideo { video_id: id.clone(), maps: m, traces: traces.iter().filter(|t| &t.video_id == id).collect() })
                .collect();
            let report = metrics::evaluate(&videos, cfg.sigma_smooth, seed)?;
            for (id, s) in &report {
                println!("{id} cc={:.4} nss={:.4} sauc={:.4}", s.cc, s.nss, s.sauc);
            }
            metrics::write_report_json(&out, &report)?;
            match csv {
                Some(p) => metrics::write_report_csv(&p, &report),
                None => Ok(()),
            }
        }
        Command::EvaluateMo { pred, trace, out } => {
            let rows = online::read_predictions(&pred)?;
            let traces = pio::read_traces(&trace)?;
            let mut per_subject = serde_json::Map::new();
            let mut all = Vec::with_capacity(rows.len());
            for t in &traces {
                let mine: Vec<_> = rows.iter().filter(|r| r.video_id == t.video_id && r.subject_id == t.subject_id).collect();
                if mine.is_empty() {
                    continue;
                }
                let mut scores = Vec::with_capacity(mine.len());
                for r in mine {
                    let gt = t.positions.get(r.frame).ok_or_else(|| {
                        Error::format(&pred, format!("frame {} beyond trace {}/{}", r.frame, t.video_id, t.subject_id))
                    })?;
                    scores.push(metrics::mo(GeoPos::new(r.pred_lon_deg, r.pred_lat_deg), *gt));
                }
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                per_subject.insert(format!("{}/{}", t.video_id, t.subject_id), mean.into());
                all.extend(scores);
            }
            if all.is_empty() {
                return Err(Error::format(&pred, "no predictions match the given traces"));
            }
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            println!("mean_mo={mean:.4} frames={}", all.len());
            let report = serde_json::json!({ "mean_mo": mean, "frames": all.len(), "per_subject": per_subject });
            match out {
                Some(p) => fs::write(&p, serde_json::to_string_pretty(&report).expect("json")).map_err(|e| Error::io(&p, e)),
                None => Ok(()),
            }
        }
        Command::Gradcheck { seed, per_tensor } => {
            let mut worst = 0.0f64;
            for steps in [1, 5] {
                let r = train::gradcheck(seed, steps, per_tensor)?;
                println!(
                    "steps={} checked={} skipped={} max_rel_error={:.3e} (floor {:.0e})",
                    r.steps, r.checked, r.skipped, r.max_rel_error, GRADCHECK_FLOOR
                );
                for (name, err) in &r.per_tensor {
                    println!("  {name:<12} {err:.3e}");
                }
                worst = worst.max(r.max_rel_error);
            }
            if worst < GRADCHECK_TOLERANCE {
                Ok(())
            } else {
                Err(Error::NonFinite(format!("gradient check: relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}")))
            }
        }
        Command::Render { map, out } => {
            let m = pio::read_map(&map)?;
            fs::write(&out, pio::map_to_pgm(&m)).map_err(|e| Error::io(&out, e))
        }
    }
}

/// A video directory, or a directory whose subdirectories are video directories.
fn load_dataset(dir: &Path) -> Result<Vec<TrainingVideo>> {
    let dirs = if dir.join(pio::VIDEO_MANIFEST).is_file() {
        vec![dir.to_path_buf()]
    } else {
        let mut d: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(pio::VIDEO_MANIFEST).is_file())
            .collect();
        d.sort();
        d
    };
    if dirs.is_empty() {
        return Err(Error::format(dir, "no video directories found"));
    }
    dirs.iter()
        .map(|d| {
            let v = pio::read_video(d)?;
            let traces: Vec<HMTrace> =
                pio::read_traces(&d.join(pio::TRACES_FILE))?.into_iter().filter(|t| t.video_id == v.meta.video_id).collect();
            Ok(TrainingVideo { video_id: v.meta.video_id, frames: v.frames, traces })
        })
        .collect()
}

/// Pairs of (video id, map directory).
fn map_dirs(root: &Path, traces: &[HMTrace]) -> Result<Vec<(String, PathBuf)>> {
    if root.join(pio::map_file_name(0)).is_file() {
        let mut ids: Vec<&str> = traces.iter().map(|t| t.video_id.as_str()).collect();
        ids.dedup();
        return match ids.as_slice() {
            [one] => Ok(vec![(one.to_string(), root.to_path_buf())]),
            _ => Err(Error::format(root, "a single map directory needs traces of exactly one video")),
        };
    }
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(pio::map_file_name(0)).is_file())
        .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::format(root, "no map directories found"));
    }
    Ok(out)
}

fn gt_maps(traces: &[&HMTrace], width: usize, height: usize, sigma: f64) -> Result<Vec<HMMap>> {
    let len = traces.first().ok_or_else(|| Error::InvalidInput("no traces".into()))?.len();
    (0..len)
        .map(|t| {
            let at: Vec<GeoPos> = traces.iter().filter_map(|tr| tr.positions.get(t).copied()).collect();
            build_hm_map(&at, width, height, sigma)
        })
        .collect()
}

fn with_fcb(maps: &[HMMap], fcb: &FcbParams) -> Result<Vec<HMMap>> {
    maps.iter().map(|m| fcb.apply(m, false)).collect()
}

fn log_writer(path: Option<&Path>, ckpt: &Path) -> Result<Box<dyn std::io::Write + Send>> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| ckpt.with_extension("jsonl"));
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn write_online(path: &Path, runs: &[(&HMTrace, Vec<OnlinePrediction>)]) -> Result<()> {
    let rows: Vec<PredictionRow> =
        runs.iter().flat_map(|(t, preds)| preds.iter().map(|p| PredictionRow::new(&t.video_id, &t.subject_id, p))).collect();
    online::write_prediction_rows(path, &rows)
}
