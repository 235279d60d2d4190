//! Command line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 empty PURSE in
//! `bound`. Errors are reported on stderr as `{"error": .., "message": ..}`.

use std::ffi::OsString;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::output::{read_bounds_csv, read_coverage_csv};
use super::synth::{generate_scene, generate_votes, scene_rng, SceneRecord};
use super::{
    calibrate_synthetic, read_json, render_plots, run_bounds_experiment, run_coverage_experiment,
    write_bounds_cdf, write_bounds_csv, write_coverage_csv, write_json, CoverageReport,
    ExperimentConfig, PipelineError,
};
use crate::bounds::{worst_case_bound, BoundQuery, BoundStatus};
use crate::conformal::{calibrate, predict_set, CalibrationRecord, Detection, Heatmap, PredictionSet, VoteField};
use crate::geom3d::Pose;
use crate::purse::{build_purse, ransag, Purse};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "purse", version, about = "Conformal keypoint sets, pose uncertainty sets and certified pose error bounds")]
struct Cli {
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generates synthetic scenes (heatmaps, labels, poses).
    Synth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Also write vote fields.
        #[arg(long)]
        votes: bool,
    },
    /// Writes a calibration record from synthetic scenes or a scene directory.
    Calibrate {
        /// Directory of scenes written by `synth`.
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Builds the prediction set of one scene.
    PredictSets {
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        epsilon: f64,
    },
    /// Builds the PURSE of a prediction set.
    Purse {
        #[arg(long)]
        sets: PathBuf,
    },
    /// Samples and averages poses from a PURSE.
    Ransag {
        #[arg(long)]
        purse: PathBuf,
        #[arg(long)]
        sets: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Certified worst-case distance from a pose to the PURSE.
    Bound {
        #[arg(long)]
        purse: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        lambda: f64,
    },
    /// Coverage experiment: coverage.csv, coverage_summary.json, coverage.svg.
    CoverageExp,
    /// Bounds experiment: bounds.csv, bounds_cdf.csv, bounds_summary.json, plots.
    BoundsExp,
    /// Re-renders plots from the CSV files in the output directory.
    Plot,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(PipelineError),
    Infeasible(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Runtime(e)
    }
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
}

fn report(kind: &str, message: String) {
    let json = serde_json::to_string(&ErrorJson { error: kind, message }).expect("serializable");
    eprintln!("{json}");
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            report("usage", e.kind().to_string() + ": " + e.to_string().lines().next().unwrap_or(""));
            return EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            report("usage", m);
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            report("runtime", e.to_string());
            EXIT_RUNTIME
        }
        Err(Failure::Infeasible(m)) => {
            report("infeasible", m);
            EXIT_INFEASIBLE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_json_file(p).map_err(|e| match e {
            PipelineError::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other),
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth { count, votes } => {
            ensure_dir(out)?;
            synth(&cfg, out, *count, *votes)?;
        }
        Command::Calibrate { scenes } => {
            ensure_dir(out)?;
            let record = match scenes {
                Some(dir) => calibrate_dir(&cfg, dir)?,
                None => calibrate_synthetic(&cfg)?,
            };
            write_json(&out.join("calibration.json"), &record)?;
        }
        Command::PredictSets {
            calibration,
            scene,
            epsilon,
        } => {
            let record: CalibrationRecord = read_json(calibration)?;
            let (_, det) = load_scene(scene)?;
            let set = predict_set(&det, &record, *epsilon).map_err(PipelineError::from)?;
            ensure_dir(out)?;
            write_json(&out.join("prediction_set.json"), &set)?;
        }
        Command::Purse { sets } => {
            let set: PredictionSet = read_json(sets)?;
            let purse = build_purse(&set, &cfg.intrinsics()?, &cfg.model()?, cfg.trans_bound)
                .map_err(PipelineError::from)?;
            ensure_dir(out)?;
            write_json(&out.join("purse.json"), &purse)?;
        }
        Command::Ransag { purse, sets, trials } => {
            let purse: Purse = read_json(purse)?;
            let set: PredictionSet = read_json(sets)?;
            let res = ransag(
                &purse,
                &set,
                &cfg.model()?,
                &cfg.intrinsics()?,
                trials.unwrap_or(cfg.trials),
                cfg.seed,
            )
            .map_err(PipelineError::from)?;
            ensure_dir(out)?;
            write_json(&out.join("ransag.json"), &res)?;
            write_json(&out.join("pose.json"), &res.average)?;
            print_json(&res.average);
        }
        Command::Bound { purse, pose, lambda } => {
            let purse: Purse = read_json(purse)?;
            let pose: Pose = read_json(pose)?;
            if !(0.0..=1.0).contains(lambda) {
                return Err(Failure::Usage(format!("lambda must lie in [0, 1], got {lambda}")));
            }
            let query = BoundQuery::new(purse, pose, *lambda).map_err(PipelineError::from)?;
            let res = worst_case_bound(&query).map_err(PipelineError::from)?;
            #[derive(Serialize)]
            struct BoundJson {
                status: BoundStatus,
                lambda: f64,
                d_upper: f64,
                angle_deg: Option<f64>,
            }
            let json = BoundJson {
                status: res.status,
                lambda: res.lambda,
                d_upper: res.d_upper,
                angle_deg: res.angle_upper_deg(),
            };
            print_json(&json);
            ensure_dir(out)?;
            write_json(&out.join("bound.json"), &json)?;
            if res.status == BoundStatus::PurseEmpty {
                return Err(Failure::Infeasible("the PURSE is empty".into()));
            }
        }
        Command::CoverageExp => {
            let rep = run_coverage_experiment(&cfg)?;
            ensure_dir(out)?;
            write_coverage_csv(&out.join("coverage.csv"), &rep.rows)?;
            write_json(&out.join("coverage_summary.json"), &rep.summaries)?;
            render_plots(out, Some(&rep), None)?;
            print_json(&rep.summaries);
        }
        Command::BoundsExp => {
            let rep = run_bounds_experiment(&cfg)?;
            ensure_dir(out)?;
            write_bounds_csv(&out.join("bounds.csv"), &rep.rows)?;
            write_bounds_cdf(&out.join("bounds_cdf.csv"), &rep.rows)?;
            write_json(&out.join("bounds_summary.json"), &rep.summaries)?;
            render_plots(out, None, Some(&rep.rows))?;
            print_json(&rep.summaries);
        }
        Command::Plot => {
            let cov = out.join("coverage.csv");
            let bnd = out.join("bounds.csv");
            let coverage = if cov.exists() {
                Some(CoverageReport {
                    rows: read_coverage_csv(&cov)?,
                    summaries: Vec::new(),
                })
            } else {
                None
            };
            let bounds = if bnd.exists() { Some(read_bounds_csv(&bnd)?) } else { None };
            if coverage.is_none() && bounds.is_none() {
                return Err(Failure::Usage(format!(
                    "no coverage.csv or bounds.csv in {}",
                    out.display()
                )));
            }
            for p in render_plots(out, coverage.as_ref(), bounds.as_deref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn synth(cfg: &ExperimentConfig, out: &Path, count: usize, votes: bool) -> Result<(), PipelineError> {
    let model = cfg.model()?;
    let k = cfg.intrinsics()?;
    for id in 0..count as u64 {
        let mut rng = scene_rng(cfg.seed, id);
        let scene = generate_scene(&model, &k, &cfg.noise, cfg.image_width, cfg.image_height, id, &mut rng)?;
        let heatmap_file = format!("scene_{id:05}.pkhm");
        let path = out.join(&heatmap_file);
        let f = std::fs::File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
        scene.heatmap.write_pkhm(BufWriter::new(f))?;
        let votes_file = if votes {
            let fields = generate_votes(&scene.labels, &cfg.noise, &mut rng)?;
            let name = format!("scene_{id:05}.pkvf");
            let path = out.join(&name);
            let f = std::fs::File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
            VoteField::write_pkvf(&fields, BufWriter::new(f))?;
            Some(name)
        } else {
            None
        };
        let record = SceneRecord {
            scene_id: id,
            pose: scene.pose,
            labels: scene.labels,
            outliers: scene.outliers,
            heatmap_file,
            votes_file,
            noise: scene.noise,
        };
        write_json(&out.join(format!("scene_{id:05}.json")), &record)?;
    }
    Ok(())
}

/// Loads a scene record and its detection: the vote field when present,
/// the heatmap otherwise.
fn load_scene(path: &Path) -> Result<(SceneRecord, Detection), PipelineError> {
    let record: SceneRecord = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let open = |name: &str| {
        let p = dir.join(name);
        std::fs::File::open(&p)
            .map(std::io::BufReader::new)
            .map_err(|e| PipelineError::io(&p, e))
    };
    let det = match &record.votes_file {
        Some(v) => Detection::Votes(VoteField::read_pkvf(open(v)?)?),
        None => Detection::Heatmap(Heatmap::read_pkhm(open(&record.heatmap_file)?)?),
    };
    Ok((record, det))
}

fn calibrate_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<CalibrationRecord, PipelineError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scene_"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Config(format!("no scene_*.json files in {}", dir.display())));
    }
    let mut data = Vec::with_capacity(files.len());
    for f in &files {
        let (record, mut det) = load_scene(f)?;
        if !cfg.uses_votes() {
            if let Detection::Votes(_) = det {
                let p = dir.join(&record.heatmap_file);
                let file = std::fs::File::open(&p).map_err(|e| PipelineError::io(&p, e))?;
                det = Detection::Heatmap(Heatmap::read_pkhm(std::io::BufReader::new(file))?);
            }
        }
        data.push((record.labels, det));
    }
    Ok(calibrate(&data, &cfg.nonconformity)?)
}
