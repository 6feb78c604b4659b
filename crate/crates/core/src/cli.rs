//! The `poseforge` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::{apply_policy, rand_policy_apply, AugConfig, AugPolicy, GrayImage};
use crate::config::{parse_kv, Configurable};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, pose_errors};
use crate::pem::{
    evaluate, finite_difference_check, image_frame, load_weights, predict_batch, save_weights, Arch, PemConfig,
    RotationHead, TrainConfig,
};
use crate::rng;
use crate::scenegen::{generate_dataset, read_jsonl, read_pose_lines, write_jsonl, PoseLine, SceneConfig, SceneRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Gradient check tolerance on the relative error of each tensor.
pub const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "poseforge", version, about = "Keypoint-based spacecraft pose estimation toolkit")]
pub struct Cli {
    /// Key-value config file (`scene.*`, `aug.*`, `pem.*`, `train.*` keys); flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic labeled scenes as JSONL.
    GenData(GenDataArgs),
    /// Apply domain-randomization augmentations to a grayscale image.
    Augment(AugmentArgs),
    /// Train the pose regressor on a JSONL dataset.
    Train(TrainArgs),
    /// Score trained weights on a labeled dataset.
    Eval(EvalArgs),
    /// Score a prediction file against labels.
    Metrics(MetricsArgs),
    /// Finite-difference check of every weight gradient on a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of records.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input image (.pgm or .png).
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Output image (.pgm or .png).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Apply this single policy instead of a random triple
    /// (gaussian-noise, brightness-contrast, hide-and-seek, exposure, texture, none).
    #[arg(long)]
    pub policy: Option<AugPolicy>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training records (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Validation records scored after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint path; a `.json` sidecar is written next to it.
    #[arg(long)]
    pub out_weights: PathBuf,
    /// Training log CSV [default: <out-weights>.log.csv].
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// full, no-positional or mlp-only.
    #[arg(long)]
    pub arch: Option<String>,
    /// 6d or quaternion.
    #[arg(long)]
    pub rotation: Option<String>,
    /// Keypoint jitter in pixels applied during training.
    #[arg(long)]
    pub sigma_px: Option<f64>,
    /// Probability of replacing a keypoint by an outlier during training.
    #[arg(long)]
    pub p_outlier: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled records (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// JSON score report.
    #[arg(long)]
    pub report: PathBuf,
    /// Also write predicted poses as JSONL.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predicted poses (JSONL with id, t_m, q_wxyz).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth records (JSONL).
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON score report.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("POSEFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("POSEFORGE_THREADS: not a count: {v:?}")))?;
    // a pool that already exists (repeated in-process runs) keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Writes `bytes` to a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Settings {
    scene: SceneConfig,
    aug: AugConfig,
    pem: PemConfig,
    train: TrainConfig,
}

fn load_settings(path: Option<&Path>) -> Result<Settings> {
    let mut s = Settings {
        scene: SceneConfig::default(),
        aug: AugConfig::default(),
        pem: PemConfig::default(),
        train: TrainConfig::default(),
    };
    if let Some(p) = path {
        let pairs = parse_kv(&fs::read_to_string(p)?)?;
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !["scene.", "aug.", "pem.", "train."].iter().any(|p| k.starts_with(p)))
        {
            return Err(Error::Config(format!("unknown config section in key {k:?}")));
        }
        s.scene.apply_section("scene", &pairs)?;
        s.aug.apply_section("aug", &pairs)?;
        s.pem.apply_section("pem", &pairs)?;
        s.train.apply_section("train", &pairs)?;
    }
    Ok(s)
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

fn read_records(path: &Path) -> Result<Vec<SceneRecord>> {
    read_jsonl(open(path)?)
}

fn records_to_bytes(records: &[SceneRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    Ok(buf)
}

fn execute(cli: &Cli) -> Result<i32> {
    let mut s = load_settings(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(a) => {
            let records = generate_dataset(a.n, &s.scene, a.seed)?;
            write_atomic(&a.out, &records_to_bytes(&records)?)?;
            eprintln!("wrote {} records to {}", records.len(), a.out.display());
        }
        Command::Augment(a) => {
            if let Some(seed) = a.seed {
                s.aug.seed = seed;
            }
            let img = GrayImage::load(&a.input)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", a.input.display())))?;
            let mut r = rng::child(s.aug.seed, 0);
            let (out, applied) = match a.policy {
                Some(p) => (apply_policy(&img, p, &s.aug, &mut r), vec![p]),
                None => {
                    let (o, t) = rand_policy_apply(&img, &s.aug, &mut r);
                    (o, t.to_vec())
                }
            };
            write_atomic(&a.out, &out.encode_for(&a.out)?)?;
            let names: Vec<&str> = applied.iter().map(|p| p.name()).collect();
            println!("{}", names.join(","));
        }
        Command::Train(a) => train(a, &mut s)?,
        Command::Eval(a) => {
            let records = read_records(&a.data)?;
            let w = load_weights(&a.weights)?;
            let (_, report) = evaluate(&w, &records, &s.scene.camera)?;
            if let Some(p) = &a.predictions {
                let ks: Vec<&[[f64; 2]]> = records.iter().map(|r| r.keypoints.as_slice()).collect();
                let poses = predict_batch(&w, &ks, &image_frame(&s.scene.camera))?;
                let mut buf = Vec::new();
                for (r, pose) in records.iter().zip(&poses) {
                    serde_json::to_writer(&mut buf, &PoseLine::from_pose(r.id, pose))?;
                    buf.push(b'\n');
                }
                write_atomic(p, &buf)?;
            }
            let json = serde_json::to_string_pretty(&report.to_json())?;
            write_atomic(&a.report, json.as_bytes())?;
            println!("{json}");
        }
        Command::Metrics(a) => {
            let preds = read_pose_lines(open(&a.pred)?)?;
            let gts = read_pose_lines(open(&a.gt)?)?;
            let json = serde_json::to_string_pretty(&score_predictions(&preds, &gts)?.to_json())?;
            write_atomic(&a.report, json.as_bytes())?;
            println!("{json}");
        }
        Command::Gradcheck(a) => return gradcheck(a.seed),
    }
    Ok(EXIT_OK)
}

/// Joins predictions to labels by id; both sides must cover the same ids.
pub fn score_predictions(preds: &[PoseLine], gts: &[PoseLine]) -> Result<crate::metrics::ScoreReport> {
    let mut by_id = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id, p).is_some() {
            return Err(Error::InvalidInput(format!("duplicate prediction id {}", p.id)));
        }
    }
    if preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} labels", preds.len(), gts.len())));
    }
    let mut errors = Vec::with_capacity(gts.len());
    for g in gts {
        let p = by_id.get(&g.id).ok_or_else(|| Error::InvalidInput(format!("no prediction for id {}", g.id)))?;
        errors.push(pose_errors(&p.pose()?, &g.pose()?)?);
    }
    aggregate(&errors)
}

fn train(a: &TrainArgs, s: &mut Settings) -> Result<()> {
    let tc = &mut s.train;
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.sigma_px {
        tc.set("sigma_px", &v.to_string())?;
    }
    if let Some(v) = a.p_outlier {
        tc.set("p_outlier", &v.to_string())?;
    }
    tc.validate()?;
    if let Some(v) = &a.arch {
        s.pem.set("arch", v)?;
    }
    if let Some(v) = &a.rotation {
        s.pem.set("rotation", v)?;
    }
    s.pem.validate()?;

    let records = read_records(&a.data)?;
    let val = a.val.as_deref().map(read_records).transpose()?;
    eprintln!(
        "training {} model ({} head) on {} records for {} epochs",
        s.pem.arch.name(),
        s.pem.rotation.name(),
        records.len(),
        tc.epochs
    );
    let (w, log) = crate::pem::train_pem(&records, val.as_deref(), &s.scene.camera, tc, s.pem, |e| match &e.val {
        Some(v) => eprintln!(
            "epoch {:>3} lr {:.3e} loss {:.5} val E_R {:.3} deg E_T {:.4} m S*_P {:.5}",
            e.epoch,
            e.lr,
            e.train_loss,
            v.e_r_deg(),
            v.e_t_mean,
            v.s_p_star
        ),
        None => eprintln!("epoch {:>3} lr {:.3e} loss {:.5}", e.epoch, e.lr, e.train_loss),
    })?;
    save_weights(&a.out_weights, &w)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out_weights.as_os_str().to_owned();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_atomic(&log_path, log.to_csv().as_bytes())?;
    eprintln!("wrote {} and {}", a.out_weights.display(), log_path.display());
    Ok(())
}

fn gradcheck(seed: u64) -> Result<i32> {
    let mut failed = 0;
    for arch in [Arch::Full, Arch::NoPositional, Arch::MlpOnly] {
        for rotation in [RotationHead::SixD, RotationHead::Quaternion] {
            let cfg = PemConfig { arch, rotation, ..PemConfig::reduced() };
            for c in finite_difference_check(cfg, seed, GRADCHECK_STEP)? {
                let ok = c.passes(GRADCHECK_TOL);
                failed += usize::from(!ok);
                println!(
                    "{} {}/{} {} ({} values) rel_err {:.3e}",
                    if ok { "ok  " } else { "FAIL" },
                    arch.name(),
                    rotation.name(),
                    c.tensor,
                    c.len,
                    c.rel_err
                );
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} tensors exceed rel. err {GRADCHECK_TOL:e}");
        return Ok(EXIT_DATA);
    }
    Ok(EXIT_OK)
}
