//! The `gsmooth` command line. Exit codes: 0 success, 1 usage error, 2
//! runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use gsmooth_core::attack::{empirical_robust_accuracy, AttackConfig};
use gsmooth_core::certify::{certified_accuracy_report, estimate_error_ratio_a, Path as CertPath, Smoother};
use gsmooth_core::classifier::{accuracy, Augment, ClassifierTrainConfig, CnnClassifier};
use gsmooth_core::data::{generate_synthetic_shapes, Dataset};
use gsmooth_core::jacobian::PowerConfig;
use gsmooth_core::rng;
use gsmooth_core::surrogate::{grid, latent_noise, Arch, Geometry, Surrogate, TrainConfig};
use gsmooth_core::Image;
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{parse_list, parse_sweep, RunConfig, SEED_ENV};
use crate::error::{Error, Result};
use crate::idx::load_mnist_idx;
use crate::manifest::Manifest;
use crate::pipeline::{attack_all, certify_all, m_stars, ResidualCache};
use crate::pnm;
use crate::report::{read_json, read_records, write_accuracy, write_attacks, write_json, write_records, write_rows};

#[derive(Parser, Debug)]
#[command(name = "gsmooth", version, about = "Certified robustness against semantic image transformations")]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed; overrides the config and GSMOOTH_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic shapes dataset into train and test files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Fraction of samples in the test file.
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
    },
    /// Apply the configured transformation to one image and write PGM/PPM files.
    ApplyTransform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Comma-separated parameter vector.
        #[arg(long, allow_hyphen_values = true)]
        theta: String,
    },
    /// Fit the surrogate transformation model.
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        halve_every: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        latent_channels: usize,
        /// U-Net widths of the three levels.
        #[arg(long, default_value = "4,8,8")]
        widths: String,
        /// Fraction of the data held out for validation.
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
    },
    /// Measure the surrogate error ε and the error ratio Â on held-out data.
    EvalSurrogate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long, default_value_t = 100)]
        heldout: usize,
        /// Grid points per parameter for the ε grid.
        #[arg(long, default_value_t = 9)]
        grid: usize,
        /// Images used for the Jacobian norms behind Â.
        #[arg(long, default_value_t = 10)]
        calibration: usize,
    },
    /// Train the base classifier with smoothing augmentation.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        /// Required on the surrogate path: augmentation goes through it.
        #[arg(long)]
        surrogate: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        halve_every: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Per-sample M* estimates.
    EstimateMstar {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        #[arg(long)]
        surrogate: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
    /// Certify the first samples of a dataset.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        surrogate: Option<PathBuf>,
        /// Output of eval-surrogate; supplies ε and the Jacobian norms behind Â.
        #[arg(long)]
        surrogate_eval: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Sweep axes, e.g. `sigma1=0.1,0.25 sigma2=0.05,0.1`.
        #[arg(long, num_args = 1..)]
        sweep: Vec<String>,
        /// Radius thresholds for the sweep table.
        #[arg(long, default_value = "0.25,0.5,1.0")]
        radii: String,
    },
    /// EoT-PGD against certified samples at a multiple of their radius.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        surrogate_eval: Option<PathBuf>,
        /// certify.csv of the same data, config and seed.
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        multiplier: f64,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long, default_value_t = 32)]
        eot_samples: usize,
    },
    /// Certified accuracy at radius thresholds from a certification run.
    Report {
        /// Directory holding certify.csv.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        radii: String,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Image triplets: original, latent-noised through the surrogate, pixel-noised.
    NoiseDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: String,
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::ApplyTransform { .. } => "apply-transform",
            Command::TrainSurrogate { .. } => "train-surrogate",
            Command::EvalSurrogate { .. } => "eval-surrogate",
            Command::TrainClassifier { .. } => "train-classifier",
            Command::EstimateMstar { .. } => "estimate-mstar",
            Command::Certify { .. } => "certify",
            Command::Attack { .. } => "attack",
            Command::Report { .. } => "report",
            Command::NoiseDump { .. } => "noise-dump",
        }
    }
}

/// `eval-surrogate` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEval {
    pub transform: String,
    pub epsilon: f64,
    pub epsilon_max: f64,
    pub epsilon_mean: f64,
    pub pairs: usize,
    pub max_f1: f64,
    pub max_f2: f64,
    pub max_h: f64,
}

impl SurrogateEval {
    pub fn a_hat(&self, multiplier: f64) -> f64 {
        multiplier * self.max_f1.max(self.max_f2).max(self.max_h)
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            let mut cmd = Cli::command();
            let sub = argv.iter().skip(1).find(|a| !a.starts_with('-')).and_then(|a| cmd.find_subcommand_mut(a).map(|s| s.render_help()));
            eprintln!("\n{}", sub.unwrap_or_else(|| cmd.render_help()));
            return 1;
        }
    };
    if let Some(w) = cli.workers {
        // The global pool can only be built once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    match execute(&cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let env = std::env::var(SEED_ENV).ok();
    RunConfig::resolve(common.config.as_deref(), &common.set, env.as_deref(), common.seed)
}

/// `--data` is a GSM1 dataset file or `idx:<images>,<labels>`.
fn load_data(spec: &str, manifest: &mut Manifest) -> Result<Dataset> {
    if let Some(rest) = spec.strip_prefix("idx:") {
        let (i, l) = rest.split_once(',').ok_or_else(|| Error::Config(format!("`{spec}` should be idx:<images>,<labels>")))?;
        let (i, l) = (Path::new(i), Path::new(l));
        manifest.input(i)?;
        manifest.input(l)?;
        return load_mnist_idx(i, l);
    }
    let p = Path::new(spec);
    manifest.input(p)?;
    checkpoint::load_dataset(p)
}

fn load_surrogate(path: &Path, cfg: &RunConfig, manifest: &mut Manifest) -> Result<Surrogate> {
    manifest.input(path)?;
    let s = checkpoint::load_surrogate(path)?;
    let kind = cfg.kind()?;
    if s.transform != kind {
        return Err(Error::Config(format!("{} approximates {}, config transform is {kind}", path.display(), s.transform)));
    }
    Ok(s)
}

fn load_classifier(path: &Path, manifest: &mut Manifest) -> Result<CnnClassifier> {
    manifest.input(path)?;
    checkpoint::load_classifier(path)
}

/// ε and Â for the surrogate path; zero on the resolvable path.
fn correction(cfg: &RunConfig, eval: Option<&PathBuf>, manifest: &mut Manifest) -> Result<(f64, f64)> {
    if cfg.cert_path()? == CertPath::Resolvable {
        return Ok((0.0, 0.0));
    }
    let path = eval.ok_or_else(|| Error::Config("the surrogate path needs --surrogate-eval for ε and Â".into()))?;
    manifest.input(path)?;
    let e: SurrogateEval = read_json(path)?;
    if e.transform != cfg.transform {
        return Err(Error::Config(format!("{} evaluates {}, config transform is {}", path.display(), e.transform, cfg.transform)));
    }
    Ok((e.epsilon, e.a_hat(cfg.a_hat_multiplier)))
}

fn begin(name: &str, argv: &[String], common: &Common) -> Result<(RunConfig, Manifest)> {
    let cfg = resolve(common)?;
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let value = serde_json::to_value(&cfg).expect("config serializes");
    let mut m = Manifest::new(name, argv, cfg.seed, value);
    if let Some(p) = &common.config {
        m.input(p)?;
    }
    Ok((cfg, m))
}

fn finish(manifest: &mut Manifest, out: &Path, outputs: &[PathBuf]) -> Result<()> {
    for p in outputs {
        manifest.output(out, p)?;
    }
    manifest.write(out)?;
    Ok(())
}

fn take(data: &Dataset, n: usize) -> Dataset {
    data.take(n.min(data.len()))
}

fn execute(cmd: &Command, argv: &[String]) -> Result<()> {
    let name = cmd.name();
    match cmd {
        Command::GenData { common, count, size, classes, test_frac } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            m.write(&common.out)?;
            let data = generate_synthetic_shapes(*count, *size, *classes, cfg.seed)?;
            let (train, _, test) = data.split(1.0 - test_frac, 0.0, cfg.seed)?;
            let (tp, sp) = (common.out.join("train.gsm"), common.out.join("test.gsm"));
            checkpoint::save_dataset(&tp, &train)?;
            checkpoint::save_dataset(&sp, &test)?;
            let mut outs = vec![tp, sp];
            for (i, im) in data.images.iter().take(8).enumerate() {
                let p = common.out.join("preview").join(format!("{i}_{}.pgm", gsmooth_core::data::SHAPE_NAMES[data.labels[i]]));
                pnm::save(&p, im)?;
                outs.push(p);
            }
            info!("wrote {} train and {} test images", train.len(), test.len());
            finish(&mut m, &common.out, &outs)
        }
        Command::ApplyTransform { common, data, index, theta } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = load_data(data, &mut m)?;
            m.write(&common.out)?;
            let im = data.images.get(*index).ok_or_else(|| Error::Config(format!("index {index} out of range ({} images)", data.len())))?;
            let theta = parse_list(theta)?;
            let moved = cfg.spec()?.apply(&theta, im)?;
            let (a, b) = (common.out.join("original.pgm"), common.out.join("transformed.pgm"));
            let ext = |p: PathBuf| if im.channels == 3 { p.with_extension("ppm") } else { p };
            let (a, b) = (ext(a), ext(b));
            pnm::save(&a, im)?;
            pnm::save(&b, &moved)?;
            finish(&mut m, &common.out, &[a, b])
        }
        Command::TrainSurrogate { common, data, epochs, lr, halve_every, batch_size, latent_channels, widths, val_frac } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = load_data(data, &mut m)?;
            m.write(&common.out)?;
            let spec = cfg.spec()?;
            let (train, val, _) = data.split(1.0 - val_frac, *val_frac, cfg.seed)?;
            let w = parse_list(widths)?;
            if w.len() != 3 {
                return Err(Error::Config(format!("--widths needs 3 values, got {}", w.len())));
            }
            let arch = Arch::UNet { latent_channels: *latent_channels, widths: [w[0] as usize, w[1] as usize, w[2] as usize] };
            let first = train.images.first().ok_or(gsmooth_core::Error::Empty("training set"))?;
            let mut model = Surrogate::new(spec.kind, Geometry::of(first), arch, cfg.seed)?;
            let tc = TrainConfig { epochs: *epochs, batch_size: *batch_size, lr: *lr, halve_every: *halve_every, seed: cfg.seed };
            let report = model.train(&spec, &train.images, &val.images, &tc, |l| {
                info!("epoch {} train L1 {:.5} val L1 {:.5}", l.epoch, l.train_l1, l.val_l1)
            })?;
            let (mp, lp) = (common.out.join("surrogate.gsm"), common.out.join("surrogate_train.csv"));
            checkpoint::save_surrogate(&mp, &model)?;
            write_rows(
                &lp,
                &["epoch", "train_l1", "val_l1"],
                report.history.iter().map(|l| vec![l.epoch.to_string(), l.train_l1.to_string(), l.val_l1.to_string()]),
            )?;
            finish(&mut m, &common.out, &[mp, lp])
        }
        Command::EvalSurrogate { common, data, surrogate, heldout, grid: points, calibration } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = load_data(data, &mut m)?;
            let model = load_surrogate(surrogate, &cfg, &mut m)?;
            m.write(&common.out)?;
            let spec = cfg.spec()?;
            let held = take(&data, *heldout);
            let eps = model.measure_epsilon(&spec, &held.images, &grid(&spec.space, *points))?;
            let cal = take(&data, *calibration);
            let power = PowerConfig { seed: cfg.seed, ..PowerConfig::default() };
            let ratio = estimate_error_ratio_a(&model, &cal.images, &grid(&spec.space, 3), cfg.a_hat_multiplier, &power)?;
            let out = SurrogateEval {
                transform: cfg.transform.clone(),
                epsilon: eps.epsilon,
                epsilon_max: eps.max,
                epsilon_mean: eps.mean,
                pairs: eps.pairs,
                max_f1: ratio.max_f1,
                max_f2: ratio.max_f2,
                max_h: ratio.max_h,
            };
            info!("epsilon {:.5}, A_hat {:.3}, A_hat*epsilon {:.4}", out.epsilon, ratio.a_hat, ratio.a_hat * out.epsilon);
            let p = common.out.join("surrogate_eval.json");
            write_json(&p, &out)?;
            finish(&mut m, &common.out, &[p])
        }
        Command::TrainClassifier { common, data, surrogate, epochs, lr, halve_every, batch_size } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = load_data(data, &mut m)?;
            let spec = cfg.spec()?;
            let path = cfg.cert_path()?;
            let model = match (path, surrogate) {
                (CertPath::Surrogate, Some(p)) => Some(load_surrogate(p, &cfg, &mut m)?),
                (CertPath::Surrogate, None) => return Err(Error::Config("the surrogate path needs --surrogate".into())),
                _ => None,
            };
            m.write(&common.out)?;
            let first = data.images.first().ok_or(gsmooth_core::Error::Empty("training set"))?;
            let mut c = CnnClassifier::new(Geometry::of(first), data.classes, CnnClassifier::DEFAULT_WIDTHS, cfg.seed)?;
            let cc = cfg.certify_config(0.0, 0.0)?;
            let noise = cc.theta_noise(spec.param_dim())?;
            let aug = match &model {
                Some(s) => Augment::Surrogate { model: s, noise, sigma2: cfg.sigma2 },
                None => Augment::Kernel { spec: &spec, noise },
            };
            let tc = ClassifierTrainConfig { epochs: *epochs, batch_size: *batch_size, lr: *lr, halve_every: *halve_every, seed: cfg.seed };
            let mut log = Vec::new();
            c.train(&data.images, &data.labels, &tc, &aug, |e, loss, acc| {
                info!("epoch {e} loss {loss:.4} accuracy {acc:.3}");
                log.push(vec![e.to_string(), loss.to_string(), acc.to_string()]);
            })?;
            info!("clean training accuracy {:.3}", accuracy(&c, &data.images, &data.labels)?);
            let (cp, lp) = (common.out.join("classifier.gsm"), common.out.join("classifier_train.csv"));
            checkpoint::save_classifier(&cp, &c)?;
            write_rows(&lp, &["epoch", "loss", "accuracy"], log)?;
            finish(&mut m, &common.out, &[cp, lp])
        }
        Command::EstimateMstar { common, data, surrogate, samples } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = take(&load_data(data, &mut m)?, *samples);
            let model = surrogate.as_ref().map(|p| load_surrogate(p, &cfg, &mut m)).transpose()?;
            m.write(&common.out)?;
            let cc = cfg.certify_config(0.0, 0.0)?;
            let ms = m_stars(&cfg.spec()?, model.as_ref(), &data.images, &cc)?;
            let p = common.out.join("mstar.csv");
            write_rows(&p, &["sample_id", "m_star"], ms.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]))?;
            finish(&mut m, &common.out, &[p])
        }
        Command::Certify { common, data, classifier, surrogate, surrogate_eval, samples, sweep, radii } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = take(&load_data(data, &mut m)?, *samples);
            let c = load_classifier(classifier, &mut m)?;
            let model = surrogate.as_ref().map(|p| load_surrogate(p, &cfg, &mut m)).transpose()?;
            let (eps, a_hat) = correction(&cfg, surrogate_eval.as_ref(), &mut m)?;
            m.write(&common.out)?;
            let spec = cfg.spec()?;
            if sweep.is_empty() {
                let cc = cfg.certify_config(eps, a_hat)?;
                let sm = Smoother::new(&c, &spec, model.as_ref(), &cc)?;
                let ms = m_stars(&spec, model.as_ref(), &data.images, &cc)?;
                let recs = certify_all(&sm, &data.images, &data.labels, &ms)?;
                let p = common.out.join("certify.csv");
                write_records(&p, &recs)?;
                return finish(&mut m, &common.out, &[p]);
            }
            let radii = parse_list(radii)?;
            let axes: Vec<(String, Vec<f64>)> = sweep.iter().map(|s| parse_sweep(s)).collect::<Result<_>>()?;
            let cache = match (&model, cfg.cert_path()?) {
                (Some(s), CertPath::Surrogate) => Some(ResidualCache::new(s, &spec, &data.images, cfg.grid_points, cfg.seed)?),
                _ => None,
            };
            let mut cells = vec![cfg.clone()];
            for (k, vals) in &axes {
                cells = cells.iter().flat_map(|c| vals.iter().map(move |&v| c.with(k, v))).collect::<Result<_>>()?;
            }
            let mut header: Vec<String> = axes.iter().map(|(k, _)| k.clone()).collect();
            header.extend(["radius".into(), "certified_accuracy".into(), "abstain_rate".into()]);
            let mut rows = Vec::new();
            let mut outs = Vec::new();
            for cell in &cells {
                let cc = cell.certify_config(eps, a_hat)?;
                let sm = Smoother::new(&c, &spec, model.as_ref(), &cc)?;
                let ms = match &cache {
                    Some(cache) => cache.m_stars(cell.sigma1, cell.sigma2, cell.safety_factor, cell.seed)?,
                    None => m_stars(&spec, None, &data.images, &cc)?,
                };
                let recs = certify_all(&sm, &data.images, &data.labels, &ms)?;
                let tag: Vec<String> = axes.iter().map(|(k, _)| format!("{k}_{}", cell_value(cell, k))).collect();
                let p = common.out.join("sweep").join(tag.join("_")).join("certify.csv");
                write_records(&p, &recs)?;
                outs.push(p);
                let abstain = recs.iter().filter(|r| r.abstained).count() as f64 / recs.len().max(1) as f64;
                for (r, acc) in certified_accuracy_report(&recs, &radii)? {
                    let mut row: Vec<String> = axes.iter().map(|(k, _)| cell_value(cell, k).to_string()).collect();
                    row.extend([r.to_string(), acc.to_string(), abstain.to_string()]);
                    rows.push(row);
                }
                info!("cell {} done", tag.join(" "));
            }
            let p = common.out.join("sweep.csv");
            write_rows(&p, &header, rows)?;
            outs.push(p);
            finish(&mut m, &common.out, &outs)
        }
        Command::Attack { common, data, classifier, surrogate, surrogate_eval, records, multiplier, steps, eot_samples } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = load_data(data, &mut m)?;
            let c = load_classifier(classifier, &mut m)?;
            let model = load_surrogate(surrogate, &cfg, &mut m)?;
            let (eps, a_hat) = correction(&cfg, surrogate_eval.as_ref(), &mut m)?;
            m.input(records)?;
            m.write(&common.out)?;
            let recs = read_records(records)?;
            if let Some(r) = recs.iter().find(|r| r.sample_id >= data.len()) {
                return Err(Error::Config(format!("record for sample {} but the dataset has {} images", r.sample_id, data.len())));
            }
            let spec = cfg.spec()?;
            let cc = cfg.certify_config(eps, a_hat)?;
            let sm = Smoother::new(&c, &spec, Some(&model), &cc)?;
            let base = AttackConfig { steps: *steps, eot_samples: *eot_samples, eval_samples: cfg.n, seed: cfg.seed, ..AttackConfig::default() };
            let results = attack_all(&sm, &model, &recs, &data.images, *multiplier, &base)?;
            let summary = if results.is_empty() { None } else { Some(empirical_robust_accuracy(&recs, &results)?) };
            let (ap, sp) = (common.out.join("attack.csv"), common.out.join("attack_summary.json"));
            write_attacks(&ap, &results)?;
            let successes = results.iter().filter(|r| r.success).count();
            write_json(
                &sp,
                &serde_json::json!({
                    "multiplier": multiplier,
                    "attacked": results.len(),
                    "successes": successes,
                    "empirical_accuracy": summary.map(|s| s.empirical),
                    "certified_accuracy": summary.map(|s| s.certified),
                }),
            )?;
            info!("{successes}/{} attacks succeeded at {multiplier}×R_r", results.len());
            finish(&mut m, &common.out, &[ap, sp])
        }
        Command::Report { input, radii, out } => {
            let out = out.clone().unwrap_or_else(|| input.clone());
            let src = input.join("certify.csv");
            let mut m = Manifest::new(name, argv, 0, serde_json::Value::Null);
            m.input(&src)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let recs = read_records(&src)?;
            let rows = certified_accuracy_report(&recs, &parse_list(radii)?)?;
            let p = out.join("report.csv");
            write_accuracy(&p, &rows)?;
            // The input directory already carries the certification manifest.
            let mp = out.join("report_manifest.json");
            m.output(&out, &p)?;
            write_json(&mp, &m)?;
            Ok(())
        }
        Command::NoiseDump { common, data, surrogate, count } => {
            let (cfg, mut m) = begin(name, argv, common)?;
            let data = take(&load_data(data, &mut m)?, *count);
            let model = load_surrogate(surrogate, &cfg, &mut m)?;
            m.write(&common.out)?;
            let zero = vec![0.0; model.param_dim];
            let mut outs = Vec::new();
            for (i, im) in data.images.iter().enumerate() {
                let mut r = rng::stream(cfg.seed, i as u64);
                let mut t = vec![0.0f32; model.latent_dim()];
                latent_noise(cfg.sigma2, &mut r, &mut t);
                let latent = model.evaluate(&zero, im, Some(&t))?.clamp01();
                let pixel = gaussian_pixels(im, cfg.sigma2, &mut r);
                let ext = if im.channels == 3 { "ppm" } else { "pgm" };
                for (tag, img) in [("original", im), ("latent", &latent), ("pixel", &pixel)] {
                    let p = common.out.join("noise").join(format!("{i}_{tag}.{ext}"));
                    pnm::save(&p, img)?;
                    outs.push(p);
                }
            }
            finish(&mut m, &common.out, &outs)
        }
    }
}

fn cell_value(cfg: &RunConfig, key: &str) -> f64 {
    serde_json::to_value(cfg).ok().and_then(|v| v[key].as_f64()).unwrap_or(f64::NAN)
}

/// `clamp(x + N(0, σ²))` per pixel.
fn gaussian_pixels(image: &Image, sigma: f64, r: &mut rng::Rng) -> Image {
    let mut noise = vec![0.0f32; image.len()];
    latent_noise(sigma, r, &mut noise);
    let mut out = image.clone();
    out.data.iter_mut().zip(&noise).for_each(|(v, n)| *v += n);
    out.clamp01()
}
