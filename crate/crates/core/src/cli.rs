//! The `scalebench` command line.
//!
//! Every subcommand writes its artifacts under `--out-dir` and prints a
//! summary on stdout in `--format`. Failures print one line on stderr,
//!
//! ```text
//! error kind=<kind> message="<escaped message>"
//! ```
//!
//! and exit with status 1.

use crate::arch_ir::{parse_model, write_model, TensorShape};
use crate::arch_search::{generate_scaled_family, SearchSpace};
use crate::cost_model::{cost_report, CostParams, CostReport};
use crate::datagen::{generate_dataset, DatasetJob, DatasetManifest, SimConfig};
use crate::micro_trainer::{desk_training_set, load_samples, oracle_suite, tiny_conv_net, train_tiny, TrainConfig};
use crate::report::{
    cost_csv, emit_table, parse_cost_csv, parse_scaling_csv, scaling_csv, scaling_table, summarize, Format,
};
use crate::scaling_sim::{
    data_scaling, strong_scaling, ClusterConfig, FullDataset, ModelProfile,
};
use crate::units::{parse_si, sig_digits};
use clap::{Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "scalebench", version, about = "Desk-scale AI-on-HPC benchmark toolkit")]
pub struct Cli {
    /// Master seed for every seeded pipeline.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for generated artifacts.
    #[arg(long, global = true, default_value = "scalebench-out")]
    pub out_dir: PathBuf,
    /// Output format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Text)]
    pub format: OutFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Text,
    Csv,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Text => Format::Text,
            OutFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Strong,
    Data,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with the coordinator/worker pipeline.
    Datagen {
        #[arg(long, default_value_t = 16)]
        sims: u64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Indices claimed per worker visit.
        #[arg(long, default_value_t = 1)]
        batch: u64,
        /// Voxels per side of each simulation grid.
        #[arg(long)]
        grid: Option<usize>,
        /// Box side length.
        #[arg(long = "box")]
        box_side: Option<f64>,
        /// Particles per side (defaults to the grid side).
        #[arg(long)]
        particles: Option<usize>,
        /// Dataset directory (default: <out-dir>/dataset).
        #[arg(long)]
        out: Option<PathBuf>,
        /// 64^3 particles into a 64^3 grid.
        #[arg(long)]
        desk_scale: bool,
    },
    /// Sample a cell and scale it to each FLOP target.
    Search {
        /// Comma-separated per-sample training FLOP targets, SI suffixes allowed.
        #[arg(long, default_value = "4T,16T")]
        targets: String,
        /// Relative tolerance around each target.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Cost a model file.
    Estimate {
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch: u64,
        /// Input cube side (one channel).
        #[arg(long, default_value_t = 128)]
        input_side: usize,
    },
    /// Simulate strong or data scaling.
    Simulate {
        /// Preset name (small, medium, large) or a profile file.
        #[arg(long, default_value = "medium")]
        profile: String,
        /// Cluster file; defaults apply when omitted.
        #[arg(long)]
        cluster: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Strong)]
        mode: Mode,
        /// Node counts for strong scaling.
        #[arg(long, default_value = "1,2,4,8,16,32")]
        nodes: String,
        /// Dataset fraction for strong scaling.
        #[arg(long, default_value = "1/32")]
        fraction: String,
        /// Dataset fractions for data scaling.
        #[arg(long, default_value = "1/64,1/32,1/16,1/8,1/4,1/2,1")]
        fractions: String,
        /// Apply the profile's mixed-precision speedup.
        #[arg(long)]
        mixed_precision: bool,
    },
    /// Cross-check the counted trainer against the cost model.
    Oracle,
    /// Train a tiny conv net on desk-scale samples and emit the loss trace.
    TrainTiny {
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Existing dataset directory; a 32-sample desk set is generated otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Aggregate artifacts in --out-dir into the summary table.
    Report {
        /// Extra dataset directories holding a manifest.
        #[arg(long)]
        manifest: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self { kind, message: message.to_string() }
    }

    /// The single stderr line printed on failure.
    pub fn line(&self) -> String {
        let escaped = self.message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n");
        format!("error kind={} message=\"{escaped}\"", self.kind)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_list<T>(text: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|t| parse(t.trim()).ok_or_else(|| CliError::new("usage", format!("bad {what}: {t:?}"))))
        .collect()
}

fn parse_fraction(t: &str) -> Option<f64> {
    match t.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => t.parse().ok(),
    }
}

/// Runs a parsed command and returns what goes to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let out_dir = &cli.out_dir;
    let format = cli.format;
    match &cli.command {
        Command::Datagen { sims, workers, batch, grid, box_side, particles, out, desk_scale } => {
            let mut config = if *desk_scale { SimConfig::desk_scale() } else { SimConfig::default() };
            if let Some(g) = grid {
                config.grid_d = *g;
                config.particles_per_side = particles.unwrap_or(*g);
            } else if let Some(p) = particles {
                config.particles_per_side = *p;
            }
            if let Some(b) = box_side {
                config.box_side = *b;
            }
            config.voxel_resolution = config.box_side / config.grid_d as f64;
            let dir = out.clone().unwrap_or_else(|| out_dir.join("dataset"));
            let job = DatasetJob {
                per_worker_batch: *batch,
                config,
                ..DatasetJob::new(*sims, *workers, &dir, cli.seed)
            };
            let m = generate_dataset(&job).map_err(|e| CliError::new("datagen", e))?;
            Ok(match format {
                OutFormat::Text => format!(
                    "dataset {}\nsims {}\nsamples {}\nsubvolume {}^3\nbytes {}\n",
                    dir.display(),
                    m.sims_count,
                    m.sample_count(),
                    m.subvolume_d,
                    m.total_bytes()
                ),
                OutFormat::Csv => format!(
                    "dir,sims,samples,subvolume_d,bytes\n{},{},{},{},{}\n",
                    dir.display(),
                    m.sims_count,
                    m.sample_count(),
                    m.subvolume_d,
                    m.total_bytes()
                ),
            })
        }
        Command::Search { targets, tolerance } => {
            let targets = parse_list(targets, "target", |t| parse_si(t).ok())?;
            let space = SearchSpace { tolerance: *tolerance, ..SearchSpace::default() };
            let family = generate_scaled_family(&space, &targets, cli.seed).map_err(|e| CliError::new("search", e))?;
            let mut reports = Vec::new();
            let mut text = String::from("target,channel_width,training_flops,params,tolerance_missed,file\n");
            for (i, (sol, target)) in family.iter().zip(&targets).enumerate() {
                let file = out_dir.join(format!("family_{i}.model"));
                write_file(&file, &write_model(&sol.model))?;
                let r = cost_report(&sol.model, &space.input, 1, &CostParams::default())
                    .map_err(|e| CliError::new("cost", e))?;
                let _ = writeln!(
                    text,
                    "{target:?},{},{},{},{},{}",
                    sol.channel_width,
                    sol.training_flops,
                    r.params,
                    sol.tolerance_missed,
                    file.display()
                );
                reports.push(r);
            }
            write_file(&out_dir.join("search.costs.csv"), &cost_csv(&reports))?;
            Ok(match format {
                OutFormat::Csv => text,
                OutFormat::Text => family
                    .iter()
                    .zip(&targets)
                    .zip(&reports)
                    .map(|((s, t), r)| {
                        format!(
                            "target {:.3e}: width {} -> {:.4e} FLOPs/sample, {} params{}\n",
                            t,
                            s.channel_width,
                            s.training_flops as f64,
                            r.params,
                            if s.tolerance_missed { " (outside tolerance)" } else { "" }
                        )
                    })
                    .collect(),
            })
        }
        Command::Estimate { model, batch, input_side } => {
            let text = read_file(model)?;
            let spec = parse_model(&text).map_err(|e| CliError::new("parse", e))?;
            let r = cost_report(&spec, &TensorShape::cube(1, *input_side), *batch, &CostParams::default())
                .map_err(|e| CliError::new("cost", e))?;
            let stem = model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            write_file(&out_dir.join(format!("{stem}.costs.csv")), &cost_csv(std::slice::from_ref(&r)))?;
            Ok(match format {
                OutFormat::Csv => cost_csv(&[r]),
                OutFormat::Text => r.to_kv(),
            })
        }
        Command::Simulate { profile, cluster, mode, nodes, fraction, fractions, mixed_precision } => {
            let mut p = match ModelProfile::preset(profile) {
                Some(p) => p,
                None => ModelProfile::parse(&read_file(Path::new(profile))?).map_err(|e| CliError::new("parse", e))?,
            };
            if *mixed_precision {
                p = p.mixed_precision();
            }
            let c = match cluster {
                Some(path) => ClusterConfig::parse(&read_file(path)?).map_err(|e| CliError::new("parse", e))?,
                None => ClusterConfig::default(),
            };
            let full = FullDataset::default();
            let (records, tag) = match mode {
                Mode::Strong => {
                    let nodes = parse_list(nodes, "node count", |t| t.parse().ok())?;
                    let f = parse_fraction(fraction).ok_or_else(|| CliError::new("usage", "bad fraction"))?;
                    (strong_scaling(&p, &c, &nodes, f, &full), "strong")
                }
                Mode::Data => {
                    let fr = parse_list(fractions, "fraction", parse_fraction)?;
                    (data_scaling(&p, &c, &fr, &full), "data")
                }
            };
            let records = records.map_err(|e| CliError::new("simulate", e))?;
            let csv = scaling_csv(&records);
            write_file(&out_dir.join(format!("{}_{tag}.scaling.csv", p.name)), &csv)?;
            write_file(&out_dir.join("cluster.txt"), &c.to_text())?;
            Ok(match format {
                OutFormat::Csv => csv,
                OutFormat::Text => format!("profile {} ({tag} scaling)\n{}", p.name, scaling_table(&records)),
            })
        }
        Command::Oracle => {
            let checks = oracle_suite(cli.seed);
            let mut s = String::new();
            match format {
                OutFormat::Csv => {
                    s.push_str("check,passed,detail\n");
                    for c in &checks {
                        let _ = writeln!(s, "\"{}\",{},\"{}\"", c.name, c.passed, c.detail);
                    }
                }
                OutFormat::Text => {
                    for c in &checks {
                        let _ = writeln!(s, "{} {:<40} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                    }
                }
            }
            if let Some(bad) = checks.iter().find(|c| !c.passed) {
                print!("{s}");
                return Err(CliError::new("oracle", format!("{}: {}", bad.name, bad.detail)));
            }
            Ok(s)
        }
        Command::TrainTiny { epochs, lr, batch, data } => {
            let (manifest, samples) = match data {
                Some(dir) => load_samples(dir),
                None => desk_training_set(&out_dir.join("train-data"), cli.seed),
            }
            .map_err(|e| CliError::new("train", e))?;
            let config = TrainConfig { epochs: *epochs, learning_rate: *lr, batch_size: *batch, seed: cli.seed };
            let trace =
                train_tiny(&tiny_conv_net(), &samples, &manifest.ranges, &config).map_err(|e| CliError::new("train", e))?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in trace.iter().enumerate() {
                let _ = writeln!(csv, "{i},{l:?}");
            }
            write_file(&out_dir.join("loss.csv"), &csv)?;
            Ok(match format {
                OutFormat::Csv => csv,
                OutFormat::Text => format!(
                    "samples {}\nepochs {}\ninitial loss {}\nfinal loss {}\n",
                    samples.len(),
                    epochs,
                    sig_digits(trace[0], 4),
                    sig_digits(*trace.last().unwrap(), 4)
                ),
            })
        }
        Command::Report { manifest } => report(out_dir, manifest, format),
    }
}

fn report(out_dir: &Path, extra: &[PathBuf], format: OutFormat) -> Result<String, CliError> {
    let mut costs: Vec<CostReport> = Vec::new();
    let mut sweeps = Vec::new();
    let mut manifest_dirs: Vec<PathBuf> = extra.to_vec();
    let mut entries: Vec<PathBuf> = fs::read_dir(out_dir)
        .map_err(io_err(out_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".costs.csv") {
            costs.extend(parse_cost_csv(&read_file(&path)?).map_err(|e| CliError::new("parse", format!("{name}: {e}")))?);
        } else if name.ends_with(".scaling.csv") {
            sweeps.push(parse_scaling_csv(&read_file(&path)?).map_err(|e| CliError::new("parse", format!("{name}: {e}")))?);
        } else if path.join("manifest.txt").is_file() {
            manifest_dirs.push(path);
        }
    }
    let manifests = manifest_dirs
        .iter()
        .map(|d| DatasetManifest::load(d).map_err(|e| CliError::new("parse", e)))
        .collect::<Result<Vec<_>, _>>()?;
    let cluster_file = out_dir.join("cluster.txt");
    let cluster = if cluster_file.is_file() {
        ClusterConfig::parse(&read_file(&cluster_file)?).map_err(|e| CliError::new("parse", e))?
    } else {
        ClusterConfig::default()
    };
    let loss_file = out_dir.join("loss.csv");
    let loss: Option<Vec<f64>> = if loss_file.is_file() {
        Some(
            read_file(&loss_file)?
                .lines()
                .skip(1)
                .filter_map(|l| l.split(',').nth(1).and_then(|v| v.parse().ok()))
                .collect(),
        )
    } else {
        None
    };
    let table = summarize(&costs, &manifests, &sweeps, &cluster, loss.as_deref()).map_err(|e| CliError::new("report", e))?;
    let text = emit_table(&table, format.into());
    let ext = if format == OutFormat::Csv { "csv" } else { "txt" };
    write_file(&out_dir.join(format!("summary.{ext}")), &text)?;
    Ok(text)
}
