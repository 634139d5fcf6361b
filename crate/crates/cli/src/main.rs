use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::{value::Error as DeError, DeserializeOwned, IntoDeserializer};

use vflprecode::experiment::{
    accounting_report, evaluate_checkpoints, run_experiment, run_online, summarize, write_report, ExperimentConfig, PointData, Scheme,
    SweepPoint,
};
use vflprecode::vfl::format_mb;

#[derive(Parser)]
#[command(name = "vflprecode", version, about = "Sensing-aided FDD precoding with split federated training")]
struct Cli {
    /// TOML experiment config; flags override its fields.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Repeat for more log output (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the scene and sample stream of every sweep point and write
    /// the geometry plus a per-vehicle summary.
    GenScene,
    /// Train the learned schemes and evaluate every configured scheme on
    /// the shared test channels.
    Train,
    /// Re-evaluate saved checkpoints with B-bit feedback.
    Eval {
        /// Feedback bits; 0 evaluates unquantized feedback.
        #[arg(long, default_value_t = 2)]
        bits: u8,
    },
    /// Evaluate only the classical precoders of the config.
    Baseline,
    /// Warm start versus retraining after a vehicle joins.
    Online,
    /// Communication accounting of a finished run.
    Report {
        /// Run directory; defaults to the configured output directory.
        dir: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    Config,
}

#[derive(Args, Default)]
struct Overrides {
    /// Comma-separated scheme ids (uni-pilot, pilot-gps, pilot-rgb,
    /// pilot-lidar, h-mvmm, zf, wmmse, mrt, random).
    #[arg(long, global = true, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Fleet sizes.
    #[arg(long = "k", global = true, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// SNRs in dB.
    #[arg(long = "snr", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    snr_list: Option<Vec<f64>>,
    /// Pilot lengths.
    #[arg(long = "l-p", global = true, value_delimiter = ',')]
    l_p_list: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    test_fraction: Option<f64>,
    #[arg(long, global = true)]
    eval_bits: Option<u8>,
    /// mixed | all-sensors
    #[arg(long, global = true, value_parser = kebab::<vflprecode::experiment::HMvmmPolicy>)]
    h_mvmm: Option<vflprecode::experiment::HMvmmPolicy>,
    /// desk | full
    #[arg(long, global = true, value_parser = kebab::<vflprecode::experiment::Widths>)]
    widths: Option<vflprecode::experiment::Widths>,
    /// f32 | f64
    #[arg(long, global = true, value_parser = kebab::<vflprecode::experiment::Precision>)]
    precision: Option<vflprecode::experiment::Precision>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// in-process | unix-socket
    #[arg(long, global = true, value_parser = kebab::<vflprecode::vfl::TransportKind>)]
    transport: Option<vflprecode::vfl::TransportKind>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    val_fraction: Option<f64>,
    /// Vertical and horizontal antenna counts of the BS array.
    #[arg(long, global = true)]
    n_v: Option<usize>,
    #[arg(long, global = true)]
    n_h: Option<usize>,
    #[arg(long, global = true)]
    adapt_epochs: Option<usize>,
    #[arg(long, global = true)]
    wmmse_max_iter: Option<usize>,
    #[arg(long, global = true)]
    wmmse_tol: Option<f64>,
    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,
}

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(IntoDeserializer::<DeError>::into_deserializer(s)).map_err(|e| e.to_string())
}

impl Overrides {
    fn apply(self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident => $($path:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { cfg.$($path).+ = v; })*
            };
        }
        set!(
            schemes => schemes,
            k_list => k_list,
            snr_list => snr_list,
            l_p_list => l_p_list,
            seeds => seeds,
            n_samples => n_samples,
            test_fraction => test_fraction,
            eval_bits => eval_bits,
            h_mvmm => h_mvmm,
            widths => widths,
            precision => precision,
            lr => lr,
            transport => transport,
            threads => threads,
            batch_size => train.batch_size,
            max_epochs => train.max_epochs,
            patience => train.patience,
            val_fraction => train.val_fraction,
            n_v => scene.n_v,
            n_h => scene.n_h,
            adapt_epochs => online.adapt_epochs,
            wmmse_max_iter => wmmse.max_iter,
            wmmse_tol => wmmse.tol,
            output_dir => output_dir,
        );
    }
}

fn load_config(path: Option<&Path>, overrides: Overrides) -> Result<ExperimentConfig, Box<dyn Error>> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn gen_scene(cfg: &ExperimentConfig) -> Result<(), Box<dyn Error>> {
    for &k in &cfg.k_list {
        for &snr_db in &cfg.snr_list {
            for &l_p in &cfg.l_p_list {
                for &seed in &cfg.seeds {
                    let point = SweepPoint { k, snr_db, l_p, seed };
                    let data = PointData::build(cfg, point)?;
                    let dir = cfg.output_dir.join("scenes").join(point.key());
                    fs::create_dir_all(&dir)?;
                    data.dataset.scene.save(&dir.join("scene.toml"))?;
                    let mut w = csv::Writer::from_path(dir.join("samples.csv"))?;
                    w.write_record(["sample", "split", "vehicle", "x", "y", "heading", "los", "gain_db", "bundle_bytes"])?;
                    let split = |i: usize| {
                        if data.test.contains(&i) {
                            "test"
                        } else if data.val.contains(&i) {
                            "val"
                        } else {
                            "fit"
                        }
                    };
                    let mut blocked = 0usize;
                    for (i, s) in data.dataset.samples.iter().enumerate() {
                        for (v, vs) in s.vehicles.iter().enumerate() {
                            let gain: f64 = vs.channel.iter().map(|z| z.norm_sqr()).sum();
                            blocked += (gain == 0.0) as usize;
                            w.write_record([
                                i.to_string(),
                                split(i).to_string(),
                                v.to_string(),
                                vs.state.position[0].to_string(),
                                vs.state.position[1].to_string(),
                                vs.state.orientation.to_string(),
                                vs.has_los.to_string(),
                                (10.0 * gain.log10()).to_string(),
                                vs.bundle.to_bytes().len().to_string(),
                            ])?;
                        }
                    }
                    w.flush()?;
                    println!(
                        "{}: {} samples, {} vehicle slots without a path, written to {}",
                        point.key(),
                        data.dataset.len(),
                        blocked,
                        dir.display()
                    );
                }
            }
        }
    }
    Ok(())
}

fn print_summary(cfg: &ExperimentConfig, rows: &[vflprecode::experiment::MetricsRow]) {
    println!("{:<12} {:>3} {:>6} {:>4} {:>5} {:>10} {:>8} {:>8}", "scheme", "K", "SNR", "L_P", "seeds", "sum rate", "std", "epochs");
    for s in summarize(rows, cfg.eval_bits) {
        println!(
            "{:<12} {:>3} {:>6} {:>4} {:>5} {:>10.4} {:>8.4} {:>8.1}",
            s.scheme, s.k, s.snr_db, s.l_p, s.seeds, s.mean_sum_rate, s.std_sum_rate, s.mean_epochs
        );
    }
    println!("metrics in {}", cfg.output_dir.join("metrics.csv").display());
}

fn main() -> Result<(), Box<dyn Error>> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mut cfg = load_config(cli.config.as_deref(), cli.overrides)?;
    info!("output directory {}", cfg.output_dir.display());
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()?),
        Command::GenScene => gen_scene(&cfg)?,
        Command::Train => {
            let rows = run_experiment(&cfg)?;
            print_summary(&cfg, &rows);
        }
        Command::Baseline => {
            cfg.schemes.retain(|s| !s.is_learned());
            if cfg.schemes.is_empty() {
                return Err("no baseline schemes selected".into());
            }
            let rows = run_experiment(&cfg)?;
            print_summary(&cfg, &rows);
        }
        Command::Eval { bits } => {
            let rows = evaluate_checkpoints(&cfg, bits)?;
            if rows.is_empty() {
                return Err(format!("no completed learned runs under {}", cfg.output_dir.display()).into());
            }
            for r in &rows {
                println!("{:<12} k{} snr{} lp{} seed{}: sum rate {:.4}", r.scheme, r.k, r.snr_db, r.l_p, r.seed, r.sum_rate);
            }
        }
        Command::Online => {
            for (p, c) in run_online(&cfg)? {
                println!(
                    "{}: warm {} epochs (final {:.4}), cold {} epochs (final {:.4})",
                    p.key(),
                    c.warm_epochs,
                    c.warm.final_rate(),
                    c.cold_epochs,
                    c.cold.final_rate()
                );
            }
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
            let rows = accounting_report(&dir)?;
            write_report(&dir, &rows)?;
            println!("{:<12} {:>3} {:>5} {:>7} {:>12} {:>12} {:>12}", "scheme", "K", "seed", "epochs", "VFL nominal", "VFL traced", "CL");
            for r in &rows {
                println!(
                    "{:<12} {:>3} {:>5} {:>7} {:>12} {:>12} {:>12}",
                    r.scheme,
                    r.k,
                    r.seed,
                    r.epochs,
                    format_mb(r.vfl_nominal_bytes),
                    format_mb(r.vfl_trace_bytes),
                    format_mb(r.cl_bytes)
                );
            }
        }
    }
    Ok(())
}
