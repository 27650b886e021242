use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cedar_core::drivers::{DriverOptions, Method};
use cedar_core::harness::{
    aggregate, analyze_csv, read_rows, run_experiment, run_roc_study, run_privacy_grid, summary_csv,
    write_gnuplot, write_rows, write_privacy_grid, AnalysisOptions, ExperimentConfig, PrivacyGrid,
};
use cedar_core::inference::Sided;
use cedar_core::model::{generate_site_data, write_site_csv, GroundTruth};
use cedar_core::posterior::DEFAULT_PSI;
use cedar_core::privacy::{privacy_report, McScenario};
use cedar_core::seed::derive_seed;

#[derive(Parser)]
#[command(name = "cedar", version, about = "One-shot distributed linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Fit,
    Power,
    Roc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alt {
    Two,
    Greater,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated site CSV files.
    Simulate {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        n: usize,
        #[arg(long = "sites", short = 'M')]
        m: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        sigma0_sq: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a method to site CSV files; the first file is the central site.
    Run {
        #[arg(long, default_value = "cedar16")]
        method: String,
        #[arg(long, default_value_t = DEFAULT_PSI)]
        psi: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Alt::Two)]
        alternative: Alt,
        /// Directory for the file-drop exchange.
        #[arg(long)]
        work_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Run a simulation study from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Study::Fit)]
        study: Study,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo privacy accounting.
    Privacy {
        #[arg(long)]
        p: Option<usize>,
        #[arg(long = "k", short = 'K')]
        k: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_PSI)]
        psi: f64,
        /// Leverage values; `n` defaults to `p/c`.
        #[arg(long, value_delimiter = ',')]
        c: Vec<f64>,
        #[arg(long)]
        n: Option<usize>,
        /// Defaults to `1/n`.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long, default_value_t = 8)]
        datasets: usize,
        #[arg(long)]
        seed: u64,
        /// Run the full (p, K, c) grid instead of one (p, K).
        #[arg(long)]
        grid: bool,
        /// JSON grid description; implies --grid.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate result CSV files.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-method plot files into this directory.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate {
            p,
            n,
            m,
            seed,
            sigma0_sq,
            out,
        } => {
            fs::create_dir_all(&out)?;
            let truth = GroundTruth::simulation_design(p, sigma0_sq, derive_seed(seed, &[0]))?;
            for site in 1..=m as u64 {
                let data = generate_site_data(&truth, n, derive_seed(seed, &[1, site]))?
                    .with_site_id(site as u32);
                write_site_csv(out.join(format!("site{site}.csv")), &data)?;
            }
            fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
            println!("wrote {m} site files to {}", out.display());
        }
        Command::Run {
            method,
            psi,
            alpha,
            alternative,
            work_dir,
            seed,
            json,
            files,
        } => {
            let method: Method = method.parse()?;
            let opts = AnalysisOptions {
                method,
                driver: DriverOptions {
                    psi,
                    ..DriverOptions::default()
                },
                alpha,
                sided: match alternative {
                    Alt::Two => Sided::Two,
                    Alt::Greater => Sided::Greater,
                },
                work_dir,
                seed,
            };
            let report = analyze_csv(&files, &opts)?;
            let mut out = io::stdout().lock();
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                writeln!(out, "method {}  p {}  sites {}", report.method, report.p, report.sites.len())?;
                writeln!(out, "{:>4} {:>12} {:>12} {:>10} {:>24}", "j", "estimate", "wald", "p-value", "interval")?;
                for j in 0..report.p {
                    let beta = report.fit.beta[j];
                    match (report.wald.get(j), report.intervals.get(j)) {
                        (Some(w), Some((lo, hi))) => writeln!(
                            out,
                            "{j:>4} {beta:>12.6} {:>12.4} {:>10.4} [{lo:>10.5}, {hi:>10.5}]",
                            w.statistic, w.p_value
                        )?,
                        _ => writeln!(out, "{j:>4} {beta:>12.6}")?,
                    }
                }
                writeln!(
                    out,
                    "rounds {}  bytes {}",
                    report.trace.rounds,
                    report.trace.total_bytes()
                )?;
            }
        }
        Command::Experiment {
            config,
            seed,
            study,
            out,
        } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", config.display()))?;
            cfg.master_seed = seed;
            fs::create_dir_all(&out)?;
            match study {
                Study::Fit | Study::Power => {
                    if matches!(study, Study::Power) && cfg.tests.is_none() {
                        bail!("the power study needs a \"tests\" section in the config");
                    }
                    let rows = run_experiment(&cfg)?;
                    write_rows(&rows, fs::File::create(out.join("results.csv"))?)?;
                    fs::write(out.join("summary.csv"), summary_csv(&rows)?)?;
                    let failed = rows.iter().filter(|r| r.failed.is_some()).count();
                    println!("{} rows ({failed} failed) written to {}", rows.len(), out.display());
                }
                Study::Roc => {
                    let st = run_roc_study(&cfg)?;
                    write_rows(&st.points, fs::File::create(out.join("roc_points.csv"))?)?;
                    write_rows(&st.summary, fs::File::create(out.join("roc_summary.csv"))?)?;
                    for s in &st.summary {
                        println!("{:>10} n={} M={} AUC {:.4} ± {:.4}", s.method, s.n, s.m, s.mean_auc, s.se_auc);
                    }
                }
            }
        }
        Command::Privacy {
            p,
            k,
            psi,
            c,
            n,
            delta,
            reps,
            datasets,
            seed,
            grid,
            config,
        } => {
            if grid || config.is_some() {
                let mut g = match &config {
                    Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
                    None => PrivacyGrid::standard(reps, seed),
                };
                g.seed = seed;
                let rows = run_privacy_grid(&g)?;
                write_rows(&rows, io::stdout().lock())?;
                write_privacy_grid(&rows, io::stderr().lock())?;
            } else {
                let (Some(p), Some(k)) = (p, k) else {
                    bail!("--p and --k are required unless --grid is given");
                };
                if c.is_empty() {
                    bail!("at least one --c value is required");
                }
                let mut w = csv::Writer::from_writer(io::stdout().lock());
                w.write_record(["c", "eps_mc", "eps_forward_mean", "eps_expected"])?;
                for (i, &cv) in c.iter().enumerate() {
                    let mut sc = McScenario::grid_cell(p, k, cv, reps, derive_seed(seed, &[i as u64]));
                    if let Some(n) = n {
                        sc.n = n;
                        sc.delta = 1.0 / n as f64;
                    }
                    if let Some(d) = delta {
                        sc.delta = d;
                    }
                    sc.psi = psi;
                    sc.datasets = datasets;
                    let r = privacy_report(&sc)?;
                    w.write_record([
                        cv.to_string(),
                        r.eps_mc.to_string(),
                        r.eps_forward.to_string(),
                        r.eps_expected.to_string(),
                    ])?;
                }
                w.flush()?;
            }
        }
        Command::Report {
            inputs,
            out,
            gnuplot,
        } => {
            let mut rows = Vec::new();
            for path in &inputs {
                rows.extend(read_rows(path)?);
            }
            let summary = aggregate(&rows);
            match &out {
                Some(path) => write_rows(&summary, fs::File::create(path)?)?,
                None => write_rows(&summary, io::stdout().lock())?,
            }
            if let Some(dir) = gnuplot {
                for f in write_gnuplot(&summary, &dir)? {
                    eprintln!("wrote {}", f.display());
                }
            }
        }
    }
    Ok(())
}
