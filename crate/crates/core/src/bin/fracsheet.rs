use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fracsheet::besov::{norm, BesovParams, NormKind};
use fracsheet::config::{hurst_preset, ConvergeConfig, HurstPreset, LemmaConfig};
use fracsheet::experiments::run_convergence;
use fracsheet::generators::{sample_fbs, sample_mbs, sample_wiener, validate_hurst, HurstPair, WienerGrid};
use fracsheet::grid::{make_grid, FieldSample, Seed};
use fracsheet::lemma::{run_default, LemmaId};
use fracsheet::smoothing::{smooth, SmoothingParams};
use fracsheet::Error;

#[derive(Parser)]
#[command(name = "fracsheet", version, about = "Fractional Brownian sheets, smoothing and Besov-type norms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Fbs,
    Mbs,
    Bilinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum HurstArg {
    Constant,
    Bilinear,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a field on a padded grid and write it as CSV.
    Generate {
        #[arg(long, value_enum, default_value = "fbs")]
        field: FieldArg,
        #[arg(long, default_value_t = 0.7)]
        h1: f64,
        #[arg(long, default_value_t = 0.7)]
        h2: f64,
        /// Hurst function preset for mbs.
        #[arg(long, value_enum, default_value = "constant")]
        hurst: HurstArg,
        #[arg(long, default_value_t = 0.55)]
        mu: f64,
        #[arg(long, default_value_t = 0.85)]
        nu: f64,
        #[arg(long, default_value_t = 1.0)]
        t1: f64,
        #[arg(long, default_value_t = 1.0)]
        t2: f64,
        /// Points per axis including both ends.
        #[arg(long, default_value_t = 65)]
        n: usize,
        /// Extra cells past the extent on each axis.
        #[arg(long, default_value_t = 0)]
        pad: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Wiener mesh refinement for mbs.
        #[arg(long, default_value_t = 1)]
        density: usize,
        /// Output CSV, stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Average a field over windows of k cells per axis.
    Smooth {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        k: usize,
        /// Padding cells in the input, defaults to k.
        #[arg(long)]
        pad: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Evaluate the W0 or W1 norm of a field.
    Norm {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        beta1: f64,
        #[arg(long, default_value_t = 0.5)]
        beta2: f64,
        #[arg(long, default_value = "w1")]
        norm: String,
        /// Search stride, exhaustive search chosen by grid size when omitted.
        #[arg(long)]
        stride: Option<usize>,
        /// Padding cells in the input, ignored by the norm.
        #[arg(long, default_value_t = 0)]
        pad: usize,
    },
    /// Run the convergence experiment described by a key=value config file.
    Converge {
        #[arg(long, short)]
        config: PathBuf,
        /// Output directory, overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deterministic quadrature check of one moment bound.
    LemmaCheck {
        #[arg(long, short)]
        lemma: String,
        /// Lattice config file (key=value).
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::Truncation { .. } => 3,
        _ => 2,
    }
}

fn sink(path: Option<&Path>) -> fracsheet::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_field(path: &Path, pad: usize) -> fracsheet::Result<FieldSample> {
    FieldSample::read_csv(BufReader::new(File::open(path)?), pad, pad)
}

fn run(cli: Cli) -> fracsheet::Result<()> {
    match cli.command {
        Command::Generate { field, h1, h2, hurst, mu, nu, t1, t2, n, pad, seed, stream, density, output } => {
            let grid = make_grid(t1, t2, n, n, pad, pad)?;
            let seed = Seed::new(seed, stream);
            let f = match field {
                FieldArg::Fbs => sample_fbs(&grid, HurstPair::new(h1, h2)?, seed)?,
                FieldArg::Bilinear => FieldSample::from_fn(grid, |x, y| x * y)?,
                FieldArg::Mbs => {
                    let preset = match hurst {
                        HurstArg::Constant => HurstPreset::Constant,
                        HurstArg::Bilinear => HurstPreset::Bilinear,
                    };
                    let spec = hurst_preset(preset, (h1, h2), grid.padded_extent(), mu, nu)?;
                    let report = validate_hurst(&spec, &grid)?;
                    if !report.passed() {
                        return Err(Error::InvalidHurst(format!("{} fails validation: {report:?}", spec.label())));
                    }
                    let w = sample_wiener(&WienerGrid::for_grid(&grid, spec.nu, density)?, seed);
                    sample_mbs(&grid, &spec, &w)?
                }
            };
            f.write_csv(sink(output.as_deref())?)
        }
        Command::Smooth { input, k, pad, output } => {
            let f = read_field(&input, pad.unwrap_or(k))?;
            smooth(&f, SmoothingParams::new(k)?)?.write_csv(sink(output.as_deref())?)
        }
        Command::Norm { input, beta1, beta2, norm: kind, stride, pad } => {
            let kind: NormKind = kind.parse()?;
            let mut p = BesovParams::new(beta1, beta2)?;
            if let Some(s) = stride {
                p = p.with_stride(s)?;
            }
            let f = read_field(&input, pad)?;
            let r = norm(&f, &p, kind);
            let g = f.grid();
            println!("norm,value,term1,term2,term3,term4,s1,s2,t1,t2");
            println!(
                "{kind},{},{},{},{},{},{},{},{},{}",
                r.value,
                r.terms[0],
                r.terms[1],
                r.terms[2],
                r.terms[3],
                g.x(r.s.0),
                g.y(r.s.1),
                g.x(r.t.0),
                g.y(r.t.1)
            );
            Ok(())
        }
        Command::Converge { config, out } => {
            let cfg = ConvergeConfig::load(&config)?;
            let (cp, source, grid) = cfg.build()?;
            let out = out.unwrap_or(cfg.out.clone());
            let report = run_convergence(&cp, &source, &grid)?;
            fs::create_dir_all(&out)?;
            report.write_report_csv(BufWriter::new(File::create(out.join("report.csv"))?))?;
            report.write_summary_csv(BufWriter::new(File::create(out.join("summary.csv"))?))?;
            let yes = |b: bool| if b { "yes" } else { "no" };
            println!("wrote {} and {}", out.join("report.csv").display(), out.join("summary.csv").display());
            println!("threshold a = {}", report.threshold);
            println!("medians strictly decreasing: {}", yes(report.medians_strictly_decreasing()));
            println!("exceedance non-increasing to 0: {}", yes(report.exceedance_vanishes()));
            match report.fit.slope {
                Some(s) => println!(
                    "slope {s:.4} vs reference {:.4}: {}",
                    report.fit.reference,
                    yes(report.fit.passed())
                ),
                None => println!("slope undefined (non-positive medians)"),
            }
            println!("rate ratio peaks within first two levels: {}", yes(report.rate_bounded_within(2)));
            Ok(())
        }
        Command::LemmaCheck { lemma, config, output } => {
            let id: LemmaId = lemma.parse()?;
            let cfg = match config {
                Some(p) => LemmaConfig::load(&p)?,
                None => LemmaConfig::default(),
            };
            let report = run_default(id, &cfg.lattice, cfg.seed())?;
            report.write_csv(sink(output.as_deref())?)?;
            eprintln!(
                "{id}: max ratio {} (refined {}), change {:.2e}, excluded {}, {}",
                report.max_ratio,
                report.refined_max_ratio,
                report.relative_change(),
                report.excluded,
                if report.passed() { "pass" } else { "fail" }
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
