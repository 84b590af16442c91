use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ctlin::cfl::SelectScheme;
use ctlin::interp::InterpConfig;
use ctlin::ir::{parse_module, print_module, Module};
use ctlin::pipeline::{cost_report, harden, PipelineConfig};
use ctlin::profiler::{default_suite, input_shape, parse_suite, SuiteSpec};
use ctlin::verifier::{random_inputs, secret_vectors, verify_all, SecretPlan};

#[derive(Parser)]
#[command(name = "ctlin", version, about = "Linearize secret-dependent control and data flow in IR programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Harden a program and report what was transformed.
    Harden {
        input: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Check a hardened program against its original.
    Verify {
        original: PathBuf,
        hardened: PathBuf,
        #[command(flatten)]
        opts: Opts,
        /// Random secret vector pairs to compare.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Random inputs for the equivalence check.
        #[arg(long, default_value_t = 1000)]
        inputs: usize,
        /// Public inputs held fixed while secrets vary (comma separated).
        #[arg(long, value_delimiter = ',')]
        public: Vec<u64>,
    },
    /// Striding cost of a hardened program over the suite.
    Stats {
        hardened: PathBuf,
        /// Original program, for the size ratio.
        #[arg(long)]
        original: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print a bundled example program, or list them.
    Corpus { name: Option<String> },
}

#[derive(Args)]
struct Opts {
    #[arg(long, default_value_t = 64, value_parser = parse_lambda)]
    lambda: u64,
    /// 1 cmov, 2 ternary, 3 negated mask, 4 wide mask, 5 multiply.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..=5))]
    select_scheme: u32,
    /// Profiling inputs, one `pub: ... ; sec: ...` line each.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instruction budget per run.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    skip_cloning: bool,
    #[arg(long)]
    skip_natural_striding: bool,
    #[arg(long)]
    skip_promotion: bool,
    /// Where to write the hardened IR (stdout if absent).
    #[arg(long)]
    emit: Option<PathBuf>,
    /// Where to write the report (stdout if absent).
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_lambda(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(l @ (1 | 4 | 64)) => Ok(l),
        _ => Err("must be 1, 4 or 64".into()),
    }
}

const USAGE: u8 = 2;
const STAGE: u8 = 3;
const VERIFY: u8 = 4;

struct Failure(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(STAGE, e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure(USAGE, e.into())
}

impl Opts {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        let mut c = PipelineConfig {
            lambda: self.lambda,
            scheme: SelectScheme::from_index(self.select_scheme).expect("range checked"),
            seed: self.seed,
            skip_cloning: self.skip_cloning,
            skip_natural: self.skip_natural_striding,
            skip_promotion: self.skip_promotion,
            ..PipelineConfig::default()
        };
        if let Some(b) = self.budget {
            c.budget = b;
        }
        if let Some(p) = &self.suite {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
            c.suite = Some(parse_suite(&text).with_context(|| format!("suite {}", p.display())).map_err(usage)?);
        }
        Ok(c)
    }

    fn write_report(&self, text: &str) -> Result<(), Failure> {
        write_or_print(self.report.as_deref(), text)
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(usage),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Module, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    parse_module(&text).with_context(|| format!("parse: {}", path.display())).map_err(|e| Failure(STAGE, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Harden { input, opts } => {
            let cfg = opts.config()?;
            let m = load(&input)?;
            let h = harden(&m, &cfg)?;
            let ir = print_module(&h.hardened);
            match (&opts.emit, &opts.report) {
                (None, None) => {
                    print!("{ir}");
                    eprint!("{}", h.report.to_text());
                }
                _ => {
                    write_or_print(opts.emit.as_deref(), &ir)?;
                    opts.write_report(&h.report.to_text())?;
                }
            }
            Ok(())
        }
        Cmd::Verify { original, hardened, opts, pairs, inputs, public } => {
            let cfg = opts.config()?;
            let (o, h) = (load(&original)?, load(&hardened)?);
            if o.entry != h.entry {
                return Err(usage(anyhow::anyhow!("entry functions differ: @{} vs @{}", o.entry, h.entry)));
            }
            if input_shape(&o) != input_shape(&h) {
                return Err(usage(anyhow::anyhow!("the two programs take different inputs")));
            }
            let (np, _) = input_shape(&o);
            let public = if public.is_empty() { vec![0; np] } else { public };
            let secrets = secret_vectors(&o, &SecretPlan { pairs, seed: cfg.seed, ..SecretPlan::default() });
            let ins = random_inputs(&o, inputs, 32768, cfg.seed);
            let icfg = InterpConfig { lambda: cfg.lambda, budget: cfg.budget, ..InterpConfig::default() };
            let r = verify_all(&o, &h, &public, &secrets, &ins, &icfg);
            opts.write_report(&r.to_text())?;
            if r.passed() {
                Ok(())
            } else {
                let failed: Vec<_> = r.summary().into_iter().filter(|(_, s)| *s == ctlin::verifier::Status::Fail).map(|(c, _)| c).collect();
                Err(Failure(VERIFY, anyhow::anyhow!("failed: {}", failed.join(", "))))
            }
        }
        Cmd::Stats { hardened, original, opts } => {
            let cfg = opts.config()?;
            let h = load(&hardened)?;
            let o = original.as_deref().map(load).transpose()?;
            let suite = cfg.suite.clone().unwrap_or_else(|| default_suite(&h, &SuiteSpec { seed: cfg.seed, ..SuiteSpec::default() }));
            let icfg = InterpConfig { lambda: cfg.lambda, budget: cfg.budget, ..InterpConfig::default() };
            let r = cost_report(&h, o.as_ref(), &suite, &icfg)?;
            opts.write_report(&r.to_text())
        }
        Cmd::Corpus { name: None } => {
            for (n, _) in ctlin::corpus::ALL {
                println!("{n}");
            }
            Ok(())
        }
        Cmd::Corpus { name: Some(n) } => match ctlin::corpus::get(&n) {
            Some(src) => {
                print!("{src}");
                Ok(())
            }
            None => Err(usage(anyhow::anyhow!("no bundled program `{n}`"))),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
