use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use factor_alloc::experiment::{build_cost, generate_inputs, run_experiment, ExperimentConfig};
use factor_alloc::io::{self, PlanFile, VerificationSummary};
use factor_alloc::verification::{check_balance, check_shift_covariance};
use factor_alloc::{allocate, solve_semicoupling, AllocationOptions, Branch, SolverOptions};

/// Balancing allocations between discretized random measures on a torus.
#[derive(Parser)]
#[command(name = "factor-alloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw ξ and η from a config and write xi.txt and eta.txt.
    Generate(ConfigArgs),
    /// Build ϑ for the configured inputs and write cost.txt.
    Cost(ConfigArgs),
    /// Solve the optimal semicoupling from a source onto a lighter target.
    Solve {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        cost: PathBuf,
        /// Plan file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the allocation and write allocation.txt and report.toml.
    Allocate {
        #[arg(long)]
        xi: PathBuf,
        #[arg(long)]
        eta: PathBuf,
        #[arg(long)]
        cost: PathBuf,
        #[arg(long, default_value = "auto")]
        branch: Branch,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an allocation; the exit code is 0 only if every check passes.
    Verify {
        #[arg(long)]
        xi: PathBuf,
        #[arg(long)]
        eta: PathBuf,
        #[arg(long)]
        allocation: PathBuf,
        /// Enables the shift-covariance check, which reruns the pipeline.
        #[arg(long)]
        cost: Option<PathBuf>,
        #[arg(long, default_value = "auto")]
        branch: Branch,
        #[arg(long, default_value_t = 3)]
        shifts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Added to twice the largest atom mass for the balance budget.
        #[arg(long, default_value_t = 1e-6)]
        slack: f64,
        /// Summary file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate, build the cost, allocate, verify and write all artifacts.
    Run(ConfigArgs),
    /// Print the report and summary of an output directory.
    Report {
        /// Directory written by `run`.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    branch: Option<Branch>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("reading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.resolution {
            cfg.domain.resolution = n;
        }
        if let Some(b) = self.branch {
            cfg.branch = b;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        Ok(cfg)
    }

    fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
        match &cfg.output {
            Some(dir) => Ok(dir),
            None => bail!("no output directory: pass --out or set `output` in the config"),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_summary(summary: &VerificationSummary) {
    for c in &summary.checks {
        println!("{c}");
    }
    for c in &summary.diagnostics {
        println!("advisory {c}");
    }
}

fn status(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.load()?;
            let dir = ConfigArgs::out_dir(&cfg)?;
            let (xi, eta) = generate_inputs(&cfg)?;
            write(&dir.join("xi.txt"), &io::write_measure(&xi))?;
            write(&dir.join("eta.txt"), &io::write_measure(&eta))?;
            println!("xi: {} atoms, mass {}", xi.len(), xi.total_mass());
            println!("eta: {} atoms, mass {}", eta.len(), eta.total_mass());
        }
        Command::Cost(args) => {
            let cfg = args.load()?;
            let dir = ConfigArgs::out_dir(&cfg)?;
            let (xi, eta) = generate_inputs(&cfg)?;
            let (theta, check) = build_cost(&cfg, &xi, &eta)?;
            write(&dir.join("cost.txt"), &io::write_cost(&theta))?;
            if let Some(c) = check {
                println!("{c}");
                return Ok(status(c.passed));
            }
        }
        Command::Solve {
            source,
            target,
            cost,
            out,
        } => {
            let mu = io::read_measure(&source)?;
            let nu = io::read_measure(&target)?;
            let theta = io::read_cost(&cost)?;
            let plan = solve_semicoupling(&mu, &nu, &theta, &SolverOptions::default())?;
            let file = PlanFile::new(
                &plan,
                &source.display().to_string(),
                &target.display().to_string(),
                &cost.display().to_string(),
            );
            write(&out, &io::write_plan(&file))?;
            println!("cost {}", plan.total_cost(&theta));
        }
        Command::Allocate {
            xi,
            eta,
            cost,
            branch,
            out,
        } => {
            let xi = io::read_measure(&xi)?;
            let eta = io::read_measure(&eta)?;
            let theta = io::read_cost(&cost)?;
            let result = allocate(&xi, &eta, &theta, branch, &AllocationOptions::default())?;
            write(&out.join("allocation.txt"), &io::write_allocation(&result.map))?;
            let report = io::write_report(&result.report)?;
            write(&out.join("report.toml"), &report)?;
            print!("{report}");
        }
        Command::Verify {
            xi,
            eta,
            allocation,
            cost,
            branch,
            shifts,
            seed,
            slack,
            out,
        } => {
            let xi = io::read_measure(&xi)?;
            let eta = io::read_measure(&eta)?;
            let map = io::parse_allocation(&read(&allocation)?, xi.clone())?;
            let budget = 2.0 * xi.max_mass().max(eta.max_mass()) + slack;
            let mut checks = vec![check_balance(&xi, &eta, &map, budget)];
            if let Some(cost) = cost {
                let theta = io::read_cost(&cost)?;
                let opts = AllocationOptions {
                    measure_balance: false,
                    ..AllocationOptions::default()
                };
                let pipeline = |a: &_, b: &_| {
                    let o = allocate(a, b, &theta, branch, &opts)?;
                    Ok((o.map, o.report.cost))
                };
                checks.push(check_shift_covariance(pipeline, &xi, &eta, shifts, seed)?);
            }
            let summary = VerificationSummary::new(checks, Vec::new());
            if let Some(out) = out {
                write(&out, &io::write_summary(&summary)?)?;
            }
            print_summary(&summary);
            return Ok(status(summary.passed));
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let outcome = run_experiment(&cfg)?;
            print!("{}", io::write_report(outcome.report())?);
            print_summary(&outcome.summary);
            return Ok(status(outcome.passed()));
        }
        Command::Report { dir } => {
            let report = io::parse_report(&read(&dir.join("report.toml"))?)?;
            let summary = io::parse_summary(&read(&dir.join("summary.toml"))?)?;
            println!("branch             {}", report.branch);
            println!("cost               {}", report.cost);
            println!("mean_cost          {}", report.mean_cost);
            println!("balance_error      {}", report.balance_error);
            println!("max_atom_mass      {}", report.max_atom_mass);
            println!("residual_imbalance {}", report.residual_imbalance);
            println!("split_sources      {}", report.split_sources);
            println!("split_mass         {}", report.split_mass);
            println!("t0                 {}", report.t0);
            print_summary(&summary);
            return Ok(status(summary.passed));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
