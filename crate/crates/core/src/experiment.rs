//! End-to-end experiments driven by a TOML configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, AllocationMap, AllocationOptions, Branch, PipelineOutput, PipelineReport};
use crate::cost::{build_dlvp_cost, certify_finiteness, estimate_tail_masses, ConcaveCost};
use crate::domain::PeriodicDomain;
use crate::error::{Error, Result};
use crate::generators::{coupled_pair, derive_seed, generate, GeneratorSpec};
use crate::io::{self, PlanFile, VerificationSummary};
use crate::measure::DiscreteMeasure;
use crate::solver::{solve_semicoupling, SolverOptions, TransportPlan};
use crate::verification::{
    check_balance, check_cyclical_monotonicity, check_shift_covariance, default_scales, small_sets_diagnostic,
    CheckReport,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub dim: usize,
    pub side: f64,
    pub resolution: usize,
}

impl DomainConfig {
    pub fn build(&self) -> Result<PeriodicDomain> {
        PeriodicDomain::new(self.dim, self.side, self.resolution)
    }
}

/// How `ξ` and `η` are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InputConfig {
    /// Independent draws; `ξ` is rescaled to the mass of `η` when
    /// `match_intensity` is set.
    Independent {
        xi: GeneratorSpec,
        eta: GeneratorSpec,
        #[serde(default = "yes")]
        match_intensity: bool,
    },
    /// Pair with a prescribed common part, see [`coupled_pair`].
    Coupled {
        xi: GeneratorSpec,
        eta: GeneratorSpec,
        common_weight: f64,
    },
}

fn yes() -> bool {
    true
}

/// Where `ϑ` comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CostConfig {
    /// Built from the distance tails of a linear-cost pilot coupling of the
    /// inputs; `bin_width` defaults to the grid pitch.
    DlvpFromTails { bin_width: Option<f64> },
    /// Read from a cost file, relative paths resolved against the config.
    Explicit { path: PathBuf },
    /// Piecewise-linear interpolation of `r^exponent` on `[0, r_max]`.
    Power { exponent: f64, r_max: f64, segments: usize },
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig::DlvpFromTails { bin_width: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    /// Added to `2·max atom mass` for the balance budget.
    pub balance_slack: f64,
    pub num_shifts: usize,
    pub monotonicity_tolerance: f64,
    pub exhaustive_limit: usize,
    pub sampled_pairs: usize,
    pub histogram_bins: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            balance_slack: 1e-6,
            num_shifts: 3,
            monotonicity_tolerance: 1e-9,
            exhaustive_limit: 1000,
            sampled_pairs: 10_000,
            histogram_bins: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub branch: Branch,
    /// Output directory; nothing is written when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub domain: DomainConfig,
    pub inputs: InputConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub checks: CheckConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; relative cost paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        if let CostConfig::Explicit { path: p } = &mut cfg.cost {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}

/// Generated inputs of an experiment.
pub fn generate_inputs(cfg: &ExperimentConfig) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let domain = cfg.domain.build()?;
    match &cfg.inputs {
        InputConfig::Independent {
            xi,
            eta,
            match_intensity,
        } => {
            let x = generate(&xi.with_seed(derive_seed(cfg.seed, 1)), &domain)?;
            let y = generate(&eta.with_seed(derive_seed(cfg.seed, 2)), &domain)?;
            if *match_intensity && x.total_mass() > 0.0 {
                Ok((x.scaled(y.total_mass() / x.total_mass()), y))
            } else {
                Ok((x, y))
            }
        }
        InputConfig::Coupled { xi, eta, common_weight } => coupled_pair(xi, eta, *common_weight, &domain, cfg.seed),
    }
}

/// Plan from the heavier input onto the lighter one.
fn plan_between(
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
    theta: &ConcaveCost,
    opts: &SolverOptions,
) -> Result<TransportPlan> {
    if xi.total_mass() >= eta.total_mass() {
        solve_semicoupling(xi, eta, theta, opts)
    } else {
        solve_semicoupling(eta, xi, theta, opts)
    }
}

/// Cost for the inputs, with a finiteness check when it is built from tails.
pub fn build_cost(
    cfg: &ExperimentConfig,
    xi: &DiscreteMeasure,
    eta: &DiscreteMeasure,
) -> Result<(ConcaveCost, Option<CheckReport>)> {
    match &cfg.cost {
        CostConfig::Explicit { path } => Ok((io::read_cost(path)?, None)),
        CostConfig::Power {
            exponent,
            r_max,
            segments,
        } => Ok((ConcaveCost::power(*exponent, *r_max, *segments)?, None)),
        CostConfig::DlvpFromTails { bin_width } => {
            let domain = xi.domain();
            let pilot = plan_between(xi, eta, &ConcaveCost::linear(), &SolverOptions::default())?;
            let w = bin_width.unwrap_or(domain.pitch());
            let tails = estimate_tail_masses(&[pilot], domain, w)?;
            let built = build_dlvp_cost(&tails);
            let cert = certify_finiteness(&tails, &built.cost);
            let check = CheckReport {
                name: "cost_finiteness".into(),
                passed: cert.is_finite(),
                measured: cert.total(),
                tolerance: f64::INFINITY,
                details: format!(
                    "partial sum {} + tail bound {}{}",
                    cert.partial_sum,
                    cert.tail_bound,
                    if built.degenerate { "; degenerate tails" } else { "" }
                ),
            };
            Ok((built.cost, Some(check)))
        }
    }
}

/// Mass of the displacement lengths `|T(x) − x|` in equal bins on
/// `[0, max_distance]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `lower_edge mass` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# lower_edge mass\n");
        for (k, m) in self.masses.iter().enumerate() {
            out.push_str(&format!("{} {}\n", k as f64 * self.bin_width, m));
        }
        out
    }
}

pub fn emit_histograms(map: &AllocationMap, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let dom = map.source().domain();
    let bin_width = dom.max_distance() / bins as f64;
    let mut masses = vec![0.0; bins];
    for (v, m) in map.displacement_masses() {
        let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let k = ((r / bin_width).floor() as usize).min(bins - 1);
        masses[k] += m;
    }
    Histogram { bin_width, masses }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub xi: DiscreteMeasure,
    pub eta: DiscreteMeasure,
    pub cost: ConcaveCost,
    pub output: PipelineOutput,
    pub summary: VerificationSummary,
    pub histogram: Histogram,
    /// Files written, in writing order.
    pub files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn report(&self) -> &PipelineReport {
        &self.output.report
    }

    pub fn passed(&self) -> bool {
        self.summary.passed
    }
}

/// Generates inputs, builds the cost, runs the pipeline and all checks, and
/// writes every artifact to the output directory if one is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (xi, eta) = generate_inputs(cfg).map_err(|e| e.at_stage("generate"))?;
    let (theta, cost_check) = build_cost(cfg, &xi, &eta).map_err(|e| e.at_stage("cost"))?;
    let opts = AllocationOptions::default();
    let output = allocate(&xi, &eta, &theta, cfg.branch, &opts).map_err(|e| e.at_stage("allocate"))?;
    let plan = plan_between(&xi, &eta, &theta, &opts.solver).map_err(|e| e.at_stage("solve"))?;

    let c = &cfg.checks;
    let mut checks = vec![check_balance(
        &xi,
        &eta,
        &output.map,
        2.0 * output.report.max_atom_mass + c.balance_slack,
    )];
    let branch = output.report.branch;
    let quiet = AllocationOptions {
        measure_balance: false,
        ..opts.clone()
    };
    let pipeline = |a: &DiscreteMeasure, b: &DiscreteMeasure| {
        let o = allocate(a, b, &theta, branch, &quiet)?;
        Ok((o.map, o.report.cost))
    };
    checks.push(
        check_shift_covariance(pipeline, &xi, &eta, c.num_shifts, derive_seed(cfg.seed, 3))
            .map_err(|e| e.at_stage("verify"))?,
    );
    checks.push(check_cyclical_monotonicity(
        &plan,
        &theta,
        c.monotonicity_tolerance,
        c.exhaustive_limit,
        c.sampled_pairs,
        derive_seed(cfg.seed, 4),
    ));
    checks.extend(cost_check);

    let mut diagnostics = Vec::new();
    if xi.domain().dim() >= 2 {
        let scales = default_scales(xi.domain());
        for (name, mu) in [("xi", &xi), ("eta", &eta)] {
            if let Ok(mut r) = small_sets_diagnostic(mu, &scales) {
                r.name = format!("small_sets_{name}");
                diagnostics.push(r);
            }
        }
    }
    let summary = VerificationSummary::new(checks, diagnostics);
    let histogram = emit_histograms(&output.map, c.histogram_bins);

    let mut outcome = ExperimentOutcome {
        xi,
        eta,
        cost: theta,
        output,
        summary,
        histogram,
        files: Vec::new(),
    };
    if let Some(dir) = &cfg.output {
        let (source, target) = if outcome.xi.total_mass() >= outcome.eta.total_mass() {
            ("xi.txt", "eta.txt")
        } else {
            ("eta.txt", "xi.txt")
        };
        let artifacts = [
            ("xi.txt", io::write_measure(&outcome.xi)),
            ("eta.txt", io::write_measure(&outcome.eta)),
            ("cost.txt", io::write_cost(&outcome.cost)),
            (
                "plan.txt",
                io::write_plan(&PlanFile::new(&plan, source, target, "cost.txt")),
            ),
            ("allocation.txt", io::write_allocation(&outcome.output.map)),
            ("report.toml", io::write_report(&outcome.output.report)?),
            ("summary.toml", io::write_summary(&outcome.summary)?),
            ("histogram.txt", outcome.histogram.to_text()),
        ];
        outcome.files = write_artifacts(dir, &artifacts).map_err(|e| e.at_stage("write"))?;
    }
    Ok(outcome)
}

fn write_artifacts(dir: &Path, artifacts: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    artifacts
        .iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            fs::write(&path, text)?;
            Ok(path)
        })
        .collect()
}
