//! Command-line driver.
//!
//! Every subcommand reads one flat key-value config file, writes a CSV
//! table (17 significant digits, fixed column order) and an optional JSON
//! sidecar with the config echo, seed, truncations and error bounds.
//! Re-running with the same config and seed reproduces the CSV
//! bit-for-bit, independent of the worker count.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical rejection.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::convergence::{epsilon1, sweep, verify_decomposition};
use crate::ensemble::{
    correlation, dilute_correlation, dilute_partition_function, partition_function,
    EnsembleParams, MethodMode, MethodPolicy,
};
use crate::error::{Error, Result};
use crate::geometry::{Configuration, CubePartition, SimBox};
use crate::manybody::ManyBodyFamily;
use crate::potential::{EnergyModel, IdealGas, PairPotential};
use crate::stability::{sample_configs, sample_finite_configs, verify_bound, StabilityKind};

#[derive(Parser)]
#[command(name = "qcgas", version, about = "Continuum gas vs its dilute-cube approximation")]
struct Cli {
    /// Worker threads (default: QCGAS_WORKERS or all cores). Does not
    /// change any numeric output.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interaction characteristics: b(a), lattice attraction sums, the
    /// superstability constants, a* and the attraction budget
    Constants {
        #[arg(long)]
        config: PathBuf,
    },
    /// Randomized falsification of the S/SS/SSS lower bounds
    #[command(name = "check-stability")]
    CheckStability {
        #[arg(long)]
        config: PathBuf,
    },
    /// Partition function Z and its dilute restriction
    Zfun {
        #[arg(long)]
        config: PathBuf,
    },
    /// Correlation functions at a fixed configuration
    Rho {
        #[arg(long)]
        config: PathBuf,
    },
    /// The per-cube multiple-occupancy series
    Epsilon1 {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convergence sweep over a compatible edge sequence
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decomposition-identity check on an enumerable box
    #[command(name = "verify-identity")]
    VerifyIdentity {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Entry point used by the binary and by tests. Returns the process exit
/// code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(std::iter::once("qcgas".to_string()).chain(args)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let workers = cli
        .workers
        .or_else(|| std::env::var("QCGAS_WORKERS").ok().and_then(|v| v.parse().ok()));
    let body = || -> Result<()> {
        let (name, config_path) = match &cli.command {
            Command::Constants { config } => ("constants", config),
            Command::CheckStability { config } => ("check-stability", config),
            Command::Zfun { config } => ("zfun", config),
            Command::Rho { config } => ("rho", config),
            Command::Epsilon1 { config } => ("epsilon1", config),
            Command::Sweep { config } => ("sweep", config),
            Command::VerifyIdentity { config } => ("verify-identity", config),
        };
        dispatch(name, config_path)
    };
    let outcome = match workers {
        Some(n) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot build worker pool: {e}");
                    return 1;
                }
            };
            pool.install(body)
        }
        None => body(),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(name: &str, config_path: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = RunConfig::from_file(config_path)?;
    let table = match name {
        "constants" => cmd_constants(&cfg)?,
        "check-stability" => cmd_check_stability(&cfg)?,
        "zfun" => cmd_zfun(&cfg)?,
        "rho" => cmd_rho(&cfg)?,
        "epsilon1" => cmd_epsilon1(&cfg)?,
        "sweep" => cmd_sweep(&cfg)?,
        "verify-identity" => cmd_verify_identity(&cfg)?,
        other => return Err(Error::invalid(format!("unknown subcommand {other}"))),
    };
    let csv_path = cfg.get("output.csv").map(|s| s.to_string());
    let json_path = cfg.get("output.json").map(|s| s.to_string());
    cfg.ensure_fully_consumed()?;

    let csv = table.to_csv();
    match &csv_path {
        Some(path) => std::fs::write(path, &csv)
            .map_err(|e| Error::invalid(format!("cannot write {path}: {e}")))?,
        None => print!("{csv}"),
    }
    if let Some(path) = &json_path {
        let sidecar = table.sidecar(name, &cfg, csv_path.as_deref(), started.elapsed().as_secs_f64());
        std::fs::write(path, serde_json::to_string_pretty(&sidecar).unwrap())
            .map_err(|e| Error::invalid(format!("cannot write {path}: {e}")))?;
    }
    Ok(())
}

/// One CSV table plus the sidecar metadata collected along the way.
struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
    seed: u64,
    truncations: serde_json::Map<String, serde_json::Value>,
    error_bounds: serde_json::Map<String, serde_json::Value>,
}

impl Table {
    fn new(columns: Vec<&'static str>, seed: u64) -> Self {
        Table {
            columns,
            rows: Vec::new(),
            seed,
            truncations: serde_json::Map::new(),
            error_bounds: serde_json::Map::new(),
        }
    }

    fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    fn sidecar(
        &self,
        subcommand: &str,
        cfg: &RunConfig,
        csv_path: Option<&str>,
        wall_time_s: f64,
    ) -> serde_json::Value {
        let mut config = serde_json::Map::new();
        for (k, v) in cfg.entries() {
            config.insert(k.clone(), serde_json::Value::String(v.clone()));
        }
        serde_json::json!({
            "subcommand": subcommand,
            "config": config,
            "seed": self.seed,
            "truncations": self.truncations,
            "error_bounds": self.error_bounds,
            "columns": self.columns,
            "csv": csv_path,
            "wall_time_s": wall_time_s,
        })
    }
}

/// 17 significant digits; non-finite values print as text.
fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn jnum(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::String(fmt_float(v))
    }
}

/// Everything the ensemble-level subcommands share.
struct Setup {
    sim_box: SimBox,
    model: Arc<dyn EnergyModel>,
    pot: Option<PairPotential>,
    family: Option<ManyBodyFamily>,
    z: f64,
    beta: f64,
    policy: MethodPolicy,
    seed: u64,
    cutoff: usize,
    stability_b: Option<f64>,
}

impl Setup {
    fn params(&self) -> Result<EnsembleParams> {
        // The truncation tails need a valid stability constant B. It is 0
        // for nonnegative interactions; attractive models must declare one.
        let stability_b = match self.stability_b {
            Some(b) => b,
            None => {
                let attractive =
                    self.pot.as_ref().map(|p| p.has_attraction()).unwrap_or(false);
                if attractive {
                    return Err(Error::invalid(
                        "attractive interactions need ensemble.stability_b (a stability \
                         constant B with U >= -B|γ|); derive one with the constants subcommand",
                    ));
                }
                0.0
            }
        };
        EnsembleParams::new(
            self.z,
            self.beta,
            self.sim_box.clone(),
            self.model.clone(),
            stability_b,
        )
    }

    fn eta(&self, cfg: &RunConfig) -> Result<Configuration> {
        match cfg.get_points("eta.points", self.sim_box.dim())? {
            Some(coords) if !coords.is_empty() => {
                Configuration::new(self.sim_box.dim(), coords)
            }
            _ => Ok(Configuration::empty(self.sim_box.dim())),
        }
    }

    fn edges(&self, cfg: &RunConfig) -> Result<Vec<f64>> {
        if let Some(list) = cfg.get_f64_list("grid.a_list")? {
            return Ok(list);
        }
        if let Some(a) = cfg.get_f64("grid.a")? {
            return Ok(vec![a]);
        }
        Ok(Vec::new())
    }
}

fn build_potential(cfg: &RunConfig, dim: usize, kind: &str) -> Result<PairPotential> {
    match kind {
        "inverse_power" => PairPotential::inverse_power(
            dim,
            cfg.require_f64("potential.phi0")?,
            cfg.require_f64("potential.s")?,
        ),
        "hard_core" => PairPotential::hard_core(dim, cfg.require_f64("potential.sigma")?),
        "hard_core_plus_well" => PairPotential::hard_core_plus_well(
            dim,
            cfg.require_f64("potential.sigma")?,
            cfg.require_f64("potential.depth")?,
            cfg.require_f64("potential.range")?,
        ),
        "power_core_exp_tail" => PairPotential::power_core_exp_tail(
            dim,
            cfg.require_f64("potential.phi0")?,
            cfg.require_f64("potential.s")?,
            cfg.require_f64("potential.phi1")?,
            cfg.require_f64("potential.kappa")?,
        ),
        other => Err(Error::invalid(format!(
            "unknown potential.kind {other:?}; expected ideal, inverse_power, hard_core, \
             hard_core_plus_well or power_core_exp_tail"
        ))),
    }
}

fn build_setup(cfg: &RunConfig) -> Result<Setup> {
    let dim = cfg.usize_or("box.dim", 1)?;
    let sides = cfg
        .get_f64_list("box.sides")?
        .unwrap_or_else(|| vec![1.0; dim]);
    if sides.len() != dim {
        return Err(Error::invalid(format!(
            "box.sides lists {} values for dimension {dim}",
            sides.len()
        )));
    }
    let sim_box = SimBox::new(sides)?;

    let kind = cfg.get("potential.kind").unwrap_or("ideal").to_string();
    let family_kind = cfg.get("family.kind").map(|s| s.to_string());
    let (model, pot, family): (Arc<dyn EnergyModel>, _, _) = if kind == "ideal" {
        if family_kind.is_some() {
            return Err(Error::invalid("family.kind needs a two-body potential, not ideal"));
        }
        (Arc::new(IdealGas), None, None)
    } else {
        let pot = build_potential(cfg, dim, &kind)?;
        match family_kind.as_deref() {
            None => (Arc::new(pot.clone()), Some(pot), None),
            Some("pair_only") => {
                let fam = ManyBodyFamily::pair_only(pot.clone())?;
                (Arc::new(fam.clone()), Some(pot), Some(fam))
            }
            Some("pair_plus_triple") => {
                let fam = ManyBodyFamily::pair_plus_triple(
                    pot.clone(),
                    cfg.require_f64("family.triple_strength")?,
                    cfg.require_f64("family.triple_range")?,
                )?;
                (Arc::new(fam.clone()), Some(pot), Some(fam))
            }
            Some(other) => {
                return Err(Error::invalid(format!(
                    "unknown family.kind {other:?}; expected pair_only or pair_plus_triple"
                )))
            }
        }
    };

    let z = cfg.f64_or("ensemble.z", 1.0)?;
    let beta = cfg.f64_or("ensemble.beta", 1.0)?;
    let stability_b = cfg.get_f64("ensemble.stability_b")?;

    let mode = match cfg.get("run.method").unwrap_or("auto") {
        "auto" => MethodMode::Auto,
        "quadrature" => MethodMode::Quadrature,
        "mc" => MethodMode::MonteCarlo,
        other => {
            return Err(Error::invalid(format!(
                "unknown run.method {other:?}; expected auto, quadrature or mc"
            )))
        }
    };
    let n_max = match cfg.get("run.n_max") {
        None | Some("auto") => None,
        Some(s) => Some(s.parse::<usize>().map_err(|_| {
            Error::invalid(format!("run.n_max: {s:?} is not an integer or `auto`"))
        })?),
    };
    let policy = MethodPolicy {
        mode,
        budget: cfg.usize_or("run.budget", 4_000_000)?,
        tolerance: cfg.f64_or("run.tolerance", 1e-8)?,
        n_max,
    };
    Ok(Setup {
        sim_box,
        model,
        pot,
        family,
        z,
        beta,
        policy,
        seed: cfg.u64_or("run.seed", 1)?,
        cutoff: cfg.usize_or("run.cutoff", 64)?,
        stability_b,
    })
}

fn cmd_constants(cfg: &RunConfig) -> Result<Table> {
    let setup = build_setup(cfg)?;
    let edges = setup.edges(cfg)?;
    if edges.is_empty() {
        return Err(Error::invalid("constants needs grid.a or grid.a_list"));
    }
    let eps = cfg.f64_or("run.eps", 0.0)?;
    let delta = cfg.get_f64("run.delta")?;
    let mut table = Table::new(
        vec![
            "a", "b", "upsilon0", "upsilon_eps", "eps", "big_a", "big_b", "m", "a_star",
            "b_delta", "i_bar", "i_bar_err",
        ],
        setup.seed,
    );
    table
        .truncations
        .insert("cutoff".into(), serde_json::json!(setup.cutoff));

    let delta_branch = match (&setup.pot, delta) {
        (Some(pot), Some(d)) => Some(pot.delta_stability(d)?),
        (None, Some(_)) => {
            return Err(Error::invalid("run.delta needs a two-body potential"))
        }
        _ => None,
    };

    for &a in &edges {
        let row = match (&setup.family, &setup.pot) {
            (Some(fam), _) => {
                let c = fam.sss_constants(a, setup.cutoff)?;
                let i_bar = fam.i_bar(a, setup.cutoff)?;
                vec![
                    a,
                    c.b.unwrap_or(f64::NAN),
                    f64::NAN,
                    f64::NAN,
                    eps,
                    c.big_a,
                    c.big_b,
                    c.m as f64,
                    delta_branch.map(|b| b.a_star).unwrap_or(f64::NAN),
                    delta_branch.map(|b| b.b_delta).unwrap_or(f64::NAN),
                    i_bar.value,
                    i_bar.error,
                ]
            }
            (None, Some(pot)) => {
                let b = pot.b_of_a(a)?;
                let u0 = pot.upsilon_eps(a, 0.0, setup.cutoff.max((pot.params().r_attr / a).ceil() as usize + 1))?;
                let ue = if eps == 0.0 {
                    u0.clone()
                } else {
                    pot.upsilon_eps(a, eps, setup.cutoff.max((pot.params().r_attr / a).ceil() as usize + 1))?
                };
                let c = pot.sss_constants(a)?;
                vec![
                    a,
                    b,
                    u0.value + u0.error,
                    ue.value + ue.error,
                    eps,
                    c.big_a,
                    c.big_b,
                    c.m as f64,
                    delta_branch.map(|br| br.a_star).unwrap_or(f64::NAN),
                    delta_branch.map(|br| br.b_delta).unwrap_or(f64::NAN),
                    f64::NAN,
                    f64::NAN,
                ]
            }
            (None, None) => {
                return Err(Error::invalid(
                    "constants needs a two-body potential or family, not ideal",
                ))
            }
        };
        table.rows.push(row);
    }
    Ok(table)
}

fn cmd_check_stability(cfg: &RunConfig) -> Result<Table> {
    let setup = build_setup(cfg)?;
    let kind = StabilityKind::parse(cfg.get("stability.kind").unwrap_or("SSS"))?;
    let a = cfg.require_f64("grid.a")?;
    let samples = cfg.usize_or("run.samples", 10_000)?;
    let max_n = cfg.usize_or("run.max_n", 8)?;
    let finite_only = cfg.get("run.filter_finite").map(|v| v == "true").unwrap_or(false);
    let part = CubePartition::new(setup.sim_box.clone(), a)?;
    let consts = setup.model.edge_constants(a, setup.cutoff)?.constants;
    let configs = if finite_only {
        sample_finite_configs(&setup.sim_box, max_n, samples, setup.seed, setup.model.as_ref())?
    } else {
        sample_configs(&setup.sim_box, max_n, samples, setup.seed)
    };
    let report = verify_bound(setup.model.as_ref(), &consts, kind, Some(&part), &configs)?;
    let mut table = Table::new(
        vec!["a", "big_a", "big_b", "m", "samples", "violations", "worst_margin", "passed"],
        setup.seed,
    );
    table.rows.push(vec![
        a,
        report.big_a,
        report.big_b,
        report.m as f64,
        report.samples as f64,
        report.violations.len() as f64,
        report.worst_margin,
        if report.passed() { 1.0 } else { 0.0 },
    ]);
    table
        .truncations
        .insert("samples".into(), serde_json::json!(samples));
    table.error_bounds.insert(
        "note".into(),
        serde_json::Value::String(report.note.to_string()),
    );
    Ok(table)
}

fn cmd_zfun(cfg: &RunConfig) -> Result<Table> {
    let setup = build_setup(cfg)?;
    let params = setup.params()?;
    let edges = setup.edges(cfg)?;
    let z_full = partition_function(&params, &setup.policy, setup.seed)?;
    let mut table = Table::new(
        vec!["a", "z", "z_err", "zminus", "zminus_err", "ratio", "ratio_err"],
        setup.seed,
    );
    table
        .truncations
        .insert("n_terms".into(), serde_json::json!(z_full.per_n.len()));
    table
        .error_bounds
        .insert("z_tail".into(), jnum(z_full.tail_bound));
    if edges.is_empty() {
        table.rows.push(vec![
            f64::NAN,
            z_full.value,
            z_full.error,
            f64::NAN,
            f64::NAN,
            f64::NAN,
            f64::NAN,
        ]);
        return Ok(table);
    }
    for &a in &edges {
        let part = CubePartition::new(setup.sim_box.clone(), a)?;
        let zm = dilute_partition_function(&params, &part, &setup.policy, setup.seed)?;
        let low = z_full.value - z_full.error;
        if !(low > 0.0) {
            return Err(Error::numerical("Z is not bounded away from zero"));
        }
        let ratio = zm.value / z_full.value;
        let ratio_err = zm.error / low + zm.value * z_full.error / (z_full.value * low);
        table.rows.push(vec![a, z_full.value, z_full.error, zm.value, zm.error, ratio, ratio_err]);
    }
    Ok(table)
}

fn cmd_rho(cfg: &RunConfig) -> Result<Table> {
    let setup = build_setup(cfg)?;
    let params = setup.params()?;
    let eta = setup.eta(cfg)?;
    if eta.is_empty() {
        return Err(Error::invalid("rho needs a nonempty eta.points"));
    }
    let edges = setup.edges(cfg)?;
    let rho = correlation(&params, &eta, &setup.policy, setup.seed)?;
    let mut table = Table::new(
        vec!["a", "rho", "rho_err", "rhominus", "rhominus_err", "absdiff", "absdiff_err"],
        setup.seed,
    );
    table.error_bounds.insert("rho_tail".into(), jnum(rho.tail_bound));
    if edges.is_empty() {
        table.rows.push(vec![
            f64::NAN,
            rho.value,
            rho.error,
            f64::NAN,
            f64::NAN,
            f64::NAN,
            f64::NAN,
        ]);
        return Ok(table);
    }
    for &a in &edges {
        let part = CubePartition::new(setup.sim_box.clone(), a)?;
        let rm = dilute_correlation(&params, &eta, &part, &setup.policy, setup.seed)?;
        table.rows.push(vec![
            a,
            rho.value,
            rho.error,
            rm.value,
            rm.error,
            (rho.value - rm.value).abs(),
            rho.error + rm.error,
        ]);
    }
    Ok(table)
}

fn cmd_epsilon1(cfg: &RunConfig) -> Result<Table> {
    let setup = build_setup(cfg)?;
    let edges = setup.edges(cfg)?;
    if edges.is_empty() {
        return Err(Error::invalid("epsilon1 needs grid.a or grid.a_list"));
    }
    let n_cap = setup.policy.n_max.unwrap_or(32);
    let mut table = Table::new(
        vec!["a", "eps1", "eps1_err", "big_a", "big_b", "upsilon_star"],
        setup.seed,
    );
    for &a in &edges {
        let edge = setup.model.edge_constants(a, setup.cutoff)?;
        let est = epsilon1(
            setup.sim_box.dim(),
            a,
            setup.z,
            setup.beta,
            &edge.constants,
            edge.upsilon_star,
            n_cap,
        )?;
        table.rows.push(vec![
            a,
            est.value,
            est.error,
            edge.constants.big_a,
            edge.constants.big_b,
            edge.upsilon_star,
        ]);
    }
    Ok(table)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Table> {
    let setup = build_setup(cfg)?;
    let params = setup.params()?;
    let eta = setup.eta(cfg)?;
    let edges = setup.edges(cfg)?;
    if edges.len() < 2 {
        return Err(Error::invalid("sweep needs grid.a_list with at least two edges"));
    }
    let result = sweep(&params, &eta, &edges, &setup.policy, setup.seed, setup.cutoff)?;
    let mut table = Table::new(
        vec![
            "a", "Z", "Z_err", "Zminus", "Zminus_err", "ratio", "rho", "rhominus", "absdiff",
            "eps1", "rbound",
        ],
        setup.seed,
    );
    table
        .truncations
        .insert("cutoff".into(), serde_json::json!(setup.cutoff));
    table
        .truncations
        .insert("budget".into(), serde_json::json!(setup.policy.budget));
    for row in &result.rows {
        table.rows.push(vec![
            row.a,
            row.z,
            row.z_err,
            row.z_minus,
            row.z_minus_err,
            row.ratio,
            row.rho,
            row.rho_minus,
            row.abs_diff,
            row.eps1,
            row.remainder_bound,
        ]);
    }
    table.error_bounds.insert(
        "ratio_err_rows".into(),
        serde_json::Value::Array(result.rows.iter().map(|r| jnum(r.ratio_err)).collect()),
    );
    table.error_bounds.insert(
        "absdiff_err_rows".into(),
        serde_json::Value::Array(result.rows.iter().map(|r| jnum(r.abs_diff_err)).collect()),
    );
    Ok(table)
}

fn cmd_verify_identity(cfg: &RunConfig) -> Result<Table> {
    let setup = build_setup(cfg)?;
    let params = setup.params()?;
    let eta = setup.eta(cfg)?;
    let a = cfg.require_f64("grid.a")?;
    let part = CubePartition::new(setup.sim_box.clone(), a)?;
    let n_max = setup.policy.n_max.unwrap_or(4);
    let edge = setup.model.edge_constants(a, setup.cutoff)?;
    let report = verify_decomposition(
        &params,
        &eta,
        &part,
        n_max,
        setup.policy.budget,
        Some((&edge.constants, edge.upsilon_star)),
    )?;
    let mut table = Table::new(
        vec![
            "a", "z", "z_err", "zminus", "zminus_err", "rho", "rhominus", "remainder",
            "remainder_err", "lhs", "rhs", "residual", "combined_err", "rbound", "holds",
        ],
        setup.seed,
    );
    table.truncations.insert("n_max".into(), serde_json::json!(n_max));
    table.rows.push(vec![
        a,
        report.z.0,
        report.z.1,
        report.z_minus.0,
        report.z_minus.1,
        report.rho.0,
        report.rho_minus.0,
        report.remainder.0,
        report.remainder.1,
        report.lhs,
        report.rhs,
        report.residual,
        report.combined_error,
        report.remainder_bound.unwrap_or(f64::NAN),
        if report.holds() { 1.0 } else { 0.0 },
    ]);
    Ok(table)
}
