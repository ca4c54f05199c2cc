//! Command-line front end: configure a datum, beta, and branching factor;
//! run solves, boundary traces, DtN sweeps, kernel profiles, comparison
//! sweeps, the growth witness, and the Monte Carlo oracle; emit CSV or JSON.
//!
//! Exit codes: 0 success, 1 precondition violation, 2 invariant failure,
//! 3 tolerance not met.

mod spec;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use std::io::Write;
use std::path::PathBuf;
use tree_harmonic::datum::DatumError;
use tree_harmonic::dirichlet::{
    comparison_check, counterexample_beta0, growth_witness, residual_sweep, solve_characteristic,
    BetaParam, Solution,
};
use tree_harmonic::dtn::{
    fit_log_gap_slope, gamma_kernel_quadrature, gamma_sweep, kernel_finite_integral, kernel_limit,
    lambda_sweep, successor_index_vector, successor_midpoint_offsets, NormalVector,
};
use tree_harmonic::walk::{estimate_u, WalkConfig};
use tree_harmonic::{BoundaryDatum, Branch, Q, QuadConfig, TreeConfig, Value, Vertex};

#[derive(Parser)]
#[command(name = "tree-harmonic", version, about)]
struct Cli {
    /// JSON config file with the same keys as the flags; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solution values and mean-value residuals for every vertex to a depth.
    Solve(Opts),
    /// Convergence of u(x_k) to g along a branch.
    Trace(Opts),
    /// Scaled-gradient sweep with the closed-form target and rate fit.
    Lambda(Opts),
    /// Scaled branch-increment sweep with kernel quadrature and diagnostics.
    Gamma(Opts),
    /// Limit-kernel profile on a t grid along a branch.
    Kernel(Opts),
    /// Comparison-principle sweep for an ordered datum pair.
    Compare(Opts),
    /// The strong-comparison failure at beta = 0 on the 3-branching tree.
    Counterexample(Opts),
    /// Unbounded growth witness for beta in [1/2, 1).
    Growth(Opts),
    /// Monte Carlo estimate against the exact solution.
    Walk(Opts),
    /// Run the built-in invariant suite on a default grid.
    Check(Opts),
}

#[derive(Args, Default, Clone)]
struct Opts {
    /// Branching factor (default 2).
    #[arg(long)]
    m: Option<u32>,
    /// Ancestor weight, an exact fraction like 1/3 (decimals are taken
    /// literally: 0.35 = 35/100).
    #[arg(long)]
    beta: Option<String>,
    /// Boundary datum: one|linear|square|const:q|poly:c0,c1,..|chi:n,j|indicator:lo,hi
    #[arg(long)]
    datum: Option<String>,
    /// Second datum for `compare` (the upper one).
    #[arg(long)]
    datum2: Option<String>,
    /// Branch: a rational point like 1/3, or digits:0.1~0.1
    #[arg(long)]
    branch: Option<String>,
    /// Start vertex digits like 1.0.2 (empty = root).
    #[arg(long)]
    vertex: Option<String>,
    /// Depths: a..b or a,b,c
    #[arg(long)]
    depths: Option<String>,
    /// Weight vector components, comma-separated rationals.
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<String>,
    /// Comparison tolerance (float backend).
    #[arg(long)]
    tol: Option<f64>,
    /// RNG seed for the walk and randomized checks.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo samples.
    #[arg(long)]
    samples: Option<u64>,
    /// Grid points for kernel profiles.
    #[arg(long)]
    grid: Option<u32>,
    /// Steps for the growth witness.
    #[arg(long)]
    steps: Option<u32>,
    /// Growth threshold to report the first exceeding step.
    #[arg(long)]
    threshold: Option<String>,
    /// Initial discrepancy a_1 for the growth witness.
    #[arg(long)]
    seed_a1: Option<String>,
    /// Output file (default stdout).
    #[arg(long)]
    out: Option<String>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
}

/// Fully resolved run configuration; also the config echo in every output.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    command: String,
    m: u32,
    beta: String,
    datum: String,
    datum2: Option<String>,
    branch: Option<String>,
    vertex: String,
    depths: Vec<u32>,
    eta: Option<String>,
    tol: f64,
    seed: u64,
    samples: u64,
    grid: u32,
    steps: u32,
    threshold: Option<String>,
    seed_a1: String,
    format: String,
}

struct CliError {
    code: i32,
    err: anyhow::Error,
}

impl CliError {
    fn invariant(msg: String) -> Self {
        CliError {
            code: 2,
            err: anyhow!(msg),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        // tolerance failures get their own exit code
        let code = if err
            .chain()
            .any(|c| matches!(c.downcast_ref::<DatumError>(), Some(DatumError::Quad(_))))
        {
            3
        } else {
            1
        };
        CliError { code, err }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {:#}", e.err);
            std::process::exit(e.code);
        }
    }
}

fn merge(opts: &Opts, file: &spec::FileConfig, command: &str) -> Resolved {
    Resolved {
        command: command.to_string(),
        m: opts.m.or(file.m).unwrap_or(2),
        beta: opts
            .beta
            .clone()
            .or_else(|| file.beta.clone())
            .unwrap_or_else(|| "1/3".into()),
        datum: opts
            .datum
            .clone()
            .or_else(|| file.datum.clone())
            .unwrap_or_else(|| "linear".into()),
        datum2: opts.datum2.clone().or_else(|| file.datum2.clone()),
        branch: opts.branch.clone().or_else(|| file.branch.clone()),
        vertex: opts.vertex.clone().unwrap_or_default(),
        depths: Vec::new(), // filled below
        eta: opts.eta.clone().or_else(|| file.eta.clone()),
        tol: opts.tol.or(file.tol).unwrap_or(1e-9),
        seed: opts.seed.or(file.seed).unwrap_or(1),
        samples: opts.samples.or(file.samples).unwrap_or(10_000),
        grid: opts.grid.or(file.grid).unwrap_or(64),
        steps: opts.steps.or(file.steps).unwrap_or(40),
        threshold: opts.threshold.clone().or_else(|| file.threshold.clone()),
        seed_a1: opts.seed_a1.clone().unwrap_or_else(|| "1".into()),
        format: opts
            .format
            .clone()
            .or_else(|| file.format.clone())
            .unwrap_or_default(),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file: spec::FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {path:?}"))
                .map_err(CliError::from)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {path:?}"))
                .map_err(CliError::from)?
        }
        None => spec::FileConfig::default(),
    };
    let (name, opts) = match &cli.cmd {
        Cmd::Solve(o) => ("solve", o),
        Cmd::Trace(o) => ("trace", o),
        Cmd::Lambda(o) => ("lambda", o),
        Cmd::Gamma(o) => ("gamma", o),
        Cmd::Kernel(o) => ("kernel", o),
        Cmd::Compare(o) => ("compare", o),
        Cmd::Counterexample(o) => ("counterexample", o),
        Cmd::Growth(o) => ("growth", o),
        Cmd::Walk(o) => ("walk", o),
        Cmd::Check(o) => ("check", o),
    };
    let mut resolved = merge(opts, &file, name);
    let depth_spec = opts.depths.clone().or_else(|| file.depths.clone());
    resolved.depths = match depth_spec {
        Some(s) => spec::parse_depths(&s).map_err(CliError::from)?,
        None => default_depths(name),
    };
    if resolved.format.is_empty() {
        resolved.format = match name {
            "counterexample" | "walk" => "json".into(),
            _ => "csv".into(),
        };
    }

    let mut out: Box<dyn Write> = match opts.out.clone().or_else(|| file.out.clone()) {
        Some(path) => Box::new(
            std::fs::File::create(&path)
                .with_context(|| format!("creating {path}"))
                .map_err(CliError::from)?,
        ),
        None => Box::new(std::io::stdout()),
    };

    match name {
        "solve" => cmd_solve(&resolved, &mut out),
        "trace" => cmd_trace(&resolved, &mut out),
        "lambda" => cmd_lambda(&resolved, &mut out),
        "gamma" => cmd_gamma(&resolved, &mut out),
        "kernel" => cmd_kernel(&resolved, &mut out),
        "compare" => cmd_compare(&resolved, &mut out),
        "counterexample" => cmd_counterexample(&resolved, &mut out),
        "growth" => cmd_growth(&resolved, &mut out),
        "walk" => cmd_walk(&resolved, &mut out),
        "check" => cmd_check(&resolved, &mut out),
        _ => unreachable!(),
    }
}

fn default_depths(command: &str) -> Vec<u32> {
    match command {
        "solve" => (0..=4).collect(),
        "trace" => (1..=20).collect(),
        "lambda" => (2..=14).collect(),
        "gamma" => (1..=16).collect(),
        "walk" => vec![30],
        _ => (1..=8).collect(),
    }
}

fn config_echo(r: &Resolved) -> String {
    serde_json::to_string(r).expect("config serializes")
}

fn write_csv<W: Write + ?Sized>(
    out: &mut W,
    r: &Resolved,
    header: &[&str],
    rows: &[Vec<String>],
    footers: &[String],
) -> Result<(), CliError> {
    let emit = || -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "# config: {}", config_echo(r))?;
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        for f in footers {
            writeln!(w, "# {f}")?;
        }
        Ok(())
    };
    emit().context("writing output").map_err(CliError::from)
}

fn write_json<W: Write + ?Sized>(out: &mut W, value: &serde_json::Value) -> Result<(), CliError> {
    (|| -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "{}", serde_json::to_string_pretty(value)?)
    })()
    .context("writing output")
    .map_err(CliError::from)
}

fn emit_rows<W: Write + ?Sized>(
    out: &mut W,
    r: &Resolved,
    header: &[&str],
    rows: Vec<Vec<String>>,
    footers: Vec<String>,
) -> Result<(), CliError> {
    if r.format == "json" {
        let json_rows: Vec<serde_json::Value> = rows
            .iter()
            .map(|row| {
                let mut obj = serde_json::Map::new();
                for (k, v) in header.iter().zip(row) {
                    obj.insert(k.to_string(), serde_json::Value::String(v.clone()));
                }
                serde_json::Value::Object(obj)
            })
            .collect();
        let value = serde_json::json!({
            "config": serde_json::to_value(r).expect("config"),
            "rows": json_rows,
            "notes": footers,
        });
        write_json(out, &value)
    } else {
        write_csv(out, r, header, &rows, &footers)
    }
}

fn tree(r: &Resolved) -> Result<TreeConfig, CliError> {
    TreeConfig::new(r.m)
        .map_err(|e| anyhow!(e.to_string()))
        .map_err(CliError::from)
}

fn beta_of(r: &Resolved) -> Result<BetaParam, CliError> {
    spec::parse_beta(&r.beta).map_err(CliError::from)
}

fn datum_of(r: &Resolved, config: TreeConfig) -> Result<BoundaryDatum, CliError> {
    spec::parse_datum(&r.datum, config).map_err(CliError::from)
}

fn branch_of(r: &Resolved, config: TreeConfig) -> Result<Branch, CliError> {
    let s = r
        .branch
        .clone()
        .unwrap_or_else(|| "1/3".into());
    spec::parse_branch(&s, config).map_err(CliError::from)
}

fn lib_err<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::from(anyhow::Error::new(e))
}

/// Level-ordered vertices to `depth`, lexicographic within a level.
fn vertices_to_depth(config: TreeConfig, depth: u32) -> Vec<Vertex> {
    let mut all = vec![config.root()];
    let mut level = vec![config.root()];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * config.m() as usize);
        for v in &level {
            next.extend(v.successors());
        }
        all.extend(next.iter().cloned());
        level = next;
    }
    all
}

fn cmd_solve(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let config = tree(r)?;
    let beta = beta_of(r)?;
    let datum = datum_of(r, config)?;
    let depth = *r.depths.iter().max().unwrap_or(&4);
    let header = ["vertex", "level", "value", "residual"];
    let mut rows = Vec::new();
    if datum.is_exact() {
        let sol = Solution::<Q>::solve(datum, beta, config, QuadConfig::default())
            .map_err(lib_err)?;
        for v in vertices_to_depth(config, depth) {
            let value = sol.value(&v).map_err(lib_err)?;
            let res = sol.harmonic_residual(&v).map_err(lib_err)?;
            rows.push(vec![
                v.to_string(),
                v.level().to_string(),
                value.to_string(),
                res.to_string(),
            ]);
        }
    } else {
        let sol = Solution::<f64>::solve(datum, beta, config, QuadConfig::default())
            .map_err(lib_err)?;
        for v in vertices_to_depth(config, depth) {
            let value = sol.value(&v).map_err(lib_err)?;
            let res = sol.harmonic_residual(&v).map_err(lib_err)?;
            rows.push(vec![
                v.to_string(),
                v.level().to_string(),
                value.to_string(),
                res.to_string(),
            ]);
        }
    }
    emit_rows(out, r, &header, rows, Vec::new())
}

fn cmd_trace(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let config = tree(r)?;
    let beta = beta_of(r)?;
    let datum = datum_of(r, config)?;
    let branch = branch_of(r, config)?;
    let header = ["k", "value", "boundary", "gap"];
    let mut rows = Vec::new();
    if datum.is_exact() {
        let sol = Solution::<Q>::solve(datum, beta, config, QuadConfig::default())
            .map_err(lib_err)?;
        for row in sol.boundary_trace(&branch, &r.depths).map_err(lib_err)? {
            rows.push(vec![
                row.depth.to_string(),
                row.value.to_string(),
                row.boundary.to_string(),
                row.gap.to_string(),
            ]);
        }
    } else {
        let sol = Solution::<f64>::solve(datum, beta, config, QuadConfig::default())
            .map_err(lib_err)?;
        for row in sol.boundary_trace(&branch, &r.depths).map_err(lib_err)? {
            rows.push(vec![
                row.depth.to_string(),
                row.value.to_string(),
                row.boundary.to_string(),
                row.gap.to_string(),
            ]);
        }
    }
    emit_rows(out, r, &header, rows, Vec::new())
}

fn eta_of(r: &Resolved, config: TreeConfig) -> Result<NormalVector, CliError> {
    let s = r.eta.clone().ok_or_else(|| {
        CliError::from(anyhow!("--eta is required (comma-separated rationals)"))
    })?;
    let components = spec::parse_eta(&s).map_err(CliError::from)?;
    if components.len() != config.m() as usize {
        return Err(CliError::from(anyhow!(
            "eta has {} components but m = {}",
            components.len(),
            config.m()
        )));
    }
    Ok(NormalVector::new(components))
}

fn opt_str<V: Value>(v: &Option<V>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_lambda(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let config = tree(r)?;
    let beta = beta_of(r)?;
    let datum = datum_of(r, config)?;
    let branch = branch_of(r, config)?;
    let eta = eta_of(r, config)?;
    let header = ["k", "estimate", "target", "gap"];
    let quad = QuadConfig::default();
    let (rows, slope, target) = if datum.is_exact() {
        let sweep = lambda_sweep::<Q>(&datum, &beta, &eta, &branch, &r.depths, &quad)
            .map_err(lib_err)?;
        let rows = sweep
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.depth.to_string(),
                    row.estimate.to_string(),
                    opt_str(&row.target),
                    opt_str(&row.gap),
                ]
            })
            .collect();
        (rows, fit_log_gap_slope(&sweep.rows), opt_str(&sweep.target))
    } else {
        let sweep = lambda_sweep::<f64>(&datum, &beta, &eta, &branch, &r.depths, &quad)
            .map_err(lib_err)?;
        let rows = sweep
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.depth.to_string(),
                    row.estimate.to_string(),
                    opt_str(&row.target),
                    opt_str(&row.gap),
                ]
            })
            .collect();
        (rows, fit_log_gap_slope(&sweep.rows), opt_str(&sweep.target))
    };
    let footers = vec![
        format!("closed_form: {target}"),
        format!(
            "fitted_log_gap_slope: {}",
            slope.map(|s| s.to_string()).unwrap_or_default()
        ),
        format!("midpoint_offsets: {:?}", successor_midpoint_offsets(r.m)
            .iter().map(|x| x.to_string()).collect::<Vec<_>>()),
        format!("index_vector: {:?}", successor_index_vector(r.m)
            .iter().map(|x| x.to_string()).collect::<Vec<_>>()),
    ];
    emit_rows(out, r, &header, rows, footers)
}

fn cmd_gamma(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let config = tree(r)?;
    let beta = beta_of(r)?;
    let datum = datum_of(r, config)?;
    let branch = branch_of(r, config)?;
    let quad = QuadConfig::default();
    let header = ["k", "estimate", "target", "gap", "j1", "j2", "tail"];
    let sweep = gamma_sweep::<Q>(&datum, &beta, &branch, &r.depths, &quad).map_err(lib_err)?;
    let mut rows = Vec::new();
    for row in &sweep.rows {
        let (target, gap, tail) = if sweep.kernel_form_valid {
            let qd = gamma_kernel_quadrature::<Q>(&datum, &beta, &branch, row.depth, &quad)
                .map_err(lib_err)?;
            let gap = Signed::abs(&(row.estimate.clone() - qd.value.clone()));
            (qd.value.to_string(), gap.to_string(), qd.tail_bound.to_string())
        } else {
            (String::new(), String::new(), String::new())
        };
        rows.push(vec![
            row.depth.to_string(),
            row.estimate.to_string(),
            target,
            gap,
            row.j1.to_string(),
            row.j2.to_string(),
            tail,
        ]);
    }
    let footers = vec![format!("kernel_form_valid: {}", sweep.kernel_form_valid)];
    emit_rows(out, r, &header, rows, footers)
}

fn cmd_kernel(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let config = tree(r)?;
    let beta = beta_of(r)?;
    let branch = branch_of(r, config)?;
    let header = ["t", "containment_depth", "kernel"];
    let psi = branch.psi();
    let mut rows = Vec::new();
    for i in 0..=r.grid {
        let t = Q::new(i.into(), r.grid.into());
        if t == psi {
            continue; // singular point of the kernel
        }
        let k = kernel_limit(&branch, &t, &beta).map_err(lib_err)?;
        let depth = branch
            .containment_depth(&t)
            .map(|d| d.to_string())
            .unwrap_or_default();
        rows.push(vec![t.to_string(), depth, k.to_string()]);
    }
    emit_rows(out, r, &header, rows, vec![format!("psi: {psi}")])
}

fn cmd_compare(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let config = tree(r)?;
    let beta = beta_of(r)?;
    let lower = datum_of(r, config)?;
    let upper_spec = r
        .datum2
        .clone()
        .ok_or_else(|| CliError::from(anyhow!("--datum2 is required for compare")))?;
    let upper = spec::parse_datum(&upper_spec, config).map_err(CliError::from)?;
    let depth = *r.depths.iter().max().unwrap_or(&6);
    let header = ["vertex", "u_lower", "u_upper"];
    let quad = QuadConfig::default();
    let (rows, checked) = if lower.is_exact() && upper.is_exact() {
        let report = comparison_check::<Q>(&lower, &upper, &beta, config, depth, &Q::zero(), &quad)
            .map_err(lib_err)?;
        (
            report
                .violations
                .iter()
                .map(|v| {
                    vec![
                        v.vertex.to_string(),
                        v.u_f.to_string(),
                        v.u_g.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
            report.vertices_checked,
        )
    } else {
        let report = comparison_check::<f64>(&lower, &upper, &beta, config, depth, &r.tol, &quad)
            .map_err(lib_err)?;
        (
            report
                .violations
                .iter()
                .map(|v| {
                    vec![
                        v.vertex.to_string(),
                        v.u_f.to_string(),
                        v.u_g.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
            report.vertices_checked,
        )
    };
    let n_violations = rows.len();
    emit_rows(
        out,
        r,
        &header,
        rows,
        vec![format!("vertices_checked: {checked}"), format!("violations: {n_violations}")],
    )?;
    if n_violations > 0 {
        return Err(CliError::invariant(format!(
            "comparison principle violated at {n_violations} vertices"
        )));
    }
    Ok(())
}

fn cmd_counterexample(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let ce = counterexample_beta0();
    let value = serde_json::json!({
        "config": serde_json::to_value(r).expect("config"),
        "m": 3,
        "beta": "0",
        "datum": "indicator:2/3,1",
        "u_root": ce.u_root.to_string(),
        "u_child0": ce.u_child0.to_string(),
        "u_child2": ce.u_child2.to_string(),
        "note": "u vanishes at vertex (0) without vanishing identically: \
                 strong comparison fails at beta = 0",
    });
    if r.format == "csv" {
        let rows = vec![
            vec!["u_root".into(), ce.u_root.to_string()],
            vec!["u_child0".into(), ce.u_child0.to_string()],
            vec!["u_child2".into(), ce.u_child2.to_string()],
        ];
        emit_rows(out, r, &["quantity", "value"], rows, Vec::new())
    } else {
        write_json(out, &value)
    }
}

fn cmd_growth(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let beta = beta_of(r)?;
    let seed = spec::parse_rational(&r.seed_a1).map_err(CliError::from)?;
    let witness = growth_witness(&beta, &seed, r.steps).map_err(lib_err)?;
    let header = ["n", "value", "increment"];
    let mut rows = Vec::new();
    let increments = witness.increments();
    for (n, v) in witness.values.iter().enumerate() {
        let inc = if n == 0 {
            String::new()
        } else {
            increments[n - 1].to_string()
        };
        rows.push(vec![n.to_string(), v.to_string(), inc]);
    }
    let mut footers = vec![format!("p: {}", witness.p())];
    if let Some(thr) = &r.threshold {
        let threshold = spec::parse_rational(thr).map_err(CliError::from)?;
        let (n, v) =
            tree_harmonic::GrowthWitness::first_value_exceeding(&beta, &seed, &threshold)
                .map_err(lib_err)?;
        footers.push(format!("first_exceeding: n={n} value={v}"));
    }
    emit_rows(out, r, &header, rows, footers)
}

fn cmd_walk(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let config = tree(r)?;
    let beta = beta_of(r)?;
    let datum = datum_of(r, config)?;
    let start = Vertex::parse(config, &r.vertex).map_err(lib_err)?;
    let max_depth = *r.depths.iter().max().unwrap_or(&30);
    let wc = WalkConfig::new(beta.clone(), config, max_depth, r.samples, r.seed)
        .map_err(lib_err)?;
    let est = estimate_u(&datum, &wc, &start).map_err(lib_err)?;
    let mut value = serde_json::json!({
        "config": serde_json::to_value(r).expect("config"),
        "mean": est.mean,
        "stderr": est.stderr,
        "bias_bound": est.bias_bound,
        "samples": est.samples,
        "depth": est.depth,
        "seed": est.seed,
    });
    if datum.is_exact() {
        let sol = Solution::<Q>::solve(datum, beta, config, QuadConfig::default())
            .map_err(lib_err)?;
        let exact = sol.value(&start).map_err(lib_err)?;
        let exact_f = exact.approx_f64();
        value["exact"] = serde_json::json!(exact.to_string());
        value["abs_error"] = serde_json::json!((est.mean - exact_f).abs());
    }
    write_json(out, &value)
}

fn cmd_check(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut failures = 0u32;
    let mut push = |name: &str, ok: bool, detail: String| {
        rows.push(vec![
            name.to_string(),
            if ok { "ok".into() } else { "FAIL".into() },
            detail,
        ]);
        if !ok {
            failures += 1;
        }
    };
    let quad = QuadConfig::default();
    let betas: Vec<BetaParam> = [(0i64, 1i64), (1, 10), (1, 3), (9, 20)]
        .iter()
        .map(|&(n, d)| BetaParam::from_ints(n, d).expect("beta"))
        .collect();

    // exact residuals across the default grid
    for m in [2u32, 3] {
        let config = TreeConfig::new(m).expect("m");
        for datum in [
            BoundaryDatum::constant(Q::one()),
            BoundaryDatum::linear(),
            BoundaryDatum::square(),
            BoundaryDatum::indicator_cell(config, 1, 0u32.into()).expect("cell"),
        ] {
            let rep = residual_sweep(config, &datum, &betas, 5).map_err(lib_err)?;
            push(
                &format!("residuals m={m}"),
                rep.nonzero_residuals == 0,
                format!("{} checks", rep.vertices_checked),
            );
        }
    }

    // weight-vector identities
    for m in 2u32..=6 {
        let omega = successor_midpoint_offsets(m);
        let varpi = successor_index_vector(m);
        let ones_ok = omega.iter().sum::<Q>().is_zero();
        // for zero-sum eta: m * <eta, omega> == <eta, varpi>
        let mut id_ok = true;
        for j in 1..m as usize {
            let mut eta = vec![Q::zero(); m as usize];
            eta[0] = -Q::one();
            eta[j] = Q::one();
            let lhs: Q = Q::from_integer(m.into())
                * eta
                    .iter()
                    .zip(&omega)
                    .map(|(a, b)| a * b)
                    .sum::<Q>();
            let rhs: Q = eta.iter().zip(&varpi).map(|(a, b)| a * b).sum();
            id_ok &= lhs == rhs;
        }
        push(
            &format!("weights m={m}"),
            ones_ok && id_ok,
            "orthogonality and scaled identity".into(),
        );
    }

    // kernel mass and successor-difference identity
    let b13 = BetaParam::from_ints(1, 3).expect("beta");
    for m in [2u32, 3] {
        let config = TreeConfig::new(m).expect("m");
        let g = BoundaryDatum::square();
        let sol = Solution::<Q>::solve(g.clone(), b13.clone(), config, quad).map_err(lib_err)?;
        let one = BoundaryDatum::constant(Q::one());
        let mut ok = true;
        for v in vertices_to_depth(config, 3) {
            if v.is_root() {
                continue;
            }
            for j in 0..m {
                let mass: Q =
                    kernel_finite_integral(&one, &v, j, &b13, &quad).map_err(lib_err)?;
                ok &= mass.is_zero();
                let lhs = sol.value(&v.child(j).expect("digit")).map_err(lib_err)?
                    - sol.value(&v).map_err(lib_err)?;
                let integral: Q =
                    kernel_finite_integral(&g, &v, j, &b13, &quad).map_err(lib_err)?;
                let p = b13.p().expect("p");
                ok &= lhs == -(Q::one() - p) * integral;
            }
        }
        push(&format!("kernels m={m}"), ok, "zero mass and difference identity".into());
    }

    // gamma decomposition identity
    {
        let config = TreeConfig::new(2).expect("m");
        let branch = Branch::from_point(&Q::new(1.into(), 3.into()), config).expect("branch");
        let beta = BetaParam::from_ints(2, 5).expect("beta");
        let sweep = gamma_sweep::<Q>(&BoundaryDatum::square(), &beta, &branch, &[1, 3, 5], &quad)
            .map_err(lib_err)?;
        let p = beta.p().expect("p");
        let ok = sweep.rows.iter().all(|row| {
            row.estimate
                == (Q::one() - &p) * (row.bulk.clone() + row.j1.clone() + row.j2.clone())
        });
        push("gamma decomposition", ok, "estimate == (1-p)(bulk+j1+j2)".into());
    }

    // characteristic construction matches the solver
    {
        let config = TreeConfig::new(2).expect("m");
        let c = solve_characteristic(config, 1, &0u32.into(), &b13, 8).map_err(lib_err)?;
        let sol = Solution::<Q>::solve(c.datum(), b13.clone(), config, quad).map_err(lib_err)?;
        let ok = vertices_to_depth(config, 5)
            .iter()
            .all(|v| c.value(v) == sol.value(v).expect("value"));
        push("indicator construction", ok, "normalized w matches the solver".into());
    }

    // quick Monte Carlo consistency
    {
        let config = TreeConfig::new(2).expect("m");
        let wc = WalkConfig::new(
            BetaParam::from_ints(1, 3).expect("beta"),
            config,
            20,
            4000,
            r.seed,
        )
        .map_err(lib_err)?;
        let est = estimate_u(&BoundaryDatum::linear(), &wc, &config.root()).map_err(lib_err)?;
        let ok = (est.mean - 0.5).abs() <= 4.0 * est.stderr + est.bias_bound;
        push(
            "walk oracle",
            ok,
            format!("mean {} stderr {}", est.mean, est.stderr),
        );
    }

    emit_rows(out, r, &["check", "status", "detail"], rows, Vec::new())?;
    if failures > 0 {
        return Err(CliError::invariant(format!("{failures} checks failed")));
    }
    Ok(())
}
