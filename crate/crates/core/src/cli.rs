//! Batch front end behind the `degma` binary: command line, the TOML run
//! configuration, artifact writing and the run manifest.
//!
//! Exit codes: 0 on success, 2 when a mathematical verification fails
//! (including a continuation that stops short of `t = 1`), 1 on usage,
//! configuration and I/O errors.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::continuation::{build_supersolution, run_continuation, ContinuationConfig, SupersolutionConfig};
use crate::diagnostics::{
    build_patches, classify, estimate_suite, hodograph_suite, linearization_consistency, operator_p,
    random_direction, DiagnosticsOptions, EstimateReport, SolutionClass,
};
use crate::error::{Error, Result};
use crate::grid::{BoundaryData, ConvexDomain, NodeKind};
use crate::numerics::thread_count;
use crate::radial::solve_radial;
use crate::solver::{free_boundary_relation, solve_ma_fn, PressureSolution, SolveConfig};
use crate::ExponentPack;

pub const CONFIG_SCHEMA: &str = "degma.run/1";
pub const MANIFEST_SCHEMA: &str = "degma.manifest/1";

/// Relative tolerance of the identity checks in `diagnose`.
pub const IDENTITY_TOL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Radial,
    Solve,
    Continuation,
    Diagnose,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Radial => "radial",
            Command::Solve => "solve",
            Command::Continuation => "continuation",
            Command::Diagnose => "diagnose",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Disk {
        #[serde(default)]
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        #[serde(default)]
        center: [f64; 2],
        radii: [f64; 2],
    },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl DomainSpec {
    pub fn build(&self) -> Result<ConvexDomain> {
        match self {
            DomainSpec::Disk { center, radius } => ConvexDomain::disk(*center, *radius),
            DomainSpec::Ellipse { center, radii } => ConvexDomain::ellipse(*center, radii[0], radii[1]),
            DomainSpec::Polygon { vertices } => ConvexDomain::polygon(vertices.clone()),
        }
    }
}

/// Dirichlet data of the density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Constant { value: f64 },
    /// Trace of the radial profile with interface radius `rho` and forcing
    /// `h0`, evaluated at `|P|` on the boundary.
    RadialOracle {
        #[serde(default = "default_samples")]
        samples: usize,
    },
    /// `[s, value]` rows over the boundary parameter `s` in `[0, 1)`.
    Table { table: Vec<[f64; 2]> },
}

fn default_samples() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialSection {
    /// Outer radius of the integration; defaults to the domain's largest
    /// distance from the origin.
    pub outer_radius: Option<f64>,
    pub tol: f64,
}

impl Default for RadialSection {
    fn default() -> Self {
        Self {
            outer_radius: None,
            tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSection {
    pub delta0: f64,
    pub delta_min: f64,
    pub max_degradation: f64,
    pub comparison_tol: f64,
    pub checkpoints: Vec<f64>,
}

impl Default for ContinuationSection {
    fn default() -> Self {
        let c = ContinuationConfig::default();
        Self {
            delta0: c.delta0,
            delta_min: c.delta_min,
            max_degradation: c.max_degradation,
            comparison_tol: c.comparison_tol,
            checkpoints: c.checkpoints,
        }
    }
}

/// Versioned run configuration. Every field has a default; the defaults
/// describe the standard disk problem `p = 1`, radius 2, boundary data from
/// the radial profile with interface radius 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub command: Option<Command>,
    pub p: f64,
    /// Interface radius of the radial profile (radial command and the
    /// radial boundary trace).
    pub rho: f64,
    /// Constant forcing for `radial`, `solve` and `diagnose`.
    pub h0: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub domain: DomainSpec,
    pub boundary: BoundarySpec,
    pub solver: SolveConfig,
    pub radial: RadialSection,
    pub supersolution: SupersolutionConfig,
    pub continuation: ContinuationSection,
    pub diagnostics: DiagnosticsOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            command: None,
            p: 1.0,
            rho: 1.0,
            h0: 1.0,
            seed: 0,
            out: None,
            domain: DomainSpec::Disk {
                center: [0.0, 0.0],
                radius: 2.0,
            },
            boundary: BoundarySpec::RadialOracle {
                samples: default_samples(),
            },
            solver: SolveConfig::default(),
            radial: RadialSection::default(),
            supersolution: SupersolutionConfig::default(),
            continuation: ContinuationSection::default(),
            diagnostics: DiagnosticsOptions {
                eta: Some(0.3),
                ..DiagnosticsOptions::default()
            },
        }
    }
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into());
            config_err(&field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(&path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(config_err("schema", format!("expected `{CONFIG_SCHEMA}`, got `{}`", self.schema)));
        }
        if !(self.p > 0.0 && self.p < 2.0) {
            return Err(config_err("p", "must satisfy 0 < p < 2"));
        }
        if !(self.rho > 0.0) {
            return Err(config_err("rho", "must be positive"));
        }
        if !(self.h0 > 0.0) {
            return Err(config_err("h0", "must be positive"));
        }
        if self.solver.n < crate::grid::MIN_NODES {
            return Err(config_err("solver.n", format!("must be at least {}", crate::grid::MIN_NODES)));
        }
        self.solver.validate().map_err(|e| config_err("solver", e.to_string()))?;
        self.continuation_config()
            .validate()
            .map_err(|e| config_err("continuation", e.to_string()))?;
        self.domain.build().map_err(|e| config_err("domain", e.to_string()))?;
        Ok(())
    }

    pub fn continuation_config(&self) -> ContinuationConfig {
        ContinuationConfig {
            delta0: self.continuation.delta0,
            delta_min: self.continuation.delta_min,
            max_degradation: self.continuation.max_degradation,
            comparison_tol: self.continuation.comparison_tol,
            checkpoints: self.continuation.checkpoints.clone(),
            solver: self.solver.clone(),
            diagnostics: self.diagnostics_options(),
        }
    }

    pub fn diagnostics_options(&self) -> DiagnosticsOptions {
        DiagnosticsOptions {
            seed: self.seed,
            ..self.diagnostics.clone()
        }
    }

    fn boundary_data(&self, domain: &ConvexDomain) -> Result<BoundaryData> {
        match &self.boundary {
            BoundarySpec::Constant { value } => BoundaryData::constant(domain, *value),
            BoundarySpec::Table { table } => {
                BoundaryData::from_table(domain, table.iter().map(|r| (r[0], r[1])).collect())
            }
            BoundarySpec::RadialOracle { samples } => {
                let outer = self.radial_outer(domain);
                let profile = solve_radial(self.p, self.rho, self.h0, outer, self.radial.tol)?;
                BoundaryData::sampled(domain, *samples, |p| profile.eval(p[0].hypot(p[1])).0)
            }
        }
    }

    fn radial_outer(&self, domain: &ConvexDomain) -> f64 {
        self.radial.outer_radius.unwrap_or_else(|| domain.max_radius())
    }
}

#[derive(Debug, Parser)]
#[command(name = "degma", version, about = "Degenerate Monge-Ampere free-boundary solver and verifier")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default `degma-out/<command>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Disk radius (also the radial integration radius).
    #[arg(long = "R", id = "radius")]
    pub radius: Option<f64>,
    #[arg(long)]
    pub h0: Option<f64>,
    /// Grid nodes per axis.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta0: Option<f64>,
    /// Hodograph patch half-width.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

impl Cli {
    /// Loads the configuration file (if any) and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.command = Some(self.command);
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(r) = self.radius {
            match &mut cfg.domain {
                DomainSpec::Disk { radius, .. } => *radius = r,
                _ => return Err(config_err("R", "only applies to disk domains")),
            }
            cfg.radial.outer_radius = Some(r);
        }
        if let Some(v) = self.h0 {
            cfg.h0 = v;
        }
        if let Some(v) = self.n {
            cfg.solver.n = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.delta0 {
            cfg.continuation.delta0 = v;
        }
        if let Some(v) = self.eta {
            cfg.diagnostics.eta = Some(v);
        }
        if let Some(v) = self.tol {
            cfg.solver.tol = v;
        }
        if let Some(v) = self.max_sweeps {
            cfg.solver.max_sweeps = v;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: &'static str,
    version: &'static str,
    command: &'static str,
    exit_code: i32,
    status: &'a str,
    config_sha256: String,
    files: &'a [ManifestEntry],
}

/// Writes artifacts into one directory and records their hashes.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Artifacts {
    /// Creates the directory and checks that it is writable.
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let probe = dir.join(".degma-write-probe");
        std::fs::write(&probe, b"")?;
        std::fs::remove_file(&probe)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(self, command: Command, cfg_text: &str, exit_code: i32, status: &str) -> Result<PathBuf> {
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            version: env!("CARGO_PKG_VERSION"),
            command: command.name(),
            exit_code,
            status,
            config_sha256: hex::encode(Sha256::digest(cfg_text.as_bytes())),
            files: &self.files,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Result of a command: exit code and a one-line status.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub exit_code: i32,
    pub status: String,
}

impl Outcome {
    fn ok(status: impl Into<String>) -> Self {
        Self {
            exit_code: 0,
            status: status.into(),
        }
    }

    fn verification_failed(status: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            status: status.into(),
        }
    }

    fn from_checks(what: &str, failures: Vec<String>) -> Self {
        if failures.is_empty() {
            Self::ok(format!("{what}: all checks passed"))
        } else {
            Self::verification_failed(format!("{what}: {}", failures.join("; ")))
        }
    }
}

/// Whether an error is a usage/operational error (exit 1) rather than a
/// mathematical failure (exit 2).
pub fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config { .. }
            | Error::InvalidParameter { .. }
            | Error::GridTooSmall { .. }
            | Error::DegenerateDomain(_)
            | Error::NotConvex { .. }
            | Error::NonPositiveBoundary { .. }
            | Error::ShapeMismatch
            | Error::Io(_)
            | Error::Json(_)
    )
}

/// Runs a resolved configuration, writing artifacts and the manifest.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let command = cfg.command.ok_or_else(|| config_err("command", "missing"))?;
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("degma-out").join(command.name()));
    let mut art = Artifacts::create(&out)?;
    // The echo omits the output directory so that identical runs into
    // different directories produce identical manifests.
    let cfg_text = RunConfig {
        out: None,
        ..cfg.clone()
    }
    .to_toml()?;
    art.write("config.toml", cfg_text.as_bytes())?;
    let result = match command {
        Command::Radial => run_radial(cfg, &mut art),
        Command::Solve => run_solve(cfg, &mut art),
        Command::Continuation => run_continuation_cmd(cfg, &mut art),
        Command::Diagnose => run_diagnose(cfg, &mut art),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) if is_usage_error(&e) => {
            art.finish(command, &cfg_text, 1, &e.to_string())?;
            return Err(e);
        }
        Err(e) => Outcome::verification_failed(e.to_string()),
    };
    art.finish(command, &cfg_text, outcome.exit_code, &outcome.status)?;
    Ok(outcome)
}

fn run_radial(cfg: &RunConfig, art: &mut Artifacts) -> Result<Outcome> {
    let domain = cfg.domain.build()?;
    let outer = cfg.radial_outer(&domain);
    let sol = solve_radial(cfg.p, cfg.rho, cfg.h0, outer, cfg.radial.tol)?;
    let summary = sol.summary();
    art.write_with("profile.csv", |w| sol.write_csv(w))?;
    art.json("summary.json", &summary)?;
    art.write_with("plot/radial_profile.dat", |w| {
        writeln!(w, "# r f g")?;
        for i in 0..sol.r.len() {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", sol.r[i], sol.f[i], sol.g[i])?;
        }
        Ok(())
    })?;
    let mut failures = Vec::new();
    let slope_err = (summary.gprime / summary.gprime_closed_form - 1.0).abs();
    if slope_err > 0.01 {
        failures.push(format!("interface slope off the closed form by {:.3}%", 100.0 * slope_err));
    }
    let fit_err = (summary.fit_slope / summary.q - 1.0).abs();
    if fit_err > 0.02 {
        failures.push(format!("log-log exponent off q by {:.3}%", 100.0 * fit_err));
    }
    Ok(Outcome::from_checks("radial", failures))
}

/// Solves the 2D problem described by `cfg` with constant forcing `h0`.
pub fn solve_standard(cfg: &RunConfig) -> Result<(ConvexDomain, PressureSolution)> {
    let domain = cfg.domain.build()?;
    let boundary = cfg.boundary_data(&domain)?;
    let pack = ExponentPack::new(cfg.p)?;
    let h0 = cfg.h0;
    let sol = solve_ma_fn(&domain, &boundary, &|_| h0, &pack, &cfg.solver, None)?;
    Ok((domain, sol))
}

fn write_solution(art: &mut Artifacts, prefix: &str, sol: &PressureSolution) -> Result<()> {
    art.write_with(&format!("{prefix}solution.csv"), |w| {
        writeln!(w, "x,y,f,g,mask")?;
        for k in 0..sol.f.len() {
            let p = sol.f.point(k);
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                p[0],
                p[1],
                sol.f.values()[k],
                sol.g.values()[k],
                sol.f.kind(k).code()
            )?;
        }
        Ok(())
    })?;
    if let Some(iface) = &sol.interface {
        art.write_with(&format!("{prefix}interface.csv"), |w| iface.write_csv(w))?;
        art.write_with(&format!("{prefix}plot/interface.dat"), |w| {
            writeln!(w, "# x y (closed polyline)")?;
            for v in iface.vertices.iter().chain(iface.vertices.first()) {
                writeln!(w, "{:.16e} {:.16e}", v[0], v[1])?;
            }
            Ok(())
        })?;
    }
    let pg = operator_p(&sol.g, &sol.pack);
    art.write_with(&format!("{prefix}plot/residual.dat"), |w| {
        writeln!(w, "# x y P[g]-h (interior nodes)")?;
        for k in 0..pg.len() {
            if pg.kind(k) == NodeKind::Interior {
                let p = pg.point(k);
                writeln!(w, "{:.16e} {:.16e} {:.16e}", p[0], p[1], pg.values()[k] - sol.h.values()[k])?;
            }
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    report: &'a crate::solver::ConvergenceReport,
    vanishing_nodes: usize,
    interface_vertices: usize,
    interface_mean_radius: Option<f64>,
    free_boundary_sup: Option<f64>,
}

fn solve_summary(sol: &PressureSolution) -> SolveSummary<'_> {
    let iface = sol.interface.as_ref();
    SolveSummary {
        report: &sol.report,
        vanishing_nodes: sol.vanishing_count(),
        interface_vertices: iface.map(|i| i.len()).unwrap_or(0),
        interface_mean_radius: iface.map(|i| i.mean_radius(i.centroid())),
        free_boundary_sup: iface.map(|i| {
            let h = &sol.h;
            free_boundary_relation(i, |p| h.interpolate(p).unwrap_or(f64::NAN), &sol.pack).sup
        }),
    }
}

fn run_solve(cfg: &RunConfig, art: &mut Artifacts) -> Result<Outcome> {
    let (_, sol) = solve_standard(cfg)?;
    write_solution(art, "", &sol)?;
    art.json("convergence.json", &solve_summary(&sol))?;
    let mut failures = Vec::new();
    if !sol.report.converged {
        failures.push(format!("solver stopped after {} sweeps", sol.report.sweeps));
    }
    if sol.interface.is_none() {
        failures.push("no closed interface".to_string());
    }
    Ok(Outcome::from_checks("solve", failures))
}

fn run_continuation_cmd(cfg: &RunConfig, art: &mut Artifacts) -> Result<Outcome> {
    let domain = cfg.domain.build()?;
    let boundary = cfg.boundary_data(&domain)?;
    let pack = ExponentPack::new(cfg.p)?;
    let sup = build_supersolution(&pack, &domain, &boundary, &cfg.supersolution, cfg.solver.n)?;
    art.json(
        "supersolution.json",
        &serde_json::json!({
            "c1": sup.c1,
            "rho": sup.rho,
            "lambda": sup.lambda,
            "ratio_min": sup.ratio_min,
            "ratio_max": sup.ratio_max,
            "matched": sup.matched,
        }),
    )?;
    let mut ccfg = cfg.continuation_config();
    ccfg.diagnostics.threads = thread_count();
    let run = run_continuation(&sup, &domain, &boundary, &ccfg, None)?;
    art.write_with("ledger.jsonl", |w| run.write_ledger(w))?;
    art.write_with("plot/ledger.dat", |w| {
        writeln!(w, "# t residual free_boundary_sup accepted")?;
        for r in &run.ledger {
            writeln!(
                w,
                "{:.16e} {:.16e} {:.16e} {}",
                r.t,
                r.residual,
                r.free_boundary_sup.unwrap_or(f64::NAN),
                u8::from(r.accepted)
            )?;
        }
        Ok(())
    })?;
    for c in &run.checkpoints {
        art.write_with(&format!("checkpoints/f_t{:.6}.csv", c.t), |w| c.f.write_csv(w))?;
    }
    if let Some(last) = run.states.last() {
        write_solution(art, "final/", &last.solution)?;
        art.json("final/report.json", &last.report)?;
    }
    let mut failures = Vec::new();
    match run.reached {
        Some(t) if t >= 1.0 => {}
        Some(t) => failures.push(format!("stopped at t = {t}")),
        None => failures.push("the starting state was rejected".to_string()),
    }
    if run.states.iter().any(|s| !s.flags.all()) {
        failures.push("an accepted state has a failing hypothesis flag".to_string());
    }
    Ok(Outcome::from_checks("continuation", failures))
}

#[derive(Serialize)]
struct LinearizationSummary {
    patch: usize,
    direction: usize,
    defect: Vec<f64>,
    order: f64,
}

fn run_diagnose(cfg: &RunConfig, art: &mut Artifacts) -> Result<Outcome> {
    let (_, sol) = solve_standard(cfg)?;
    let mut opts = cfg.diagnostics_options();
    opts.threads = thread_count();
    write_solution(art, "", &sol)?;
    let report: EstimateReport = estimate_suite(&sol, &opts)?;
    art.write("report.json", format!("{}\n", report.to_json()?).as_bytes())?;

    let class = classify(&sol.g, &sol.h, &sol.pack, IDENTITY_TOL, sol.interface.as_ref())?;
    art.json("classification.json", &class)?;

    let mut failures = Vec::new();
    let mut lin = Vec::new();
    match build_patches(&sol, &opts) {
        Ok(patches) => {
            for (i, patch) in patches.iter().enumerate() {
                art.write_with(&format!("patches/patch_{i}.csv"), |w| patch.write_csv(w))?;
                art.write(&format!("patches/patch_{i}.json"), patch.metadata_json()?.as_bytes())?;
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                    cfg.seed.wrapping_add(1000 * i as u64),
                );
                for d in 0..5 {
                    let dir = random_direction(patch, &mut rng);
                    let chk = linearization_consistency(patch, &sol.pack, &dir, &[1e-3, 1e-4, 1e-5])?;
                    if !(chk.order >= 0.9) {
                        failures.push(format!("patch {i}: linearization order {:.3}", chk.order));
                    }
                    lin.push(LinearizationSummary {
                        patch: i,
                        direction: d,
                        defect: chk.defect,
                        order: chk.order,
                    });
                }
            }
            for r in hodograph_suite(&sol, &patches, &opts) {
                r?;
            }
        }
        Err(e) => failures.push(format!("patch construction: {e}")),
    }
    art.json("linearization.json", &lin)?;

    if report.det_m_identity > IDENTITY_TOL {
        failures.push(format!("det M identity off by {:.2}%", 100.0 * report.det_m_identity));
    }
    for (i, p) in report.patches.iter().enumerate() {
        if p.det_identity > IDENTITY_TOL {
            failures.push(format!("patch {i}: det identity off by {:.2}%", 100.0 * p.det_identity));
        }
        if p.b_identity > IDENTITY_TOL {
            failures.push(format!("patch {i}: b identity off by {:.2}%", 100.0 * p.b_identity));
        }
        if !(p.a_eig.min > 0.0) {
            failures.push(format!("patch {i}: coefficient matrix not positive definite"));
        }
        if !(p.b.min > 0.0) {
            failures.push(format!("patch {i}: b not positive"));
        }
    }
    failures.extend(report.patch_errors.iter().cloned());
    if class.class != SolutionClass::Solution {
        failures.push(format!("classified as {:?}", class.class));
    }
    Ok(Outcome::from_checks("diagnose", failures))
}

/// Entry point of the binary; returns the process exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            println!("{}", outcome.status);
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected_with_their_name() {
        let err = RunConfig::from_toml("schema = \"degma.run/1\"\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = RunConfig::from_toml("[solver]\nn = \"many\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn validation_names_the_field() {
        let cfg = RunConfig {
            p: 2.5,
            ..RunConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("`p`"));
        let mut cfg = RunConfig::default();
        cfg.solver.n = 8;
        assert!(cfg.validate().unwrap_err().to_string().contains("solver.n"));
    }

    #[test]
    fn flags_override_the_file() {
        let cli = Cli::try_parse_from(["degma", "radial", "--p", "0.5", "--R", "3", "--n", "65"]).unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.p, 0.5);
        assert_eq!(cfg.solver.n, 65);
        assert_eq!(cfg.radial.outer_radius, Some(3.0));
        assert!(matches!(cfg.domain, DomainSpec::Disk { radius, .. } if radius == 3.0));
    }
}
