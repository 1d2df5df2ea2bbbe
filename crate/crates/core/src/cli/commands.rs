use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Scenario, SCHEMA_VERSION};
use super::plot::{emit_plot_data, write_transects, PlotSource, Transect};
use super::CliError;
use crate::branching::{
    feller_check, phi_eval, simulate_coupled_branching, stable_tail_constant, BranchingMechanism, FellerReport,
};
use crate::geometry::{theorem_cones, ConeInterval};
use crate::pde::{
    assemble_operator, refine_mesh, solve_semilinear, OutputSchedule, ScalarField, SolverConfig, Trajectory, TriMesh,
};
use crate::reflected_motion::{coupling_monitors, simulate_coupled_batch, BatchCouplingReport};
use crate::rng::{derive_seed, RngStream};
use crate::verify::{
    check_cone, check_duality, check_monotone_along_lines, check_pathwise_domination, check_phi_hypothesis,
    ConeReport, DominationReport, DualityReport, DualitySetup, MonotoneReport, TheoremParams,
};

/// Seed labels of the randomized commands.
const LABEL_COUPLE: u64 = 1;
const LABEL_BRANCH: u64 = 2;
const LABEL_DUALITY: u64 = 3;
const LABEL_CALIBRATE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Couple,
    Branch,
    Duality,
    Cone,
    Calibrate,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Couple => "couple",
            Self::Branch => "branch",
            Self::Duality => "duality",
            Self::Cone => "cone",
            Self::Calibrate => "calibrate",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub command: &'static str,
    pub pass: bool,
    pub report_path: PathBuf,
}

pub struct Context<'a> {
    pub scenario: &'a Scenario,
    pub out: &'a Path,
    pub verbose: bool,
}

impl Context<'_> {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[hotspots] {}", msg.as_ref());
        }
    }

    fn write_report<T: Serialize>(&self, command: &'static str, pass: bool, report: &T) -> Result<Outcome, CliError> {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "seed": self.scenario.seed,
            "pass": pass,
            "report": report,
        });
        let path = self.out.join(format!("{command}_report.json"));
        let text = serde_json::to_string_pretty(&body).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(Outcome { command, pass, report_path: path })
    }

    fn theorem_params(&self) -> TheoremParams {
        let s = self.scenario;
        TheoremParams { a: s.domain.a, b: s.domain.b, c: s.theorem.c, d: s.theorem.d }
    }

    fn cones(&self) -> Result<(ConeInterval, ConeInterval), CliError> {
        let p = self.theorem_params();
        Ok(theorem_cones(p.a, p.b, p.c, p.d)?)
    }

    fn mesh(&self) -> Result<Arc<TriMesh>, CliError> {
        Ok(Arc::new(refine_mesh(&self.scenario.build_domain()?, self.scenario.mesh.level)?))
    }

    fn initial_field(&self, mesh: &Arc<TriMesh>) -> ScalarField {
        let phi = &self.scenario.initial_data;
        ScalarField::from_fn(mesh.clone(), |p| phi.eval(p), 0.0)
    }

    fn solve(&self, mesh: &Arc<TriMesh>, cfg: &SolverConfig) -> Result<Trajectory, CliError> {
        self.note(format!("solving on {} nodes, dt = {}, t_end = {}", mesh.n_nodes(), cfg.dt, cfg.t_end));
        Ok(solve_semilinear(mesh, &self.initial_field(mesh), &self.scenario.mechanism, cfg)?)
    }

    /// Gradient hypothesis on the initial data; failure is a configuration error.
    fn check_hypothesis(&self) -> Result<(), CliError> {
        let p = self.theorem_params();
        let phi = &self.scenario.initial_data;
        check_phi_hypothesis(&self.scenario.build_domain()?, |x| phi.eval(x), p.c, p.d, 200, self.scenario.seed)
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn run_command(ctx: &Context, command: Command) -> Result<Vec<Outcome>, CliError> {
    fs::create_dir_all(ctx.out).map_err(|e| CliError::io(ctx.out, e))?;
    let single = |o: Outcome| Ok(vec![o]);
    match command {
        Command::Solve => single(solve(ctx)?),
        Command::Couple => single(couple(ctx)?),
        Command::Branch => single(branch(ctx)?),
        Command::Duality => single(duality(ctx)?),
        Command::Cone => single(cone(ctx)?),
        Command::Calibrate => single(calibrate(ctx)?),
        Command::All => {
            let mut outcomes = Vec::new();
            for c in [Command::Solve, Command::Couple, Command::Branch, Command::Duality, Command::Cone, Command::Calibrate] {
                ctx.note(format!("running {}", c.name()));
                outcomes.extend(run_command(ctx, c)?);
            }
            let summary: Vec<Value> =
                outcomes.iter().map(|o| json!({ "command": o.command, "pass": o.pass })).collect();
            let pass = outcomes.iter().all(|o| o.pass);
            outcomes.push(ctx.write_report("all", pass, &summary)?);
            Ok(outcomes)
        }
    }
}

#[derive(Debug, Serialize)]
struct FieldSummary {
    t: f64,
    file: String,
    min: f64,
    max: f64,
    mass: f64,
}

#[derive(Debug, Serialize)]
struct SolveReport {
    refinement_level: u32,
    n_nodes: usize,
    n_elements: usize,
    h: f64,
    dt_max_explicit: f64,
    solver: SolverConfig,
    fields: Vec<FieldSummary>,
    transects: Vec<Transect>,
    min_value: f64,
}

fn solve(ctx: &Context) -> Result<Outcome, CliError> {
    let mesh = ctx.mesh()?;
    let op = assemble_operator(&mesh)?;
    let traj = ctx.solve(&mesh, &ctx.scenario.solver)?;
    let out = ctx.out;
    let create = |name: &str| {
        let path = out.join(name);
        File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))
    };
    mesh.write_nodes_csv(create("mesh_nodes.csv")?).map_err(|e| CliError::io(out, e))?;
    mesh.write_elements_csv(create("mesh_elements.csv")?).map_err(|e| CliError::io(out, e))?;
    let mut fields = Vec::new();
    for (k, f) in traj.fields.iter().enumerate() {
        let file = format!("field_{k:03}.csv");
        f.write_csv(create(&file)?).map_err(|e| CliError::io(out, e))?;
        fields.push(FieldSummary { t: f.time, file, min: f.min(), max: f.max(), mass: op.mass_integral(&f.values) });
    }
    let transects = write_transects(out, traj.last(), &ctx.scenario.plot).map_err(|e| CliError::io(out, e))?;
    let report = SolveReport {
        refinement_level: mesh.refinement_level,
        n_nodes: mesh.n_nodes(),
        n_elements: mesh.n_elements(),
        h: mesh.h,
        dt_max_explicit: op.dt_max,
        solver: ctx.scenario.solver.clone(),
        min_value: fields.iter().map(|f| f.min).fold(f64::INFINITY, f64::min),
        fields,
        transects,
    };
    ctx.write_report("solve", true, &report)
}

#[derive(Debug, Serialize)]
struct CoupleReport {
    line_cone: ConeInterval,
    batch: BatchCouplingReport,
    trace_file: String,
}

fn couple(ctx: &Context) -> Result<Outcome, CliError> {
    let s = ctx.scenario;
    let sim = &s.simulation;
    let domain = s.build_domain()?;
    let (_, line_cone) = ctx.cones()?;
    ctx.note(format!("{} coupled pairs, dt = {}, t_end = {}", sim.n_replicates, sim.dt, sim.t_end));
    let seed = derive_seed(s.seed, LABEL_COUPLE);
    let paths = simulate_coupled_batch(&domain, sim.x, sim.y, sim.dt, sim.t_end, seed, sim.n_replicates)?;
    let reports: Vec<_> = paths.iter().map(|p| coupling_monitors(p, &line_cone)).collect();
    let batch = BatchCouplingReport::from_reports(sim.dt, &reports);
    let trace_file = "coupled_trace_0.csv".to_string();
    let path = ctx.out.join(&trace_file);
    paths[0]
        .write_trace_csv(BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?))
        .map_err(|e| CliError::io(&path, e))?;
    emit_plot_data(PlotSource::Couple(&paths), ctx.out, &s.plot).map_err(|e| CliError::io(ctx.out, e))?;
    let pass = batch.pass;
    ctx.write_report("couple", pass, &CoupleReport { line_cone, batch, trace_file })
}

fn branch(ctx: &Context) -> Result<Outcome, CliError> {
    let s = ctx.scenario;
    let sim = &s.simulation;
    let domain = s.build_domain()?;
    ctx.cones()?;
    ctx.check_hypothesis()?;
    ctx.note(format!("{} coupled branching replicates, N = {}", sim.n_replicates, sim.n_particles));
    let seed = derive_seed(s.seed, LABEL_BRANCH);
    let runs: Vec<_> = (0..sim.n_replicates as u64)
        .into_par_iter()
        .map(|k| {
            simulate_coupled_branching(
                &domain,
                sim.x,
                sim.y,
                &s.mechanism,
                sim.n_particles,
                sim.dt,
                sim.t_end,
                sim.n_outputs,
                &RngStream::new(seed, k),
            )
        })
        .collect::<Result<_, _>>()?;
    let phi = &s.initial_data;
    let mut report: DominationReport =
        check_pathwise_domination(&domain, &runs, |p| phi.eval(p), ctx.theorem_params(), Some(ctx.out))?;
    // keep the report independent of the output location
    report.dump_path = report.dump_path.map(|p| PathBuf::from(p.file_name().unwrap_or_default()));
    let pass = report.pass;
    ctx.write_report("branch", pass, &report)
}

fn duality(ctx: &Context) -> Result<Outcome, CliError> {
    let s = ctx.scenario;
    let sim = &s.simulation;
    if !s.mechanism.is_binary() {
        return Err(CliError::Config("duality needs a mechanism without jump part".into()));
    }
    let domain = s.build_domain()?;
    let mesh = ctx.mesh()?;
    let mut cfg = s.solver.clone();
    cfg.t_end = sim.t_end;
    cfg.outputs = OutputSchedule::Uniform { intervals: 1 };
    let traj = ctx.solve(&mesh, &cfg)?;
    ctx.note(format!("{} duality replicates, N = {}", sim.n_replicates, sim.n_particles));
    let setup = DualitySetup {
        domain: &domain,
        x: sim.x,
        mech: &s.mechanism,
        n_particles: sim.n_particles,
        n_replicates: sim.n_replicates,
        dt: sim.dt,
        t_end: sim.t_end,
        rel_tol: sim.rel_tol,
        seed: derive_seed(s.seed, LABEL_DUALITY),
    };
    let phi = &s.initial_data;
    let report: DualityReport = check_duality(&setup, |p| phi.eval(p), &traj)?;
    let pass = report.pass;
    ctx.write_report("duality", pass, &report)
}

#[derive(Debug, Serialize)]
struct ConeCommandReport {
    refinement_level: u32,
    h: f64,
    line_cone: ConeInterval,
    cone: ConeReport,
    monotone: Vec<MonotoneReport>,
    monotone_pass: bool,
}

fn cone(ctx: &Context) -> Result<Outcome, CliError> {
    let s = ctx.scenario;
    let (gradient_cone, line_cone) = ctx.cones()?;
    ctx.check_hypothesis()?;
    let mesh = ctx.mesh()?;
    let traj = ctx.solve(&mesh, &s.solver)?;
    let slack = s.cone.slack.unwrap_or(2.0 * mesh.h);
    let cone = check_cone(&traj, &gradient_cone, s.cone.min_grad, slack);
    let monotone: Vec<MonotoneReport> = traj
        .fields
        .iter()
        .map(|f| check_monotone_along_lines(f, &line_cone, s.cone.n_lines, s.cone.n_samples))
        .collect();
    let monotone_pass = monotone.iter().all(|m| m.pass);
    emit_plot_data(PlotSource::Cone { trajectory: &traj, min_grad: s.cone.min_grad }, ctx.out, &s.plot)
        .map_err(|e| CliError::io(ctx.out, e))?;
    let pass = cone.pass && monotone_pass;
    let report = ConeCommandReport { refinement_level: mesh.refinement_level, h: mesh.h, line_cone, cone, monotone, monotone_pass };
    ctx.write_report("cone", pass, &report)
}

#[derive(Debug, Serialize)]
struct StableTailCheck {
    beta: f64,
    c1: f64,
    lambda: f64,
    phi: f64,
    expected: f64,
    abs_error: f64,
}

#[derive(Debug, Serialize)]
struct CalibrateReport {
    stable_tail: Vec<StableTailCheck>,
    stable_tail_pass: bool,
    feller: Option<FellerReport>,
}

fn calibrate(ctx: &Context) -> Result<Outcome, CliError> {
    let s = ctx.scenario;
    let c = &s.calibration;
    let mut stable_tail = Vec::new();
    for &beta in &c.betas {
        let c1 = stable_tail_constant(beta)?;
        let mech = BranchingMechanism::stable(beta)?;
        for &lambda in &c.lambdas {
            let phi = phi_eval(&mech, lambda)?;
            let expected = -lambda.powf(1.0 + beta);
            stable_tail.push(StableTailCheck { beta, c1, lambda, phi, expected, abs_error: (phi - expected).abs() });
        }
    }
    let stable_tail_pass = stable_tail.iter().all(|r| r.abs_error <= 1e-6);
    let feller = if s.mechanism.is_binary() {
        ctx.note(format!("Feller check, {} replicates of N = {}", c.n_replicates, c.n_particles));
        Some(feller_check(
            &s.mechanism,
            c.n_particles,
            c.n_replicates,
            c.dt,
            c.t,
            c.lambda,
            derive_seed(s.seed, LABEL_CALIBRATE),
        )?)
    } else {
        None
    };
    let pass = stable_tail_pass && feller.as_ref().is_none_or(|f| f.pass);
    ctx.write_report("calibrate", pass, &CalibrateReport { stable_tail, stable_tail_pass, feller })
}
