//! Initialization, the time loop and diagnostics output.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::derham::DeRham;
use crate::error::{Error, Result};
use crate::integrators::{step, Operators, SimState, StepStats};
use crate::particles::{initial_magnetic, poisson_electric, sample_weibel_particles, write_snapshot};

/// Column names of `diagnostics.csv`, in order.
pub const COLUMNS: [&str; 16] = [
    "t",
    "kinetic",
    "electric",
    "magnetic",
    "magnetic_1",
    "magnetic_2",
    "magnetic_3",
    "total",
    "gauss_residual",
    "div_b",
    "poynting",
    "n_particles",
    "mass_iterations",
    "schur_iterations",
    "picard_iterations",
    "crossings",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub kinetic: f64,
    pub electric: f64,
    pub magnetic: f64,
    /// `½ b̃_cᵀ (M₂)_cc b̃_c`; cross terms of curved maps are not split.
    pub magnetic_components: [f64; 3],
    pub total: f64,
    /// `‖Gᵀ M₁ ẽ - M_b⁰ ẽ + ρ̃‖∞`.
    pub gauss_residual: f64,
    /// `‖D b̃‖∞`.
    pub div_b: f64,
    /// `ẽᵀ M_b¹ b̃`.
    pub poynting: f64,
    pub n_particles: usize,
    pub stats: StepStats,
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

impl DiagnosticsRow {
    pub fn csv_line(&self) -> String {
        let f = |v: f64| format!("{v:.16e}");
        let s = &self.stats;
        let cols = [
            f(self.t),
            f(self.kinetic),
            f(self.electric),
            f(self.magnetic),
            f(self.magnetic_components[0]),
            f(self.magnetic_components[1]),
            f(self.magnetic_components[2]),
            f(self.total),
            f(self.gauss_residual),
            f(self.div_b),
            f(self.poynting),
            self.n_particles.to_string(),
            s.mass_iterations.to_string(),
            s.schur_iterations.to_string(),
            s.picard_iterations.to_string(),
            s.crossings.to_string(),
        ];
        cols.join(",")
    }
}

pub fn compute_diagnostics(state: &SimState, stats: StepStats) -> Result<DiagnosticsRow> {
    let ops = &state.ops;
    let kinetic = state.species.iter().map(|g| g.kinetic_energy()).sum();
    let electric = ops.m1.energy(&state.e);
    let magnetic = ops.m2.energy(&state.b);
    let mut gauss = ops.seq.grad_t(&ops.m1.apply(&state.e))?;
    let boundary = ops.mb0.matvec(&state.e);
    for ((g, r), m) in gauss.iter_mut().zip(state.charge()).zip(boundary) {
        *g += r - m;
    }
    let mb1b = ops.mb1.matvec(&state.b);
    Ok(DiagnosticsRow {
        t: state.t,
        kinetic,
        electric,
        magnetic,
        magnetic_components: [0, 1, 2].map(|c| ops.m2.component_energy(c, &state.b)),
        total: kinetic + electric + magnetic,
        gauss_residual: max_abs(&gauss),
        div_b: max_abs(&ops.seq.div(&state.b)?),
        poynting: state.e.iter().zip(&mb1b).map(|(a, b)| a * b).sum(),
        n_particles: state.n_particles(),
        stats,
    })
}

/// Assembles the operators, samples the particles and solves for the
/// initial fields.
pub fn initialize(cfg: &RunConfig) -> Result<SimState> {
    let seq = DeRham::new(cfg.degree, cfg.cells, cfg.pec)?;
    let ops = Operators::new(seq, cfg.map, cfg.precond)?;
    let particles = sample_weibel_particles(&ops.map, &cfg.weibel)?;
    let b = initial_magnetic(&ops.seq, &ops.map, &ops.m1, &ops.precond, &cfg.weibel, cfg.poisson_tol)?;
    let e = vec![0.0; ops.seq.dim(1)];
    let mut state = SimState::new(ops, vec![particles], e, b)?;
    let rho = state.charge();
    let (e, rep) = poisson_electric(&state.ops.seq, &state.ops.m1, &rho, cfg.poisson_tol)?;
    if !rep.converged {
        return Err(Error::NoConvergence {
            what: "initial Poisson solve",
            iterations: rep.iterations,
            residual: rep.residual,
        });
    }
    state.e = e;
    Ok(state)
}

/// Runs `cfg` without writing files, calling `observe` after the
/// initialization and after every step.
pub fn simulate<F>(cfg: &RunConfig, mut observe: F) -> Result<SimState>
where
    F: FnMut(usize, &SimState, &DiagnosticsRow) -> Result<()>,
{
    let mut state = initialize(cfg)?;
    observe(0, &state, &compute_diagnostics(&state, StepStats::default())?)?;
    for n in 1..=cfg.n_steps() {
        let stats = step(&mut state, &cfg.step)?;
        state.t = n as f64 * cfg.step.dt;
        let row = compute_diagnostics(&state, stats)?;
        if !row.total.is_finite() {
            return Err(Error::NonFinite("total energy"));
        }
        observe(n, &state, &row)?;
    }
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<DiagnosticsRow>,
    pub out_dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `e` and `b` as two coordinate-format column vectors, each preceded
/// by a `% name` line.
pub fn write_fields<W: Write>(mut w: W, e: &[f64], b: &[f64]) -> io::Result<()> {
    for (name, x) in [("e", e), ("b", b)] {
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        writeln!(w, "% {name}")?;
        writeln!(w, "{} 1 {nnz}", x.len())?;
        for (i, v) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(w, "{i} 0 {v:.17e}")?;
        }
    }
    Ok(())
}

/// Runs `cfg`, writing `diagnostics.csv` row by row plus the optional field
/// dumps and particle snapshots into `cfg.out_dir`. On failure the rows
/// written so far stay on disk.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let csv_path = dir.join("diagnostics.csv");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?);
    writeln!(csv, "{}", COLUMNS.join(",")).map_err(io_err(&csv_path))?;
    let mut rows = Vec::new();
    let result = simulate(cfg, |n, state, row| {
        writeln!(csv, "{}", row.csv_line()).map_err(io_err(&csv_path))?;
        csv.flush().map_err(io_err(&csv_path))?;
        rows.push(*row);
        if cfg.fields_every > 0 && n % cfg.fields_every == 0 {
            let path = dir.join(format!("fields_{n}.txt"));
            let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            write_fields(&mut f, &state.e, &state.b).map_err(io_err(&path))?;
            f.flush().map_err(io_err(&path))?;
        }
        if cfg.particles_every > 0 && n % cfg.particles_every == 0 {
            let path = dir.join(format!("particles_{n}.bin"));
            let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            write_snapshot(&mut f, &state.species[0], cfg.weibel.seed, state.t).map_err(io_err(&path))?;
            f.flush().map_err(io_err(&path))?;
        }
        Ok(())
    });
    csv.flush().map_err(io_err(&csv_path))?;
    result?;
    Ok(RunSummary { rows, out_dir: dir })
}
