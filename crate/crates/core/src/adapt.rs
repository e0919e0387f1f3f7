//! Dörfler marking and the solve, estimate, mark, refine loop.

use std::fmt::Write as _;
use std::time::Instant;

use crate::assembly::MethodConfig;
use crate::error::{invalid, Result};
use crate::estimator::{estimate, ElementIndicators};
use crate::mesh::{refine_nvb, refine_uniform, Grid, Triangulation};
use crate::optctrl::{cost, solve_optimality_with, Discretization, OptimalitySolution, ProblemSpec};
use crate::verify::{certify, eoc, error_norms, fitted_rate, Certificate, ErrorRecord, ManufacturedCase, RateBase};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Marking {
    /// Marked triangles in descending indicator order.
    pub marked: Vec<usize>,
    /// Set when every indicator vanishes and there is nothing to refine.
    pub terminal: bool,
}

/// Smallest set whose squared indicators carry a `theta` fraction of the
/// total, chosen greedily by descending value with ties to the lower index.
pub fn doerfler_mark(eta_sq: &[f64], theta: f64) -> Result<Marking> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(invalid(format!("bulk parameter must lie in (0, 1], got {theta}")));
    }
    if let Some(v) = eta_sq.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(invalid(format!("indicators must be finite and nonnegative, found {v}")));
    }
    let total: f64 = eta_sq.iter().sum();
    if total == 0.0 {
        return Ok(Marking {
            marked: Vec::new(),
            terminal: true,
        });
    }
    let mut order: Vec<usize> = (0..eta_sq.len()).collect();
    order.sort_by(|&a, &b| eta_sq[b].total_cmp(&eta_sq[a]).then(a.cmp(&b)));
    let target = theta * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for t in order {
        if acc >= target || eta_sq[t] == 0.0 {
            break;
        }
        acc += eta_sq[t];
        marked.push(t);
    }
    Ok(Marking {
        marked,
        terminal: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    Adaptive,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptParams {
    pub theta: f64,
    /// The loop stops after the first level with at least this many dofs.
    pub max_ndof: usize,
    pub max_levels: usize,
    pub refinement: Refinement,
}

impl Default for AdaptParams {
    fn default() -> Self {
        Self {
            theta: 0.3,
            max_ndof: 100_000,
            max_levels: 60,
            refinement: Refinement::Adaptive,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    /// Velocity, pressure and control unknowns.
    pub ndof: usize,
    pub n_triangles: usize,
    /// Largest triangle diameter.
    pub h: f64,
    pub eta_total: f64,
    pub errors: Option<ErrorRecord>,
    pub certificate: Certificate,
    pub iterations: usize,
    pub cost: f64,
    pub seconds: f64,
}

/// One record per level; `ndof` strictly increases.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceHistory {
    pub levels: Vec<LevelRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Eta,
    ErrUEnergy,
    ErrPL2,
    ErrPhiEnergy,
    ErrRL2,
    ErrY,
    ErrTotal,
}

impl ConvergenceHistory {
    pub fn ndofs(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.ndof as f64).collect()
    }

    pub fn column(&self, col: Column) -> Result<Vec<f64>> {
        self.levels
            .iter()
            .map(|l| {
                if col == Column::Eta {
                    return Ok(l.eta_total);
                }
                let e = l
                    .errors
                    .as_ref()
                    .ok_or_else(|| invalid("history has no error columns"))?;
                Ok(match col {
                    Column::ErrUEnergy => e.u_energy,
                    Column::ErrPL2 => e.p_l2,
                    Column::ErrPhiEnergy => e.phi_energy,
                    Column::ErrRL2 => e.r_l2,
                    Column::ErrY => e.y,
                    Column::ErrTotal => e.total(),
                    Column::Eta => unreachable!(),
                })
            })
            .collect()
    }

    pub fn eoc(&self, col: Column, wrt: RateBase) -> Result<Vec<f64>> {
        eoc(&self.column(col)?, &self.base(wrt), wrt)
    }

    /// Least-squares rate over the last `last` levels.
    pub fn fitted_rate(&self, col: Column, wrt: RateBase, last: usize) -> Result<f64> {
        let v = self.column(col)?;
        let b = self.base(wrt);
        if last < 2 || last > v.len() {
            return Err(invalid(format!("cannot fit {last} of {} levels", v.len())));
        }
        let k = v.len() - last;
        fitted_rate(&v[k..], &b[k..], wrt)
    }

    fn base(&self, wrt: RateBase) -> Vec<f64> {
        match wrt {
            RateBase::MeshSize => self.levels.iter().map(|l| l.h).collect(),
            RateBase::Ndof => self.ndofs(),
        }
    }

    /// `level,Ndof,h,eta_total,err_u_energy,err_p_l2,err_phi_energy,err_r_l2,err_y,cost,seconds`;
    /// error cells are empty without an exact solution and `seconds` is 0
    /// unless `timing`.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s =
            String::from("level,Ndof,h,eta_total,err_u_energy,err_p_l2,err_phi_energy,err_r_l2,err_y,cost,seconds\n");
        for l in &self.levels {
            let _ = write!(s, "{},{},{:.6e},{:.6e}", l.level, l.ndof, l.h, l.eta_total);
            match &l.errors {
                Some(e) => {
                    for v in [e.u_energy, e.p_l2, e.phi_energy, e.r_l2, e.y] {
                        let _ = write!(s, ",{v:.6e}");
                    }
                }
                None => s.push_str(",,,,,"),
            }
            let secs = if timing { l.seconds } else { 0.0 };
            let _ = writeln!(s, ",{:.10e},{secs:.3}", l.cost);
        }
        s
    }
}

/// Final state of a loop run, for dumps and plots.
pub struct AdaptOutcome {
    pub history: ConvergenceHistory,
    pub grid: Grid,
    pub solution: OptimalitySolution,
    pub indicators: ElementIndicators,
}

/// Runs solve, estimate, mark, refine from `initial` until the dof budget
/// is met, every indicator vanishes, or `params.max_levels` levels are done.
/// Errors are recorded when `case` is given.
pub fn adaptive_loop(
    initial: Triangulation,
    spec: &ProblemSpec,
    case: Option<&ManufacturedCase>,
    config: &MethodConfig,
    params: &AdaptParams,
) -> Result<AdaptOutcome> {
    doerfler_mark(&[1.0], params.theta)?;
    if params.max_levels == 0 {
        return Err(invalid("max_levels must be positive"));
    }
    let mut mesh = initial;
    let mut history = ConvergenceHistory::default();
    for level in 0..params.max_levels {
        let start = Instant::now();
        let step = || -> Result<_> {
            let grid = Grid::new(mesh.clone());
            let disc = Discretization::new(&grid, spec, config)?;
            let sol = solve_optimality_with(&grid, &disc, spec, config)?;
            let ind = estimate(&grid, &disc, spec, &sol, config)?;
            let errors = case.map(|c| error_norms(&grid, &disc, &sol, c, config)).transpose()?;
            let j = cost(&grid, &disc, spec, &sol.u, &sol.y, config.error_order)?;
            let certificate = certify(&disc, spec, &sol)?;
            Ok((grid, disc.ndof(), sol, ind, errors, certificate, j))
        };
        let (grid, ndof, sol, ind, errors, certificate, j) = step().map_err(|e| e.at_level(level))?;
        history.levels.push(LevelRecord {
            level,
            ndof,
            n_triangles: grid.n_triangles(),
            h: grid.mesh.max_diameter(),
            eta_total: ind.total(),
            errors,
            certificate,
            iterations: sol.iterations,
            cost: j,
            seconds: start.elapsed().as_secs_f64(),
        });
        let marking = match params.refinement {
            Refinement::Adaptive => doerfler_mark(&ind.element_squared(), params.theta)?,
            Refinement::Uniform => Marking {
                marked: (0..grid.n_triangles()).collect(),
                terminal: false,
            },
        };
        if ndof >= params.max_ndof || marking.terminal || level + 1 == params.max_levels {
            return Ok(AdaptOutcome {
                history,
                grid,
                solution: sol,
                indicators: ind,
            });
        }
        mesh = match params.refinement {
            Refinement::Adaptive => refine_nvb(&grid.mesh, &marking.marked),
            Refinement::Uniform => refine_uniform(&grid.mesh),
        }
        .map_err(|e| e.at_level(level))?;
    }
    unreachable!("the loop returns on its last level")
}
