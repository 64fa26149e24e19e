//! C ABI for the convergent-ilqr solver.
//!
//! Problems and solutions are opaque handles created and destroyed through
//! this interface. Every fallible call returns a `CiStatus`; on failure
//! [`ci_last_error`] describes what went wrong on the calling thread.
//! Arrays are copied into caller buffers in row-major order, and a call with
//! a short buffer reports the required length and `BufferTooSmall`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use convergent_ilqr::bench::{trial_record, ExperimentConfig};
use convergent_ilqr::hybrid::SimOptions;
use convergent_ilqr::ilqr::{solve, Problem, SolveArtifacts, SolverMode, SolverOptions};
use convergent_ilqr::models::{Benchmark, ModelKind};
use convergent_ilqr::nalgebra::DVector;
use convergent_ilqr::Error;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Benchmark model selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiModel {
    Hopper = 0,
    Quadruped = 1,
}

/// Solver variant.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiMode {
    Vanilla = 0,
    Convergent = 1,
}

/// A benchmark task with its initial guess and rollout settings.
pub struct CiProblem {
    bench: Benchmark,
    problem: Problem,
    initial: Vec<DVector<f64>>,
    rollout: SimOptions,
    solver: SolverOptions,
}

/// A solved trajectory with its tracking gains.
pub struct CiSolution {
    artifacts: SolveArtifacts,
}

/// Scalar results of a solve.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CiSummary {
    pub cost: f64,
    pub j_chi: f64,
    pub chi: f64,
    pub iterations: usize,
    pub events: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn fail(status: CiStatus, message: impl Into<String>) -> CiStatus {
    set_error(message.into());
    status
}

fn from_error(stage: CiStatus, e: Error) -> CiStatus {
    let status = match e {
        Error::Config(_) => CiStatus::Config,
        Error::InvalidArgument(_) | Error::Dimension(_) => CiStatus::InvalidArgument,
        _ => stage,
    };
    fail(status, e.to_string())
}

fn guarded(f: impl FnOnce() -> CiStatus) -> CiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(CiStatus::Panic, "internal panic"),
    }
}

fn build_problem(config: &ExperimentConfig, weight_trial: usize) -> Result<CiProblem, Error> {
    config.validate()?;
    let bench = config.benchmark()?;
    let trials = config.trials(&bench);
    let weights = trials
        .get(weight_trial)
        .ok_or_else(|| Error::InvalidArgument(format!("weight trial {weight_trial} of {}", trials.len())))?;
    let task = config.task(&bench, weights)?;
    let problem = task.problem(bench.system.clone(), config.solve_options());
    let initial = bench.initial_inputs(&task, &problem.sim)?;
    let rollout = config.rollout_options(&bench, &task)?;
    Ok(CiProblem {
        bench,
        problem,
        initial,
        rollout,
        solver: config.solver.clone(),
    })
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Copies `values` into `buf` (capacity `len`); `written` receives the
/// required length either way.
unsafe fn copy_out(values: impl Iterator<Item = f64> + Clone, buf: *mut f64, len: usize, written: *mut usize) -> CiStatus {
    let needed = values.clone().count();
    if !written.is_null() {
        *written = needed;
    }
    if needed > len {
        return fail(CiStatus::BufferTooSmall, format!("buffer holds {len} values, {needed} needed"));
    }
    if needed > 0 && buf.is_null() {
        return fail(CiStatus::NullPointer, "output buffer is null");
    }
    for (k, v) in values.enumerate() {
        *buf.add(k) = v;
    }
    CiStatus::Ok
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ci_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ci_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates the default task of `model` for weight setting `weight_trial`
/// (0-based).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn ci_problem_new(model: CiModel, weight_trial: usize, out: *mut *mut CiProblem) -> CiStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CiStatus::NullPointer, "out is null");
        }
        let kind = match model {
            CiModel::Hopper => ModelKind::Hopper,
            CiModel::Quadruped => ModelKind::Quadruped,
        };
        match build_problem(&ExperimentConfig::new(kind), weight_trial) {
            Ok(p) => {
                store(out, p);
                CiStatus::Ok
            }
            Err(e) => from_error(CiStatus::Config, e),
        }
    })
}

/// Creates a task from experiment-config TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ci_problem_from_toml(toml: *const c_char, weight_trial: usize, out: *mut *mut CiProblem) -> CiStatus {
    guarded(|| {
        if toml.is_null() || out.is_null() {
            return fail(CiStatus::NullPointer, "toml or out is null");
        }
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(CiStatus::InvalidArgument, "config text is not UTF-8");
        };
        match ExperimentConfig::from_toml_str(text).and_then(|c| build_problem(&c, weight_trial)) {
            Ok(p) => {
                store(out, p);
                CiStatus::Ok
            }
            Err(e) => from_error(CiStatus::Config, e),
        }
    })
}

/// # Safety
/// `problem` must come from a `ci_problem_*` constructor and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ci_problem_free(problem: *mut CiProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// State dimension, input dimension and knot steps of a task.
///
/// # Safety
/// `problem` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn ci_problem_dims(problem: *const CiProblem, n: *mut usize, m: *mut usize, steps: *mut usize) -> CiStatus {
    let Some(p) = problem.as_ref() else {
        return fail(CiStatus::NullPointer, "problem is null");
    };
    for (slot, value) in [(n, p.bench.system.state_dim()), (m, p.bench.system.input_dim()), (steps, p.problem.steps)] {
        if !slot.is_null() {
            *slot = value;
        }
    }
    CiStatus::Ok
}

/// Solves the task from its built-in initial guess. `max_iterations = 0`
/// keeps the configured limit.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn ci_solve(problem: *const CiProblem, mode: CiMode, max_iterations: usize, out: *mut *mut CiSolution) -> CiStatus {
    guarded(|| {
        let Some(p) = problem.as_ref() else {
            return fail(CiStatus::NullPointer, "problem is null");
        };
        if out.is_null() {
            return fail(CiStatus::NullPointer, "out is null");
        }
        let mut opts = p.solver.clone();
        if max_iterations > 0 {
            opts.max_iterations = max_iterations;
        }
        let mode = match mode {
            CiMode::Vanilla => SolverMode::Vanilla,
            CiMode::Convergent => SolverMode::Convergent,
        };
        match solve(&p.problem, &p.initial, mode, &opts) {
            Ok(artifacts) => {
                store(out, CiSolution { artifacts });
                CiStatus::Ok
            }
            Err(e) => from_error(CiStatus::Solver, e),
        }
    })
}

/// # Safety
/// `solution` must come from `ci_solve` and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_free(solution: *mut CiSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `solution` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_summary(solution: *const CiSolution, out: *mut CiSummary) -> CiStatus {
    let (Some(s), false) = (solution.as_ref(), out.is_null()) else {
        return fail(CiStatus::NullPointer, "solution or out is null");
    };
    let a = &s.artifacts;
    *out = CiSummary {
        cost: a.cost,
        j_chi: a.j_chi,
        chi: a.chi,
        iterations: a.iterations.len().saturating_sub(1),
        events: a.trajectory.events.len(),
    };
    CiStatus::Ok
}

/// Knot states, `(steps + 1) × n`.
///
/// # Safety
/// `buf` must hold `len` doubles; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_states(solution: *const CiSolution, buf: *mut f64, len: usize, written: *mut usize) -> CiStatus {
    let Some(s) = solution.as_ref() else {
        return fail(CiStatus::NullPointer, "solution is null");
    };
    copy_out(s.artifacts.trajectory.states.iter().flat_map(|x| x.iter().copied()), buf, len, written)
}

/// Nominal inputs, `steps × m`.
///
/// # Safety
/// `buf` must hold `len` doubles; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_inputs(solution: *const CiSolution, buf: *mut f64, len: usize, written: *mut usize) -> CiStatus {
    let Some(s) = solution.as_ref() else {
        return fail(CiStatus::NullPointer, "solution is null");
    };
    copy_out(s.artifacts.trajectory.inputs.iter().flat_map(|u| u.iter().copied()), buf, len, written)
}

/// Tracking gains `K_i`, `steps × m × n`, each gain row-major.
///
/// # Safety
/// `buf` must hold `len` doubles; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ci_solution_gains(solution: *const CiSolution, buf: *mut f64, len: usize, written: *mut usize) -> CiStatus {
    let Some(s) = solution.as_ref() else {
        return fail(CiStatus::NullPointer, "solution is null");
    };
    let gains = &s.artifacts.tracking_gains.feedback;
    let values = gains
        .iter()
        .flat_map(|k| (0..k.nrows()).flat_map(move |r| (0..k.ncols()).map(move |c| k[(r, c)])));
    copy_out(values, buf, len, written)
}

/// Closed-loop rollout from the nominal start offset by `dx0` (length n)
/// under the solution's tracking gains. Writes the error ratio and the
/// feedback effort; a divergent rollout yields infinities and `Ok`.
///
/// # Safety
/// Both handles must be live, `dx0` must hold `n` doubles, outputs may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn ci_perturbed_rollout(
    problem: *const CiProblem,
    solution: *const CiSolution,
    dx0: *const f64,
    n: usize,
    error_ratio: *mut f64,
    feedback_effort: *mut f64,
) -> CiStatus {
    guarded(|| {
        let (Some(p), Some(s)) = (problem.as_ref(), solution.as_ref()) else {
            return fail(CiStatus::NullPointer, "problem or solution is null");
        };
        if dx0.is_null() {
            return fail(CiStatus::NullPointer, "dx0 is null");
        }
        if n != p.bench.system.state_dim() || s.artifacts.trajectory.states[0].len() != n {
            return fail(CiStatus::InvalidArgument, format!("dx0 has {n} entries, state has {}", p.bench.system.state_dim()));
        }
        let dx0 = DVector::from_column_slice(std::slice::from_raw_parts(dx0, n));
        let r = trial_record(&p.bench.system, &p.rollout, &s.artifacts, "ffi", 0, 0.0, &dx0, false);
        if let Some(slot) = error_ratio.as_mut() {
            *slot = r.e;
        }
        if let Some(slot) = feedback_effort.as_mut() {
            *slot = r.f;
        }
        CiStatus::Ok
    })
}
