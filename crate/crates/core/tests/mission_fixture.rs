//! Properties of the converged one-mode Earth to 67P run. The continuation
//! runs once and is shared by every test.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use sepopt::continuation::{
    initial_guess_with, run_continuation_with, ContinuationSettings, ContinuationTrace, MissionSolution, PowerGuess,
};
use sepopt::mission::{solve_into, RunConfig};
use sepopt::nlp::{Duals, InteriorPoint, IterationRecord, NlpSolver, Problem, SolveError, SolveResult, SolverOptions, Status};
use sepopt::power::SmoothingParams;
use sepopt::transcription::assemble;
use sepopt::validation::{repropagate, EngineModel};

struct Fixture {
    rc: RunConfig,
    solution: MissionSolution,
    trace: ContinuationTrace,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let rc = RunConfig::bundled("earth_67p_one_mode").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = solve_into(&rc, dir.path(), None);
        let solution = out.solution.unwrap_or_else(|| panic!("{}", out.message));
        Fixture { rc, solution, trace: out.trace }
    })
}

fn step_options(f: &Fixture) -> SolverOptions {
    SolverOptions { max_iterations: f.rc.file.schedule.stall_iterations, ..f.rc.solver_options() }
}

fn gap(a: &[f64; 7], b: &[f64; 7]) -> f64 {
    (0..6).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

#[test]
fn reaches_the_target_feasibly() {
    let f = fixture();
    assert!(f.solution.reached_target);
    assert_eq!(f.solution.smoothing, SmoothingParams::new(8.85e-4, 8.85e-4));
    assert!(f.solution.max_constraint_violation <= 1e-6);
}

#[test]
fn trace_is_monotone() {
    let r = &fixture().trace.records;
    assert!(r.len() > 1);
    for w in r.windows(2) {
        assert!(w[1].rho_p <= w[0].rho_p && w[1].rho_e <= w[0].rho_e);
    }
}

#[test]
fn warm_start_beats_a_cold_solve() {
    let f = fixture();
    let last = f.trace.records.last().unwrap();
    let sp = SmoothingParams::new(last.rho_p, last.rho_e);
    let nlp = assemble(&f.rc.mission, &f.rc.modes, sp).unwrap();
    let guess = initial_guess_with(&f.rc.mission, &f.rc.modes, sp, PowerGuess::Auto).unwrap();
    let cold = InteriorPoint::new(step_options(f)).solve(&nlp, &guess.flatten()).unwrap();
    assert!(
        cold.status != Status::Converged || cold.iterations > last.iterations,
        "cold {} in {} iterations, warm {}",
        cold.status,
        cold.iterations,
        last.iterations
    );
}

#[test]
fn tighter_smoothing_barely_moves_the_optimum() {
    let f = fixture();
    let sp = f.solution.smoothing;
    let half = SmoothingParams::new(sp.rho_p / 2.0, sp.rho_e / 2.0);
    let nlp = assemble(&f.rc.mission, &f.rc.modes, half).unwrap();
    let r = InteriorPoint::new(step_options(f))
        .solve_with(&nlp, &f.solution.decision.flatten(), f.solution.duals.as_ref(), &mut |_| {})
        .unwrap();
    assert_eq!(r.status, Status::Converged, "{}", r.message);
    let change = (r.objective_value - f.solution.objective).abs() / f.solution.objective.abs();
    assert!(change < 5e-3, "objective moved by {:.3}%", 100.0 * change);
}

/// A solver from outside the library, delegating to the interior point
/// method and counting calls.
struct Adapter {
    inner: InteriorPoint,
    calls: Arc<AtomicUsize>,
}

impl NlpSolver for Adapter {
    fn name(&self) -> &str {
        "adapter"
    }

    fn solve_with(
        &self,
        problem: &dyn Problem,
        initial: &[f64],
        duals: Option<&Duals>,
        log: &mut dyn FnMut(&IterationRecord),
    ) -> Result<SolveResult, SolveError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.solve_with(problem, initial, duals, log)
    }
}

#[test]
fn external_solver_drives_the_continuation() {
    let f = fixture();
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let factory = move |o: &SolverOptions| -> Box<dyn NlpSolver> {
        Box::new(Adapter { inner: InteriorPoint::new(o.clone()), calls: counter.clone() })
    };
    let settings = ContinuationSettings { solver: Some(&factory), power_guess: f.rc.file.schedule.power_guess, ..Default::default() };
    let (s, trace) = run_continuation_with(&f.rc.mission, &f.rc.modes, f.rc.schedule(), &f.rc.solver_options(), settings).unwrap();
    assert!(s.reached_target && s.max_constraint_violation <= 1e-6);
    assert_eq!(calls.load(Ordering::Relaxed), trace.records.len());
    assert_eq!(s.decision, f.solution.decision);
}

#[test]
fn smooth_repropagation_lands_on_the_target() {
    let f = fixture();
    let end = repropagate(&f.solution, &f.rc.mission, &f.rc.modes, EngineModel::Smooth { rho_e: f.solution.smoothing.rho_e })
        .unwrap()
        .to_array();
    let target = f.solution.decision.states.last().unwrap().to_array();
    assert!(gap(&end, &target) < 5e-5, "{}", gap(&end, &target));
}

#[test]
#[ignore = "hard engine switching pushes one arc past the shut-off radius near 2.2 au; see README"]
fn hard_repropagation_lands_on_the_target() {
    let f = fixture();
    let end = repropagate(&f.solution, &f.rc.mission, &f.rc.modes, EngineModel::Hard).unwrap().to_array();
    let target = f.solution.decision.states.last().unwrap().to_array();
    assert!(gap(&end, &target) < 5e-5, "{}", gap(&end, &target));
}

#[test]
#[ignore = "one node keeps a partial 24 mN thrust at the final smoothing; see README"]
fn modes_are_crisp_at_the_end() {
    let f = fixture();
    for (j, (eta, t)) in f.solution.activation.iter().zip(&f.solution.thrust).enumerate() {
        let top = eta.iter().fold(0.0f64, |a, b| a.max(*b));
        assert!(top >= 0.95 || *t <= 1e-3, "node {j}: max eta {top:.3}, thrust {t:.4} N");
    }
}
