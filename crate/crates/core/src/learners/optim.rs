//! Full-batch L-BFGS over a smooth objective, with a per-iteration loss trace.

use std::cell::RefCell;
use std::sync::{Arc, Mutex};

use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Executor, Gradient, IterState, State, KV};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

use crate::error::{Error, Result};

/// A differentiable objective returning its value and writing its gradient.
pub trait Objective {
    fn eval(&self, params: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub params: Vec<f64>,
    /// Objective value after initialisation and after every iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsSettings {
    pub max_iter: u64,
    pub memory: usize,
    pub grad_tol: f64,
    pub cost_tol: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            max_iter: 200,
            memory: 10,
            grad_tol: 1e-6,
            cost_tol: 1e-10,
        }
    }
}

struct Problem<'a, O> {
    objective: &'a O,
    last: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
}

impl<O: Objective> Problem<'_, O> {
    fn evaluate(&self, p: &[f64]) -> (f64, Vec<f64>) {
        if let Some((q, c, g)) = self.last.borrow().as_ref() {
            if q.as_slice() == p {
                return (*c, g.clone());
            }
        }
        let mut g = vec![0.0; p.len()];
        let c = self.objective.eval(p, &mut g);
        *self.last.borrow_mut() = Some((p.to_vec(), c, g.clone()));
        (c, g)
    }
}

impl<O: Objective> CostFunction for Problem<'_, O> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.evaluate(p).0)
    }
}

impl<O: Objective> Gradient for Problem<'_, O> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.evaluate(p).1)
    }
}

type Iter = IterState<Vec<f64>, Vec<f64>, (), (), (), f64>;

/// Held-out objective watched during optimisation. The run stops once the
/// held-out value has not improved for `patience` iterations.
pub struct EarlyStopping<V> {
    pub validation: V,
    pub patience: usize,
}

struct Watch<V> {
    validation: V,
    patience: usize,
    best: f64,
    /// Trace length and parameters at the best held-out value.
    best_at: Option<(usize, Vec<f64>)>,
    stale: usize,
}

struct Progress<V> {
    trace: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
    watch: Option<Watch<V>>,
}

struct Recorder<V>(Arc<Mutex<Progress<V>>>);

impl<V: Objective> Recorder<V> {
    fn record(&self, state: &Iter) -> std::result::Result<(), argmin::core::Error> {
        let mut p = self.0.lock().expect("recorder lock");
        let cost = state.get_best_cost();
        p.trace.push(cost);
        let Some(param) = state.get_best_param() else {
            return Ok(());
        };
        p.best = Some((cost, param.clone()));
        let len = p.trace.len();
        let mut stop = false;
        if let Some(w) = p.watch.as_mut() {
            let mut g = vec![0.0; param.len()];
            let v = w.validation.eval(param, &mut g);
            if v < w.best {
                w.best = v;
                w.best_at = Some((len, param.clone()));
                w.stale = 0;
            } else {
                w.stale += 1;
                stop = w.stale >= w.patience;
            }
        }
        if stop {
            return Err(argmin::core::Error::msg("held-out loss stopped improving"));
        }
        Ok(())
    }
}

impl<V: Objective> Observe<Iter> for Recorder<V> {
    fn observe_init(&mut self, _: &str, state: &Iter, _: &KV) -> std::result::Result<(), argmin::core::Error> {
        self.record(state)
    }
    fn observe_iter(&mut self, state: &Iter, _: &KV) -> std::result::Result<(), argmin::core::Error> {
        self.record(state)
    }
}

/// Objective that is never evaluated; fills the type slot when no early
/// stopping is requested.
pub struct NoValidation;

impl Objective for NoValidation {
    fn eval(&self, _: &[f64], _: &mut [f64]) -> f64 {
        0.0
    }
}

/// Minimises `objective` from `init`. A line-search breakdown after progress
/// has been made returns the best point reached so far.
pub fn minimize<O: Objective>(objective: &O, init: Vec<f64>, settings: LbfgsSettings) -> Result<Minimum> {
    minimize_with::<O, NoValidation>(objective, init, settings, None)
}

/// As [`minimize`], optionally stopping early on a held-out objective and
/// returning the parameters with the best held-out value. The trace then ends
/// at that iteration.
pub fn minimize_with<O: Objective, V: Objective + Send + 'static>(
    objective: &O,
    init: Vec<f64>,
    settings: LbfgsSettings,
    early: Option<EarlyStopping<V>>,
) -> Result<Minimum> {
    let mut g0 = vec![0.0; init.len()];
    let c0 = objective.eval(&init, &mut g0);
    if !c0.is_finite() {
        return Err(Error::NonFinite("initial objective value".into()));
    }
    if settings.max_iter == 0 || g0.iter().all(|g| g.abs() <= settings.grad_tol) {
        return Ok(Minimum {
            params: init,
            trace: vec![c0],
        });
    }
    let problem = Problem {
        objective,
        last: RefCell::new(None),
    };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), settings.memory)
        .with_tolerance_grad(settings.grad_tol)
        .and_then(|s| s.with_tolerance_cost(settings.cost_tol))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let progress = Arc::new(Mutex::new(Progress {
        trace: Vec::new(),
        best: None,
        watch: early.map(|e| Watch {
            validation: e.validation,
            patience: e.patience.max(1),
            best: f64::INFINITY,
            best_at: None,
            stale: 0,
        }),
    }));
    let result = Executor::new(problem, solver)
        .configure(|s| s.param(init.clone()).max_iters(settings.max_iter))
        .add_observer(Recorder(Arc::clone(&progress)), ObserverMode::Always)
        .run();
    let progress = Arc::try_unwrap(progress)
        .map_err(|_| Error::invalid("optimizer observer still shared"))?
        .into_inner()
        .expect("recorder lock");
    if let Some((len, p)) = progress.watch.and_then(|w| w.best_at) {
        let mut trace = progress.trace;
        trace.truncate(len);
        return Ok(Minimum { params: p, trace });
    }
    let params = match result {
        Ok(res) => res.state().get_best_param().cloned().unwrap_or_else(|| init.clone()),
        Err(e) => match progress.best {
            Some((_, p)) => {
                log::debug!("L-BFGS stopped early: {e}");
                p
            }
            None => return Err(Error::invalid(format!("L-BFGS failed: {e}"))),
        },
    };
    let mut trace = progress.trace;
    if trace.is_empty() {
        trace.push(c0);
    }
    Ok(Minimum { params, trace })
}

/// Central-difference gradient, for checking analytic gradients.
pub fn numeric_gradient<O: Objective>(objective: &O, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut scratch = vec![0.0; params.len()];
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = objective.eval(&p, &mut scratch);
            p[i] = orig - h;
            let down = objective.eval(&p, &mut scratch);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between two gradients, with an absolute floor on
/// the denominator.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
