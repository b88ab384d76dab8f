//! Particle swarm optimisation over bounded mixed integer/real boxes.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, ClassifierSpec, FitOptions, ModelKind};
use crate::matrix::Matrix;
use crate::{dataset, metrics, par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    Integer,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn integer(name: &str, lower: f64, upper: f64) -> Self {
        Dimension {
            name: name.into(),
            kind: DimKind::Integer,
            lower,
            upper,
        }
    }

    pub fn real(name: &str, lower: f64, upper: f64) -> Self {
        Dimension {
            name: name.into(),
            kind: DimKind::Real,
            lower,
            upper,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        for d in &dimensions {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower < d.upper) {
                return Err(Error::invalid(format!(
                    "dimension {} needs finite lower < upper, got [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
        }
        Ok(SearchSpace { dimensions })
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    /// Rounds integer coordinates; real coordinates pass through.
    pub fn decode(&self, position: &[f64]) -> Vec<f64> {
        position
            .iter()
            .zip(&self.dimensions)
            .map(|(&p, d)| match d.kind {
                DimKind::Integer => p.round().clamp(d.lower, d.upper),
                DimKind::Real => p,
            })
            .collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.decode(
            &self
                .dimensions
                .iter()
                .map(|d| 0.5 * (d.lower + d.upper))
                .collect::<Vec<_>>(),
        )
    }

    pub fn contains(&self, position: &[f64]) -> bool {
        position.len() == self.len() && position.iter().zip(&self.dimensions).all(|(&p, d)| d.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmConfig {
    pub particles: usize,
    pub c1: f64,
    pub c2: f64,
    pub inertia: f64,
    /// Explicit per-dimension velocity limits; when absent,
    /// `v_max_fraction · (upper − lower)` is used.
    pub v_max: Option<Vec<f64>>,
    pub v_max_fraction: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            particles: 10,
            c1: 1.5,
            c2: 1.5,
            inertia: 0.5,
            v_max: None,
            v_max_fraction: 0.2,
            iterations: 10,
            seed: 42,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("swarm needs at least one particle".into()));
        }
        if [self.c1, self.c2, self.inertia]
            .iter()
            .any(|c| !(c.is_finite() && *c >= 0.0))
        {
            return Err(Error::Config(
                "c1, c2 and inertia must be finite and nonnegative".into(),
            ));
        }
        if let Some(v) = &self.v_max {
            if v.len() != space.len() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config(
                    "v_max must give one nonnegative limit per dimension".into(),
                ));
            }
        } else if !(self.v_max_fraction.is_finite() && self.v_max_fraction >= 0.0) {
            return Err(Error::Config("v_max_fraction must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn velocity_limits(&self, space: &SearchSpace) -> Vec<f64> {
        match &self.v_max {
            Some(v) => v.clone(),
            None => space
                .dimensions
                .iter()
                .map(|d| self.v_max_fraction * (d.upper - d.lower))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub global_best: Vec<f64>,
    pub global_best_fitness: f64,
    pub v_max: Vec<f64>,
    /// Number of completed moves; selects the random stream of the next one.
    pub moves: u64,
}

const INIT_STREAM: u64 = u64::MAX;

pub fn init_swarm(space: &SearchSpace, config: &SwarmConfig) -> Result<Swarm> {
    if space.is_empty() {
        return Err(Error::invalid("search space has no dimensions"));
    }
    config.validate(space)?;
    let v_max = config.velocity_limits(space);
    let mut r = rng::stream(config.seed, INIT_STREAM);
    let particles: Vec<Particle> = (0..config.particles)
        .map(|_| {
            let position: Vec<f64> = space
                .dimensions
                .iter()
                .map(|d| r.random_range(d.lower..=d.upper))
                .collect();
            let velocity = v_max
                .iter()
                .map(|&v| if v > 0.0 { r.random_range(-v..=v) } else { 0.0 })
                .collect();
            Particle {
                best_position: position.clone(),
                position,
                velocity,
                best_fitness: f64::NEG_INFINITY,
            }
        })
        .collect();
    Ok(Swarm {
        global_best: particles[0].position.clone(),
        global_best_fitness: f64::NEG_INFINITY,
        particles,
        v_max,
        moves: 0,
    })
}

impl Swarm {
    /// Evaluates every particle at its decoded position and updates personal
    /// and global bests on strict improvement. Non-finite fitness counts as −∞.
    pub fn evaluate<F>(&mut self, space: &SearchSpace, fitness: &F)
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let decoded: Vec<Vec<f64>> = self.particles.iter().map(|p| space.decode(&p.position)).collect();
        let values = par::map_slice(&decoded, |x| {
            let f = fitness(x);
            if f.is_nan() || f == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                f
            }
        });
        for (p, f) in self.particles.iter_mut().zip(values) {
            if f > p.best_fitness {
                p.best_fitness = f;
                p.best_position = p.position.clone();
            }
            if f > self.global_best_fitness {
                self.global_best_fitness = f;
                self.global_best = p.position.clone();
            }
        }
    }

    /// Velocity and position update with random factors drawn up front for
    /// the whole swarm.
    pub fn advance(&mut self, space: &SearchSpace, config: &SwarmConfig) {
        let d = space.len();
        let mut r = rng::stream(config.seed, self.moves);
        let draws: Vec<(f64, f64)> = (0..self.particles.len() * d)
            .map(|_| (r.random::<f64>(), r.random::<f64>()))
            .collect();
        let g = self.global_best.clone();
        for (i, p) in self.particles.iter_mut().enumerate() {
            for j in 0..d {
                let (r1, r2) = draws[i * d + j];
                let v = config.inertia * p.velocity[j]
                    + config.c1 * r1 * (p.best_position[j] - p.position[j])
                    + config.c2 * r2 * (g[j] - p.position[j]);
                let v = v.clamp(-self.v_max[j], self.v_max[j]);
                let dim = &space.dimensions[j];
                p.velocity[j] = v;
                p.position[j] = (p.position[j] + v).clamp(dim.lower, dim.upper);
            }
        }
        self.moves += 1;
    }
}

/// One iteration: move every particle, then evaluate and update bests.
pub fn step<F>(swarm: &mut Swarm, space: &SearchSpace, fitness: &F, config: &SwarmConfig)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    swarm.advance(space, config);
    swarm.evaluate(space, fitness);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    /// Decoded best position (integer dimensions rounded).
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Iteration 0 is the evaluated initial swarm.
    pub trace: Vec<TracePoint>,
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut s = String::from("iteration,best_fitness\n");
    for t in trace {
        s.push_str(&format!("{},{}\n", t.iteration, t.best_fitness));
    }
    s
}

/// Maximises `fitness` over `space`.
pub fn optimize<F>(space: &SearchSpace, fitness: F, config: &SwarmConfig) -> Result<Optimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut swarm = init_swarm(space, config)?;
    swarm.evaluate(space, &fitness);
    let mut trace = vec![TracePoint {
        iteration: 0,
        best_fitness: swarm.global_best_fitness,
    }];
    for t in 1..=config.iterations {
        step(&mut swarm, space, &fitness, config);
        trace.push(TracePoint {
            iteration: t,
            best_fitness: swarm.global_best_fitness,
        });
        log::debug!("pso iteration {t}: best {}", swarm.global_best_fitness);
    }
    Ok(Optimum {
        best_position: space.decode(&swarm.global_best),
        best_fitness: swarm.global_best_fitness,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub spec: ClassifierSpec,
    pub cv_auc: f64,
    pub trace: Vec<TracePoint>,
}

/// Mean stratified k-fold AUC of `spec` on the given training data.
pub fn cv_auc(
    spec: &ClassifierSpec,
    x: &Matrix,
    y: &[u8],
    folds: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<f64> {
    let parts = dataset::stratified_folds(y, folds, seed)?;
    let mut total = 0.0;
    for held in &parts {
        let train = dataset::complement(y.len(), held);
        let ytr: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let yva: Vec<u8> = held.iter().map(|&i| y[i]).collect();
        let model = learners::fit_with(spec, &x.select_rows(&train), &ytr, seed, options)?;
        let p = model.predict_proba(&x.select_rows(held))?;
        total += metrics::roc_auc(&yva, &p)?.auc;
    }
    Ok(total / parts.len() as f64)
}

/// PSO over the kind's search space with mean CV AUC as fitness.
///
/// Positions that decode to the same spec share one evaluation.
pub fn tune_model(
    kind: ModelKind,
    x: &Matrix,
    y: &[u8],
    space: &SearchSpace,
    config: &SwarmConfig,
    cv_folds: usize,
    options: &FitOptions,
) -> Result<TuneOutcome> {
    let reference = learners::search_space(kind);
    if space.dimensions.len() != reference.dimensions.len()
        || space
            .dimensions
            .iter()
            .zip(&reference.dimensions)
            .any(|(a, b)| a.name != b.name || a.kind != b.kind)
    {
        return Err(Error::Config(format!("search space does not match model kind {kind}")));
    }
    let memo: Mutex<HashMap<String, f64>> = Mutex::new(HashMap::new());
    let fitness = |pos: &[f64]| -> f64 {
        let spec = match ClassifierSpec::from_position(kind, space, pos) {
            Ok(s) => s,
            Err(_) => return f64::NEG_INFINITY,
        };
        let key = spec.to_kv();
        if let Some(&a) = memo.lock().expect("memo lock").get(&key) {
            return a;
        }
        let a = match cv_auc(&spec, x, y, cv_folds, config.seed, options) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("tune {kind}: fitness failed at {pos:?}: {e}");
                f64::NEG_INFINITY
            }
        };
        memo.lock().expect("memo lock").insert(key, a);
        a
    };
    let best = optimize(space, fitness, config)?;
    if !best.best_fitness.is_finite() {
        return Err(Error::invalid(format!(
            "tune {kind}: no particle produced a finite score"
        )));
    }
    Ok(TuneOutcome {
        spec: ClassifierSpec::from_position(kind, space, &best.best_position)?,
        cv_auc: best.best_fitness,
        trace: best.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(lo: f64, hi: f64, d: usize) -> SearchSpace {
        SearchSpace::new((0..d).map(|i| Dimension::real(&format!("x{i}"), lo, hi)).collect()).unwrap()
    }

    fn sphere(p: &[f64]) -> f64 {
        -p.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn init_in_bounds_and_seeded() {
        let space = square(-1.0, 3.0, 3);
        let cfg = SwarmConfig::default();
        let s = init_swarm(&space, &cfg).unwrap();
        assert_eq!(s.particles.len(), 10);
        for p in &s.particles {
            assert!(space.contains(&p.position));
            assert_eq!(p.best_position, p.position);
            for (v, m) in p.velocity.iter().zip(&s.v_max) {
                assert!(v.abs() <= *m);
            }
        }
        assert_eq!(s, init_swarm(&space, &cfg).unwrap());
        let other = SwarmConfig { seed: 7, ..cfg };
        assert_ne!(s, init_swarm(&space, &other).unwrap());
        assert!(SearchSpace::new(vec![Dimension::real("z", 1.0, 1.0)]).is_err());
    }

    #[test]
    fn zero_coefficients_freeze() {
        let space = square(-5.0, 5.0, 2);
        let cfg = SwarmConfig {
            c1: 0.0,
            c2: 0.0,
            inertia: 0.0,
            ..SwarmConfig::default()
        };
        let mut s = init_swarm(&space, &cfg).unwrap();
        s.evaluate(&space, &sphere);
        let before: Vec<Vec<f64>> = s.particles.iter().map(|p| p.position.clone()).collect();
        step(&mut s, &space, &sphere, &cfg);
        for (p, b) in s.particles.iter().zip(&before) {
            assert!(p.velocity.iter().all(|&v| v == 0.0));
            assert_eq!(&p.position, b);
        }
    }

    #[test]
    fn constant_fitness_keeps_first_best() {
        let space = square(-5.0, 5.0, 2);
        let cfg = SwarmConfig::default();
        let first = init_swarm(&space, &cfg).unwrap().particles[0].position.clone();
        let out = optimize(&space, |_| 1.0, &cfg).unwrap();
        assert_eq!(out.best_position, first);
    }

    #[test]
    fn lone_particle_at_best_moves_by_inertia() {
        let space = square(-10.0, 10.0, 2);
        let cfg = SwarmConfig {
            particles: 1,
            ..SwarmConfig::default()
        };
        let mut s = init_swarm(&space, &cfg).unwrap();
        s.evaluate(&space, &|_: &[f64]| 0.0);
        let p0 = s.particles[0].clone();
        s.advance(&space, &cfg);
        let p = &s.particles[0];
        for j in 0..2 {
            let v = (cfg.inertia * p0.velocity[j]).clamp(-s.v_max[j], s.v_max[j]);
            assert_eq!(p.velocity[j], v);
            assert_eq!(p.position[j], (p0.position[j] + v).clamp(-10.0, 10.0));
        }
    }

    #[test]
    fn zero_iterations_returns_initial_best() {
        let space = square(-5.0, 5.0, 2);
        let cfg = SwarmConfig {
            iterations: 0,
            ..SwarmConfig::default()
        };
        let init = init_swarm(&space, &cfg).unwrap();
        let best = init
            .particles
            .iter()
            .map(|p| sphere(&p.position))
            .fold(f64::NEG_INFINITY, f64::max);
        let out = optimize(&space, sphere, &cfg).unwrap();
        assert_eq!(out.best_fitness, best);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn sphere_converges() {
        let space = square(-5.0, 5.0, 2);
        let hits = (0..20)
            .filter(|&seed| {
                let cfg = SwarmConfig {
                    particles: 20,
                    iterations: 50,
                    seed,
                    ..SwarmConfig::default()
                };
                let out = optimize(&space, sphere, &cfg).unwrap();
                out.best_position.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.1
            })
            .count();
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn non_finite_fitness_is_ignored() {
        let space = square(-5.0, 5.0, 1);
        let out = optimize(
            &space,
            |p: &[f64]| if p[0] > 0.0 { f64::NAN } else { p[0] },
            &SwarmConfig::default(),
        )
        .unwrap();
        assert!(out.best_position[0] <= 0.0);
    }

    #[test]
    fn integers_are_rounded() {
        let space = SearchSpace::new(vec![Dimension::integer("k", 3.0, 20.0)]).unwrap();
        let out = optimize(&space, |p: &[f64]| -(p[0] - 7.2).abs(), &SwarmConfig::default()).unwrap();
        assert_eq!(out.best_position, vec![7.0]);
        assert!(trace_csv(&out.trace).starts_with("iteration,best_fitness\n0,"));
    }

    #[test]
    fn identical_across_thread_counts() {
        let space = square(-5.0, 5.0, 3);
        let cfg = SwarmConfig::default();
        let a = par::with_threads(1, || optimize(&space, sphere, &cfg).unwrap());
        let b = par::with_threads(4, || optimize(&space, sphere, &cfg).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn bounds_clip_and_monotone(seed in any::<u64>(), w in 0.0f64..2.0, c1 in 0.0f64..3.0, c2 in 0.0f64..3.0, steps in 0usize..15) {
            let space = SearchSpace::new(vec![
                Dimension::real("a", -2.0, 1.0),
                Dimension::integer("b", 3.0, 20.0),
            ]).unwrap();
            let cfg = SwarmConfig { seed, inertia: w, c1, c2, iterations: steps, ..SwarmConfig::default() };
            let f = |p: &[f64]| (p[0] * 3.0).sin() + p[1] * 0.1;
            let mut s = init_swarm(&space, &cfg).unwrap();
            s.evaluate(&space, &f);
            let mut last = s.global_best_fitness;
            for _ in 0..steps {
                step(&mut s, &space, &f, &cfg);
                for p in &s.particles {
                    prop_assert!(space.contains(&p.position));
                    for (v, m) in p.velocity.iter().zip(&s.v_max) {
                        prop_assert!(v.abs() <= *m);
                    }
                }
                prop_assert!(s.global_best_fitness >= last);
                last = s.global_best_fitness;
            }
        }
    }
}
