//! Derivative-free minimization: bounded Nelder–Mead, iterated tabu search
//! for starting points, and a multi-start driver combining the two.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::rng::{self, tag};

/// Interval for one coordinate; open ends exclude the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
    pub lower_open: bool,
    pub upper_open: bool,
}

impl Bound {
    pub fn closed(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            lower_open: false,
            upper_open: false,
        }
    }

    pub fn open(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            lower_open: true,
            upper_open: true,
        }
    }

    pub fn unbounded() -> Self {
        Self::open(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        let lo = if self.lower_open { x > self.lower } else { x >= self.lower };
        let hi = if self.upper_open { x < self.upper } else { x <= self.upper };
        lo && hi
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }
}

/// Objective with a `+inf` barrier outside its bounds.
pub struct Objective<F> {
    pub bounds: Vec<Bound>,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective<F> {
    pub fn new(bounds: Vec<Bound>, f: F) -> Self {
        Self { bounds, f }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn in_bounds(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len() && x.iter().zip(&self.bounds).all(|(v, b)| b.contains(*v))
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        if !self.in_bounds(x) {
            return f64::INFINITY;
        }
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplexConfig {
    pub x_tolerance: f64,
    pub f_tolerance: f64,
    pub max_evaluations: usize,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Initial simplex edge as a fraction of the bound width (or of
    /// `max(|x|, 1)` for unbounded coordinates).
    pub initial_step: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            x_tolerance: 1e-6,
            f_tolerance: 1e-9,
            max_evaluations: 20_000,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.05,
        }
    }
}

impl SimplexConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x_tolerance >= 0.0
            && self.f_tolerance >= 0.0
            && self.max_evaluations > 0
            && self.reflection > 0.0
            && self.expansion > 1.0
            && self.expansion > self.reflection
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.initial_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid simplex configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabuConfig {
    pub restarts: usize,
    pub neighborhood_radius: f64,
    pub tabu_tenure: usize,
    pub grid_resolution: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TabuConfig {
    fn default() -> Self {
        Self {
            restarts: 50,
            neighborhood_radius: 0.1,
            tabu_tenure: 10,
            grid_resolution: 8,
            iterations: 20,
            seed: 0,
        }
    }
}

impl TabuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.tabu_tenure == 0 || self.grid_resolution == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "tabu restarts, tenure, grid resolution and iterations must be positive".into(),
            ));
        }
        if !(self.neighborhood_radius > 0.0 && self.neighborhood_radius <= 1.0) {
            return Err(Error::InvalidConfig("tabu neighborhood radius must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub end_value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub restart_trace: Vec<RestartRecord>,
}

/// Nelder–Mead simplex search from `start`.
pub fn nelder_mead<F>(obj: &Objective<F>, start: &[f64], cfg: &SimplexConfig) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let n = obj.dim();
    if start.len() != n || n == 0 {
        return Err(Error::Optimizer(format!(
            "start has dimension {}, objective has {n}",
            start.len()
        )));
    }
    if !obj.in_bounds(start) {
        return Err(Error::Optimizer(format!("start {start:?} outside bounds")));
    }
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        obj.evaluate(x)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let b = &obj.bounds[i];
        let step = if b.is_finite() {
            cfg.initial_step * b.width()
        } else {
            cfg.initial_step * start[i].abs().max(1.0)
        };
        let mut x = start.to_vec();
        x[i] = start[i] + step;
        if !b.contains(x[i]) {
            x[i] = start[i] - step;
        }
        if !b.contains(x[i]) {
            x[i] = start[i] + 0.5 * step;
        }
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();
    loop {
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        order = (0..=n).collect();

        let f_spread = values[1..].iter().map(|v| (v - values[0]).abs()).fold(0.0, f64::max);
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if values[0].is_finite() && f_spread <= cfg.f_tolerance && x_spread <= cfg.x_tolerance {
            converged = true;
            break;
        }
        if evals.get() >= cfg.max_evaluations {
            break;
        }

        let mut centroid = vec![0.0; n];
        for x in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(cfg.reflection);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(cfg.reflection * cfg.expansion);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < values[n] {
            let xc = along(cfg.reflection * cfg.contraction);
            let fc = eval(&xc);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-cfg.contraction);
            let fc = eval(&xc);
            let ok = fc < values[n];
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let x: Vec<f64> = best
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + cfg.shrink * (v - b))
                .collect();
            values[i] = eval(&x);
            simplex[i] = x;
        }
    }

    let best_point = simplex[0].clone();
    let best_value = values[0];
    Ok(OptimResult {
        restart_trace: vec![RestartRecord {
            start: start.to_vec(),
            end: best_point.clone(),
            end_value: best_value,
            converged,
        }],
        best_point,
        best_value,
        evaluations: evals.get(),
        converged,
    })
}

/// A ranked starting point proposed by the tabu search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: Vec<f64>,
    pub value: f64,
    pub restart: usize,
}

fn cell_of(x: &[f64], bounds: &[Bound], g: usize) -> Vec<usize> {
    x.iter()
        .zip(bounds)
        .map(|(v, b)| {
            let t = ((v - b.lower) / b.width() * g as f64).floor();
            (t.max(0.0) as usize).min(g - 1)
        })
        .collect()
}

/// Pull `x` strictly inside an interval whose ends may be open.
fn inside(x: f64, b: &Bound) -> f64 {
    let eps = 1e-9 * b.width();
    x.clamp(b.lower + eps, b.upper - eps)
}

/// One tabu walk; returns the best point visited, its value and the number
/// of evaluations spent.
fn tabu_walk<F>(obj: &Objective<F>, cfg: &TabuConfig, restart: usize) -> (Candidate, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let bounds = &obj.bounds;
    let g = cfg.grid_resolution;
    let mut rng = rng::substream(cfg.seed, &[tag::TABU, restart as u64]);
    // random grid cell, random point inside it
    let mut current: Vec<f64> = bounds
        .iter()
        .map(|b| {
            let k = rng.random_range(0..g) as f64;
            let u: f64 = rng.random();
            inside(b.lower + (k + u) / g as f64 * b.width(), b)
        })
        .collect();
    let mut evals = 1;
    let mut current_value = obj.evaluate(&current);
    let mut best = Candidate {
        point: current.clone(),
        value: current_value,
        restart,
    };
    let mut tabu: std::collections::VecDeque<Vec<usize>> = std::collections::VecDeque::new();
    tabu.push_back(cell_of(&current, bounds, g));

    for _ in 0..cfg.iterations {
        let mut moves: Vec<(f64, Vec<f64>)> = Vec::with_capacity(2 * bounds.len() + 1);
        for (i, b) in bounds.iter().enumerate() {
            let step = cfg.neighborhood_radius * b.width() * (0.5 + rng.random::<f64>());
            for sign in [1.0, -1.0] {
                let mut x = current.clone();
                x[i] = inside(x[i] + sign * step, b);
                moves.push((0.0, x));
            }
        }
        // one random diagonal move keeps the walk from being axis-locked
        let diag: Vec<f64> = current
            .iter()
            .zip(bounds)
            .map(|(v, b)| {
                let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                inside(v + u * cfg.neighborhood_radius * b.width(), b)
            })
            .collect();
        moves.push((0.0, diag));
        for m in moves.iter_mut() {
            m.0 = obj.evaluate(&m.1);
            evals += 1;
        }
        let mut chosen: Option<(f64, Vec<f64>)> = None;
        for (v, x) in moves {
            let is_tabu = tabu.contains(&cell_of(&x, bounds, g));
            let aspire = v < best.value;
            if is_tabu && !aspire {
                continue;
            }
            if chosen.as_ref().is_none_or(|c| v < c.0) {
                chosen = Some((v, x));
            }
        }
        let Some((v, x)) = chosen else { break };
        current = x;
        current_value = v;
        if current_value < best.value {
            best.point = current.clone();
            best.value = current_value;
        }
        tabu.push_back(cell_of(&current, bounds, g));
        while tabu.len() > cfg.tabu_tenure {
            tabu.pop_front();
        }
    }
    (best, evals)
}

/// Ranked starting points, one per restart, ordered by (value, restart).
pub fn iterated_tabu_search<F>(obj: &Objective<F>, cfg: &TabuConfig, mode: ExecMode) -> Result<Vec<Candidate>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if obj.dim() == 0 || obj.bounds.iter().any(|b| !b.is_finite() || b.width() <= 0.0) {
        return Err(Error::Optimizer("tabu search needs finite, non-empty bounds".into()));
    }
    let walks = par::map_range(mode, cfg.restarts, |r| tabu_walk(obj, cfg, r));
    let mut out: Vec<Candidate> = walks.into_iter().map(|(c, _)| c).collect();
    out.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.restart.cmp(&b.restart)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub tabu: TabuConfig,
    pub simplex: SimplexConfig,
    /// Local searches are launched from at most this many of the best tabu
    /// candidates (`0` means all of them).
    pub local_starts: usize,
}

/// Nelder–Mead from every tabu candidate and from `extra_starts`, with a
/// final restart from the winner. Ties are broken by start order.
pub fn global_minimize<F>(
    obj: &Objective<F>,
    cfg: &GlobalConfig,
    extra_starts: &[Vec<f64>],
    mode: ExecMode,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let candidates = iterated_tabu_search(obj, &cfg.tabu, mode)?;
    let take = if cfg.local_starts == 0 {
        candidates.len()
    } else {
        cfg.local_starts.min(candidates.len())
    };
    let mut starts: Vec<Vec<f64>> = extra_starts
        .iter()
        .filter(|x| obj.in_bounds(x))
        .cloned()
        .collect();
    starts.extend(candidates.into_iter().take(take).map(|c| c.point));
    if starts.is_empty() {
        return Err(Error::Optimizer("no admissible starting point".into()));
    }
    let runs = par::map_slice(mode, &starts, |s| nelder_mead(obj, s, &cfg.simplex));
    let mut runs: Vec<OptimResult> = runs.into_iter().collect::<Result<_>>()?;
    let mut evaluations: usize = runs.iter().map(|r| r.evaluations).sum();
    let mut trace: Vec<RestartRecord> = runs.iter_mut().flat_map(|r| r.restart_trace.drain(..)).collect();

    let best_idx = (0..runs.len())
        .min_by(|&i, &j| runs[i].best_value.total_cmp(&runs[j].best_value).then(i.cmp(&j)))
        .expect("non-empty");
    let mut best = runs.swap_remove(best_idx);
    // restarting from the winner guards against a collapsed simplex
    if best.best_value.is_finite() {
        let polish = nelder_mead(obj, &best.best_point, &cfg.simplex)?;
        evaluations += polish.evaluations;
        trace.extend(polish.restart_trace.iter().cloned());
        if polish.best_value <= best.best_value {
            best.best_point = polish.best_point;
            best.best_value = polish.best_value;
            best.converged = polish.converged;
        }
    }
    if !best.best_value.is_finite() {
        return Err(Error::Optimizer("objective is infinite at every start".into()));
    }
    Ok(OptimResult {
        best_point: best.best_point,
        best_value: best.best_value,
        evaluations,
        converged: best.converged,
        restart_trace: trace,
    })
}

/// Coordinate maps between natural parameters and optimizer space, with
/// optional log transform per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub log: Vec<bool>,
}

impl ParamSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, log: Vec<bool>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != log.len() {
            return Err(Error::InvalidConfig("parameter space dimensions disagree".into()));
        }
        for i in 0..lower.len() {
            if !(lower[i] < upper[i]) || (log[i] && lower[i] <= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "bad bounds [{}, {}] for coordinate {i}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper, log })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn to_internal(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.log)
            .map(|(v, l)| if *l { v.ln() } else { *v })
            .collect()
    }

    pub fn to_natural(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.log)
            .map(|(v, l)| if *l { v.exp() } else { *v })
            .collect()
    }

    pub fn bounds(&self) -> Vec<Bound> {
        (0..self.dim())
            .map(|i| {
                if self.log[i] {
                    Bound::closed(self.lower[i].ln(), self.upper[i].ln())
                } else {
                    Bound::closed(self.lower[i], self.upper[i])
                }
            })
            .collect()
    }

    /// Clamp a natural-scale point into the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| v.clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    /// Coordinates whose natural value lies within `rel` (relative, on the
    /// optimizer scale) of a bound.
    pub fn at_boundary(&self, x: &[f64], rel: f64) -> Vec<usize> {
        let y = self.to_internal(x);
        self.bounds()
            .iter()
            .enumerate()
            .filter(|(i, b)| {
                let tol = rel * b.width();
                y[*i] - b.lower <= tol || b.upper - y[*i] <= tol
            })
            .map(|(i, _)| i)
            .collect()
    }
}
