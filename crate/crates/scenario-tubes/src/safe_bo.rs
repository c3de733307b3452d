//! Safe Bayesian optimization on top of uncertainty tubes.
//!
//! Each iteration rebuilds a tube from the data gathered so far, derives the
//! safe set (constraint lower bounds above their thresholds), the potential
//! maximizers, and the potential expanders, then evaluates the most
//! uncertain candidate. Sampling never leaves the current safe set, which is
//! what the per-iteration safety statement rests on; the recommendation is
//! the safe parameter with the best reward lower bound.

use serde::{Deserialize, Serialize};

use crate::certificates::ConfidenceSchedule;
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::model::{Dataset, FunctionModel, ModelEvaluators};
use crate::plants::Plant;
use crate::rng::{Stream, StreamTag};
use crate::tube::{Tube, TubeBuilder, TubeMethodChoice, TubeOptions};

/// Constraint on one output: its tube lower bound must clear `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub output: usize,
    pub min: f64,
}

/// Campaign configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeBoConfig {
    /// Safety thresholds per constrained output. The reward (output 0) is
    /// unconstrained unless listed here explicitly.
    pub thresholds: Vec<Threshold>,
    /// Initial safe parameters (grid indices); all are evaluated once before
    /// the first iteration.
    pub initial_safe: Vec<usize>,
    /// Number of acquisition iterations.
    pub horizon: usize,
    pub nu: f64,
    pub schedule: ConfidenceSchedule,
    pub method: TubeMethodChoice,
    #[serde(default)]
    pub tube_options: TubeOptions,
    /// Retain every per-iteration tube in the final state (for export).
    #[serde(default)]
    pub keep_tubes: bool,
}

impl SafeBoConfig {
    fn validate(&self, model: &FunctionModel) -> Result<()> {
        if self.initial_safe.is_empty() {
            return Err(Error::Config("initial safe set must be nonempty".into()));
        }
        for &idx in &self.initial_safe {
            if idx >= model.grid.len() {
                return Err(Error::Config(format!(
                    "initial safe index {idx} outside the grid"
                )));
            }
        }
        for t in &self.thresholds {
            if t.output >= model.outputs() {
                return Err(Error::Config(format!(
                    "threshold on output {} of a {}-output model",
                    t.output,
                    model.outputs()
                )));
            }
            if !t.min.is_finite() {
                return Err(Error::Config("threshold must be finite".into()));
            }
        }
        Ok(())
    }
}

/// One row of the campaign history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub point_index: usize,
    pub point: Vec<f64>,
    pub observations: Vec<f64>,
    pub m: usize,
    pub s: usize,
    pub tau: f64,
    pub safe_set_size: usize,
    pub maximizer_set_size: usize,
    pub expander_set_size: usize,
    /// Whether the evaluated parameter satisfies the true constraints
    /// (ground truth when the plant exposes it, observations otherwise).
    pub safe: bool,
}

/// Full campaign state: data, last tube and sets, per-iteration trace.
pub struct SafeBoState {
    pub iteration: usize,
    pub dataset: Dataset,
    pub tube: Tube,
    pub safe_set: Vec<usize>,
    pub maximizers: Vec<usize>,
    pub expanders: Vec<usize>,
    pub history: Vec<HistoryRow>,
    /// Grid index of the recommended parameter, when the safe set is
    /// nonempty.
    pub recommendation: Option<usize>,
    /// True when the loop stopped because no candidates were left.
    pub exhausted: bool,
    /// Per-iteration tubes, retained when the config asks for them.
    pub tubes: Vec<Tube>,
}

/// Safe set: grid points whose constraint lower bounds clear every
/// threshold.
pub fn safe_set(tube: &Tube, thresholds: &[Threshold]) -> Vec<usize> {
    (0..tube.n_points())
        .filter(|&p| {
            thresholds
                .iter()
                .all(|t| tube.lower[t.output][p] >= t.min)
        })
        .collect()
}

/// Potential maximizers: safe points whose reward upper bound reaches the
/// best safe reward lower bound.
pub fn maximizer_set(tube: &Tube, safe: &[usize]) -> Vec<usize> {
    let best_lower = safe
        .iter()
        .map(|&p| tube.lower[0][p])
        .fold(f64::NEG_INFINITY, f64::max);
    safe.iter()
        .copied()
        .filter(|&p| tube.upper[0][p] >= best_lower)
        .collect()
}

/// Potential expanders: safe non-maximizers that are the nearest safe
/// neighbor (ties included) of at least one unsafe point.
pub fn expander_set(
    tube: &Tube,
    safe: &[usize],
    maximizers: &[usize],
    grid: &DomainGrid,
) -> Vec<usize> {
    if safe.is_empty() || safe.len() == tube.n_points() {
        return Vec::new();
    }
    let safe_mask: Vec<bool> = {
        let mut mask = vec![false; tube.n_points()];
        for &p in safe {
            mask[p] = true;
        }
        mask
    };
    let mut gain = vec![0usize; tube.n_points()];
    // Squared distances compare exactly on a lattice, so equidistant safe
    // points tie and all collect the unsafe neighbor.
    for unsafe_p in 0..tube.n_points() {
        if safe_mask[unsafe_p] {
            continue;
        }
        let up = grid.point(unsafe_p);
        let mut best = f64::INFINITY;
        let mut arg: Vec<usize> = Vec::new();
        for &sp in safe {
            let d2: f64 = grid
                .point(sp)
                .iter()
                .zip(up)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best {
                best = d2;
                arg.clear();
                arg.push(sp);
            } else if d2 == best {
                arg.push(sp);
            }
        }
        for sp in arg {
            gain[sp] += 1;
        }
    }
    let mut in_maximizers = vec![false; tube.n_points()];
    for &p in maximizers {
        in_maximizers[p] = true;
    }
    safe.iter()
        .copied()
        .filter(|&p| !in_maximizers[p] && gain[p] > 0)
        .collect()
}

/// Pick the most uncertain candidate: the largest max-over-outputs tube
/// width, ties broken by the lowest grid index.
pub fn acquire(tube: &Tube, candidates: &[usize]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &p in candidates {
        let width = tube.max_width(p);
        let better = match best {
            None => true,
            Some((bw, bp)) => width > bw || (width == bw && p < bp),
        };
        if better {
            best = Some((width, p));
        }
    }
    best.map(|(_, p)| p).ok_or(Error::EmptyCandidates)
}

/// Error carrying the partial campaign when a plant query fails mid-run.
pub struct AbortedCampaign {
    pub state: SafeBoState,
    pub source: Error,
}

/// Run the safe BO loop.
///
/// Every initial safe parameter is evaluated once up front. Each iteration
/// `t = 1..=horizon` builds a tube at confidence `kappa_t`, computes the
/// candidate sets, evaluates the acquisition, and appends the observation.
/// An empty candidate set ends the campaign early (a normal termination).
/// With horizon 0 the tube and recommendation are still computed from the
/// initial observations alone.
pub fn run_safe_bo(
    model: &FunctionModel,
    plant: &dyn Plant,
    config: &SafeBoConfig,
    stream: Stream,
) -> std::result::Result<SafeBoState, Box<AbortedCampaign>> {
    config
        .validate(model)
        .map_err(|e| abort_empty(model, e, config))?;
    let evaluators = ModelEvaluators::build(model).map_err(|e| abort_empty(model, e, config))?;
    let mut builder = TubeBuilder::new(model, &evaluators);
    builder.options = config.tube_options;

    let mut dataset = Dataset::empty(model.outputs());
    let mut history: Vec<HistoryRow> = Vec::new();

    // Initial experiments: one per initial safe parameter.
    for (k, &idx) in config.initial_safe.iter().enumerate() {
        let point = model.grid.point(idx).to_vec();
        let query_stream = stream.tagged(StreamTag::PlantQuery).child(0).child(k as u64);
        match plant.query(&point, query_stream) {
            Ok(ys) => {
                if let Err(e) = dataset.push(idx, &ys) {
                    return Err(abort_empty(model, e, config));
                }
                history.push(HistoryRow {
                    iteration: 0,
                    point_index: idx,
                    point,
                    observations: ys.clone(),
                    m: 0,
                    s: 0,
                    tau: f64::NAN,
                    safe_set_size: config.initial_safe.len(),
                    maximizer_set_size: 0,
                    expander_set_size: 0,
                    safe: is_safe_evaluation(plant, model, idx, &ys, &config.thresholds),
                });
            }
            Err(e) => return Err(abort_with(model, history, dataset, e, config)),
        }
    }

    let mut final_tube: Option<Tube> = None;
    let mut safe: Vec<usize> = Vec::new();
    let mut maximizers: Vec<usize> = Vec::new();
    let mut expanders: Vec<usize> = Vec::new();
    let mut exhausted = false;
    let mut iteration = 0;
    let mut kept_tubes: Vec<Tube> = Vec::new();

    for t in 1..=config.horizon.max(1) {
        iteration = t;
        let kappa_t = config.schedule.kappa_at(t);
        let tube_stream = stream.tagged(StreamTag::Tube).child(t as u64);
        let run = match config.method {
            TubeMethodChoice::Classic => {
                builder.classic(&dataset, config.nu, kappa_t, t, tube_stream)
            }
            TubeMethodChoice::WaitAndJudge => {
                builder.wait_and_judge(&dataset, config.nu, kappa_t, t, tube_stream)
            }
        };
        let run = match run {
            Ok(r) => r,
            Err(e) => return Err(abort_with(model, history, dataset, e, config)),
        };
        let tube = run.tube;

        safe = safe_set(&tube, &config.thresholds);
        maximizers = maximizer_set(&tube, &safe);
        expanders = expander_set(&tube, &safe, &maximizers, &model.grid);
        if config.keep_tubes {
            kept_tubes.push(tube.clone());
        }
        final_tube = Some(tube);

        if config.horizon == 0 {
            break;
        }

        let mut candidates: Vec<usize> = maximizers
            .iter()
            .chain(expanders.iter())
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        if candidates.is_empty() {
            exhausted = true;
            break;
        }
        let tube_ref = final_tube.as_ref().expect("tube was just built");
        let next = match acquire(tube_ref, &candidates) {
            Ok(p) => p,
            Err(e) => return Err(abort_with(model, history, dataset, e, config)),
        };
        debug_assert!(safe.contains(&next), "acquisition left the safe set");

        let point = model.grid.point(next).to_vec();
        let query_stream = stream
            .tagged(StreamTag::PlantQuery)
            .child(t as u64)
            .child(0);
        let cert = tube_ref.certificate;
        match plant.query(&point, query_stream) {
            Ok(ys) => {
                if let Err(e) = dataset.push(next, &ys) {
                    return Err(abort_with(model, history, dataset, e, config));
                }
                history.push(HistoryRow {
                    iteration: t,
                    point_index: next,
                    point,
                    observations: ys.clone(),
                    m: cert.m,
                    s: cert.s,
                    tau: cert.tau,
                    safe_set_size: safe.len(),
                    maximizer_set_size: maximizers.len(),
                    expander_set_size: expanders.len(),
                    safe: is_safe_evaluation(plant, model, next, &ys, &config.thresholds),
                });
            }
            Err(e) => return Err(abort_with(model, history, dataset, e, config)),
        }
    }

    let tube = final_tube.expect("at least one tube is always built");
    let recommendation = safe
        .iter()
        .copied()
        .max_by(|&a, &b| tube.lower[0][a].total_cmp(&tube.lower[0][b]).then(b.cmp(&a)));
    Ok(SafeBoState {
        iteration,
        dataset,
        tube,
        safe_set: safe,
        maximizers,
        expanders,
        history,
        recommendation,
        exhausted,
        tubes: kept_tubes,
    })
}

fn is_safe_evaluation(
    plant: &dyn Plant,
    model: &FunctionModel,
    idx: usize,
    observations: &[f64],
    thresholds: &[Threshold],
) -> bool {
    let point = model.grid.point(idx);
    let reference = plant
        .truth(point)
        .unwrap_or_else(|| observations.to_vec());
    thresholds.iter().all(|t| reference[t.output] >= t.min)
}

fn abort_empty(model: &FunctionModel, source: Error, config: &SafeBoConfig) -> Box<AbortedCampaign> {
    abort_with(
        model,
        Vec::new(),
        Dataset::empty(model.outputs()),
        source,
        config,
    )
}

fn abort_with(
    model: &FunctionModel,
    history: Vec<HistoryRow>,
    dataset: Dataset,
    source: Error,
    config: &SafeBoConfig,
) -> Box<AbortedCampaign> {
    let n = model.grid.len();
    Box::new(AbortedCampaign {
        state: SafeBoState {
            iteration: history.last().map_or(0, |r| r.iteration),
            dataset,
            tube: Tube {
                lower: vec![vec![f64::NEG_INFINITY; n]; model.outputs()],
                upper: vec![vec![f64::INFINITY; n]; model.outputs()],
                iteration: 0,
                certificate: crate::certificates::Certificate {
                    method: crate::certificates::TubeMethod::Classic,
                    m: 0,
                    s: 0,
                    tau: f64::NAN,
                    nu: config.nu,
                    kappa_t: f64::NAN,
                },
            },
            safe_set: Vec::new(),
            maximizers: Vec::new(),
            expanders: Vec::new(),
            history,
            recommendation: None,
            exhausted: false,
            tubes: Vec::new(),
        },
        source,
    })
}
