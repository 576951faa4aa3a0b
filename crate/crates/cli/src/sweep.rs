//! Parameter sweeps: expand the inclusive axes over B, c, and theta into a
//! cross-product grid, evaluate every point on a worker pool, and return the
//! rows in grid order (B outermost, theta innermost) so output is stable.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde_json::{Map, Value};

use auditgames::allocation::AllocationRule;
use auditgames::numeric::derive_seed;
use auditgames::verification::{
    default_workers, epsilon_dsic_topk, epsilon_exact_threshold_auto, epsilon_mc_threshold_with,
    epsilon_uniform_k,
};

use crate::config::{RunConfig, SweepCommand, SweepConfig, SWEEP_CAP};
use crate::Failure;

pub struct SweepParams {
    pub samples: u64,
    pub seed: u64,
    pub delta: f64,
}

struct Point {
    budget: f64,
    fine: f64,
    theta: Option<f64>,
}

pub struct SweepRow {
    pub budget: f64,
    pub fine: f64,
    pub theta: Option<f64>,
    pub epsilon: f64,
    pub raw_max_gain: f64,
    pub method: String,
    pub p_u: Option<f64>,
    pub error_bound: Option<f64>,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
}

pub fn run_sweep(
    cfg: &RunConfig,
    sweep: &SweepConfig,
    params: &SweepParams,
) -> Result<Vec<SweepRow>, Failure> {
    let is_threshold = matches!(cfg.allocation, AllocationRule::Threshold { .. });
    let needs_threshold = matches!(
        sweep.command,
        SweepCommand::EpsilonExact | SweepCommand::EpsilonMc
    );
    if needs_threshold && !is_threshold {
        return Err(Failure::config(
            "this sweep command needs a threshold allocation rule",
        ));
    }
    if !needs_threshold && is_threshold {
        return Err(Failure::config(
            "this sweep command needs a top-k allocation rule",
        ));
    }

    let budgets = match &sweep.budget {
        Some(axis) => axis.values().map_err(Failure::config)?,
        None => vec![cfg.budget],
    };
    let fines = match &sweep.fine {
        Some(axis) => axis.values().map_err(Failure::config)?,
        None => vec![cfg.fine],
    };
    let thetas: Vec<Option<f64>> = match &sweep.theta {
        Some(axis) => {
            if !is_threshold {
                return Err(Failure::config(
                    "a theta sweep needs a threshold allocation rule",
                ));
            }
            axis.values()
                .map_err(Failure::config)?
                .into_iter()
                .map(Some)
                .collect()
        }
        None => vec![None],
    };
    if budgets.iter().any(|b| *b < 0.0) {
        return Err(Failure::config("the B axis must stay nonnegative"));
    }
    if fines.iter().any(|c| *c < 0.0) {
        return Err(Failure::config("the c axis must stay nonnegative"));
    }
    let total = budgets.len() * fines.len() * thetas.len();
    if total > SWEEP_CAP {
        return Err(Failure::config(format!(
            "the sweep grid has {total} points, over the {SWEEP_CAP}-point cap"
        )));
    }

    let mut points = Vec::with_capacity(total);
    for &budget in &budgets {
        for &fine in &fines {
            for &theta in &thetas {
                points.push(Point { budget, fine, theta });
            }
        }
    }

    let workers = default_workers().min(points.len()).max(1);
    let cursor = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<SweepRow, String>)>();
    {
        let points = &points;
        let cursor = &cursor;
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                scope.spawn(move || loop {
                    let idx = cursor.fetch_add(1, Ordering::Relaxed);
                    if idx >= points.len() {
                        break;
                    }
                    let row = run_point(cfg, sweep.command, &points[idx], params, idx);
                    if tx.send((idx, row)).is_err() {
                        break;
                    }
                });
            }
        });
    }
    drop(tx);

    let mut slots: Vec<Option<Result<SweepRow, String>>> = (0..total).map(|_| None).collect();
    for (idx, row) in rx {
        slots[idx] = Some(row);
    }
    let mut rows = Vec::with_capacity(total);
    for (idx, slot) in slots.into_iter().enumerate() {
        let point = &points[idx];
        match slot {
            Some(Ok(row)) => rows.push(row),
            Some(Err(msg)) => {
                return Err(Failure::computation(format!(
                    "sweep point B={} c={}{} failed: {msg}",
                    point.budget,
                    point.fine,
                    point
                        .theta
                        .map(|t| format!(" theta={t}"))
                        .unwrap_or_default()
                )))
            }
            None => {
                return Err(Failure::computation(format!(
                    "sweep point {idx} produced no result"
                )))
            }
        }
    }
    Ok(rows)
}

fn run_point(
    cfg: &RunConfig,
    command: SweepCommand,
    point: &Point,
    params: &SweepParams,
    idx: usize,
) -> Result<SweepRow, String> {
    let instance = cfg.instance_with(point.budget, point.fine, point.theta)?;
    let estimate = match command {
        SweepCommand::EpsilonExact => epsilon_exact_threshold_auto(&instance),
        SweepCommand::EpsilonMc => epsilon_mc_threshold_with(
            &instance,
            params.samples,
            derive_seed(params.seed, idx as u64),
            params.delta,
            1,
        ),
        SweepCommand::EpsilonTopk => epsilon_uniform_k(&instance),
        SweepCommand::EpsilonDsic => epsilon_dsic_topk(&instance),
    }
    .map_err(|e| e.to_string())?;
    Ok(SweepRow {
        budget: point.budget,
        fine: point.fine,
        theta: point.theta,
        epsilon: estimate.epsilon,
        raw_max_gain: estimate.raw_max_gain,
        method: method_name(&estimate.method)?,
        p_u: estimate.p_suspicious,
        error_bound: estimate.error_bound,
        samples: estimate.samples,
        seed: estimate.seed,
    })
}

fn method_name(method: &auditgames::verification::Method) -> Result<String, String> {
    match serde_json::to_value(method).map_err(|e| e.to_string())? {
        Value::String(s) => Ok(s),
        other => Err(format!("unexpected method encoding {other}")),
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String, String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "B",
            "c",
            "theta",
            "epsilon",
            "raw_max_gain",
            "method",
            "p_U",
            "error_bound",
            "samples",
            "seed",
        ])
        .map_err(|e| e.to_string())?;
    let opt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let opt_u = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        writer
            .write_record([
                row.budget.to_string(),
                row.fine.to_string(),
                opt_f(row.theta),
                row.epsilon.to_string(),
                row.raw_max_gain.to_string(),
                row.method.clone(),
                opt_f(row.p_u),
                opt_f(row.error_bound),
                opt_u(row.samples),
                opt_u(row.seed),
            ])
            .map_err(|e| e.to_string())?;
    }
    let bytes = writer.into_inner().map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|e| e.to_string())
}

pub fn rows_to_json(rows: &[SweepRow]) -> Value {
    Value::Array(
        rows.iter()
            .map(|row| {
                let mut m = Map::new();
                m.insert("B".into(), Value::from(row.budget));
                m.insert("c".into(), Value::from(row.fine));
                if let Some(theta) = row.theta {
                    m.insert("theta".into(), Value::from(theta));
                }
                m.insert("epsilon".into(), Value::from(row.epsilon));
                m.insert("raw_max_gain".into(), Value::from(row.raw_max_gain));
                m.insert("method".into(), Value::from(row.method.clone()));
                if let Some(p) = row.p_u {
                    m.insert("p_U".into(), Value::from(p));
                }
                if let Some(b) = row.error_bound {
                    m.insert("error_bound".into(), Value::from(b));
                }
                if let Some(s) = row.samples {
                    m.insert("samples".into(), Value::from(s));
                }
                if let Some(s) = row.seed {
                    m.insert("seed".into(), Value::from(s));
                }
                Value::Object(m)
            })
            .collect(),
    )
}
