//! Grid evaluation of theory and Monte-Carlo estimates, and the CSV / JSON
//! formats they are written in.
//!
//! CSV columns, in order:
//! `sweep_id,method,p,T,n,m,sigma,gram_mode,gram_c,metric,source,value,stderr,trials,valid,seed`.
//! `source` is `theory` or `mc`; floats carry 17 significant digits; `stderr`
//! and `trials` are empty on theory rows. Every `mc` row directly follows the
//! `theory` row with the same key.

use std::cmp::Ordering;
use std::io::{Read, Write};

use serde::Serialize;

use crate::config::{ExperimentConfig, SweepPoint};
use crate::domain::{FeasibilityReport, GramMode, Method, TheoryPrediction};
use crate::error::{Error, Result};
use crate::learners::Learner;
use crate::montecarlo::{compare, metric_names, run_trials, CompareRule, Comparison, TrialPlan, TrialSpec, Verdict};
use crate::theory::{predict, TheoryInputs};

pub const CSV_HEADER: [&str; 16] = [
    "sweep_id", "method", "p", "T", "n", "m", "sigma", "gram_mode", "gram_c", "metric", "source",
    "value", "stderr", "trials", "valid", "seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Theory,
    Mc,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Theory => "theory",
            Source::Mc => "mc",
        }
    }
}

/// One line of sweep output.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep_id: String,
    pub method: Method,
    pub p: usize,
    pub num_tasks: usize,
    /// Sample count, or per-task counts joined by `;` when they differ.
    pub n: String,
    pub m: usize,
    pub sigma: f64,
    pub gram_mode: String,
    pub gram_c: Option<f64>,
    pub metric: String,
    pub source: Source,
    pub value: f64,
    pub stderr: Option<f64>,
    pub trials: Option<usize>,
    pub valid: bool,
    pub seed: u64,
}

/// Columns that identify a row apart from its source.
#[derive(Clone, Debug, PartialEq)]
pub struct RowKey<'a> {
    pub sweep_id: &'a str,
    pub method: Method,
    pub p: usize,
    pub num_tasks: usize,
    pub n: &'a str,
    pub m: usize,
    pub sigma: f64,
    pub gram_mode: &'a str,
    pub gram_c: Option<f64>,
    pub metric: &'a str,
}

impl SweepRow {
    pub fn key(&self) -> RowKey<'_> {
        RowKey {
            sweep_id: &self.sweep_id,
            method: self.method,
            p: self.p,
            num_tasks: self.num_tasks,
            n: &self.n,
            m: self.m,
            sigma: self.sigma,
            gram_mode: &self.gram_mode,
            gram_c: self.gram_c,
            metric: &self.metric,
        }
    }

    fn record(&self) -> [String; 16] {
        let opt_f = |x: Option<f64>| x.map(format_float).unwrap_or_default();
        [
            self.sweep_id.clone(),
            self.method.to_string(),
            self.p.to_string(),
            self.num_tasks.to_string(),
            self.n.clone(),
            self.m.to_string(),
            format_float(self.sigma),
            self.gram_mode.clone(),
            opt_f(self.gram_c),
            self.metric.clone(),
            self.source.as_str().to_string(),
            format_float(self.value),
            opt_f(self.stderr),
            self.trials.map(|t| t.to_string()).unwrap_or_default(),
            self.valid.to_string(),
            self.seed.to_string(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let bad = |col: &str, v: &str| Error::Schema(format!("bad CSV value '{v}' in column {col}"));
        let get = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| get(i).parse::<usize>().map_err(|_| bad(CSV_HEADER[i], get(i)));
        let float = |i: usize| parse_float(get(i)).ok_or_else(|| bad(CSV_HEADER[i], get(i)));
        let opt_float = |i: usize| {
            if get(i).is_empty() {
                Ok(None)
            } else {
                float(i).map(Some)
            }
        };
        Ok(Self {
            sweep_id: get(0).to_string(),
            method: get(1).parse()?,
            p: int(2)?,
            num_tasks: int(3)?,
            n: get(4).to_string(),
            m: int(5)?,
            sigma: float(6)?,
            gram_mode: get(7).to_string(),
            gram_c: opt_float(8)?,
            metric: get(9).to_string(),
            source: match get(10) {
                "theory" => Source::Theory,
                "mc" => Source::Mc,
                v => return Err(bad("source", v)),
            },
            value: float(11)?,
            stderr: opt_float(12)?,
            trials: if get(13).is_empty() { None } else { Some(int(13)?) },
            valid: get(14).parse().map_err(|_| bad("valid", get(14)))?,
            seed: get(15).parse().map_err(|_| bad("seed", get(15)))?,
        })
    }
}

/// Formats `x` with 17 significant digits in the style of C's `%.17g`
/// (trailing zeros removed), which round-trips every `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    }
}

/// Inverse of [`format_float`].
pub fn parse_float(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if let Some(missing) = CSV_HEADER.iter().find(|c| !header.iter().any(|h| h == **c)) {
        return Err(Error::Schema(format!("missing column '{missing}'")));
    }
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Schema(format!(
            "expected columns {}, found {}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.records().map(|rec| SweepRow::from_record(&rec?)).collect()
}

/// Closed-form prediction at one sweep point.
pub fn predict_point(cfg: &ExperimentConfig, pt: &SweepPoint) -> Result<TheoryPrediction> {
    let inp = TheoryInputs::new(pt.p as f64, cfg.sample_counts.clone(), pt.sigma, cfg.gram.clone())?
        .with_uniform_memory(pt.m);
    predict(cfg.method, &inp)
}

fn row_template(cfg: &ExperimentConfig, pt: &SweepPoint) -> SweepRow {
    let n = match cfg.sample_counts.iter().all(|&n| n == cfg.sample_counts[0]) {
        true => cfg.sample_counts[0].to_string(),
        false => cfg
            .sample_counts
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    };
    let (gram_mode, gram_c) = match cfg.gram.mode() {
        GramMode::Equi { c } => ("equi".to_string(), Some(c)),
        GramMode::Explicit => ("explicit".to_string(), None),
    };
    SweepRow {
        sweep_id: cfg.name.clone(),
        method: cfg.method,
        p: pt.p,
        num_tasks: cfg.num_tasks(),
        n,
        m: pt.m,
        sigma: pt.sigma,
        gram_mode,
        gram_c,
        metric: String::new(),
        source: Source::Theory,
        value: f64::NAN,
        stderr: None,
        trials: None,
        valid: false,
        seed: cfg.seed,
    }
}

/// Sweep points sorted by `(σ, m, p)`.
pub fn sorted_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut pts = cfg.points();
    pts.sort_by(|a, b| {
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.m.cmp(&b.m))
            .then(a.p.cmp(&b.p))
    });
    pts.dedup();
    pts
}

fn theory_rows_at(cfg: &ExperimentConfig, pt: &SweepPoint) -> Result<(TheoryPrediction, Vec<SweepRow>)> {
    let pred = predict_point(cfg, pt)?;
    let rows = metric_names(cfg.method, cfg.num_tasks())
        .into_iter()
        .map(|metric| {
            let est = pred.metric(&metric).expect("theory provides every sweep metric");
            SweepRow {
                metric,
                value: est.value,
                valid: est.valid,
                ..row_template(cfg, pt)
            }
        })
        .collect();
    Ok((pred, rows))
}

/// Theory rows for every point of the sweep.
pub fn theory_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let mut out = Vec::new();
    for pt in sorted_points(cfg) {
        out.extend(theory_rows_at(cfg, &pt)?.1);
    }
    Ok(out)
}

/// Verdict for one metric at one point.
#[derive(Clone, Debug, Serialize)]
pub struct MetricSummary {
    pub metric: String,
    pub theory: f64,
    pub theory_valid: bool,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    #[serde(flatten)]
    pub comparison: Comparison,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointSummary {
    pub p: usize,
    pub m: usize,
    pub sigma: f64,
    pub rank_deficient_trials: usize,
    pub metrics: Vec<MetricSummary>,
}

/// Machine-readable account of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub sweep_id: String,
    pub method: Method,
    pub trials: usize,
    pub seed: u64,
    pub feasibility: FeasibilityReport,
    /// `false` when Monte-Carlo rows were not produced because the task
    /// geometry cannot be realised.
    pub simulated: bool,
    pub rule: CompareRule,
    pub points: Vec<PointSummary>,
    pub passed: usize,
    pub failed: usize,
    pub not_applicable: usize,
}

impl SweepSummary {
    fn new(cfg: &ExperimentConfig, simulated: bool) -> Self {
        Self {
            sweep_id: cfg.name.clone(),
            method: cfg.method,
            trials: cfg.trials,
            seed: cfg.seed,
            feasibility: cfg.gram.feasibility(),
            simulated,
            rule: cfg.rule,
            points: Vec::new(),
            passed: 0,
            failed: 0,
            not_applicable: 0,
        }
    }

    /// Summary of a theory-only evaluation.
    pub fn theory_only(cfg: &ExperimentConfig) -> Self {
        Self::new(cfg, false)
    }
}

/// Theory and Monte-Carlo rows of a sweep plus its summary.
#[derive(Clone, Debug)]
pub struct SweepOutput {
    /// Theory rows, each followed by its Monte-Carlo row.
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

impl SweepOutput {
    pub fn mc_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.source == Source::Mc)
    }

    pub fn theory_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.source == Source::Theory)
    }

    /// Looks up a row by point, metric and source.
    pub fn find(&self, p: usize, m: usize, sigma: f64, metric: &str, source: Source) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.p == p && r.m == m && r.sigma == sigma && r.metric == metric && r.source == source
        })
    }
}

/// Runs theory and Monte-Carlo at every sweep point. `progress` is called
/// before each point. Fails with [`Error::Infeasible`] before any work when
/// the task geometry cannot be realised.
pub fn simulate(
    cfg: &ExperimentConfig,
    learner: &Learner,
    mut progress: impl FnMut(&SweepPoint),
) -> Result<SweepOutput> {
    let feas = cfg.gram.feasibility();
    if !feas.feasible {
        return Err(Error::Infeasible {
            min_eigenvalue: feas.min_eigenvalue,
        });
    }
    let mut summary = SweepSummary::new(cfg, true);
    let mut rows = Vec::new();
    for pt in sorted_points(cfg) {
        progress(&pt);
        let (pred, theory) = theory_rows_at(cfg, &pt)?;
        let plan = TrialPlan {
            spec: TrialSpec {
                method: cfg.method,
                gram: cfg.gram.clone(),
                p: pt.p,
                sample_counts: cfg.sample_counts.clone(),
                sigma: pt.sigma,
                memory: vec![pt.m; cfg.num_tasks() - 1],
                policy: cfg.buffer_policy,
            },
            trials: cfg.trials,
            base_seed: cfg.seed,
        };
        let mc = run_trials(&plan, learner)?;
        let mut metrics = Vec::new();
        for trow in theory {
            let est = mc.get(&trow.metric).expect("every metric is estimated");
            let theory_est = pred.metric(&trow.metric).expect("theory metric");
            let cmp = compare(theory_est, est, cfg.rule);
            match cmp.verdict {
                Verdict::Pass => summary.passed += 1,
                Verdict::Fail => summary.failed += 1,
                Verdict::NotApplicable => summary.not_applicable += 1,
            }
            metrics.push(MetricSummary {
                metric: trow.metric.clone(),
                theory: theory_est.value,
                theory_valid: theory_est.valid,
                mc_mean: est.mean,
                mc_stderr: est.stderr,
                comparison: cmp,
            });
            let mrow = SweepRow {
                source: Source::Mc,
                value: est.mean,
                stderr: Some(est.stderr),
                trials: Some(est.trials),
                valid: est.mean.is_finite(),
                ..trow.clone()
            };
            rows.push(trow);
            rows.push(mrow);
        }
        summary.points.push(PointSummary {
            p: pt.p,
            m: pt.m,
            sigma: pt.sigma,
            rank_deficient_trials: mc.rank_deficient_trials,
            metrics,
        });
    }
    Ok(SweepOutput { rows, summary })
}

/// Index of the largest finite value, ties broken towards the first.
pub fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}
