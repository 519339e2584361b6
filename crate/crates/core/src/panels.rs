//! Plot panel descriptions and the data series they select from sweep CSV
//! rows.
//!
//! A panel spec is a small JSON document: a title, an x-axis scale, a
//! default metric and a list of series, each a filter on the CSV key
//! columns. [`extract`] turns CSV rows into the exact points a plotting
//! front end draws: valid theory rows as lines, Monte-Carlo rows as dots
//! with one-standard-error bars, and the interpolation threshold of each
//! series as a vertical marker.
//!
//! ```json
//! {
//!   "title": "fig1a",
//!   "x_scale": "log",
//!   "metric": "G",
//!   "series": [{"label": "mtl sigma=0", "filter": {"method": "mtl", "sigma": 0.0}}]
//! }
//! ```

use serde::{Deserialize, Serialize};

use crate::domain::Method;
use crate::error::{Error, Result};
use crate::presets::{PANELS, REPLAY_MEMORY};
use crate::sweep::{Source, SweepRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    #[default]
    Linear,
    Log,
}

/// Row predicate; unset fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Overrides the panel metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
}

impl RowFilter {
    fn matches(&self, row: &SweepRow, metric: &str) -> bool {
        self.sweep_id.as_ref().is_none_or(|s| *s == row.sweep_id)
            && self.method.is_none_or(|m| m == row.method)
            && self.sigma.is_none_or(|s| s == row.sigma)
            && self.m.is_none_or(|m| m == row.m)
            && self.metric.as_deref().unwrap_or(metric) == row.metric
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub label: String,
    pub filter: RowFilter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub title: String,
    #[serde(default)]
    pub x_scale: AxisScale,
    pub metric: String,
    pub series: Vec<SeriesSpec>,
}

impl PanelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("panel spec serialises")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinePoint {
    pub p: usize,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DotPoint {
    pub p: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Points of one series, sorted by `p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub label: String,
    /// Samples in the fit whose interpolation threshold the curve shows.
    pub threshold: Option<usize>,
    pub theory: Vec<LinePoint>,
    pub mc: Vec<DotPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PanelData {
    pub title: String,
    pub x_scale: AxisScale,
    pub metric: String,
    pub series: Vec<Series>,
}

/// Samples fitted at the end of the run described by `row`: `n` for a
/// single task, `Σ n_t` for the joint fit, and the final replay design for
/// continual learners.
pub fn interpolation_threshold(row: &SweepRow) -> Option<usize> {
    let counts: Vec<usize> = row.n.split(';').map(|s| s.parse().ok()).collect::<Option<_>>()?;
    let counts = if counts.len() == 1 {
        vec![counts[0]; row.num_tasks]
    } else {
        counts
    };
    let last = *counts.last()?;
    Some(match row.method {
        Method::Stl => counts[0],
        Method::Mtl => counts.iter().sum(),
        Method::SeqFinetune => last,
        Method::PureReplay | Method::ReplayReg => last + row.m * (counts.len() - 1),
    })
}

/// Selects the series of `spec` from `rows`.
pub fn extract(rows: &[SweepRow], spec: &PanelSpec) -> PanelData {
    let series = spec
        .series
        .iter()
        .map(|s| {
            let selected: Vec<&SweepRow> = rows.iter().filter(|r| s.filter.matches(r, &spec.metric)).collect();
            let mut theory: Vec<LinePoint> = selected
                .iter()
                .filter(|r| r.source == Source::Theory && r.valid && r.value.is_finite())
                .map(|r| LinePoint { p: r.p, value: r.value })
                .collect();
            let mut mc: Vec<DotPoint> = selected
                .iter()
                .filter(|r| r.source == Source::Mc && r.value.is_finite())
                .map(|r| DotPoint {
                    p: r.p,
                    mean: r.value,
                    stderr: r.stderr.unwrap_or(0.0),
                })
                .collect();
            theory.sort_by_key(|pt| pt.p);
            mc.sort_by_key(|pt| pt.p);
            let threshold = selected.first().and_then(|r| interpolation_threshold(r));
            Series {
                label: s.label.clone(),
                threshold,
                theory,
                mc,
            }
        })
        .collect();
    PanelData {
        title: spec.title.clone(),
        x_scale: spec.x_scale,
        metric: spec.metric.clone(),
        series,
    }
}

/// Panel spec matching the rows written by `figure NAME`.
pub fn default_panel(name: &str) -> Result<PanelSpec> {
    let series = match name {
        "fig1a" | "fig1b" => [Method::Stl, Method::Mtl]
            .into_iter()
            .flat_map(|method| {
                [0.0, 1.0].into_iter().map(move |sigma| SeriesSpec {
                    label: format!("{method} sigma={sigma}"),
                    filter: RowFilter {
                        method: Some(method),
                        sigma: Some(sigma),
                        ..Default::default()
                    },
                })
            })
            .collect(),
        "fig1c" | "fig1d" => REPLAY_MEMORY
            .iter()
            .map(|&m| SeriesSpec {
                label: format!("m={m}"),
                filter: RowFilter {
                    method: Some(Method::PureReplay),
                    m: Some(m),
                    ..Default::default()
                },
            })
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown figure '{other}' (expected one of {})",
                PANELS.join(", ")
            )))
        }
    };
    Ok(PanelSpec {
        title: name.to_string(),
        x_scale: AxisScale::Log,
        metric: "G".into(),
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, p: usize, m: usize, sigma: f64, source: Source, value: f64, valid: bool) -> SweepRow {
        SweepRow {
            sweep_id: "x".into(),
            method,
            p,
            num_tasks: 10,
            n: "50".into(),
            m,
            sigma,
            gram_mode: "equi".into(),
            gram_c: Some(0.5),
            metric: "G".into(),
            source,
            value,
            stderr: (source == Source::Mc).then_some(0.1),
            trials: (source == Source::Mc).then_some(10),
            valid,
            seed: 0,
        }
    }

    #[test]
    fn thresholds_follow_the_final_fit() {
        assert_eq!(interpolation_threshold(&row(Method::Stl, 1, 0, 0.0, Source::Theory, 1.0, true)), Some(50));
        assert_eq!(interpolation_threshold(&row(Method::Mtl, 1, 0, 0.0, Source::Theory, 1.0, true)), Some(500));
        assert_eq!(
            interpolation_threshold(&row(Method::PureReplay, 1, 25, 0.0, Source::Theory, 1.0, true)),
            Some(275)
        );
        let mut r = row(Method::Mtl, 1, 0, 0.0, Source::Theory, 1.0, true);
        r.num_tasks = 2;
        r.n = "10;30".into();
        assert_eq!(interpolation_threshold(&r), Some(40));
    }

    #[test]
    fn extraction_drops_invalid_theory_and_sorts() {
        let rows = vec![
            row(Method::Mtl, 800, 0, 0.0, Source::Theory, 0.6, true),
            row(Method::Mtl, 800, 0, 0.0, Source::Mc, 0.61, true),
            row(Method::Mtl, 500, 0, 0.0, Source::Theory, f64::NAN, false),
            row(Method::Mtl, 600, 0, 0.0, Source::Theory, 0.9, true),
            row(Method::Mtl, 600, 0, 1.0, Source::Theory, 5.0, true),
            row(Method::Stl, 600, 0, 0.0, Source::Theory, 0.9, true),
        ];
        let spec = PanelSpec {
            title: "t".into(),
            x_scale: AxisScale::Log,
            metric: "G".into(),
            series: vec![SeriesSpec {
                label: "mtl".into(),
                filter: RowFilter {
                    method: Some(Method::Mtl),
                    sigma: Some(0.0),
                    ..Default::default()
                },
            }],
        };
        let data = extract(&rows, &spec);
        let s = &data.series[0];
        assert_eq!(s.theory.iter().map(|p| p.p).collect::<Vec<_>>(), vec![600, 800]);
        assert_eq!(s.mc, vec![DotPoint { p: 800, mean: 0.61, stderr: 0.1 }]);
        assert_eq!(s.threshold, Some(500));
    }

    #[test]
    fn default_panels_round_trip() {
        for name in PANELS {
            let spec = default_panel(name).unwrap();
            assert_eq!(PanelSpec::from_json(&spec.to_json()).unwrap(), spec);
        }
        assert!(default_panel("fig9").is_err());
        assert!(PanelSpec::from_json(r#"{"title":"a","metric":"G","series":[],"extra":1}"#).is_err());
    }
}
