use std::fmt::Write as _;

use serde::Serialize;

use crate::data::Mask;
use crate::error::{Error, Result};

use super::distance::{asd_with, dice, hd95, AsdMode};
use super::stats::{paired_t_test, TTest};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case: String,
    pub dice: f64,
    /// Missing when either mask is empty.
    pub hd95_mm: Option<f64>,
    pub asd_mm: Option<f64>,
}

pub fn evaluate_case(case: &str, pred: &Mask, reference: &Mask, mode: AsdMode) -> Result<CaseMetrics> {
    let dice = dice(pred, reference)?;
    let defined = pred.count() > 0 && reference.count() > 0;
    let (hd95_mm, asd_mm) = if defined {
        (Some(hd95(pred, reference)?), Some(asd_with(pred, reference, mode)?))
    } else {
        (None, None)
    };
    Ok(CaseMetrics {
        case: case.to_string(),
        dice,
        hd95_mm,
        asd_mm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Dice,
    Hd95,
    Asd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dice, Metric::Hd95, Metric::Asd];

    pub fn column(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Hd95 => "hd95_mm",
            Metric::Asd => "asd_mm",
        }
    }

    fn of(self, c: &CaseMetrics) -> Option<f64> {
        match self {
            Metric::Dice => Some(c.dice),
            Metric::Hd95 => c.hd95_mm,
            Metric::Asd => c.asd_mm,
        }
    }
}

/// Mean and sample standard deviation over the cases where a metric is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std, n })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub method: Option<String>,
    pub cases: Vec<CaseMetrics>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.cases.iter().filter_map(|c| m.of(c)).collect()
    }

    pub fn summary(&self, m: Metric) -> Option<Summary> {
        Summary::of(&self.values(m))
    }

    /// One row per case followed by `mean` and `std` rows. Missing
    /// distances are empty cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,dice,hd95_mm,asd_mm\n");
        for c in &self.cases {
            let _ = writeln!(s, "{},{},{},{}", c.case, c.dice, cell(c.hd95_mm), cell(c.asd_mm));
        }
        let sums = Metric::ALL.map(|m| self.summary(m));
        let _ = writeln!(s, "mean,{}", sums.map(|x| cell(x.map(|x| x.mean))).join(","));
        let _ = writeln!(s, "std,{}", sums.map(|x| cell(x.map(|x| x.std))).join(","));
        s
    }

    /// Structured-text rendering with per-case values and aggregates.
    pub fn to_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(skip_serializing_if = "Option::is_none")]
            method: Option<&'a str>,
            aggregate: std::collections::BTreeMap<&'static str, Summary>,
            cases: &'a [CaseMetrics],
        }
        let aggregate = Metric::ALL.iter().filter_map(|&m| self.summary(m).map(|s| (m.column(), s))).collect();
        toml::to_string(&Doc {
            method: self.method.as_deref(),
            aggregate,
            cases: &self.cases,
        })
        .map_err(|e| Error::config(format!("serializing report: {e}")))
    }

    /// Paired t-tests against another report over the cases both share,
    /// matched by name. Metrics with fewer than two shared values are skipped.
    pub fn compare(&self, other: &MetricsReport) -> Vec<(Metric, TTest)> {
        Metric::ALL
            .iter()
            .filter_map(|&m| {
                let (x, y): (Vec<f64>, Vec<f64>) = self
                    .cases
                    .iter()
                    .filter_map(|c| {
                        let o = other.cases.iter().find(|o| o.case == c.case)?;
                        Some((m.of(c)?, m.of(o)?))
                    })
                    .unzip();
                paired_t_test(&x, &y).ok().map(|t| (m, t))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(name: &str, dice: f64, hd: Option<f64>) -> CaseMetrics {
        CaseMetrics {
            case: name.into(),
            dice,
            hd95_mm: hd,
            asd_mm: hd.map(|h| h / 4.0),
        }
    }

    #[test]
    fn csv_footer_holds_mean_and_sample_std() {
        let r = MetricsReport {
            method: None,
            cases: vec![case("a", 0.5, Some(2.0)), case("b", 1.0, None), case("c", 0.75, Some(4.0))],
        };
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "case,dice,hd95_mm,asd_mm");
        assert_eq!(lines[2], "b,1,,");
        assert_eq!(lines[4], "mean,0.75,3,0.75");
        assert_eq!(lines[5], "std,0.25,1.4142135623730951,0.3535533905932738");
    }

    #[test]
    fn comparing_with_itself_gives_unit_p() {
        let r = MetricsReport {
            method: Some("x".into()),
            cases: vec![case("a", 0.5, Some(2.0)), case("b", 0.7, Some(1.0))],
        };
        let cmp = r.compare(&r);
        assert_eq!(cmp.len(), 3);
        assert!(cmp.iter().all(|(_, t)| t.p == 1.0));
        assert!(r.to_toml().unwrap().contains("[aggregate.dice]"));
    }
}
