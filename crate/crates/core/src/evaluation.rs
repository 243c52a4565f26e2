//! Accuracy metrics per depth slice and their text/CSV renderings.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::learning::{TouchReport, TwoStageModel};
use crate::protocols::{Dataset, Sample};
use crate::sum::compensated_sum;

pub const SLICE_TOLERANCE_MM: f64 = 0.01;
pub const CLASSIFICATION_SLICES: [f64; 8] = [-0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const REGRESSION_SLICES: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 3.0, 5.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Median, mean and population standard deviation; `None` when empty.
pub fn summarize(values: &[f64]) -> Option<Stats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let mean = compensated_sum(v.iter().copied()) / n as f64;
    let var = compensated_sum(v.iter().map(|x| (x - mean) * (x - mean))) / n as f64;
    Some(Stats {
        median,
        mean,
        std: var.sqrt(),
    })
}

fn in_slice(s: &Sample, depth: f64) -> bool {
    (s.d - depth).abs() <= SLICE_TOLERANCE_MM
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSliceMetrics {
    pub depth_mm: f64,
    pub samples: usize,
    pub localization: Option<Stats>,
    pub depth_error: Option<Stats>,
    pub class_rate: Option<f64>,
}

/// Fraction of samples per slice whose touch / no-touch prediction matches
/// the ground truth (touch means depth >= 0). Empty slices get `None`.
pub fn classification_table(
    classify: impl Fn(&Sample) -> bool,
    test: &Dataset,
    slices: &[f64],
) -> Vec<(f64, usize, Option<f64>)> {
    slices
        .iter()
        .map(|&depth| {
            let members: Vec<&Sample> = test.samples.iter().filter(|s| in_slice(s, depth)).collect();
            let ok = members.iter().filter(|s| classify(s) == s.in_contact()).count();
            let rate = (!members.is_empty()).then(|| ok as f64 / members.len() as f64);
            (depth, members.len(), rate)
        })
        .collect()
}

/// Localization (Euclidean in x, y) and depth errors of the regressor on
/// every contact sample in each slice.
pub fn regression_table(
    regress: impl Fn(&Sample) -> [f64; 3],
    test: &Dataset,
    slices: &[f64],
) -> Vec<DepthSliceMetrics> {
    slices
        .iter()
        .map(|&depth| {
            let members: Vec<&Sample> = test
                .samples
                .iter()
                .filter(|s| s.in_contact() && in_slice(s, depth))
                .collect();
            let (mut loc, mut dep) = (Vec::new(), Vec::new());
            for s in &members {
                let [x, y, d] = regress(s);
                loc.push(((x - s.x).powi(2) + (y - s.y).powi(2)).sqrt());
                dep.push((d - s.d).abs());
            }
            DepthSliceMetrics {
                depth_mm: depth,
                samples: members.len(),
                localization: summarize(&loc),
                depth_error: summarize(&dep),
                class_rate: None,
            }
        })
        .collect()
}

/// Both tables for one test set, merged on depth and sorted.
pub fn evaluate(
    model: &TwoStageModel,
    test: &Dataset,
    class_slices: &[f64],
    reg_slices: &[f64],
) -> Vec<DepthSliceMetrics> {
    let class = classification_table(|s| model.is_touch(&s.frame), test, class_slices);
    let mut rows = regression_table(|s| model.regress(&s.frame), test, reg_slices);
    for (depth, n, rate) in class {
        match rows.iter_mut().find(|r| (r.depth_mm - depth).abs() < 1e-9) {
            Some(r) => r.class_rate = rate,
            None => rows.push(DepthSliceMetrics {
                depth_mm: depth,
                samples: n,
                localization: None,
                depth_error: None,
                class_rate: rate,
            }),
        }
    }
    rows.sort_by(|a, b| a.depth_mm.total_cmp(&b.depth_mm));
    rows
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// Machine-readable table, preceded by `#` lines naming its provenance.
pub fn to_csv(rows: &[DepthSliceMetrics], provenance: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in provenance {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str("depth_mm,loc_median,loc_mean,loc_std,depth_median,depth_mean,depth_std,class_rate\n");
    for r in rows {
        let l = r.localization;
        let d = r.depth_error;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.depth_mm,
            cell(l.map(|s| s.median)),
            cell(l.map(|s| s.mean)),
            cell(l.map(|s| s.std)),
            cell(d.map(|s| s.median)),
            cell(d.map(|s| s.mean)),
            cell(d.map(|s| s.std)),
            cell(r.class_rate),
        );
    }
    out
}

/// Aligned plain-text rendering; absent values print as "-".
pub fn to_text(title: &str, rows: &[DepthSliceMetrics]) -> String {
    let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
    let mut out = format!("{title}\n");
    let _ = writeln!(
        out,
        "{:>8} | {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9} | {:>10}",
        "depth", "loc med", "loc mean", "loc std", "dep med", "dep mean", "dep std", "touch rate"
    );
    let _ = writeln!(out, "{}", "-".repeat(94));
    for r in rows {
        let (l, d) = (r.localization, r.depth_error);
        let _ = writeln!(
            out,
            "{:>5.1} mm | {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9} | {:>10}",
            r.depth_mm,
            f(l.map(|s| s.median), 3),
            f(l.map(|s| s.mean), 3),
            f(l.map(|s| s.std), 3),
            f(d.map(|s| s.median), 3),
            f(d.map(|s| s.mean), 3),
            f(d.map(|s| s.std), 3),
            f(r.class_rate, 2),
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrowRecord {
    pub x_true: f64,
    pub y_true: f64,
    pub x_pred: f64,
    pub y_pred: f64,
    pub depth: f64,
}

/// One arrow per indentation classified as touch at `depth`, taken from the
/// first sample of that indentation inside the slice.
pub fn arrow_field_export(model: &TwoStageModel, test: &Dataset, depth: f64) -> Vec<ArrowRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in test.samples.iter().filter(|s| in_slice(s, depth)) {
        if !seen.insert((s.x.to_bits(), s.y.to_bits())) {
            continue;
        }
        if let TouchReport::Touch { x, y, .. } = model.predict(&s.frame) {
            out.push(ArrowRecord {
                x_true: s.x,
                y_true: s.y,
                x_pred: x,
                y_pred: y,
                depth: s.d,
            });
        }
    }
    out
}
