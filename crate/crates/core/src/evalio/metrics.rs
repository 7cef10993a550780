use serde::{Deserialize, Serialize};

use super::flo::GroundTruthFlow;
use crate::correspondence::{Match, MatchSet};
use crate::error::{Error, Result};
use crate::flow::FlowField;

/// Default accuracy threshold in pixels.
pub const DEFAULT_THRESHOLD: f32 = 10.0;
/// Lattice spacing and neighborhood radius of the coverage metric.
pub const COVERAGE_STEP: usize = 10;

/// Per-pixel displacement inherited from the best match whose cell covers
/// the pixel. A match covers the `cell x cell` square centered on its
/// image-1 endpoint; the highest score wins, ties going to the lowest
/// `(y1, x1, y2, x2)`.
pub fn densify_matches(
    matches: &[Match],
    cell: f32,
    width: usize,
    height: usize,
) -> Vec<Option<(f32, f32)>> {
    let mut order: Vec<&Match> = matches.iter().collect();
    // paint worst first so the best ends on top
    order.sort_by(|a, b| {
        a.score.total_cmp(&b.score).then(
            (b.y1, b.x1, b.y2, b.x2)
                .partial_cmp(&(a.y1, a.x1, a.y2, a.x2))
                .unwrap(),
        )
    });
    let mut out = vec![None; width * height];
    let half = cell / 2.0;
    for m in order {
        // pixel x is covered iff x1 - half <= x + 0.5 < x1 + half
        let x0 = (m.x1 - half - 0.5).ceil().max(0.0) as usize;
        let x1 = ((m.x1 + half - 0.5).ceil().max(0.0) as usize).min(width);
        let y0 = (m.y1 - half - 0.5).ceil().max(0.0) as usize;
        let y1 = ((m.y1 + half - 0.5).ceil().max(0.0) as usize).min(height);
        let d = m.displacement();
        for y in y0..y1 {
            for x in x0..x1 {
                out[y * width + x] = Some(d);
            }
        }
    }
    out
}

/// Breakdown of accuracy@T.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Correct pixels over all pixels with valid ground truth.
    pub accuracy: f32,
    /// Covered pixels over valid pixels.
    pub covered: f32,
    /// Correct pixels over covered valid pixels (1 when none are covered).
    pub accuracy_covered: f32,
    pub valid_pixels: usize,
}

pub fn accuracy_report(matches: &MatchSet, gt: &GroundTruthFlow, t: f32) -> AccuracyReport {
    let (w, h) = (gt.flow.width(), gt.flow.height());
    let dense = densify_matches(&matches.matches, matches.cell_size, w, h);
    let (mut valid, mut covered, mut correct) = (0usize, 0usize, 0usize);
    for (i, d) in dense.iter().enumerate() {
        if !gt.valid[i] {
            continue;
        }
        valid += 1;
        if let Some((u, v)) = d {
            covered += 1;
            let (gu, gv) = (gt.flow.u()[i], gt.flow.v()[i]);
            if (u - gu).hypot(v - gv) < t {
                correct += 1;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f32 / b as f32 };
    AccuracyReport {
        accuracy: frac(correct, valid),
        covered: frac(covered, valid),
        accuracy_covered: if covered == 0 {
            1.0
        } else {
            frac(correct, covered)
        },
        valid_pixels: valid,
    }
}

/// Fraction of valid image-1 pixels whose inherited displacement lands
/// strictly within `t` pixels of the ground truth.
pub fn accuracy_at_t(matches: &MatchSet, gt: &GroundTruthFlow, t: f32) -> f32 {
    accuracy_report(matches, gt, t).accuracy
}

/// Endpoint error, overall and by ground-truth magnitude band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpeReport {
    pub epe: f32,
    /// `None` when the band holds no valid pixel.
    pub s0_10: Option<f32>,
    pub s10_40: Option<f32>,
    pub s40plus: Option<f32>,
    pub pixels: usize,
}

pub fn epe(flow: &FlowField, gt: &GroundTruthFlow) -> Result<EpeReport> {
    if (flow.width(), flow.height()) != (gt.flow.width(), gt.flow.height()) {
        return Err(Error::DimensionMismatch(format!(
            "flow is {}x{}, ground truth is {}x{}",
            flow.width(),
            flow.height(),
            gt.flow.width(),
            gt.flow.height()
        )));
    }
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for i in 0..gt.valid.len() {
        if !gt.valid[i] {
            continue;
        }
        let (gu, gv) = (gt.flow.u()[i] as f64, gt.flow.v()[i] as f64);
        let e = (flow.u()[i] as f64 - gu).hypot(flow.v()[i] as f64 - gv);
        let mag = gu.hypot(gv);
        let band = if mag < 10.0 {
            1
        } else if mag < 40.0 {
            2
        } else {
            3
        };
        for k in [0, band] {
            sums[k] += e;
            counts[k] += 1;
        }
    }
    let mean = |k: usize| (counts[k] > 0).then(|| (sums[k] / counts[k] as f64) as f32);
    Ok(EpeReport {
        epe: mean(0).unwrap_or(0.0),
        s0_10: mean(1),
        s10_40: mean(2),
        s40plus: mean(3),
        pixels: counts[0],
    })
}

/// Fraction of the points `(10i, 10j)` inside image 1 that have a match
/// image-1 endpoint within Chebyshev distance 10.
pub fn coverage(matches: &[Match], width: usize, height: usize) -> f32 {
    let step = COVERAGE_STEP;
    let (gx, gy) = (width.div_ceil(step), height.div_ceil(step));
    if gx == 0 || gy == 0 {
        return 0.0;
    }
    let r = step as f32;
    let mut hit = vec![false; gx * gy];
    for m in matches {
        let lo = |c: f32| ((c - r) / r).ceil().max(0.0) as usize;
        let hi = |c: f32, n: usize| (((c + r) / r).floor().max(-1.0) + 1.0).min(n as f32) as usize;
        for j in lo(m.y1)..hi(m.y1, gy) {
            for i in lo(m.x1)..hi(m.x1, gx) {
                hit[j * gx + i] = true;
            }
        }
    }
    hit.iter().filter(|h| **h).count() as f32 / hit.len() as f32
}

/// Metrics of one prediction; absent fields were not computed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub threshold: Option<f32>,
    pub accuracy_at_t: Option<f32>,
    pub accuracy_covered: Option<f32>,
    pub epe: Option<f32>,
    pub epe_s0_10: Option<f32>,
    pub epe_s10_40: Option<f32>,
    pub epe_s40plus: Option<f32>,
    pub coverage: Option<f32>,
    pub match_count: Option<usize>,
    pub pairs: usize,
}

impl MetricReport {
    pub fn for_matches(matches: &MatchSet, gt: &GroundTruthFlow, t: f32) -> Self {
        let acc = accuracy_report(matches, gt, t);
        MetricReport {
            threshold: Some(t),
            accuracy_at_t: Some(acc.accuracy),
            accuracy_covered: Some(acc.accuracy_covered),
            coverage: Some(coverage(
                &matches.matches,
                gt.flow.width(),
                gt.flow.height(),
            )),
            match_count: Some(matches.len()),
            pairs: 1,
            ..Default::default()
        }
    }

    pub fn for_flow(flow: &FlowField, gt: &GroundTruthFlow, t: f32) -> Result<Self> {
        let e = epe(flow, gt)?;
        // a dense flow is a match at every pixel
        let mut correct = 0usize;
        for i in 0..gt.valid.len() {
            if gt.valid[i] && (flow.u()[i] - gt.flow.u()[i]).hypot(flow.v()[i] - gt.flow.v()[i]) < t
            {
                correct += 1;
            }
        }
        let acc = correct as f32 / e.pixels.max(1) as f32;
        Ok(MetricReport {
            threshold: Some(t),
            accuracy_at_t: Some(acc),
            accuracy_covered: Some(acc),
            epe: Some(e.epe),
            epe_s0_10: e.s0_10,
            epe_s10_40: e.s10_40,
            epe_s40plus: e.s40plus,
            pairs: 1,
            ..Default::default()
        })
    }

    /// Field-wise mean over reports, each field over the reports that have it.
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        fn avg(xs: impl Iterator<Item = Option<f32>>) -> Option<f32> {
            let v: Vec<f64> = xs.flatten().map(f64::from).collect();
            (!v.is_empty()).then(|| (v.iter().sum::<f64>() / v.len() as f64) as f32)
        }
        let counts: Vec<usize> = reports.iter().filter_map(|r| r.match_count).collect();
        MetricReport {
            threshold: reports.iter().find_map(|r| r.threshold),
            accuracy_at_t: avg(reports.iter().map(|r| r.accuracy_at_t)),
            accuracy_covered: avg(reports.iter().map(|r| r.accuracy_covered)),
            epe: avg(reports.iter().map(|r| r.epe)),
            epe_s0_10: avg(reports.iter().map(|r| r.epe_s0_10)),
            epe_s10_40: avg(reports.iter().map(|r| r.epe_s10_40)),
            epe_s40plus: avg(reports.iter().map(|r| r.epe_s40plus)),
            coverage: avg(reports.iter().map(|r| r.coverage)),
            match_count: (!counts.is_empty()).then(|| {
                (counts.iter().sum::<usize>() as f64 / counts.len() as f64).round() as usize
            }),
            pairs: reports.iter().map(|r| r.pairs).sum(),
        }
    }

    /// `key value` lines, one per computed field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.push_str(k);
                s.push(' ');
                s.push_str(&v);
                s.push('\n');
            }
        };
        let f = |v: Option<f32>| v.map(|x| format!("{x:.6}"));
        put("pairs", Some(self.pairs.to_string()));
        put("threshold", self.threshold.map(|t| t.to_string()));
        put("accuracy_at_t", f(self.accuracy_at_t));
        put("accuracy_covered", f(self.accuracy_covered));
        put("epe", f(self.epe));
        put("epe_s0_10", f(self.epe_s0_10));
        put("epe_s10_40", f(self.epe_s10_40));
        put("epe_s40plus", f(self.epe_s40plus));
        put("coverage", f(self.coverage));
        put("match_count", self.match_count.map(|c| c.to_string()));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
