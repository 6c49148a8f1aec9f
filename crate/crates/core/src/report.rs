//! Prediction and classification instability plots: LOWESS envelopes,
//! plot data with a CSV form, and deterministic SVG rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::instability::InstabilityRecord;
use crate::precision::PrecisionRecord;

pub const DEFAULT_SPAN: f64 = 0.75;
pub const GRID_POINTS: usize = 100;
const MIN_POINTS: usize = 10;
/// Plotted coordinates are rounded to this step before deduplication.
const QUANTUM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub span: f64,
}

/// Local linear regression with tricube weights over the nearest
/// `ceil(span·N)` points, evaluated on an even grid over the x range.
/// Fitted values are clamped to the range of `ys`.
pub fn lowess(xs: &[f64], ys: &[f64], span: f64) -> Result<SmoothCurve> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < MIN_POINTS {
        return Err(Error::TooFewPoints { got: xs.len(), need: MIN_POINTS });
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::Domain(format!("span {span} not in (0, 1]")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Domain("lowess inputs must be finite".into()));
    }
    let mut pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pts.len();
    let k = ((span * n as f64).ceil() as usize).clamp(2, n);
    let (x_min, x_max) = (pts[0].0, pts[n - 1].0);
    let (y_min, y_max) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));

    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            if i == GRID_POINTS - 1 {
                x_max
            } else {
                x_min + (x_max - x_min) * i as f64 / (GRID_POINTS - 1) as f64
            }
        })
        .collect();
    let values = grid
        .iter()
        .map(|&g| {
            let lo = nearest_window(&pts, k, g);
            local_linear(&pts[lo..lo + k], g).clamp(y_min, y_max)
        })
        .collect();
    Ok(SmoothCurve { grid, values, span })
}

/// Start of the `k` sorted points nearest to `g`; they form a contiguous
/// run. Shifting right pays off while the entering point is closer than
/// the leaving one, which holds for a prefix of start positions.
fn nearest_window(pts: &[(f64, f64)], k: usize, g: f64) -> usize {
    let (mut lo, mut hi) = (0, pts.len() - k);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if g - pts[mid].0 > pts[mid + k].0 - g {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

fn local_linear(window: &[(f64, f64)], g: f64) -> f64 {
    let h = window.iter().map(|(x, _)| (x - g).abs()).fold(0.0, f64::max);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let weights: Vec<f64> = window
        .iter()
        .map(|(x, _)| {
            if h == 0.0 {
                1.0
            } else {
                let u = ((x - g).abs() / h).min(1.0);
                (1.0 - u * u * u).powi(3)
            }
        })
        .collect();
    for (&w, &(x, y)) in weights.iter().zip(window) {
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    if sw == 0.0 {
        // only the window edges, which carry zero weight
        return window.iter().map(|p| p.1).sum::<f64>() / window.len() as f64;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&w, &(x, y)) in weights.iter().zip(window) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    let spread = window.last().unwrap().0 - window[0].0;
    if sxx <= 1e-12 * sw * spread.max(f64::MIN_POSITIVE).powi(2) {
        return my;
    }
    my + sxy / sxx * (g - mx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    PredictionInstability,
    ClassificationInstability,
}

impl PlotKind {
    pub fn stem(self) -> &'static str {
        match self {
            PlotKind::PredictionInstability => "prediction_instability",
            PlotKind::ClassificationInstability => "classification_instability",
        }
    }

    fn y_max(self) -> f64 {
        match self {
            PlotKind::PredictionInstability => 1.0,
            PlotKind::ClassificationInstability => 0.5,
        }
    }

    fn y_label(self) -> &'static str {
        match self {
            PlotKind::PredictionInstability => "Uncertainty interval",
            PlotKind::ClassificationInstability => "Probability of misclassification",
        }
    }
}

/// `<run-id>_<plot-kind>.<ext>`
pub fn plot_file_name(run_id: &str, kind: &str, ext: &str) -> String {
    format!("{run_id}_{kind}.{ext}")
}

/// Everything drawn on one plot, in data coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub kind: PlotKind,
    pub title: String,
    /// `(x, y_low, y_high)` vertical intervals.
    pub segments: Vec<[f64; 3]>,
    pub points: Vec<[f64; 2]>,
    pub lower_curve: Option<SmoothCurve>,
    pub upper_curve: Option<SmoothCurve>,
    pub threshold: Option<f64>,
}

fn quantize(v: f64) -> i64 {
    (v / QUANTUM).round() as i64
}

fn unquantize(q: i64) -> f64 {
    q as f64 * QUANTUM
}

/// True risk against each individual's interval, with optional LOWESS
/// envelopes through the lower and upper limits.
pub fn prediction_instability_plot(records: &[PrecisionRecord], curves: bool, title: &str) -> Result<PlotData> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let segments: BTreeSet<[i64; 3]> =
        records.iter().map(|r| [quantize(r.true_risk), quantize(r.lower), quantize(r.upper)]).collect();
    let (lower_curve, upper_curve) = if curves && records.len() >= MIN_POINTS {
        let xs: Vec<f64> = records.iter().map(|r| r.true_risk).collect();
        let lo: Vec<f64> = records.iter().map(|r| r.lower).collect();
        let hi: Vec<f64> = records.iter().map(|r| r.upper).collect();
        (Some(lowess(&xs, &lo, DEFAULT_SPAN)?), Some(lowess(&xs, &hi, DEFAULT_SPAN)?))
    } else {
        (None, None)
    };
    Ok(PlotData {
        kind: PlotKind::PredictionInstability,
        title: title.to_string(),
        segments: segments.into_iter().map(|s| s.map(unquantize)).collect(),
        points: Vec::new(),
        lower_curve,
        upper_curve,
        threshold: None,
    })
}

/// True risk against the probability of landing on the other side of `t`.
pub fn classification_instability_plot(records: &[InstabilityRecord], t: f64, title: &str) -> Result<PlotData> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("threshold {t} not in (0, 1)")));
    }
    let points: BTreeSet<[i64; 2]> = records
        .iter()
        .map(|r| {
            let m = r.misclass_prob.ok_or_else(|| {
                Error::Domain(format!("row {} has no misclassification probability", r.row_index))
            })?;
            Ok([quantize(r.true_risk), quantize(m)])
        })
        .collect::<Result<_>>()?;
    Ok(PlotData {
        kind: PlotKind::ClassificationInstability,
        title: title.to_string(),
        segments: Vec::new(),
        points: points.into_iter().map(|p| p.map(unquantize)).collect(),
        lower_curve: None,
        upper_curve: None,
        threshold: Some(t),
    })
}

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl PlotData {
    fn px(&self, x: f64) -> f64 {
        LEFT + x * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - y / self.kind.y_max() * (HEIGHT - TOP - BOTTOM)
    }

    fn polyline(&self, curve: &SmoothCurve, class: &str, out: &mut String) {
        let pts: Vec<String> =
            curve.grid.iter().zip(&curve.values).map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(out, r#"<polyline class="{class}" points="{}"/>"#, pts.join(" "));
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(
            s,
            "<style>text{{font-family:sans-serif;font-size:12px}} .axis{{stroke:#000;stroke-width:1}} \
             .grid{{stroke:#ddd;stroke-width:0.5}} .seg{{stroke:#1f4e9a;stroke-width:0.8;stroke-opacity:0.5}} \
             .pt{{fill:#1f4e9a;fill-opacity:0.5}} .ref{{stroke:#888;stroke-dasharray:4 3}} \
             .rule{{stroke:#c0392b;stroke-width:1.2}} .env{{fill:none;stroke:#d35400;stroke-width:1.5}}</style>"
        );
        let _ = writeln!(s, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#fff"/>"##);
        let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&self.title));

        let y_max = self.kind.y_max();
        for i in 0..=5 {
            let fx = i as f64 / 5.0;
            let fy = fx * y_max;
            let (x, y) = (self.px(fx), self.py(fy));
            let _ = writeln!(
                s,
                r#"<line class="grid" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/>"#,
                self.py(0.0),
                self.py(y_max)
            );
            let _ = writeln!(
                s,
                r#"<line class="grid" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#,
                self.px(0.0),
                self.px(1.0)
            );
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{fx:.1}</text>"#, self.py(0.0) + 18.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{fy:.1}</text>"#, self.px(0.0) - 6.0, y + 4.0);
        }
        let _ = writeln!(
            s,
            r#"<line class="axis" x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}"/>"#,
            self.px(0.0),
            self.py(0.0),
            self.px(1.0)
        );
        let _ = writeln!(
            s,
            r#"<line class="axis" x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#,
            self.px(0.0),
            self.py(0.0),
            self.py(y_max)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">True risk</text>"#,
            self.px(0.5),
            HEIGHT - 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
            self.py(y_max / 2.0),
            self.kind.y_label()
        );

        if self.kind == PlotKind::PredictionInstability {
            let _ = writeln!(
                s,
                r#"<line class="ref" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                self.px(0.0),
                self.py(0.0),
                self.px(1.0),
                self.py(1.0)
            );
        }
        if let Some(t) = self.threshold {
            let _ = writeln!(
                s,
                r#"<line class="rule" x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#,
                self.px(t),
                self.py(0.0),
                self.py(y_max)
            );
        }
        for [x, lo, hi] in &self.segments {
            let _ = writeln!(
                s,
                r#"<line class="seg" x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#,
                self.px(*x),
                self.py(*lo),
                self.py(*hi)
            );
        }
        for [x, y] in &self.points {
            let _ = writeln!(s, r#"<circle class="pt" cx="{:.2}" cy="{:.2}" r="2"/>"#, self.px(*x), self.py(*y));
        }
        for c in [&self.lower_curve, &self.upper_curve].into_iter().flatten() {
            self.polyline(c, "env", &mut s);
        }
        s.push_str("</svg>\n");
        s
    }

    /// Long-format plot data: one row per plotted element.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["element", "x", "y0", "y1", "label"])?;
        w.write_record(["meta", "", "", "", self.kind.stem()])?;
        w.write_record(["title", "", "", "", &self.title])?;
        if let Some(t) = self.threshold {
            w.write_record(["threshold", &format!("{t}"), "", "", ""])?;
        }
        for [x, lo, hi] in &self.segments {
            w.write_record(["segment", &format!("{x}"), &format!("{lo}"), &format!("{hi}"), ""])?;
        }
        for [x, y] in &self.points {
            w.write_record(["point", &format!("{x}"), &format!("{y}"), "", ""])?;
        }
        for (name, c) in [("lower_curve", &self.lower_curve), ("upper_curve", &self.upper_curve)] {
            if let Some(c) = c {
                for (x, y) in c.grid.iter().zip(&c.values) {
                    w.write_record([name, &format!("{x}"), &format!("{y}"), "", &format!("{}", c.span)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut plot = PlotData {
            kind: PlotKind::PredictionInstability,
            title: String::new(),
            segments: Vec::new(),
            points: Vec::new(),
            lower_curve: None,
            upper_curve: None,
            threshold: None,
        };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let num = |c: usize| -> Result<f64> {
                rec[c].parse().map_err(|e| Error::Parse {
                    row,
                    column: ["element", "x", "y0", "y1", "label"][c].into(),
                    message: format!("{e}"),
                })
            };
            match &rec[0] {
                "meta" => {
                    plot.kind = match &rec[4] {
                        "prediction_instability" => PlotKind::PredictionInstability,
                        "classification_instability" => PlotKind::ClassificationInstability,
                        other => {
                            return Err(Error::Parse { row, column: "label".into(), message: format!("unknown plot kind {other}") })
                        }
                    }
                }
                "title" => plot.title = rec[4].to_string(),
                "threshold" => plot.threshold = Some(num(1)?),
                "segment" => plot.segments.push([num(1)?, num(2)?, num(3)?]),
                "point" => plot.points.push([num(1)?, num(2)?]),
                name @ ("lower_curve" | "upper_curve") => {
                    let slot = if name == "lower_curve" { &mut plot.lower_curve } else { &mut plot.upper_curve };
                    let c = slot.get_or_insert_with(|| SmoothCurve { grid: Vec::new(), values: Vec::new(), span: 0.0 });
                    c.grid.push(num(1)?);
                    c.values.push(num(2)?);
                    c.span = num(4)?;
                }
                other => {
                    return Err(Error::Parse { row, column: "element".into(), message: format!("unknown element {other}") })
                }
            }
        }
        Ok(plot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn lowess_constant_and_linear() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.731).sin() + i as f64 * 0.05).collect();
        let c = lowess(&xs, &[0.3; 40], 0.75).unwrap();
        assert_eq!(c.grid.len(), GRID_POINTS);
        assert!(c.values.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let c = lowess(&xs, &xs, 0.75).unwrap();
        for (g, v) in c.grid.iter().zip(&c.values) {
            assert!((g - v).abs() < 1e-6, "{g} {v}");
        }
        assert!(c.grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn lowess_recovers_sine() {
        let mut g = RngStream::new(5, "lowess").generator();
        let sd = 0.1;
        let xs: Vec<f64> = (0..400).map(|i| i as f64 / 399.0 * std::f64::consts::TAU).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + sd * g.sample::<f64, _>(StandardNormal)).collect();
        let c = lowess(&xs, &ys, 0.3).unwrap();
        let worst = c.grid.iter().zip(&c.values).map(|(x, v)| (x.sin() - v).abs()).fold(0.0, f64::max);
        assert!(worst <= 3.0 * sd, "{worst}");
    }

    #[test]
    fn lowess_preconditions() {
        let xs = [1.0; 9];
        assert!(matches!(lowess(&xs, &xs, 0.5), Err(Error::TooFewPoints { got: 9, need: 10 })));
        let xs = [1.0; 12];
        assert!(lowess(&xs, &xs, 0.0).is_err());
        assert!(lowess(&xs, &xs[..11], 0.5).is_err());
    }

    #[test]
    fn lowess_stays_in_range_with_ties() {
        // few distinct x values, as in a cell-table population
        let xs: Vec<f64> = (0..200).map(|i| [0.01, 0.05, 0.13, 0.49][i % 4]).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 2.0 + (i % 3) as f64 * 0.1).collect();
        let c = lowess(&xs, &ys, 0.75).unwrap();
        let (lo, hi) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(0.0, f64::max));
        assert!(c.values.iter().all(|v| v.is_finite() && *v >= lo && *v <= hi));
    }

    fn record(i: usize, p: f64, w: f64) -> PrecisionRecord {
        PrecisionRecord { row_index: i, true_risk: p, var_logit: 0.1, lower: p - w / 2.0, upper: p + w / 2.0, width: w }
    }

    #[test]
    fn single_record_plot() {
        let plot = prediction_instability_plot(&[record(0, 0.3, 0.1)], true, "one").unwrap();
        assert_eq!(plot.segments.len(), 1);
        assert!(plot.lower_curve.is_none());
        assert!(prediction_instability_plot(&[], false, "none").is_err());
    }

    #[test]
    fn segments_deduplicated() {
        let recs: Vec<PrecisionRecord> = (0..50).map(|i| record(i, [0.1, 0.2][i % 2], 0.05)).collect();
        let plot = prediction_instability_plot(&recs, true, "dup").unwrap();
        assert_eq!(plot.segments.len(), 2);
        assert!(plot.upper_curve.is_some());
    }

    #[test]
    fn svg_deterministic_and_rerenderable_from_csv() {
        let recs: Vec<PrecisionRecord> = (0..30).map(|i| record(i, 0.02 + i as f64 * 0.02, 0.01 * i as f64)).collect();
        let plot = prediction_instability_plot(&recs, true, "n = 453 <test>").unwrap();
        let svg = plot.to_svg();
        assert_eq!(svg, prediction_instability_plot(&recs, true, "n = 453 <test>").unwrap().to_svg());
        assert!(svg.contains("&lt;test&gt;"));
        let mut buf = Vec::new();
        plot.write_csv(&mut buf).unwrap();
        let back = PlotData::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, plot);
        assert_eq!(back.to_svg(), svg);
    }

    #[test]
    fn classification_plot_threshold_points() {
        let recs = vec![
            InstabilityRecord { row_index: 0, true_risk: 0.06, misclass_prob: Some(0.5), mape: 0.01 },
            InstabilityRecord { row_index: 1, true_risk: 0.13, misclass_prob: Some(0.05), mape: 0.02 },
        ];
        let plot = classification_instability_plot(&recs, 0.06, "t").unwrap();
        assert!(plot.points.contains(&[0.06, 0.5]));
        assert_eq!(plot.threshold, Some(0.06));
        let svg = plot.to_svg();
        assert!(svg.contains(r#"class="rule""#));
        let mut buf = Vec::new();
        plot.write_csv(&mut buf).unwrap();
        assert_eq!(PlotData::read_csv(buf.as_slice()).unwrap().to_svg(), svg);
        let none = [InstabilityRecord { row_index: 0, true_risk: 0.1, misclass_prob: None, mape: 0.0 }];
        assert!(classification_instability_plot(&none, 0.06, "t").is_err());
    }

    #[test]
    fn file_names() {
        assert_eq!(plot_file_name("foot", "prediction_instability_n453", "svg"), "foot_prediction_instability_n453.svg");
    }
}
