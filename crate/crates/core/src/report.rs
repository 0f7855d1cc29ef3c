//! Config parsing and result emission: CSV tables, JSON documents, and
//! standalone log-log SVG plots with no external resources.

use crate::error::Error;
use crate::experiments::{ExperimentConfig, FitResult, StudyResult};
use crate::extreal::ExtReal;
use crate::Result;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Parses and validates a JSON configuration document. Unknown keys are
/// rejected; malformed JSON reports line and column.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a config back to canonical pretty JSON.
pub fn config_to_json(cfg: &ExperimentConfig) -> String {
    let mut text = serde_json::to_string_pretty(cfg).expect("config serializes");
    text.push('\n');
    text
}

fn fmt_ext(x: ExtReal) -> String {
    if x.0.is_infinite() {
        if x.0 > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{:.11e}", x.0)
    }
}

/// Renders a study as CSV: fixed header, one row per (point, statistic),
/// 12 significant digits, `inf` sentinel for infinite values.
pub fn emit_csv(result: &StudyResult) -> String {
    let mut out = String::from("n,d,trials,stat,mean,median,stderr\n");
    for pt in &result.points {
        for s in &pt.stats {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                pt.n,
                pt.d,
                pt.trials,
                s.stat,
                fmt_ext(s.mean),
                fmt_ext(s.median),
                fmt_ext(s.stderr)
            );
        }
    }
    out
}

/// Renders a study as pretty JSON with a trailing newline.
pub fn emit_json(result: &StudyResult) -> String {
    let mut text = serde_json::to_string_pretty(result).expect("result serializes");
    text.push('\n');
    text
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 440.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 50.0;

struct LogAxis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_span: f64,
    flip: bool,
}

impl LogAxis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_span: f64, flip: bool) -> Self {
        let (mut lo, mut hi) = (lo.ln(), hi.ln());
        if (hi - lo).abs() < 1e-12 {
            lo -= std::f64::consts::LN_2;
            hi += std::f64::consts::LN_2;
        }
        LogAxis { lo, hi, px_lo, px_span, flip }
    }

    fn at(&self, v: f64) -> f64 {
        let t = (v.ln() - self.lo) / (self.hi - self.lo);
        let t = if self.flip { 1.0 - t } else { t };
        self.px_lo + t * self.px_span
    }

    /// Decade ticks plus minor ticks at 2 and 5, restricted to range.
    fn ticks(&self) -> Vec<(f64, bool)> {
        let lo10 = (self.lo / std::f64::consts::LN_10).floor() as i32 - 1;
        let hi10 = (self.hi / std::f64::consts::LN_10).ceil() as i32 + 1;
        let mut out = Vec::new();
        for e in lo10..=hi10 {
            for &(mant, major) in &[(1.0, true), (2.0, false), (5.0, false)] {
                let v: f64 = mant * 10f64.powi(e);
                let lv = v.ln();
                if lv >= self.lo - 1e-9 && lv <= self.hi + 1e-9 {
                    out.push((v, major));
                }
            }
        }
        out
    }
}

/// Renders a log-log plot of one statistic's mean against sqrt(d)/n:
/// markers with stderr whiskers, a dashed reference line proportional to
/// sqrt(d)/n calibrated through the geometric mean of the points, and,
/// when a fit is given, the fitted line with its slope annotated.
///
/// Points whose mean is zero, negative or infinite are skipped; if none
/// remain the emission fails naming the statistic.
pub fn emit_svg_loglog(
    result: &StudyResult,
    fit: Option<&FitResult>,
    stat: &str,
    reference_label: &str,
) -> Result<String> {
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    for p in &result.points {
        let Some(s) = p.stats.iter().find(|s| s.stat == stat) else { continue };
        let (y, se) = (s.mean.0, s.stderr.0);
        if y.is_finite() && y > 0.0 {
            let x = (p.d as f64).sqrt() / p.n as f64;
            pts.push((x, y, if se.is_finite() { se } else { 0.0 }));
        }
    }
    if pts.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "statistic `{stat}` has no positive finite mean to plot"
        )));
    }

    let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = pts.iter().map(|p| p.0).fold(0.0f64, f64::max);
    // reference constant from the geometric mean of y/x
    let log_c = pts.iter().map(|&(x, y, _)| (y / x).ln()).sum::<f64>() / pts.len() as f64;
    let c = log_c.exp();

    let mut ys: Vec<f64> = Vec::new();
    for &(_, y, se) in &pts {
        ys.push(y + se);
        ys.push(if y - se > 0.0 { y - se } else { y });
        ys.push(y);
    }
    ys.push(c * xmin);
    ys.push(c * xmax);
    if let Some(f) = fit {
        ys.push((f.intercept + f.slope * xmin.ln()).exp());
        ys.push((f.intercept + f.slope * xmax.ln()).exp());
    }
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().cloned().fold(0.0f64, f64::max);

    let xa = LogAxis::new(xmin, xmax, PAD_L, SVG_W - PAD_L - PAD_R, false);
    let ya = LogAxis::new(ymin, ymax, PAD_T, SVG_H - PAD_T - PAD_B, true);
    let bottom = SVG_H - PAD_B;
    let right = SVG_W - PAD_R;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" width=\"{SVG_W}\" height=\"{SVG_H}\">"
    );
    svg.push_str(
        "<style>\n\
         text{font-family:sans-serif;font-size:11px;fill:#222;}\n\
         .axis{stroke:#222;fill:none;}\n\
         .tick{stroke:#222;fill:none;}\n\
         .grid{stroke:#ddd;fill:none;}\n\
         .whisker{stroke:#1f6fb4;fill:none;}\n\
         .marker{fill:#1f6fb4;}\n\
         .reference{stroke:#555;stroke-width:1.5;stroke-dasharray:6 4;}\n\
         .fit{stroke:#c0392b;stroke-width:1.5;}\n\
         </style>\n",
    );
    let _ = writeln!(
        svg,
        "<path class=\"axis\" d=\"M {PAD_L:.2} {PAD_T:.2} L {PAD_L:.2} {bottom:.2} L {right:.2} {bottom:.2}\"/>"
    );

    for (v, major) in xa.ticks() {
        let x = xa.at(v);
        let len = if major { 6.0 } else { 3.0 };
        let _ = writeln!(
            svg,
            "<path class=\"tick\" d=\"M {x:.2} {bottom:.2} L {x:.2} {:.2}\"/>",
            bottom + len
        );
        if major {
            let _ = writeln!(
                svg,
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:e}</text>",
                bottom + 18.0,
                v
            );
        }
    }
    for (v, major) in ya.ticks() {
        let y = ya.at(v);
        let len = if major { 6.0 } else { 3.0 };
        let _ = writeln!(
            svg,
            "<path class=\"tick\" d=\"M {PAD_L:.2} {y:.2} L {:.2} {y:.2}\"/>",
            PAD_L - len
        );
        if major {
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:e}</text>",
                PAD_L - 9.0,
                y + 4.0,
                v
            );
        }
    }

    // dashed reference with slope 1 in log-log, i.e. proportional to x
    let _ = writeln!(
        svg,
        "<line class=\"reference\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>",
        xa.at(xmin),
        ya.at(c * xmin),
        xa.at(xmax),
        ya.at(c * xmax)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
        PAD_L + 8.0,
        PAD_T + 14.0,
        xml_escape(reference_label)
    );
    if let Some(f) = fit {
        let y1 = (f.intercept + f.slope * xmin.ln()).exp();
        let y2 = (f.intercept + f.slope * xmax.ln()).exp();
        let _ = writeln!(
            svg,
            "<line class=\"fit\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>",
            xa.at(xmin),
            ya.at(y1),
            xa.at(xmax),
            ya.at(y2)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\">fit slope {:.3}, r2 {:.4}</text>",
            PAD_L + 8.0,
            PAD_T + 28.0,
            f.slope,
            f.r_squared
        );
    }

    for &(x, y, se) in &pts {
        let px = xa.at(x);
        if se > 0.0 {
            let hi = y + se;
            let lo = if y - se > 0.0 { y - se } else { y };
            let (phi, plo) = (ya.at(hi), ya.at(lo));
            let _ = writeln!(
                svg,
                "<path class=\"whisker\" d=\"M {px:.2} {phi:.2} L {px:.2} {plo:.2} M {:.2} {phi:.2} L {:.2} {phi:.2} M {:.2} {plo:.2} L {:.2} {plo:.2}\"/>",
                px - 3.0,
                px + 3.0,
                px - 3.0,
                px + 3.0
            );
        }
        let _ = writeln!(
            svg,
            "<circle class=\"marker\" cx=\"{px:.2}\" cy=\"{:.2}\" r=\"3\"/>",
            ya.at(y)
        );
    }

    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">sqrt(d)/n</text>",
        PAD_L + (SVG_W - PAD_L - PAD_R) / 2.0,
        SVG_H - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">{}</text>",
        PAD_T + (SVG_H - PAD_T - PAD_B) / 2.0,
        PAD_T + (SVG_H - PAD_T - PAD_B) / 2.0,
        xml_escape(stat)
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Paths written by `write_outputs`; `svg` is absent when the plot was
/// skipped, with the reason in `svg_skipped`.
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub svg: Option<PathBuf>,
    pub svg_skipped: Option<String>,
}

/// Writes `<study>.csv`, `<study>.json` and `<study>.svg` under
/// `out_dir`. A plot that cannot be drawn (no positive means) is
/// skipped, not fatal.
pub fn write_outputs(
    result: &StudyResult,
    fit: Option<&FitResult>,
    stat: &str,
    reference_label: &str,
    out_dir: &Path,
) -> Result<EmittedFiles> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", result.study));
    std::fs::write(&csv_path, emit_csv(result))?;
    let json_path = out_dir.join(format!("{}.json", result.study));
    std::fs::write(&json_path, emit_json(result))?;
    let (svg, skipped) = match emit_svg_loglog(result, fit, stat, reference_label) {
        Ok(text) => {
            let svg_path = out_dir.join(format!("{}.svg", result.study));
            std::fs::write(&svg_path, text)?;
            (Some(svg_path), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(EmittedFiles { csv: csv_path, json: json_path, svg, svg_skipped: skipped })
}
