//! Output fidelity: CSV golden bytes, JSON round trips, SVG structure
//! checked with a small tag scanner, and on-disk emission.

use combilab_core::experiments::{
    run_scaling_study, ConsSettings, DRule, ExperimentConfig, FitResult, GridPoint, PointResult,
    StatSummary, StudyResult,
};
use combilab_core::report::{
    config_to_json, emit_csv, emit_json, emit_svg_loglog, parse_config, write_outputs,
};
use combilab_core::ExtReal;

fn summary(stat: &str, mean: f64, median: f64, stderr: f64) -> StatSummary {
    StatSummary {
        stat: stat.into(),
        mean: ExtReal(mean),
        median: ExtReal(median),
        stderr: ExtReal(stderr),
    }
}

fn demo_result() -> StudyResult {
    StudyResult {
        study: "demo".into(),
        config_hash: "ab".repeat(32),
        master_seed: 7,
        notes: vec!["hand built".into()],
        warnings: Vec::new(),
        points: vec![PointResult {
            n: 4,
            d: 2,
            m: 4,
            trials: 3,
            exact: false,
            stats: vec![
                summary("sn", 0.5, 0.25, 0.125),
                summary("kappa", f64::INFINITY, 2.0, f64::INFINITY),
            ],
        }],
        fit: None,
    }
}

// Markers lie on a power law y = 2 sqrt(d)/n so the dashed reference
// must pass through every one of them.
fn power_law_result() -> StudyResult {
    let pts = [(16usize, 8usize), (64, 32), (256, 128)];
    StudyResult {
        study: "synthetic".into(),
        config_hash: "cd".repeat(32),
        master_seed: 1,
        notes: Vec::new(),
        warnings: Vec::new(),
        points: pts
            .iter()
            .map(|&(n, d)| {
                let y = 2.0 * (d as f64).sqrt() / n as f64;
                PointResult {
                    n,
                    d,
                    m: n,
                    trials: 10,
                    exact: false,
                    stats: vec![summary("sn", y, y, 0.1 * y)],
                }
            })
            .collect(),
        fit: Some(FitResult { slope: 1.0, intercept: 2.0f64.ln(), r_squared: 1.0 }),
    }
}

#[test]
fn csv_bytes_are_pinned() {
    let expected = "n,d,trials,stat,mean,median,stderr\n\
                    4,2,3,sn,5.00000000000e-1,2.50000000000e-1,1.25000000000e-1\n\
                    4,2,3,kappa,inf,2.00000000000e0,inf\n";
    assert_eq!(emit_csv(&demo_result()), expected);
}

#[test]
fn json_round_trips_byte_identically() {
    let text = emit_json(&demo_result());
    assert!(text.ends_with('\n'));
    assert!(text.contains("\"mean\": \"inf\""));
    assert!(text.contains("\"mean\": 0.5"));
    let back: StudyResult = serde_json::from_str(&text).unwrap();
    assert_eq!(emit_json(&back), text);
    assert!(back.points[0].stats[1].mean.0.is_infinite());
}

// Scanner for the small tag language the plots use. Returns Err on any
// nesting violation.
fn check_well_formed(svg: &str) -> Result<(), String> {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = svg;
    while let Some(open) = rest.find('<') {
        rest = &rest[open..];
        let close = rest.find('>').ok_or("unterminated tag")?;
        let tag = &rest[1..close];
        rest = &rest[close + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            let top = stack.pop().ok_or_else(|| format!("stray closer {name}"))?;
            if top != name {
                return Err(format!("expected </{top}>, saw </{name}>"));
            }
        } else if !tag.ends_with('/') {
            let name: String =
                tag.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
            stack.push(name);
        }
    }
    if stack.is_empty() { Ok(()) } else { Err(format!("unclosed {stack:?}")) }
}

fn attr(element: &str, name: &str) -> f64 {
    let key = format!("{name}=\"");
    let start = element.find(&key).unwrap() + key.len();
    let end = start + element[start..].find('"').unwrap();
    element[start..end].parse().unwrap()
}

fn elements<'a>(svg: &'a str, prefix: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut rest = svg;
    while let Some(i) = rest.find(prefix) {
        let tail = &rest[i..];
        let end = tail.find("/>").unwrap();
        out.push(&tail[..end]);
        rest = &tail[end..];
    }
    out
}

#[test]
fn svg_structure_and_geometry() {
    let result = power_law_result();
    let svg = emit_svg_loglog(&result, result.fit.as_ref(), "sn", "reference slope sqrt(d)/n")
        .unwrap();

    assert!(svg.starts_with("<?xml version=\"1.0\""));
    check_well_formed(&svg).unwrap();

    let markers = elements(&svg, "<circle class=\"marker\"");
    assert_eq!(markers.len(), 3);
    let lines = elements(&svg, "<line class=");
    assert_eq!(lines.len(), 2);
    assert!(svg.contains("class=\"reference\""));
    assert!(svg.contains("class=\"fit\""));
    assert!(svg.contains("fit slope 1.000"));
    assert!(svg.contains("reference slope sqrt(d)/n"));

    // The reference line is straight in pixel space and the markers sit
    // on the same power law, so each marker must sit on the segment.
    let reference = elements(&svg, "<line class=\"reference\"")[0];
    let (x1, y1) = (attr(reference, "x1"), attr(reference, "y1"));
    let (x2, y2) = (attr(reference, "x2"), attr(reference, "y2"));
    for marker in &markers {
        let (cx, cy) = (attr(marker, "cx"), attr(marker, "cy"));
        let t = (cx - x1) / (x2 - x1);
        assert!((-0.01..=1.01).contains(&t), "marker outside x range");
        let expected = y1 + t * (y2 - y1);
        assert!(
            (cy - expected).abs() < 0.5,
            "marker {cy} off reference {expected}"
        );
    }

    // Whiskers were requested (stderr > 0): one three-stroke path each.
    assert_eq!(svg.matches("class=\"whisker\"").count(), 3);
}

#[test]
fn svg_without_fit_has_only_the_reference_line() {
    let mut result = power_law_result();
    result.fit = None;
    let svg = emit_svg_loglog(&result, None, "sn", "ref").unwrap();
    assert_eq!(elements(&svg, "<line class=").len(), 1);
    assert!(!svg.contains("class=\"fit\""));
    check_well_formed(&svg).unwrap();
}

#[test]
fn svg_escapes_markup_in_labels() {
    let result = power_law_result();
    let svg = emit_svg_loglog(&result, None, "sn", "a<b&c").unwrap();
    assert!(svg.contains("a&lt;b&amp;c"));
    check_well_formed(&svg).unwrap();
}

#[test]
fn unplottable_statistic_is_a_named_error() {
    let mut result = demo_result();
    result.points[0].stats = vec![summary("flatline", 0.0, 0.0, 0.0)];
    let err = emit_svg_loglog(&result, None, "flatline", "ref").unwrap_err();
    assert!(err.to_string().contains("flatline"), "{err}");
    let missing = emit_svg_loglog(&result, None, "absent", "ref").unwrap_err();
    assert!(missing.to_string().contains("absent"));
}

#[test]
fn write_outputs_skips_the_plot_but_keeps_the_tables() {
    let mut result = demo_result();
    result.points[0].stats = vec![summary("flatline", 0.0, 0.0, 0.0)];
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(&result, None, "flatline", "ref", dir.path()).unwrap();
    assert!(files.svg.is_none());
    assert!(files.svg_skipped.unwrap().contains("flatline"));
    assert_eq!(std::fs::read_to_string(&files.csv).unwrap(), emit_csv(&result));
    assert_eq!(std::fs::read_to_string(&files.json).unwrap(), emit_json(&result));
}

#[test]
fn write_outputs_round_trips_a_real_study() {
    let cfg = ExperimentConfig {
        version: 1,
        seed: 3,
        trials: 20,
        grid: vec![
            GridPoint { n: 12, d: DRule::Fixed { k: 6 } },
            GridPoint { n: 16, d: DRule::Fixed { k: 8 } },
        ],
        epsilons: vec![0.5],
        opnorm_thresholds: vec![2.0],
        direction_scale: 0.5,
        aspect: 1.0,
        exact: false,
        cons: ConsSettings::default(),
        out_dir: None,
    };
    let result = run_scaling_study(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files =
        write_outputs(&result, result.fit.as_ref(), "sn", "reference", dir.path()).unwrap();
    assert!(files.svg.is_some());
    let written: StudyResult =
        serde_json::from_str(&std::fs::read_to_string(&files.json).unwrap()).unwrap();
    assert_eq!(emit_json(&written), emit_json(&result));
    let csv = std::fs::read_to_string(&files.csv).unwrap();
    assert!(csv.starts_with("n,d,trials,stat,mean,median,stderr\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * result.points[0].stats.len());
}

#[test]
fn config_json_round_trip_preserves_semantics() {
    let text = r#"{
        "seed": 11,
        "trials": 50,
        "grid": [
            {"n": 64, "d_rule": "pn", "p": 0.25},
            {"n": 81, "d_rule": "npow", "a": 0.75},
            {"n": 32, "d_rule": "fixed", "k": 5},
            {"n": 100, "d_rule": "clogn", "c": 3.0}
        ],
        "epsilons": [0.1, 1.0],
        "aspect": 0.5
    }"#;
    let cfg = parse_config(text).unwrap();
    let round = parse_config(&config_to_json(&cfg)).unwrap();
    assert_eq!(
        cfg.resolve_grid().unwrap(),
        round.resolve_grid().unwrap()
    );
    assert_eq!(round.aspect, 0.5);
    assert_eq!(round.trials, 50);
    assert_eq!(round.seed, 11);
}
