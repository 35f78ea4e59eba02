//! Config ingestion, trajectory CSV, metrics JSON and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoupler::DecouplerKind;
use crate::error::{Error, Result};
use crate::flc::{AttitudeGains, PositionGains};
use crate::gait::GaitPlan;
use crate::model::VehicleParams;
use crate::sim::{default_sup_window, ExperimentConfig, Metrics, ReferenceKind, Trajectory};

/// Column order of every trajectory CSV.
pub const CSV_HEADER: &str = "t,X,Y,Z,phi,theta,psi,p,q,r,w1,w2,w3,w4,rho,ex,ey,ez";

/// Named gain sets selectable with `gain_preset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainPreset {
    Fast,
    NominalLiteral,
    NominalSwapped,
}

impl GainPreset {
    pub fn gains(self) -> AttitudeGains {
        match self {
            GainPreset::Fast => AttitudeGains::fast(),
            GainPreset::NominalLiteral => AttitudeGains::nominal_literal(),
            GainPreset::NominalSwapped => AttitudeGains::nominal_swapped(),
        }
    }
}

/// On-disk config: everything but `reference`, `gait` and `decoupler` may be
/// omitted.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDocument {
    reference: ReferenceKind,
    gait: GaitPlan,
    decoupler: DecouplerKind,
    gain_preset: Option<GainPreset>,
    attitude_gains: Option<AttitudeGains>,
    position_gains: Option<PositionGains>,
    dt: Option<f64>,
    duration: Option<f64>,
    transient: Option<f64>,
    steady_state_window: Option<f64>,
    sup_window: Option<f64>,
    initial_rotor_speed: Option<f64>,
    saturation: Option<f64>,
    control_every: Option<usize>,
    record_every: Option<usize>,
    params: Option<VehicleParams>,
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parse a JSON config, fill defaults and validate.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let doc: ConfigDocument = serde_json::from_str(text).map_err(parse_error)?;
    let mut cfg = ExperimentConfig::new(doc.reference, doc.gait, doc.decoupler);
    cfg.attitude_gains = match (doc.gain_preset, doc.attitude_gains) {
        (Some(_), Some(_)) => {
            return Err(Error::invalid(
                "gain_preset",
                "give either gain_preset or attitude_gains, not both",
            ))
        }
        (Some(p), None) => p.gains(),
        (None, Some(g)) => g,
        (None, None) => AttitudeGains::default(),
    };
    if let Some(g) = doc.position_gains {
        cfg.position_gains = g;
    }
    if let Some(v) = doc.dt {
        cfg.dt = v;
    }
    if let Some(v) = doc.duration {
        cfg.duration = v;
    }
    if let Some(v) = doc.transient {
        cfg.transient = v;
    }
    if let Some(v) = doc.steady_state_window {
        cfg.steady_state_window = v;
    }
    cfg.sup_window = doc
        .sup_window
        .unwrap_or_else(|| default_sup_window(cfg.duration, &cfg.gait));
    if let Some(v) = doc.initial_rotor_speed {
        cfg.initial_rotor_speed = v;
    }
    cfg.saturation = doc.saturation;
    if let Some(v) = doc.control_every {
        cfg.control_every = v;
    }
    if let Some(v) = doc.record_every {
        cfg.record_every = v;
    }
    if let Some(p) = doc.params {
        cfg.params = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// Fully resolved config as pretty JSON; [`parse_config`] reads it back
/// unchanged.
pub fn config_echo(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

fn push_num(line: &mut String, v: f64) {
    if !line.is_empty() {
        line.push(',');
    }
    write!(line, "{v:.16e}").unwrap();
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{CSV_HEADER}")?;
    let mut line = String::with_capacity(18 * 24);
    for s in &traj.samples {
        line.clear();
        let st = &s.state;
        let cols = [
            s.t,
            st.position.x,
            st.position.y,
            st.position.z,
            s.euler.x,
            s.euler.y,
            s.euler.z,
            st.body_rates.x,
            st.body_rates.y,
            st.body_rates.z,
            st.rotor_speeds[0],
            st.rotor_speeds[1],
            st.rotor_speeds[2],
            st.rotor_speeds[3],
            s.rho,
            s.error.x,
            s.error.y,
            s.error.z,
        ];
        for v in cols {
            push_num(&mut line, v);
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsDocument<'a> {
    steady_state_error_x: Option<f64>,
    steady_state_error_y: Option<f64>,
    steady_state_converged: Option<bool>,
    sup_error_x: Option<f64>,
    sup_error_y: Option<f64>,
    sup_error_norm: Option<f64>,
    diverged: bool,
    saturation_count: u64,
    failure: Option<&'a str>,
    config: &'a ExperimentConfig,
}

/// Metrics plus the resolved config, with a fixed key order.
pub fn metrics_json(metrics: &Metrics, cfg: &ExperimentConfig) -> String {
    let ss = metrics.steady_state.filter(|_| !metrics.diverged);
    let sup = metrics.sup.filter(|_| !metrics.diverged);
    let doc = MetricsDocument {
        steady_state_error_x: ss.map(|s| s.x),
        steady_state_error_y: ss.map(|s| s.y),
        steady_state_converged: ss.map(|s| s.converged),
        sup_error_x: sup.map(|s| s.x),
        sup_error_y: sup.map(|s| s.y),
        sup_error_norm: sup.map(|s| s.norm),
        diverged: metrics.diverged,
        saturation_count: metrics.saturation_count,
        failure: metrics.failure.as_deref(),
        config: cfg,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("metrics serialize");
    s.push('\n');
    s
}

pub fn write_metrics_json(metrics: &Metrics, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    fs::write(path, metrics_json(metrics, cfg))?;
    Ok(())
}

/// Plain SVG line chart of `e_x` and `e_y` against time.
pub fn error_plot_svg(traj: &Trajectory, title: &str) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const PAD: f64 = 60.0;
    let t0 = traj.start_time();
    let t1 = traj.end_time().max(t0 + 1e-9);
    let (mut lo, mut hi) = traj
        .samples
        .iter()
        .flat_map(|s| [s.error.x, s.error.y])
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !(lo <= hi) {
        (lo, hi) = (-1.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let sx = |t: f64| PAD + (t - t0) / (t1 - t0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    // Thin long runs to about 2000 points per line.
    let stride = (traj.len() / 2000).max(1);
    let polyline = |f: fn(&crate::sim::Sample) -> f64| {
        let mut pts = String::new();
        for s in traj.samples.iter().step_by(stride) {
            let v = f(s);
            if v.is_finite() {
                write!(pts, "{:.2},{:.2} ", sx(s.t), sy(v)).unwrap();
            }
        }
        pts
    };

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        svg,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    )
    .unwrap();
    if lo < 0.0 && hi > 0.0 {
        writeln!(
            svg,
            r##"<line x1="{PAD}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
            W - PAD,
            y = sy(0.0)
        )
        .unwrap();
    }
    for (v, anchor_y) in [(lo, H - PAD), (hi, PAD)] {
        writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="12">{v:.3}</text>"#,
            PAD - 6.0,
            anchor_y + 4.0
        )
        .unwrap();
    }
    for (t, x) in [(t0, PAD), (t1, W - PAD)] {
        writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{t:.1}</text>"#,
            H - PAD + 18.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14">t (s)</text>"#,
        W / 2.0,
        H - 12.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14" transform="rotate(-90 16 {})">error (m)</text>"#,
        H / 2.0,
        H / 2.0
    )
    .unwrap();
    for (name, color, pts) in [
        ("e_x", "#1f77b4", polyline(|s| s.error.x)),
        ("e_y", "#d62728", polyline(|s| s.error.y)),
    ] {
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{name}</title></polyline>"#,
            pts.trim_end()
        )
        .unwrap();
    }
    writeln!(
        svg,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="#1f77b4">e_x</text>"##,
        W - PAD - 60.0,
        PAD - 8.0
    )
    .unwrap();
    writeln!(
        svg,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="#d62728">e_y</text>"##,
        W - PAD - 25.0,
        PAD - 8.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub trajectory: PathBuf,
    pub metrics: PathBuf,
    pub config: PathBuf,
    pub plot: Option<PathBuf>,
}

/// Write `<stem>.csv`, `<stem>.metrics.json`, `<stem>.config.json` and
/// optionally `<stem>.svg` into `dir`.
pub fn write_run_artifacts(
    dir: &Path,
    stem: &str,
    traj: &Trajectory,
    metrics: &Metrics,
    cfg: &ExperimentConfig,
    plot: bool,
) -> Result<RunArtifacts> {
    fs::create_dir_all(dir)?;
    let art = RunArtifacts {
        trajectory: dir.join(format!("{stem}.csv")),
        metrics: dir.join(format!("{stem}.metrics.json")),
        config: dir.join(format!("{stem}.config.json")),
        plot: plot.then(|| dir.join(format!("{stem}.svg"))),
    };
    write_trajectory_csv(traj, fs::File::create(&art.trajectory)?)?;
    write_metrics_json(metrics, cfg, &art.metrics)?;
    fs::write(&art.config, config_echo(cfg) + "\n")?;
    if let Some(p) = &art.plot {
        fs::write(p, error_plot_svg(traj, stem))?;
    }
    Ok(art)
}
