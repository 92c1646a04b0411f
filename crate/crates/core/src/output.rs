// SPDX-License-Identifier: Apache-2.0

//! CSV and SVG artifacts of a run.
//!
//! The CSV files are the normative output; the SVG charts are a convenience
//! rendering of them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::agent::QTable;
use crate::error::{Error, Result};
use crate::experiment::ExperimentResult;
use crate::metrics::{moving_average, MetricsFrame, StepRecord, TrapEvent};

pub const STEPS_CSV: &str = "steps.csv";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const CONFIG_ECHO: &str = "config.toml";

pub const AGGREGATE_HEADER: [&str; 7] = [
    "run_id",
    "step",
    "right_fraction",
    "mean_loss_right",
    "mean_loss_left",
    "n_right",
    "n_left",
];
pub const EVENTS_HEADER: [&str; 4] = ["run_id", "agent_id", "entry_step", "exit_step"];
const STEPS_FIXED: [&str; 10] = [
    "run_id",
    "agent_id",
    "step",
    "action",
    "raw_reward",
    "emitted_reward",
    "epsilon",
    "delta",
    "interest",
    "i_med",
];

/// Loss-curve smoothing window used by the charts.
pub const PLOT_SMOOTHING: usize = 50;

pub fn steps_header(n_arms: usize) -> Vec<String> {
    STEPS_FIXED
        .iter()
        .map(|s| s.to_string())
        .chain((0..n_arms).map(|i| format!("q_{i}")))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub steps: PathBuf,
    pub aggregate: PathBuf,
    pub events: PathBuf,
    pub config: PathBuf,
    pub charts: Vec<PathBuf>,
}

pub fn write_outputs(result: &ExperimentResult, dir: &Path, charts: bool) -> Result<OutputFiles> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let run_id = result.config.name.as_str();
    let n_arms = result
        .traces
        .first()
        .map(|t| t.initial_q.len())
        .or_else(|| result.config.env.resolve().ok().map(|e| e.n_arms()))
        .unwrap_or(2);

    let steps = dir.join(STEPS_CSV);
    let mut w = writer(&steps)?;
    w.write_record(steps_header(n_arms)).map_err(csv_err(&steps))?;
    for trace in &result.traces {
        for r in &trace.records {
            w.write_record(step_row(run_id, r)).map_err(csv_err(&steps))?;
        }
    }
    w.flush().map_err(io_err(&steps))?;

    let aggregate = dir.join(AGGREGATE_CSV);
    write_aggregate(&aggregate, run_id, &result.frames)?;

    let events = dir.join(EVENTS_CSV);
    let mut w = writer(&events)?;
    w.write_record(EVENTS_HEADER).map_err(csv_err(&events))?;
    for e in &result.events {
        w.write_record([
            run_id.to_string(),
            e.agent_id.to_string(),
            e.entry_step.to_string(),
            e.exit_step.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err(&events))?;
    }
    w.flush().map_err(io_err(&events))?;

    let config = dir.join(CONFIG_ECHO);
    fs::write(&config, result.config.to_toml()).map_err(io_err(&config))?;

    let charts = if charts {
        let records: Vec<&[StepRecord]> = result.traces.iter().map(|t| t.records.as_slice()).collect();
        render_charts(dir, &result.frames, records.first().copied().unwrap_or(&[]))?
    } else {
        Vec::new()
    };

    Ok(OutputFiles {
        steps,
        aggregate,
        events,
        config,
        charts,
    })
}

fn step_row(run_id: &str, r: &StepRecord) -> Vec<String> {
    let mut row = vec![
        run_id.to_string(),
        r.agent_id.to_string(),
        r.step.to_string(),
        r.action.to_string(),
        r.raw_reward.to_string(),
        r.emitted_reward.to_string(),
        r.epsilon.to_string(),
        r.delta.to_string(),
        opt(r.interest),
        opt(r.i_med),
    ];
    row.extend(r.q.values().iter().map(|v| v.to_string()));
    row
}

pub fn write_aggregate(path: &Path, run_id: &str, frames: &[MetricsFrame]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(AGGREGATE_HEADER).map_err(csv_err(path))?;
    for f in frames {
        w.write_record([
            run_id.to_string(),
            f.step.to_string(),
            f.right_fraction.to_string(),
            opt(f.mean_loss_right),
            opt(f.mean_loss_left),
            f.n_right.to_string(),
            f.n_left.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Config(format!("{}: bad {what} `{field}`", path.display())))
}

fn parse_opt(path: &Path, field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(path, field, what).map(Some)
    }
}

/// Reads `steps.csv` back into per-agent record lists, ordered by agent id.
pub fn read_steps(path: &Path) -> Result<Vec<Vec<StepRecord>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let n_arms = header.len().saturating_sub(STEPS_FIXED.len());
    let mut by_agent: Vec<Vec<StepRecord>> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err(path))?;
        let agent_id: u32 = parse(path, &row[1], "agent_id")?;
        let q = (0..n_arms)
            .map(|i| parse(path, &row[STEPS_FIXED.len() + i], "q value"))
            .collect::<Result<Vec<f64>>>()?;
        let rec = StepRecord {
            step: parse(path, &row[2], "step")?,
            agent_id,
            action: parse(path, &row[3], "action")?,
            raw_reward: parse(path, &row[4], "raw_reward")?,
            emitted_reward: parse(path, &row[5], "emitted_reward")?,
            epsilon: parse(path, &row[6], "epsilon")?,
            delta: parse(path, &row[7], "delta")?,
            interest: parse_opt(path, &row[8], "interest")?,
            i_med: parse_opt(path, &row[9], "i_med")?,
            q: QTable(q),
        };
        let slot = agent_id as usize;
        if by_agent.len() <= slot {
            by_agent.resize_with(slot + 1, Vec::new);
        }
        by_agent[slot].push(rec);
    }
    by_agent.retain(|v| !v.is_empty());
    Ok(by_agent)
}

pub fn read_aggregate(path: &Path) -> Result<Vec<MetricsFrame>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.records()
        .map(|row| {
            let row = row.map_err(csv_err(path))?;
            Ok(MetricsFrame {
                step: parse(path, &row[1], "step")?,
                right_fraction: parse(path, &row[2], "right_fraction")?,
                mean_loss_right: parse_opt(path, &row[3], "mean_loss_right")?,
                mean_loss_left: parse_opt(path, &row[4], "mean_loss_left")?,
                n_right: parse(path, &row[5], "n_right")?,
                n_left: parse(path, &row[6], "n_left")?,
                n_tie: 0,
            })
        })
        .collect()
}

pub fn read_events(path: &Path) -> Result<Vec<TrapEvent>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.records()
        .map(|row| {
            let row = row.map_err(csv_err(path))?;
            let exit = &row[3];
            Ok(TrapEvent {
                agent_id: parse(path, &row[1], "agent_id")?,
                entry_step: parse(path, &row[2], "entry_step")?,
                exit_step: if exit.is_empty() {
                    None
                } else {
                    Some(parse(path, exit, "exit_step")?)
                },
            })
        })
        .collect()
}

/// Writes the three chart files from an aggregate series and one agent's
/// records.
pub fn render_charts(dir: &Path, frames: &[MetricsFrame], first_agent: &[StepRecord]) -> Result<Vec<PathBuf>> {
    let steps: Vec<f64> = frames.iter().map(|f| f.step as f64).collect();
    let mut out = Vec::new();

    let fig1 = LineChart {
        title: "Agents preferring the right arm",
        x_label: "step",
        y_label: "right fraction",
        series: vec![Series {
            name: "right fraction",
            color: "#2a7ab9",
            points: steps
                .iter()
                .zip(frames)
                .map(|(&x, f)| (x, Some(f.right_fraction)))
                .collect(),
        }],
    };
    let right: Vec<Option<f64>> = frames.iter().map(|f| f.mean_loss_right).collect();
    let left: Vec<Option<f64>> = frames.iter().map(|f| f.mean_loss_left).collect();
    let fig2 = LineChart {
        title: "Mean squared TD error by choice",
        x_label: "step",
        y_label: "mean loss",
        series: vec![
            Series {
                name: "chose right",
                color: "#2ca02c",
                points: steps
                    .iter()
                    .copied()
                    .zip(moving_average(&right, PLOT_SMOOTHING))
                    .collect(),
            },
            Series {
                name: "chose left",
                color: "#d62728",
                points: steps
                    .iter()
                    .copied()
                    .zip(moving_average(&left, PLOT_SMOOTHING))
                    .collect(),
            },
        ],
    };
    let agent_steps = first_agent.iter().map(|r| r.step as f64);
    let fig3 = LineChart {
        title: "Q values of agent 0",
        x_label: "step",
        y_label: "Q",
        series: vec![
            Series {
                name: "Q right",
                color: "#2ca02c",
                points: agent_steps
                    .clone()
                    .zip(first_agent.iter().map(|r| r.q.values().get(1).copied()))
                    .collect(),
            },
            Series {
                name: "Q left",
                color: "#d62728",
                points: agent_steps
                    .zip(first_agent.iter().map(|r| r.q.values().first().copied()))
                    .collect(),
            },
        ],
    };
    for (file, chart) in [
        ("fig1_right_fraction.svg", fig1),
        ("fig2_loss_by_choice.svg", fig2),
        ("fig3_q_values.svg", fig3),
    ] {
        let path = dir.join(file);
        fs::write(&path, chart.to_svg()).map_err(io_err(&path))?;
        out.push(path);
    }
    Ok(out)
}

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    /// Missing y values break the line.
    pub points: Vec<(f64, Option<f64>)>,
}

pub struct LineChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
}

impl LineChart<'_> {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    /// Longest polyline emitted per series; denser series are strided.
    const MAX_POINTS: usize = 2000;

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter_map(|&(x, y)| y.map(|y| (x, y)));
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        (x0, x1, y0, y1)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let (w, h, p) = (Self::W, Self::H, Self::PAD);
        let sx = |x: f64| p + (x - x0) / (x1 - x0) * (w - 2.0 * p);
        let sy = |y: f64| h - p - (y - y0) / (y1 - y0) * (h - 2.0 * p);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            w / 2.0,
            self.title
        );
        let _ = writeln!(
            s,
            r#"<path d="M{p} {p} V{} H{}" fill="none" stroke="black"/>"#,
            h - p,
            w - p
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            w / 2.0,
            h - 15.0,
            self.x_label
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            self.y_label
        );
        for (v, x, anchor) in [(x0, sx(x0), "start"), (x1, sx(x1), "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{}" text-anchor="{anchor}">{}</text>"#,
                h - p + 16.0,
                tick(v)
            );
        }
        for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                p - 6.0,
                y + 4.0,
                tick(v)
            );
        }
        for (k, series) in self.series.iter().enumerate() {
            let stride = series.points.len().div_ceil(Self::MAX_POINTS).max(1);
            let mut d = String::new();
            let mut pen_down = false;
            for &(x, y) in series.points.iter().step_by(stride) {
                match y {
                    Some(y) => {
                        let _ = write!(d, "{}{:.1} {:.1} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
                        pen_down = true;
                    }
                    None => pen_down = false,
                }
            }
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                d.trim_end(),
                series.color
            );
            let ly = p + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly:.1}" fill="{}" text-anchor="end">{}</text>"#,
                w - p,
                series.color,
                series.name
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}
