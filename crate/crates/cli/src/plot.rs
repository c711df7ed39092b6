//! SVG figures drawn from the CSV files the other commands write.

use std::path::Path;

use anyhow::{Context, Result};
use plotters::prelude::*;

use crate::error::{read_input, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Roots in the complex plane (`spectrum.csv`, `spectra.csv`).
    Eigen,
    /// Norm against the free parameter, unstable parts dashed (`branch.csv`).
    Branch,
    /// Multipliers with the unit circle (`multipliers.csv`).
    Multipliers,
    /// Tongue boundaries in the parameter plane (`tongue.csv`).
    Tongue,
    /// Peak phase against the first parameter (`phases.csv`).
    Phases,
    /// Time series (`profiles/*.csv`, `trajectory.csv`).
    Profile,
}

/// A CSV file as a header and string cells.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().context("reading CSV header")?.iter().map(String::from).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::config(format!("no column '{name}' (have {})", self.header.join(","))).into())
    }

    fn number(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col].trim().parse().unwrap_or(f64::NAN)
    }

    fn numbers(&self, col: usize) -> Vec<f64> {
        (0..self.rows.len()).map(|r| self.number(r, col)).collect()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

type Series = Vec<(f64, f64)>;

struct Figure<'a> {
    title: String,
    x_label: &'a str,
    y_label: &'a str,
    lines: Vec<(Series, RGBColor, bool)>,
    points: Vec<(Series, RGBColor)>,
    square: bool,
}

impl Figure<'_> {
    fn draw(self, path: &Path) -> Result<()> {
        let all = || {
            self.lines
                .iter()
                .flat_map(|l| l.0.iter())
                .chain(self.points.iter().flat_map(|p| p.0.iter()))
        };
        let mut x = bounds(all().map(|p| p.0));
        let mut y = bounds(all().map(|p| p.1));
        if self.square {
            let r = (x.1 - x.0).max(y.1 - y.0) / 2.0;
            let (cx, cy) = ((x.0 + x.1) / 2.0, (y.0 + y.1) / 2.0);
            x = (cx - r, cx + r);
            y = (cy - r, cy + r);
        }
        let size = if self.square { (600, 600) } else { (800, 560) };
        let root = SVGBackend::new(path, size).into_drawing_area();
        let draw = || -> std::result::Result<(), Box<dyn std::error::Error + '_>> {
            root.fill(&WHITE)?;
            let mut chart = ChartBuilder::on(&root)
                .caption(&self.title, ("sans-serif", 20))
                .margin(12)
                .x_label_area_size(40)
                .y_label_area_size(60)
                .build_cartesian_2d(x.0..x.1, y.0..y.1)?;
            chart.configure_mesh().x_desc(self.x_label).y_desc(self.y_label).draw()?;
            for (line, color, dashed) in &self.lines {
                let style = ShapeStyle::from(color).stroke_width(2);
                if *dashed {
                    chart.draw_series(DashedLineSeries::new(line.iter().copied(), 6, 4, style))?;
                } else {
                    chart.draw_series(LineSeries::new(line.iter().copied(), style))?;
                }
            }
            for (pts, color) in &self.points {
                chart.draw_series(pts.iter().map(|&p| Circle::new(p, 2, color.filled())))?;
            }
            root.present()?;
            Ok(())
        };
        draw().map_err(|e| anyhow::anyhow!("drawing {}: {e}", path.display()))
    }
}

/// Splits a polyline wherever `flag` changes, so each run can be styled.
fn runs(points: &[(f64, f64)], flags: &[bool]) -> Vec<(Series, bool)> {
    let mut out: Vec<(Series, bool)> = Vec::new();
    for (i, (&p, &f)) in points.iter().zip(flags).enumerate() {
        match out.last_mut() {
            Some((run, g)) if *g == f => run.push(p),
            _ => {
                let mut run = Vec::new();
                if i > 0 {
                    // share the joint so the curve stays connected
                    run.push(points[i - 1]);
                }
                run.push(p);
                out.push((run, f));
            }
        }
    }
    out
}

/// Draws `kind` from `input` into `path`. For branch plots `x` names the
/// abscissa column (default: the first parameter column that varies) and `y`
/// the ordinate (default `norm`; `period` gives the period plot).
pub fn plot(kind: PlotKind, input: &Path, x: Option<&str>, y: Option<&str>, path: &Path) -> Result<()> {
    let t = Table::read(input)?;
    let title = format!("{}", input.file_name().map(|f| f.to_string_lossy()).unwrap_or_default());
    let fig = match kind {
        PlotKind::Eigen => {
            let (re, im) = (t.numbers(t.column("re")?), t.numbers(t.column("im")?));
            Figure {
                title,
                x_label: "Re",
                y_label: "Im",
                lines: vec![],
                points: vec![(re.into_iter().zip(im).collect(), BLUE)],
                square: false,
            }
        }
        PlotKind::Multipliers => {
            let (re, im) = (t.numbers(t.column("re")?), t.numbers(t.column("im")?));
            let circle = (0..=200)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / 200.0;
                    (a.cos(), a.sin())
                })
                .collect();
            Figure {
                title,
                x_label: "Re",
                y_label: "Im",
                lines: vec![(circle, BLACK, true)],
                points: vec![(re.into_iter().zip(im).collect(), RED)],
                square: true,
            }
        }
        PlotKind::Branch => {
            let event = t.column("event")?;
            let xc = match x {
                Some(name) => t.column(name)?,
                None => {
                    let norm = t.column("norm")?;
                    (1..norm)
                        .find(|&c| {
                            let v = t.numbers(c);
                            v.iter().any(|a| (a - v[0]).abs() > 0.0)
                        })
                        .unwrap_or(1)
                }
            };
            let y_label = y.unwrap_or("norm");
            let xs = t.numbers(xc);
            let ys = t.numbers(t.column(y_label)?);
            let unstable = t.numbers(t.column("unstable_count")?);
            let mut pts = Vec::new();
            let mut flags = Vec::new();
            let mut events = Vec::new();
            for r in 0..t.rows.len() {
                if t.rows[r][event].is_empty() {
                    pts.push((xs[r], ys[r]));
                    flags.push(unstable[r] > 0.0);
                } else {
                    events.push((xs[r], ys[r]));
                }
            }
            let lines = runs(&pts, &flags).into_iter().map(|(s, u)| (s, BLUE, u)).collect();
            Figure {
                title,
                x_label: &t.header[xc],
                y_label,
                lines,
                points: vec![(events, RED)],
                square: false,
            }
        }
        PlotKind::Tongue => {
            let side = t.column("side")?;
            let mut left = Vec::new();
            let mut right = Vec::new();
            for r in 0..t.rows.len() {
                let p = (t.number(r, 0), t.number(r, 1));
                if t.rows[r][side] == "left" {
                    left.push(p);
                } else {
                    right.push(p);
                }
            }
            Figure {
                title,
                x_label: &t.header[0],
                y_label: &t.header[1],
                lines: vec![(left, BLUE, false), (right, RED, false)],
                points: vec![],
                square: false,
            }
        }
        PlotKind::Phases => {
            let phase = t.numbers(t.column("phase")?);
            let stable = t.column("stable")?;
            let mut s = Vec::new();
            let mut u = Vec::new();
            for r in 0..t.rows.len() {
                let p = (t.number(r, 0), phase[r]);
                if t.rows[r][stable] == "1" {
                    s.push(p);
                } else {
                    u.push(p);
                }
            }
            Figure {
                title,
                x_label: &t.header[0],
                y_label: "peak phase (months)",
                lines: vec![],
                points: vec![(u, RGBColor(170, 170, 170)), (s, BLUE)],
                square: false,
            }
        }
        PlotKind::Profile => {
            let (ts, h) = (t.numbers(0), t.numbers(1));
            Figure {
                title,
                x_label: "t (months)",
                y_label: &t.header[1],
                lines: vec![(ts.into_iter().zip(h).collect(), BLUE, false)],
                points: vec![],
                square: false,
            }
        }
    };
    fig.draw(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_share_joints() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        let r = runs(&pts, &[false, false, true, true]);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].0.len(), 2);
        assert_eq!(r[1].0, vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
    }
}
