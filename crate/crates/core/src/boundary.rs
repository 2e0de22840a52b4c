//! Decision-boundary grids over two input coordinates, written as CSV and SVG.

use std::fmt::Write as _;

use crate::autodiff::sigmoid_scalar;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gs::CounterfactualPair;
use crate::models::ModelParams;
use crate::tensor::Tensor;

/// Model scores on a `res x res` grid. `logits[r * res + c]` is at
/// `(xs[c], ys[r])`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub logits: Vec<f64>,
    /// The two input coordinates spanning the grid.
    pub axes: [usize; 2],
    /// Data points as `(x, y, label)` in grid coordinates.
    pub points: Vec<(f64, f64, u8)>,
    /// Pair segments in grid coordinates.
    pub segments: Vec<[(f64, f64); 2]>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let margin = if hi > lo { 0.1 * (hi - lo) } else { 1.0 };
    (lo - margin, hi + margin)
}

/// Scores of logit `class` over the bounding box of `dataset` widened by 10%
/// of its extent on each side.
///
/// Inputs wider than two need `projection`: the two coordinates that vary
/// over the grid, while the others stay at their dataset mean.
pub fn boundary_grid(
    model: &ModelParams,
    dataset: &Dataset,
    pairs: &[CounterfactualPair],
    res: usize,
    projection: Option<[usize; 2]>,
    class: usize,
) -> Result<BoundaryGrid> {
    if res < 2 {
        return Err(Error::InvalidConfig(format!("grid resolution must be at least 2, got {res}")));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let width = model.input_width();
    if dataset.feature_width() != Some(width) {
        return Err(Error::shape("boundary_grid", "dataset width differs from model input width"));
    }
    if class >= model.output_arity() {
        return Err(Error::IndexOutOfRange { index: class, len: model.output_arity() });
    }
    let axes = match projection {
        Some([a, b]) if a < width && b < width && a != b => [a, b],
        Some(p) => {
            return Err(Error::InvalidConfig(format!("projection {p:?} invalid for width {width}")));
        }
        None if width == 2 => [0, 1],
        None => {
            return Err(Error::InvalidConfig(format!(
                "model input width is {width}; choose two coordinates to project on"
            )));
        }
    };
    let n = dataset.len();
    let mut base = vec![0.0; width];
    for i in 0..n {
        for (b, v) in base.iter_mut().zip(dataset.features(i)?) {
            *b += v / n as f64;
        }
    }
    let at = |i: usize| -> Result<(f64, f64)> {
        let x = dataset.features(i)?;
        Ok((x[axes[0]], x[axes[1]]))
    };
    let coords = (0..n).map(at).collect::<Result<Vec<_>>>()?;
    let (x_lo, x_hi) = padded_range(coords.iter().map(|p| p.0));
    let (y_lo, y_hi) = padded_range(coords.iter().map(|p| p.1));
    let (xs, ys) = (linspace(x_lo, x_hi, res), linspace(y_lo, y_hi, res));

    let mut rows = Vec::with_capacity(res * res);
    for &y in &ys {
        for &x in &xs {
            let mut p = base.clone();
            p[axes[0]] = x;
            p[axes[1]] = y;
            rows.push(p);
        }
    }
    let logits = model.logits_batch(&Tensor::from_rows(&rows)?)?;
    let logits = (0..rows.len()).map(|r| logits.get(r, class)).collect();
    let points = coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (x, y, dataset.labels(i).get(class).copied().unwrap_or(0)))
        .collect();
    let segments = pairs
        .iter()
        .map(|p| {
            let (a, b) = p.endpoints();
            Ok([at(a)?, at(b)?])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryGrid { xs, ys, logits, axes, points, segments })
}

impl BoundaryGrid {
    pub fn res(&self) -> usize {
        self.xs.len()
    }

    pub fn logit(&self, row: usize, col: usize) -> f64 {
        self.logits[row * self.res() + col]
    }

    /// `x,y,logit,score` with `score = sigmoid(logit)`, rows by increasing y then x.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,logit,score\n");
        for (r, &y) in self.ys.iter().enumerate() {
            for (c, &x) in self.xs.iter().enumerate() {
                let z = self.logit(r, c);
                let _ = writeln!(out, "{x},{y},{z},{}", sigmoid_scalar(z));
            }
        }
        out
    }

    /// Points where the logit crosses `level` along grid edges, by linear
    /// interpolation between neighbouring nodes.
    pub fn level_crossings(&self, level: f64) -> Vec<(f64, f64)> {
        let n = self.res();
        let mut out = Vec::new();
        let mut edge = |(x0, y0, z0): (f64, f64, f64), (x1, y1, z1): (f64, f64, f64)| {
            let (a, b) = (z0 - level, z1 - level);
            if a == 0.0 {
                out.push((x0, y0));
            } else if a * b < 0.0 {
                let t = a / (a - b);
                out.push((x0 + t * (x1 - x0), y0 + t * (y1 - y0)));
            }
        };
        for r in 0..n {
            for c in 0..n {
                let here = (self.xs[c], self.ys[r], self.logit(r, c));
                if c + 1 < n {
                    edge(here, (self.xs[c + 1], self.ys[r], self.logit(r, c + 1)));
                }
                if r + 1 < n {
                    edge(here, (self.xs[c], self.ys[r + 1], self.logit(r + 1, c)));
                }
            }
        }
        out
    }

    /// Contour pieces of the zero-logit (score 0.5) level, one per grid cell it crosses.
    fn contour_segments(&self) -> Vec<[(f64, f64); 2]> {
        let n = self.res();
        let mut segs = Vec::new();
        for r in 0..n - 1 {
            for c in 0..n - 1 {
                let corners = [(r, c), (r, c + 1), (r + 1, c + 1), (r + 1, c)];
                let mut hits = Vec::new();
                for k in 0..4 {
                    let (r0, c0) = corners[k];
                    let (r1, c1) = corners[(k + 1) % 4];
                    let (z0, z1) = (self.logit(r0, c0), self.logit(r1, c1));
                    if (z0 < 0.0) != (z1 < 0.0) {
                        let t = z0 / (z0 - z1);
                        hits.push((
                            self.xs[c0] + t * (self.xs[c1] - self.xs[c0]),
                            self.ys[r0] + t * (self.ys[r1] - self.ys[r0]),
                        ));
                    }
                }
                for pair in hits.chunks_exact(2) {
                    segs.push([pair[0], pair[1]]);
                }
            }
        }
        segs
    }

    /// Score heatmap with the 0.5 contour, data points coloured by label and
    /// pair segments.
    pub fn to_svg(&self, size: u32) -> String {
        let n = self.res();
        let s = f64::from(size);
        let (x0, x1) = (self.xs[0], self.xs[n - 1]);
        let (y0, y1) = (self.ys[0], self.ys[n - 1]);
        let px = |x: f64| (x - x0) / (x1 - x0) * s;
        let py = |y: f64| s - (y - y0) / (y1 - y0) * s;
        let cell = s / (n - 1) as f64;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
        );
        let _ = writeln!(out, r#"<g id="scores" shape-rendering="crispEdges">"#);
        for r in 0..n {
            for c in 0..n {
                let p = sigmoid_scalar(self.logit(r, c));
                let red = (255.0 * p).round() as u8;
                let blue = (255.0 * (1.0 - p)).round() as u8;
                let _ = writeln!(
                    out,
                    r##"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="#{red:02x}80{blue:02x}" fill-opacity="0.35"/>"##,
                    px(self.xs[c]) - cell / 2.0,
                    py(self.ys[r]) - cell / 2.0,
                );
            }
        }
        let _ = writeln!(out, "</g>");
        let _ = writeln!(out, r#"<g id="contour" stroke="black" stroke-width="2">"#);
        for [a, b] in self.contour_segments() {
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                px(a.0),
                py(a.1),
                px(b.0),
                py(b.1)
            );
        }
        let _ = writeln!(out, "</g>");
        if !self.segments.is_empty() {
            let _ = writeln!(out, r#"<g id="pairs" stroke="dimgray" stroke-width="1" stroke-dasharray="3,2">"#);
            for [a, b] in &self.segments {
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                    px(a.0),
                    py(a.1),
                    px(b.0),
                    py(b.1)
                );
            }
            let _ = writeln!(out, "</g>");
        }
        let _ = writeln!(out, r#"<g id="points" stroke="black" stroke-width="0.5">"#);
        for &(x, y, label) in &self.points {
            let fill = if label == 1 { "crimson" } else { "royalblue" };
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{fill}"/>"#, px(x), py(y));
        }
        let _ = writeln!(out, "</g>\n</svg>");
        out
    }
}
