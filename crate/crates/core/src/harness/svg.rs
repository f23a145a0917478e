//! Deterministic SVG figures. Numbers are printed with fixed precision so the
//! same data always produces the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::PlantSpec;
use crate::linalg::{Mat, Vector};
use crate::partition::Partition;
use crate::uncertainty::UncertaintyReport;
use crate::verify::{DiscretePWA, Roa};
use crate::{Error, Result};

use super::learn::OnlineLearner;
use super::pipeline::Baseline;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Five-stop blue → yellow ramp, `t` clamped to `[0, 1]`.
pub fn ramp(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * 4.0;
    let i = (s.floor() as usize).min(3);
    let f = s - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mark {
    Line { points: Vec<[f64; 2]>, color: String, width: f64 },
    Points { points: Vec<[f64; 2]>, color: String, radius: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2], fill: String },
    Circle { center: [f64; 2], radius: f64, color: String },
    Arrow { from: [f64; 2], to: [f64; 2], color: String },
}

impl Mark {
    pub fn line(points: Vec<[f64; 2]>, color: &str) -> Self {
        Mark::Line { points, color: color.into(), width: 1.5 }
    }

    fn extent(&self) -> Vec<[f64; 2]> {
        match self {
            Mark::Line { points, .. } | Mark::Points { points, .. } => points.clone(),
            Mark::Rect { lo, hi, .. } => vec![*lo, *hi],
            Mark::Circle { center, radius, .. } => {
                vec![[center[0] - radius, center[1] - radius], [center[0] + radius, center[1] + radius]]
            }
            Mark::Arrow { from, to, .. } => vec![*from, *to],
        }
    }
}

/// One set of axes with its marks.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Data ranges; `None` fits the marks.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub marks: Vec<Mark>,
    /// Keep one data unit equally long on both axes.
    pub equal: bool,
}

impl Panel {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range: None,
            y_range: None,
            marks: vec![],
            equal: false,
        }
    }

    fn ranges(&self) -> Result<((f64, f64), (f64, f64))> {
        let pts: Vec<[f64; 2]> = self.marks.iter().flat_map(Mark::extent).collect();
        if pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Validation(format!("panel `{}` has non-finite data", self.title)));
        }
        let fit = |k: usize| -> (f64, f64) {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.03 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let xr = self.x_range.unwrap_or_else(|| fit(0));
        let yr = self.y_range.unwrap_or_else(|| fit(1));
        for (lo, hi) in [xr, yr] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Validation(format!("panel `{}` has an empty or invalid range", self.title)));
            }
        }
        Ok((xr, yr))
    }
}

/// A grid of panels.
#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub panels: Vec<Panel>,
    pub columns: usize,
    pub panel_width: f64,
    pub panel_height: f64,
}

impl Figure {
    pub fn single(panel: Panel) -> Self {
        Self { panels: vec![panel], columns: 1, panel_width: 480.0, panel_height: 400.0 }
    }

    pub fn grid(panels: Vec<Panel>, columns: usize) -> Self {
        Self { panels, columns, panel_width: 420.0, panel_height: 300.0 }
    }

    pub fn render(&self) -> Result<String> {
        if self.columns == 0 || !(self.panel_width > 0.0) || !(self.panel_height > 0.0) {
            return Err(Error::Validation("figure needs positive size and at least one column".into()));
        }
        let rows = self.panels.len().div_ceil(self.columns).max(1);
        let (pw, ph) = (self.panel_width, self.panel_height);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif" font-size="11">"#,
            pw * self.columns as f64,
            ph * rows as f64,
            pw * self.columns as f64,
            ph * rows as f64
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (k, panel) in self.panels.iter().enumerate() {
            let ox = (k % self.columns) as f64 * pw;
            let oy = (k / self.columns) as f64 * ph;
            render_panel(&mut s, panel, ox, oy, pw, ph)?;
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(s: &mut String, panel: &Panel, ox: f64, oy: f64, pw: f64, ph: f64) -> Result<()> {
    let ((x0, x1), (y0, y1)) = panel.ranges()?;
    let (ml, mr, mt, mb) = (52.0, 12.0, 24.0, 36.0);
    let (mut w, mut h) = (pw - ml - mr, ph - mt - mb);
    if panel.equal {
        let scale = (w / (x1 - x0)).min(h / (y1 - y0));
        w = scale * (x1 - x0);
        h = scale * (y1 - y0);
    }
    let (left, top) = (ox + ml, oy + mt);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| top + h - (y - y0) / (y1 - y0) * h;
    let _ = writeln!(s, r#"<g>"#);
    let _ = writeln!(s, r##"<rect x="{left:.2}" y="{top:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#444"/>"##);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#, left + w / 2.0, oy + 16.0, esc(&panel.title));
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + w / 2.0, top + h + 30.0, esc(&panel.x_label));
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        ox + 14.0,
        top + h / 2.0,
        ox + 14.0,
        top + h / 2.0,
        esc(&panel.y_label)
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#, px(fx), top + h + 14.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9">{}</text>"#, left - 4.0, py(fy) + 3.0, tick(fy));
    }
    let _ = writeln!(s, r#"<clipPath id="c{:.0}_{:.0}"><rect x="{left:.2}" y="{top:.2}" width="{w:.2}" height="{h:.2}"/></clipPath>"#, ox, oy);
    let _ = writeln!(s, r#"<g clip-path="url(#c{:.0}_{:.0})">"#, ox, oy);
    for mark in &panel.marks {
        match mark {
            Mark::Rect { lo, hi, fill } => {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    px(lo[0]),
                    py(hi[1]),
                    px(hi[0]) - px(lo[0]),
                    py(lo[1]) - py(hi[1])
                );
            }
            Mark::Line { points, color, width } => {
                if points.is_empty() {
                    continue;
                }
                let mut d = String::new();
                for (i, p) in points.iter().enumerate() {
                    let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "" } else { " " }, px(p[0]), py(p[1]));
                }
                let _ = writeln!(s, r#"<polyline points="{d}" fill="none" stroke="{color}" stroke-width="{width:.2}"/>"#);
            }
            Mark::Points { points, color, radius } => {
                for p in points {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{radius:.2}" fill="{color}"/>"#, px(p[0]), py(p[1]));
                }
            }
            Mark::Circle { center, radius, color } => {
                let _ = writeln!(
                    s,
                    r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" fill="none" stroke="{color}"/>"#,
                    px(center[0]),
                    py(center[1]),
                    radius / (x1 - x0) * w,
                    radius / (y1 - y0) * h
                );
            }
            Mark::Arrow { from, to, color } => {
                let (ax, ay, bx, by) = (px(from[0]), py(from[1]), px(to[0]), py(to[1]));
                let (dx, dy) = (bx - ax, by - ay);
                let len = dx.hypot(dy);
                let _ = write!(s, r#"<line x1="{ax:.2}" y1="{ay:.2}" x2="{bx:.2}" y2="{by:.2}" stroke="{color}"/>"#);
                if len > 1e-9 {
                    let (ux, uy) = (dx / len, dy / len);
                    let hs = 3.0f64.min(len);
                    let _ = write!(
                        s,
                        r#"<polygon points="{bx:.2},{by:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
                        bx - hs * ux - 0.6 * hs * uy,
                        by - hs * uy + 0.6 * hs * ux,
                        bx - hs * ux + 0.6 * hs * uy,
                        by - hs * uy - 0.6 * hs * ux
                    );
                }
                s.push('\n');
            }
        }
    }
    s.push_str("</g>\n</g>\n");
    Ok(())
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

pub fn write(path: &Path, fig: &Figure) -> Result<()> {
    super::io::write_atomic(path, fig.render()?.as_bytes())
}

/// Closed polyline of `{xᵀPx = c}` for a 2×2 positive definite `P`.
pub fn ellipse(p: &Mat, c: f64, points: usize) -> Vec<[f64; 2]> {
    let eig = p.clone().symmetric_eigen();
    let mut out: Vec<[f64; 2]> = (0..points)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
            let a = (c / eig.eigenvalues[0]).sqrt() * t.cos();
            let b = (c / eig.eigenvalues[1]).sqrt() * t.sin();
            let v = eig.eigenvectors.column(0) * a + eig.eigenvectors.column(1) * b;
            [v[0], v[1]]
        })
        .collect();
    if let Some(&first) = out.first() {
        out.push(first);
    }
    out
}

/// One heatmap panel per state component of `d̄_σ`.
pub fn uncertainty_heatmaps(partition: &Partition, report: &UncertaintyReport) -> Result<Figure> {
    if partition.dim() != 2 {
        return Err(Error::Unsupported("heatmaps are drawn for 2-D partitions".into()));
    }
    let n = report.pieces.first().map_or(0, |p| p.d_bar.len());
    let mut panels = vec![];
    for i in 0..n {
        let top = report.pieces.iter().map(|p| p.d_bar[i]).fold(0.0, f64::max);
        let mut panel = Panel::new(&format!("d_bar[{}] (max {:.3})", i + 1, top), "x1", "x2");
        for (cell, piece) in partition.cells.iter().zip(&report.pieces) {
            let verts = cell.vertices_2d();
            let fill = ramp(if top > 0.0 { piece.d_bar[i] / top } else { 0.0 });
            // grid cells are boxes; other cells are drawn by their bounding box
            let (lo, hi) = cell.bounding_box();
            if verts.len() >= 3 {
                panel.marks.push(Mark::Rect { lo: [lo[0], lo[1]], hi: [hi[0], hi[1]], fill });
            }
        }
        panel.equal = true;
        panels.push(panel);
    }
    Ok(Figure::grid(panels, n.max(1)))
}

/// Sample locations with the largest empty state ball of every cell.
pub fn sample_gaps(learner: &OnlineLearner, report: &UncertaintyReport) -> Result<Figure> {
    let mut panel = Panel::new("samples and largest empty balls", "x1", "x2");
    let mut pts = vec![];
    for ring in &learner.db.pieces {
        // thin dense rings so the file stays small
        let stride = (ring.len() / 150).max(1);
        pts.extend(ring.iter().step_by(stride).map(|r| [r.x[0], r.x[1]]));
    }
    panel.marks.push(Mark::Points { points: pts, color: "#888888".into(), radius: 0.8 });
    for piece in &report.pieces {
        let b = &piece.state_gap;
        if b.center.len() == 2 {
            panel.marks.push(Mark::Circle { center: [b.center[0], b.center[1]], radius: b.radius, color: color(1).into() });
        }
    }
    let lo = &learner.plant.roi_lo;
    let hi = &learner.plant.roi_hi;
    panel.x_range = Some((lo[0], hi[0]));
    panel.y_range = Some((lo[1], hi[1]));
    panel.equal = true;
    Ok(Figure::single(panel))
}

/// RK4 trajectories of the true plant under the saturated piecewise law,
/// started on a ring of radius `0.8 · min(ROI half width)`.
pub fn pendulum_trajectories(sys: &DiscretePWA, learner: &OnlineLearner, count: usize, horizon: f64) -> Result<Vec<Vec<[f64; 2]>>> {
    let plant: &PlantSpec = &learner.plant;
    let radius = 0.8 * plant.roi_hi.iter().zip(&plant.roi_lo).map(|(h, l)| 0.5 * (h - l)).fold(f64::INFINITY, f64::min);
    let mut out = vec![];
    for k in 0..count {
        let t = 2.0 * std::f64::consts::PI * k as f64 / count.max(1) as f64;
        let x0 = Vector::from_vec(vec![radius * t.cos() * 0.5, radius * t.sin()]);
        let law = |x: &Vector| match sys.partition.cell_of(x.as_slice()) {
            Some(s) => -(&sys.gain[s] * x + &sys.offset[s]),
            None => Vector::zeros(plant.m),
        };
        let traj = plant.simulate(law, &x0, sys.h, horizon, &learner.cost)?;
        out.push(traj.states.iter().step_by(4).map(|x| [x[0], x[1]]).collect());
    }
    Ok(out)
}

/// Phase portrait of the discrete closed loop: displacement arrows colored by
/// magnitude, the verified level set, the LQR ellipse and trajectories.
pub fn phase_portrait(sys: &DiscretePWA, roa: Option<&Roa>, baseline: Option<&Baseline>, trajectories: &[Vec<[f64; 2]>]) -> Result<Figure> {
    let (lo, hi) = sys.roi.bounding_box();
    let mut panel = Panel::new("closed loop and verified region", "x1", "x2");
    let per = 17;
    let zero = Vector::zeros(2);
    let mut arrows = vec![];
    for i in 0..per {
        for j in 0..per {
            let x = Vector::from_vec(vec![
                lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / per as f64,
                lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / per as f64,
            ]);
            let Some(s) = sys.partition.cell_of(x.as_slice()) else { continue };
            let dx = (sys.step_in(s, &x, &zero) - &x) / sys.h;
            arrows.push((x, dx));
        }
    }
    let top = arrows.iter().map(|(_, d)| d.norm()).fold(0.0, f64::max);
    let cell = (hi[0] - lo[0]) / per as f64 * 0.45;
    for (x, d) in &arrows {
        let len = d.norm();
        let dir = if len > 0.0 { d / len } else { d.clone() };
        panel.marks.push(Mark::Arrow {
            from: [x[0], x[1]],
            to: [x[0] + dir[0] * cell, x[1] + dir[1] * cell * (hi[1] - lo[1]) / (hi[0] - lo[0])],
            color: ramp(if top > 0.0 { len / top } else { 0.0 }),
        });
    }
    for (k, t) in trajectories.iter().enumerate() {
        panel.marks.push(Mark::Line { points: t.clone(), color: color(2 + k % 3).into(), width: 1.0 });
    }
    if let Some(b) = baseline {
        panel.marks.push(Mark::line(ellipse(&b.p, b.level, 120), "#000000"));
    }
    if let Some(r) = roa {
        panel.marks.push(Mark::Line { points: r.boundary.clone(), color: color(1).into(), width: 2.0 });
    }
    panel.x_range = Some((lo[0], hi[0]));
    panel.y_range = Some((lo[1], hi[1]));
    Ok(Figure::single(panel))
}

/// Line panels sharing one abscissa.
pub fn traces(title: &str, x_label: &str, xs: &[f64], series: &[(&str, Vec<f64>)], columns: usize) -> Result<Figure> {
    let mut panels = vec![];
    for (k, (name, ys)) in series.iter().enumerate() {
        if ys.len() != xs.len() {
            return Err(Error::Validation(format!("series `{name}` has {} points for {} abscissae", ys.len(), xs.len())));
        }
        let mut p = Panel::new(&format!("{title}: {name}"), x_label, name);
        p.marks.push(Mark::line(xs.iter().zip(ys).map(|(x, y)| [*x, *y]).collect(), color(k)));
        panels.push(p);
    }
    Ok(Figure::grid(panels, columns.max(1)))
}

/// Histogram of positive samples on a log10 axis.
pub fn histogram(title: &str, x_label: &str, samples: &[f64], bins: usize) -> Result<Panel> {
    let mut panel = Panel::new(title, x_label, "count");
    let logs: Vec<f64> = samples.iter().filter(|v| **v > 0.0).map(|v| v.log10()).collect();
    if logs.is_empty() || bins == 0 {
        return Ok(panel);
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-6);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &logs {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        let a = lo + width * k as f64;
        panel.marks.push(Mark::Rect { lo: [a, 0.0], hi: [a + width, *c as f64], fill: color(0).into() });
    }
    panel.x_label = format!("{x_label} (log10)");
    Ok(panel)
}
