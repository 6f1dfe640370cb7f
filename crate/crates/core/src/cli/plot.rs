//! Static SVG line plots.

use std::fmt::Write as _;

use crate::motion_data::MotionSequence;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Axis-aligned panel mapping data coordinates into a pixel box.
struct Panel {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Panel {
    fn new(x: f64, y: f64, w: f64, h: f64, points: impl Iterator<Item = [f64; 2]>, equal: bool) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !lo[0].is_finite() {
            lo = [0.0; 2];
            hi = [1.0; 2];
        }
        for a in 0..2 {
            let pad = ((hi[a] - lo[a]) * 0.05).max(1e-3);
            lo[a] -= pad;
            hi[a] += pad;
        }
        if equal {
            let scale = ((hi[0] - lo[0]) / w).max((hi[1] - lo[1]) / h);
            for (a, extent) in [w, h].into_iter().enumerate() {
                let mid = 0.5 * (lo[a] + hi[a]);
                lo[a] = mid - 0.5 * scale * extent;
                hi[a] = mid + 0.5 * scale * extent;
            }
        }
        Panel { x, y, w, h, lo, hi }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            self.x + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.w,
            self.y + self.h - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * self.h,
        )
    }

    fn frame(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#888"/>"##,
            self.x, self.y, self.w, self.h
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="13">{}</text>"#, self.x, self.y - 6.0, escape(title));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            self.x + self.w / 2.0,
            self.y + self.h + 28.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            self.x - 34.0,
            self.y + self.h / 2.0,
            self.x - 34.0,
            self.y + self.h / 2.0,
            escape(ylabel)
        );
        for v in [self.lo[0], self.hi[0]] {
            let (px, py) = self.map([v, self.lo[1]]);
            let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#, py + 13.0, tick(v));
        }
        for v in [self.lo[1], self.hi[1]] {
            let (px, py) = self.map([self.lo[0], v]);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#, px - 3.0, py + 3.0, tick(v));
        }
    }

    fn polyline(&self, out: &mut String, points: &[[f64; 2]], color: &str) {
        if points.len() == 1 || points.windows(2).all(|w| w[0] == w[1]) {
            let (px, py) = self.map(points[0]);
            let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"/>"#);
            return;
        }
        let mut d = String::new();
        for p in points {
            let (px, py) = self.map(*p);
            let _ = write!(d, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

fn legend(out: &mut String, x: f64, y: f64, names: &[String]) {
    for (i, n) in names.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<line x1="{x}" y1="{yy}" x2="{}" y2="{yy}" stroke="{c}" stroke-width="2"/>"#, x + 18.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, x + 22.0, yy + 4.0, escape(n));
    }
}

/// Ground-plane path (X against Z) of the chosen joints beside their X, Y
/// and Z coordinates over time.
pub fn trajectory_svg(motion: &MotionSequence, joints: &[usize], title: &str) -> String {
    let world = motion.global_joint_positions();
    let joints: Vec<usize> = joints.iter().copied().filter(|&j| j < motion.layout().joint_count()).collect();
    let names: Vec<String> = joints.iter().map(|j| if *j == 0 { "root".into() } else { format!("joint {j}") }).collect();
    let track = |j: usize, f: &dyn Fn(&[f64; 3], usize) -> [f64; 2]| -> Vec<[f64; 2]> {
        world.iter().enumerate().map(|(k, frame)| f(&frame[j], k)).collect()
    };
    let dt = 1.0 / motion.fps();
    let (w, h) = (980.0, 520.0);
    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(out, r#"<text x="20" y="22" font-size="15">{}</text>"#, escape(title));

    let paths: Vec<Vec<[f64; 2]>> = joints.iter().map(|&j| track(j, &|p, _| [p[0], p[2]])).collect();
    let ground = Panel::new(70.0, 60.0, 400.0, 400.0, paths.iter().flatten().copied(), true);
    ground.frame(&mut out, "ground-plane path", "x", "z");
    for (i, p) in paths.iter().enumerate() {
        ground.polyline(&mut out, p, PALETTE[i % PALETTE.len()]);
    }

    for (axis, label) in ["x", "y", "z"].iter().enumerate() {
        let series: Vec<Vec<[f64; 2]>> = joints.iter().map(|&j| track(j, &|p, k| [k as f64 * dt, p[axis]])).collect();
        let panel = Panel::new(560.0, 60.0 + 150.0 * axis as f64, 300.0, 100.0, series.iter().flatten().copied(), false);
        panel.frame(&mut out, &format!("{label} over time"), "seconds", label);
        for (i, s) in series.iter().enumerate() {
            panel.polyline(&mut out, s, PALETTE[i % PALETTE.len()]);
        }
    }
    legend(&mut out, 880.0, 70.0, &names);
    out.push_str("</svg>\n");
    out
}

/// Each named series against the shared x values, one panel per series.
pub fn series_svg(title: &str, xlabel: &str, x: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let (w, ph) = (640.0, 220.0);
    let h = 60.0 + (ph + 60.0) * series.len() as f64;
    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(out, r#"<text x="20" y="22" font-size="15">{}</text>"#, escape(title));
    for (i, (name, ys)) in series.iter().enumerate() {
        let pts: Vec<[f64; 2]> = x.iter().zip(ys).map(|(a, b)| [*a, *b]).collect();
        let panel = Panel::new(90.0, 60.0 + (ph + 60.0) * i as f64, 500.0, ph, pts.iter().copied(), false);
        panel.frame(&mut out, name, xlabel, name);
        let color = PALETTE[i % PALETTE.len()];
        panel.polyline(&mut out, &pts, color);
        for p in &pts {
            let (px, py) = panel.map(*p);
            let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{color}"/>"#);
        }
    }
    out.push_str("</svg>\n");
    out
}
