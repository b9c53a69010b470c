//! CSV point dumps and SVG figures: level sets of `|h|` on the complex line
//! through `ζ` in the first coordinate, and the continuity curve `ω(δ)`.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::Result;
use crate::peak::PeakEvaluator;
use crate::pipeline::Construction;
use crate::sampling;
use crate::verify::ContinuityRow;

/// Contour levels of `|h|`.
pub const LEVELS: [f64; 8] = [0.5, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99, 0.995];

const PANEL: f64 = 420.0;
const MARGIN: f64 = 40.0;

/// Header of the point dump for dimension `n`.
pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for p in ["zeta", "z"] {
        for j in 1..=n {
            cols.push(format!("{p}{j}_re"));
            cols.push(format!("{p}{j}_im"));
        }
    }
    cols.extend(["re_h", "im_h", "abs_h"].map(String::from));
    cols.join(",")
}

/// `points` quasi-random samples of `Ĝ_t` per evaluator, with their `h` values.
pub fn csv_dump(construction: &Construction, points: usize) -> Result<String> {
    let n = construction.family.dimension();
    let bbox = &construction.domains.bbox;
    let cand = sampling::halton_in_box(bbox, points * 4, 21);
    let rows: Vec<Vec<String>> = construction
        .evaluators
        .par_iter()
        .map(|ev| {
            let mut out = Vec::new();
            for z in cand.iter().filter(|z| ev.contains(z)).take(points) {
                let h = ev.eval_h(z)?;
                let mut row = vec![fmt(ev.t().re())];
                for c in ev.zeta().coords().iter().chain(z) {
                    row.push(fmt(c.re));
                    row.push(fmt(c.im));
                }
                row.extend([fmt(h.re), fmt(h.im), fmt(h.norm())]);
                out.push(row.join(","));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut s = csv_header(n);
    s.push('\n');
    for line in rows.into_iter().flatten() {
        s.push_str(&line);
        s.push('\n');
    }
    Ok(s)
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// A scalar field sampled on a square grid; `NaN` marks points off the domain.
struct Raster {
    lo: [f64; 2],
    step: f64,
    res: usize,
    values: Vec<f64>,
}

impl Raster {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.res + 1) + i]
    }

    fn point(&self, i: f64, j: f64) -> [f64; 2] {
        [self.lo[0] + i * self.step, self.lo[1] + j * self.step]
    }
}

/// Line segments of the level set `{f = level}` by marching squares.
fn contour(r: &Raster, level: f64) -> Vec<[[f64; 2]; 2]> {
    let mut segs = Vec::new();
    for j in 0..r.res {
        for i in 0..r.res {
            let c = [r.at(i, j), r.at(i + 1, j), r.at(i + 1, j + 1), r.at(i, j + 1)];
            if c.iter().any(|v| v.is_nan()) {
                continue;
            }
            let corner = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            // crossings on edges 0-1, 1-2, 2-3, 3-0
            let mut cross = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (c[e], c[(e + 1) % 4]);
                if (a < level) != (b < level) {
                    let s = (level - a) / (b - a);
                    let (p, q) = (corner[e], corner[(e + 1) % 4]);
                    cross.push(r.point(i as f64 + p.0 + s * (q.0 - p.0), j as f64 + p.1 + s * (q.1 - p.1)));
                }
            }
            match cross.len() {
                2 => segs.push([cross[0], cross[1]]),
                4 => {
                    // saddle: pair by the centre value
                    let centre = c.iter().sum::<f64>() / 4.0;
                    if (centre < level) == (c[0] < level) {
                        segs.push([cross[0], cross[3]]);
                        segs.push([cross[1], cross[2]]);
                    } else {
                        segs.push([cross[0], cross[1]]);
                        segs.push([cross[2], cross[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

fn path(segs: &[[[f64; 2]; 2]], map: &dyn Fn([f64; 2]) -> (f64, f64)) -> String {
    let mut d = String::new();
    for [a, b] in segs {
        let (x0, y0) = map(*a);
        let (x1, y1) = map(*b);
        let _ = write!(d, "M{x0:.2} {y0:.2}L{x1:.2} {y1:.2}");
    }
    d
}

fn colour(level: f64) -> String {
    let s = ((level - 0.5) / 0.5).clamp(0.0, 1.0);
    format!("rgb({},{},{})", (40.0 + 200.0 * s) as u8, (60.0 + 80.0 * (1.0 - s)) as u8, (200.0 * (1.0 - s)) as u8)
}

/// Level sets of `|h|` on `{z : z_k = ζ_k, k ≥ 2}` with the boundaries of `G_t` and `Ĝ_t`.
pub fn level_set_panel(construction: &Construction, ev: &PeakEvaluator, res: usize) -> Result<String> {
    let bbox = &construction.domains.bbox;
    let zeta = ev.zeta().coords().to_vec();
    let side = (bbox.hi[0] - bbox.lo[0]).max(bbox.hi[1] - bbox.lo[1]);
    let lo = [0.5 * (bbox.lo[0] + bbox.hi[0]) - 0.5 * side, 0.5 * (bbox.lo[1] + bbox.hi[1]) - 0.5 * side];
    let step = side / res as f64;
    let slice = |i: usize, j: usize| -> Vec<C64> {
        let mut z = zeta.clone();
        z[0] = C64::new(lo[0] + i as f64 * step, lo[1] + j as f64 * step);
        z
    };
    let nodes: Vec<(usize, usize)> = (0..=res).flat_map(|j| (0..=res).map(move |i| (i, j))).collect();
    let abs_h: Vec<f64> = nodes
        .par_iter()
        .map(|&(i, j)| {
            let z = slice(i, j);
            if ev.contains(&z) {
                ev.eval_h(&z).map(|h| h.norm())
            } else {
                Ok(f64::NAN)
            }
        })
        .collect::<Result<_>>()?;
    let family = &construction.family;
    let level: Vec<f64> = nodes.iter().map(|&(i, j)| family.value(ev.t(), &slice(i, j))).collect();
    let hr = Raster { lo, step, res, values: abs_h };
    let lr = Raster { lo, step, res, values: level };

    let map = |p: [f64; 2]| (MARGIN + (p[0] - lo[0]) / side * PANEL, MARGIN + PANEL - (p[1] - lo[1]) / side * PANEL);
    let mut s = String::new();
    let _ = writeln!(s, r#"<g id="levels">"#);
    let _ = writeln!(s, r##"<rect x="{MARGIN}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="#fafafa" stroke="#999"/>"##);
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#000" stroke-width="1.5"/>"##,
        path(&contour(&lr, 0.0), &map)
    );
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
        path(&contour(&lr, construction.certificate.eta_hat), &map)
    );
    for l in LEVELS {
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="0.8"><title>|h| = {l}</title></path>"#,
            path(&contour(&hr, l), &map),
            colour(l)
        );
    }
    let (zx, zy) = map([zeta[0].re, zeta[0].im]);
    let _ = writeln!(s, r##"<circle cx="{zx:.2}" cy="{zy:.2}" r="3" fill="#c00"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{:.0}" font-size="12">|h| level sets, t = {}, first coordinate through zeta</text>"#,
        MARGIN - 12.0,
        ev.t().re()
    );
    let _ = writeln!(s, "</g>");
    Ok(s)
}

/// Log-log plot of `ω(δ)`.
pub fn omega_panel(rows: &[ContinuityRow], x0: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<g id="omega">"#);
    let _ = writeln!(s, r##"<rect x="{x0}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="#fff" stroke="#999"/>"##);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.delta > 0.0 && r.omega > 0.0)
        .map(|r| (r.delta.log10(), r.omega.log10()))
        .collect();
    if let (Some(xmin), Some(xmax)) = (
        pts.iter().map(|p| p.0).min_by(f64::total_cmp),
        pts.iter().map(|p| p.0).max_by(f64::total_cmp),
    ) {
        let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let sx = (xmax - xmin).max(1e-9);
        let sy = (ymax - ymin).max(1e-9);
        let map = |(x, y): (f64, f64)| {
            (x0 + 30.0 + (x - xmin) / sx * (PANEL - 60.0), MARGIN + PANEL - 30.0 - (y - ymin) / sy * (PANEL - 60.0))
        };
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let (x, y) = map(*p);
                format!("{}{x:.2} {y:.2}", if k == 0 { "M" } else { "L" })
            })
            .collect();
        let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="#036" stroke-width="1.5"/>"##, d.join(""));
        for (r, p) in rows.iter().filter(|r| r.delta > 0.0 && r.omega > 0.0).zip(&pts) {
            let (x, y) = map(*p);
            let _ = writeln!(
                s,
                r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#036"><title>delta {} omega {:.3e} ({} triples)</title></circle>"##,
                r.delta, r.omega, r.count
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{x0}" y="{:.0}" font-size="12">continuity modulus omega(delta), log-log</text>"#,
        MARGIN - 12.0
    );
    let _ = writeln!(s, "</g>");
    s
}

/// Full SVG document: one level-set panel and, if given, the `ω(δ)` curve.
pub fn svg_figure(construction: &Construction, ev: &PeakEvaluator, omega: Option<&[ContinuityRow]>, res: usize) -> Result<String> {
    let panels = if omega.is_some() { 2.0 } else { 1.0 };
    let width = panels * (PANEL + MARGIN) + MARGIN;
    let height = PANEL + 2.0 * MARGIN;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    s.push('\n');
    s.push_str(&level_set_panel(construction, ev, res)?);
    if let Some(rows) = omega {
        s.push_str(&omega_panel(rows, 2.0 * MARGIN + PANEL));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
