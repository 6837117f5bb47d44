//! Plain SVG plots: phase waterfall heat map and arrival-time scatter.

use std::fmt::Write;

use ccotdr::analysis::{ArrivalTimeSet, LocalizationFit};
use ccotdr::fingerprint::SectionPhaseWaterfall;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const MAX_ROWS: usize = 400;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<title>{title}</title>\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn axes(out: &mut String, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        "<path d=\"M{x0} {y0} L{x0} {y1} L{x1} {y1}\" stroke=\"black\" fill=\"none\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{x_label}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        out,
        "<text x=\"15\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 15 {})\" \
         text-anchor=\"middle\">{y_label}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (v, px, anchor, py) in [
        (x.0, x0, "start", y1 + 18.0),
        (x.1, x1, "end", y1 + 18.0),
    ] {
        let _ = writeln!(
            out,
            "<text x=\"{px}\" y=\"{py}\" text-anchor=\"{anchor}\" font-size=\"11\">{v:.4}</text>"
        );
    }
    for (v, py) in [(y.0, y1), (y.1, y0 + 10.0)] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{py}\" text-anchor=\"end\" font-size=\"11\">{v:.4}</text>",
            x0 - 4.0
        );
    }
}

/// Blue-white-red diverging map of `v` in [-1, 1].
fn color(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v < 0.0 {
        let t = 1.0 + v;
        (t, t, 1.0)
    } else {
        let t = 1.0 - v;
        (1.0, t, t)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8
    )
}

/// Heat map of the phase change relative to the first frame; columns are
/// sections, rows are frames (decimated to at most 400).
pub fn phase_heatmap(w: &SectionPhaseWaterfall) -> String {
    let mut out = header("section phase waterfall");
    let rows = w.frame_count();
    let cols = w.section_count();
    if rows == 0 || cols == 0 {
        out.push_str("</svg>\n");
        return out;
    }
    let step = rows.div_ceil(MAX_ROWS);
    let shown: Vec<usize> = (0..rows).step_by(step).collect();
    let rel = |r: usize, c: usize| w.matrix[r][c] - w.matrix[0][c];
    let scale = shown
        .iter()
        .flat_map(|&r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| rel(r, c).abs())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let cw = (WIDTH - 2.0 * MARGIN) / cols as f64;
    let rh = (HEIGHT - 2.0 * MARGIN) / shown.len() as f64;
    for (i, &r) in shown.iter().enumerate() {
        for c in 0..cols {
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                MARGIN + c as f64 * cw,
                MARGIN + i as f64 * rh,
                cw + 0.05,
                rh + 0.05,
                color(rel(r, c) / scale)
            );
        }
    }
    let centers = w.centers();
    axes(
        &mut out,
        "section center (m)",
        "time (s)",
        (centers[0], centers[cols - 1]),
        ((rows - 1) as f64 * w.frame_period, 0.0),
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">±{scale:.3} rad</text>",
        WIDTH - MARGIN,
        MARGIN - 10.0
    );
    out.push_str("</svg>\n");
    out
}

/// Arrival time against section center, with the fitted V when present.
pub fn arrival_plot(arrivals: &ArrivalTimeSet, fit: Option<&LocalizationFit>) -> String {
    let mut out = header("arrival times");
    let pts = arrivals.points();
    if pts.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (mut zmin, mut zmax, mut tmin, mut tmax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(z, t) in &pts {
        zmin = zmin.min(z);
        zmax = zmax.max(z);
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    if let Some(f) = fit {
        tmin = tmin.min(f.onset_time);
    }
    let pad_z = ((zmax - zmin) * 0.05).max(0.5);
    let pad_t = ((tmax - tmin) * 0.05).max(1e-4);
    let (zmin, zmax, tmin, tmax) = (zmin - pad_z, zmax + pad_z, tmin - pad_t, tmax + pad_t);
    let px = |z: f64| MARGIN + (z - zmin) / (zmax - zmin) * (WIDTH - 2.0 * MARGIN);
    let py = |t: f64| HEIGHT - MARGIN - (t - tmin) / (tmax - tmin) * (HEIGHT - 2.0 * MARGIN);
    for &(z, t) in &pts {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>",
            px(z),
            py(t)
        );
    }
    if let Some(f) = fit {
        let model = |z: f64| f.onset_time + (z - f.impact_position).abs() / f.speed;
        let apex = f.impact_position.clamp(zmin, zmax);
        let _ = writeln!(
            out,
            "<path d=\"M{:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2}\" stroke=\"crimson\" fill=\"none\"/>",
            px(zmin),
            py(model(zmin)),
            px(apex),
            py(model(apex)),
            px(zmax),
            py(model(zmax))
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"12\">z0 = {:.2} m, v = {:.1} m/s, rmse = {:.2} ms</text>",
            WIDTH - MARGIN,
            MARGIN - 10.0,
            f.impact_position,
            f.speed,
            f.rmse * 1e3
        );
    }
    axes(&mut out, "section center (m)", "arrival (s)", (zmin, zmax), (tmin, tmax));
    out.push_str("</svg>\n");
    out
}
