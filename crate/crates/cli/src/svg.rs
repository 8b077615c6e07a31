//! Minimal static SVG figures: voltage envelopes and region slices.

use std::fmt::Write as _;

use gridstab::region::{ChebyshevResult, OperatingRanges, Slice};
use gridstab::sim::{MetricsOptions, MetricsReport, Trace};

const W: f64 = 720.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str) {
    let _ = write!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points=""#
    );
    for (x, y) in pts {
        let _ = write!(out, "{x:.2},{y:.2} ");
    }
    out.push_str("\"/>\n");
}

/// Controlled and uncontrolled min/max voltage envelopes with the bands.
pub fn envelope(
    trace: &Trace,
    on: &MetricsReport,
    off: &MetricsReport,
    opts: &MetricsOptions,
) -> String {
    let steps = on.envelope_min.len().max(1);
    let all = on
        .envelope_min
        .iter()
        .chain(&on.envelope_max)
        .chain(&off.envelope_min)
        .chain(&off.envelope_max);
    let lo = all.clone().copied().fold(1.0 - 1.5 * opts.band, f64::min);
    let hi = all.copied().fold(1.0 + 1.5 * opts.band, f64::max);
    let sx = |k: usize| PAD + (W - 2.0 * PAD) * k as f64 / (steps - 1).max(1) as f64;
    let sy = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
"#
    );
    for (v, dash) in [
        (1.0 + opts.band, "6,3"),
        (1.0 - opts.band, "6,3"),
        (1.0 + opts.inner_band, "2,3"),
        (1.0 - opts.inner_band, "2,3"),
    ] {
        let y = sy(v);
        let _ = writeln!(
            out,
            r##"<line x1="{PAD}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#888" stroke-dasharray="{dash}"/>"##,
            W - PAD
        );
    }
    let series = |v: &[f64]| {
        v.iter()
            .enumerate()
            .map(|(k, &x)| (sx(k), sy(x)))
            .collect::<Vec<_>>()
    };
    polyline(&mut out, &series(&off.envelope_min), "#bbbbbb");
    polyline(&mut out, &series(&off.envelope_max), "#bbbbbb");
    polyline(&mut out, &series(&on.envelope_min), "#1f5fa8");
    polyline(&mut out, &series(&on.envelope_max), "#c0392b");
    let x_on = sx(trace.k_on.min(steps - 1));
    let _ = writeln!(
        out,
        r##"<line x1="{x_on:.2}" x2="{x_on:.2}" y1="{PAD}" y2="{}" stroke="#2a2"/>"##,
        H - PAD
    );
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="20">voltage envelope (p.u.), {:.3} to {:.3}; step {} s</text>"#,
        lo, hi, trace.dt
    );
    out.push_str("</svg>\n");
    out
}

/// Feasible cells of a planar slice, the ball's trace and the range square.
pub fn slice(sl: &Slice, cheb: &ChebyshevResult, ranges: &OperatingRanges) -> String {
    let (nx, ny) = (sl.xs.len(), sl.ys.len());
    let side = H - 2.0 * PAD;
    let cell = side / nx.max(ny) as f64;
    let (x0, x1) = (sl.xs[0], sl.xs[nx - 1]);
    let (y0, y1) = (sl.ys[0], sl.ys[ny - 1]);
    let sx = |x: f64| PAD + side * (x - x0) / (x1 - x0);
    let sy = |y: f64| H - PAD - side * (y - y0) / (y1 - y0);
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
"#,
        side + 2.0 * PAD
    );
    for (j, &y) in sl.ys.iter().enumerate() {
        for (i, &x) in sl.xs.iter().enumerate() {
            if sl.feasible[j * nx + i] {
                let _ = writeln!(
                    out,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cfe3f7"/>"##,
                    sx(x) - cell / 2.0,
                    sy(y) - cell / 2.0,
                    cell,
                    cell
                );
            }
        }
    }
    let (cx, cy) = (cheb.center[sl.dims.0], cheb.center[sl.dims.1]);
    let r = side * cheb.radius / (x1 - x0);
    let _ = writeln!(
        out,
        r##"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="none" stroke="#1f5fa8"/>"##,
        sx(cx),
        sy(cy)
    );
    let w = side * ranges.width / (x1 - x0);
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{w:.2}" height="{w:.2}" fill="none" stroke="#c0392b"/>"##,
        sx(cx) - w / 2.0,
        sy(cy) - w / 2.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="20">parameters {} and {} (others at center); radius {:.4}</text>"#,
        sl.dims.0, sl.dims.1, cheb.radius
    );
    out.push_str("</svg>\n");
    out
}
