//! Deterministic SVG rendering: a Gantt chart per schedule and a curve for
//! memory sweeps. Output depends only on the inputs — coordinates are
//! formatted to fixed precision and elements are emitted in a fixed order —
//! so reruns are byte-identical.

use std::fmt::Write as _;

use ppsched::autosched::SweepPoint;
use ppsched::core::{PassKind, Schedule};
use ppsched::sim::SimResult;

const LEFT: f64 = 70.0;
const TOP: f64 = 42.0;
const PLOT_W: f64 = 1100.0;
const LANE_H: f64 = 28.0;
const LANE_GAP: f64 = 8.0;
const BOTTOM: f64 = 34.0;

/// Box fill per pass kind; the second shade marks chunk ordinals ≥ 2 so the
/// two halves of a V layout stay distinguishable.
fn fill(kind: PassKind, chunk: u32) -> &'static str {
    match (kind, chunk >= 2) {
        (PassKind::F, false) => "#5b9bd5",
        (PassKind::F, true) => "#2e75b6",
        (PassKind::B, false) => "#70ad47",
        (PassKind::B, true) => "#548235",
        (PassKind::W, false) => "#ed7d31",
        (PassKind::W, true) => "#c55a11",
    }
}

fn kind_letter(kind: PassKind) -> char {
    match kind {
        PassKind::F => 'F',
        PassKind::B => 'B',
        PassKind::W => 'W',
    }
}

/// One lane per stage, one labeled box per executed pass, idle time blank.
///
/// Every box carries its full description as a `<title>` label; the visible
/// microbatch number is drawn only when the box is wide enough to hold it.
pub fn render_gantt(schedule: &Schedule, sim: &SimResult) -> String {
    let p = schedule.topology.stages as usize;
    let makespan = sim
        .stages
        .iter()
        .map(|s| s.end.as_us())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let scale = PLOT_W / makespan;
    let width = LEFT + PLOT_W + 30.0;
    let height = TOP + p as f64 * (LANE_H + LANE_GAP) - LANE_GAP + BOTTOM;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}" font-family="monospace">"##
    );
    let _ = writeln!(out, r##"<rect width="{width:.2}" height="{height:.2}" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r##"<text x="{LEFT:.2}" y="16" font-size="12" fill="#303030">cost {}us  bubble {}us  rate {:.4}</text>"##,
        sim.cost.as_us(),
        sim.bubble.as_us(),
        sim.bubble_rate
    );

    for (row, passes) in sim.stage_passes.iter().enumerate() {
        let y = TOP + row as f64 * (LANE_H + LANE_GAP);
        let label_y = y + LANE_H / 2.0;
        let _ = writeln!(
            out,
            r##"<text class="lane" x="{:.2}" y="{label_y:.2}" font-size="11" fill="#303030" text-anchor="end" dominant-baseline="central">stage {}</text>"##,
            LEFT - 8.0,
            row + 1
        );
        for timed in passes {
            let x = LEFT + timed.start.as_us() as f64 * scale;
            let w = (timed.end - timed.start).as_us() as f64 * scale;
            let color = fill(timed.pass.kind, timed.pass.chunk);
            let _ = writeln!(
                out,
                r##"<rect class="pass" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{LANE_H:.2}" fill="{color}" stroke="#ffffff" stroke-width="0.5"><title>{} m{} c{} [{}..{}]us</title></rect>"##,
                kind_letter(timed.pass.kind),
                timed.pass.microbatch,
                timed.pass.chunk,
                timed.start.as_us(),
                timed.end.as_us()
            );
            if w >= 12.0 {
                let _ = writeln!(
                    out,
                    r##"<text x="{:.2}" y="{label_y:.2}" font-size="10" fill="#ffffff" text-anchor="middle" dominant-baseline="central">{}</text>"##,
                    x + w / 2.0,
                    timed.pass.microbatch
                );
            }
        }
    }

    let axis_y = height - BOTTOM + 12.0;
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#909090" stroke-width="1"/>"##,
        axis_y - 8.0,
        LEFT + PLOT_W,
        axis_y - 8.0
    );
    let _ = writeln!(
        out,
        r##"<text x="{LEFT:.2}" y="{axis_y:.2}" font-size="10" fill="#606060">0</text>"##
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{axis_y:.2}" font-size="10" fill="#606060" text-anchor="end">{}us</text>"##,
        LEFT + PLOT_W,
        makespan as i64
    );
    out.push_str("</svg>\n");
    out
}

/// Bubble rate against memory limit, with the analytic plateau marked.
pub fn render_sweep(points: &[SweepPoint], plateau_limit: i64) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 80.0;
    const R: f64 = 26.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;

    let min_x = points.iter().map(|p| p.m_limit).min().unwrap_or(0) as f64;
    let max_x = points.iter().map(|p| p.m_limit).max().unwrap_or(1) as f64;
    let span_x = (max_x - min_x).max(1.0);
    let max_y = points
        .iter()
        .map(|p| p.bubble_rate)
        .fold(0.0_f64, f64::max)
        .max(1e-4);
    let sx = |v: f64| L + (v - min_x) / span_x * (W - L - R);
    let sy = |v: f64| H - B - v / max_y * (H - T - B);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="monospace">"##
    );
    let _ = writeln!(out, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r##"<line x1="{L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#303030" stroke-width="1"/>"##,
        H - B,
        W - R,
        H - B
    );
    let _ = writeln!(
        out,
        r##"<line x1="{L}" y1="{T}" x2="{L}" y2="{:.2}" stroke="#303030" stroke-width="1"/>"##,
        H - B
    );

    if (min_x..=max_x).contains(&(plateau_limit as f64)) {
        let x = sx(plateau_limit as f64);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{T}" x2="{x:.2}" y2="{:.2}" stroke="#b0b0b0" stroke-width="1" stroke-dasharray="4 3"/>"##,
            H - B
        );
        let _ = writeln!(
            out,
            r##"<text x="{x:.2}" y="{:.2}" font-size="10" fill="#606060" text-anchor="middle">plateau</text>"##,
            T - 6.0
        );
    }

    if points.len() > 1 {
        let mut path = String::new();
        for point in points {
            let _ = write!(
                path,
                "{}{:.2},{:.2}",
                if path.is_empty() { "" } else { " " },
                sx(point.m_limit as f64),
                sy(point.bubble_rate)
            );
        }
        let _ = writeln!(
            out,
            r##"<polyline points="{path}" fill="none" stroke="#5b9bd5" stroke-width="1.5"/>"##
        );
    }
    for point in points {
        let _ = writeln!(
            out,
            r##"<circle class="pt" cx="{:.2}" cy="{:.2}" r="3" fill="#2e75b6"><title>limit {} rate {:.4}</title></circle>"##,
            sx(point.m_limit as f64),
            sy(point.bubble_rate),
            point.m_limit,
            point.bubble_rate
        );
    }

    let _ = writeln!(
        out,
        r##"<text x="{L}" y="{:.2}" font-size="10" fill="#606060">{}</text>"##,
        H - B + 16.0,
        min_x as i64
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#606060" text-anchor="end">{}</text>"##,
        W - R,
        H - B + 16.0,
        max_x as i64
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#606060" text-anchor="middle">activation limit (units)</text>"##,
        (L + W - R) / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#606060" text-anchor="end">{max_y:.4}</text>"##,
        L - 6.0,
        T + 4.0
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#606060" text-anchor="end">0</text>"##,
        L - 6.0,
        H - B + 4.0
    );
    out.push_str("</svg>\n");
    out
}
