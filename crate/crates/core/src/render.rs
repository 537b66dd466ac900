//! Deterministic SVG output: morphologies, simulation frames and fitness plots.

use std::fmt::Write as _;

use crate::morpho::{MorphGenome, VoxelType};
use crate::sim::{SpringAxis, Simulation};

const CELL_PX: f64 = 24.0;

pub fn voxel_color(v: VoxelType) -> Option<&'static str> {
    match v {
        VoxelType::Empty => None,
        VoxelType::Rigid => Some("#000000"),
        VoxelType::Soft => Some("#9e9e9e"),
        VoxelType::HorizontalActuator => Some("#8ecae6"),
        VoxelType::VerticalActuator => Some("#fb8500"),
    }
}

/// Grid picture of a genome, one square per solid cell.
pub fn morphology_svg(genome: &MorphGenome) -> String {
    let (w, h) = (genome.width() as f64 * CELL_PX, genome.height() as f64 * CELL_PX);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for (cell, voxel) in genome.solid_cells() {
        let color = voxel_color(voxel).expect("solid");
        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="{color}" stroke="#ffffff" stroke-width="1"/>"##,
            cell.col as f64 * CELL_PX,
            cell.row as f64 * CELL_PX,
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Snapshot of a running simulation: springs, optional box and the ground.
pub fn frame_svg(sim: &Simulation, step: usize) -> String {
    let scale = CELL_PX / sim.config().voxel_size;
    let (width, height) = (640.0, 240.0);
    let ground = height - 20.0;
    // Keep the robot in view by centring on its COM.
    let com = sim.robot_com();
    let to_px = |p: [f64; 2]| ((p[0] - com[0]) * scale + width / 2.0, ground - p[1] * scale);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r##"<line x1="0" y1="{ground}" x2="{width}" y2="{ground}" stroke="#444444"/>"##);
    let positions = sim.robot_positions();
    for spring in &sim.body().springs {
        let (a, b) = spring.endpoints;
        let (x1, y1) = to_px(positions[a]);
        let (x2, y2) = to_px(positions[b]);
        let color = match (spring.axis, spring.actuated_by.is_empty()) {
            (SpringAxis::Horizontal, false) => "#219ebc",
            (SpringAxis::Vertical, false) => "#fb8500",
            _ => "#555555",
        };
        let _ = writeln!(
            out,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{color}" stroke-width="1.5"/>"#
        );
    }
    let box_points = sim.box_positions();
    if !box_points.is_empty() {
        let pts: Vec<String> = box_points
            .iter()
            .map(|p| {
                let (x, y) = to_px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(out, r##"<polygon points="{}" fill="#bc6c25" fill-opacity="0.6"/>"##, pts.join(" "));
    }
    let _ = writeln!(out, r#"<text x="8" y="16" font-family="monospace" font-size="12">step {step}</text>"#);
    out.push_str("</svg>\n");
    out
}

/// One mean curve with a ±std band.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Line plot of each band's mean over generations, shaded by its std.
pub fn fitness_plot_svg(bands: &[Band], y_label: &str) -> String {
    let (width, height) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 170.0, 20.0, 50.0);
    let pw = width - left - right;
    let ph = height - top - bottom;
    let n = bands.iter().map(|b| b.mean.len()).max().unwrap_or(0);
    let finite = |x: &f64| x.is_finite();
    let lo = bands
        .iter()
        .flat_map(|b| b.mean.iter().zip(&b.std).map(|(m, s)| m - s))
        .filter(finite)
        .fold(f64::INFINITY, f64::min);
    let hi = bands
        .iter()
        .flat_map(|b| b.mean.iter().zip(&b.std).map(|(m, s)| m + s))
        .filter(finite)
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 1.0, lo + 1.0)
    } else {
        (0.0, 1.0)
    };
    let x_of = |i: usize| left + if n > 1 { pw * i as f64 / (n - 1) as f64 } else { pw / 2.0 };
    let y_of = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999999"/>"##
    );
    for i in 0..n {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{i}</text>"#,
            x_of(i),
            top + ph + 16.0
        );
    }
    for (v, label) in [(lo, lo), (hi, hi), ((lo + hi) / 2.0, (lo + hi) / 2.0)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label:.3}</text>"#,
            left - 6.0,
            y_of(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">generation</text>"#,
        left + pw / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{y_label}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, band) in bands.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = band
            .mean
            .iter()
            .zip(&band.std)
            .enumerate()
            .map(|(i, (m, s))| format!("{:.2},{:.2}", x_of(i), y_of(m + s)))
            .collect();
        let lower: Vec<String> = band
            .mean
            .iter()
            .zip(&band.std)
            .enumerate()
            .rev()
            .map(|(i, (m, s))| format!("{:.2},{:.2}", x_of(i), y_of(m - s)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = band
            .mean
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{:.2},{:.2}", x_of(i), y_of(*m)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = top + 14.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 18.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, band.label);
    }
    out.push_str("</svg>\n");
    out
}
