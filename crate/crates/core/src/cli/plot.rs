//! Plot-ready CSV output.
//!
//! - `angle_histogram.csv`: `t,bin_lo,bin_hi,count`, gradient angles of
//!   unmasked elements per stored time, bins spanning `(-pi, pi]`.
//! - `k_angle_series.csv`: `replicate,t,K_angle`, the line angle of the first
//!   few coupled pairs.
//! - `transect_<k>.csv`: `x1,u` along the horizontal line `x2 = const` of
//!   slice `k` at the final time.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::PlotConfig;
use crate::geometry::Point2;
use crate::pde::{gradient_angles, ScalarField, Trajectory};
use crate::reflected_motion::CoupledPath;

pub enum PlotSource<'a> {
    /// Gradient angle histogram of a solved trajectory.
    Cone { trajectory: &'a Trajectory, min_grad: Option<f64> },
    /// Line-angle series of coupled pairs.
    Couple(&'a [CoupledPath]),
    /// Horizontal transects of the final field.
    Solve(&'a Trajectory),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transect {
    pub x2: f64,
    pub file: String,
}

pub fn emit_plot_data(source: PlotSource, dir: &Path, cfg: &PlotConfig) -> io::Result<Vec<PathBuf>> {
    match source {
        PlotSource::Cone { trajectory, min_grad } => {
            let path = dir.join("angle_histogram.csv");
            write_angle_histogram(File::create(&path)?, trajectory, min_grad, cfg.histogram_bins)?;
            Ok(vec![path])
        }
        PlotSource::Couple(paths) => {
            let path = dir.join("k_angle_series.csv");
            write_k_angle_series(File::create(&path)?, paths, cfg.series_replicates)?;
            Ok(vec![path])
        }
        PlotSource::Solve(trajectory) => {
            let transects = write_transects(dir, trajectory.last(), cfg)?;
            Ok(transects.into_iter().map(|t| dir.join(t.file)).collect())
        }
    }
}

pub fn write_angle_histogram<W: Write>(
    out: W,
    traj: &Trajectory,
    min_grad: Option<f64>,
    bins: usize,
) -> io::Result<()> {
    let bins = bins.max(1);
    let width = 2.0 * PI / bins as f64;
    let mut out = BufWriter::new(out);
    writeln!(out, "t,bin_lo,bin_hi,count")?;
    for field in &traj.fields {
        let min_grad = min_grad.unwrap_or_else(|| crate::pde::default_min_grad(field));
        let mut counts = vec![0usize; bins];
        for theta in gradient_angles(field, min_grad).into_iter().flatten() {
            let k = (((theta + PI) / width).ceil() as usize).saturating_sub(1).min(bins - 1);
            counts[k] += 1;
        }
        for (k, count) in counts.iter().enumerate() {
            let lo = -PI + k as f64 * width;
            writeln!(out, "{:.10e},{:.10e},{:.10e},{}", field.time, lo, lo + width, count)?;
        }
    }
    out.flush()
}

pub fn write_k_angle_series<W: Write>(out: W, paths: &[CoupledPath], replicates: usize) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "replicate,t,K_angle")?;
    for (r, path) in paths.iter().take(replicates).enumerate() {
        for (k, theta) in path.k_angle.iter().enumerate() {
            writeln!(out, "{r},{:.10e},{:.16e}", k as f64 * path.dt, theta)?;
        }
    }
    out.flush()
}

/// One file per slice; slices are fractions of the height of the highest node.
pub fn write_transects(dir: &Path, field: &ScalarField, cfg: &PlotConfig) -> io::Result<Vec<Transect>> {
    let nodes = &field.mesh.nodes;
    let top = nodes.iter().map(|p| p.x2).fold(f64::NEG_INFINITY, f64::max);
    let mut transects = Vec::new();
    for (k, &frac) in cfg.transect_slices.iter().enumerate() {
        let x2 = frac * top;
        // horizontal extent of the mesh at height x2
        let corners = field.mesh.corners();
        let mut xs = Vec::new();
        for i in 0..3 {
            let (p, q) = (corners[i], corners[(i + 1) % 3]);
            if (p.x2 - x2) * (q.x2 - x2) <= 0.0 && p.x2 != q.x2 {
                xs.push(p.x1 + (x2 - p.x2) / (q.x2 - p.x2) * (q.x1 - p.x1));
            }
        }
        if xs.len() < 2 {
            continue;
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let file = format!("transect_{k}.csv");
        let mut out = BufWriter::new(File::create(dir.join(&file))?);
        writeln!(out, "x1,u")?;
        let n = cfg.transect_points.max(2);
        for j in 0..n {
            let x1 = lo + (hi - lo) * j as f64 / (n - 1) as f64;
            if let Some(u) = field.interpolate(Point2::new(x1, x2)) {
                writeln!(out, "{:.16e},{:.16e}", x1, u)?;
            }
        }
        out.flush()?;
        transects.push(Transect { x2, file });
    }
    Ok(transects)
}
