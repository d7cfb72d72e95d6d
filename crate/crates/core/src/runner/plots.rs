//! Plot and sample-grid emission from persisted run reports.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use plotters::prelude::*;

use crate::data::IMAGE_SIDE;
use crate::error::{Error, Result};
use crate::models::checkpoint;
use crate::models::GeneratorModel;

use super::persist::generator_from_checkpoint;
use super::report::{CurvePoint, RunReport};

const PLOT_W: u32 = 900;
const PLOT_H: u32 = 560;

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::UpstreamError(format!("plotting failed: {e}"))
}

/// Accuracy trajectory with dashed task-boundary verticals.
fn curve_png(
    path: &Path,
    title: &str,
    curve: &[CurvePoint],
    n_tasks: usize,
    epochs_per_task: usize,
) -> Result<()> {
    if curve.is_empty() {
        return Ok(());
    }
    let xs: Vec<f64> = curve
        .iter()
        .map(|p| (p.task * epochs_per_task + p.epoch) as f64)
        .collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.accuracy).collect();
    let x_max = xs.last().copied().unwrap_or(1.0).max(1.0);

    let root = BitMapBackend::new(path, (PLOT_W, PLOT_H)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(46)
        .build_cartesian_2d(0.0..x_max, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("accuracy")
        .draw()
        .map_err(plot_err)?;
    // task boundaries
    for t in 1..n_tasks {
        let x = (t * epochs_per_task) as f64 - 0.5;
        chart
            .draw_series(DashedLineSeries::new(
                [(x, 0.0), (x, 1.0)],
                6,
                4,
                BLACK.mix(0.4).stroke_width(1),
            ))
            .map_err(plot_err)?;
    }
    chart
        .draw_series(LineSeries::new(
            xs.into_iter().zip(ys),
            BLUE.stroke_width(2),
        ))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn gen_metric_png(path: &Path, title: &str, points: &[(usize, f64)], y_max: f64) -> Result<()> {
    if points.is_empty() {
        return Ok(());
    }
    let x_max = points.iter().map(|p| p.0).max().unwrap_or(1) as f64 + 0.5;
    let root = BitMapBackend::new(path, (PLOT_W, PLOT_H)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, 0.0..y_max)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("task").draw().map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            points.iter().map(|&(t, v)| (t as f64, v)),
            RED.stroke_width(2),
        ))
        .map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|&(t, v)| Circle::new((t as f64, v), 3, RED.filled())))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Per-class accuracy heatmap: one row per task checkpoint, one column per
/// head class, green-scaled by accuracy.
fn per_class_grid_png(path: &Path, grid: &[Vec<f64>]) -> Result<()> {
    if grid.is_empty() {
        return Ok(());
    }
    let cell = 28u32;
    let rows = grid.len() as u32;
    let cols = grid[0].len() as u32;
    let mut img = RgbImage::new(cols * cell, rows * cell);
    for (r, row) in grid.iter().enumerate() {
        for (c, &acc) in row.iter().enumerate() {
            let v = (acc.clamp(0.0, 1.0) * 255.0) as u8;
            for dy in 0..cell {
                for dx in 0..cell {
                    let edge = dx == 0 || dy == 0;
                    let px = if edge { image::Rgb([90, 90, 90]) } else { image::Rgb([255 - v, v, 60]) };
                    img.put_pixel(c as u32 * cell + dx, r as u32 * cell + dy, px);
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::UpstreamError(format!("png write: {e}")))?;
    Ok(())
}

/// 10x10 mosaic of generator samples.
pub fn sample_grid_png(gen: &GeneratorModel, path: &Path, seed: u64) -> Result<()> {
    let norm = gen.family().normalization();
    let n = 100;
    let images = if gen.family().is_conditional() {
        let classes: Vec<u16> = (0..gen.arch.n_cond.min(10) as u16).collect();
        gen.sample_balanced(&classes, n, seed)?.0
    } else {
        gen.sample(n, seed)?
    };
    let flat: Vec<f32> = images.flatten_all()?.to_vec1()?;
    let side = IMAGE_SIDE as u32;
    let mut img = GrayImage::new(10 * side, 10 * side);
    for k in 0..n {
        let (gx, gy) = ((k % 10) as u32, (k / 10) as u32);
        for y in 0..side {
            for x in 0..side {
                let v = norm.to_unit(flat[k * 784 + (y * side + x) as usize]);
                img.put_pixel(gx * side + x, gy * side + y, Luma([(v * 255.0) as u8]));
            }
        }
    }
    img.save(path).map_err(|e| Error::UpstreamError(format!("png write: {e}")))?;
    Ok(())
}

/// Emits every applicable plot for one run directory; returns the files
/// written. Missing metrics skip their plot with a notice on stderr.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let report = RunReport::load(&RunReport::path_in(run_dir))?;
    let plots = run_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let hash = &report.config_hash;
    let epochs = report.config.training.epochs;
    let n_tasks = report.scenario.n_tasks;
    let mut written = Vec::new();

    let acc_path = plots.join(format!("accuracy-{hash}.png"));
    if report.whole_stream_curve.is_empty() {
        eprintln!("plot skipped: no whole-stream accuracy curve recorded");
    } else {
        curve_png(&acc_path, "whole-stream accuracy", &report.whole_stream_curve, n_tasks, epochs)?;
        written.push(acc_path);
    }

    let first_path = plots.join(format!("first-task-{hash}.png"));
    if !report.first_task_curve.is_empty() {
        curve_png(&first_path, "first-task accuracy", &report.first_task_curve, n_tasks, epochs)?;
        written.push(first_path);
    }

    let fid_points: Vec<(usize, f64)> = report.gen_eval.iter().filter_map(|g| g.fid.map(|v| (g.task, v))).collect();
    if !fid_points.is_empty() {
        let y = fid_points.iter().map(|p| p.1).fold(1.0_f64, f64::max) * 1.1;
        let p = plots.join(format!("fid-{hash}.png"));
        gen_metric_png(&p, "FID over tasks", &fid_points, y)?;
        written.push(p);
    } else {
        eprintln!("plot skipped: no FID trajectory recorded");
    }

    let fic_points: Vec<(usize, f64)> = report
        .gen_eval
        .iter()
        .filter_map(|g| g.fitting_capacity.map(|v| (g.task, v)))
        .collect();
    if !fic_points.is_empty() {
        let p = plots.join(format!("fic-{hash}.png"));
        gen_metric_png(&p, "fitting capacity over tasks", &fic_points, 1.0)?;
        written.push(p);
    }

    if let Some(grid) = &report.per_class_accuracy {
        let p = plots.join(format!("per-class-{hash}.png"));
        per_class_grid_png(&p, grid)?;
        written.push(p);
    }

    let gen_ck = run_dir.join("checkpoints/generator.clck");
    if gen_ck.exists() {
        let ck = checkpoint::load(&gen_ck)?;
        let gen = generator_from_checkpoint(&ck, &candle_core::Device::Cpu)?;
        let p = plots.join(format!("samples-{hash}.png"));
        sample_grid_png(&gen, &p, report.seed ^ 0x9d1d)?;
        written.push(p);
    }
    Ok(written)
}
