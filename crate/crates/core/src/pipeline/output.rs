//! CSV emission and static SVG plots.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Deserialize;

use super::experiments::{BoundsRow, CoverageReport, CoverageRow, RowStatus};
use super::PipelineError;

pub const COVERAGE_HEADER: [&str; 4] = ["epsilon", "resample", "kp_coverage", "purse_coverage"];
pub const BOUNDS_HEADER: [&str; 9] = [
    "scene_id",
    "epsilon",
    "lambda",
    "status",
    "d_upper",
    "angle_deg",
    "witness_value",
    "gt_in_purse",
    "actual_error",
];
pub const CDF_HEADER: [&str; 5] = ["epsilon", "lambda", "fraction", "d_upper", "angle_deg"];

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, PipelineError> {
    let f = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_coverage_csv(path: &Path, rows: &[CoverageRow]) -> Result<(), PipelineError> {
    let mut w = writer(path)?;
    w.write_record(COVERAGE_HEADER)?;
    for r in rows {
        w.write_record([
            r.epsilon.to_string(),
            r.resample.to_string(),
            r.kp_coverage.to_string(),
            r.purse_coverage.to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn write_bounds_csv(path: &Path, rows: &[BoundsRow]) -> Result<(), PipelineError> {
    let mut w = writer(path)?;
    w.write_record(BOUNDS_HEADER)?;
    for r in rows {
        w.write_record([
            r.scene_id.to_string(),
            r.epsilon.to_string(),
            r.lambda.to_string(),
            r.status.as_str().to_string(),
            opt(r.d_upper),
            opt(r.angle_deg),
            opt(r.witness_value),
            r.gt_in_purse.to_string(),
            opt(r.actual_error),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// Distinct values in first-seen order.
fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Sorted bounded rows of one `(ε, λ)` group.
fn cdf_group(rows: &[BoundsRow], eps: f64, lambda: f64) -> Vec<(f64, Option<f64>)> {
    let mut v: Vec<(f64, Option<f64>)> = rows
        .iter()
        .filter(|r| r.epsilon == eps && r.lambda == lambda && r.status == RowStatus::Bounded)
        .filter_map(|r| r.d_upper.map(|d| (d, r.angle_deg)))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Empirical CDF of the bounds of bounded scenes, per `(ε, λ)`.
pub fn write_bounds_cdf(path: &Path, rows: &[BoundsRow]) -> Result<(), PipelineError> {
    let mut w = writer(path)?;
    w.write_record(CDF_HEADER)?;
    for eps in distinct(rows.iter().map(|r| r.epsilon)) {
        for lambda in distinct(rows.iter().map(|r| r.lambda)) {
            let group = cdf_group(rows, eps, lambda);
            let n = group.len() as f64;
            for (i, (d, angle)) in group.iter().enumerate() {
                w.write_record([
                    eps.to_string(),
                    lambda.to_string(),
                    ((i + 1) as f64 / n).to_string(),
                    d.to_string(),
                    opt(*angle),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

#[derive(Deserialize)]
struct BoundsCsvRow {
    scene_id: u64,
    epsilon: f64,
    lambda: f64,
    status: String,
    d_upper: Option<f64>,
    angle_deg: Option<f64>,
    witness_value: Option<f64>,
    gt_in_purse: bool,
    actual_error: Option<f64>,
}

pub fn read_coverage_csv(path: &Path) -> Result<Vec<CoverageRow>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| {
            let (epsilon, resample, kp_coverage, purse_coverage): (f64, usize, f64, f64) = row?;
            Ok(CoverageRow {
                epsilon,
                resample,
                kp_coverage,
                purse_coverage,
            })
        })
        .collect()
}

pub fn read_bounds_csv(path: &Path) -> Result<Vec<BoundsRow>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| {
            let row: BoundsCsvRow = row?;
            let status = match row.status.as_str() {
                "bounded" => RowStatus::Bounded,
                "purse_empty" => RowStatus::PurseEmpty,
                "no_estimate" => RowStatus::NoEstimate,
                "solver_failed" => RowStatus::SolverFailed,
                other => return Err(PipelineError::Config(format!("unknown status '{other}' in {}", path.display()))),
            };
            Ok(BoundsRow {
                scene_id: row.scene_id,
                epsilon: row.epsilon,
                lambda: row.lambda,
                status,
                d_upper: row.d_upper,
                angle_deg: row.angle_deg,
                witness_value: row.witness_value,
                gt_in_purse: row.gt_in_purse,
                actual_error: row.actual_error,
                reprojection_px: None,
            })
        })
        .collect()
}

fn plot_err<E: std::fmt::Debug>(e: E) -> PipelineError {
    PipelineError::Plot(format!("{e:?}"))
}

const PALETTE: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

/// Bound versus actual error, one panel per λ, with the `y = x` diagonal.
/// Filled circles have the groundtruth inside the PURSE; squares on the
/// vertical axis are empty PURSEs.
fn scatter(path: &Path, rows: &[BoundsRow]) -> Result<(), PipelineError> {
    let root = SVGBackend::new(path, (1000, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    for (panel, (lambda, label)) in panels.iter().zip([(1.0, "rotation ||R - R_gt||_F"), (0.0, "translation ||t - t_gt||")]) {
        let sel: Vec<&BoundsRow> = rows.iter().filter(|r| r.lambda == lambda).collect();
        let max = sel
            .iter()
            .flat_map(|r| [r.d_upper, r.actual_error])
            .flatten()
            .fold(1e-6_f64, f64::max)
            * 1.05;
        let mut chart = ChartBuilder::on(panel)
            .caption(label, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..max, 0.0..max)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("actual error")
            .y_desc("bound")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new([(0.0, 0.0), (max, max)], BLACK.stroke_width(1)))
            .map_err(plot_err)?;
        for (i, eps) in distinct(sel.iter().map(|r| r.epsilon)).into_iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let group = sel.iter().filter(|r| r.epsilon == eps);
            chart
                .draw_series(group.clone().filter(|r| r.status == RowStatus::Bounded).filter_map(|r| {
                    let (a, d) = (r.actual_error?, r.d_upper?);
                    Some(Circle::new((a, d), 3, if r.gt_in_purse { color.filled() } else { color.stroke_width(1) }))
                }))
                .map_err(plot_err)?
                .label(format!("eps = {eps}"))
                .legend(move |(x, y)| Circle::new((x, y), 3, color.filled()));
            chart
                .draw_series(group.filter(|r| r.status == RowStatus::PurseEmpty).filter_map(|r| {
                    let a = r.actual_error?;
                    let h = max * 0.01;
                    Some(Rectangle::new([(a - h, -h), (a + h, h)], color.filled()))
                }))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Mean keypoint and PURSE coverage per ε against `1 − ε`.
fn coverage_bars(path: &Path, rows: &[CoverageRow]) -> Result<(), PipelineError> {
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let eps = distinct(rows.iter().map(|r| r.epsilon));
    let n = eps.len() as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("empirical coverage", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..n, 0.0..1.0)
        .map_err(plot_err)?;
    let labels = eps.clone();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(eps.len() + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - x.floor() - 0.5).abs() < 0.26 && i < labels.len() {
                format!("eps = {}", labels[i])
            } else {
                String::new()
            }
        })
        .y_desc("coverage")
        .draw()
        .map_err(plot_err)?;
    for (i, &e) in eps.iter().enumerate() {
        let sel: Vec<&CoverageRow> = rows.iter().filter(|r| r.epsilon == e).collect();
        let m = sel.len() as f64;
        let kp = sel.iter().map(|r| r.kp_coverage).sum::<f64>() / m;
        let ps = sel.iter().map(|r| r.purse_coverage).sum::<f64>() / m;
        let x = i as f64;
        chart
            .draw_series([
                Rectangle::new([(x + 0.15, 0.0), (x + 0.48, kp)], BLUE.mix(0.7).filled()),
                Rectangle::new([(x + 0.52, 0.0), (x + 0.85, ps)], RED.mix(0.7).filled()),
            ])
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new([(x + 0.1, 1.0 - e), (x + 0.9, 1.0 - e)], BLACK.stroke_width(2)))
            .map_err(plot_err)?;
    }
    chart
        .draw_series([Rectangle::new([(0.0, 0.0), (0.0, 0.0)], BLUE.mix(0.7).filled())])
        .map_err(plot_err)?
        .label("keypoint sets")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], BLUE.mix(0.7).filled()));
    chart
        .draw_series([Rectangle::new([(0.0, 0.0), (0.0, 0.0)], RED.mix(0.7).filled())])
        .map_err(plot_err)?
        .label("PURSE")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], RED.mix(0.7).filled()));
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .border_style(BLACK)
        .background_style(WHITE)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Empirical CDFs of the rotation (degrees) and translation bounds.
fn cdf_plot(path: &Path, rows: &[BoundsRow]) -> Result<(), PipelineError> {
    let root = SVGBackend::new(path, (1000, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    for (panel, lambda) in panels.iter().zip([1.0, 0.0]) {
        let value = |(d, a): &(f64, Option<f64>)| if lambda == 1.0 { a.unwrap_or(*d) } else { *d };
        let eps = distinct(rows.iter().filter(|r| r.lambda == lambda).map(|r| r.epsilon));
        let groups: Vec<(f64, Vec<f64>)> = eps
            .iter()
            .map(|&e| (e, cdf_group(rows, e, lambda).iter().map(value).collect()))
            .collect();
        let max = groups.iter().flat_map(|g| g.1.iter().copied()).fold(1e-6_f64, f64::max) * 1.05;
        let (title, xdesc) = if lambda == 1.0 {
            ("rotation bound CDF", "bound (deg)")
        } else {
            ("translation bound CDF", "bound")
        };
        let mut chart = ChartBuilder::on(panel)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..max, 0.0..1.0)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(xdesc)
            .y_desc("fraction of scenes")
            .draw()
            .map_err(plot_err)?;
        for (i, (e, vals)) in groups.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let n = vals.len() as f64;
            let mut pts = vec![(0.0, 0.0)];
            for (j, &v) in vals.iter().enumerate() {
                pts.push((v, j as f64 / n));
                pts.push((v, (j + 1) as f64 / n));
            }
            chart
                .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                .map_err(plot_err)?
                .label(format!("eps = {e}"))
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 15, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .border_style(BLACK)
            .background_style(WHITE)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Renders the available plots into `dir` and returns their paths.
pub fn render_plots(
    dir: &Path,
    coverage: Option<&CoverageReport>,
    bounds: Option<&[BoundsRow]>,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut out = Vec::new();
    if let Some(c) = coverage.filter(|c| !c.rows.is_empty()) {
        let p = dir.join("coverage.svg");
        coverage_bars(&p, &c.rows)?;
        out.push(p);
    }
    if let Some(rows) = bounds.filter(|r| !r.is_empty()) {
        let p = dir.join("bounds_scatter.svg");
        scatter(&p, rows)?;
        out.push(p);
        let p = dir.join("bounds_cdf.svg");
        cdf_plot(&p, rows)?;
        out.push(p);
    }
    Ok(out)
}
