//! Static SVG figures of a completed run.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::{scenario::RunOutput, Error, Result};

const SIZE: (u32, u32) = (800, 480);
const PALETTE: [RGBColor; 4] = [RED, BLUE, GREEN, MAGENTA];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-12);
    (lo - pad, hi + pad)
}

struct Series<'a> {
    label: String,
    points: &'a [(f64, f64)],
}

fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series<'_>], log_y: bool) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let mut builder = ChartBuilder::on(&root);
    builder
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70);
    if log_y {
        let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|v| *v > 0.0);
        let (lo, hi) = ys.fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
        let (lo, hi) = if lo.is_finite() { (lo.max(1e-16), hi.max(lo * 10.0)) } else { (1e-12, 1.0) };
        let mut chart = builder
            .build_cartesian_2d(x0..x1, (lo..hi).log_scale())
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
        for (k, s) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(s.points.iter().copied().filter(|p| p.1 > 0.0), color))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    } else {
        let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
        for (k, s) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Renders θ/θ̂, θ̃, |λ̃|, the Φ and current loci and the PE metric into
/// `dir`. An empty run produces no files and a warning on stderr.
pub fn plot_run(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let trace = &out.trace;
    if trace.is_empty() {
        eprintln!("warning: empty series for `{}`, no plots written", out.config.name);
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stride = out.config.stride_steps();
    let idx: Vec<usize> = (0..trace.len()).step_by(stride).collect();
    let pick = |f: &dyn Fn(usize) -> (f64, f64)| idx.iter().map(|&k| f(k)).collect::<Vec<_>>();

    let theta = pick(&|k| (trace.plant[k].t, trace.plant[k].theta));
    let theta_hat: Vec<Vec<(f64, f64)>> = (0..trace.observers.len())
        .map(|o| pick(&|k| (trace.plant[k].t, trace.estimates[o][k].theta_hat)))
        .collect();
    let theta_err: Vec<Vec<(f64, f64)>> = (0..trace.observers.len())
        .map(|o| pick(&|k| (trace.plant[k].t, trace.estimates[o][k].theta_err)))
        .collect();
    let lambda_err: Vec<Vec<(f64, f64)>> = (0..trace.observers.len())
        .map(|o| pick(&|k| (trace.plant[k].t, trace.estimates[o][k].lambda_err)))
        .collect();
    let phi = pick(&|k| (trace.plant[k].phi.x, trace.plant[k].phi.y));
    let cur = pick(&|k| (trace.plant[k].i.x, trace.plant[k].i.y));
    let pe: Vec<(f64, f64)> = out.pe.windows.iter().map(|w| (w.t_start, w.delta_min)).collect();
    let label = |o: usize| trace.observers[o].label().to_string();

    let mut files = Vec::new();
    let mut emit = |name: &str, title: &str, xd: &str, yd: &str, series: Vec<Series<'_>>, log: bool| {
        let path = dir.join(name);
        line_chart(&path, title, xd, yd, &series, log)?;
        files.push(path);
        Ok::<_, Error>(())
    };

    let mut s = vec![Series { label: "θ".into(), points: &theta }];
    s.extend(theta_hat.iter().enumerate().map(|(o, p)| Series { label: format!("θ̂ {}", label(o)), points: p }));
    emit("theta.svg", "Angle and estimate", "t [s]", "rad", s, false)?;
    let s = theta_err.iter().enumerate().map(|(o, p)| Series { label: label(o), points: p }).collect();
    emit("theta_err.svg", "Wrapped angle error", "t [s]", "rad", s, false)?;
    let s = lambda_err.iter().enumerate().map(|(o, p)| Series { label: label(o), points: p }).collect();
    emit("lambda_err.svg", "Flux estimation error", "t [s]", "|λ̃| [Wb]", s, true)?;
    emit("phi_locus.svg", "Regressor locus", "Φ₁", "Φ₂", vec![Series { label: "Φ".into(), points: &phi }], false)?;
    emit("current_locus.svg", "Current locus", "i_a [A]", "i_b [A]", vec![Series { label: "i".into(), points: &cur }], false)?;
    if !pe.is_empty() {
        emit("pe_delta_min.svg", "Windowed PE margin", "window start [s]", "δ_min", vec![Series { label: "δ_min".into(), points: &pe }], false)?;
    }
    Ok(files)
}
