use std::path::Path;

use plotters::prelude::*;

use bldmpc_core::eval::{DailyAggregate, DegreeDayRegression, EnergyComparison, SampleEffReport};
use bldmpc_core::plant::Mode;
use bldmpc_core::Error;

use crate::io::{self, CliResult};

const SIZE: (u32, u32) = (720, 480);

fn draw_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("plot: {e}"))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Median MSE against training weeks on a log axis, with the 16th to 84th
/// percentile band shaded.
pub fn mse_curves(report: &SampleEffReport, path: &Path) -> CliResult {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_error)?;
        let weeks: Vec<f64> = report.cells.iter().map(|c| c.weeks as f64).collect();
        let (x_lo, x_hi) = padded(
            weeks.iter().copied().fold(f64::INFINITY, f64::min),
            weeks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        let positive = |v: f64| v.max(1e-12);
        let y_lo = report.cells.iter().map(|c| positive(c.p16)).fold(f64::INFINITY, f64::min) / 1.5;
        let y_hi = report.cells.iter().map(|c| positive(c.p84)).fold(0.0, f64::max) * 1.5;
        let mut chart = ChartBuilder::on(&root)
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .caption("1-hour open-loop MSE", ("sans-serif", 18))
            .build_cartesian_2d(x_lo..x_hi, (y_lo..y_hi).log_scale())
            .map_err(draw_error)?;
        chart
            .configure_mesh()
            .x_desc("training weeks")
            .y_desc("MSE (K²)")
            .draw()
            .map_err(draw_error)?;
        let mut labels: Vec<&str> = Vec::new();
        for c in &report.cells {
            if !labels.contains(&c.model.as_str()) {
                labels.push(&c.model);
            }
        }
        for (i, label) in labels.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let cells: Vec<_> = report.cells.iter().filter(|c| c.model == *label).collect();
            let mut band: Vec<(f64, f64)> = cells.iter().map(|c| (c.weeks as f64, positive(c.p84))).collect();
            band.extend(cells.iter().rev().map(|c| (c.weeks as f64, positive(c.p16))));
            chart
                .draw_series(std::iter::once(Polygon::new(band, color.mix(0.15).filled())))
                .map_err(draw_error)?;
            chart
                .draw_series(LineSeries::new(
                    cells.iter().map(|c| (c.weeks as f64, positive(c.median))),
                    color.stroke_width(2),
                ))
                .map_err(draw_error)?
                .label(label.to_string())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_error)?;
        root.present().map_err(draw_error)?;
    }
    io::write_text(path, &svg)
}

/// Daily energy against degree-solar days for both controllers, each with
/// its own regression line.
pub fn degree_days(
    cmp: &EnergyComparison,
    mpc: &[DailyAggregate],
    baseline: &[DailyAggregate],
    mode: Mode,
    path: &Path,
) -> CliResult {
    let points = |days: &[DailyAggregate], r: &DegreeDayRegression| -> Vec<(f64, f64)> {
        days.iter()
            .map(|d| (r.degree_solar_days(d.t_amb, d.i_hor), d.energy_wh / 1000.0))
            .collect()
    };
    let sets = [
        ("MPC", points(mpc, &cmp.mpc), &cmp.mpc),
        ("baseline", points(baseline, &cmp.baseline), &cmp.baseline),
    ];
    let all = || sets.iter().flat_map(|s| s.1.iter().copied());
    let (x_lo, x_hi) = padded(
        all().map(|p| p.0).fold(f64::INFINITY, f64::min),
        all().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_lo, y_hi) = padded(0.0f64.min(all().map(|p| p.1).fold(f64::INFINITY, f64::min)), all().map(|p| p.1).fold(0.0, f64::max));
    let x_desc = match mode {
        Mode::Heating => "heating degree-solar days (K)",
        Mode::Cooling => "cooling degree-solar days (K)",
    };

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_error)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .caption(format!("energy saving {:.1} %", 100.0 * cmp.saving), ("sans-serif", 18))
            .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
            .map_err(draw_error)?;
        chart
            .configure_mesh()
            .x_desc(x_desc)
            .y_desc("daily energy (kWh)")
            .draw()
            .map_err(draw_error)?;
        for (i, (label, pts, reg)) in sets.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(draw_error)?
                .label(*label)
                .legend(move |(x, y)| Circle::new((x + 8, y), 3, color.filled()));
            let line = |x: f64| (x, (reg.theta_dd * x + reg.c) / 1000.0);
            chart
                .draw_series(LineSeries::new([line(x_lo), line(x_hi)], color.stroke_width(2)))
                .map_err(draw_error)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_error)?;
        root.present().map_err(draw_error)?;
    }
    io::write_text(path, &svg)
}
