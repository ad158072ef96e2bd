//! SVG charts. Every function here may fail without affecting a run; callers
//! log the error and move on.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::RocCurve;
use crate::train::EpochRecord;

const SIZE: (u32, u32) = (640, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Plot(format!("{}: {e}", path.display()))
}

/// ROC curves of one task, one line per model, with the chance diagonal.
pub fn roc_plot(path: &Path, title: &str, curves: &[(String, &RocCurve)]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(44)
            .build_cartesian_2d(0.0..1.0, 0.0..1.0)?;
        chart
            .configure_mesh()
            .x_desc("false positive rate")
            .y_desc("true positive rate")
            .draw()?;
        chart.draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3)))?;
        for (i, (label, curve)) in curves.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(
                    curve.points.iter().map(|p| (p.fpr, p.tpr)),
                    color.stroke_width(2),
                ))?
                .label(format!("{label} (AUC {:.3})", curve.auc))
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| plot_err(path, e))
}

/// Horizontal bars of accuracy in [0, 1].
pub fn accuracy_bars(path: &Path, title: &str, bars: &[(String, f64)]) -> Result<()> {
    if bars.is_empty() {
        return Err(plot_err(path, "nothing to plot"));
    }
    let height = SIZE.1.max(80 + 28 * bars.len() as u32);
    let root = SVGBackend::new(path, (SIZE.0 + 160, height)).into_drawing_area();
    let n = bars.len();
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(220)
            .build_cartesian_2d(0.0..1.0, (0..n).into_segmented())?;
        chart
            .configure_mesh()
            .x_desc("accuracy")
            .y_labels(n)
            .y_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) => bars.get(*i).map(|b| b.0.clone()).unwrap_or_default(),
                _ => String::new(),
            })
            .draw()?;
        chart.draw_series(bars.iter().enumerate().map(|(i, (_, acc))| {
            let mut bar = Rectangle::new(
                [(0.0, SegmentValue::Exact(i)), (*acc, SegmentValue::Exact(i + 1))],
                PALETTE[0].mix(0.8).filled(),
            );
            bar.set_margin(4, 4, 0, 0);
            bar
        }))?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| plot_err(path, e))
}

/// Loss and accuracy curves of one training run.
pub fn history_plot(path: &Path, title: &str, history: &[EpochRecord]) -> Result<()> {
    if history.is_empty() {
        return Err(plot_err(path, "empty history"));
    }
    let root = SVGBackend::new(path, (SIZE.0 * 2, SIZE.1)).into_drawing_area();
    let last = history.len() as f64;
    let max_loss = history
        .iter()
        .flat_map(|e| [e.train_loss, e.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        .max(1e-3);
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        root.fill(&WHITE)?;
        let root = root.titled(title, ("sans-serif", 20))?;
        let (left, right) = root.split_horizontally(SIZE.0);
        let panels: [(_, &str, f64, [fn(&EpochRecord) -> f64; 2]); 2] = [
            (left, "loss", max_loss * 1.05, [|e| e.train_loss, |e| e.val_loss]),
            (right, "accuracy", 1.0, [|e| e.train_acc, |e| e.val_acc]),
        ];
        for (area, name, top, series) in panels {
            let mut chart = ChartBuilder::on(&area)
                .margin(12)
                .x_label_area_size(36)
                .y_label_area_size(48)
                .build_cartesian_2d(1.0..last.max(2.0), 0.0..top)?;
            chart.configure_mesh().x_desc("epoch").y_desc(name).draw()?;
            for (i, (label, f)) in ["train", "val"].into_iter().zip(series).enumerate() {
                let color = PALETTE[i];
                chart
                    .draw_series(LineSeries::new(
                        history.iter().map(|e| (e.epoch as f64, f(e))),
                        color.stroke_width(2),
                    ))?
                    .label(label)
                    .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()?;
        }
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| plot_err(path, e))
}
