//! Waveform overlays: one panel per target lead, original against one or more
//! reconstructions. PNG or SVG, chosen by file extension.

use std::path::Path;
use std::sync::OnceLock;

use ndarray::ArrayView2;
use plotters::coord::Shift;
use plotters::prelude::*;
use plotters::style::FontStyle;

use crate::error::{Error, Result};
use crate::leads::LeadSet;

const FONT: &str = "sans-serif";
/// Environment variable naming a TrueType font file to use for labels.
pub const FONT_ENV: &str = "ECG_RECON_FONT";
const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/Library/Fonts/Arial Unicode.ttf",
];

const ORIGINAL_COLOR: RGBColor = RGBColor(31, 119, 180);
const RECON_COLORS: [RGBColor; 4] = [
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
];

/// What was drawn, for callers and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySummary {
    pub panels: usize,
    pub legend: Vec<String>,
}

fn ensure_font() -> Result<()> {
    static LOADED: OnceLock<std::result::Result<(), String>> = OnceLock::new();
    LOADED
        .get_or_init(|| {
            let env = std::env::var(FONT_ENV).ok();
            let path = env
                .iter()
                .map(String::as_str)
                .chain(FONT_CANDIDATES)
                .find(|p| Path::new(p).is_file())
                .ok_or_else(|| format!("no TrueType font found; set {FONT_ENV}"))?;
            let bytes = std::fs::read(path).map_err(|e| format!("{path}: {e}"))?;
            // plotters keeps registered fonts for the life of the process
            let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
            plotters::style::register_font(FONT, FontStyle::Normal, bytes)
                .map_err(|_| format!("{path} is not a usable font"))
        })
        .clone()
        .map_err(Error::Plot)
}

/// Draws the 9 target leads of `original` (9 × L) with each named
/// reconstruction overplotted. Time axis in seconds from `fs`.
pub fn render_overlay(
    title: &str,
    original: ArrayView2<'_, f32>,
    reconstructions: &[(&str, ArrayView2<'_, f32>)],
    fs: f32,
    path: &Path,
) -> Result<OverlaySummary> {
    let n_leads = LeadSet::TARGET_9.len();
    if original.nrows() != n_leads {
        return Err(Error::ShapeMismatch(format!("original has {} leads, expected {n_leads}", original.nrows())));
    }
    for (name, r) in reconstructions {
        if r.dim() != original.dim() {
            return Err(Error::Precondition(format!(
                "reconstruction {name} is {:?}, original is {:?}",
                r.dim(),
                original.dim()
            )));
        }
    }
    if reconstructions.len() > RECON_COLORS.len() {
        return Err(Error::Precondition(format!(
            "at most {} reconstructions per overlay",
            RECON_COLORS.len()
        )));
    }
    if original.ncols() < 2 || !(fs > 0.0) {
        return Err(Error::Precondition("overlay needs at least 2 samples and fs > 0".into()));
    }
    ensure_font()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let size = (1800, 1200);
    let is_svg = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg"));
    if is_svg {
        let root = SVGBackend::new(path, size).into_drawing_area();
        draw(&root, title, original, reconstructions, fs)?;
        root.present().map_err(plot_err)?;
    } else {
        let root = BitMapBackend::new(path, size).into_drawing_area();
        draw(&root, title, original, reconstructions, fs)?;
        root.present().map_err(plot_err)?;
    }
    let legend = std::iter::once("Original".to_string())
        .chain(reconstructions.iter().map(|(n, _)| n.to_string()))
        .collect();
    Ok(OverlaySummary {
        panels: n_leads,
        legend,
    })
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn draw<DB: DrawingBackend>(
    root: &DrawingArea<DB, Shift>,
    title: &str,
    original: ArrayView2<'_, f32>,
    reconstructions: &[(&str, ArrayView2<'_, f32>)],
    fs: f32,
) -> Result<()>
where
    DB::ErrorType: 'static,
{
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root.titled(title, (FONT, 28)).map_err(plot_err)?;
    let panels = root.split_evenly((3, 3));
    let len = original.ncols();
    let duration = (len - 1) as f32 / fs;

    for (k, (panel, lead)) in panels.iter().zip(LeadSet::TARGET_9).enumerate() {
        let rows = std::iter::once(original.row(k)).chain(reconstructions.iter().map(|(_, r)| r.row(k)));
        let (lo, hi) = rows
            .flat_map(|r| r.into_iter().copied().collect::<Vec<_>>())
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let pad = ((hi - lo) * 0.05).max(1e-3);
        let mut chart = ChartBuilder::on(panel)
            .caption(lead.name(), (FONT, 20))
            .margin(8)
            .x_label_area_size(28)
            .y_label_area_size(40)
            .build_cartesian_2d(0f32..duration, (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("s")
            .label_style((FONT, 12))
            .light_line_style(WHITE.mix(0.0))
            .draw()
            .map_err(plot_err)?;

        let series = |row: ndarray::ArrayView1<'_, f32>| {
            row.iter()
                .enumerate()
                .map(|(i, &v)| (i as f32 / fs, v))
                .collect::<Vec<_>>()
        };
        let drawn = chart
            .draw_series(LineSeries::new(series(original.row(k)), ORIGINAL_COLOR.stroke_width(1)))
            .map_err(plot_err)?;
        if k == 0 {
            drawn
                .label("Original")
                .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], ORIGINAL_COLOR));
        }
        for (j, (name, r)) in reconstructions.iter().enumerate() {
            let color = RECON_COLORS[j];
            let drawn = chart
                .draw_series(LineSeries::new(series(r.row(k)), color.stroke_width(1)))
                .map_err(plot_err)?;
            if k == 0 {
                drawn
                    .label(*name)
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            }
        }
        if k == 0 {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .label_font((FONT, 12))
                .draw()
                .map_err(plot_err)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn wave(len: usize, phase: f32) -> Array2<f32> {
        Array2::from_shape_fn((9, len), |(r, i)| (i as f32 * 0.05 + phase + r as f32).sin())
    }

    #[test]
    fn writes_nine_panel_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlay.png");
        let orig = wave(500, 0.0);
        let rec = wave(500, 0.1);
        let s = render_overlay("rec", orig.view(), &[("GAN", rec.view())], 500.0, &path).unwrap();
        assert_eq!(s.panels, 9);
        assert_eq!(s.legend, vec!["Original", "GAN"]);
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }

    #[test]
    fn two_reconstructions_in_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlay.svg");
        let (a, b, c) = (wave(300, 0.0), wave(300, 0.2), wave(300, 0.4));
        let s = render_overlay("rec", a.view(), &[("GAN", b.view()), ("LSTM", c.view())], 500.0, &path).unwrap();
        assert_eq!(s.legend.len(), 3);
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.contains("LSTM") && svg.contains("aVR"));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (wave(300, 0.0), wave(200, 0.0));
        let err = render_overlay("r", a.view(), &[("x", b.view())], 500.0, &dir.path().join("o.png"));
        assert!(matches!(err, Err(Error::Precondition(_))));
    }
}
