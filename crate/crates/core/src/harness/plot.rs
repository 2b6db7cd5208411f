//! PNG plot emission for the experiment results: multi-panel line charts
//! rendered directly onto an RGB bitmap with a built-in stroke font
//! (uppercase, digits, and the handful of symbols axis labels need).

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

use super::results::{read_results, ResultsFile, SummaryRow};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [Rgb<u8>; 8] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([23, 190, 207]),
    Rgb([127, 127, 127]),
];

/// Stroke segments per glyph in a 4-wide, 6-tall box (y up).
fn glyph(c: char) -> &'static [(f32, f32, f32, f32)] {
    match c.to_ascii_uppercase() {
        '0' => &[(0.,0.,4.,0.),(4.,0.,4.,6.),(4.,6.,0.,6.),(0.,6.,0.,0.),(0.,0.,4.,6.)],
        '1' => &[(1.,5.,2.,6.),(2.,6.,2.,0.),(1.,0.,3.,0.)],
        '2' => &[(0.,5.,1.,6.),(1.,6.,3.,6.),(3.,6.,4.,5.),(4.,5.,0.,0.),(0.,0.,4.,0.)],
        '3' => &[(0.,6.,4.,6.),(4.,6.,4.,0.),(4.,0.,0.,0.),(1.,3.,4.,3.)],
        '4' => &[(3.,0.,3.,6.),(3.,6.,0.,2.),(0.,2.,4.,2.)],
        '5' => &[(4.,6.,0.,6.),(0.,6.,0.,3.5),(0.,3.5,3.,3.5),(3.,3.5,4.,2.5),(4.,2.5,4.,1.),(4.,1.,3.,0.),(3.,0.,0.,0.)],
        '6' => &[(4.,6.,1.,6.),(1.,6.,0.,4.),(0.,4.,0.,1.),(0.,1.,1.,0.),(1.,0.,3.,0.),(3.,0.,4.,1.),(4.,1.,4.,2.5),(4.,2.5,3.,3.5),(3.,3.5,0.,3.5)],
        '7' => &[(0.,6.,4.,6.),(4.,6.,1.,0.)],
        '8' => &[(0.5,3.2,3.5,3.2),(3.5,3.2,3.5,6.),(3.5,6.,0.5,6.),(0.5,6.,0.5,3.2),(0.,0.,4.,0.),(4.,0.,4.,3.2),(4.,3.2,0.,3.2),(0.,3.2,0.,0.)],
        '9' => &[(0.,0.,3.,0.),(3.,0.,4.,2.),(4.,2.,4.,5.),(4.,5.,3.,6.),(3.,6.,1.,6.),(1.,6.,0.,5.),(0.,5.,0.,3.5),(0.,3.5,1.,2.5),(1.,2.5,4.,2.5)],
        'A' => &[(0.,0.,2.,6.),(2.,6.,4.,0.),(1.,2.,3.,2.)],
        'B' => &[(0.,0.,0.,6.),(0.,6.,2.5,6.),(2.5,6.,3.5,5.),(3.5,5.,2.5,3.2),(0.,3.2,2.5,3.2),(2.5,3.2,3.9,1.6),(3.9,1.6,2.5,0.),(2.5,0.,0.,0.)],
        'C' => &[(4.,5.,3.,6.),(3.,6.,1.,6.),(1.,6.,0.,5.),(0.,5.,0.,1.),(0.,1.,1.,0.),(1.,0.,3.,0.),(3.,0.,4.,1.)],
        'D' => &[(0.,0.,0.,6.),(0.,6.,3.,6.),(3.,6.,4.,4.),(4.,4.,4.,2.),(4.,2.,3.,0.),(3.,0.,0.,0.)],
        'E' => &[(4.,0.,0.,0.),(0.,0.,0.,6.),(0.,6.,4.,6.),(0.,3.,3.,3.)],
        'F' => &[(0.,0.,0.,6.),(0.,6.,4.,6.),(0.,3.,3.,3.)],
        'G' => &[(4.,5.,3.,6.),(3.,6.,1.,6.),(1.,6.,0.,5.),(0.,5.,0.,1.),(0.,1.,1.,0.),(1.,0.,3.,0.),(3.,0.,4.,1.),(4.,1.,4.,3.),(4.,3.,2.,3.)],
        'H' => &[(0.,0.,0.,6.),(4.,0.,4.,6.),(0.,3.,4.,3.)],
        'I' => &[(1.,0.,3.,0.),(2.,0.,2.,6.),(1.,6.,3.,6.)],
        'J' => &[(3.,6.,3.,1.),(3.,1.,2.,0.),(2.,0.,1.,0.),(1.,0.,0.,1.)],
        'K' => &[(0.,0.,0.,6.),(4.,6.,0.,2.5),(1.5,3.7,4.,0.)],
        'L' => &[(0.,6.,0.,0.),(0.,0.,4.,0.)],
        'M' => &[(0.,0.,0.,6.),(0.,6.,2.,3.),(2.,3.,4.,6.),(4.,6.,4.,0.)],
        'N' => &[(0.,0.,0.,6.),(0.,6.,4.,0.),(4.,0.,4.,6.)],
        'O' => &[(1.,0.,3.,0.),(3.,0.,4.,1.),(4.,1.,4.,5.),(4.,5.,3.,6.),(3.,6.,1.,6.),(1.,6.,0.,5.),(0.,5.,0.,1.),(0.,1.,1.,0.)],
        'P' => &[(0.,0.,0.,6.),(0.,6.,3.,6.),(3.,6.,4.,5.),(4.,5.,4.,4.),(4.,4.,3.,3.),(3.,3.,0.,3.)],
        'Q' => &[(1.,0.,3.,0.),(3.,0.,4.,1.),(4.,1.,4.,5.),(4.,5.,3.,6.),(3.,6.,1.,6.),(1.,6.,0.,5.),(0.,5.,0.,1.),(0.,1.,1.,0.),(2.5,1.5,4.,-0.5)],
        'R' => &[(0.,0.,0.,6.),(0.,6.,3.,6.),(3.,6.,4.,5.),(4.,5.,4.,4.),(4.,4.,3.,3.),(3.,3.,0.,3.),(2.,3.,4.,0.)],
        'S' => &[(4.,5.,3.,6.),(3.,6.,1.,6.),(1.,6.,0.,5.),(0.,5.,1.,3.5),(1.,3.5,3.,2.8),(3.,2.8,4.,1.5),(4.,1.5,3.,0.),(3.,0.,1.,0.),(1.,0.,0.,1.)],
        'T' => &[(0.,6.,4.,6.),(2.,6.,2.,0.)],
        'U' => &[(0.,6.,0.,1.),(0.,1.,1.,0.),(1.,0.,3.,0.),(3.,0.,4.,1.),(4.,1.,4.,6.)],
        'V' => &[(0.,6.,2.,0.),(2.,0.,4.,6.)],
        'W' => &[(0.,6.,1.,0.),(1.,0.,2.,3.),(2.,3.,3.,0.),(3.,0.,4.,6.)],
        'X' => &[(0.,0.,4.,6.),(0.,6.,4.,0.)],
        'Y' => &[(0.,6.,2.,3.),(4.,6.,2.,3.),(2.,3.,2.,0.)],
        'Z' => &[(0.,6.,4.,6.),(4.,6.,0.,0.),(0.,0.,4.,0.)],
        '-' => &[(0.5,3.,3.5,3.)],
        '+' => &[(2.,1.,2.,5.),(0.,3.,4.,3.)],
        '.' => &[(1.8,0.,2.2,0.),(2.2,0.,2.2,0.4),(2.2,0.4,1.8,0.4),(1.8,0.4,1.8,0.)],
        ',' => &[(2.2,0.6,1.7,-0.6)],
        '_' => &[(0.,0.,4.,0.)],
        '(' => &[(2.5,6.,1.5,4.),(1.5,4.,1.5,2.),(1.5,2.,2.5,0.)],
        ')' => &[(1.5,6.,2.5,4.),(2.5,4.,2.5,2.),(2.5,2.,1.5,0.)],
        '/' => &[(0.,0.,4.,6.)],
        '=' => &[(0.5,2.2,3.5,2.2),(0.5,3.8,3.5,3.8)],
        ':' => &[(1.8,1.,2.2,1.),(2.2,1.,2.2,1.4),(2.2,1.4,1.8,1.4),(1.8,1.4,1.8,1.),(1.8,4.,2.2,4.),(2.2,4.,2.2,4.4),(2.2,4.4,1.8,4.4),(1.8,4.4,1.8,4.)],
        '%' => &[(0.,0.,4.,6.),(0.5,5.,1.3,5.),(1.3,5.,1.3,5.8),(1.3,5.8,0.5,5.8),(0.5,5.8,0.5,5.),(2.7,0.2,3.5,0.2),(3.5,0.2,3.5,1.),(3.5,1.,2.7,1.),(2.7,1.,2.7,0.2)],
        _ => &[],
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        let mut img = RgbImage::new(width, height);
        for p in img.pixels_mut() {
            *p = BG;
        }
        Self { img }
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.put(
                (x0 + (x1 - x0) * t).round() as i64,
                (y0 + (y1 - y0) * t).round() as i64,
                color,
            );
        }
    }

    fn dashed_vline(&mut self, x: f64, y0: f64, y1: f64, color: Rgb<u8>) {
        let mut y = y0.min(y1);
        let end = y0.max(y1);
        while y < end {
            self.line(x, y, x, (y + 4.0).min(end), color);
            y += 8.0;
        }
    }

    fn marker(&mut self, x: f64, y: f64, color: Rgb<u8>) {
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                self.put(x.round() as i64 + dx, y.round() as i64 + dy, color);
            }
        }
    }

    /// Stroke text; `size` is the pixel height of a glyph.
    fn text(&mut self, x: f64, y: f64, size: f64, s: &str, color: Rgb<u8>) {
        let scale = size / 6.0;
        let mut cx = x;
        for c in s.chars() {
            for &(x0, y0, x1, y1) in glyph(c) {
                self.line(
                    cx + x0 as f64 * scale,
                    y - y0 as f64 * scale,
                    cx + x1 as f64 * scale,
                    y - y1 as f64 * scale,
                    color,
                );
            }
            cx += 5.5 * scale;
        }
    }

    fn text_width(size: f64, s: &str) -> f64 {
        5.5 * (size / 6.0) * s.len() as f64
    }
}

#[derive(Clone)]
struct Series {
    label: String,
    color: Rgb<u8>,
    points: Vec<(f64, f64)>,
}

struct PanelRect {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

fn nice_ticks(min: f64, max: f64, n: usize) -> Vec<f64> {
    if !(max - min).is_finite() || max <= min {
        return vec![min];
    }
    (0..n)
        .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || (v.fract().abs() < 1e-9 && v.abs() >= 10.0) {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

#[allow(clippy::too_many_arguments)]
fn draw_panel(
    canvas: &mut Canvas,
    rect: &PanelRect,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    vlines: &[f64],
    legend: bool,
) {
    let ml = 58.0;
    let mb = 40.0;
    let mt = 22.0;
    let mr = 10.0;
    let (px, py) = (rect.x + ml, rect.y + mt);
    let (pw, ph) = (rect.w - ml - mr, rect.h - mt - mb);

    // data extents
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
    }
    for &v in vlines {
        xmin = xmin.min(v);
        xmax = xmax.max(v);
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
    }
    if !ymin.is_finite() {
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    let pad = (ymax - ymin).max(1e-9) * 0.06;
    ymin -= pad;
    ymax += pad;

    let sx = |x: f64| px + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| py + ph - (y - ymin) / (ymax - ymin) * ph;

    // grid + ticks
    for &tx in &nice_ticks(xmin, xmax, 5) {
        let x = sx(tx);
        canvas.line(x, py, x, py + ph, GRID);
        let label = fmt_tick(tx);
        canvas.text(
            x - Canvas::text_width(8.0, &label) / 2.0,
            py + ph + 14.0,
            8.0,
            &label,
            FG,
        );
    }
    for &ty in &nice_ticks(ymin, ymax, 5) {
        let y = sy(ty);
        canvas.line(px, y, px + pw, y, GRID);
        let label = fmt_tick(ty);
        canvas.text(
            px - Canvas::text_width(8.0, &label) - 5.0,
            y + 4.0,
            8.0,
            &label,
            FG,
        );
    }
    // frame
    canvas.line(px, py, px + pw, py, FG);
    canvas.line(px, py + ph, px + pw, py + ph, FG);
    canvas.line(px, py, px, py + ph, FG);
    canvas.line(px + pw, py, px + pw, py + ph, FG);

    for &v in vlines {
        canvas.dashed_vline(sx(v), py, py + ph, Rgb([120, 120, 120]));
    }

    for s in series {
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                prev = None;
                continue;
            }
            let (cx, cy) = (sx(x), sy(y));
            if let Some((lx, ly)) = prev {
                canvas.line(lx, ly, cx, cy, s.color);
            }
            if s.points.len() <= 64 {
                canvas.marker(cx, cy, s.color);
            }
            prev = Some((cx, cy));
        }
    }

    canvas.text(
        px + (pw - Canvas::text_width(9.0, title)) / 2.0,
        rect.y + 14.0,
        9.0,
        title,
        FG,
    );
    canvas.text(
        px + (pw - Canvas::text_width(8.0, xlabel)) / 2.0,
        rect.y + rect.h - 8.0,
        8.0,
        xlabel,
        FG,
    );
    // y label drawn horizontally above the axis
    canvas.text(rect.x + 4.0, py - 8.0, 8.0, ylabel, FG);

    if legend {
        let mut ly = py + 14.0;
        for s in series {
            canvas.line(px + 8.0, ly - 3.0, px + 26.0, ly - 3.0, s.color);
            canvas.text(px + 30.0, ly, 7.0, &s.label, FG);
            ly += 12.0;
        }
    }
}

fn pipeline_series(
    summaries: &[SummaryRow],
    pilot_snr_db: f64,
    metric: &str,
) -> Vec<Series> {
    let mut names: Vec<String> = Vec::new();
    for s in summaries {
        if !names.contains(&s.pipeline) {
            names.push(s.pipeline.clone());
        }
    }
    names
        .iter()
        .enumerate()
        .filter_map(|(i, name)| {
            let mut points: Vec<(f64, f64)> = summaries
                .iter()
                .filter(|s| {
                    &s.pipeline == name
                        && (s.pilot_snr_db - pilot_snr_db).abs() < 1e-9
                        && s.stats.contains_key(metric)
                })
                .map(|s| (s.sweep_db, s.stats[metric].mean))
                .collect();
            if points.is_empty() {
                return None;
            }
            points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            Some(Series {
                label: name.to_uppercase(),
                color: PALETTE[i % PALETTE.len()],
                points,
            })
        })
        .collect()
}

fn plot_fig3(results: &ResultsFile, out: &Path) -> Result<PathBuf> {
    let mut pilots: Vec<f64> = results
        .summaries
        .iter()
        .map(|s| s.pilot_snr_db)
        .collect::<Vec<_>>();
    pilots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pilots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if pilots.is_empty() {
        return Err(Error::Results("no summaries to plot".into()));
    }
    let (panel_w, panel_h) = (430u32, 400u32);
    let mut canvas = Canvas::new(panel_w * pilots.len() as u32, panel_h);
    for (i, &p) in pilots.iter().enumerate() {
        let series = pipeline_series(&results.summaries, p, "ase_bps_hz");
        draw_panel(
            &mut canvas,
            &PanelRect {
                x: (i as u32 * panel_w) as f64,
                y: 0.0,
                w: panel_w as f64,
                h: panel_h as f64,
            },
            &format!("ASE, PILOT SNR = {} DB", fmt_tick(p)),
            "DATA SNR (DB)",
            "ASE (BPS/HZ)",
            &series,
            &[],
            i == 0,
        );
    }
    let path = out.join(format!("{}.png", results.header.experiment));
    canvas.img.save(&path).map_err(|e| Error::Results(format!("png: {e}")))?;
    Ok(path)
}

fn plot_fig4(results: &ResultsFile, out: &Path) -> Result<PathBuf> {
    if results.summaries.is_empty() {
        return Err(Error::Results("no summaries to plot".into()));
    }
    let pilot = results.summaries[0].pilot_snr_db;
    let (panel_w, panel_h) = (480u32, 400u32);
    let mut canvas = Canvas::new(panel_w * 2, panel_h);
    for (i, (metric, title, ylab)) in [
        ("cosine_sim", "(A) COSINE SIMILARITY", "COSINE SIM"),
        ("nmse_db", "(B) NMSE", "NMSE (DB)"),
    ]
    .iter()
    .enumerate()
    {
        let series = pipeline_series(&results.summaries, pilot, metric);
        draw_panel(
            &mut canvas,
            &PanelRect {
                x: (i as u32 * panel_w) as f64,
                y: 0.0,
                w: panel_w as f64,
                h: panel_h as f64,
            },
            title,
            "ECHO SNR (DB)",
            ylab,
            &series,
            &[],
            i == 0,
        );
    }
    let path = out.join(format!("{}.png", results.header.experiment));
    canvas.img.save(&path).map_err(|e| Error::Results(format!("png: {e}")))?;
    Ok(path)
}

fn plot_fig5(results: &ResultsFile, out: &Path) -> Result<PathBuf> {
    if results.spectra.is_empty() {
        return Err(Error::Results(
            "fig5 plotting needs spectrum records in the results file".into(),
        ));
    }
    let (panel_w, panel_h) = (520u32, 400u32);
    let mut canvas = Canvas::new(panel_w * results.spectra.len() as u32, panel_h);
    for (i, sp) in results.spectra.iter().enumerate() {
        let series = vec![Series {
            label: sp.pipeline.to_uppercase(),
            color: PALETTE[i % PALETTE.len()],
            points: sp
                .grid_deg
                .iter()
                .zip(sp.power_db.iter())
                .map(|(&x, &y)| (x, y))
                .collect(),
        }];
        draw_panel(
            &mut canvas,
            &PanelRect {
                x: (i as u32 * panel_w) as f64,
                y: 0.0,
                w: panel_w as f64,
                h: panel_h as f64,
            },
            &format!("MUSIC SPECTRUM, {}", sp.pipeline.to_uppercase()),
            "ANGLE (DEG)",
            "P (DB)",
            &series,
            &sp.true_angles_deg,
            true,
        );
    }
    let path = out.join(format!("{}.png", results.header.experiment));
    canvas.img.save(&path).map_err(|e| Error::Results(format!("png: {e}")))?;
    Ok(path)
}

/// Render the plot for a results file into `out_dir`; returns the paths of
/// the emitted images.
pub fn emit_plots(results_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let results = read_results(results_path)?;
    if results.records.is_empty() {
        return Err(Error::Results(format!(
            "{} contains no records to plot",
            results_path.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let path = match results.header.experiment.as_str() {
        "fig3_ase_vs_data_snr" => plot_fig3(&results, out_dir)?,
        "fig4_sens_vs_echo_snr" => plot_fig4(&results, out_dir)?,
        "fig5_music_spectra" => plot_fig5(&results, out_dir)?,
        other => {
            return Err(Error::Results(format!(
                "no plot layout for experiment '{other}'"
            )))
        }
    };
    Ok(vec![path])
}
