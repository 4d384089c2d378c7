//! PNG plots, each written next to the CSV holding exactly the plotted
//! points.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{run_dir, ExperimentReport};
use crate::error::{Error, Result};
use crate::train::Transcript;

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 30;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

/// Files produced for one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlotFiles {
    pub pngs: Vec<PathBuf>,
    pub csvs: Vec<PathBuf>,
    /// Global epoch of the first fine-tune unit, as marked on the curves.
    pub knee_epochs: Vec<Option<usize>>,
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Canvas {
        Canvas { img: RgbImage::from_pixel(w, h, Rgb([255, 255, 255])) }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path)?;
        Ok(())
    }
}

/// Line chart of several series over a shared x axis; each series is
/// scaled to its own range so curves of different units stay visible.
fn line_chart(series: &[Vec<(f64, f64)>], vline: Option<f64>, path: &Path) -> Result<()> {
    let mut c = Canvas::new(W, H);
    let (x0, x1, y0, y1) = (MARGIN as i64, (W - MARGIN) as i64, (H - MARGIN) as i64, MARGIN as i64);
    c.line((x0, y0), (x1, y0), [0, 0, 0]);
    c.line((x0, y0), (x0, y1), [0, 0, 0]);
    let xs = series.iter().flatten().map(|p| p.0);
    let (xmin, xmax) = xs.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let px = |x: f64| x0 + ((x - xmin) / xspan * (x1 - x0) as f64).round() as i64;
    for (k, s) in series.iter().enumerate() {
        let (ymin, ymax) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
        let py = |y: f64| y0 - ((y - ymin) / yspan * (y0 - y1) as f64).round() as i64;
        let color = PALETTE[k % PALETTE.len()];
        for w in s.windows(2) {
            c.line((px(w[0].0), py(w[0].1)), (px(w[1].0), py(w[1].1)), color);
        }
        for p in s {
            let (x, y) = (px(p.0), py(p.1));
            for d in -1..=1 {
                c.put(x + d, y, color);
                c.put(x, y + d, color);
            }
        }
    }
    if let Some(v) = vline {
        let x = px(v);
        let mut y = y1;
        while y < y0 {
            c.line((x, y), (x, (y + 4).min(y0)), [120, 120, 120]);
            y += 8;
        }
    }
    c.save(path)
}

/// Diverging blue–white–red heatmap, one cell per matrix entry.
fn heatmap(rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let nr = rows.len().max(1) as u32;
    let nc = rows.first().map_or(1, |r| r.len()).max(1) as u32;
    let cell = (480 / nr.max(nc)).clamp(4, 40);
    let mut c = Canvas::new(nc * cell, nr * cell);
    let scale = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = (v / scale).clamp(-1.0, 1.0);
            let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
            let color = if t >= 0.0 { [255, fade(t), fade(t)] } else { [fade(-t), fade(-t), 255] };
            for dy in 0..cell {
                for dx in 0..cell {
                    c.put((j as u32 * cell + dx) as i64, (i as u32 * cell + dy) as i64, color);
                }
            }
        }
    }
    c.save(path)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Learning curves: train loss, validation MAE and mean |w| of the stable
/// and adaptive weights per global epoch, with the fine-tune start marked.
fn curves(t: &Transcript, dir: &Path, files: &mut PlotFiles) -> Result<()> {
    let csv_path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["global_epoch", "stage", "epoch", "train_loss", "val_mae", "neocortex_mean_abs", "hippocampus_mean_abs", "knee"])?;
    let knee = t.stage_start("finetune");
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4];
    for r in t.records.iter().filter(|r| r.stage == "warmup" || r.stage == "finetune") {
        let x = r.global_epoch as f64;
        series[0].push((x, r.train_loss));
        if let Some(v) = r.val_mae {
            series[1].push((x, v));
        }
        if let Some(v) = r.neocortex_mean_abs {
            series[2].push((x, v));
        }
        if let Some(v) = r.hippocampus_mean_abs {
            series[3].push((x, v));
        }
        w.write_record([
            r.global_epoch.to_string(),
            r.stage.clone(),
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_mae),
            opt(r.neocortex_mean_abs),
            opt(r.hippocampus_mean_abs),
            (Some(r.global_epoch) == knee).to_string(),
        ])?;
    }
    w.flush()?;
    let png = dir.join("curves.png");
    series.retain(|s| !s.is_empty());
    line_chart(&series, knee.map(|k| k as f64), &png)?;
    files.csvs.push(csv_path);
    files.pngs.push(png);
    files.knee_epochs.push(knee);
    Ok(())
}

/// Warm-up trajectories of the ledger quantiles per block.
fn ledger_quantiles(t: &Transcript, dir: &Path, files: &mut PlotFiles) -> Result<()> {
    let csv_path = dir.join("ledger_quantiles.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["global_epoch", "block", "q0", "q25", "q50", "q75", "q100"])?;
    let mut series: Vec<(String, usize, Vec<(f64, f64)>)> = Vec::new();
    for r in &t.records {
        for (block, q) in &r.ledger_quantiles {
            let mut rec = vec![r.global_epoch.to_string(), block.clone()];
            rec.extend(q.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
            for (k, v) in q.iter().enumerate() {
                match series.iter_mut().find(|(b, kk, _)| b == block && *kk == k) {
                    Some((_, _, s)) => s.push((r.global_epoch as f64, *v)),
                    None => series.push((block.clone(), k, vec![(r.global_epoch as f64, *v)])),
                }
            }
        }
    }
    w.flush()?;
    let png = dir.join("ledger_quantiles.png");
    line_chart(&series.into_iter().map(|s| s.2).collect::<Vec<_>>(), None, &png)?;
    files.csvs.push(csv_path);
    files.pngs.push(png);
    Ok(())
}

/// One heatmap per prompt export CSV in `dir`.
fn prompt_heatmaps(dir: &Path, files: &mut PlotFiles) -> Result<()> {
    let mut exports: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("prompts_")))
        .collect();
    exports.sort();
    for csv_path in exports {
        let mut r = csv::Reader::from_path(&csv_path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row: Vec<f64> = rec.iter().skip(1).map(|v| v.parse::<f64>().map_err(|e| Error::Report(format!("{}: {e}", csv_path.display())))).collect::<Result<_>>()?;
            rows.push(row);
        }
        let png = csv_path.with_extension("png");
        heatmap(&rows, &png)?;
        files.pngs.push(png);
        files.csvs.push(csv_path);
    }
    Ok(())
}

/// Emits curves, ledger quantile trajectories and prompt heatmaps for
/// every run of `report`, reading the transcripts under `out`.
pub fn emit_plots(report: &ExperimentReport, out: &Path) -> Result<PlotFiles> {
    let mut files = PlotFiles::default();
    for summary in &report.variants {
        for seed in &summary.seeds {
            let rel = seed
                .transcript
                .as_ref()
                .ok_or_else(|| Error::Report(format!("{} seed {} has no transcript", summary.variant, seed.seed)))?;
            let path = out.join(rel);
            if !path.exists() {
                return Err(Error::Report(format!("missing transcript {}", path.display())));
            }
            let t = Transcript::read_jsonl(&path)?;
            let dir = run_dir(out, summary.variant, seed.seed);
            curves(&t, &dir, &mut files)?;
            ledger_quantiles(&t, &dir, &mut files)?;
            prompt_heatmaps(&dir, &mut files)?;
        }
    }
    Ok(files)
}
