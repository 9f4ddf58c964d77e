//! Diagnostic figures regenerated from run artifacts. Every figure is an SVG
//! (or PNG for image panels) with a CSV holding the plotted numbers.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{read_dataset, Samples};
use crate::equalizer::sampling_distribution;
use crate::error::{Error, Result};
use crate::likelihood::read_records;
use crate::stats;
use crate::trainer::{resolve, MetricsReport, PipelineManifest, RunManifest, PIPELINE_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Fraction of images in each tail of the PSNR-change comparison.
    pub top_fraction: f64,
    pub histogram_bins: usize,
    /// Also plot sampling distributions over rank.
    pub sampling_curves: bool,
    pub curve_lambda_dists: Vec<f64>,
    pub curve_lambda_perc: f64,
    pub curve_n: usize,
    /// Images per row of the reconstruction panel.
    pub panel_images: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            top_fraction: 0.1,
            histogram_bins: 40,
            sampling_curves: false,
            curve_lambda_dists: vec![2.0, 4.0, 8.0, 16.0],
            curve_lambda_perc: 1.0,
            curve_n: 100,
            panel_images: 8,
        }
    }
}

impl ReportConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 0.5) {
            return Err(Error::config("report.top_fraction", "must lie in (0, 0.5]"));
        }
        if self.histogram_bins == 0 {
            return Err(Error::config("report.histogram_bins", "must be at least 1"));
        }
        if self.curve_n == 0 {
            return Err(Error::config("report.curve_n", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.curve_lambda_perc) {
            return Err(Error::config("report.curve_lambda_perc", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// What a report run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub written: Vec<PathBuf>,
    /// `(figure, reason)` for every figure that could not be produced.
    pub skipped: Vec<(String, String)>,
}

/// A loaded run with a display label.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub label: String,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl LoadedRun {
    fn latest_eval(&self) -> Result<(PathBuf, MetricsReport)> {
        let e = self
            .manifest
            .evaluations
            .last()
            .ok_or_else(|| Error::InvalidInput(format!("run `{}` has no evaluation", self.label)))?;
        let path = resolve(&self.dir, &e.metrics_json);
        if !path.exists() {
            return Err(Error::MissingFile { path });
        }
        let report = serde_json::from_str(&fs::read_to_string(&path)?)?;
        Ok((resolve(&self.dir, &e.dir), report))
    }
}

/// Loads run manifests; a pipeline directory contributes its phase-1 and
/// phase-3 runs.
pub fn load_runs(inputs: &[PathBuf]) -> Result<Vec<LoadedRun>> {
    let mut runs = Vec::new();
    for input in inputs {
        if input.join(PIPELINE_FILE).exists() {
            let p = PipelineManifest::load(input)?;
            for phase in [&p.phase1, &p.phase3] {
                let (manifest, dir) = RunManifest::load(&input.join(phase))?;
                runs.push((manifest, dir));
            }
        } else {
            runs.push(RunManifest::load(input)?);
        }
    }
    let mut out: Vec<LoadedRun> = Vec::new();
    for (manifest, dir) in runs {
        let base = manifest.config.tag();
        let mut label = base.clone();
        let mut k = 2;
        while out.iter().any(|r| r.label == label) {
            label = format!("{base}_{k}");
            k += 1;
        }
        out.push(LoadedRun { label, dir, manifest });
    }
    Ok(out)
}

fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let mut r = csv::Reader::from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::format(path.display().to_string(), format!("no `{column}` column")))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[idx]
            .parse()
            .map_err(|_| Error::format(path.display().to_string(), format!("bad number `{}`", &rec[idx])))?;
        out.push(v);
    }
    Ok(out)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::InvalidInput(format!("plotting failed: {e}"))
}

fn finite_range(sets: &[&[f64]]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in sets.iter().flat_map(|s| s.iter()).filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Writes overlaid histograms of several value sets on shared bins.
pub fn histogram_figure(path_stem: &Path, title: &str, x_label: &str, series: &[(&str, &[f64])], bins: usize) -> Result<Vec<PathBuf>> {
    let sets: Vec<&[f64]> = series.iter().map(|s| s.1).collect();
    let (lo, hi) = finite_range(&sets);
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<usize>> = sets.iter().map(|s| stats::histogram(s, lo, hi, bins)).collect();
    let csv_path = path_stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
    header.extend(series.iter().map(|s| s.0.to_string()));
    w.write_record(&header)?;
    for b in 0..bins {
        let mut row = vec![(lo + b as f64 * width).to_string(), (lo + (b + 1) as f64 * width).to_string()];
        row.extend(counts.iter().map(|c| c[b].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let svg = path_stem.with_extension("svg");
    let max_count = counts.iter().flatten().copied().max().unwrap_or(1).max(1);
    {
        let root = SVGBackend::new(&svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(lo..hi, 0usize..max_count + max_count / 10 + 1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_label).y_desc("count").draw().map_err(plot_err)?;
        for (i, (name, _)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let c = &counts[i];
            chart
                .draw_series(c.iter().enumerate().map(|(b, &n)| {
                    let x0 = lo + b as f64 * width;
                    Rectangle::new([(x0, 0), (x0 + width, n)], color.mix(0.45).filled())
                }))
                .map_err(plot_err)?
                .label(*name)
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(vec![svg, csv_path])
}

/// Scatter plot of labelled point sets; the CSV has one row per point.
pub fn scatter_figure(
    path_stem: &Path,
    title: &str,
    axes: (&str, &str),
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<Vec<PathBuf>> {
    let csv_path = path_stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["series", axes.0, axes.1])?;
    for (name, pts) in series {
        for (x, y) in pts {
            w.write_record([name.to_string(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    let xs: Vec<f64> = series.iter().flat_map(|s| s.1.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).collect();
    let (x0, x1) = finite_range(&[&xs]);
    let (y0, y1) = finite_range(&[&ys]);
    let (px, py) = ((x1 - x0) * 0.05, (y1 - y0) * 0.05);
    let svg = path_stem.with_extension("svg");
    {
        let root = SVGBackend::new(&svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(56)
            .build_cartesian_2d(x0 - px..x1 + px, y0 - py..y1 + py)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(axes.0).y_desc(axes.1).draw().map_err(plot_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?
                .label(*name)
                .legend(move |(x, y)| Circle::new((x + 5, y), 3, color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(vec![svg, csv_path])
}

/// Line plot of several curves over a shared x grid.
pub fn line_figure(path_stem: &Path, title: &str, axes: (&str, &str), x: &[f64], series: &[(String, Vec<f64>)]) -> Result<Vec<PathBuf>> {
    let csv_path = path_stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec![axes.0.to_string()];
    header.extend(series.iter().map(|s| s.0.clone()));
    w.write_record(&header)?;
    for (i, xv) in x.iter().enumerate() {
        let mut row = vec![xv.to_string()];
        row.extend(series.iter().map(|s| s.1[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let ys: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let (x0, x1) = finite_range(&[x]);
    let (_, y1) = finite_range(&[&ys]);
    let svg = path_stem.with_extension("svg");
    {
        let root = SVGBackend::new(&svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(x0..x1, 0.0..y1 * 1.05)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(axes.0).y_desc(axes.1).draw().map_err(plot_err)?;
        for (i, (name, ys)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(x.iter().copied().zip(ys.iter().copied()), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(vec![svg, csv_path])
}

/// Bar chart of one value per label.
pub fn bar_figure(path_stem: &Path, title: &str, value_name: &str, bars: &[(String, f64)]) -> Result<Vec<PathBuf>> {
    let csv_path = path_stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["run", value_name])?;
    for (l, v) in bars {
        w.write_record([l.clone(), v.to_string()])?;
    }
    w.flush()?;
    let top = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-9);
    let svg = path_stem.with_extension("svg");
    {
        let root = SVGBackend::new(&svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(48)
            .y_label_area_size(56)
            .build_cartesian_2d((0..bars.len()).into_segmented(), 0.0..top * 1.1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .y_desc(value_name)
            .x_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) => labels.get(*i).cloned().unwrap_or_default(),
                _ => String::new(),
            })
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(bars.iter().enumerate().filter(|(_, b)| b.1.is_finite()).map(|(i, b)| {
                let mut r = Rectangle::new(
                    [(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), b.1)],
                    Palette99::pick(i).filled(),
                );
                r.set_margin(0, 0, 12, 12);
                r
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(vec![svg, csv_path])
}

/// Sample indices of the `fraction` largest and smallest entries of `delta`
/// (ties broken by index).
pub fn extreme_indices(delta: &[f64], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let k = ((delta.len() as f64 * fraction).round() as usize).clamp(1, delta.len().max(1));
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    let best = order[..k.min(order.len())].to_vec();
    let mut worst: Vec<usize> = order.iter().rev().take(k).copied().collect();
    worst.sort_by(|&a, &b| delta[a].total_cmp(&delta[b]).then(a.cmp(&b)));
    (best, worst)
}

fn to_u8(samples: &Samples, i: usize) -> Vec<u8> {
    let m = samples.pixel_max();
    samples
        .raw_sample(i)
        .iter()
        .map(|&v| match m {
            Some(m) => (f64::from(v) / f64::from(m) * 255.0).round().clamp(0.0, 255.0) as u8,
            None => ((f64::from(v) + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8,
        })
        .collect()
}

/// Writes rows of images as one PNG grid.
pub fn image_grid(path: &Path, rows: &[(&Samples, Vec<usize>)]) -> Result<()> {
    let (c, h, w) = rows
        .first()
        .map(|r| r.0.shape())
        .ok_or_else(|| Error::InvalidInput("empty image grid".into()))?;
    let cols = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let pad = 2;
    let (gw, gh) = ((cols * (w + pad) + pad) as u32, (rows.len() * (h + pad) + pad) as u32);
    let mut img = image::RgbImage::from_pixel(gw, gh, image::Rgb([255, 255, 255]));
    for (r, (samples, idx)) in rows.iter().enumerate() {
        for (col, &i) in idx.iter().enumerate() {
            let px = to_u8(samples, i);
            for y in 0..h {
                for x in 0..w {
                    let at = |ch: usize| px[ch * h * w + y * w + x];
                    let rgb = if c >= 3 { [at(0), at(1), at(2)] } else { [at(0); 3] };
                    img.put_pixel((pad + col * (w + pad) + x) as u32, (pad + r * (h + pad) + y) as u32, image::Rgb(rgb));
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

struct Outcome<'a> {
    summary: &'a mut ReportSummary,
    attempted: usize,
}

impl Outcome<'_> {
    fn record(&mut self, figure: &str, r: Result<Vec<PathBuf>>) {
        self.attempted += 1;
        match r {
            Ok(paths) => self.summary.written.extend(paths),
            Err(e) => {
                log::warn!("skipping {figure}: {e}");
                self.summary.skipped.push((figure.to_string(), e.to_string()));
            }
        }
    }
}

fn norm_histogram(run: &LoadedRun, out: &Path, cfg: &ReportConfig) -> Result<Vec<PathBuf>> {
    let (dir, _) = run.latest_eval()?;
    let enc = read_column(&dir.join("norms.csv"), "norm")?;
    let prior = read_column(&dir.join("prior_norms.csv"), "norm")?;
    histogram_figure(
        &out.join(format!("norm_histogram_{}", run.label)),
        &format!("encoded vs prior latent norms ({})", run.label),
        "||z||",
        &[("prior", &prior), ("encoded", &enc)],
        cfg.histogram_bins,
    )
}

fn likelihood_histogram(run: &LoadedRun, out: &Path, cfg: &ReportConfig) -> Result<Vec<PathBuf>> {
    let l = run
        .manifest
        .likelihood
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("run `{}` has no likelihood scores", run.label)))?;
    let records = read_records(&resolve(&run.dir, &l.records_csv))?;
    let v: Vec<f64> = records.iter().map(|r| r.record.log10_marginal).collect();
    histogram_figure(
        &out.join(format!("loglik_histogram_{}", run.label)),
        &format!("log10 marginal likelihood ({})", run.label),
        "log10 p(x)",
        &[("train", &v)],
        cfg.histogram_bins,
    )
}

fn psnr_vs_likelihood(run: &LoadedRun, out: &Path) -> Result<Vec<PathBuf>> {
    let l = run
        .manifest
        .likelihood
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("run `{}` has no likelihood scores", run.label)))?;
    let records = read_records(&resolve(&run.dir, &l.records_csv))?;
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.psnr.map(|p| (r.record.log10_marginal, p)))
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidInput("likelihood records carry no PSNR values".into()));
    }
    scatter_figure(
        &out.join(format!("psnr_vs_loglik_{}", run.label)),
        &format!("reconstruction PSNR vs log10 likelihood ({})", run.label),
        ("log10_marginal", "psnr"),
        &[(run.label.as_str(), pts)],
    )
}

fn sampling_curves(out: &Path, cfg: &ReportConfig) -> Result<Vec<PathBuf>> {
    let n = cfg.curve_n;
    let ranks: Vec<usize> = (1..=n).collect();
    let x: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
    let mut series = Vec::new();
    for &d in &cfg.curve_lambda_dists {
        series.push((format!("lambda_dist={d}"), sampling_distribution(&ranks, cfg.curve_lambda_perc, d)?));
    }
    line_figure(
        &out.join("sampling_distribution"),
        &format!("sampling probability by rank (lambda_perc = {}, N = {n})", cfg.curve_lambda_perc),
        ("rank", "probability"),
        &x,
        &series,
    )
}

fn evaluated(runs: &[LoadedRun]) -> Vec<(&LoadedRun, PathBuf, MetricsReport)> {
    runs.iter()
        .filter_map(|r| r.latest_eval().ok().map(|(d, m)| (r, d, m)))
        .collect()
}

fn fid_bars(runs: &[LoadedRun], out: &Path) -> Result<Vec<PathBuf>> {
    let bars: Vec<(String, f64)> = evaluated(runs)
        .into_iter()
        .filter_map(|(r, _, m)| m.fid.map(|f| (r.label.clone(), f)))
        .collect();
    if bars.is_empty() {
        return Err(Error::InvalidInput("no evaluated run has an FID".into()));
    }
    bar_figure(&out.join("fid_by_run"), "FID by run", "fid", &bars)
}

fn pr_scatter(runs: &[LoadedRun], out: &Path) -> Result<Vec<PathBuf>> {
    let series: Vec<(&str, Vec<(f64, f64)>)> = evaluated(runs)
        .into_iter()
        .filter_map(|(r, _, m)| Some((r.label.as_str(), vec![(m.recall?, m.precision?)])))
        .collect();
    if series.is_empty() {
        return Err(Error::InvalidInput("no evaluated run has precision/recall".into()));
    }
    scatter_figure(&out.join("precision_recall"), "precision and recall", ("recall", "precision"), &series)
}

fn psnr_change(runs: &[LoadedRun], out: &Path, cfg: &ReportConfig) -> Result<Vec<PathBuf>> {
    let ev = evaluated(runs);
    if ev.len() < 2 {
        return Err(Error::InvalidInput("PSNR comparison needs two evaluated runs".into()));
    }
    let (a, da, ma) = &ev[0];
    let (b, db, mb) = &ev[1];
    if ma.split != mb.split || ma.n_real != mb.n_real || ma.dataset != mb.dataset {
        return Err(Error::InvalidInput("the two runs were evaluated on different data".into()));
    }
    let pa = read_column(&da.join("psnr.csv"), "psnr")?;
    let pb = read_column(&db.join("psnr.csv"), "psnr")?;
    let delta: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| y - x).collect();
    let (best, worst) = extreme_indices(&delta, cfg.top_fraction);
    let stem = out.join(format!("psnr_change_{}_vs_{}", a.label, b.label));
    let csv_path = stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["group", "sample_index", &format!("psnr_{}", a.label), &format!("psnr_{}", b.label), "delta"])?;
    for (group, idx) in [("improved", &best), ("degraded", &worst)] {
        for &i in idx.iter() {
            w.write_record([group.to_string(), i.to_string(), pa[i].to_string(), pb[i].to_string(), delta[i].to_string()])?;
        }
    }
    w.flush()?;
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let mut written = vec![csv_path];
    for (group, idx) in [("improved", &best), ("degraded", &worst)] {
        let (sa, sb) = (pick(&pa, idx), pick(&pb, idx));
        let files = histogram_figure(
            &out.join(format!("psnr_change_{group}_{}_vs_{}", a.label, b.label)),
            &format!("PSNR of the {:.0}% most {group} images", cfg.top_fraction * 100.0),
            "psnr (dB)",
            &[(a.label.as_str(), &sa), (b.label.as_str(), &sb)],
            cfg.histogram_bins.min(20),
        )?;
        written.extend(files);
    }
    Ok(written)
}

fn reconstruction_panel(runs: &[LoadedRun], out: &Path, cfg: &ReportConfig) -> Result<Vec<PathBuf>> {
    let ev = evaluated(runs);
    let panels: Vec<_> = ev
        .iter()
        .filter_map(|(r, d, _)| read_dataset(&d.join("panel.eqd")).ok().map(|p| (r, p, d)))
        .collect();
    if panels.is_empty() {
        return Err(Error::InvalidInput("no evaluated run has a reconstruction panel".into()));
    }
    let k = cfg.panel_images.min(panels.iter().map(|p| p.1.train.len()).min().unwrap_or(0));
    let idx: Vec<usize> = (0..k).collect();
    let mut rows = vec![(&panels[0].1.train, idx.clone())];
    for p in &panels {
        rows.push((&p.1.validation, idx.clone()));
    }
    let png = out.join("reconstructions.png");
    image_grid(&png, &rows)?;
    let csv_path = out.join("reconstructions.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["row", "run", "sample_index", "psnr"])?;
    for (row, p) in panels.iter().enumerate() {
        let psnr = read_column(&p.2.join("psnr.csv"), "psnr").unwrap_or_default();
        for &i in &idx {
            let v = psnr.get(i).map_or(String::new(), f64::to_string);
            w.write_record([(row + 1).to_string(), p.0.label.clone(), i.to_string(), v])?;
        }
    }
    w.flush()?;
    Ok(vec![png, csv_path])
}

/// Regenerates figures from the given run directories, manifests or
/// pipeline directories. A single run yields the per-run figures; several
/// runs add the cross-run comparisons. Fails only if every figure fails.
pub fn generate_report(inputs: &[PathBuf], out: &Path, cfg: &ReportConfig) -> Result<ReportSummary> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::config("report", "at least one manifest is required"));
    }
    let runs = load_runs(inputs)?;
    fs::create_dir_all(out)?;
    let mut summary = ReportSummary::default();
    let mut o = Outcome {
        summary: &mut summary,
        attempted: 0,
    };
    for run in &runs {
        o.record("norm histogram", norm_histogram(run, out, cfg));
        o.record("log-likelihood histogram", likelihood_histogram(run, out, cfg));
        o.record("PSNR vs log-likelihood", psnr_vs_likelihood(run, out));
    }
    if cfg.sampling_curves {
        o.record("sampling distribution", sampling_curves(out, cfg));
    }
    if runs.len() > 1 {
        o.record("FID bar chart", fid_bars(&runs, out));
        o.record("precision/recall", pr_scatter(&runs, out));
        o.record("PSNR change", psnr_change(&runs, out, cfg));
        o.record("reconstruction panel", reconstruction_panel(&runs, out, cfg));
    }
    let attempted = o.attempted;
    if summary.written.is_empty() && attempted > 0 {
        let reasons: Vec<String> = summary.skipped.iter().map(|(f, r)| format!("{f}: {r}")).collect();
        return Err(Error::InvalidInput(format!("no figure could be produced ({})", reasons.join("; "))));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_pick_tails() {
        let d = [0.0, 5.0, -3.0, 1.0, -1.0, 2.0, 0.5, -0.5, 3.0, -2.0];
        let (best, worst) = extreme_indices(&d, 0.2);
        assert_eq!(best, vec![1, 8]);
        assert_eq!(worst, vec![2, 9]);
    }

    #[test]
    fn curves_are_monotone_in_rank() {
        let cfg = ReportConfig::default();
        let ranks: Vec<usize> = (1..=cfg.curve_n).collect();
        for &d in &cfg.curve_lambda_dists {
            let p = sampling_distribution(&ranks, cfg.curve_lambda_perc, d).unwrap();
            assert!(p.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
