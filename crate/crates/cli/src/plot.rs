//! N-shot sweep plots rendered as SVG.
//!
//! One line per (method, target); points are sorted by n no matter how the
//! report rows were ordered. Baseline methods draw solid, the multi-dataset
//! methods dashed. The x axis is log-scaled over the n values.

use std::path::Path;

use indexmap::IndexMap;
use mdl_core::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: String,
    pub target: String,
    pub points: Vec<(u32, f64)>,
}

fn is_baseline(method: &str) -> bool {
    matches!(method, "lm-base" | "mlm" | "mtl")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Collect (method, target) series from report rows.
pub fn collect_series(rows: &[(String, String, u32, f64)]) -> Vec<Series> {
    let mut map: IndexMap<(String, String), Vec<(u32, f64)>> = IndexMap::new();
    for (method, target, n, mean) in rows {
        map.entry((method.clone(), target.clone()))
            .or_default()
            .push((*n, *mean));
    }
    map.into_iter()
        .map(|((method, target), mut points)| {
            points.sort_by_key(|(n, _)| *n);
            points.dedup_by_key(|(n, _)| *n);
            Series {
                method,
                target,
                points,
            }
        })
        .collect()
}

/// Render the sweep. Fails unless at least one series has two or more
/// distinct n values.
pub fn render_nshot_svg(series: &[Series]) -> Result<String> {
    let plottable: Vec<&Series> = series.iter().filter(|s| s.points.len() >= 2).collect();
    if plottable.is_empty() {
        return Err(Error::InsufficientPlotData {
            message: "need at least two n values for at least one (method, target)".into(),
        });
    }

    let width = 640.0;
    let height = 420.0;
    let left = 56.0;
    let right = 16.0;
    let top = 16.0;
    let bottom = 120.0;
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let ns: Vec<u32> = {
        let mut all: Vec<u32> = plottable
            .iter()
            .flat_map(|s| s.points.iter().map(|(n, _)| *n))
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    };
    let log = |n: u32| (n as f64).ln();
    let (lo, hi) = (log(ns[0]), log(*ns.last().unwrap()));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |n: u32| left + (log(n) - lo) / span * plot_w;
    let y = |f1: f64| top + (1.0 - f1.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{tick:.2}</text>\n",
            left - 6.0,
            y(tick) + 4.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#dddddd\"/>\n",
            y(tick),
            left + plot_w
        ));
    }
    for &n in &ns {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{n}</text>\n",
            x(n),
            top + plot_h + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">n-shots</text>\n",
        left + plot_w / 2.0,
        top + plot_h + 34.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">macro-F1</text>\n",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    ));

    for (idx, s) in plottable.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let dash = if is_baseline(&s.method) {
            ""
        } else {
            " stroke-dasharray=\"6,4\""
        };
        let path: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(i, (n, f1))| {
                format!(
                    "{}{:.2},{:.2}",
                    if i == 0 { "M" } else { "L" },
                    x(*n),
                    y(*f1)
                )
            })
            .collect();
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"{dash}/>\n",
            path.join(" ")
        ));
        for (n, f1) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.6\" fill=\"{color}\"/>\n",
                x(*n),
                y(*f1)
            ));
        }
        let ly = top + plot_h + 52.0 + idx as f64 * 16.0;
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"1.8\"{dash}/>\n",
            left + 28.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{} on {}</text>\n",
            left + 34.0,
            ly + 4.0,
            s.method,
            s.target
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Read report CSVs (files or directories of `.csv`) into plot rows.
pub fn read_report_rows(paths: &[std::path::PathBuf]) -> Result<Vec<(String, String, u32, f64)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(p)
                .map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    let mut rows = Vec::new();
    for file in files {
        let mut reader = csv::Reader::from_path(&file).map_err(|e| Error::InvalidConfig {
            message: format!("{}: {e}", file.display()),
        })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::InvalidConfig {
                message: format!("{}: {e}", file.display()),
            })?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(m), Some(t), Some(n), Some(mean)) =
            (col("method"), col("target"), col("n"), col("macro_mean"))
        else {
            return Err(Error::InvalidConfig {
                message: format!("{}: not a report file", file.display()),
            });
        };
        for record in reader.records() {
            let record = record.map_err(|e| Error::InvalidConfig {
                message: format!("{}: {e}", file.display()),
            })?;
            rows.push((
                record[m].to_string(),
                record[t].to_string(),
                record[n].parse().unwrap_or(0),
                record[mean].parse().unwrap_or(0.0),
            ));
        }
    }
    Ok(rows)
}

pub fn write_plot(path: &Path, svg: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, svg).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
