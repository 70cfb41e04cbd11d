use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use goalstack::pipeline::suite::{eval_suite, generate_suite, noise_sweep, thread_cap};
use goalstack::pipeline::{Pipeline, PipelineConfig};
use goalstack::scene::Scenario;
use goalstack::smoother::{smooth, SmootherProblem};
use goalstack::{Error, Result};
use ndarray::Array2;

#[derive(Parser)]
#[command(name = "goalstack", version, about = "Goal-oriented driving stack on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(clap::Args)]
struct Common {
    /// JSON pipeline config; unset fields take the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scenarios as JSON files.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        start: u64,
    },
    /// Run the full stack on one scenario and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Scenario file (glob matching exactly one file); generated when absent.
        #[arg(long)]
        scenarios: Option<String>,
        /// Generator index used when no scenario file is given.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Evaluate a scenario suite and write the merged report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Scenario files; `--count` generated scenarios when absent.
        #[arg(long)]
        scenarios: Option<String>,
        #[arg(long, default_value_t = 10)]
        count: u64,
        /// Detection position noise levels (m) for a metric-vs-noise sweep.
        #[arg(long, value_delimiter = ',')]
        noise_sweep: Vec<f64>,
    },
    /// Smooth a `t,x,y` trajectory CSV.
    Smooth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a numeric CSV as an SVG line plot.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// X column; the first column by default.
        #[arg(long)]
        x: Option<String>,
        /// Y columns; every other numeric column by default.
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        /// Column whose values split the rows into separate series.
        #[arg(long)]
        series: Option<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("goalstack: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let base = match common.preset {
                Preset::Full => PipelineConfig::full(),
                Preset::Desk => PipelineConfig::desk(),
            };
            overlay(base, &std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?)?
        }
        None => match common.preset {
            Preset::Full => PipelineConfig::full(),
            Preset::Desk => PipelineConfig::desk(),
        },
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Merge a partial JSON config over `base`, object by object.
fn overlay(base: PipelineConfig, text: &str) -> Result<PipelineConfig> {
    fn merge(dst: &mut serde_json::Value, src: serde_json::Value) {
        match (dst, src) {
            (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
                for (k, v) in s {
                    match d.get_mut(&k) {
                        Some(slot) => merge(slot, v),
                        None => {
                            d.insert(k, v);
                        }
                    }
                }
            }
            (d, s) => *d = s,
        }
    }
    let patch: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    let mut value = serde_json::to_value(&base)?;
    merge(&mut value, patch);
    PipelineConfig::from_json(&value.to_string())
}

fn scenario_files(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut files = glob::glob(pattern)
        .map_err(|e| Error::config(format!("bad glob {pattern:?}: {e}")))?
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::config(e.to_string()))?;
    files.sort();
    if files.is_empty() {
        return Err(Error::config(format!("no scenario matches {pattern:?}")));
    }
    Ok(files)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Gen {
            common,
            out,
            count,
            start,
        } => {
            let p = Pipeline::new(load_config(&common)?)?;
            std::fs::create_dir_all(&out)?;
            for (i, sc) in generate_suite(&p, start, count)? {
                let path = out.join(format!("scenario-{i:04}.json"));
                sc.save(&path)?;
                println!("{}", path.display());
            }
        }
        Cmd::Run {
            common,
            out,
            scenarios,
            index,
        } => {
            let p = Pipeline::new(load_config(&common)?)?;
            let sc = match scenarios {
                Some(pattern) => {
                    let files = scenario_files(&pattern)?;
                    if files.len() != 1 {
                        return Err(Error::config(format!("run takes one scenario, {pattern:?} matched {}", files.len())));
                    }
                    Scenario::load(&files[0])?
                }
                None => p.generate(index)?,
            };
            let result = p.run(&sc, index, Some(&out))?;
            println!("{}", result.manifest.content_hash()?);
        }
        Cmd::Eval {
            common,
            out,
            scenarios,
            count,
            noise_sweep: levels,
        } => {
            let cfg = load_config(&common)?;
            let p = Pipeline::new(cfg.clone())?;
            let suite = match scenarios {
                Some(pattern) => scenario_files(&pattern)?
                    .iter()
                    .enumerate()
                    .map(|(i, f)| Ok((i as u64, Scenario::load(f)?)))
                    .collect::<Result<Vec<_>>>()?,
                None => generate_suite(&p, 0, count)?,
            };
            let threads = thread_cap()?;
            let result = eval_suite(&p, &suite, Some(&out), threads)?;
            if !levels.is_empty() {
                let (csv, _) = noise_sweep(&cfg, &suite, &levels, threads)?;
                std::fs::write(out.join("noise_sweep.csv"), csv)?;
            }
            print!("{}", result.report.to_csv());
        }
        Cmd::Smooth { config, input, out } => {
            let weights = match config {
                Some(path) => PipelineConfig::load(&path)?.smoother,
                None => PipelineConfig::default().smoother,
            };
            let (t, target) = read_trajectory(&input)?;
            let mut problem = SmootherProblem::new(target, uniform_dt(&t)?);
            problem.weights = weights;
            let result = smooth(&problem)?;
            let mut w = csv::Writer::from_path(&out).map_err(csv_err)?;
            w.write_record(["t", "x", "y"]).map_err(csv_err)?;
            for (ti, row) in t.iter().zip(result.trajectory.rows()) {
                w.write_record([ti.to_string(), row[0].to_string(), row[1].to_string()]).map_err(csv_err)?;
            }
            w.flush()?;
            eprintln!("iterations {} converged {}", result.iterations, result.converged);
        }
        Cmd::Plot {
            input,
            out,
            x,
            y,
            series,
        } => {
            let table = Table::read(&input)?;
            let svg = render_svg(&table, x.as_deref(), &y, series.as_deref(), &input.display().to_string())?;
            std::fs::write(out, svg)?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn read_trajectory(path: &Path) -> Result<(Vec<f64>, Array2<f64>)> {
    let table = Table::read(path)?;
    let col = |name: &str| {
        table
            .numeric(name)
            .ok_or_else(|| Error::Format(format!("{}: column {name:?} missing or not numeric", path.display())))
    };
    let (t, x, y) = (col("t")?, col("x")?, col("y")?);
    let mut target = Array2::zeros((t.len(), 2));
    for i in 0..t.len() {
        target[[i, 0]] = x[i];
        target[[i, 1]] = y[i];
    }
    Ok((t, target))
}

fn uniform_dt(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::Format("trajectory needs at least two rows".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let uniform = t.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt.abs().max(1.0));
    if !(dt > 0.0) || !uniform {
        return Err(Error::Format("trajectory timestamps must be increasing and evenly spaced".into()));
    }
    Ok(dt)
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(csv_err)?;
        Ok(Table { headers, rows })
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Column parsed as numbers; empty cells become NaN.
    fn numeric(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index(name)?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r.get(i)?.trim();
                if cell.is_empty() {
                    Some(f64::NAN)
                } else {
                    cell.parse().ok()
                }
            })
            .collect()
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn render_svg(table: &Table, x: Option<&str>, y: &[String], series: Option<&str>, title: &str) -> Result<String> {
    let fmt_err = |m: String| Error::Format(m);
    let x_name = x.or(table.headers.first().map(String::as_str)).ok_or_else(|| fmt_err("empty CSV".into()))?;
    let xs = table
        .numeric(x_name)
        .ok_or_else(|| fmt_err(format!("x column {x_name:?} missing or not numeric")))?;
    let y_names: Vec<String> = if y.is_empty() {
        table
            .headers
            .iter()
            .filter(|h| h.as_str() != x_name && Some(h.as_str()) != series && table.numeric(h).is_some())
            .cloned()
            .collect()
    } else {
        y.to_vec()
    };
    let group_col = match series {
        Some(s) => Some(table.index(s).ok_or_else(|| fmt_err(format!("series column {s:?} missing")))?),
        None => None,
    };
    let mut lines: Vec<(String, Vec<[f64; 2]>)> = Vec::new();
    for name in &y_names {
        let ys = table
            .numeric(name)
            .ok_or_else(|| fmt_err(format!("y column {name:?} missing or not numeric")))?;
        for (row, (&xv, &yv)) in table.rows.iter().zip(xs.iter().zip(&ys)) {
            if !xv.is_finite() || !yv.is_finite() {
                continue;
            }
            let label = match group_col {
                Some(g) => format!("{name} {}", row[g]),
                None => name.clone(),
            };
            match lines.iter_mut().find(|(l, _)| *l == label) {
                Some((_, pts)) => pts.push([xv, yv]),
                None => lines.push((label, vec![[xv, yv]])),
            }
        }
    }
    if lines.is_empty() {
        return Err(fmt_err("nothing to plot".into()));
    }
    let all = lines.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (w, h, m) = (640.0, 400.0, 50.0);
    let px = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{m}" y="20">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{}</text>"#, px(v), h - m + 15.0, tick(v));
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, m - 4.0, py(v) + 4.0, tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(x_name));
    for (k, (label, pts)) in lines.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1]))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        for p in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, px(p[0]), py(p[1]));
        }
        let ly = m + 14.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.1}" fill="{color}">{}</text>"#, w - m + 4.0 - 120.0, escape(label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
