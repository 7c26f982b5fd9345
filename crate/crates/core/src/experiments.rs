//! Scenario runner, summaries, RMSE comparison tables and gnuplot output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{rmse, run_episode, Axis, EpisodeResult, Mode, StepLog};
use crate::scenario::ScenarioConfig;
use crate::telemetry::{self, LogTable};
use crate::{Error, Result};

/// Tuner statistics over the first and last tenth of the logged updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerTrend {
    pub reward_first: f64,
    pub reward_last: f64,
    pub sigma_first: f64,
    pub sigma_last: f64,
    pub loss_actor_last: f64,
    pub loss_critic_last: f64,
    pub incidents: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    /// Degrees for attitude axes, metres for altitude.
    pub rmse: f64,
    pub tuner: Option<TunerTrend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub steps: usize,
    pub completed_steps: usize,
    pub failure: Option<String>,
    pub csv: String,
    pub axes: BTreeMap<String, AxisSummary>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn rmse(&self, axis: Axis) -> Result<f64> {
        self.axes.get(axis.name()).map(|a| a.rmse).ok_or_else(|| {
            Error::AxisMismatch(format!("{} missing from {}", axis.name(), self.scenario))
        })
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Mean of `f` over the first and last `fraction` of `rows`.
pub fn head_tail_means(
    rows: &[&StepLog],
    fraction: f64,
    f: impl Fn(&StepLog) -> f64,
) -> (f64, f64) {
    let n = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len().max(1));
    let first = mean(rows.iter().take(n).map(|r| f(r)));
    let last = mean(rows.iter().rev().take(n).map(|r| f(r)));
    (first, last)
}

pub fn tuner_trend(rows: &[StepLog], axis: Axis, incidents: u64) -> Option<TunerTrend> {
    let updated: Vec<&StepLog> = rows.iter().filter(|r| r.axis(axis).updated).collect();
    if updated.is_empty() {
        return None;
    }
    let (reward_first, reward_last) = head_tail_means(&updated, 0.1, |r| r.axis(axis).reward);
    let (sigma_first, sigma_last) = head_tail_means(&updated, 0.1, |r| r.axis(axis).sigma);
    let (_, loss_actor_last) = head_tail_means(&updated, 0.1, |r| r.axis(axis).loss_actor);
    let (_, loss_critic_last) = head_tail_means(&updated, 0.1, |r| r.axis(axis).loss_critic);
    Some(TunerTrend {
        reward_first,
        reward_last,
        sigma_first,
        sigma_last,
        loss_actor_last,
        loss_critic_last,
        incidents,
    })
}

pub fn csv_name(scenario: &str, mode: Mode) -> String {
    format!("{scenario}_{}.csv", mode.name())
}

pub fn summarize(
    cfg: &ScenarioConfig,
    result: &EpisodeResult,
    wall_time_s: f64,
) -> Result<RunSummary> {
    let mut axes = BTreeMap::new();
    for axis in Axis::ALL {
        let rmse = if result.rows.is_empty() {
            f64::NAN
        } else {
            rmse(&result.rows, axis, 0..result.rows.len())?
        };
        axes.insert(
            axis.name().to_string(),
            AxisSummary {
                rmse,
                tuner: tuner_trend(&result.rows, axis, result.incidents[axis.index()]),
            },
        );
    }
    Ok(RunSummary {
        scenario: cfg.name.clone(),
        mode: result.mode,
        seed: cfg.seed,
        steps: cfg.steps()?,
        completed_steps: result.rows.len(),
        failure: result.failure.clone(),
        csv: csv_name(&cfg.name, result.mode),
        axes,
        wall_time_s,
    })
}

/// Runs one mode of a scenario and writes its CSV into `out_dir`.
pub fn run_mode(
    cfg: &ScenarioConfig,
    mode: Mode,
    out_dir: &Path,
) -> Result<(RunSummary, EpisodeResult)> {
    let setup = cfg.episode_setup()?;
    let start = Instant::now();
    let result = run_episode(&setup, mode)?;
    let wall = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(out_dir)?;
    telemetry::write_csv_file(&out_dir.join(csv_name(&cfg.name, mode)), &result.rows)?;
    Ok((summarize(cfg, &result, wall)?, result))
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub runs: Vec<RunSummary>,
}

impl ScenarioReport {
    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(RunSummary::failed)
    }
}

pub fn summary_name(scenario: &str) -> String {
    format!("{scenario}_summary.json")
}

/// Runs every mode of `cfg` (in parallel up to `jobs`), writing one CSV per
/// mode and `<name>_summary.json`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    modes: &[Mode],
    out_dir: &Path,
    jobs: usize,
) -> Result<ScenarioReport> {
    let reports = run_scenarios(std::slice::from_ref(cfg), modes, out_dir, jobs)?;
    Ok(reports.into_iter().next().expect("one scenario"))
}

pub fn run_scenarios(
    cfgs: &[ScenarioConfig],
    modes: &[Mode],
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<ScenarioReport>> {
    let mut names: Vec<&str> = cfgs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(
            "scenario names must be unique within one run".into(),
        ));
    }
    let tasks: Vec<(usize, Mode)> = (0..cfgs.len())
        .flat_map(|i| modes.iter().map(move |&m| (i, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunSummary>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, mode)| run_mode(&cfgs[i], mode, out_dir).map(|(s, _)| s))
            .collect()
    });
    let mut reports: Vec<ScenarioReport> = cfgs
        .iter()
        .map(|c| ScenarioReport {
            scenario: c.name.clone(),
            runs: Vec::new(),
        })
        .collect();
    for ((i, _), r) in tasks.into_iter().zip(results) {
        reports[i].runs.push(r?);
    }
    for rep in &reports {
        let f = std::fs::File::create(out_dir.join(summary_name(&rep.scenario)))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), rep)?;
    }
    Ok(reports)
}

pub fn load_report(path: &Path) -> Result<ScenarioReport> {
    let f = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// First line of a comparison CSV.
pub const COMPARE_SCHEMA_LINE: &str = "# quadtune-compare v1";

pub const TABLE_AXES: [Axis; 3] = [Axis::Roll, Axis::Pitch, Axis::Yaw];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub axis: Axis,
    /// One value per compared summary, in input order.
    pub rmse: Vec<f64>,
    /// First column divided by the last.
    pub ratio: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub labels: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, axis: Axis) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.axis == axis)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("axis");
        for l in &self.labels {
            let _ = write!(s, " {l}");
        }
        s.push_str(" ratio improved\n");
        for r in &self.rows {
            s.push_str(r.axis.name());
            for v in &r.rmse {
                let _ = write!(s, " {}", fmt_rmse(*v));
            }
            let _ = writeln!(
                s,
                " {:.2} {}",
                r.ratio,
                if r.improved { "yes" } else { "no" }
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARE_SCHEMA_LINE}\naxis");
        for l in &self.labels {
            let _ = write!(s, ",{l}");
        }
        s.push_str(",ratio,improved\n");
        for r in &self.rows {
            s.push_str(r.axis.name());
            for v in &r.rmse {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{},{}", r.ratio, u8::from(r.improved));
        }
        s
    }
}

/// Two decimals, or three significant figures below 1.
fn fmt_rmse(v: f64) -> String {
    let decimals = if v.is_finite() && v > 0.0 && v < 1.0 {
        (2.0 - v.log10().floor()) as usize
    } else {
        2
    };
    format!("{v:.decimals$}")
}

/// Side-by-side attitude RMSE (roll, pitch, yaw). The ratio column is
/// first / last, and `improved` means the last summary has the lower RMSE.
pub fn compare_table(summaries: &[RunSummary]) -> Result<ComparisonTable> {
    if summaries.len() < 2 {
        return Err(Error::AxisMismatch(
            "at least two summaries are required".into(),
        ));
    }
    let keys: Vec<&String> = summaries[0].axes.keys().collect();
    for s in &summaries[1..] {
        if s.axes.keys().collect::<Vec<_>>() != keys {
            return Err(Error::AxisMismatch(format!(
                "{} ({}) and {} ({}) report different axes",
                summaries[0].scenario,
                summaries[0].mode.name(),
                s.scenario,
                s.mode.name()
            )));
        }
    }
    let labels = summaries
        .iter()
        .map(|s| s.mode.name().to_string())
        .collect();
    let mut rows = Vec::new();
    for axis in TABLE_AXES {
        let rmse: Vec<f64> = summaries
            .iter()
            .map(|s| s.rmse(axis))
            .collect::<Result<_>>()?;
        let (first, last) = (rmse[0], rmse[rmse.len() - 1]);
        rows.push(ComparisonRow {
            axis,
            ratio: if first == last { 1.0 } else { first / last },
            improved: last < first,
            rmse,
        });
    }
    Ok(ComparisonTable { labels, rows })
}

/// Columns, data-file suffix, and plot commands for each figure class.
struct FigureClass {
    name: &'static str,
    title: &'static str,
    columns: &'static [&'static str],
    /// `(x column, y column, title)` as 1-based data-file column indices.
    series: &'static [(usize, usize, &'static str)],
    xlabel: &'static str,
    ylabel: &'static str,
}

const FIGURES: [FigureClass; 6] = [
    FigureClass {
        name: "attitude",
        title: "attitude tracking",
        columns: &[
            "t",
            "roll_ref",
            "roll_meas",
            "pitch_ref",
            "pitch_meas",
            "yaw_ref",
            "yaw_meas",
        ],
        series: &[
            (1, 2, "roll ref"),
            (1, 3, "roll"),
            (1, 4, "pitch ref"),
            (1, 5, "pitch"),
            (1, 6, "yaw ref"),
            (1, 7, "yaw"),
        ],
        xlabel: "t [s]",
        ylabel: "angle [rad]",
    },
    FigureClass {
        name: "rewards",
        title: "rewards",
        columns: &[
            "t",
            "roll_reward",
            "pitch_reward",
            "yaw_reward",
            "alt_reward",
        ],
        series: &[
            (1, 2, "roll"),
            (1, 3, "pitch"),
            (1, 4, "yaw"),
            (1, 5, "alt"),
        ],
        xlabel: "t [s]",
        ylabel: "R",
    },
    FigureClass {
        name: "losses",
        title: "actor and critic losses",
        columns: &[
            "t",
            "roll_loss_a",
            "roll_loss_c",
            "pitch_loss_a",
            "pitch_loss_c",
            "yaw_loss_a",
            "yaw_loss_c",
            "alt_loss_a",
            "alt_loss_c",
        ],
        series: &[
            (1, 2, "roll L_a"),
            (1, 3, "roll L_c"),
            (1, 4, "pitch L_a"),
            (1, 5, "pitch L_c"),
            (1, 6, "yaw L_a"),
            (1, 7, "yaw L_c"),
            (1, 8, "alt L_a"),
            (1, 9, "alt L_c"),
        ],
        xlabel: "t [s]",
        ylabel: "loss",
    },
    FigureClass {
        name: "xy",
        title: "horizontal path",
        columns: &["x_ref", "y_ref", "x", "y"],
        series: &[(1, 2, "reference"), (3, 4, "flown")],
        xlabel: "x [m]",
        ylabel: "y [m]",
    },
    FigureClass {
        name: "altitude",
        title: "altitude and mass",
        columns: &["t", "alt_ref", "z", "mass"],
        series: &[(1, 2, "z ref"), (1, 3, "z"), (1, 4, "mass [kg]")],
        xlabel: "t [s]",
        ylabel: "z [m] / mass [kg]",
    },
    FigureClass {
        name: "gust",
        title: "gust disturbance",
        columns: &["t", "gust_roll", "gust_pitch", "gust_yaw"],
        series: &[(1, 2, "d1"), (1, 3, "d2"), (1, 4, "d3")],
        xlabel: "t [s]",
        ylabel: "rad/s^2",
    },
];

fn write_data_file(path: &Path, table: &LogTable, columns: &[&str]) -> Result<()> {
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;
    let mut s = String::with_capacity(table.len() * columns.len() * 12);
    let _ = writeln!(s, "# {}", columns.join(" "));
    for row in &table.rows {
        let line: Vec<String> = idx.iter().map(|&i| format!("{}", row[i])).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// Writes one data file and one gnuplot script per figure class for each
/// log, plus overlay scripts comparing attitude and altitude when more than
/// one log is given. Scripts refer to data files by bare name, so they are
/// run from `out_dir`. Returns the script paths.
pub fn emit_plots(logs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut scripts = Vec::new();
    let mut stems = Vec::new();
    for log in logs {
        let table = telemetry::read_csv_file(log)?;
        let stem = log
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("bad log file name {}", log.display())))?
            .to_string();
        for fig in &FIGURES {
            let data = format!("{stem}_{}.dat", fig.name);
            write_data_file(&out_dir.join(&data), &table, fig.columns)?;
            let mut gp = String::new();
            let _ = writeln!(gp, "set terminal pngcairo size 1000,600");
            let _ = writeln!(
                gp,
                "set output {}",
                quote(&format!("{stem}_{}.png", fig.name))
            );
            let _ = writeln!(gp, "set title {}", quote(&format!("{stem}: {}", fig.title)));
            let _ = writeln!(gp, "set xlabel {}", quote(fig.xlabel));
            let _ = writeln!(gp, "set ylabel {}", quote(fig.ylabel));
            if fig.name == "xy" {
                let _ = writeln!(gp, "set size ratio -1");
            }
            let _ = writeln!(gp, "set grid");
            let parts: Vec<String> = fig
                .series
                .iter()
                .map(|(x, y, t)| {
                    format!(
                        "{} using {x}:{y} with lines title {}",
                        quote(&data),
                        quote(t)
                    )
                })
                .collect();
            let _ = writeln!(gp, "plot {}", parts.join(", \\\n     "));
            let path = out_dir.join(format!("{stem}_{}.gp", fig.name));
            std::fs::write(&path, gp)?;
            scripts.push(path);
        }
        stems.push(stem);
    }
    if stems.len() > 1 {
        for (fig, cols) in [
            (
                "attitude",
                [(2, 3, "roll"), (4, 5, "pitch"), (6, 7, "yaw")].as_slice(),
            ),
            ("altitude", [(2, 3, "z")].as_slice()),
        ] {
            let mut gp = String::new();
            let _ = writeln!(gp, "set terminal pngcairo size 1000,{}", 300 * cols.len());
            let _ = writeln!(gp, "set output {}", quote(&format!("compare_{fig}.png")));
            let _ = writeln!(gp, "set multiplot layout {},1", cols.len());
            let _ = writeln!(gp, "set grid");
            for (r, m, name) in cols {
                let _ = writeln!(gp, "set title {}", quote(name));
                let mut parts = vec![format!(
                    "{} using 1:{r} with lines title 'reference'",
                    quote(&format!("{}_{fig}.dat", stems[0]))
                )];
                for stem in &stems {
                    parts.push(format!(
                        "{} using 1:{m} with lines title {}",
                        quote(&format!("{stem}_{fig}.dat")),
                        quote(stem)
                    ));
                }
                let _ = writeln!(gp, "plot {}", parts.join(", \\\n     "));
            }
            let _ = writeln!(gp, "unset multiplot");
            let path = out_dir.join(format!("compare_{fig}.gp"));
            std::fs::write(&path, gp)?;
            scripts.push(path);
        }
    }
    Ok(scripts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mode: Mode, rmse: [f64; 4]) -> RunSummary {
        let axes = Axis::ALL
            .iter()
            .zip(rmse)
            .map(|(a, r)| {
                (
                    a.name().to_string(),
                    AxisSummary {
                        rmse: r,
                        tuner: None,
                    },
                )
            })
            .collect();
        RunSummary {
            scenario: "s".into(),
            mode,
            seed: 0,
            steps: 1,
            completed_steps: 1,
            failure: None,
            csv: String::new(),
            axes,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn table_rows_follow_roll_pitch_yaw() {
        let t = compare_table(&[
            summary(Mode::Baseline, [4.49, 3.85, 2.5, 0.1]),
            summary(Mode::Adaptive, [1.20, 1.83, 0.35, 0.1]),
        ])
        .unwrap();
        let text = t.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("roll 4.49 1.20"), "{}", lines[1]);
        assert!(lines[2].starts_with("pitch 3.85 1.83"));
        assert!(lines[3].starts_with("yaw 2.50 0.35"));
        assert!(t.rows.iter().all(|r| r.improved));
    }

    #[test]
    fn identical_summaries_have_unit_ratio() {
        let s = summary(Mode::Baseline, [1.0, 2.0, 3.0, 4.0]);
        let t = compare_table(&[s.clone(), s]).unwrap();
        assert!(t.rows.iter().all(|r| r.ratio == 1.0 && !r.improved));
    }

    #[test]
    fn mismatched_axes_rejected() {
        let a = summary(Mode::Baseline, [1.0; 4]);
        let mut b = summary(Mode::Adaptive, [1.0; 4]);
        b.axes.remove("yaw");
        assert!(matches!(
            compare_table(&[a.clone(), b]),
            Err(Error::AxisMismatch(_))
        ));
        assert!(matches!(compare_table(&[a]), Err(Error::AxisMismatch(_))));
    }

    #[test]
    fn head_tail_means_split() {
        let rows: Vec<StepLog> = (0..20)
            .map(|k| StepLog {
                t: k as f64,
                ..StepLog::default()
            })
            .collect();
        let refs: Vec<&StepLog> = rows.iter().collect();
        let (a, b) = head_tail_means(&refs, 0.1, |r| r.t);
        assert_eq!((a, b), (0.5, 18.5));
    }
}
