//! Grid execution and the files it leaves behind.
//!
//! ```text
//! out_dir/
//!   runs/<run id>/metrics.csv   run_id,round,split,loss,accuracy
//!   runs/<run id>/curves.csv    round,train_loss,train_acc,test_loss,test_acc
//!   summary.csv                 one row per setting, one column per scenario
//!   summary.txt                 the same table, aligned, plus failures
//!   timing.csv                  wall-clock seconds per round
//! ```
//!
//! Everything except `timing.csv` is a pure function of the grid and data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::federated::{
    build_federation, continue_3mf, history_to_csv, initial_state, train_baseline_with, Learner, RoundReport,
};
use crate::harness::{format_rate, BaselineRun, DataSource, ExperimentGrid, MetaRun};
use crate::model::MultimodalNet;

pub const METRICS_HEADER: &str = "run_id,round,split,loss,accuracy";
pub const TIMING_HEADER: &str = "run_id,round,wall_seconds";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One line of a run's metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub round: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    /// Seconds since the run started; kept out of `metrics.csv`.
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:?},{:?}",
            self.run_id,
            self.round,
            self.split.name(),
            self.loss,
            self.accuracy
        )
    }

    pub fn pair(run_id: &str, r: &RoundReport, wall_seconds: f64) -> [MetricsRow; 2] {
        let row = |split, loss, accuracy| MetricsRow {
            run_id: run_id.to_string(),
            round: r.round,
            split,
            loss,
            accuracy,
            wall_seconds,
        };
        [row(Split::Train, r.train_loss, r.train_acc), row(Split::Test, r.test_loss, r.test_acc)]
    }
}

/// Parses a `metrics.csv` stream back into rows (wall time reads as 0).
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::data(format!("metrics must start with `{METRICS_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::data(format!("metrics line {}: `{l}`", i + 2));
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 5 {
                return Err(bad());
            }
            Ok(MetricsRow {
                run_id: c[0].to_string(),
                round: c[1].parse().map_err(|_| bad())?,
                split: match c[2] {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    _ => return Err(bad()),
                },
                loss: c[3].parse().map_err(|_| bad())?,
                accuracy: c[4].parse().map_err(|_| bad())?,
                wall_seconds: 0.0,
            })
        })
        .collect()
}

/// Per-round curves for external plotting: a header and one line per round,
/// round 0 included.
pub fn emit_curves(path: impl AsRef<Path>, history: &[RoundReport]) -> Result<()> {
    fs::write(path, history_to_csv(history))?;
    Ok(())
}

/// Appends metrics as rounds complete, so a run that fails midway keeps the
/// rounds it finished.
struct RunWriter {
    run_id: String,
    dir: PathBuf,
    metrics: String,
    timing: Vec<(usize, f64)>,
    start: Instant,
    last_round: Option<usize>,
}

impl RunWriter {
    fn new(out_dir: &Path, run_id: &str) -> Result<Self> {
        let dir = out_dir.join("runs").join(run_id);
        fs::create_dir_all(&dir)?;
        let w = Self {
            run_id: run_id.to_string(),
            dir,
            metrics: format!("{METRICS_HEADER}\n"),
            timing: Vec::new(),
            start: Instant::now(),
            last_round: None,
        };
        w.flush()?;
        Ok(w)
    }

    fn push(&mut self, r: &RoundReport) -> Result<()> {
        if self.last_round.is_some_and(|last| r.round <= last) {
            return Err(Error::Usage(format!(
                "run {}: round {} recorded after round {:?}",
                self.run_id, r.round, self.last_round
            )));
        }
        self.last_round = Some(r.round);
        let wall = self.start.elapsed().as_secs_f64();
        for row in MetricsRow::pair(&self.run_id, r, wall) {
            self.metrics.push_str(&row.to_csv_line());
            self.metrics.push('\n');
        }
        self.timing.push((r.round, wall));
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        fs::write(self.dir.join("metrics.csv"), &self.metrics)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    /// Final-round test accuracy in `[0, 1]`.
    Completed { test_acc: f64 },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub run_id: String,
    pub status: RunStatus,
    pub timing: Vec<(usize, f64)>,
}

fn execute<F>(out_dir: &Path, run_id: &str, body: F) -> Result<RunOutcome>
where
    F: FnOnce(&mut dyn FnMut(&RoundReport) -> Result<()>) -> Result<Vec<RoundReport>>,
{
    let mut writer = RunWriter::new(out_dir, run_id)?;
    let result = body(&mut |r| writer.push(r));
    let status = match result {
        Ok(history) => {
            emit_curves(writer.dir.join("curves.csv"), &history)?;
            let last = history.last().ok_or_else(|| Error::Usage(format!("run {run_id} produced no rounds")))?;
            log::info!("{run_id}: test accuracy {:.4}", last.test_acc);
            RunStatus::Completed { test_acc: last.test_acc }
        }
        Err(e) => {
            log::warn!("{run_id} failed: {e}");
            RunStatus::Failed { error: e.to_string() }
        }
    };
    Ok(RunOutcome { run_id: run_id.to_string(), status, timing: writer.timing })
}

fn run_meta<L: Learner>(learner: &L, samples: &[L::Sample], run: &MetaRun, out_dir: &Path) -> Result<RunOutcome> {
    execute(out_dir, &run.id, |record| {
        let fed = build_federation(samples, &run.config)?;
        let state = initial_state(learner, &fed, &run.config)?;
        record(&state.history[0])?;
        let state = continue_3mf(learner, &fed, &run.config, state, |s| {
            s.last_report().map_or(Ok(()), &mut *record)
        })?;
        Ok(state.history)
    })
}

fn run_baseline<L: Learner>(learner: &L, samples: &[L::Sample], run: &BaselineRun, out_dir: &Path) -> Result<RunOutcome> {
    execute(out_dir, &run.id, |record| {
        let outcome = train_baseline_with(learner, samples, &run.config)?;
        for r in &outcome.history {
            record(r)?;
        }
        Ok(outcome.history)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridOptions {
    /// Worker threads; runs are independent, so any value gives the same files.
    pub jobs: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

/// Loads the data source and runs the grid on the three-branch network.
pub fn run_grid(grid: &ExperimentGrid, source: &DataSource, out_dir: impl AsRef<Path>) -> Result<Summary> {
    run_grid_opts(grid, source, out_dir, GridOptions::default())
}

pub fn run_grid_opts(
    grid: &ExperimentGrid,
    source: &DataSource,
    out_dir: impl AsRef<Path>,
    opts: GridOptions,
) -> Result<Summary> {
    let arch = grid.arch_spec()?;
    let dataset = source.load(&arch)?;
    let net = MultimodalNet::new(arch)?;
    run_grid_with(&net, &dataset.samples, grid, out_dir, opts)
}

/// Runs every grid entry with `learner`. Failing runs are recorded and the
/// rest continue; errors writing the output directory abort the grid.
pub fn run_grid_with<L: Learner>(
    learner: &L,
    samples: &[L::Sample],
    grid: &ExperimentGrid,
    out_dir: impl AsRef<Path>,
    opts: GridOptions,
) -> Result<Summary> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("runs"))?;

    enum Job<'a> {
        Meta(&'a MetaRun),
        Baseline(&'a BaselineRun),
    }
    let jobs: Vec<Job> = grid
        .runs
        .iter()
        .map(Job::Meta)
        .chain(grid.baselines.iter().map(Job::Baseline))
        .collect();
    let run_one = |job: &Job| match job {
        Job::Meta(r) => run_meta(learner, samples, r, out_dir),
        Job::Baseline(r) => run_baseline(learner, samples, r, out_dir),
    };

    let outcomes: Vec<RunOutcome> = if opts.jobs <= 1 {
        jobs.iter().map(run_one).collect::<Result<_>>()?
    } else {
        let slots: Vec<Mutex<Option<Result<RunOutcome>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..opts.jobs.min(jobs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(run_one(job));
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every job ran"))
            .collect::<Result<_>>()?
    };

    let mut timing = format!("{TIMING_HEADER}\n");
    for o in &outcomes {
        for (round, secs) in &o.timing {
            let _ = writeln!(timing, "{},{round},{secs:.6}", o.run_id);
        }
    }
    fs::write(out_dir.join("timing.csv"), timing)?;

    let summary = Summary::build(grid, &outcomes);
    fs::write(out_dir.join("summary.csv"), summary.to_csv())?;
    fs::write(out_dir.join("summary.txt"), summary.to_text())?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Accuracy(f64),
    Failed,
    Missing,
}

impl Cell {
    /// Percent with three decimals.
    pub fn render(&self) -> String {
        match self {
            Cell::Accuracy(a) => format!("{:.3}", 100.0 * a),
            Cell::Failed => "FAILED".into(),
            Cell::Missing => "-".into(),
        }
    }
}

/// A summary row: every setting except the scenario, which picks the column.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: &'static str,
    /// `(name, value)` pairs describing the setting, in display order.
    pub key: Vec<(&'static str, String)>,
    /// Run ids per scenario column.
    pub run_ids: Vec<Option<String>>,
    pub cells: Vec<Cell>,
    /// Client count for federated rows; rows are grouped by it.
    pub clients: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub scenarios: Vec<String>,
    pub rows: Vec<SummaryRow>,
    /// `(run id, error)` for every failed run, in grid order.
    pub failures: Vec<(String, String)>,
}

const META_KEYS: [&str; 8] = ["outer_lr", "inner_lr", "aggregation", "local_epochs", "rounds", "seed", "repetition", "clients"];
const BASELINE_KEYS: [&str; 4] = ["lr", "epochs", "seed", "repetition"];

impl Summary {
    pub fn build(grid: &ExperimentGrid, outcomes: &[RunOutcome]) -> Summary {
        let status_of = |id: &str| outcomes.iter().find(|o| o.run_id == id).map(|o| &o.status);
        let column = |s| grid.scenarios.iter().position(|x| *x == s).expect("run scenario is a grid column");
        let width = grid.scenarios.len();
        let mut rows: Vec<SummaryRow> = Vec::new();
        let mut place = |method: &'static str, key: Vec<(&'static str, String)>, clients, col: usize, id: &str| {
            let idx = match rows.iter().position(|r| r.method == method && r.key == key) {
                Some(i) => i,
                None => {
                    rows.push(SummaryRow {
                        method,
                        key,
                        run_ids: vec![None; width],
                        cells: vec![Cell::Missing; width],
                        clients,
                    });
                    rows.len() - 1
                }
            };
            rows[idx].run_ids[col] = Some(id.to_string());
            rows[idx].cells[col] = match status_of(id) {
                Some(RunStatus::Completed { test_acc }) => Cell::Accuracy(*test_acc),
                Some(RunStatus::Failed { .. }) => Cell::Failed,
                None => Cell::Missing,
            };
        };
        for r in &grid.runs {
            let c = &r.config;
            let key = META_KEYS
                .iter()
                .zip([
                    format_rate(c.outer_lr),
                    format_rate(c.inner_lr),
                    c.aggregation.to_string(),
                    c.local_epochs.to_string(),
                    c.rounds.to_string(),
                    r.base_seed.to_string(),
                    r.repetition.to_string(),
                    c.clients_total.to_string(),
                ])
                .map(|(k, v)| (*k, v))
                .collect();
            place("3mf", key, Some(c.clients_total), column(c.scenario), &r.id);
        }
        for b in &grid.baselines {
            let c = &b.config;
            let key = BASELINE_KEYS
                .iter()
                .zip([format_rate(c.lr), c.epochs.to_string(), b.base_seed.to_string(), b.repetition.to_string()])
                .map(|(k, v)| (*k, v))
                .collect();
            place("baseline", key, None, column(c.scenario), &b.id);
        }
        // Group federated rows by client count, keeping first-seen order otherwise.
        rows.sort_by_key(|r| (r.method != "3mf", r.clients));

        let failures = grid
            .runs
            .iter()
            .map(|r| &r.id)
            .chain(grid.baselines.iter().map(|b| &b.id))
            .filter_map(|id| match status_of(id) {
                Some(RunStatus::Failed { error }) => Some((id.clone(), error.clone())),
                _ => None,
            })
            .collect();
        Summary {
            scenarios: grid.scenarios.iter().map(|s| s.name().to_string()).collect(),
            rows,
            failures,
        }
    }

    /// The cell of the row whose settings include every `(name, value)` in `key`.
    pub fn cell(&self, method: &str, key: &[(&str, &str)], scenario: &str) -> Option<&Cell> {
        let col = self.scenarios.iter().position(|s| s == scenario)?;
        self.rows
            .iter()
            .find(|r| r.method == method && key.iter().all(|(k, v)| r.key.iter().any(|(rk, rv)| rk == k && rv == v)))
            .map(|r| &r.cells[col])
    }

    /// `method,clients,outer_lr,inner_lr,aggregation,local_epochs,rounds,seed,repetition,<scenarios...>`.
    /// Baseline rows put their learning rate under `outer_lr` and their
    /// epochs under `rounds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,clients,outer_lr,inner_lr,aggregation,local_epochs,rounds,seed,repetition");
        for sc in &self.scenarios {
            s.push(',');
            s.push_str(sc);
        }
        s.push('\n');
        for r in &self.rows {
            let get = |k: &str| r.key.iter().find(|(rk, _)| *rk == k).map_or("", |(_, v)| v.as_str());
            let fields = if r.method == "3mf" {
                [
                    get("clients"),
                    get("outer_lr"),
                    get("inner_lr"),
                    get("aggregation"),
                    get("local_epochs"),
                    get("rounds"),
                    get("seed"),
                    get("repetition"),
                ]
            } else {
                ["", get("lr"), "", "", "", get("epochs"), get("seed"), get("repetition")]
            };
            s.push_str(r.method);
            for f in fields {
                s.push(',');
                s.push_str(f);
            }
            for c in &r.cells {
                s.push(',');
                s.push_str(&c.render());
            }
            s.push('\n');
        }
        s
    }

    /// Aligned plain-text table: federated blocks per client count, then the
    /// baseline block, then any failures.
    pub fn to_text(&self) -> String {
        let mut blocks: Vec<(String, Vec<&SummaryRow>)> = Vec::new();
        for r in &self.rows {
            let title = match r.clients {
                Some(c) => format!("3MF, clients = {c}"),
                None => "Baseline (missing modalities in training, full modalities in test)".to_string(),
            };
            match blocks.last_mut() {
                Some((t, rows)) if *t == title => rows.push(r),
                _ => blocks.push((title, vec![r])),
            }
        }
        let mut out = String::new();
        for (title, rows) in &blocks {
            let heads: Vec<&str> = rows[0].key.iter().filter(|(k, _)| *k != "clients").map(|(k, _)| *k).collect();
            let mut table: Vec<Vec<String>> = vec![heads
                .iter()
                .map(|h| h.to_string())
                .chain(self.scenarios.iter().cloned())
                .collect()];
            for r in rows {
                table.push(
                    r.key
                        .iter()
                        .filter(|(k, _)| *k != "clients")
                        .map(|(_, v)| v.clone())
                        .chain(r.cells.iter().map(Cell::render))
                        .collect(),
                );
            }
            let widths: Vec<usize> = (0..table[0].len())
                .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
                .collect();
            let _ = writeln!(out, "{title}");
            for (i, row) in table.iter().enumerate() {
                let line: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(c, (v, w))| if c < heads.len() { format!("{v:<w$}") } else { format!("{v:>w$}") })
                    .collect();
                let _ = writeln!(out, "{}", line.join("  ").trim_end());
                if i == 0 {
                    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                }
            }
            out.push('\n');
        }
        out.push_str("Accuracy: final-round test accuracy in percent.\n");
        if !self.failures.is_empty() {
            out.push_str("\nFailed runs:\n");
            for (id, e) in &self.failures {
                let _ = writeln!(out, "  {id}: {e}");
            }
        }
        out
    }
}
