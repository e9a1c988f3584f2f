//! Parameter grid over a WAV corpus with a resumable JSON-lines checkpoint.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::Args;
use phaseflow::{
    run_offline, spectral_convergence, stream_reconstruct, Algorithm, AlgorithmSpec, MagnitudeSpectrogram, Stft,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    build_algorithm, external_score, input_err, load_signal, output_err, save_signal, AlgoName, CliError, CliResult,
    Mode, ParamValues, Preset, StftArgs,
};

pub const CSV_HEADER: [&str; 8] = ["file", "algorithm", "params", "B", "iterations", "SC", "external_score", "wall_time_ms"];
pub const MEAN_LABEL: &str = "MEAN";

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Directory of mono WAV files
    pub corpus: PathBuf,
    /// Final CSV path
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "raar")]
    pub algo: Vec<AlgoName>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alpha1: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alpha2: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta: Vec<f64>,
    /// Values for parameters not given on the command line
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(short = 'B', long = "lookahead", value_delimiter = ',', default_value = "0")]
    pub lookahead: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub iters: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Online)]
    pub mode: Mode,
    #[command(flatten)]
    pub stft: StftArgs,
    /// Worker threads; PHASEFLOW_THREADS or the logical CPU count otherwise
    #[arg(long)]
    pub threads: Option<usize>,
    /// Checkpoint path; `<out>.ckpt` by default
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from an existing checkpoint
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many grid points, keeping the checkpoint
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Leave wall_time_ms empty so reruns produce identical files
    #[arg(long)]
    pub omit_timing: bool,
    #[arg(long)]
    pub external_scorer: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub algorithm: Algorithm<f64>,
    /// `None` in offline mode.
    pub lookahead: Option<usize>,
    pub iterations: usize,
}

impl GridPoint {
    fn key(&self) -> String {
        let b = self.lookahead.map(|b| b.to_string()).unwrap_or_default();
        format!("{}|{}|{}|{}", self.algorithm.name(), self.algorithm.params_text(), b, self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub file: String,
    pub algorithm: String,
    pub params: String,
    pub lookahead: Option<usize>,
    pub iterations: usize,
    pub sc: f64,
    pub external: Option<f64>,
    pub wall_ms: f64,
}

impl Row {
    fn record(&self, omit_timing: bool) -> [String; 8] {
        let opt = |v: Option<String>| v.unwrap_or_default();
        [
            self.file.clone(),
            self.algorithm.clone(),
            self.params.clone(),
            opt(self.lookahead.map(|b| b.to_string())),
            self.iterations.to_string(),
            self.sc.to_string(),
            opt(self.external.map(|v| v.to_string())),
            if omit_timing { String::new() } else { self.wall_ms.to_string() },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    grid: Vec<String>,
    files: Vec<String>,
    frame_ms: f64,
    hop_ms: f64,
    scorer: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    point: usize,
    rows: Vec<Row>,
}

struct CorpusFile {
    name: String,
    path: PathBuf,
    rate: u32,
    stft: Stft<f64>,
    mag: MagnitudeSpectrogram<f64>,
}

/// Expands the grid in algorithm, B, parameter-product, iteration order.
pub fn expand_grid(args: &SweepArgs) -> CliResult<Vec<GridPoint>> {
    let lists: [(&str, &Vec<f64>); 5] = [
        ("alpha", &args.alpha),
        ("alpha1", &args.alpha1),
        ("alpha2", &args.alpha2),
        ("gamma", &args.gamma),
        ("beta", &args.beta),
    ];
    for (name, values) in &lists {
        if !values.is_empty() && !args.algo.iter().any(|a| a.params().contains(name)) {
            return Err(CliError::Usage(format!("--{name} does not apply to any selected algorithm")));
        }
    }
    let lookaheads: Vec<Option<usize>> = match args.mode {
        Mode::Online => args.lookahead.iter().map(|&b| Some(b)).collect(),
        Mode::Offline if args.lookahead.iter().all(|&b| b == 0) => vec![None],
        Mode::Offline => return Err(CliError::Usage("-B/--lookahead applies to --mode online only".into())),
    };
    let mut grid = Vec::new();
    for &algo in &args.algo {
        let axes: Vec<(&str, Vec<Option<f64>>)> = algo
            .params()
            .iter()
            .map(|&p| {
                let given = lists.iter().find(|(n, _)| *n == p).map(|(_, v)| *v).expect("known parameter");
                let values = if given.is_empty() { vec![None] } else { given.iter().map(|&v| Some(v)).collect() };
                (p, values)
            })
            .collect();
        let mut combos = vec![ParamValues::default()];
        for (name, values) in &axes {
            combos = combos
                .iter()
                .flat_map(|c| {
                    values.iter().map(move |&v| {
                        let mut c = *c;
                        match *name {
                            "alpha" => c.alpha = v,
                            "alpha1" => c.alpha1 = v,
                            "alpha2" => c.alpha2 = v,
                            "gamma" => c.gamma = v,
                            _ => c.beta = v,
                        }
                        c
                    })
                })
                .collect();
        }
        for &b in &lookaheads {
            for params in &combos {
                let algorithm = build_algorithm(algo, args.preset, b.unwrap_or(0) > 0, params)?;
                for &iterations in &args.iters {
                    grid.push(GridPoint { algorithm, lookahead: b, iterations });
                }
            }
        }
    }
    Ok(grid)
}

fn load_corpus(args: &SweepArgs) -> CliResult<Vec<CorpusFile>> {
    let entries = fs::read_dir(&args.corpus)
        .map_err(|e| CliError::Usage(format!("cannot read corpus {}: {e}", args.corpus.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .wav files in {}", args.corpus.display())));
    }
    paths
        .into_iter()
        .map(|path| {
            let (x, rate) = load_signal(&path)?;
            let stft = Stft::new(args.stft.config(rate)?);
            let mag = stft.stft(&x).map_err(input_err)?.magnitude();
            if mag.frobenius_norm() == 0.0 {
                return Err(CliError::Usage(format!("{} is silent", path.display())));
            }
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(CorpusFile { name, path, rate, stft, mag })
        })
        .collect()
}

fn thread_count(args: &SweepArgs) -> CliResult<usize> {
    if let Some(n) = args.threads {
        return if n == 0 { Err(CliError::Usage("--threads must be at least 1".into())) } else { Ok(n) };
    }
    match std::env::var("PHASEFLOW_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("PHASEFLOW_THREADS={v:?} is not a positive integer"))),
        },
        // rayon picks the logical CPU count
        Err(_) => Ok(0),
    }
}

fn run_point(point: &GridPoint, file: &CorpusFile, scorer: Option<&Path>) -> CliResult<Row> {
    let spec = AlgorithmSpec::new(point.algorithm, point.iterations).map_err(input_err)?;
    let start = Instant::now();
    let y = match point.lookahead {
        None => run_offline(&file.mag, &file.stft, &spec, None).map_err(output_err)?.signal,
        Some(b) => stream_reconstruct(&file.mag, &spec, &file.stft, b).map_err(output_err)?,
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    let recon = file.stft.analyze(&y, file.mag.frames());
    let sc = spectral_convergence(&file.mag, &recon).map_err(output_err)?;
    let external = match scorer {
        Some(exe) => {
            let dir = tempfile::tempdir().map_err(output_err)?;
            let est = dir.path().join("estimate.wav");
            save_signal(&est, &y, file.rate)?;
            Some(external_score(exe, &file.path, &est)?)
        }
        None => None,
    };
    Ok(Row {
        file: file.name.clone(),
        algorithm: point.algorithm.name().to_string(),
        params: point.algorithm.params_text(),
        lookahead: point.lookahead,
        iterations: point.iterations,
        sc,
        external,
        wall_ms,
    })
}

fn mean_row(rows: &[Row]) -> Row {
    let n = rows.len() as f64;
    let first = &rows[0];
    let external = rows.iter().map(|r| r.external).sum::<Option<f64>>().map(|s| s / n);
    Row {
        file: MEAN_LABEL.to_string(),
        sc: rows.iter().map(|r| r.sc).sum::<f64>() / n,
        external,
        wall_ms: rows.iter().map(|r| r.wall_ms).sum::<f64>() / n,
        ..first.clone()
    }
}

/// Completed points from an existing checkpoint. A torn final line is dropped.
fn read_checkpoint(path: &Path, header: &CheckpointHeader) -> CliResult<BTreeMap<usize, Vec<Row>>> {
    let file = File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let stored: Option<CheckpointHeader> = first.and_then(|l| serde_json::from_str(&l).ok());
    if stored.as_ref() != Some(header) {
        return Err(CliError::Usage(format!(
            "checkpoint {} belongs to a different sweep; remove it or run without --resume",
            path.display()
        )));
    }
    let mut done = BTreeMap::new();
    for line in lines.map_while(|l| l.ok()) {
        match serde_json::from_str::<Record>(&line) {
            Ok(r) if r.point < header.grid.len() => {
                done.insert(r.point, r.rows);
            }
            _ => break,
        }
    }
    Ok(done)
}

fn write_checkpoint(path: &Path, header: &CheckpointHeader, done: &BTreeMap<usize, Vec<Row>>) -> CliResult<File> {
    let mut text = serde_json::to_string(header).map_err(output_err)? + "\n";
    for (&point, rows) in done {
        text += &(serde_json::to_string(&Record { point, rows: rows.clone() }).map_err(output_err)? + "\n");
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))
}

fn write_csv(path: &Path, grid_len: usize, done: &BTreeMap<usize, Vec<Row>>, omit_timing: bool) -> CliResult<()> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(CSV_HEADER).map_err(output_err)?;
    for point in 0..grid_len {
        let rows = &done[&point];
        for row in rows.iter().chain(std::iter::once(&mean_row(rows))) {
            csv.write_record(row.record(omit_timing)).map_err(output_err)?;
        }
    }
    let bytes = csv.into_inner().map_err(output_err)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    tmp.write_all(&bytes).map_err(output_err)?;
    tmp.persist(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn run(args: &SweepArgs) -> CliResult<()> {
    let grid = expand_grid(args)?;
    if grid.is_empty() {
        return Err(CliError::Usage("the grid is empty".into()));
    }
    let threads = thread_count(args)?;
    let corpus = load_corpus(args)?;
    let header = CheckpointHeader {
        grid: grid.iter().map(GridPoint::key).collect(),
        files: corpus.iter().map(|f| f.name.clone()).collect(),
        frame_ms: args.stft.frame_ms,
        hop_ms: args.stft.hop_ms,
        scorer: args.external_scorer.as_ref().map(|p| p.display().to_string()),
    };
    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".ckpt");
        PathBuf::from(p)
    });
    let done = if args.resume && ckpt_path.exists() {
        read_checkpoint(&ckpt_path, &header)?
    } else {
        BTreeMap::new()
    };
    let ckpt = Mutex::new(write_checkpoint(&ckpt_path, &header, &done)?);
    let pending: Vec<usize> = (0..grid.len()).filter(|i| !done.contains_key(i)).collect();
    let done = Mutex::new(done);
    let claimed = AtomicUsize::new(0);
    let scorer = args.external_scorer.as_deref();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(output_err)?;
    pool.install(|| {
        pending.par_iter().try_for_each(|&idx| -> CliResult<()> {
            if args.stop_after.is_some_and(|n| claimed.fetch_add(1, Ordering::SeqCst) >= n) {
                return Ok(());
            }
            let rows = corpus
                .par_iter()
                .map(|f| run_point(&grid[idx], f, scorer))
                .collect::<CliResult<Vec<Row>>>()?;
            let line = serde_json::to_string(&Record { point: idx, rows: rows.clone() }).map_err(output_err)?;
            {
                let mut f = ckpt.lock().expect("checkpoint lock");
                writeln!(f, "{line}").and_then(|_| f.flush()).map_err(output_err)?;
            }
            done.lock().expect("results lock").insert(idx, rows);
            Ok(())
        })
    })?;
    drop(ckpt);

    let done = done.into_inner().expect("results lock");
    if done.len() < grid.len() {
        eprintln!(
            "stopped with {} of {} grid points done; rerun with --resume to continue",
            done.len(),
            grid.len()
        );
        return Ok(());
    }
    write_csv(&args.out, grid.len(), &done, args.omit_timing)?;
    fs::remove_file(&ckpt_path).map_err(|e| CliError::Runtime(format!("cannot remove {}: {e}", ckpt_path.display())))
}
