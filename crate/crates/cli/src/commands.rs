//! Subcommand implementations. Each returns the paths it wrote so tests can
//! drive the commands directly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use parkas::bench::{measure_all, Algorithm, Measurement};
use parkas::kernel::FlopLedger;
use parkas::pkf::{parallel_filter, parallel_loglik};
use parkas::prts::parallel_smoother;
use parkas::sequential::{kalman_filter, rts_smoother, GaussianMoment};
use parkas::ssm::{simulate, tracking_benchmark_model, Lgssm};

use crate::csvio::{parse_field, read_csv, write_csv};
use crate::data::{self, DataFile};
use crate::svg::{render_loglog, Series};

/// Resolves a model source (`tracking` or a JSON file path) at `n` steps.
/// Stationary file models are re-broadcast to the requested length.
pub fn resolve_model(src: &str, n: usize) -> Result<Lgssm> {
    if n < 1 {
        bail!("step count must be at least 1, got {n}");
    }
    if src == "tracking" {
        return Ok(tracking_benchmark_model(n)?);
    }
    let text = fs::read_to_string(src).with_context(|| format!("reading model file {src}"))?;
    let mut model: Lgssm = serde_json::from_str(&text).with_context(|| format!("parsing model file {src}"))?;
    if model.n() != n {
        let stationary = model.f.is_stationary()
            && model.u.is_stationary()
            && model.q.is_stationary()
            && model.h.is_stationary()
            && model.d.is_stationary()
            && model.r.is_stationary();
        if !stationary {
            bail!(
                "model in {src} is time-varying with {} steps; cannot re-broadcast to {n}",
                model.n()
            );
        }
        model.steps = n;
    }
    model.validate()?;
    Ok(model)
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

/// `simulate`: draws a trajectory per requested length and writes one data
/// file each.
pub fn cmd_simulate(model_src: &str, ns: &[usize], seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if ns.is_empty() {
        bail!("simulate needs at least one --n value");
    }
    ensure_out_dir(out)?;
    let mut written = Vec::new();
    for &n in ns {
        let model = resolve_model(model_src, n)?;
        let sim = simulate(&model, seed)?;
        let path = out.join(format!("data_n{n}_seed{seed}.json"));
        data::save(&path, &DataFile::new(model, sim))?;
        written.push(path);
    }
    Ok(written)
}

fn moment_row(k: usize, m: &GaussianMoment, loglik_prefix: Option<f64>) -> Vec<String> {
    let nx = m.mean.dim();
    let mut row = Vec::with_capacity(2 + nx + nx * nx);
    row.push(k.to_string());
    for i in 0..nx {
        row.push(format!("{}", m.mean.get(i)));
    }
    for i in 0..nx {
        for j in 0..nx {
            row.push(format!("{}", m.cov.get(i, j)));
        }
    }
    if let Some(l) = loglik_prefix {
        row.push(format!("{l}"));
    }
    row
}

fn moment_header(nx: usize, with_loglik: bool) -> Vec<String> {
    let mut header = vec!["k".to_string()];
    for i in 0..nx {
        header.push(format!("mean_{i}"));
    }
    for i in 0..nx {
        for j in 0..nx {
            header.push(format!("cov_{i}_{j}"));
        }
    }
    if with_loglik {
        header.push("loglik_prefix".to_string());
    }
    header
}

/// `run`: executes one algorithm on a data file and writes per-step moments
/// (plus log-likelihood prefixes for the filters) as CSV.
pub fn cmd_run(algorithm: Algorithm, data_path: &Path, block_len: usize, out: &Path) -> Result<PathBuf> {
    let data = data::load(data_path)?;
    let model = &data.model;
    let nx = model.state_dim();
    ensure_out_dir(out)?;
    let mut ledger = FlopLedger::new();

    let (rows, with_loglik) = match algorithm {
        Algorithm::Kf => {
            let run = kalman_filter(model, &data.measurements, &mut ledger)?;
            let prefixes = run.prefix_loglik();
            let rows: Vec<Vec<String>> = run
                .filtered
                .iter()
                .zip(&prefixes)
                .enumerate()
                .map(|(i, (m, &l))| moment_row(i + 1, m, Some(l)))
                .collect();
            (rows, true)
        }
        Algorithm::Pkf => {
            let (filtered, _) = parallel_filter(model, &data.measurements, block_len, &mut ledger)?;
            let loglik = parallel_loglik(model, &filtered, &data.measurements, &mut ledger)?;
            let rows: Vec<Vec<String>> = filtered
                .iter()
                .zip(&loglik.prefix_loglik)
                .enumerate()
                .map(|(i, (m, &l))| moment_row(i + 1, m, Some(l)))
                .collect();
            (rows, true)
        }
        Algorithm::Rts => {
            let run = kalman_filter(model, &data.measurements, &mut ledger)?;
            let smoothed = rts_smoother(model, &run, &mut ledger)?;
            let rows: Vec<Vec<String>> = smoothed
                .iter()
                .enumerate()
                .map(|(i, m)| moment_row(i + 1, m, None))
                .collect();
            (rows, false)
        }
        Algorithm::Prts => {
            let (filtered, _) = parallel_filter(model, &data.measurements, block_len, &mut ledger)?;
            let (smoothed, _) = parallel_smoother(model, &filtered, block_len, &mut ledger)?;
            let rows: Vec<Vec<String>> = smoothed
                .iter()
                .enumerate()
                .map(|(i, m)| moment_row(i + 1, m, None))
                .collect();
            (rows, false)
        }
    };

    let header = moment_header(nx, with_loglik);
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let path = out.join(format!("results_{}.csv", algorithm.as_str()));
    write_csv(&path, &header_refs, &rows)?;
    Ok(path)
}

pub const BENCH_HEADER: [&str; 7] = [
    "n",
    "algorithm",
    "work_flops",
    "span_flops",
    "wall_time_ns",
    "block_l",
    "seed",
];

/// `bench`: sweeps step counts (and optionally seeds and block lengths),
/// measuring span/work flops of all four algorithms per configuration.
pub fn cmd_bench(
    model_src: &str,
    ns: &[usize],
    seeds: &[u64],
    blocks: &[usize],
    out: &Path,
) -> Result<PathBuf> {
    if ns.is_empty() || seeds.is_empty() || blocks.is_empty() {
        bail!("bench needs at least one value each for --n, --seed and --block");
    }
    ensure_out_dir(out)?;
    let mut rows = Vec::new();
    for &n in ns {
        let model = resolve_model(model_src, n)?;
        for &seed in seeds {
            let sim = simulate(&model, seed)?;
            for &block_len in blocks {
                for m in measure_all(&model, &sim.measurements, block_len, seed)? {
                    rows.push(vec![
                        m.n.to_string(),
                        m.algorithm.as_str().to_string(),
                        m.work_flops.to_string(),
                        m.span_flops.to_string(),
                        m.wall_time_ns.to_string(),
                        m.block_len.to_string(),
                        m.seed.to_string(),
                    ]);
                }
            }
        }
    }
    let path = out.join("bench.csv");
    write_csv(&path, &BENCH_HEADER, &rows)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmSummary {
    /// Smallest swept n where the parallel span drops below the sequential
    /// counterpart's work; absent if it never does.
    pub crossover_span_n: Option<usize>,
    /// Parallel/sequential work ratio at the largest swept n.
    pub work_ratio_at_max_n: Option<f64>,
    /// Mean work ratio over swept n >= 256.
    pub mean_work_ratio_n_ge_256: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub swept_n: Vec<usize>,
    pub filter: AlgorithmSummary,
    pub smoother: AlgorithmSummary,
}

fn parse_bench(path: &Path) -> Result<Vec<Measurement>> {
    let table = read_csv(path)?;
    if table.header != BENCH_HEADER {
        bail!(
            "{}: line 1: unexpected header '{}'; expected '{}'",
            path.display(),
            table.header.join(","),
            BENCH_HEADER.join(",")
        );
    }
    let mut out = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 2;
        let algorithm = Algorithm::parse(&row[1]).with_context(|| {
            format!("{}: line {line}: unknown algorithm '{}'", path.display(), row[1])
        })?;
        out.push(Measurement {
            n: parse_field(path, line, "n", &row[0])?,
            algorithm,
            work_flops: parse_field(path, line, "work_flops", &row[2])?,
            span_flops: parse_field(path, line, "span_flops", &row[3])?,
            wall_time_ns: parse_field::<u128>(path, line, "wall_time_ns", &row[4])?,
            block_len: parse_field(path, line, "block_l", &row[5])?,
            seed: parse_field(path, line, "seed", &row[6])?,
        });
    }
    if out.is_empty() {
        bail!("{}: no measurement rows", path.display());
    }
    Ok(out)
}

fn summarize(
    flops: &BTreeMap<(Algorithm, usize), (u64, u64)>,
    ns: &[usize],
    seq: Algorithm,
    par: Algorithm,
) -> AlgorithmSummary {
    let mut crossover = None;
    let mut ratios = Vec::new();
    let mut ratio_at_max = None;
    for &n in ns {
        if let (Some(&(seq_work, _)), Some(&(par_work, par_span))) =
            (flops.get(&(seq, n)), flops.get(&(par, n)))
        {
            if crossover.is_none() && par_span < seq_work {
                crossover = Some(n);
            }
            let ratio = par_work as f64 / seq_work as f64;
            if n >= 256 {
                ratios.push(ratio);
            }
            ratio_at_max = Some(ratio);
        }
    }
    AlgorithmSummary {
        crossover_span_n: crossover,
        work_ratio_at_max_n: ratio_at_max,
        mean_work_ratio_n_ge_256: if ratios.is_empty() {
            None
        } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        },
    }
}

/// `report`: renders span/work plots and a ratio plot from a bench CSV and
/// writes a machine-readable summary with crossover points and asymptotic
/// work ratios.
pub fn cmd_report(bench_csv: &Path, out: &Path) -> Result<(ReportSummary, Vec<PathBuf>)> {
    let measurements = parse_bench(bench_csv)?;
    ensure_out_dir(out)?;

    // Parallel flop counts depend on the block length; report on the
    // smallest one swept. Flop columns do not depend on the seed.
    let min_block = measurements.iter().map(|m| m.block_len).min().expect("nonempty");
    let mut flops: BTreeMap<(Algorithm, usize), (u64, u64)> = BTreeMap::new();
    for m in measurements.iter().filter(|m| m.block_len == min_block) {
        flops.entry((m.algorithm, m.n)).or_insert((m.work_flops, m.span_flops));
    }
    let mut ns: Vec<usize> = flops.keys().map(|&(_, n)| n).collect();
    ns.sort_unstable();
    ns.dedup();

    let series_for = |alg: Algorithm, which: fn(&(u64, u64)) -> u64| -> Vec<(f64, f64)> {
        ns.iter()
            .filter_map(|&n| flops.get(&(alg, n)).map(|ws| (n as f64, which(ws) as f64)))
            .filter(|&(_, v)| v > 0.0)
            .collect()
    };

    let mut written = Vec::new();

    let filter_series = vec![
        Series {
            label: "KF work = span".into(),
            color: "#1f77b4",
            dashed: false,
            points: series_for(Algorithm::Kf, |w| w.0),
        },
        Series {
            label: "PKF work".into(),
            color: "#d62728",
            dashed: false,
            points: series_for(Algorithm::Pkf, |w| w.0),
        },
        Series {
            label: "PKF span".into(),
            color: "#d62728",
            dashed: true,
            points: series_for(Algorithm::Pkf, |w| w.1),
        },
    ];
    let path = out.join("kf_flops.svg");
    fs::write(&path, render_loglog("Filtering flops", "time steps n", "flops", &filter_series))?;
    written.push(path);

    let smoother_series = vec![
        Series {
            label: "RTS work = span".into(),
            color: "#1f77b4",
            dashed: false,
            points: series_for(Algorithm::Rts, |w| w.0),
        },
        Series {
            label: "PRTS work".into(),
            color: "#d62728",
            dashed: false,
            points: series_for(Algorithm::Prts, |w| w.0),
        },
        Series {
            label: "PRTS span".into(),
            color: "#d62728",
            dashed: true,
            points: series_for(Algorithm::Prts, |w| w.1),
        },
    ];
    let path = out.join("rts_flops.svg");
    fs::write(&path, render_loglog("Smoothing flops", "time steps n", "flops", &smoother_series))?;
    written.push(path);

    let ratio_points = |seq: Algorithm, par: Algorithm| -> Vec<(f64, f64)> {
        ns.iter()
            .filter_map(|&n| {
                let s = flops.get(&(seq, n))?;
                let p = flops.get(&(par, n))?;
                Some((n as f64, p.0 as f64 / s.0 as f64))
            })
            .collect()
    };
    let ratio_series = vec![
        Series {
            label: "work(PKF) / work(KF)".into(),
            color: "#2ca02c",
            dashed: false,
            points: ratio_points(Algorithm::Kf, Algorithm::Pkf),
        },
        Series {
            label: "work(PRTS) / work(RTS)".into(),
            color: "#9467bd",
            dashed: false,
            points: ratio_points(Algorithm::Rts, Algorithm::Prts),
        },
    ];
    let path = out.join("work_ratio.svg");
    fs::write(&path, render_loglog("Parallel / sequential work", "time steps n", "work ratio", &ratio_series))?;
    written.push(path);

    let summary = ReportSummary {
        swept_n: ns.clone(),
        filter: summarize(&flops, &ns, Algorithm::Kf, Algorithm::Pkf),
        smoother: summarize(&flops, &ns, Algorithm::Rts, Algorithm::Prts),
    };
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    written.push(path);

    Ok((summary, written))
}

/// `verify`: runs the full acceptance suite, printing one line per
/// criterion; returns whether everything passed.
pub fn cmd_verify() -> bool {
    let outcomes = parkas::acceptance::run_all();
    let mut ok = true;
    for o in &outcomes {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {:>2} ({}): {}", o.id, o.name, o.detail);
        ok &= o.pass;
    }
    ok
}
