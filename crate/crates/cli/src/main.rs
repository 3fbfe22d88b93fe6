//! `shapegeo` command-line tool.
//!
//! Exit codes: 0 success, 1 invalid input or a failed check, 2 numerical
//! breakdown, 3 I/O or parse error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shapegeo::geodesic::{
    horizontal_lift, horizontality_residual, match_bvp, sample_velocities, shoot_momentum, shoot_velocity, RawPath,
};
use shapegeo::invariants::{area_swept, conserved_quantities, distance_bound_check, path_length, BoundCondition};
use shapegeo::io::{self, cell, config_hash, CsvTable};
use shapegeo::metrics::{adjoint_identity, AdjointOperator};
use shapegeo::operators::laplacian_spectrum;
use shapegeo::samples::Sampler;
use shapegeo::variations::{fd_order_check, Quantity};
use shapegeo::{Ambient, Error, Vec3};

const DEFAULT_SEED: u64 = 7;

#[derive(Parser, Debug)]
#[command(name = "shapegeo", version, about = "Geodesics of weighted Sobolev metrics on immersed closed curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Form {
    Momentum,
    Velocity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AmbientArg {
    Plane,
    Sphere,
}

impl AmbientArg {
    fn ambient(self) -> Ambient {
        match self {
            AmbientArg::Plane => Ambient::plane(),
            AmbientArg::Sphere => Ambient::unit_sphere(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the geodesic equation from an initial curve and velocity.
    Shoot {
        #[arg(long)]
        metric: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        /// Initial velocity field; zero if omitted.
        #[arg(long)]
        velocity: Option<PathBuf>,
        #[arg(long = "T")]
        t_final: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value = "momentum")]
        form: Form,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimize the path energy between two curves (flat ambient).
    Match {
        #[arg(long)]
        metric: PathBuf,
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        to: PathBuf,
        /// Number of time nodes including both ends.
        #[arg(long, default_value_t = 32)]
        nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Horizontal lift of a path by time-dependent reparametrization.
    Lift {
        #[arg(long)]
        metric: PathBuf,
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the first variations.
    CheckVariations {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "N", default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, value_enum, default_value = "plane")]
        ambient: AmbientArg,
        /// Relative tolerance; 1e-4 flat, 1e-3 on the sphere by default.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjoint identities for Δ, Δ² and the curvature-weighted operator.
    CheckAdjoints {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "N", default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        triples: usize,
        #[arg(long, value_enum, default_value = "plane")]
        ambient: AmbientArg,
        #[arg(long = "A", default_value_t = 0.1)]
        a: f64,
        #[arg(long, default_value_t = 2e-3)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Momenta and energy along a path as a CSV time series.
    CheckInvariants {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        metric: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inequalities behind the geodesic distance bound.
    DistanceBounds {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        metric: PathBuf,
        #[arg(long, default_value_t = 2)]
        condition: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigenvalues of the Laplacian along a curve.
    Spectrum {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Curve snapshots of a path as long-format CSV.
    ExportPlotData {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Result of a command that ran to completion.
enum Outcome {
    Ok,
    ChecksFailed(String),
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Parse(_) => 3,
        e if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Hash of the command line and the bytes of every input file.
fn hash_inputs(files: &[&Path]) -> Result<String, Error> {
    let mut bytes: Vec<u8> = std::env::args().skip(1).collect::<Vec<_>>().join("\u{1f}").into_bytes();
    for f in files {
        bytes.extend(std::fs::read(f)?);
    }
    Ok(config_hash(&bytes))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn threads() -> usize {
    std::env::var("SHAPEGEO_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Order-preserving parallel map over at most `threads()` workers.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = threads().min(items.len()).max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// T and steps from the flags, falling back to an `integrator` block in the
/// metric config; dt·steps must equal T when all three are given.
fn integrator(metric_file: &Path, t_flag: Option<f64>, steps_flag: Option<usize>) -> Result<(f64, usize), Error> {
    let text = std::fs::read_to_string(metric_file)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let block = value.get("integrator");
    let get = |k: &str| block.and_then(|b| b.get(k)).and_then(|v| v.as_f64());
    let t_final = t_flag.or_else(|| get("T")).unwrap_or(1.0);
    let steps = steps_flag.or_else(|| get("steps").map(|s| s as usize)).unwrap_or(1000);
    if let Some(dt) = get("dt") {
        if (dt * steps as f64 - t_final).abs() > 1e-9 * t_final.abs().max(1.0) {
            return Err(Error::Domain(format!("dt = {dt} times steps = {steps} does not equal T = {t_final}")));
        }
    }
    Ok((t_final, steps))
}

fn run(cmd: Command) -> Result<Outcome, Error> {
    match cmd {
        Command::Shoot {
            metric,
            curve,
            velocity,
            t_final,
            steps,
            form,
            out,
        } => {
            let spec = io::read_metric(&metric)?;
            let (t_final, steps) = integrator(&metric, t_final, steps)?;
            let f0 = io::read_curve(&curve)?;
            let u0 = match &velocity {
                Some(p) => io::read_field(p, &f0)?,
                None => vec![Vec3::zeros(); f0.len()],
            };
            let mut inputs = vec![metric.as_path(), curve.as_path()];
            if let Some(v) = &velocity {
                inputs.push(v);
            }
            let hash = hash_inputs(&inputs)?;
            let path = match form {
                Form::Momentum => shoot_momentum(&spec, &f0, &u0, t_final, steps)?,
                Form::Velocity => shoot_velocity(&spec, &f0, &u0, t_final, steps)?,
            };
            io::write_path(&out, &path, &hash)?;
            if let Some(w) = &path.warning {
                eprintln!("warning: {w}");
            }
            Ok(Outcome::Ok)
        }
        Command::Match {
            metric,
            from,
            to,
            nodes,
            out,
        } => {
            let spec = io::read_metric(&metric)?;
            let f0 = io::read_curve(&from)?;
            let f1 = io::read_curve(&to)?;
            let hash = hash_inputs(&[&metric, &from, &to])?;
            let path = match_bvp(&spec, &f0, &f1, nodes)?;
            io::write_path(&out, &path, &hash)?;
            if let Some(w) = &path.warning {
                eprintln!("warning: {w}");
            }
            Ok(Outcome::Ok)
        }
        Command::Lift { metric, path, out } => {
            let spec = io::read_metric(&metric)?;
            let raw = io::read_path(&path)?;
            let before = horizontality_residual(&spec, &raw.curves, &sample_velocities(&raw)?)?;
            let lifted = horizontal_lift(&spec, &raw)?;
            let after = horizontality_residual(&spec, &lifted.curves, &lifted.velocities)?;
            io::write_raw_path(
                &out,
                &RawPath {
                    times: lifted.times,
                    curves: lifted.curves,
                    velocities: Some(lifted.velocities),
                },
            )?;
            eprintln!("horizontality residual: {before:e} -> {after:e}");
            Ok(Outcome::Ok)
        }
        Command::CheckVariations {
            seed,
            n,
            eps,
            ambient,
            tol,
            out,
        } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            eprintln!("seed = {seed}");
            let amb = ambient.ambient();
            let tol = tol.unwrap_or(if amb.is_flat() { 1e-4 } else { 1e-3 });
            let mut s = Sampler::new(seed);
            let f = s.immersion(amb, n)?;
            let ft = s.field(&f);
            let h = s.field(&f);
            let quantities = [
                Quantity::Metric,
                Quantity::InverseMetric,
                Quantity::VolumeDensity,
                Quantity::Volume,
                Quantity::MeanCurvature,
                Quantity::Laplacian(h),
            ];
            let reports = par_map(&quantities, |q| fd_order_check(q, &f, &ft, eps));
            let mut table = CsvTable::new(&["quantity", "N", "eps", "rel_error", "order_estimate", "rounding_limited"]);
            let mut failed = Vec::new();
            for r in reports {
                let r = r?;
                if !r.passes(tol, 1.9) {
                    failed.push(r.quantity.clone());
                }
                table.push(vec![
                    r.quantity.clone(),
                    r.n.to_string(),
                    cell(r.eps),
                    cell(r.rel_error),
                    cell(r.order_estimate),
                    r.rounding_limited.to_string(),
                ]);
            }
            emit(out.as_deref(), &table.render(&hash_inputs(&[])?))?;
            Ok(if failed.is_empty() {
                Outcome::Ok
            } else {
                Outcome::ChecksFailed(format!("variations outside tolerance: {}", failed.join(", ")))
            })
        }
        Command::CheckAdjoints {
            seed,
            n,
            triples,
            ambient,
            a,
            tol,
            out,
        } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            eprintln!("seed = {seed}");
            let amb = ambient.ambient();
            let mut s = Sampler::new(seed);
            let f = s.immersion(amb, n)?;
            let samples: Vec<[Vec<Vec3>; 3]> = (0..triples).map(|_| [s.field(&f), s.field(&f), s.field(&f)]).collect();
            let ops = [
                ("laplacian", AdjointOperator::LaplacianPower(1)),
                ("laplacian^2", AdjointOperator::LaplacianPower(2)),
                ("curvature_weighted", AdjointOperator::CurvatureWeighted(a)),
            ];
            let jobs: Vec<(usize, usize)> = (0..ops.len()).flat_map(|o| (0..triples).map(move |t| (o, t))).collect();
            let results = par_map(&jobs, |&(o, t)| {
                let [h, k, m] = &samples[t];
                adjoint_identity(ops[o].1, &f, h, k, m)
            });
            let mut table = CsvTable::new(&["operator", "triple", "lhs", "rhs", "discrepancy"]);
            let mut worst = 0.0_f64;
            for (&(o, t), r) in jobs.iter().zip(results) {
                let r = r?;
                worst = worst.max(r.discrepancy);
                table.push(vec![ops[o].0.into(), t.to_string(), cell(r.lhs), cell(r.rhs), cell(r.discrepancy)]);
            }
            emit(out.as_deref(), &table.render(&hash_inputs(&[])?))?;
            Ok(if worst <= tol {
                Outcome::Ok
            } else {
                Outcome::ChecksFailed(format!("largest discrepancy {worst:e} exceeds {tol:e}"))
            })
        }
        Command::CheckInvariants { path, metric, out } => {
            let spec = io::read_metric(&metric)?;
            let raw = io::read_path(&path)?;
            let hash = hash_inputs(&[&path, &metric])?;
            let vel = sample_velocities(&raw)?;
            let jobs: Vec<usize> = (0..raw.curves.len()).collect();
            let records = par_map(&jobs, |&k| conserved_quantities(&spec, &raw.curves[k], &vel[k]));
            let mut table = CsvTable::new(&[
                "time",
                "energy",
                "linear_x",
                "linear_y",
                "linear_z",
                "angular_x",
                "angular_y",
                "angular_z",
                "reparam_max",
            ]);
            for (t, r) in raw.times.iter().zip(records) {
                let r = r?;
                let (lin, ang) = (r.linear_momentum, r.angular_momentum);
                let rep = r.reparam_momentum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                table.push(vec![
                    cell(*t),
                    cell(r.energy),
                    cell(lin.map(|v| v.x)),
                    cell(lin.map(|v| v.y)),
                    cell(lin.map(|v| v.z)),
                    cell(ang.map(|v| v.x)),
                    cell(ang.map(|v| v.y)),
                    cell(ang.map(|v| v.z)),
                    cell(rep),
                ]);
            }
            emit(out.as_deref(), &table.render(&hash))?;
            Ok(Outcome::Ok)
        }
        Command::DistanceBounds {
            path,
            metric,
            condition,
            out,
        } => {
            let spec = io::read_metric(&metric)?;
            let raw = io::read_path(&path)?;
            let hash = hash_inputs(&[&path, &metric])?;
            let report = distance_bound_check(&spec, &raw, BoundCondition::from_index(condition)?)?;
            let mut table = CsvTable::new(&["inequality", "lhs", "rhs", "holds"]);
            for r in &report.rows {
                table.push(vec![r.name.clone(), cell(r.lhs), cell(r.rhs), r.holds.to_string()]);
            }
            table.push(vec!["length".into(), cell(path_length(&spec, &raw)?), cell(None), String::new()]);
            table.push(vec!["area_swept".into(), cell(area_swept(&raw)?), cell(None), String::new()]);
            emit(out.as_deref(), &table.render(&hash))?;
            Ok(if report.holds() {
                Outcome::Ok
            } else {
                Outcome::ChecksFailed("a distance-bound inequality is violated".into())
            })
        }
        Command::Spectrum { curve, count, out } => {
            let f = io::read_curve(&curve)?;
            let hash = hash_inputs(&[&curve])?;
            let eig = laplacian_spectrum(&f)?;
            let mut table = CsvTable::new(&["index", "eigenvalue"]);
            for (i, e) in eig.iter().take(count.unwrap_or(eig.len())).enumerate() {
                table.push(vec![i.to_string(), cell(*e)]);
            }
            emit(out.as_deref(), &table.render(&hash))?;
            Ok(Outcome::Ok)
        }
        Command::ExportPlotData { path, out } => {
            let raw = io::read_path(&path)?;
            let hash = hash_inputs(&[&path])?;
            let mut table = CsvTable::new(&["sample", "time", "node", "x", "y", "z"]);
            for (k, (t, c)) in raw.times.iter().zip(&raw.curves).enumerate() {
                for (j, x) in c.nodes().iter().enumerate() {
                    table.push(vec![k.to_string(), cell(*t), j.to_string(), cell(x.x), cell(x.y), cell(x.z)]);
                }
            }
            emit(out.as_deref(), &table.render(&hash))?;
            Ok(Outcome::Ok)
        }
    }
}
