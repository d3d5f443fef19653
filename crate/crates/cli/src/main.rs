//! Command-line front end: render synthetic sequences, run the ground-truth
//! pipeline, run the full observer experiment, analyze scene observability,
//! or run the built-in selftest.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 configuration error,
//! 3 runtime numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biasobs_core::config::SimConfig;
use biasobs_core::error::Error;
use biasobs_core::grid::{LatLongGrid, SphereGrid};
use biasobs_core::observability::{
    find_stationary_motion, orthogonality_identity_check, residual_rms, stationarity_residual,
    ResidualWeights,
};
use biasobs_core::pipeline::{
    build_scene, initial_pose, run_experiment, run_render, run_simulate, RunOptions,
};
use biasobs_core::plots::emit_plots;
use biasobs_core::scene::render;

#[derive(Parser)]
#[command(name = "biasobs", version, about = "Velocity-bias observer simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the brightness (PGM) and depth (PFM) frame sequence.
    Render {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Limit the number of emitted frames.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run the ground-truth pipeline without the observer (twist CSV).
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full experiment: render, inject bias/noise, observe, report.
    Observe {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump windowed error fields as PFM every N frames.
        #[arg(long)]
        dump_every: Option<usize>,
    },
    /// Search the configured scene for stationary motions and report.
    Observability {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in closed-form check suite.
    Selftest,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::BadConfig(_) | Error::BadMargins(_) | Error::BadGains(_) => 2,
        Error::Io(_) => 2,
        _ => 3,
    }
}

fn load_config(path: &Path) -> Result<SimConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    SimConfig::parse(&text)
}

fn out_dir(cfg: &SimConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from(&cfg.out_dir))
}

fn cmd_observe(config: &Path, out: Option<PathBuf>, dump_every: Option<usize>) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let dir = out_dir(&cfg, out);
    let opts = RunOptions { dump_every };
    let report = run_experiment(&cfg, &dir, &opts)?;
    let (p1, p2) = emit_plots(&report.csv_path, &dir)?;
    println!("diagnostics: {}", report.csv_path.display());
    println!("plots: {} {}", p1.display(), p2.display());
    println!(
        "final-window mean |bias error|: translation [{:.6}, {:.6}, {:.6}] m/s",
        report.mean_abs_pve[0], report.mean_abs_pve[1], report.mean_abs_pve[2]
    );
    println!(
        "                                rotation    [{:.8}, {:.8}, {:.8}] rad/s",
        report.mean_abs_pwe[0], report.mean_abs_pwe[1], report.mean_abs_pwe[2]
    );
    println!(
        "V: first {:.4e} max {:.4e} final {:.4e}",
        report.v_first, report.v_max, report.v_final
    );
    println!(
        "dissipation bound L = {:.4} 1/s; gain condition {} (margin {:.4})",
        report.l_bound,
        if report.gain_ok { "satisfied" } else { "violated" },
        report.gain_margin
    );
    println!("wall clock: {:.1} s", report.wall_clock_s);
    Ok(())
}

fn cmd_observability(config: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let dir = out_dir(&cfg, out);
    std::fs::create_dir_all(&dir)?;
    let (scene, _env) = build_scene(&cfg)?;
    let pose = initial_pose(&cfg)?;
    let grid = LatLongGrid::new(cfg.sphere_grid_w, cfg.sphere_grid_h)?;
    let (y, d) = render(&scene, &pose, &grid, None)?;
    let d_ref = {
        let mut acc = 0.0;
        let mut area = 0.0;
        for k in 0..grid.len() {
            acc += d.as_slice()[k] * grid.weight(k);
            area += grid.weight(k);
        }
        acc / area
    };
    let weights = ResidualWeights {
        lambda_y: cfg.lambda_y,
        lambda_d: cfg.lambda_d,
    };
    let best = find_stationary_motion(&grid, &y, &d, d_ref, &weights)?;
    let ortho = orthogonality_identity_check(&best.p_w, &best.p_v);

    // Residuals over a deterministic candidate sweep for inspection.
    let csv_path = dir.join("observability_candidates.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
        writeln!(w, "pw_x,pw_y,pw_z,pv_x,pv_y,pv_z,residual_rms")?;
        let mut candidates = Vec::new();
        for a in 0..6 {
            for s in [1.0f64, -1.0] {
                let mut u = [0.0f64; 6];
                u[a] = s;
                candidates.push(u);
            }
        }
        for u in candidates {
            let p_w = biasobs_core::nalgebra::Vector3::new(u[0], u[1], u[2]);
            let p_v = biasobs_core::nalgebra::Vector3::new(u[3], u[4], u[5]) * d_ref;
            let (ry, rd) = stationarity_residual(&grid, &y, &d, &p_w, &p_v)?;
            let rms = residual_rms(&grid, &ry, &rd, &weights);
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                p_w.x, p_w.y, p_w.z, p_v.x, p_v.y, p_v.z, rms
            )?;
        }
    }

    let report_path = dir.join("observability_report.txt");
    let report = format!(
        "scene observability report\n\
         grid: {}x{} full-sphere samples, reference depth {:.4} m\n\
         best stationary candidate (normalized |(p_w, p_v/d_ref)| = 1):\n\
         \x20 p_w = [{:.6}, {:.6}, {:.6}] rad/s\n\
         \x20 p_v = [{:.6}, {:.6}, {:.6}] m/s\n\
         \x20 weighted residual RMS = {:.6e}\n\
         \x20 orthogonality measure |cos(p_v, p_w)| = {:.4}\n\
         interpretation: a residual far above the discretization floor means\n\
         no nontrivial stationary motion fits the scene (biases observable);\n\
         a near-zero residual flags a rotation axis (biases unobservable\n\
         along it). Residuals on partial views are conjectural.\n",
        cfg.sphere_grid_w,
        cfg.sphere_grid_h,
        d_ref,
        best.p_w.x,
        best.p_w.y,
        best.p_w.z,
        best.p_v.x,
        best.p_v.y,
        best.p_v.z,
        best.residual_rms,
        ortho,
    );
    std::fs::write(&report_path, &report)?;
    print!("{report}");
    println!("candidates: {}", csv_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("BIAS_OBS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result: Result<(), Error> = match cli.command {
        Command::Render { config, out, frames } => (|| {
            let cfg = load_config(&config)?;
            let dir = out_dir(&cfg, out);
            let n = run_render(&cfg, &dir, frames)?;
            println!("wrote {n} frames to {}", dir.display());
            Ok(())
        })(),
        Command::Simulate { config, out } => (|| {
            let cfg = load_config(&config)?;
            let dir = out_dir(&cfg, out);
            let (path, min_depth) = run_simulate(&cfg, &dir)?;
            println!("twists: {}", path.display());
            println!("min rendered depth: {min_depth:.4} m");
            Ok(())
        })(),
        Command::Observe { config, out, dump_every } => cmd_observe(&config, out, dump_every),
        Command::Observability { config, out } => cmd_observability(&config, out),
        Command::Selftest => {
            let failures = biasobs_core::selftest::run_all();
            let total = biasobs_core::selftest::checks().len();
            for (name, _) in biasobs_core::selftest::checks() {
                if let Some((_, msg)) = failures.iter().find(|(n, _)| n == name) {
                    println!("FAIL {name}: {msg}");
                } else {
                    println!("ok   {name}");
                }
            }
            println!("{} / {total} checks passed", total - failures.len());
            if failures.is_empty() {
                return ExitCode::SUCCESS;
            }
            return ExitCode::from(1);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
