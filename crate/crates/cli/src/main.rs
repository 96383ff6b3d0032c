//! `seba` — command-line driver for the point-scatterer spectral toolkit.
//!
//! Subcommands: norms, solve, stats, heat, trace-check, greedy3, pipeline.
//! Data goes to files (or stdout for greedy3); diagnostics go to stderr.
//! Exit codes: 0 success, 2 usage/schema errors, 1 computation errors.

mod cache;
mod config;

use cache::CacheEntry;
use clap::{Parser, Subcommand};
use config::{parse_betas, parse_coeff_list, Overrides, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seba_core::error::{Result, SebaError};
use seba_core::io;
use seba_core::lattice::{
    enumerate_norms_with, DiagonalForm, EnumOptions, DEFAULT_VISIT_BUDGET,
};
use seba_core::secular::{
    build_secular, solve_spectrum_with, ScattererPhase, TailModel,
};
use seba_core::stats::{greedy_approx_3d, heat_sums, mean_gap_ratio, spacing_report};
use seba_core::trace::{trace_check_2d, trace_check_3d, GaussianTest, TraceCheckReport};
use std::fmt::Write as _;
use std::path::PathBuf;

const VERSION_LINE: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (schemas: seba-norms v1, seba-perturbed v1, report v1)"
);

#[derive(Parser)]
#[command(name = "seba", version = VERSION_LINE, about = "Point-scatterer (Šeba billiard) spectra on flat tori")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enumerate the Laplace spectrum (dual-lattice norms) of a diagonal torus
    Norms {
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        dim: u8,
        /// comma-separated positive coefficients; `p/q` or integers are exact
        #[arg(long)]
        coeffs: String,
        #[arg(long)]
        cutoff: f64,
        #[arg(long, default_value_t = 1e-10)]
        merge_tol: f64,
        #[arg(long)]
        out: PathBuf,
        /// enumeration budget in lattice visits
        #[arg(long, default_value_t = DEFAULT_VISIT_BUDGET)]
        budget: u128,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Solve the secular equation: one root per gap plus the ground state
    Solve {
        #[arg(long)]
        norms: PathBuf,
        /// scatterer phase in radians, in (-pi, pi); pi is the unperturbed Laplacian
        #[arg(long)]
        phi: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value = "analytic")]
        tail: String,
        /// solve up to this eigenvalue (default cutoff/2)
        #[arg(long)]
        xmax: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Spacing statistics and histograms against the Poisson law
    Stats {
        #[arg(long)]
        norms: PathBuf,
        #[arg(long)]
        perturbed: PathBuf,
        #[arg(long)]
        xmax: f64,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heat-trace sums A~(beta) and the difference form on a beta grid
    Heat {
        #[arg(long)]
        norms: PathBuf,
        #[arg(long)]
        perturbed: PathBuf,
        /// comma-separated beta values
        #[arg(long)]
        betas: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify the exact trace identity at one beta
    TraceCheck {
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        dim: u8,
        #[arg(long)]
        norms: PathBuf,
        #[arg(long)]
        perturbed: PathBuf,
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        beta: f64,
        /// `auto` or an explicit admissible value
        #[arg(long, default_value = "auto")]
        sigma: String,
        #[arg(long, default_value_t = 1e-9)]
        quad_tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Three-step greedy approximation of a target by am^2+bn^2+ck^2
    Greedy3 {
        /// fixed coefficients a,b,c (omit in --random mode for random ones)
        #[arg(long)]
        coeffs: Option<String>,
        #[arg(long)]
        target: Option<f64>,
        /// sample count for randomized bound checking
        #[arg(long)]
        random: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// norms -> solve -> stats/heat/trace-check with cached intermediates
    Pipeline {
        /// key=value config file; explicit flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        coeffs: Option<String>,
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long)]
        xmax: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        betas: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &SebaError) -> i32 {
    match e {
        SebaError::SchemaVersion(_) | SebaError::Parse(_) | SebaError::Domain(_) => 2,
        _ => 1,
    }
}

fn parse_tail(s: &str) -> Result<TailModel> {
    match s {
        "analytic" => Ok(TailModel::Analytic),
        "none" => Ok(TailModel::None),
        other => Err(SebaError::Parse(format!(
            "tail must be `analytic` or `none`, got `{other}`"
        ))),
    }
}

fn in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(SebaError::Domain("workers must be >= 1".into()));
    }
    Ok(rayon_pool(workers)?.install(job))
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SebaError::Domain(format!("thread pool: {e}")))
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Missing input files are usage errors (exit 2), not computation errors.
fn require_file(path: &std::path::Path) -> Result<()> {
    if !path.is_file() {
        return Err(SebaError::Parse(format!(
            "no such file: {}",
            path.display()
        )));
    }
    Ok(())
}

fn load_norms(path: &std::path::Path) -> Result<seba_core::lattice::NormSpectrum> {
    require_file(path)?;
    io::read_norms(path)
}

fn load_perturbed(
    path: &std::path::Path,
    spec: &seba_core::lattice::NormSpectrum,
) -> Result<seba_core::secular::PerturbedSpectrum> {
    require_file(path)?;
    io::read_perturbed(path, spec)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Norms {
            dim,
            coeffs,
            cutoff,
            merge_tol,
            out,
            budget,
            workers,
        } => {
            let form = DiagonalForm::new(parse_coeff_list(&coeffs, dim as usize)?)?;
            let opts = EnumOptions {
                max_visits: budget,
                workers,
            };
            let spec = enumerate_norms_with(&form, cutoff, merge_tol, &opts)?;
            io::write_norms(&out, &spec)?;
            eprintln!(
                "norms: {} distinct values ({} lattice points) -> {}",
                spec.len(),
                spec.total_points(),
                out.display()
            );
            Ok(())
        }
        Cmd::Solve {
            norms,
            phi,
            tol,
            tail,
            xmax,
            out,
            workers,
        } => {
            let spec = load_norms(&norms)?;
            let phase = ScattererPhase::new(phi)?;
            let tail = parse_tail(&tail)?;
            let x_max = xmax.unwrap_or(spec.cutoff() / 2.0);
            let eval = build_secular(&spec, tail, 1e-12)?;
            let pert = in_pool(workers, || {
                solve_spectrum_with(&spec, &eval, &phase, x_max, tol)
            })??;
            io::write_perturbed(&out, &pert)?;
            eprintln!(
                "solve: {} levels (ground state {:.6e}) -> {}",
                pert.levels.len(),
                pert.levels[0].lambda,
                out.display()
            );
            Ok(())
        }
        Cmd::Stats {
            norms,
            perturbed,
            xmax,
            bins,
            out,
        } => {
            let spec = load_norms(&norms)?;
            let pert = load_perturbed(&perturbed, &spec)?;
            let report = spacing_report(&spec, &pert, xmax, bins)?;
            let config = serde_json::json!({
                "command": "stats",
                "norms": norms.display().to_string(),
                "perturbed": perturbed.display().to_string(),
                "xmax": xmax,
                "bins": bins,
            });
            let mut value = serde_json::to_value(&report)
                .map_err(|e| SebaError::Parse(format!("report encode: {e}")))?;
            value["config"] = config;
            io::write_json(&out, &value)?;
            eprintln!(
                "stats: N = {}, KS(norms) = {:.4}, KS(perturbed) = {:.4} -> {}",
                report.n_count,
                report.ks_poisson_norms,
                report.ks_poisson_perturbed,
                out.display()
            );
            Ok(())
        }
        Cmd::Heat {
            norms,
            perturbed,
            betas,
            out,
        } => {
            let spec = load_norms(&norms)?;
            let pert = load_perturbed(&perturbed, &spec)?;
            let betas = parse_betas(&betas)?;
            let config = serde_json::json!({
                "command": "heat",
                "norms": norms.display().to_string(),
                "perturbed": perturbed.display().to_string(),
                "betas": betas,
            });
            let mut body = String::new();
            writeln!(
                body,
                "# seba-heat v1 config={}",
                serde_json::to_string(&config).expect("config json")
            )
            .expect("string write");
            writeln!(
                body,
                "beta,a_tilde,difference_form,discrepancy,scaled_2d,scaled_3d"
            )
            .expect("string write");
            for &beta in &betas {
                let h = heat_sums(&spec, &pert, beta)?;
                writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    fmt17(h.beta),
                    fmt17(h.a_tilde),
                    fmt17(h.difference_form),
                    fmt17(h.discrepancy),
                    fmt17(h.scaled_2d),
                    fmt17(h.scaled_3d)
                )
                .expect("string write");
            }
            io::atomic_write(&out, body.as_bytes())?;
            eprintln!("heat: {} beta points -> {}", betas.len(), out.display());
            Ok(())
        }
        Cmd::TraceCheck {
            dim,
            norms,
            perturbed,
            phi,
            beta,
            sigma,
            quad_tol,
            out,
        } => {
            let spec = load_norms(&norms)?;
            if spec.form().dim() != dim as usize {
                return Err(SebaError::Parse(format!(
                    "--dim {dim} but the norms file is {}-dimensional",
                    spec.form().dim()
                )));
            }
            let pert = load_perturbed(&perturbed, &spec)?;
            let phase = ScattererPhase::new(phi)?;
            let test = GaussianTest::new(beta)?;
            let sigma_override = match sigma.as_str() {
                "auto" => None,
                v => Some(v.parse::<f64>().map_err(|_| {
                    SebaError::Parse(format!("sigma must be `auto` or a number, got `{v}`"))
                })?),
            };
            let config = serde_json::json!({
                "command": "trace-check",
                "dim": dim,
                "norms": norms.display().to_string(),
                "perturbed": perturbed.display().to_string(),
                "phi": phi,
                "beta": beta,
                "sigma": sigma,
                "quad_tol": quad_tol,
            });
            let mut report = if dim == 2 {
                trace_check_2d(&spec, &pert, &phase, &test, sigma_override, quad_tol)?
            } else {
                trace_check_3d(&spec, &pert, &phase, &test, sigma_override, quad_tol)?
            };
            report.config = Some(config);
            io::write_json(&out, &report)?;
            eprintln!(
                "trace-check: |LHS-RHS| = {:.3e} (LHS {:.6e}) -> {}",
                report.abs_error,
                report.lhs,
                out.display()
            );
            Ok(())
        }
        Cmd::Greedy3 {
            coeffs,
            target,
            random,
            seed,
            out,
        } => greedy3(coeffs, target, random, seed, out),
        Cmd::Pipeline {
            config,
            dim,
            coeffs,
            phi,
            cutoff,
            xmax,
            beta,
            betas,
            bins,
            out_dir,
            workers,
            seed,
        } => {
            if let Some(p) = &config {
                require_file(p)?;
            }
            let ov = Overrides {
                dim,
                coeffs,
                phi,
                cutoff,
                x_max: xmax,
                beta,
                betas,
                bins,
                out_dir,
                workers,
                seed,
                ..Default::default()
            };
            pipeline(RunConfig::resolve(config.as_deref(), &ov)?)
        }
    }
}

fn greedy3(
    coeffs: Option<String>,
    target: Option<f64>,
    random: Option<u64>,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    match (target, random) {
        (Some(t), None) => {
            let coeffs = coeffs
                .ok_or_else(|| SebaError::Parse("greedy3 --target needs --coeffs a,b,c".into()))?;
            let form = DiagonalForm::new(parse_coeff_list(&coeffs, 3)?)?;
            let g = greedy_approx_3d(&form, t)?;
            let line = format!(
                "m={} n={} k={} s1={} s2={} final={}",
                g.m,
                g.n,
                g.k,
                fmt17(g.s1),
                fmt17(g.s2),
                fmt17(g.rem)
            );
            println!("{line}");
            if let Some(p) = out {
                io::atomic_write(&p, format!("{line}\n").as_bytes())?;
            }
            Ok(())
        }
        (None, Some(n)) => {
            let fixed = match &coeffs {
                Some(s) => Some(DiagonalForm::new(parse_coeff_list(s, 3)?)?),
                None => None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = String::from("t,a,b,c,m,n,k,s1,s2,final,bounds_ok\n");
            let mut violations = 0u64;
            for _ in 0..n {
                let t = rng.gen_range(1.0..1e8);
                let form = match &fixed {
                    Some(f) => f.clone(),
                    None => DiagonalForm::from_values(&[
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.5..2.0),
                    ])?,
                };
                let c = form.values();
                let g = greedy_approx_3d(&form, t)?;
                let ok = g.s1 <= 2.0 * (c[0] * t).sqrt()
                    && g.s2 <= 2.0 * (c[1] * g.s1).sqrt()
                    && g.rem <= 2.0 * (c[2] * g.s2).sqrt();
                if !ok {
                    violations += 1;
                }
                if out.is_some() {
                    writeln!(
                        rows,
                        "{},{},{},{},{},{},{},{},{},{},{}",
                        fmt17(t),
                        fmt17(c[0]),
                        fmt17(c[1]),
                        fmt17(c[2]),
                        g.m,
                        g.n,
                        g.k,
                        fmt17(g.s1),
                        fmt17(g.s2),
                        fmt17(g.rem),
                        ok
                    )
                    .expect("string write");
                }
            }
            if let Some(p) = out {
                io::atomic_write(&p, rows.as_bytes())?;
            }
            println!("{n} samples, {violations} chained-bound violations");
            if violations > 0 {
                return Err(SebaError::Consistency(format!(
                    "{violations} greedy bound violations"
                )));
            }
            Ok(())
        }
        _ => Err(SebaError::Parse(
            "greedy3 needs exactly one of --target T or --random N".into(),
        )),
    }
}

fn pipeline(cfg: RunConfig) -> Result<()> {
    let cfg_json =
        serde_json::to_value(&cfg).map_err(|e| SebaError::Parse(format!("config: {e}")))?;
    let cache_dir = cfg.out_dir.join("cache");
    std::fs::create_dir_all(&cache_dir)?;

    // step 1: norms
    let form = DiagonalForm::new(
        cfg.coeffs
            .iter()
            .map(|s| seba_core::lattice::Coeff::parse(s))
            .collect::<Result<_>>()?,
    )?;
    let norms_entry = CacheEntry::new(
        &cache_dir,
        "norms",
        seba_core::NORMS_SCHEMA,
        serde_json::json!({
            "dim": cfg.dim, "coeffs": cfg.coeffs, "cutoff": cfg.cutoff,
            "merge_tol": cfg.merge_tol,
        }),
    )?;
    if norms_entry.is_hit() {
        eprintln!("pipeline: cache hit for norms, skipping enumeration");
    } else {
        eprintln!("pipeline: enumerating norms (cutoff {})", cfg.cutoff);
        let opts = EnumOptions {
            max_visits: DEFAULT_VISIT_BUDGET,
            workers: cfg.workers,
        };
        let spec = enumerate_norms_with(&form, cfg.cutoff, cfg.merge_tol, &opts)?;
        io::write_norms(&norms_entry.data_path, &spec)?;
        norms_entry.commit()?;
    }
    let spec = io::read_norms(&norms_entry.data_path)?;

    // step 2: solve, keyed by the upstream hash
    let phase = ScattererPhase::new(cfg.phi)?;
    let solve_entry = CacheEntry::new(
        &cache_dir,
        "perturbed",
        seba_core::PERTURBED_SCHEMA,
        serde_json::json!({
            "upstream": norms_entry.params_hash(),
            "phi": cfg.phi, "tol": cfg.tol, "tail": cfg.tail, "xmax": cfg.x_max,
        }),
    )?;
    if solve_entry.is_hit() {
        eprintln!("pipeline: cache hit for solve, skipping recomputation");
    } else {
        eprintln!("pipeline: solving the secular equation (xmax {})", cfg.x_max);
        let eval = build_secular(&spec, parse_tail(&cfg.tail)?, 1e-12)?;
        let pert = in_pool(cfg.workers, || {
            solve_spectrum_with(&spec, &eval, &phase, cfg.x_max, cfg.tol)
        })??;
        io::write_perturbed(&solve_entry.data_path, &pert)?;
        solve_entry.commit()?;
    }
    let pert = io::read_perturbed(&solve_entry.data_path, &spec)?;

    // convenience copies of the intermediates next to the reports
    std::fs::copy(&norms_entry.data_path, cfg.out_dir.join("norms.csv"))?;
    std::fs::copy(&solve_entry.data_path, cfg.out_dir.join("perturbed.csv"))?;

    // step 3a: stats report (histograms only when the sample is large enough)
    let ratio = mean_gap_ratio(&spec, &pert, cfg.x_max)?;
    let mut stats_value = serde_json::json!({
        "config": cfg_json,
        "ratio": ratio,
    });
    match spacing_report(&spec, &pert, cfg.x_max, cfg.bins) {
        Ok(rep) => {
            stats_value["spacing"] = serde_json::to_value(&rep)
                .map_err(|e| SebaError::Parse(format!("report encode: {e}")))?;
        }
        Err(SebaError::SampleSize(note)) => {
            stats_value["spacing"] = serde_json::Value::Null;
            stats_value["spacing_note"] = serde_json::Value::String(note);
        }
        Err(e) => return Err(e),
    }
    io::write_json(&cfg.out_dir.join("stats.json"), &stats_value)?;

    // step 3b: heat grid (betas outside the solved range are reported as skipped)
    let mut body = String::new();
    writeln!(
        body,
        "# seba-heat v1 config={}",
        serde_json::to_string(&cfg_json).expect("config json")
    )
    .expect("string write");
    writeln!(
        body,
        "beta,a_tilde,difference_form,discrepancy,scaled_2d,scaled_3d"
    )
    .expect("string write");
    for &beta in &cfg.betas {
        match heat_sums(&spec, &pert, beta) {
            Ok(h) => writeln!(
                body,
                "{},{},{},{},{},{}",
                fmt17(h.beta),
                fmt17(h.a_tilde),
                fmt17(h.difference_form),
                fmt17(h.discrepancy),
                fmt17(h.scaled_2d),
                fmt17(h.scaled_3d)
            )
            .expect("string write"),
            Err(SebaError::Range { required, .. }) => {
                eprintln!(
                    "pipeline: skipping beta = {beta} (needs xmax >= {required}, have {})",
                    cfg.x_max
                );
            }
            Err(e) => return Err(e),
        }
    }
    io::atomic_write(&cfg.out_dir.join("heat.csv"), body.as_bytes())?;

    // step 3c: trace check at the configured beta
    let test = GaussianTest::new(cfg.beta)?;
    let mut report: TraceCheckReport = if cfg.dim == 2 {
        trace_check_2d(&spec, &pert, &phase, &test, cfg.sigma, cfg.quad_tol)?
    } else {
        trace_check_3d(&spec, &pert, &phase, &test, cfg.sigma, cfg.quad_tol)?
    };
    report.config = Some(cfg_json);
    io::write_json(&cfg.out_dir.join("trace_check.json"), &report)?;

    eprintln!(
        "pipeline: done — ratio {:.4}, trace |LHS-RHS| = {:.3e}; reports in {}",
        ratio.ratio,
        report.abs_error,
        cfg.out_dir.display()
    );
    Ok(())
}
