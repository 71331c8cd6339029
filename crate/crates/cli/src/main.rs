use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invman::demos::{run_demo, DEMO_NAMES};
use invman::scenario::{run_check, run_solve, run_verify, ExitStatus, Scenario};
use invman::{Error, Result};

/// Invariant manifolds for perturbed nonautonomous linear equations with a general dichotomy.
#[derive(Parser, Debug)]
#[command(name = "invman", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Admissibility constants, gate and decay verdict; writes admissibility.json.
    Check(Target),
    /// Check, then solve for the invariant graph; writes manifold.csv, manifold.json and decay_curve.csv.
    Solve(Target),
    /// Verify a solved graph found in the output directory; writes verification.json.
    Verify(Target),
    /// Run a named example end to end and write a summary table.
    Demo {
        /// One of: exponential, polynomial, rho, mu_nu, mixed, constant_a, local_exp, local_poly, local_rho, local_mu_nu.
        name: String,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Target {
    /// Scenario file (TOML, or JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Common {
    /// Seed for every sampled point.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Count skipped samples as failures.
    #[arg(long, global = true)]
    strict: bool,
    /// Run the intentional-failure controls.
    #[arg(long, global = true)]
    negative_controls: bool,
    /// Override any config field, e.g. `--set solver.active_nodes=241`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    quad_tol: Option<f64>,
    #[arg(long, global = true)]
    tail_tol: Option<f64>,
    #[arg(long, global = true)]
    horizon_init: Option<f64>,
    #[arg(long, global = true)]
    horizon_max: Option<f64>,
    #[arg(long, global = true)]
    sup_grid: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if self.strict {
            o.push("verification.strict=true".into());
        }
        if self.negative_controls {
            o.push("verification.negative_controls=true".into());
        }
        let quad = [
            ("quad_tol", self.quad_tol),
            ("tail_tol", self.tail_tol),
            ("horizon_init", self.horizon_init),
            ("horizon_max", self.horizon_max),
        ];
        for (key, v) in quad {
            if let Some(v) = v {
                o.push(format!("quadrature.{key}={v:e}"));
            }
        }
        if let Some(n) = self.sup_grid {
            o.push(format!("quadrature.sup_grid={n}"));
        }
        o.extend(self.set.iter().cloned());
        o
    }
}

fn scenario(target: &Target, overrides: &[String]) -> Result<Scenario> {
    Scenario::load(&target.config, overrides)
}

fn check(target: &Target, overrides: &[String]) -> Result<ExitStatus> {
    let sc = scenario(target, overrides)?;
    let c = run_check(&sc, Some(&target.out))?;
    let r = &c.report;
    println!("scenario {} ({} mode)", c.scenario, c.mode);
    println!("alpha = {:.10} (err {:.1e}), beta = {:.10} (err {:.1e})", r.alpha, r.alpha_err, r.beta, r.beta_err);
    println!("{} gate: margin {:.7} {}", c.mode, c.gate.margin, pass(c.gate.passed));
    println!("decay: {}", r.decay.verdict.label());
    wrote(&target.out, &["admissibility.json"]);
    Ok(c.status)
}

fn solve(target: &Target, overrides: &[String]) -> Result<ExitStatus> {
    let sc = scenario(target, overrides)?;
    let out = run_solve(&sc, Some(&target.out))?;
    let c = &out.check;
    println!("{} gate: margin {:.7} {}, decay {}", c.mode, c.gate.margin, pass(c.gate.passed), c.report.decay.verdict.label());
    match &out.solution {
        Some(sol) => {
            let d = &sol.diagnostics;
            println!("outer iterations {}, contraction constant {:.6}, horizon {}", sol.graph.outer_iterations, d.q, d.horizon);
            println!("error bound {:.3e}", sol.graph.error_bound);
            wrote(&target.out, &["admissibility.json", "manifold.csv", "manifold.json", "decay_curve.csv"]);
        }
        None => println!("not solved: admissibility check did not pass"),
    }
    Ok(out.status)
}

fn verify(target: &Target, overrides: &[String]) -> Result<ExitStatus> {
    let sc = scenario(target, overrides)?;
    let v = run_verify(&sc, &target.out)?;
    for r in &v.report.records {
        let tag = if r.expected_failure { format!("{} (expected failure)", pass(r.passed)) } else { pass(r.passed).into() };
        println!(
            "{}: worst {:.3e} vs tol {:.3e}, {} sampled, {} skipped {}",
            r.name, r.worst_residual, r.tolerance, r.sampled, r.skipped, tag
        );
    }
    wrote(&target.out, &["verification.json"]);
    Ok(v.status)
}

fn demo(name: &str, out: Option<&Path>, overrides: &[String]) -> Result<ExitStatus> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| Path::new("out").join(name));
    let d = run_demo(name, overrides, Some(&dir))?;
    print!("{}", d.summary.table());
    println!("exit {}", d.status.code());
    println!("wrote {}", dir.display());
    Ok(d.status)
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn wrote(dir: &Path, files: &[&str]) {
    for f in files {
        println!("wrote {}", dir.join(f).display());
    }
}

fn run(cli: &Cli) -> Result<ExitStatus> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let overrides = cli.common.overrides();
    match &cli.command {
        Command::Check(t) => check(t, &overrides),
        Command::Solve(t) => solve(t, &overrides),
        Command::Verify(t) => verify(t, &overrides),
        Command::Demo { name, out } => {
            if !DEMO_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown demo `{name}`; available: {}", DEMO_NAMES.join(", "))));
            }
            demo(name, out.as_deref(), &overrides)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match run(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::for_error(&e)
        }
    };
    ExitCode::from(status.code() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_become_overrides() {
        let cli = Cli::parse_from([
            "invman", "check", "--config", "x.toml", "--seed", "4", "--strict", "--quad-tol", "1e-9", "--sup-grid", "32", "--set", "name=y",
        ]);
        assert_eq!(
            cli.common.overrides(),
            ["seed=4", "verification.strict=true", "quadrature.quad_tol=1e-9", "quadrature.sup_grid=32", "name=y"]
        );
    }

    #[test]
    fn demo_output_defaults_under_out() {
        let cli = Cli::parse_from(["invman", "demo", "rho"]);
        assert!(matches!(cli.command, Command::Demo { ref name, out: None } if name == "rho"));
    }
}
