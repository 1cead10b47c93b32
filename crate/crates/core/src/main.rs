use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use qvi_workbench::certificate::{verify_m_bounds, verify_v_bounds, LyapunovCertificate};
use qvi_workbench::engine::{solve_qstar_bruteforce, solve_qstar_policy_iteration};
use qvi_workbench::error::Result;
use qvi_workbench::policy::greedy_policy;
use qvi_workbench::switching::{inf_norm, system_matrix};
use qvi_workbench::workbench::experiment::{
    batch_dir, check_qstar, config_mdp, weights_for, QSTAR_RESIDUAL_TOL, REPORT_FILE,
};
use qvi_workbench::workbench::io::{load_mdp, load_qvector, save_mdp, write_json, QStarRecord};
use qvi_workbench::workbench::{
    run_experiment, verify_artifacts, EpsilonSpec, ExperimentConfig, ExperimentOutcome, Q0Mode,
    WMode,
};

#[derive(Parser)]
#[command(name = "qvi-workbench", version, about = "Q-value iteration as a switched system: solve, certify, trace, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded random MDP.
    Gen {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, default_value = "mdp.json")]
        out: PathBuf,
    },
    /// Compute Q* by policy iteration.
    Solve {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value = "qstar.json")]
        out: PathBuf,
        /// Also enumerate every deterministic policy and compare.
        #[arg(long)]
        bruteforce_check: bool,
    },
    /// Build and check the Lyapunov certificate (M, v) for an MDP.
    Certify {
        #[arg(long)]
        mdp: PathBuf,
        /// Precomputed Q*; solved when omitted.
        #[arg(long)]
        qstar: Option<PathBuf>,
        #[arg(long, default_value = "auto")]
        epsilon: EpsilonSpec,
        #[arg(long, value_enum, default_value = "ones")]
        w_mode: WMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "certificate.json")]
        out: PathBuf,
    },
    /// Full experiment: generate or load, solve, certify, iterate, check, report.
    Run(RunArgs),
    /// Re-check the artifacts of a previous run.
    Verify {
        #[arg(long)]
        dir: PathBuf,
        /// orthant, random, zero, or file:<path>
        #[arg(long = "q0", default_value = "orthant")]
        q0_mode: Q0Mode,
        #[arg(long, default_value_t = 200)]
        num_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the recomputed report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    num_states: usize,
    #[arg(long, default_value_t = 3)]
    num_actions: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Load the MDP instead of generating it.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    epsilon: EpsilonSpec,
    #[arg(long, value_enum, default_value = "ones")]
    w_mode: WMode,
    #[arg(long, default_value_t = 200)]
    num_iters: usize,
    /// orthant, random, zero, or file:<path>
    #[arg(long = "q0", default_value = "orthant")]
    q0_mode: Q0Mode,
    /// Extra random-positive w draws in halfplane.csv.
    #[arg(long, default_value_t = 0)]
    halfplane_draws: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Run seeds `seed .. seed + batch`, one subdirectory each.
    #[arg(long)]
    batch: Option<u64>,
}

impl RunArgs {
    fn config(&self, seed: u64, out_dir: PathBuf) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            num_states: self.instance.num_states,
            num_actions: self.instance.num_actions,
            gamma: self.instance.gamma,
            epsilon: self.epsilon,
            w_mode: self.w_mode,
            num_iters: self.num_iters,
            q0_mode: self.q0_mode.clone(),
            mdp_file: self.mdp.clone(),
            halfplane_draws: self.halfplane_draws,
            out_dir,
        }
    }
}

fn summarize(label: &str, outcome: &ExperimentOutcome) {
    let r = &outcome.report;
    if r.passed {
        println!("{label}: pass ({} iterations, eps = {})", r.num_iters, r.epsilon);
    } else {
        eprintln!("{label}: FAIL [{}]", r.failed_clauses.join(", "));
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    match args.batch {
        None => {
            let cfg = args.config(args.instance.seed, args.out_dir.clone());
            let outcome = run_experiment(&cfg)?;
            summarize(&cfg.out_dir.display().to_string(), &outcome);
            Ok(outcome.exit_code())
        }
        Some(n) => {
            let start = args.instance.seed;
            let results: Vec<(u64, Result<ExperimentOutcome>)> = (start..start + n)
                .into_par_iter()
                .map(|seed| (seed, run_experiment(&args.config(seed, batch_dir(&args.out_dir, seed)))))
                .collect();
            let mut code = 0;
            for (seed, r) in &results {
                match r {
                    Ok(o) => {
                        if !o.report.passed {
                            summarize(&format!("seed {seed}"), o);
                        }
                        code = code.max(o.exit_code());
                    }
                    Err(e) => {
                        eprintln!("seed {seed}: error: {e}");
                        code = code.max(e.exit_code());
                    }
                }
            }
            let passed = results
                .iter()
                .filter(|(_, r)| matches!(r, Ok(o) if o.report.passed))
                .count();
            println!("{passed}/{n} experiments passed");
            Ok(code)
        }
    }
}

fn cmd_solve(mdp_path: &Path, out: &Path, bruteforce: bool) -> Result<i32> {
    let mdp = load_mdp(mdp_path)?;
    let qstar = solve_qstar_policy_iteration(&mdp)?;
    let check = check_qstar(&mdp, &qstar)?;
    let policy = greedy_policy(&qstar, &mdp);
    write_json(out, &QStarRecord::new(&mdp, &qstar, &policy, check.method, check.bellman_residual))?;
    println!("Bellman residual {:e}, greedy policy {:?}", check.bellman_residual, policy.actions());
    let mut code = i32::from(check.bellman_residual > QSTAR_RESIDUAL_TOL);
    if bruteforce {
        let gap = inf_norm(&solve_qstar_bruteforce(&mdp)?.diff(&qstar));
        println!("enumeration gap {gap:e}");
        if gap > 1e-9 {
            eprintln!("policy iteration disagrees with enumeration");
            code = 1;
        }
    }
    Ok(code)
}

fn cmd_certify(
    mdp_path: &Path,
    qstar_path: Option<&Path>,
    epsilon: EpsilonSpec,
    w_mode: WMode,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    let mdp = load_mdp(mdp_path)?;
    let qstar = match qstar_path {
        Some(p) => load_qvector(p, &mdp)?,
        None => solve_qstar_policy_iteration(&mdp)?,
    };
    let eps = epsilon.resolve(mdp.gamma());
    let w = weights_for(w_mode, mdp.dim(), seed);
    let cert = LyapunovCertificate::build(&system_matrix(&qstar, &mdp), mdp.gamma(), eps, w)?;
    write_json(out, &cert.to_record())?;
    let m = verify_m_bounds(&cert, &mdp)?;
    let v = verify_v_bounds(&cert.v_vector, &cert.w_vector, cert.gamma, cert.epsilon)?;
    println!(
        "M: lambda in [{}, {}] (bound {}), residual {:e}, {} series terms",
        m.lambda_min, m.lambda_max, m.lambda_max_bound, m.lyapunov_residual, cert.diagnostics.matrix.series_terms
    );
    println!(
        "v: ||v||_inf = {}, ||w||_1/(1-gamma) = {} ({}), ||w||_1 (gamma+eps)/eps = {}, eq5 residual {:e}",
        v.v_inf,
        v.stated_upper_bound,
        if v.stated_upper_holds { "holds" } else { "violated" },
        v.corrected_upper_bound,
        cert.diagnostics.eq5_residual
    );
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen { instance, out } => {
            let cfg = ExperimentConfig {
                seed: instance.seed,
                num_states: instance.num_states,
                num_actions: instance.num_actions,
                gamma: instance.gamma,
                ..Default::default()
            };
            cfg.validate()?;
            save_mdp(&out, &config_mdp(&cfg)?)?;
            Ok(0)
        }
        Command::Solve {
            mdp,
            out,
            bruteforce_check,
        } => cmd_solve(&mdp, &out, bruteforce_check),
        Command::Certify {
            mdp,
            qstar,
            epsilon,
            w_mode,
            seed,
            out,
        } => cmd_certify(&mdp, qstar.as_deref(), epsilon, w_mode, seed, &out),
        Command::Run(args) => cmd_run(&args),
        Command::Verify {
            dir,
            q0_mode,
            num_iters,
            seed,
            out,
        } => {
            let outcome = verify_artifacts(&dir, &q0_mode, num_iters, seed)?;
            let out = out.unwrap_or_else(|| dir.join(format!("verify-{REPORT_FILE}")));
            write_json(&out, &outcome.report)?;
            summarize(&dir.display().to_string(), &outcome);
            Ok(outcome.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
