//! Command-line front end: model validation, stationary solves, performance
//! measures, policy optimization, parameter sweeps, simulation, and trace
//! ingestion, with CSV outputs suitable for plotting.

use clap::{Args, Parser, Subcommand};
use crawlq::arrivals::{ValidationMode, C_COR_DENOMINATOR_NOTE};
use crawlq::modelfile::ModelFile;
use crawlq::optimizer::{self, CostCoefficients, SubsetSpec};
use crawlq::policy::parse_policy;
use crawlq::simulator::{simulate, SimConfig, SimEstimate};
use crawlq::solver::{solve_general, solve_qbd};
use crawlq::{generator, measures, sojourn, trace, QueueModel, ThresholdPolicy};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "crawlq",
    about = "Evaluate and optimize threshold control of a finite-buffer indexing queue",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArg {
    /// Model file (JSON).
    model: PathBuf,
    /// Force repair-mode validation of arrival matrices.
    #[arg(long)]
    repair: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model file; report arrival statistics and repairs.
    Validate {
        #[command(flatten)]
        model: ModelArg,
        /// Emit the canonical (post-repair, direct-form) model file.
        #[arg(long)]
        canonicalize: bool,
        /// Write the canonical model here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the stationary distribution under a policy.
    Solve {
        #[command(flatten)]
        model: ModelArg,
        /// Policy spec, e.g. "modes=4,1;thresholds=2".
        #[arg(long)]
        policy: String,
        /// Use the block-tridiagonal solver (ordinary arrivals only).
        #[arg(long)]
        qbd: bool,
        /// Also evaluate sojourn transforms at these arguments (comma-separated).
        #[arg(long, value_delimiter = ',')]
        lst: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All performance measures under a policy.
    Measures {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize threshold policies over mode subsets.
    Optimize {
        #[command(flatten)]
        model: ModelArg,
        /// "all" or explicit subsets like "3,1;4,1".
        #[arg(long, default_value = "all")]
        subsets: String,
        /// Emit every evaluated policy instead of the per-subset table.
        #[arg(long)]
        all_policies: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-optimize while sweeping one model parameter.
    Sweep {
        #[command(flatten)]
        model: ModelArg,
        /// Capacity range, e.g. "K=1..8".
        #[arg(long)]
        param: Option<String>,
        /// Service sub-generator scale factors, e.g. "s=0.1,0.5,1".
        #[arg(long)]
        scale_service: Option<String>,
        /// Obsolescence sub-generator scale factors.
        #[arg(long)]
        scale_obsolescence: Option<String>,
        /// Service-variance sweep: hyper-exponential α1 list, e.g. "a1=1.521,3,5".
        #[arg(long)]
        service_variance: Option<String>,
        /// Obsolescence-variance sweep: α1 list.
        #[arg(long)]
        obsolescence_variance: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo simulation under a policy.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        policy: String,
        /// Number of batch arrivals.
        #[arg(long, default_value_t = 1_000_000)]
        arrivals: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Warm-up fraction of batches discarded.
        #[arg(long, default_value_t = 0.1)]
        warmup: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preprocess a crawler timestamp trace into batch statistics.
    Ingest {
        /// One timestamp per line (integer or decimal seconds).
        #[arg(long)]
        timestamps: PathBuf,
        /// Censoring cutoff: longer gaps are treated as crawl outages.
        #[arg(long)]
        cutoff: f64,
        /// Gaps below epsilon merge arrivals into a batch.
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 6)]
        max_lag: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // die silently on closed pipes (crawlq ... | head) instead of panicking
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let errors: Vec<String> = match &err {
                crawlq::Error::InvalidArrival(list) | crawlq::Error::InvalidPhaseType(list) => {
                    list.clone()
                }
                other => vec![other.to_string()],
            };
            let doc = serde_json::json!({ "errors": errors });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
            ExitCode::FAILURE
        }
    }
}

fn load_model(arg: &ModelArg) -> crawlq::Result<(ModelFile, QueueModel, Vec<String>)> {
    let file = ModelFile::load(&arg.model)?;
    let mode = if arg.repair {
        ValidationMode::Repair
    } else {
        file.validation_mode()
    };
    let (model, log) = file.to_model_with(mode)?;
    let log = log
        .into_iter()
        .map(|(l, r)| {
            if l == 0 {
                format!("repair: {r}")
            } else {
                format!("repair (mode {l}): {r}")
            }
        })
        .collect();
    Ok((file, model, log))
}

fn policy_for(model: &QueueModel, spec: &str) -> crawlq::Result<ThresholdPolicy> {
    parse_policy(spec, model.capacity())
}

fn emit(out: &Option<PathBuf>, text: &str) -> crawlq::Result<()> {
    match out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            f.write_all(text.as_bytes())?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> crawlq::Result<()> {
    match cli.command {
        Command::Validate {
            model,
            canonicalize,
            out,
        } => {
            let (file, qmodel, log) = load_model(&model)?;
            for line in &log {
                println!("{line}");
            }
            println!("# {C_COR_DENOMINATOR_NOTE}");
            println!("modes={}", qmodel.arrival().n_modes());
            println!("states={}", qmodel.total_states()?);
            for l in 1..=qmodel.arrival().n_modes() {
                let s = qmodel.arrival().mode(l).stats()?;
                println!(
                    "mode {l}: lambda={:.6} lambda_g={:.6} var_g={:.6} c_cor={:.6}",
                    s.lambda, s.lambda_g, s.var_g, s.c_cor
                );
            }
            println!(
                "service: mean={:.6} scv={:.6}",
                qmodel.service().mean(),
                qmodel.service().scv()
            );
            println!(
                "obsolescence: mean={:.6} scv={:.6}",
                qmodel.obsolescence().mean(),
                qmodel.obsolescence().scv()
            );
            if canonicalize {
                let canon = ModelFile::canonicalize(&qmodel, file.cost);
                emit(&out, &format!("{}\n", canon.to_json()))?;
            }
            Ok(())
        }

        Command::Solve {
            model,
            policy,
            qbd,
            lst,
            out,
        } => {
            let (_, qmodel, log) = load_model(&model)?;
            let pol = policy_for(&qmodel, &policy)?;
            let bg = generator::build_generator(&qmodel, &pol)?;
            let sol = if qbd { solve_qbd(&bg)? } else { solve_general(&bg)? };
            let mut csv = String::from("level,probability\n");
            for i in 0..=qmodel.capacity() {
                writeln!(csv, "{i},{:.12e}", sol.level_mass(i)).unwrap();
            }
            if !lst.is_empty() {
                let rep = measures::report(&qmodel, &pol, &sol)?;
                csv.push('\n');
                csv.push_str("u,v,v1,v2\n");
                for &u in &lst {
                    let pt = sojourn::transforms_at(
                        &qmodel, &pol, &sol, rep.lambda, rep.p_success, rep.p_obs, rep.p_loss, u,
                    )?;
                    writeln!(
                        csv,
                        "{u},{:.12e},{},{}",
                        pt.v,
                        pt.v1.map_or("undefined".into(), |v| format!("{v:.12e}")),
                        pt.v2.map_or("undefined".into(), |v| format!("{v:.12e}"))
                    )
                    .unwrap();
                }
            }
            emit(&out, &csv)?;
            for line in &log {
                eprintln!("{line}");
            }
            eprintln!("residual={:.3e} method={:?}", sol.residual(), sol.method());
            Ok(())
        }

        Command::Measures { model, policy, out } => {
            let (file, qmodel, log) = load_model(&model)?;
            let pol = policy_for(&qmodel, &policy)?;
            let bg = generator::build_generator(&qmodel, &pol)?;
            let sol = solve_general(&bg)?;
            let rep = measures::report(&qmodel, &pol, &sol)?;
            let mut text = String::new();
            for line in &log {
                writeln!(text, "# {line}").unwrap();
            }
            for w in &rep.warnings {
                writeln!(text, "# warning: {w}").unwrap();
            }
            writeln!(text, "p_star={:.10}", rep.p_star).unwrap();
            for (idx, phi) in rep.phi.iter().enumerate() {
                writeln!(text, "phi_{}={:.10}", idx + 1, phi).unwrap();
            }
            writeln!(text, "n_act={:.10}", rep.n_act).unwrap();
            writeln!(text, "lambda={:.10}", rep.lambda).unwrap();
            writeln!(text, "p_loss={:.10}", rep.p_loss).unwrap();
            writeln!(text, "p_obs={:.10}", rep.p_obs).unwrap();
            writeln!(text, "p_success={:.10}", rep.p_success).unwrap();
            writeln!(text, "v_bar={:.10}", rep.v_bar).unwrap();
            writeln!(text, "v1_bar={}", opt(rep.v1_bar)).unwrap();
            writeln!(text, "v2_bar={}", opt(rep.v2_bar)).unwrap();
            if let Some(coeff) = file.cost {
                writeln!(text, "cost={:.10}", optimizer::cost(&rep, &coeff)?).unwrap();
            }
            text.push('\n');
            text.push_str(
                "policy,p_star,n_act,lambda,p_loss,p_obs,p_success,v_bar,v1_bar,v2_bar\n",
            );
            writeln!(
                text,
                "{pol},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{},{}",
                rep.p_star,
                rep.n_act,
                rep.lambda,
                rep.p_loss,
                rep.p_obs,
                rep.p_success,
                rep.v_bar,
                opt(rep.v1_bar),
                opt(rep.v2_bar)
            )
            .unwrap();
            emit(&out, &text)
        }

        Command::Optimize {
            model,
            subsets,
            all_policies,
            out,
        } => {
            let (file, qmodel, log) = load_model(&model)?;
            let coeff = require_cost(&file)?;
            let spec = parse_subsets(&subsets)?;
            let res = optimizer::optimize(&qmodel, &coeff, &spec)?;
            let mut csv = String::from("modes,thresholds,J\n");
            if all_policies {
                for (p, j) in &res.all_policies {
                    writeln!(csv, "{},{},{j:.6}", join(p.modes()), join(p.thresholds())).unwrap();
                }
            } else {
                for row in &res.table {
                    writeln!(
                        csv,
                        "{},{},{:.6}",
                        join(&row.subset),
                        join(row.policy.thresholds()),
                        row.cost
                    )
                    .unwrap();
                }
            }
            emit(&out, &csv)?;
            for line in &log {
                eprintln!("{line}");
            }
            println!(
                "J*={:.6} {}{}",
                res.best_cost,
                res.best_policy,
                res.relative_profit
                    .map(|r| format!(" relative_profit={r:.2}%"))
                    .unwrap_or_default()
            );
            for (subset, why) in &res.skipped {
                eprintln!("skipped subset {subset:?}: {why}");
            }
            Ok(())
        }

        Command::Sweep {
            model,
            param,
            scale_service,
            scale_obsolescence,
            service_variance,
            obsolescence_variance,
            out,
        } => {
            let (file, qmodel, log) = load_model(&model)?;
            for line in &log {
                eprintln!("{line}");
            }
            let coeff = require_cost(&file)?;
            let chosen = [
                param.is_some(),
                scale_service.is_some(),
                scale_obsolescence.is_some(),
                service_variance.is_some(),
                obsolescence_variance.is_some(),
            ]
            .iter()
            .filter(|b| **b)
            .count();
            if chosen != 1 {
                return Err(crawlq::Error::ModelFile(
                    "sweep needs exactly one of --param / --scale-service / --scale-obsolescence / --service-variance / --obsolescence-variance".into(),
                ));
            }
            let (label, rows) = if let Some(p) = param {
                let ks = parse_capacity_range(&p)?;
                ("K", optimizer::sweep_capacity(&qmodel, &coeff, &ks)?)
            } else if let Some(p) = scale_service {
                let ss = parse_list(&p, "s")?;
                ("s", optimizer::sweep_scale_service(&qmodel, &coeff, &ss)?)
            } else if let Some(p) = scale_obsolescence {
                let ss = parse_list(&p, "s")?;
                ("s", optimizer::sweep_scale_obsolescence(&qmodel, &coeff, &ss)?)
            } else if let Some(p) = service_variance {
                let a1 = parse_list(&p, "a1")?;
                ("a1", optimizer::sweep_service_variance(&qmodel, &coeff, &a1)?)
            } else {
                let p = obsolescence_variance.unwrap();
                let a1 = parse_list(&p, "a1")?;
                ("a1", optimizer::sweep_obsolescence_variance(&qmodel, &coeff, &a1)?)
            };
            let n = qmodel.arrival().n_modes();
            let mut csv = format!(
                "{label},derived,best_modes,best_thresholds,c_star,{},relative_profit_pct\n",
                (1..=n).map(|r| format!("c_{r}")).collect::<Vec<_>>().join(",")
            );
            for row in rows {
                writeln!(
                    csv,
                    "{},{:.6},{},{},{:.6},{},{:.2}",
                    row.param,
                    row.derived,
                    join(row.best_policy.modes()),
                    join(row.best_policy.thresholds()),
                    row.best_cost,
                    row.fixed_costs
                        .iter()
                        .map(|c| format!("{c:.6}"))
                        .collect::<Vec<_>>()
                        .join(","),
                    row.relative_profit
                )
                .unwrap();
            }
            emit(&out, &csv)
        }

        Command::Simulate {
            model,
            policy,
            arrivals,
            seed,
            warmup,
            out,
        } => {
            let (_, qmodel, log) = load_model(&model)?;
            let pol = policy_for(&qmodel, &policy)?;
            let cfg = SimConfig {
                n_arrivals: arrivals,
                warmup,
                seed,
            };
            let rep = simulate(&qmodel, &pol, &cfg)?;
            let mut csv = String::from("measure,estimate,ci99_half_width\n");
            let mut push = |name: &str, e: SimEstimate| {
                writeln!(csv, "{name},{:.10},{:.10}", e.value, e.half_width).unwrap();
            };
            push("p_star", rep.p_star);
            push("p_loss", rep.p_loss);
            push("p_obs", rep.p_obs);
            push("p_success", rep.p_success);
            push("n_act", rep.n_act);
            push("lambda", rep.lambda);
            push("v1_bar", rep.v1_bar);
            push("v2_bar", rep.v2_bar);
            push("mean_queue", rep.mean_queue);
            emit(&out, &csv)?;
            for line in &log {
                eprintln!("{line}");
            }
            println!(
                "arrived={} admitted={} lost={} served={} obsolesced={} in_system={}",
                rep.pages_arrived,
                rep.pages_admitted,
                rep.pages_lost,
                rep.pages_served,
                rep.pages_obsolesced,
                rep.pages_in_system_at_end
            );
            Ok(())
        }

        Command::Ingest {
            timestamps,
            cutoff,
            epsilon,
            max_lag,
            out,
        } => {
            let text = std::fs::read_to_string(&timestamps)?;
            let mut ts = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let v: f64 = line.parse().map_err(|_| {
                    crawlq::Error::Trace(format!("bad timestamp on line {}: '{line}'", lineno + 1))
                })?;
                ts.push(v);
            }
            let gaps = trace::interarrivals(&ts)?;
            let (kept, removed) = trace::censor(&gaps, cutoff)?;
            let (batch_gaps, batch_sizes) = trace::batchify(&kept, epsilon)?;
            let stats = trace::empirical_stats(&batch_gaps, &batch_sizes, max_lag)?;
            let mut textout = String::new();
            writeln!(textout, "timestamps={}", ts.len()).unwrap();
            writeln!(textout, "censored_gaps={removed}").unwrap();
            writeln!(textout, "n_batches={}", stats.n_batches).unwrap();
            writeln!(textout, "mean_interarrival={:.6}", stats.mean_interarrival).unwrap();
            writeln!(textout, "var_interarrival={:.6}", stats.var_interarrival).unwrap();
            writeln!(textout, "mean_batch={:.6}", stats.mean_batch).unwrap();
            for w in &stats.warnings {
                writeln!(textout, "# warning: {w}").unwrap();
            }
            textout.push('\n');
            textout.push_str("lag,correlation\n");
            for (k, c) in stats.lag_corr.iter().enumerate() {
                writeln!(textout, "{},{c:.6}", k + 1).unwrap();
            }
            textout.push('\n');
            textout.push_str("batch_size,probability\n");
            for (k, p) in stats.batch_pmf.iter().enumerate() {
                writeln!(textout, "{},{p:.9}", k + 1).unwrap();
            }
            textout.push('\n');
            textout.push_str("# Fit D0/D1 to the statistics above with your preferred MAP\n");
            textout.push_str("# fitter and paste them into a model file like this:\n");
            textout.push_str(&model_template(&stats));
            emit(&out, &textout)
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.10}"))
}

fn join<T: ToString>(xs: &[T]) -> String {
    if xs.is_empty() {
        "-".to_string()
    } else {
        xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
    }
}

fn require_cost(file: &ModelFile) -> crawlq::Result<CostCoefficients> {
    file.cost.ok_or_else(|| {
        crawlq::Error::ModelFile("this command needs cost coefficients in the model file".into())
    })
}

fn parse_subsets(spec: &str) -> crawlq::Result<SubsetSpec> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(SubsetSpec::All);
    }
    let mut subsets = Vec::new();
    for part in spec.split(';') {
        let subset: Result<Vec<usize>, _> = part
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect();
        subsets.push(subset.map_err(|_| {
            crawlq::Error::ModelFile(format!("bad subset '{part}' (expected e.g. \"3,1;4,1\")"))
        })?);
    }
    Ok(SubsetSpec::Explicit(subsets))
}

fn parse_capacity_range(spec: &str) -> crawlq::Result<Vec<usize>> {
    let body = spec.trim().strip_prefix("K=").unwrap_or(spec.trim());
    if let Some((lo, hi)) = body.split_once("..") {
        let lo: usize = lo.parse().map_err(|_| bad_range(spec))?;
        let hi: usize = hi.parse().map_err(|_| bad_range(spec))?;
        if lo == 0 || hi < lo {
            return Err(bad_range(spec));
        }
        Ok((lo..=hi).collect())
    } else {
        body.split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| bad_range(spec)))
            .collect()
    }
}

fn bad_range(spec: &str) -> crawlq::Error {
    crawlq::Error::ModelFile(format!("bad capacity range '{spec}' (expected K=1..8 or K=2,5,9)"))
}

fn parse_list(spec: &str, key: &str) -> crawlq::Result<Vec<f64>> {
    let body = spec
        .trim()
        .strip_prefix(&format!("{key}="))
        .unwrap_or(spec.trim());
    body.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                crawlq::Error::ModelFile(format!("bad value '{s}' in '{spec}' (expected {key}=a,b,c)"))
            })
        })
        .collect()
}

fn model_template(stats: &trace::TraceStats) -> String {
    let pmf = stats
        .batch_pmf
        .iter()
        .map(|p| format!("{p:.9}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        r#"# {{
#   "arrival": {{"kind": "direct", "modes": [[
#       [[<D0 from fit>]],
#       <D1 from fit, scaled by each of the batch probabilities [{pmf}]>
#   ]]}},
#   "service": {{"init": [...], "subgen": [[...]]}},
#   "obsolescence": {{"init": [...], "subgen": [[...]]}},
#   "K": 20
# }}
"#
    )
}
