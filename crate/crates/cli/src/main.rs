use std::fs;
use std::process::ExitCode;

use pdfp_cli::runner::reference_with_cache;
use pdfp_cli::{build_problem, parse_config, run_experiment, validate_all};

const USAGE: &str = "usage: pdfp <run|validate|reference> <config.json>

  run        execute every configured solver x repetition, write CSVs,
             averaged traces and summary.txt to the output directory
  validate   check the config and each solver's step sizes; prints kappa
             and the variance constant M when computable
  reference  compute (and cache) the high-accuracy reference solution

exit codes: 0 success, 2 validation failure, 3 divergence abort";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (cmd, path) = match (args.get(1), args.get(2)) {
        (Some(c), Some(p)) if args.len() == 3 => (c.as_str(), p.as_str()),
        _ => {
            eprintln!("{USAGE}");
            return ExitCode::from(2);
        }
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {path}: {e}");
            return ExitCode::from(2);
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    match cmd {
        "run" => match run_experiment(&cfg, &text) {
            Ok(summary) => {
                for line in &summary.lines {
                    println!("{line}");
                }
                if summary.diverged {
                    eprintln!("at least one repetition hit the divergence guard");
                    ExitCode::from(3)
                } else if !summary.ran_any {
                    eprintln!("no solver passed validation");
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        "validate" => {
            let problem = match build_problem(&cfg) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            let mut all_ok = true;
            for v in validate_all(&cfg, &problem) {
                if v.report.ok {
                    print!("solver {}: ok", v.name);
                    if let Some(k) = v.report.kappa {
                        print!(" kappa={k:.6}");
                    }
                    if let Some(vc) = &v.report.variance {
                        print!(" M={:.6} C_b={:.6}", vc.m, vc.c_b);
                    }
                    println!(" lambda_max={:.6}", v.report.lambda_max);
                } else {
                    all_ok = false;
                    println!("solver {}: INVALID", v.name);
                    for r in &v.report.reasons {
                        println!("  - {r}");
                    }
                }
                for w in &v.report.warnings {
                    println!("  warning: {w}");
                }
            }
            if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        "reference" => {
            let problem = match build_problem(&cfg) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            match reference_with_cache(&cfg, &text, &problem) {
                Ok(r) => {
                    println!(
                        "reference cached: objective={:.12e} residual={:.3e} converged={}",
                        r.objective, r.residual, r.converged
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(2)
                }
            }
        }
        other => {
            eprintln!("unknown command `{other}`\n{USAGE}");
            ExitCode::from(2)
        }
    }
}
